//! Subcommand bodies. Each reads its inputs, calls the library and writes
//! its outputs into the configured directory.

use std::path::{Path, PathBuf};

use gagnar::draws::{read_draws, write_draws, DrawWriter};
use gagnar::graph::read_edge_list;
use gagnar::io::{
    fit_summary, labels_csv, lpml_table_csv, metrics_csv, read_labels, read_matrix_csv, sig6, write_matrix_sig6,
    write_text,
};
use gagnar::nalgebra::{DMatrix, DVector};
use gagnar::sampler::{run_chain_with, ChainDraws};
use gagnar::simgen::{simulate_all, write_dataset, ScenarioSpec};
use gagnar::{
    adjusted_rand_index, dahl_select, predict as predict_window, remspe, rmse_params, select_h as run_select_h,
    Error, FitResult, GroupParams, PanelData, PreparedData, Result,
};

use crate::config::RunConfig;

pub fn simulate(
    scenario: &Path,
    out: &Path,
    seed: Option<u64>,
    replicates: Option<usize>,
    print_only: bool,
) -> Result<()> {
    let mut spec = ScenarioSpec::load_with_seed(scenario, seed)?;
    if let Some(r) = replicates {
        spec.replicates = r;
    }
    spec.validate()?;
    if print_only {
        print!("{}", spec.to_toml());
        return Ok(());
    }
    let datasets = simulate_all(&spec)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_text(&out.join("scenario.toml"), &spec.to_toml())?;
    for (r, ds) in datasets.iter().enumerate() {
        write_dataset(&out.join(format!("replicate_{:03}", r + 1)), &spec, ds)?;
    }
    println!("wrote {} replicates of `{}` to {}", datasets.len(), spec.name, out.display());
    Ok(())
}

/// The full panel from the configured files.
fn load_panel(cfg: &RunConfig) -> Result<PanelData> {
    let y = read_matrix_csv(cfg.required(&cfg.data.responses, "responses")?, false)?;
    match &cfg.data.covariates {
        Some(path) => {
            let v = read_matrix_csv(path, false)?;
            if v.nrows() != y.nrows() {
                return Err(Error::validation(format!(
                    "{} has {} rows but the responses have {}",
                    path.display(),
                    v.nrows(),
                    y.nrows()
                )));
            }
            PanelData::new(y, v)
        }
        None => PanelData::without_covariates(y),
    }
}

/// Full panel plus the prepared training part.
fn load_data(cfg: &RunConfig) -> Result<(PanelData, PreparedData)> {
    let panel = load_panel(cfg)?;
    let adj = read_edge_list(cfg.required(&cfg.data.edges, "edges")?, panel.n_nodes(), cfg.data.id_base)?;
    let train = match train_end(cfg, &panel)? {
        Some(t) => panel.window(0, t)?,
        None => panel.clone(),
    };
    Ok((panel, PreparedData::new(train, adj)?))
}

/// The validated split point, if any.
fn train_end(cfg: &RunConfig, panel: &PanelData) -> Result<Option<usize>> {
    match cfg.split.train_end {
        None => Ok(None),
        Some(t) if t >= 2 && t < panel.n_times() => Ok(Some(t)),
        Some(t) => Err(Error::validation(format!(
            "train_end = {t} must lie in 2..{} so both windows are nonempty",
            panel.n_times() - 1
        ))),
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.required(&cfg.data.out_dir, "out")?.to_path_buf();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_fit(dir: &Path, fit: &FitResult, h: f64) -> Result<()> {
    write_text(&dir.join("fit_summary.txt"), &fit_summary(fit, h))?;
    write_text(&dir.join("labels.csv"), &labels_csv(&fit.z_hat))?;
    write_matrix_sig6(&dir.join("comembership.csv"), &fit.mean_comembership, None)
}

fn load_fit(path: &Path, n_nodes: usize) -> Result<(ChainDraws, FitResult)> {
    let draws = read_draws(path)?;
    if draws.n_nodes != n_nodes {
        return Err(Error::validation(format!(
            "{} has {} nodes but the data has {n_nodes}",
            path.display(),
            draws.n_nodes
        )));
    }
    let fit = dahl_select(&draws)?;
    Ok((draws, fit))
}

pub fn fit(cfg: &RunConfig, from_draws: Option<&Path>) -> Result<()> {
    let (_, data) = load_data(cfg)?;
    let dir = out_dir(cfg)?;
    let h = cfg.smoothing.h;
    let fit = match from_draws {
        Some(path) => load_fit(path, data.panel.n_nodes())?.1,
        None => {
            let sampler = cfg.sampler_config(data.panel.design_dim(), h)?;
            let draws_path = dir.join("draws.jsonl");
            let mut writer = DrawWriter::create(&draws_path)?;
            let draws = run_chain_with(&sampler, &data, |d| writer.write(d))?;
            writer.finish()?;
            dahl_select(&draws)?
        }
    };
    write_fit(&dir, &fit, h)?;
    write_text(&dir.join("run_config.toml"), &cfg.to_toml())?;
    println!("k_hat {} lpml {} -> {}", fit.k_hat, sig6(fit.lpml), dir.display());
    Ok(())
}

pub fn select_h(cfg: &RunConfig) -> Result<()> {
    let (_, data) = load_data(cfg)?;
    let dir = out_dir(cfg)?;
    let base = cfg.sampler_config(data.panel.design_dim(), 0.0)?;
    let sel = run_select_h(&data, &cfg.smoothing.h_grid, &base)?;
    write_text(&dir.join("lpml_table.csv"), &lpml_table_csv(&sel.table))?;
    write_draws(&dir.join("draws.jsonl"), &sel.best_draws)?;
    write_fit(&dir, &sel.best_fit, sel.best_h)?;
    let mut used = cfg.clone();
    used.smoothing.h = sel.best_h;
    write_text(&dir.join("run_config.toml"), &used.to_toml())?;
    println!(
        "best h {} k_hat {} lpml {} -> {}",
        sig6(sel.best_h),
        sel.best_fit.k_hat,
        sig6(sel.best_fit.lpml),
        dir.display()
    );
    Ok(())
}

/// Predictions for the test window `train_end+1..=T` (1-based).
fn test_predictions(cfg: &RunConfig, panel: &PanelData, data: &PreparedData, fit: &FitResult) -> Result<(usize, DMatrix<f64>)> {
    let start = train_end(cfg, panel)?
        .ok_or_else(|| Error::validation("prediction needs train_end; set split.train_end or pass --train-end"))?;
    let y_hat = predict_window(fit, panel, &data.row_norm, start, panel.n_times())?;
    Ok((start, y_hat))
}

pub fn predict(cfg: &RunConfig, draws: &Path) -> Result<()> {
    let (panel, data) = load_data(cfg)?;
    let dir = out_dir(cfg)?;
    let (_, fit) = load_fit(draws, panel.n_nodes())?;
    let (start, y_hat) = test_predictions(cfg, &panel, &data, &fit)?;
    let header: Vec<String> = (start + 1..=panel.n_times()).map(|t| format!("t{t}")).collect();
    write_matrix_sig6(&dir.join("predictions.csv"), &y_hat, Some(&header))?;
    println!("predicted t{}..t{} -> {}", start + 1, panel.n_times(), dir.display());
    Ok(())
}

/// Rows of a `group,sigma2,beta0,...` file as group parameters.
fn read_truth_params(path: &Path) -> Result<Vec<GroupParams>> {
    let m = read_matrix_csv(path, true)?;
    if m.ncols() < 5 {
        return Err(Error::parse(path, "expected columns group,sigma2,beta0,beta1,beta2,..."));
    }
    let mut params: Vec<Option<GroupParams>> = vec![None; m.nrows()];
    for r in 0..m.nrows() {
        let g = m[(r, 0)];
        if g < 1.0 || g > m.nrows() as f64 || g.fract() != 0.0 {
            return Err(Error::parse(path, format!("row {} has group id {g}", r + 1)));
        }
        let theta = DVector::from_iterator(m.ncols() - 2, (2..m.ncols()).map(|c| m[(r, c)]));
        params[g as usize - 1] = Some(GroupParams::new(theta, m[(r, 1)])?);
    }
    params
        .into_iter()
        .map(|p| p.ok_or_else(|| Error::parse(path, "group ids must be 1..K without gaps")))
        .collect()
}

pub fn evaluate(
    cfg: &RunConfig,
    draws: &Path,
    truth_labels: Option<&Path>,
    truth_params: Option<&Path>,
) -> Result<()> {
    let dir = out_dir(cfg)?;
    let mut rows: Vec<(String, f64)> = Vec::new();
    match truth_labels {
        Some(labels_path) => {
            let truth_z = read_labels(labels_path)?;
            let (_, fit) = load_fit(draws, truth_z.len())?;
            rows.push(("ari".into(), adjusted_rand_index(&fit.z_hat, &truth_z)?));
            if let Some(params_path) = truth_params {
                let groups = read_truth_params(params_path)?;
                let truth: Vec<GroupParams> = truth_z
                    .iter()
                    .map(|&k| {
                        groups.get(k).cloned().ok_or_else(|| {
                            Error::validation(format!("true label {} has no parameter row", k + 1))
                        })
                    })
                    .collect::<Result<_>>()?;
                let rmse = rmse_params(&[fit.node_params()], &[truth])?;
                rows.extend([
                    ("rmse_beta0".into(), rmse.beta0),
                    ("rmse_beta1".into(), rmse.beta1),
                    ("rmse_beta2".into(), rmse.beta2),
                    ("rmse_gamma".into(), rmse.gamma),
                    ("rmse_sigma2".into(), rmse.sigma2),
                ]);
            }
        }
        None => {
            let (panel, data) = load_data(cfg)?;
            let (_, fit) = load_fit(draws, panel.n_nodes())?;
            let (start, y_hat) = test_predictions(cfg, &panel, &data, &fit)?;
            let y = panel.responses();
            let y_test = y.columns(start, panel.n_times() - start).into_owned();
            let y_train = y.columns(0, start).into_owned();
            rows.push(("remspe".into(), remspe(&y_test, &y_hat, &y_train)?));
        }
    }
    write_text(&dir.join("metrics.csv"), &metrics_csv(&rows))?;
    for (name, v) in &rows {
        println!("{name} {}", sig6(*v));
    }
    Ok(())
}
