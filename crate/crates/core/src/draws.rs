//! Line-delimited JSON persistence of recorded draws.
//!
//! Each line is one recorded iteration with fields in this order:
//!
//! ```text
//! {"iter": 501, "k": 2, "z": [1,1,2,...], "params": [{"theta": [...], "sigma2": 1.3}, ...], "loglik": [...]}
//! ```
//!
//! `iter` is the 1-based iteration number, `z` holds 1-based group labels,
//! `params[k-1]` belongs to label `k`, and `loglik[i]` is node i's
//! log-likelihood under its group's parameters. Floats are written in
//! shortest round-trip form, so reloading is exact.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GroupParams;
use crate::sampler::{ChainDraws, Draw};

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    theta: Vec<f64>,
    sigma2: f64,
}

#[derive(Serialize, Deserialize)]
struct DrawRecord {
    iter: usize,
    k: usize,
    z: Vec<usize>,
    params: Vec<ParamRecord>,
    loglik: Vec<f64>,
}

impl From<&Draw> for DrawRecord {
    fn from(d: &Draw) -> Self {
        Self {
            iter: d.iteration,
            k: d.n_groups(),
            z: d.z.iter().map(|&k| k + 1).collect(),
            params: d
                .params
                .iter()
                .map(|p| ParamRecord {
                    theta: p.theta.iter().copied().collect(),
                    sigma2: p.sigma2,
                })
                .collect(),
            loglik: d.loglik.clone(),
        }
    }
}

impl DrawRecord {
    fn into_draw(self) -> std::result::Result<Draw, String> {
        if self.k != self.params.len() {
            return Err(format!("k = {} but {} parameter sets", self.k, self.params.len()));
        }
        if self.z.len() != self.loglik.len() {
            return Err("z and loglik lengths differ".into());
        }
        let z = self
            .z
            .iter()
            .map(|&k| {
                if k == 0 || k > self.k {
                    Err(format!("label {k} outside 1..={}", self.k))
                } else {
                    Ok(k - 1)
                }
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let params = self
            .params
            .into_iter()
            .map(|p| GroupParams::new(DVector::from_vec(p.theta), p.sigma2).map_err(|e| e.to_string()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Draw {
            iteration: self.iter,
            z,
            params,
            loglik: self.loglik,
        })
    }
}

/// Serialize one draw as a single JSON line (without the newline).
pub fn format_draw(draw: &Draw) -> String {
    serde_json::to_string(&DrawRecord::from(draw)).expect("draw records always serialize")
}

/// Appends draws to a file, one line each.
pub struct DrawWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl DrawWriter {
    /// Create (truncating) `path`.
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    /// Open `path` for appending, creating it if needed.
    pub fn append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, draw: &Draw) -> Result<()> {
        writeln!(self.out, "{}", format_draw(draw)).map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn write_draws(path: &Path, draws: &ChainDraws) -> Result<()> {
    let mut w = DrawWriter::create(path)?;
    for d in &draws.draws {
        w.write(d)?;
    }
    w.finish()
}

pub fn read_draws(path: &Path) -> Result<ChainDraws> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_draws_from(file).map_err(|e| match e {
        Error::Parse { message, .. } => Error::parse(path, message),
        other => other,
    })
}

pub fn read_draws_from<R: Read>(reader: R) -> Result<ChainDraws> {
    let mut draws = Vec::new();
    let mut n_nodes = None;
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io("<draws>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| Error::parse("<draws>", format!("line {}: {m}", lineno + 1));
        let rec: DrawRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let draw = rec.into_draw().map_err(bad)?;
        match n_nodes {
            None => n_nodes = Some(draw.z.len()),
            Some(n) if n != draw.z.len() => {
                return Err(bad(format!("{} labels, earlier lines had {n}", draw.z.len())))
            }
            _ => {}
        }
        draws.push(draw);
    }
    Ok(ChainDraws {
        n_nodes: n_nodes.unwrap_or(0),
        draws,
    })
}
