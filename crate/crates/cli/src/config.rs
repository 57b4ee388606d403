//! The run configuration: a TOML document whose values can be overridden
//! by command-line flags.

use std::path::{Path, PathBuf};

use gagnar::nalgebra::{DMatrix, DVector};
use gagnar::posthoc::default_h_grid;
use gagnar::sampler::VisitOrder;
use gagnar::{Error, IdBase, NigHyper, Result, SamplerConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Tau0 {
    Fill(f64),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub edges: Option<PathBuf>,
    pub responses: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    pub id_base: IdBase,
    pub out_dir: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            edges: None,
            responses: None,
            covariates: None,
            id_base: IdBase::One,
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub tau0: Tau0,
    pub sigma0_scale: f64,
    pub a0: f64,
    pub b0: f64,
    pub alpha: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            tau0: Tau0::Fill(0.0),
            sigma0_scale: 100.0,
            a0: 0.01,
            b0: 0.01,
            alpha: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    Sequential,
    Shuffled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub iters: usize,
    pub burn_in: usize,
    pub seed: Option<u64>,
    pub visit_order: Order,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            iters: 1500,
            burn_in: 500,
            seed: None,
            visit_order: Order::Sequential,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingConfig {
    /// Used by `fit`.
    pub h: f64,
    /// Used by `select-h`.
    pub h_grid: Vec<f64>,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            h: 1.0,
            h_grid: default_h_grid(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Last training time point (1-based). Columns after it form the test
    /// window. Unset means fit on everything.
    pub train_end: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub prior: PriorConfig,
    pub sampler: SamplerSection,
    pub smoothing: SmoothingConfig,
    pub split: SplitConfig,
}

impl RunConfig {
    /// Read a config file. Relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.data.edges,
            &mut cfg.data.responses,
            &mut cfg.data.covariates,
            &mut cfg.data.out_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hyper(&self, dim: usize) -> Result<NigHyper> {
        let p = &self.prior;
        let tau0 = match &p.tau0 {
            Tau0::Fill(v) => vec![*v; dim],
            Tau0::Vector(v) if v.len() == dim => v.clone(),
            Tau0::Vector(v) => {
                return Err(Error::validation(format!(
                    "tau0 has {} entries but the design has {dim} columns",
                    v.len()
                )))
            }
        };
        if !(p.sigma0_scale > 0.0) {
            return Err(Error::validation("sigma0_scale must be positive"));
        }
        NigHyper::new(
            DVector::from_vec(tau0),
            DMatrix::identity(dim, dim) * p.sigma0_scale,
            p.a0,
            p.b0,
            p.alpha,
        )
    }

    pub fn seed(&self) -> Result<u64> {
        self.sampler
            .seed
            .ok_or_else(|| Error::validation("no seed given; set sampler.seed or pass --seed"))
    }

    pub fn sampler_config(&self, dim: usize, h: f64) -> Result<SamplerConfig> {
        let mut cfg = SamplerConfig::new(dim, h, self.seed()?);
        cfg.total_iters = self.sampler.iters;
        cfg.burn_in = self.sampler.burn_in;
        cfg.hyper = self.hyper(dim)?;
        cfg.visit_order = match self.sampler.visit_order {
            Order::Sequential => VisitOrder::Sequential,
            Order::Shuffled => VisitOrder::Shuffled,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn required<'a>(&self, value: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| Error::validation(format!("missing {name}; set it in the config or pass --{name}")))
    }
}
