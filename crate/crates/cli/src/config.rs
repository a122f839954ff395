//! Run configuration file.
//!
//! Precedence: built-in defaults, then the config file, then command-line
//! flags.

use std::fs;
use std::path::{Path, PathBuf};

use horizon_law::intrinsic_model::{HorizonMapping, NoiseConfig, SpectrumConfig};
use horizon_law::loss_model::{LossParams, NoiseTerm, RegimeChoice, DEFAULT_XI_THRESHOLD};
use horizon_law::mc_oracle::{FixedSettings, SweepSpec};
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub spectrum: Option<SpectrumConfig>,
    pub noise: Option<NoiseConfig>,
    pub loss: Option<LossParams>,
    pub mapping: Option<HorizonMapping>,
    pub sweep: Option<SweepSpec>,
    pub query: Option<Query>,
    pub estimation: Option<Estimation>,
    pub target: Option<TargetSpec>,
    pub generate: Option<GenerateSpec>,
    pub output: Option<OutputSpec>,
}

/// Operating point for `predict-loss` and `optimal-horizon`.
#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Query {
    pub d: Option<usize>,
    pub horizon: Option<usize>,
    pub n_regions: Option<f64>,
    pub d_samples: Option<f64>,
    pub regime: Option<RegimeChoice>,
    pub xi_threshold: Option<f64>,
    pub noise_term: Option<NoiseTerm>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Estimation {
    pub window_len: Option<usize>,
    pub stride: Option<usize>,
    pub fit_range: Option<(usize, usize)>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub k1: Option<f64>,
    pub k2: Option<f64>,
    pub d_out: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSpec {
    pub count: Option<usize>,
    pub d_visible: Option<usize>,
    pub horizon: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub path: Option<PathBuf>,
    pub format: Option<crate::Format>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, Failure> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Failure::validation(format!("config error at {path}: {}", e.inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), Failure> {
        fn tag(section: &'static str) -> impl Fn(horizon_law::Error) -> Failure {
            move |e| Failure::validation(format!("config error at {section}: {e}"))
        }
        if let Some(s) = &self.spectrum {
            s.validate().map_err(tag("spectrum"))?;
        }
        if let Some(n) = &self.noise {
            n.validate().map_err(tag("noise"))?;
        }
        if let Some(l) = &self.loss {
            l.validate().map_err(tag("loss"))?;
        }
        if let Some(m) = &self.mapping {
            m.validate().map_err(tag("mapping"))?;
        }
        if let Some(s) = &self.sweep {
            s.validate().map_err(tag("sweep"))?;
        }
        if self.threads == Some(0) {
            return Err(Failure::validation("config error at threads: must be at least 1"));
        }
        Ok(())
    }

    pub fn spectrum(&self) -> SpectrumConfig {
        self.spectrum
            .clone()
            .unwrap_or_else(|| FixedSettings::default().spectrum)
    }

    pub fn noise(&self) -> NoiseConfig {
        self.noise.clone().unwrap_or_else(|| FixedSettings::default().noise)
    }

    pub fn loss(&self) -> LossParams {
        self.loss.clone().unwrap_or(LossParams {
            k1: 1.0,
            k2: 1.0,
            eta: 0.0,
            lambda0: 1.0,
            alpha_z: 2.0,
            noise_total: 1.0,
        })
    }

    pub fn mapping(&self) -> HorizonMapping {
        self.mapping.clone().unwrap_or(HorizonMapping {
            c_d: 1.0,
            d_total: self.spectrum().d_total,
        })
    }

    pub fn query(&self) -> Query {
        self.query.clone().unwrap_or_default()
    }

    pub fn xi_threshold(&self) -> f64 {
        self.query().xi_threshold.unwrap_or(DEFAULT_XI_THRESHOLD)
    }
}
