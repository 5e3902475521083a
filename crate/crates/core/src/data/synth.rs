//! Synthetic source/target generator with known label shift and conditional
//! shift.
//!
//! Each example is a real vector drawn from an isotropic Gaussian around its
//! (domain, class) mean. The vector is written out as text with a signed
//! thermometer code: for coordinate `j` and threshold `k` the token is
//! `v{j}ge{k}` when the value is at least `QUANT_MIN + k * QUANT_STEP` and
//! `v{j}lt{k}` otherwise. Every example therefore has exactly
//! `dim * QUANT_LEVELS` tokens and the ordinary preprocess/featurize path
//! applies unchanged.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, Domain, Example, Label};
use crate::error::{Error, Result};

pub const QUANT_MIN: f64 = -6.0;
pub const QUANT_STEP: f64 = 0.5;
pub const QUANT_LEVELS: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocabMode {
    #[default]
    NumericTokens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_source: usize,
    pub n_target: usize,
    /// Probability of class 1 in the source domain.
    pub source_prior: f64,
    /// Probability of class 1 in the target domain.
    pub target_prior: f64,
    /// `[class 0 mean, class 1 mean]` for the source domain.
    pub class_means_source: [Vec<f64>; 2],
    /// `[class 0 mean, class 1 mean]` for the target domain.
    pub class_means_target: [Vec<f64>; 2],
    pub noise_scale: f64,
    pub vocab_mode: VocabMode,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// Balanced source, 90% class-1 target. In the target the class-1
    /// cluster sits on the source decision boundary and both classes are
    /// displaced along a nuisance coordinate.
    fn default() -> Self {
        SynthConfig {
            n_source: 2000,
            n_target: 2000,
            source_prior: 0.5,
            target_prior: 0.9,
            class_means_source: [vec![-2.0, 0.0, 0.0, 0.0], vec![2.0, 0.0, 0.0, 0.0]],
            class_means_target: [vec![-3.0, 1.5, 0.0, 0.0], vec![0.0, 1.5, 0.0, 0.0]],
            noise_scale: 1.0,
            vocab_mode: VocabMode::NumericTokens,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn dim(&self) -> usize {
        self.class_means_source[0].len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_source == 0 || self.n_target == 0 {
            return Err(Error::config("n_source and n_target must be positive"));
        }
        for (name, p) in [("source_prior", self.source_prior), ("target_prior", self.target_prior)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::config(format!("{name} must lie in (0, 1), got {p}")));
            }
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::config("noise_scale must be positive"));
        }
        let d = self.dim();
        let means = self.class_means_source.iter().chain(&self.class_means_target);
        if d == 0 {
            return Err(Error::config("class mean vectors must be non-empty"));
        }
        for m in means {
            if m.len() != d {
                return Err(Error::config("class mean vectors must share one dimension"));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::config("class means must be finite"));
            }
        }
        Ok(())
    }

    fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.class_means_source[0] == self.class_means_source[1]
            && self.class_means_target[0] == self.class_means_target[1]
        {
            w.push("class means identical in both domains: labels carry no signal".to_string());
        }
        if self.class_means_source == self.class_means_target {
            w.push("source and target class means are identical: no conditional shift".to_string());
        }
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub source: Dataset,
    pub target: Dataset,
    pub warnings: Vec<String>,
}

/// Thermometer-codes a real vector as whitespace-separated tokens.
pub fn encode_vector(x: &[f64]) -> String {
    let mut tokens = Vec::with_capacity(x.len() * QUANT_LEVELS);
    for (j, &v) in x.iter().enumerate() {
        for k in 0..QUANT_LEVELS {
            let threshold = QUANT_MIN + k as f64 * QUANT_STEP;
            let rel = if v >= threshold { "ge" } else { "lt" };
            tokens.push(format!("v{j}{rel}{k}"));
        }
    }
    tokens.join(" ")
}

/// Draws labeled source and target datasets. Target labels are included so
/// callers can evaluate; the adaptation pipeline strips them.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = crate::rng_from_seed(cfg.seed);
    let mut draw = |n: usize, prior: f64, means: &[Vec<f64>; 2], domain: Domain, name: &str| {
        let examples = (0..n)
            .map(|_| {
                let label = if rng.random::<f64>() < prior {
                    Label::NonMisleading
                } else {
                    Label::Misinformation
                };
                let x: Vec<f64> = means[label.index()]
                    .iter()
                    .map(|m| {
                        let z: f64 = rng.sample(StandardNormal);
                        m + cfg.noise_scale * z
                    })
                    .collect();
                Example::new(encode_vector(&x), Some(label))
            })
            .collect();
        Dataset::new(name, domain, examples)
    };
    let source = draw(
        cfg.n_source,
        cfg.source_prior,
        &cfg.class_means_source,
        Domain::Source,
        "source",
    );
    let target = draw(
        cfg.n_target,
        cfg.target_prior,
        &cfg.class_means_target,
        Domain::Target,
        "target",
    );
    Ok(SynthOutput {
        source,
        target,
        warnings: cfg.warnings(),
    })
}
