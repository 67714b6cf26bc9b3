use std::fmt::Write as _;
use std::str::FromStr;

use crate::datagen::{Case, NoiseModel, NoiseScaling};
use crate::nonlocal::{Admissible, WeightGrid};
use crate::optimizer::StoppingCriteria;
use crate::{Error, Result};

/// Extent `δ` of the lower bound `σ ≥ γ₁` on `(0, δ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Delta {
    /// The mesh width `h`: the smallest `δ` that keeps the kernel of `L(σ)`
    /// equal to the constants.
    MeshWidth,
    /// The whole distance range `(0, d)`.
    Diameter,
    Value(f64),
}

impl std::fmt::Display for Delta {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Delta::MeshWidth => f.write_str("h"),
            Delta::Diameter => f.write_str("d"),
            Delta::Value(v) => write!(f, "{v}"),
        }
    }
}

/// Full configuration of a training/validation run.
///
/// The text form is one `key = value` pair per line; `#` starts a comment.
/// Lists are comma separated. Every key accepted by [`ExperimentConfig::set`]
/// is written by [`ExperimentConfig::to_text`], so a manifest can be fed back
/// in as a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub case: Case,
    pub s_values: Vec<f64>,
    pub n_nodes: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub batch_sizes: Vec<usize>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub delta: Delta,
    /// Largest distance `d` carried by the weight.
    pub diameter: f64,
    /// `None` means `n_nodes + 1` pieces.
    pub n_pieces: Option<usize>,
    pub rho: f64,
    pub noise: NoiseModel,
    pub seed: u64,
    pub criteria: StoppingCriteria,
    /// Initial value for the scalar parameter ν.
    pub nu_init: f64,
    /// Start the weight optimization from the learned `ν*·1`.
    pub warm_start: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            case: Case::A,
            s_values: vec![0.1, 0.9],
            n_nodes: 128,
            n_train: 512,
            n_val: 512,
            batch_sizes: vec![1, 8, 64, 512],
            alpha: 1e-4,
            beta: 1e-8,
            gamma1: 0.1,
            gamma2: 10.0,
            delta: Delta::MeshWidth,
            diameter: 1.0,
            n_pieces: None,
            rho: 0.1,
            noise: NoiseModel::default(),
            seed: 0,
            criteria: StoppingCriteria::default(),
            nu_init: 1.0,
            warm_start: true,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::InvalidArgument(format!("{key}: cannot parse '{value}': {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| parse(key, p))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Parse the text form on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key = value, got '{line}'"),
            })?;
            cfg.set(k.trim(), v.trim()).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    /// Set one key from its text form. Command-line overrides use the same
    /// keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "case" => self.case = value.parse()?,
            "s_values" | "s" => self.s_values = parse_list(key, value)?,
            "n_nodes" => self.n_nodes = parse(key, value)?,
            "n_train" => self.n_train = parse(key, value)?,
            "n_val" => self.n_val = parse(key, value)?,
            "batch_sizes" => self.batch_sizes = parse_list(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "gamma1" => self.gamma1 = parse(key, value)?,
            "gamma2" => self.gamma2 = parse(key, value)?,
            "delta" => {
                self.delta = match value.trim() {
                    "h" => Delta::MeshWidth,
                    "d" => Delta::Diameter,
                    v => Delta::Value(parse(key, v)?),
                }
            }
            "diameter" => self.diameter = parse(key, value)?,
            "n_pieces" => {
                self.n_pieces = match value.trim() {
                    "auto" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "rho" => self.rho = parse(key, value)?,
            "epsilon" => self.noise.epsilon = parse(key, value)?,
            "noise_scaling" => self.noise.scaling = value.parse::<NoiseScaling>()?,
            "seed" => self.seed = parse(key, value)?,
            "phi_tol" => self.criteria.phi_tol = parse(key, value)?,
            "max_outer" => self.criteria.max_outer = parse(key, value)?,
            "max_inner" => self.criteria.max_inner = parse(key, value)?,
            "armijo_c1" => self.criteria.armijo_c1 = parse(key, value)?,
            "armijo_shrink" => self.criteria.armijo_shrink = parse(key, value)?,
            "max_backtracks" => self.criteria.max_backtracks = parse(key, value)?,
            "pdas_c" => self.criteria.pdas_c = parse(key, value)?,
            "nu_init" => self.nu_init = parse(key, value)?,
            "warm_start" => self.warm_start = parse(key, value)?,
            other => return Err(Error::InvalidArgument(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Resolved configuration in the text form, one key per line, in a fixed
    /// order.
    pub fn to_text(&self) -> String {
        let c = &self.criteria;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("case", self.case.to_string());
        put("s_values", join(&self.s_values));
        put("n_nodes", self.n_nodes.to_string());
        put("n_train", self.n_train.to_string());
        put("n_val", self.n_val.to_string());
        put("batch_sizes", join(&self.batch_sizes));
        put("alpha", format!("{:e}", self.alpha));
        put("beta", format!("{:e}", self.beta));
        put("gamma1", self.gamma1.to_string());
        put("gamma2", self.gamma2.to_string());
        put("delta", self.delta.to_string());
        put("diameter", self.diameter.to_string());
        put("n_pieces", self.n_pieces_value().to_string());
        put("rho", self.rho.to_string());
        put("epsilon", self.noise.epsilon.to_string());
        put("noise_scaling", self.noise.scaling.to_string());
        put("seed", self.seed.to_string());
        put("phi_tol", format!("{:e}", c.phi_tol));
        put("max_outer", c.max_outer.to_string());
        put("max_inner", c.max_inner.to_string());
        put("armijo_c1", format!("{:e}", c.armijo_c1));
        put("armijo_shrink", c.armijo_shrink.to_string());
        put("max_backtracks", c.max_backtracks.to_string());
        put("pdas_c", c.pdas_c.to_string());
        put("nu_init", self.nu_init.to_string());
        put("warm_start", self.warm_start.to_string());
        out
    }

    pub fn delta_value(&self) -> f64 {
        match self.delta {
            Delta::MeshWidth => 1.0 / (self.n_nodes.max(2) - 1) as f64,
            Delta::Diameter => self.diameter,
            Delta::Value(v) => v,
        }
    }

    pub fn n_pieces_value(&self) -> usize {
        self.n_pieces.unwrap_or(self.n_nodes + 1)
    }

    /// Seed of the validation set, derived from the training seed.
    pub fn val_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    pub fn admissible(&self) -> Result<Admissible> {
        Admissible::new(self.gamma1, self.gamma2, self.delta_value())
    }

    pub fn grid(&self) -> Result<WeightGrid> {
        WeightGrid::uniform(self.n_pieces_value(), self.diameter)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.s_values.is_empty() || self.s_values.iter().any(|s| !(*s > 0.0 && *s < 1.0)) {
            return bad(format!("every s must lie in (0,1), got {:?}", self.s_values));
        }
        if self.n_nodes < 3 {
            return bad(format!("n_nodes must be at least 3, got {}", self.n_nodes));
        }
        if self.n_train == 0 || self.n_val == 0 {
            return bad("n_train and n_val must be positive".into());
        }
        if self.batch_sizes.is_empty() {
            return bad("batch_sizes is empty".into());
        }
        if let Some(b) = self
            .batch_sizes
            .iter()
            .find(|&&b| b == 0 || !self.n_train.is_multiple_of(b))
        {
            return bad(format!("batch size {b} does not divide n_train = {}", self.n_train));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return bad("alpha and beta must be nonnegative".into());
        }
        if !(self.rho > 0.0) {
            return bad(format!("rho must be positive, got {}", self.rho));
        }
        if !(self.noise.epsilon >= 0.0) {
            return bad(format!("epsilon must be nonnegative, got {}", self.noise.epsilon));
        }
        if !(self.diameter > 0.0 && self.diameter <= 1.0) {
            return bad(format!("diameter must lie in (0,1], got {}", self.diameter));
        }
        if self.n_pieces_value() == 0 {
            return bad("n_pieces must be positive".into());
        }
        let adm = self.admissible()?;
        if !(self.nu_init >= adm.gamma1 && self.nu_init <= adm.gamma2) {
            return bad(format!("nu_init {} outside [gamma1, gamma2]", self.nu_init));
        }
        self.criteria.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(c.delta_value(), 1.0 / 127.0);
        let c = ExperimentConfig::from_text("delta = d").unwrap();
        assert_eq!(c.delta_value(), 1.0);
        assert_eq!(c.n_pieces_value(), 129);
        assert_eq!(c.val_seed(), 1);
    }

    #[test]
    fn text_roundtrip() {
        let mut c = ExperimentConfig::default();
        c.set("case", "B").unwrap();
        c.set("s_values", "0.25, 0.75").unwrap();
        c.set("batch_sizes", "2,4").unwrap();
        c.set("delta", "0.5").unwrap();
        c.set("alpha", "3e-5").unwrap();
        c.set("warm_start", "false").unwrap();
        let back = ExperimentConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(
            back,
            ExperimentConfig {
                n_pieces: Some(129),
                ..c
            }
        );
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::from_text("bogus = 1").is_err());
        assert!(ExperimentConfig::from_text("n_nodes 5").is_err());
        let c = ExperimentConfig::from_text("batch_sizes = 3\nn_train = 8").unwrap();
        assert!(c.validate().is_err());
        let c = ExperimentConfig::from_text("s = 1.0").unwrap();
        assert!(c.validate().is_err());
        let c = ExperimentConfig::from_text("# comment\nseed = 9 # trailing").unwrap();
        assert_eq!(c.seed, 9);
    }
}
