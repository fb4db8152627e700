use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};

/// Which items are scored against the ground truth during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum CandidateMode {
    /// Every catalog item not in the session history.
    FullVocab,
    /// The ground truth plus this many uniformly drawn negatives.
    Sampled(usize),
}

impl fmt::Display for CandidateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CandidateMode::FullVocab => write!(f, "full_vocab"),
            CandidateMode::Sampled(n) => write!(f, "sampled:{n}"),
        }
    }
}

impl FromStr for CandidateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "full_vocab" {
            return Ok(CandidateMode::FullVocab);
        }
        let n = s
            .strip_prefix("sampled:")
            .or_else(|| s.strip_prefix("sampled"))
            .map(|n| if n.is_empty() { Ok(99) } else { n.parse::<usize>() });
        match n {
            Some(Ok(n)) if n > 0 => Ok(CandidateMode::Sampled(n)),
            _ => Err(Error::Config(format!(
                "candidate mode must be full_vocab or sampled:N, got {s:?}"
            ))),
        }
    }
}

impl TryFrom<String> for CandidateMode {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<CandidateMode> for String {
    fn from(m: CandidateMode) -> String {
        m.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Item and taxonomy embedding width.
    pub dim: usize,
    /// Attribute token width (trainable mode; pretrained vectors fix their own).
    pub attr_dim: usize,
    /// Hidden width of θ; 0 means twice `dim`.
    pub hidden: usize,
    /// GGNN propagation steps.
    pub steps: usize,
    pub tax_through_ggnn: bool,
    /// Weight of the attention intent against the Beta intent.
    pub lambda: f64,
    /// Weight of cross-entropy against the alignment loss.
    pub gamma: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Separate seed for the Beta sampler; defaults to `seed`.
    pub beta_seed: Option<u64>,
    pub candidate_mode: CandidateMode,
    pub eval_ks: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 64,
            attr_dim: 32,
            hidden: 0,
            steps: 1,
            tax_through_ggnn: false,
            lambda: 0.5,
            gamma: 0.3,
            lr: 1e-3,
            epochs: 30,
            batch_size: 32,
            seed: 42,
            beta_seed: None,
            candidate_mode: CandidateMode::FullVocab,
            eval_ks: vec![10, 20],
        }
    }
}

/// Switches that disable one part of the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    NoAlpha,
    NoBeta,
    NoLzero,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::NoAlpha, Ablation::NoBeta, Ablation::NoLzero];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoAlpha => "no_alpha",
            Ablation::NoBeta => "no_beta",
            Ablation::NoLzero => "no_lzero",
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation {s:?}; expected no_alpha, no_beta or no_lzero")))
    }
}

impl TrainConfig {
    pub fn hidden_width(&self) -> usize {
        if self.hidden == 0 {
            2 * self.dim
        } else {
            self.hidden
        }
    }

    pub fn beta_seed(&self) -> u64 {
        self.beta_seed.unwrap_or(self.seed)
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            dim: self.dim,
            steps: self.steps,
            tax_through_ggnn: self.tax_through_ggnn,
        }
    }

    pub fn with_ablation(mut self, which: Ablation) -> Self {
        match which {
            Ablation::NoAlpha => self.lambda = 0.0,
            Ablation::NoBeta => self.lambda = 1.0,
            Ablation::NoLzero => self.gamma = 1.0,
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("lambda", self.lambda)?;
        unit("gamma", self.gamma)?;
        if self.dim == 0 || self.attr_dim == 0 || self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("dim, attr_dim, steps and batch_size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.eval_ks.is_empty() || self.eval_ks.contains(&0) {
            return Err(Error::Config("eval_ks must be a non-empty list of positive cutoffs".into()));
        }
        Ok(())
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
        }
        match key {
            "dim" | "d" => self.dim = parse(key, value)?,
            "attr_dim" | "d_a" => self.attr_dim = parse(key, value)?,
            "hidden" | "h" => self.hidden = parse(key, value)?,
            "steps" | "T" => self.steps = parse(key, value)?,
            "tax_through_ggnn" => self.tax_through_ggnn = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "beta_seed" => self.beta_seed = Some(parse(key, value)?),
            "candidate_mode" => self.candidate_mode = value.parse()?,
            "eval_ks" | "k" => self.eval_ks = parse_ks(value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }
}

/// Parses a comma-separated list of cutoffs such as `5,10,20`.
pub fn parse_ks(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|k| {
            k.trim()
                .parse::<usize>()
                .ok()
                .filter(|&k| k > 0)
                .ok_or_else(|| Error::Config(format!("invalid cutoff {k:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidate_mode_roundtrip() {
        for m in [CandidateMode::FullVocab, CandidateMode::Sampled(99), CandidateMode::Sampled(3)] {
            assert_eq!(m.to_string().parse::<CandidateMode>().unwrap(), m);
        }
        assert_eq!("sampled".parse::<CandidateMode>().unwrap(), CandidateMode::Sampled(99));
        assert!("sampled:0".parse::<CandidateMode>().is_err());
        assert!("all".parse::<CandidateMode>().is_err());
    }

    #[test]
    fn ablations_set_switches() {
        let c = TrainConfig::default();
        assert_eq!(c.clone().with_ablation(Ablation::NoAlpha).lambda, 0.0);
        assert_eq!(c.clone().with_ablation(Ablation::NoBeta).lambda, 1.0);
        assert_eq!(c.with_ablation(Ablation::NoLzero).gamma, 1.0);
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut c = TrainConfig::default();
        c.set("lambda", "1.2").unwrap();
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        assert!(c.set("nope", "1").is_err());
        assert!(c.set("dim", "x").is_err());
        c.set("k", "5,10,20").unwrap();
        assert_eq!(c.eval_ks, vec![5, 10, 20]);
    }

    #[test]
    fn serde_roundtrip() {
        let c = TrainConfig {
            candidate_mode: CandidateMode::Sampled(7),
            beta_seed: Some(3),
            ..Default::default()
        };
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&s).unwrap(), c);
    }
}
