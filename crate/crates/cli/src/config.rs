//! Run configuration: defaults, `key = value` file parsing, flag overrides,
//! and the desk-scale caps that keep every run laptop-sized.

use std::path::{Path, PathBuf};

use thiserror::Error;

/// Environment variable that overrides the output directory unless an
/// explicit `--out` flag is present.
pub const OUT_DIR_ENV: &str = "TREECALC_OUT_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown key `{key}` on line {line} of {file}")]
    UnknownKey { file: String, line: usize, key: String },
    #[error("invalid value for `{key}` on line {line} of {file}: {msg}")]
    InvalidValue { file: String, line: usize, key: String, msg: String },
    #[error("malformed line {line} of {file}: expected `key = value`, got `{text}`")]
    MalformedLine { file: String, line: usize, text: String },
    #[error("cap exceeded: {key} = {value} outside the allowed range {range}")]
    CapExceeded { key: String, value: String, range: String },
    #[error("epsilon list must be strictly decreasing, got {0:?}")]
    EpsilonOrder(Vec<f64>),
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Everything a batch run needs. Field order mirrors the config-file keys.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub q: u32,
    pub radius: usize,
    pub snodes: usize,
    pub tail: usize,
    pub family: String,
    pub eps: f64,
    pub k: usize,
    pub chi_support: f64,
    pub epsilons: Vec<f64>,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            q: 2,
            radius: 4,
            snodes: 256,
            tail: 3,
            family: "shifted_k".into(),
            eps: 0.2,
            k: 1,
            chi_support: 10.0,
            epsilons: vec![0.4, 0.2, 0.1, 0.05],
            seed: 7,
            out_dir: PathBuf::from("."),
        }
    }
}

/// Flag-level overrides collected by the argument parser; `None` means the
/// flag was absent and the file value (or default) stands.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub q: Option<u32>,
    pub radius: Option<usize>,
    pub snodes: Option<usize>,
    pub tail: Option<usize>,
    pub family: Option<String>,
    pub eps: Option<f64>,
    pub k: Option<usize>,
    pub chi_support: Option<f64>,
    pub epsilons: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Builds the effective configuration: defaults, then the optional file,
    /// then flags, then the cap checks. The output directory additionally
    /// honours the `TREECALC_OUT_DIR` environment variable between file and
    /// flag precedence.
    pub fn resolve(file: Option<&Path>, flags: &Overrides) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut tail_explicit = false;
        if let Some(path) = file {
            tail_explicit = cfg.apply_file(path)?;
        }
        if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
            if !dir.is_empty() {
                cfg.out_dir = PathBuf::from(dir);
            }
        }
        tail_explicit |= flags.tail.is_some();
        cfg.apply_flags(flags);
        // The default tail follows the radius down; an explicit tail larger
        // than the radius is still a cap error.
        if !tail_explicit {
            cfg.tail = cfg.tail.min(cfg.radius);
        }
        cfg.check_caps()?;
        Ok(cfg)
    }

    fn apply_flags(&mut self, flags: &Overrides) {
        if let Some(v) = flags.q {
            self.q = v;
        }
        if let Some(v) = flags.radius {
            self.radius = v;
        }
        if let Some(v) = flags.snodes {
            self.snodes = v;
        }
        if let Some(v) = flags.tail {
            self.tail = v;
        }
        if let Some(v) = &flags.family {
            self.family = v.clone();
        }
        if let Some(v) = flags.eps {
            self.eps = v;
        }
        if let Some(v) = flags.k {
            self.k = v;
        }
        if let Some(v) = flags.chi_support {
            self.chi_support = v;
        }
        if let Some(v) = &flags.epsilons {
            self.epsilons = v.clone();
        }
        if let Some(v) = flags.seed {
            self.seed = v;
        }
        if let Some(v) = &flags.out {
            self.out_dir = v.clone();
        }
    }

    /// Applies a `key = value` file; returns whether the file set `tail`.
    fn apply_file(&mut self, path: &Path) -> Result<bool, ConfigError> {
        let file = path.display().to_string();
        let mut tail_seen = false;
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: file.clone(),
            source,
        })?;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let stripped = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let trimmed = stripped.trim();
            if trimmed.is_empty() {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| {
                ConfigError::MalformedLine {
                    file: file.clone(),
                    line,
                    text: trimmed.to_string(),
                }
            })?;
            let key = key.trim();
            let value = value.trim();
            let invalid = |msg: String| ConfigError::InvalidValue {
                file: file.clone(),
                line,
                key: key.to_string(),
                msg,
            };
            match key {
                "q" => self.q = parse_scalar(value).map_err(invalid)?,
                "radius" => self.radius = parse_scalar(value).map_err(invalid)?,
                "snodes" => self.snodes = parse_scalar(value).map_err(invalid)?,
                "tail" => {
                    self.tail = parse_scalar(value).map_err(invalid)?;
                    tail_seen = true;
                }
                "family" => self.family = value.to_string(),
                "eps" => self.eps = parse_scalar(value).map_err(invalid)?,
                "k" => self.k = parse_scalar(value).map_err(invalid)?,
                "chi_support" => self.chi_support = parse_scalar(value).map_err(invalid)?,
                "epsilons" => self.epsilons = parse_eps_list(value).map_err(invalid)?,
                "seed" => self.seed = parse_scalar(value).map_err(invalid)?,
                "out_dir" => self.out_dir = PathBuf::from(value),
                other => {
                    return Err(ConfigError::UnknownKey {
                        file,
                        line,
                        key: other.to_string(),
                    })
                }
            }
        }
        Ok(tail_seen)
    }

    /// Desk-scale caps: every bound keeps a default laptop run under a few
    /// minutes and the ball enumerations in memory.
    fn check_caps(&self) -> Result<(), ConfigError> {
        let cap = |key: &str, value: String, range: &str| ConfigError::CapExceeded {
            key: key.into(),
            value,
            range: range.into(),
        };
        if !(2..=9).contains(&self.q) {
            return Err(cap("q", self.q.to_string(), "2..=9"));
        }
        if !(1..=8).contains(&self.radius) {
            return Err(cap("radius", self.radius.to_string(), "1..=8"));
        }
        if !(8..=4096).contains(&self.snodes) {
            return Err(cap("snodes", self.snodes.to_string(), "8..=4096"));
        }
        if self.tail > self.radius {
            return Err(cap(
                "tail",
                self.tail.to_string(),
                &format!("0..=radius ({})", self.radius),
            ));
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(cap("eps", format!("{}", self.eps), "(0, 1]"));
        }
        if self.k > 6 {
            return Err(cap("k", self.k.to_string(), "0..=6"));
        }
        if !(1.0..=100.0).contains(&self.chi_support) {
            return Err(cap("chi_support", format!("{}", self.chi_support), "[1, 100]"));
        }
        if self.epsilons.is_empty() || self.epsilons.len() > 64 {
            return Err(cap(
                "epsilons",
                format!("{} entries", self.epsilons.len()),
                "1..=64 entries",
            ));
        }
        for &e in &self.epsilons {
            if !(e > 0.0 && e <= 1.0) {
                return Err(cap("epsilons", format!("{e}"), "each in (0, 1]"));
            }
        }
        if !self.epsilons.windows(2).all(|w| w[1] < w[0]) {
            return Err(ConfigError::EpsilonOrder(self.epsilons.clone()));
        }
        // Joint cap: the quantization ball at (q, radius) must stay desk-sized.
        let ball = treecalc::tree::TreeParams::new(self.q)
            .map(|p| p.ball_count(self.radius))
            .unwrap_or(u128::MAX);
        if ball > 20_000 {
            return Err(cap(
                "radius",
                format!("ball of {ball} vertices at q={}", self.q),
                "ball(radius) <= 20000 vertices",
            ));
        }
        Ok(())
    }
}

fn parse_scalar<T: std::str::FromStr>(value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| format!("cannot parse `{value}`: {e}"))
}

fn parse_eps_list(value: &str) -> Result<Vec<f64>, String> {
    value
        .split(',')
        .map(|piece| parse_scalar::<f64>(piece.trim()))
        .collect()
}
