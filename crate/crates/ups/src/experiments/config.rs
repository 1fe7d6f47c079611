//! Flat key=value experiment configuration with one-to-one CLI flag
//! overrides.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, UpsError};

/// Named experiment presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentName {
    Normal,
    Doublewell,
    LogisticEvidence,
    LogisticCv,
    Leukemia,
    MammalMse,
    MammalLogscore,
    Stackloss,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 8] = [
        ExperimentName::Normal,
        ExperimentName::Doublewell,
        ExperimentName::LogisticEvidence,
        ExperimentName::LogisticCv,
        ExperimentName::Leukemia,
        ExperimentName::MammalMse,
        ExperimentName::MammalLogscore,
        ExperimentName::Stackloss,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentName::Normal => "normal",
            ExperimentName::Doublewell => "doublewell",
            ExperimentName::LogisticEvidence => "logistic-evidence",
            ExperimentName::LogisticCv => "logistic-cv",
            ExperimentName::Leukemia => "leukemia",
            ExperimentName::MammalMse => "mammal-mse",
            ExperimentName::MammalLogscore => "mammal-logscore",
            ExperimentName::Stackloss => "stackloss",
        }
    }

    /// Name of the quantity the experiment estimates, used in summaries.
    pub fn estimand(self) -> &'static str {
        match self {
            ExperimentName::Normal | ExperimentName::Doublewell => "r01",
            ExperimentName::LogisticEvidence => "log_evidence_plus_n_log2",
            ExperimentName::LogisticCv
            | ExperimentName::Leukemia
            | ExperimentName::MammalLogscore
            | ExperimentName::Stackloss => "cv",
            ExperimentName::MammalMse => "mse_cv",
        }
    }
}

impl FromStr for ExperimentName {
    type Err = UpsError;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentName::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| UpsError::Config(format!("unknown experiment '{s}'")))
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Grid shape selectable from the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridChoice {
    Equispaced,
    Log,
}

impl GridChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            GridChoice::Equispaced => "equispaced",
            GridChoice::Log => "log",
        }
    }
}

impl FromStr for GridChoice {
    type Err = UpsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equispaced" => Ok(GridChoice::Equispaced),
            "log" => Ok(GridChoice::Log),
            other => Err(UpsError::Config(format!("unknown grid kind '{other}'"))),
        }
    }
}

impl fmt::Display for GridChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Path variant within an experiment. `Default` resolves per experiment
/// (covariate scaling for the logistic experiments, the only available
/// path elsewhere).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathVariant {
    Default,
    Covariate,
    Laplace,
    Tempering,
}

impl PathVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            PathVariant::Default => "default",
            PathVariant::Covariate => "covariate",
            PathVariant::Laplace => "laplace",
            PathVariant::Tempering => "tempering",
        }
    }
}

impl FromStr for PathVariant {
    type Err = UpsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(PathVariant::Default),
            "covariate" => Ok(PathVariant::Covariate),
            "laplace" => Ok(PathVariant::Laplace),
            "tempering" => Ok(PathVariant::Tempering),
            other => Err(UpsError::Config(format!("unknown path variant '{other}'"))),
        }
    }
}

impl fmt::Display for PathVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// All knobs of a run. Serializes to flat `key=value` lines; every key
/// has a CLI flag of the same name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentName,
    pub grid: GridChoice,
    pub grid_size: usize,
    pub survey_replicates: usize,
    pub m2_replicates: usize,
    pub replicates: usize,
    pub k_quantile: f64,
    pub k_multiplier: f64,
    pub fixed_k: Option<usize>,
    pub fixed_m: Option<usize>,
    pub path: PathVariant,
    pub adapt: bool,
    pub seed: u64,
    pub max_iterations: usize,
    pub out: String,
}

impl ExperimentConfig {
    /// Per-experiment defaults matching the reference runs.
    pub fn preset(experiment: ExperimentName) -> Self {
        let mut cfg = ExperimentConfig {
            experiment,
            grid: GridChoice::Equispaced,
            grid_size: 10,
            survey_replicates: 100,
            m2_replicates: 100,
            replicates: 1000,
            k_quantile: 0.99,
            k_multiplier: 1.0,
            fixed_k: None,
            fixed_m: None,
            path: PathVariant::Default,
            adapt: false,
            seed: 1,
            max_iterations: 100_000,
            out: "out".into(),
        };
        match experiment {
            ExperimentName::Normal => {
                cfg.replicates = 5000;
                cfg.adapt = true;
            }
            ExperimentName::Doublewell => {
                cfg.survey_replicates = 1000;
                cfg.k_multiplier = 2.0;
            }
            ExperimentName::LogisticEvidence => {
                cfg.survey_replicates = 1000;
                cfg.path = PathVariant::Covariate;
            }
            ExperimentName::LogisticCv => {
                cfg.survey_replicates = 1000;
                cfg.path = PathVariant::Covariate;
            }
            ExperimentName::Leukemia => {
                cfg.survey_replicates = 1000;
                cfg.replicates = 10_000;
                cfg.fixed_k = Some(100);
                cfg.fixed_m = Some(500);
            }
            ExperimentName::MammalMse | ExperimentName::MammalLogscore => {
                cfg.survey_replicates = 1000;
                cfg.fixed_k = Some(10);
                cfg.fixed_m = Some(25);
            }
            ExperimentName::Stackloss => {
                cfg.survey_replicates = 1000;
                cfg.replicates = 10_000;
                cfg.fixed_k = Some(10);
                cfg.fixed_m = Some(25);
            }
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("grid_size", self.grid_size),
            ("survey_replicates", self.survey_replicates),
            ("m2_replicates", self.m2_replicates),
            ("replicates", self.replicates),
            ("max_iterations", self.max_iterations),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(UpsError::Config(format!("{name} must be >= 1")));
            }
        }
        if !(0.0..1.0).contains(&self.k_quantile) {
            return Err(UpsError::Config(format!(
                "k_quantile {} outside [0, 1)",
                self.k_quantile
            )));
        }
        if self.k_multiplier <= 0.0 {
            return Err(UpsError::Config("k_multiplier must be positive".into()));
        }
        if let (Some(k), Some(m)) = (self.fixed_k, self.fixed_m) {
            if m < k {
                return Err(UpsError::Config(format!("fixed_m {m} < fixed_k {k}")));
            }
        }
        Ok(())
    }

    /// Flat `key=value` text, one key per line, in a fixed order.
    pub fn to_key_values(&self) -> String {
        let opt = |v: Option<usize>| v.map_or("none".to_string(), |x| x.to_string());
        format!(
            "experiment={}\ngrid={}\ngrid_size={}\nsurvey_replicates={}\n\
             m2_replicates={}\nreplicates={}\nk_quantile={}\nk_multiplier={}\n\
             fixed_k={}\nfixed_m={}\npath={}\nadapt={}\nseed={}\n\
             max_iterations={}\nout={}\n",
            self.experiment,
            self.grid,
            self.grid_size,
            self.survey_replicates,
            self.m2_replicates,
            self.replicates,
            self.k_quantile,
            self.k_multiplier,
            opt(self.fixed_k),
            opt(self.fixed_m),
            self.path,
            self.adapt,
            self.seed,
            self.max_iterations,
            self.out,
        )
    }

    /// Parse flat `key=value` text. The `experiment` key must appear;
    /// unspecified keys take the experiment preset's value.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                UpsError::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1))
            })?;
            pairs.push((key.trim().to_string(), value.trim().to_string()));
        }
        let experiment = pairs
            .iter()
            .find(|(k, _)| k == "experiment")
            .ok_or_else(|| UpsError::Config("missing 'experiment' key".into()))?
            .1
            .parse::<ExperimentName>()?;
        let mut cfg = ExperimentConfig::preset(experiment);
        for (key, value) in &pairs {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Set a single key from its string form (config file or CLI flag).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| UpsError::Config(format!("invalid value '{value}' for {key}")))
        }
        fn opt_num(key: &str, value: &str) -> Result<Option<usize>> {
            if value == "none" {
                Ok(None)
            } else {
                num(key, value).map(Some)
            }
        }
        match key {
            "experiment" => self.experiment = value.parse()?,
            "grid" => self.grid = value.parse()?,
            "grid_size" => self.grid_size = num(key, value)?,
            "survey_replicates" => self.survey_replicates = num(key, value)?,
            "m2_replicates" => self.m2_replicates = num(key, value)?,
            "replicates" => self.replicates = num(key, value)?,
            "k_quantile" => self.k_quantile = num(key, value)?,
            "k_multiplier" => self.k_multiplier = num(key, value)?,
            "fixed_k" => self.fixed_k = opt_num(key, value)?,
            "fixed_m" => self.fixed_m = opt_num(key, value)?,
            "path" => self.path = value.parse()?,
            "adapt" => self.adapt = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "max_iterations" => self.max_iterations = num(key, value)?,
            "out" => self.out = value.to_string(),
            other => return Err(UpsError::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_all_presets() {
        for name in ExperimentName::ALL {
            let mut cfg = ExperimentConfig::preset(name);
            cfg.seed = 42;
            cfg.out = "results/run1".into();
            let text = cfg.to_key_values();
            let parsed = ExperimentConfig::from_key_values(&text).unwrap();
            assert_eq!(parsed, cfg, "round trip failed for {name}");
        }
    }

    #[test]
    fn parse_rejects_bad_input() {
        assert!(ExperimentConfig::from_key_values("grid=log\n").is_err());
        assert!(ExperimentConfig::from_key_values("experiment=unknown\n").is_err());
        assert!(
            ExperimentConfig::from_key_values("experiment=normal\nreplicates=0\n").is_err()
        );
        assert!(ExperimentConfig::from_key_values("experiment=normal\nnot a pair\n").is_err());
        let cfg =
            ExperimentConfig::from_key_values("# comment\nexperiment=normal\n\nseed=7\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.replicates, 5000);
    }

    #[test]
    fn preset_examples() {
        let leuk = ExperimentConfig::preset(ExperimentName::Leukemia);
        assert_eq!((leuk.fixed_k, leuk.fixed_m), (Some(100), Some(500)));
        assert_eq!(leuk.replicates, 10_000);
        let dw = ExperimentConfig::preset(ExperimentName::Doublewell);
        assert_eq!(dw.k_multiplier, 2.0);
        assert_eq!(ExperimentName::MammalMse.estimand(), "mse_cv");
        assert_eq!(
            "logistic-evidence".parse::<ExperimentName>().unwrap(),
            ExperimentName::LogisticEvidence
        );
    }
}
