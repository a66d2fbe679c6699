//! Declarative run configuration (TOML).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backtest::BacktestConfig;
use crate::error::{Error, Result};
use crate::hawkes::HawkesConfig;
use crate::market::{Normalizer, PhaseGeometry, DEFAULT_MIN_ROWS};
use crate::ranker::{ModelConfig, TrainConfig, Variant};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Directory of `<TICKER>-<name>.csv` price files.
    pub prices: Option<PathBuf>,
    pub nodes: Option<PathBuf>,
    pub relations: Option<PathBuf>,
    /// CSV `phase,rate` of annual risk-free rates (fractions).
    pub risk_free: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub min_rows: usize,
    /// Look-back window `W`.
    pub window: usize,
    pub normalizer: Normalizer,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            min_rows: DEFAULT_MIN_ROWS,
            window: 20,
            normalizer: Normalizer::PreviousDay,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub phases: usize,
    pub geometry: PhaseGeometry,
    pub backtest: BacktestConfig,
    /// Default annual risk-free rate for phases missing from the table.
    pub risk_free: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            phases: 24,
            geometry: PhaseGeometry::default(),
            backtest: BacktestConfig::default(),
            risk_free: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub variant: Variant,
    /// Relation types deleted before any snapshot is taken.
    pub remove: Vec<String>,
    /// Worker threads for phase-level parallelism; 0 uses all cores.
    pub threads: usize,
    pub paths: PathsConfig,
    pub data: DataConfig,
    pub protocol: ProtocolConfig,
    pub model: ModelConfig,
    pub hawkes: HawkesConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            variant: Variant::Full,
            remove: Vec::new(),
            threads: 0,
            paths: PathsConfig::default(),
            data: DataConfig::default(),
            protocol: ProtocolConfig::default(),
            model: ModelConfig::default(),
            hawkes: HawkesConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Checks every value that would otherwise fail late.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.data.window == 0 {
            return bad("window must be positive".into());
        }
        if self.protocol.phases == 0 {
            return bad("at least one phase is required".into());
        }
        let bt = &self.protocol.backtest;
        if bt.deltas.is_empty() || bt.deltas.contains(&0) {
            return bad(format!("holding periods {:?} must be non-empty and positive", bt.deltas));
        }
        if bt.ks.is_empty() || bt.ks.contains(&0) {
            return bad(format!("k values {:?} must be non-empty and positive", bt.ks));
        }
        let g = &self.protocol.geometry;
        if g.initial_train == 0 || g.train < g.initial_train || g.val == 0 || g.test == 0 || g.stride == 0 {
            return bad(format!("phase geometry {g:?} is inconsistent"));
        }
        self.model.seq.validate()?;
        let r = &self.model.rel;
        if r.dim == 0 || r.heads == 0 || r.dim % r.heads != 0 || r.layers == 0 {
            return bad(format!("relational encoder {r:?} needs dim divisible by heads"));
        }
        if self.model.hawkes_dim != self.hawkes.dim {
            return bad(format!(
                "model.hawkes_dim {} differs from hawkes.dim {}",
                self.model.hawkes_dim, self.hawkes.dim
            ));
        }
        if !(self.hawkes.margin >= 0.0) || self.hawkes.history == 0 {
            return bad("Hawkes margin must be non-negative and history positive".into());
        }
        for o in [&self.train.optimizer, &self.hawkes.optimizer] {
            if !(o.lr > 0.0) || !o.lr.is_finite() {
                return bad(format!("learning rate {} must be positive", o.lr));
            }
        }
        self.train.loss.validate()?;
        Ok(())
    }

    /// Output directory, defaulting to `./kgrank-out`.
    pub fn out_dir(&self) -> PathBuf {
        self.paths.out.clone().unwrap_or_else(|| PathBuf::from("kgrank-out"))
    }

    pub fn require<'a>(&self, path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
        path.as_deref()
            .ok_or_else(|| Error::Config(format!("paths.{what} is not set")))
    }
}

/// Reads `phase,rate` rows; a header line is allowed.
pub fn load_risk_free(path: &Path) -> Result<BTreeMap<usize, f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    let ctx = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(&ctx, e))?;
        if rec.len() != 2 {
            return Err(Error::parse(&ctx, format!("line {} needs two fields", i + 1)));
        }
        let (Ok(phase), Ok(rate)) = (rec[0].parse::<usize>(), rec[1].parse::<f64>()) else {
            if i == 0 {
                continue;
            }
            return Err(Error::parse(&ctx, format!("line {}: bad phase or rate", i + 1)));
        };
        out.insert(phase, rate);
    }
    Ok(out)
}
