//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Scenario keys are the snake_case field names of
//! [`ScenarioConfig`]; `nt` and `nc` are accepted as short forms of
//! `num_tx_antennas` and `num_delay_rows`. Every key is optional and falls
//! back to the library defaults.
//!
//! ```text
//! # 32 antennas, 32 delay rows, 1/64 compression
//! nt = 32
//! nc = 32
//! num_subcarriers = 1024
//! cr = 1/64
//! quant_mode = lszq
//! quant_bits = 4
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use csifeed_core::channel::{ArrayGeometry, ScenarioConfig};
use csifeed_core::lora::{CompressionRatio, LoraConfig};
use csifeed_core::quant::{QuantConfig, QuantMode};
use csifeed_core::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    /// `line` is 1-based; 0 means the file could not be read at all.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid value for `{key}`: {message}")]
    Validation { key: String, message: String },
}

impl ConfigError {
    fn invalid(key: &str, message: impl fmt::Display) -> Self {
        ConfigError::Validation {
            key: key.to_string(),
            message: message.to_string(),
        }
    }

    /// Key the error refers to, if any.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Validation { key, .. } => Some(key),
            ConfigError::Parse { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrayKind {
    Upa,
    Ula,
}

/// Everything one run needs: scenario, network shape, training and the
/// quantizer sweep settings used by `quant-eval`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub array: ArrayKind,
    pub element_spacing_m: f64,
    pub lora: LoraConfig,
    pub train: TrainConfig,
    /// Fine-tuning epochs per quantizer setting in `quant-eval`.
    pub quant_epochs: usize,
    pub quant_batch_size: usize,
    /// Fraction of the dataset held out for testing in `quant-eval`.
    pub holdout_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        parse_config("").expect("defaults are valid")
    }
}

const KEYS: &[&str] = &[
    "carrier_freq_hz",
    "bandwidth_hz",
    "num_subcarriers",
    "subcarrier_spacing_hz",
    "num_tx_antennas",
    "num_delay_rows",
    "num_paths",
    "subpaths_per_path",
    "bs_height_m",
    "ue_distance_range_m",
    "delay_spread_range_s",
    "rng_seed",
    "array",
    "element_spacing_m",
    "cr",
    "measurements",
    "blocks",
    "hidden_width",
    "learning_rate",
    "epochs",
    "batch_size",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "seed",
    "snr_db",
    "freeze_network",
    "quant_mode",
    "quant_bits",
    "quant_epochs",
    "quant_batch_size",
    "holdout_fraction",
];

fn canonical(key: &str) -> Option<&'static str> {
    match key {
        "nt" => Some("num_tx_antennas"),
        "nc" => Some("num_delay_rows"),
        _ => KEYS.iter().copied().find(|k| *k == key),
    }
}

/// Reads and parses `path`. A missing or unreadable file is a parse error.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Parse {
        line: 0,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    parse_config(&text)
}

/// Raw `key -> value` pairs after alias resolution, in key order.
pub fn parse_entries(text: &str) -> Result<BTreeMap<&'static str, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Parse {
            line,
            message: format!("expected `key = value`, found `{content}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Parse {
                line,
                message: "empty key or value".into(),
            });
        }
        let name = canonical(key).ok_or_else(|| ConfigError::invalid(key, "unknown key"))?;
        if out.insert(name, value.to_string()).is_some() {
            return Err(ConfigError::Parse {
                line,
                message: format!("`{name}` is set more than once"),
            });
        }
    }
    Ok(out)
}

struct Entries(BTreeMap<&'static str, String>);

impl Entries {
    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.0
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| ConfigError::invalid(key, format!("`{v}`: {e}"))))
            .transpose()
    }

    fn range(&self, key: &str) -> Result<Option<(f64, f64)>, ConfigError> {
        let Some(v) = self.0.get(key) else {
            return Ok(None);
        };
        let parts: Vec<&str> = v.split(',').map(str::trim).collect();
        let parse = |s: &str| s.parse::<f64>().map_err(|e| ConfigError::invalid(key, format!("`{s}`: {e}")));
        match parts.as_slice() {
            [a, b] => Ok(Some((parse(a)?, parse(b)?))),
            _ => Err(ConfigError::invalid(key, "expected `min, max`")),
        }
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }
}

/// Parses configuration text, fills defaults and validates the result.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let e = Entries(parse_entries(text)?);
    let mut sc = ScenarioConfig::default();
    macro_rules! set {
        ($field:expr, $key:literal) => {
            if let Some(v) = e.get($key)? {
                $field = v;
            }
        };
    }
    set!(sc.carrier_freq_hz, "carrier_freq_hz");
    set!(sc.num_subcarriers, "num_subcarriers");
    set!(sc.subcarrier_spacing_hz, "subcarrier_spacing_hz");
    set!(sc.num_tx_antennas, "num_tx_antennas");
    set!(sc.num_delay_rows, "num_delay_rows");
    set!(sc.num_paths, "num_paths");
    set!(sc.subpaths_per_path, "subpaths_per_path");
    set!(sc.bs_height_m, "bs_height_m");
    set!(sc.rng_seed, "rng_seed");
    if let Some(r) = e.range("ue_distance_range_m")? {
        sc.ue_distance_range_m = r;
    }
    if let Some(r) = e.range("delay_spread_range_s")? {
        sc.delay_spread_range_s = r;
    }
    sc.bandwidth_hz = e
        .get("bandwidth_hz")?
        .unwrap_or(sc.num_subcarriers as f64 * sc.subcarrier_spacing_hz);

    let array = match e.raw("array") {
        None | Some("upa") => ArrayKind::Upa,
        Some("ula") => ArrayKind::Ula,
        Some(other) => return Err(ConfigError::invalid("array", format!("`{other}` is neither upa nor ula"))),
    };
    let spacing = e.get("element_spacing_m")?.unwrap_or(0.5 * sc.wavelength());
    if !(spacing > 0.0 && f64::is_finite(spacing)) {
        return Err(ConfigError::invalid("element_spacing_m", "must be positive"));
    }
    let geometry = match array {
        ArrayKind::Upa => ArrayGeometry::upa(sc.num_tx_antennas, spacing),
        ArrayKind::Ula => ArrayGeometry::ula(sc.num_tx_antennas, spacing),
    };
    sc.array = geometry.map_err(|err| ConfigError::invalid("num_tx_antennas", err))?;
    sc.validate().map_err(|err| scenario_error(&e, err))?;

    let (nt, nc) = (sc.num_tx_antennas, sc.num_delay_rows);
    let blocks = e.get("blocks")?.unwrap_or(LoraConfig::DEFAULT_BLOCKS);
    let hidden = e.get("hidden_width")?.unwrap_or(LoraConfig::DEFAULT_HIDDEN_WIDTH);
    let lora = match (e.raw("cr"), e.get::<usize>("measurements")?) {
        (Some(_), Some(_)) => return Err(ConfigError::invalid("measurements", "set either `cr` or `measurements`, not both")),
        (_, Some(m)) => LoraConfig::with_measurements(nt, nc, m, blocks, hidden),
        (cr, None) => {
            let cr = CompressionRatio::parse(cr.unwrap_or("1/4")).map_err(|err| ConfigError::invalid("cr", err))?;
            LoraConfig::new(nt, nc, cr, blocks, hidden)
        }
    }
    .map_err(|err| lora_error(&e, err))?;

    let mut train = TrainConfig::default();
    set!(train.learning_rate, "learning_rate");
    set!(train.epochs, "epochs");
    set!(train.batch_size, "batch_size");
    set!(train.adam.beta1, "adam_beta1");
    set!(train.adam.beta2, "adam_beta2");
    set!(train.adam.eps, "adam_eps");
    set!(train.seed, "seed");
    set!(train.freeze_network, "freeze_network");
    train.snr_db = match e.raw("snr_db") {
        None | Some("none") => None,
        Some(_) => e.get("snr_db")?,
    };
    let bits: Option<u8> = e.get("quant_bits")?;
    train.quant = match e.raw("quant_mode") {
        None | Some("none") => {
            if bits.is_some() {
                return Err(ConfigError::invalid("quant_bits", "needs `quant_mode`"));
            }
            None
        }
        Some(m) => {
            let mode = QuantMode::parse(m)
                .ok_or_else(|| ConfigError::invalid("quant_mode", format!("`{m}` is not one of none, qat, lsq, lszq")))?;
            Some(QuantConfig::new(bits.unwrap_or(8), mode).map_err(|err| ConfigError::invalid("quant_bits", err))?)
        }
    };
    train.validate().map_err(|err| train_error(&e, &train, err))?;

    let quant_epochs = e.get("quant_epochs")?.unwrap_or(train.epochs);
    if quant_epochs == 0 {
        return Err(ConfigError::invalid("quant_epochs", "must be at least 1"));
    }
    let quant_batch_size = e.get("quant_batch_size")?.unwrap_or(train.batch_size);
    if quant_batch_size == 0 {
        return Err(ConfigError::invalid("quant_batch_size", "must be at least 1"));
    }
    let holdout_fraction: f64 = e.get("holdout_fraction")?.unwrap_or(0.2);
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(ConfigError::invalid("holdout_fraction", "must lie strictly between 0 and 1"));
    }
    Ok(RunConfig {
        scenario: sc,
        array,
        element_spacing_m: spacing,
        lora,
        train,
        quant_epochs,
        quant_batch_size,
        holdout_fraction,
    })
}

// The library reports invariant violations as prose; attribute them to the
// key the user most plausibly got wrong.
fn scenario_error(e: &Entries, err: csifeed_core::Error) -> ConfigError {
    let msg = err.to_string();
    let key = ["bandwidth_hz", "num_delay_rows", "ue_distance_range_m", "delay_spread_range_s", "bs_height_m"]
        .into_iter()
        .find(|k| msg.contains(k))
        .or_else(|| e.0.keys().copied().find(|k| msg.contains(k)))
        .unwrap_or("scenario");
    ConfigError::invalid(key, msg)
}

fn lora_error(e: &Entries, err: csifeed_core::Error) -> ConfigError {
    let key = ["measurements", "cr", "blocks", "hidden_width"]
        .into_iter()
        .find(|k| e.0.contains_key(k))
        .unwrap_or("cr");
    ConfigError::invalid(key, err)
}

fn train_error(e: &Entries, cfg: &TrainConfig, err: csifeed_core::Error) -> ConfigError {
    let msg = err.to_string();
    let key = if cfg.freeze_network && msg.contains("freeze_network") {
        "freeze_network"
    } else {
        ["learning_rate", "epochs", "batch_size", "snr_db"]
            .into_iter()
            .find(|k| msg.contains(k))
            .or_else(|| msg.contains("ADAM").then_some("adam_beta1"))
            .or_else(|| e.0.keys().copied().next())
            .unwrap_or("train")
    };
    ConfigError::invalid(key, msg)
}

impl RunConfig {
    /// Fully resolved settings, suitable for re-parsing with [`parse_config`].
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        let sc = &self.scenario;
        let t = &self.train;
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("carrier_freq_hz", sc.carrier_freq_hz.to_string());
        put("bandwidth_hz", sc.bandwidth_hz.to_string());
        put("num_subcarriers", sc.num_subcarriers.to_string());
        put("subcarrier_spacing_hz", sc.subcarrier_spacing_hz.to_string());
        put("num_tx_antennas", sc.num_tx_antennas.to_string());
        put("num_delay_rows", sc.num_delay_rows.to_string());
        put("num_paths", sc.num_paths.to_string());
        put("subpaths_per_path", sc.subpaths_per_path.to_string());
        put("bs_height_m", sc.bs_height_m.to_string());
        put("ue_distance_range_m", format!("{}, {}", sc.ue_distance_range_m.0, sc.ue_distance_range_m.1));
        put("delay_spread_range_s", format!("{}, {}", sc.delay_spread_range_s.0, sc.delay_spread_range_s.1));
        put("rng_seed", sc.rng_seed.to_string());
        put("array", if self.array == ArrayKind::Upa { "upa" } else { "ula" }.to_string());
        put("element_spacing_m", self.element_spacing_m.to_string());
        put("measurements", self.lora.measurements.to_string());
        put("blocks", self.lora.blocks.to_string());
        put("hidden_width", self.lora.hidden_width.to_string());
        put("learning_rate", t.learning_rate.to_string());
        put("epochs", t.epochs.to_string());
        put("batch_size", t.batch_size.to_string());
        put("adam_beta1", t.adam.beta1.to_string());
        put("adam_beta2", t.adam.beta2.to_string());
        put("adam_eps", t.adam.eps.to_string());
        put("seed", t.seed.to_string());
        put("snr_db", t.snr_db.map_or("none".to_string(), |s| s.to_string()));
        put("freeze_network", t.freeze_network.to_string());
        match t.quant {
            Some(q) => {
                put("quant_mode", q.mode.name().to_string());
                put("quant_bits", q.bits().to_string());
            }
            None => put("quant_mode", "none".to_string()),
        }
        put("quant_epochs", self.quant_epochs.to_string());
        put("quant_batch_size", self.quant_batch_size.to_string());
        put("holdout_fraction", self.holdout_fraction.to_string());
        m
    }

    /// [`snapshot`](Self::snapshot) rendered as configuration text.
    pub fn to_text(&self) -> String {
        self.snapshot().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
