//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored; unknown keys are errors. The
//! canonical text form lists every key in declaration order and is what the
//! config hash covers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

fn parse_value<V: std::str::FromStr>(key: &str, raw: &str) -> Result<V, CliError>
where
    V::Err: std::fmt::Display,
{
    raw.parse()
        .map_err(|e| CliError::Config(format!("{key} = {raw:?}: {e}")))
}

trait Render {
    fn render(&self) -> String;
}

macro_rules! render_display {
    ($($t:ty),*) => { $( impl Render for $t { fn render(&self) -> String { self.to_string() } } )* };
}
render_display!(u64, usize, f64, bool, String);

impl Render for PathBuf {
    fn render(&self) -> String {
        self.display().to_string()
    }
}

macro_rules! config_struct {
    ($( $(#[$doc:meta])* $field:ident : $ty:ty = $default:expr ),* $(,)?) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct Config {
            $( $(#[$doc])* pub $field: $ty, )*
        }

        impl Default for Config {
            fn default() -> Self {
                Self { $( $field: $default, )* }
            }
        }

        impl Config {
            pub const KEYS: &'static [&'static str] = &[$( stringify!($field) ),*];

            pub fn set(&mut self, key: &str, raw: &str) -> Result<(), CliError> {
                match key {
                    $( stringify!($field) => self.$field = parse_value(key, raw)?, )*
                    other => return Err(CliError::Config(format!("unknown key {other:?}"))),
                }
                Ok(())
            }

            /// `(key, value)` pairs in canonical order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$( (stringify!($field), self.$field.render()) ),*]
            }
        }
    };
}

config_struct! {
    seed: u64 = 0,

    clip_seconds: f64 = 30.0,
    train_minutes: f64 = 20.0,
    dev_minutes: f64 = 5.0,
    test_minutes: f64 = 5.0,

    n_fft: usize = 512,
    win_len: usize = 400,
    hop: usize = 320,
    n_mels: usize = 80,
    f_min: f64 = 0.0,
    f_max: f64 = 8000.0,
    /// Reconstruct `ln(1 + |STFT|)` instead of the linear magnitude.
    recon_log: bool = false,
    /// Multiplies the reconstruction target.
    recon_scale: f64 = 1.0,

    k: usize = 64,
    mu: f64 = 0.1,
    dict_iters: usize = 100,
    dict_tol: f64 = 1e-5,
    /// Every n-th training frame enters dictionary learning.
    dict_stride: usize = 4,

    channels: usize = 64,
    blocks: usize = 3,
    kernel: usize = 3,

    alpha: f64 = 10.0,
    beta: f64 = 1.0,
    gamma: f64 = 0.1,
    lr: f64 = 1e-3,
    batch: usize = 16,
    epochs: usize = 40,
    segment_seconds: f64 = 4.0,
    threshold: f64 = 0.5,
    min_dur: f64 = 0.0,

    tau: f64 = 0.5,
    band: usize = 1,
    compact_limit: usize = 20,

    probe_epochs: usize = 50,
    probe_lr: f64 = 1e-2,
    probe_batch: usize = 32,
    probe_clips: usize = 40,
    probe_seconds: f64 = 2.0,

    data_dir: PathBuf = PathBuf::from("data"),
    dictionary: PathBuf = PathBuf::from("dict/dictionary.nsd"),
    checkpoint: PathBuf = PathBuf::from("model/model.nsm"),
    split: String = "test".to_string(),
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Reads either a key=value file or a run log whose `config` object holds
    /// the resolved configuration.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        if text.trim_start().starts_with('{') {
            let v: Value =
                serde_json::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))?;
            let obj = v
                .get("config")
                .and_then(Value::as_object)
                .ok_or_else(|| CliError::format(path, "run log has no config object"))?;
            return Self::from_json(obj).map_err(|e| CliError::format(path, e.to_string()));
        }
        Self::parse(&text)
    }

    pub fn from_json(obj: &Map<String, Value>) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (k, v) in obj {
            let raw = v
                .as_str()
                .ok_or_else(|| CliError::Config(format!("{k}: expected a string value")))?;
            cfg.set(k, raw)?;
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Values are kept as the exact strings that `set` parses back.
    pub fn to_json(&self) -> Map<String, Value> {
        self.entries()
            .into_iter()
            .map(|(k, v)| (k.to_string(), Value::String(v)))
            .collect()
    }

    /// SHA-256 of the canonical text form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}
