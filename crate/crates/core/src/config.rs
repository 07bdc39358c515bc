//! Flat `key = value` experiment configuration.
//!
//! A config file holds one `key = value` pair per line; `#` starts a
//! comment. Values resolve with precedence CLI override > file > default.
//! [`KEYS`] documents every key with its default.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::AggregationRule;
use crate::attack::AttackSpec;
use crate::privacy::DpConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("line {line}: expected `key = value`, found {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown key {key:?}{}; valid keys: {}", suggestion.as_ref().map(|s| format!(" (did you mean {s:?}?)")).unwrap_or_default(), valid.join(", "))]
    UnknownKey {
        key: String,
        suggestion: Option<String>,
        valid: Vec<String>,
    },
    #[error("key {key:?} set twice")]
    Duplicate { key: String },
    #[error("key {key:?}: expected {expected}, found {value:?}")]
    Type {
        key: String,
        expected: &'static str,
        value: String,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetKind {
    Spam,
    Mnist,
}

/// A documented config key.
#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub name: &'static str,
    pub default: &'static str,
    pub numeric: bool,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, numeric: bool, help: &'static str) -> KeySpec {
    KeySpec {
        name,
        default,
        numeric,
        help,
    }
}

pub const KEYS: &[KeySpec] = &[
    key("dataset", "spam", false, "spam | mnist"),
    key("spam_path", "data/spambase.data", false, "Spambase CSV"),
    key("mnist_images", "data/mnist-10k-images-idx3-ubyte", false, "IDX image file"),
    key("mnist_labels", "data/mnist-10k-labels-idx1-ubyte", false, "IDX label file"),
    key("mnist_subset", "10000", true, "seeded MNIST subset size; 0 keeps everything"),
    key("train_fraction", "0.6666666666666666", true, "share of samples used for training"),
    key("data_seed", "0", true, "seed of the split and partition shuffles"),
    key("n_clients", "20", true, "number of clients M"),
    key("n_spam_clients", "4", true, "spam: clients holding only label 1"),
    key("byzantine_ids", "16,17,18,19", false, "comma-separated Byzantine client ids (may be empty)"),
    key("attack", "gaussian", false, "none | sign_flip | label_flip | gaussian"),
    key("attack_scale", "100", true, "gaussian attack per-coordinate std"),
    key("rule", "tnbs", false, "mean | tnbs | nbs | krum | multi_krum | cwtm | cw_median"),
    key("tnbs_keep", "0.6", true, "tnbs: kept fraction p"),
    key("nbs_keep", "0.8", true, "nbs: kept fraction p"),
    key("krum_f", "4", true, "krum / multi_krum: assumed Byzantine count f"),
    key("multi_krum_m", "0", true, "multi_krum: selected count m; 0 means n - f"),
    key("cwtm_beta", "0.2", true, "cwtm: per-side trimmed fraction"),
    key("q", "1", true, "fairness exponent q >= 0"),
    key("dp", "fixed_sigma", false, "off | fixed_sigma | epsilon_delta"),
    key("sigma2", "0.2", true, "fixed_sigma: noise variance"),
    key("clip", "false", false, "fixed_sigma: clip messages to clip_c before noise"),
    key("clip_c", "1", true, "sensitivity bound C"),
    key("epsilon", "1", true, "epsilon_delta: privacy loss epsilon"),
    key("delta", "0.00001", true, "epsilon_delta: slack delta"),
    key("eta", "1", true, "learning rate"),
    key("rounds", "200", true, "number of rounds T"),
    key("seed", "0", true, "seed of noise and attack streams"),
    key("eval_every", "auto", false, "evaluation cadence; auto = 1 for spam, 5 for mnist"),
    key("weighted_by_pi", "false", false, "scale client messages by their data share"),
];

pub fn key_spec(name: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.name == name)
}

fn unknown_key(name: &str) -> ConfigError {
    let suggestion = KEYS
        .iter()
        .map(|k| (strsim::damerau_levenshtein(name, k.name), k.name))
        .filter(|(d, _)| *d <= 3)
        .min()
        .map(|(_, n)| n.to_string());
    ConfigError::UnknownKey {
        key: name.to_string(),
        suggestion,
        valid: KEYS.iter().map(|k| k.name.to_string()).collect(),
    }
}

/// Parses `key = value` lines into a map.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: i + 1,
            text: raw.to_string(),
        })?;
        let k = k.trim();
        if key_spec(k).is_none() {
            return Err(unknown_key(k));
        }
        if map.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(ConfigError::Duplicate { key: k.to_string() });
        }
    }
    Ok(map)
}

/// Parses one `key=value` override.
pub fn parse_override(text: &str) -> Result<(String, String)> {
    let (k, v) = text.split_once('=').ok_or_else(|| ConfigError::Syntax {
        line: 0,
        text: text.to_string(),
    })?;
    let k = k.trim();
    if key_spec(k).is_none() {
        return Err(unknown_key(k));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub spam_path: PathBuf,
    pub mnist_images: PathBuf,
    pub mnist_labels: PathBuf,
    pub mnist_subset: usize,
    pub train_fraction: f64,
    pub data_seed: u64,
    pub n_clients: usize,
    pub n_spam_clients: usize,
    pub byzantine_ids: Vec<usize>,
    pub attack: AttackSpec,
    pub rule: AggregationRule,
    pub q: f64,
    pub dp: DpConfig,
    pub eta: f64,
    pub rounds: usize,
    pub seed: u64,
    pub eval_every: usize,
    pub weighted_by_pi: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::from_pairs(&BTreeMap::new()).expect("defaults are valid")
    }
}

struct Resolver<'a> {
    pairs: &'a BTreeMap<String, String>,
}

impl Resolver<'_> {
    fn raw(&self, key: &'static str) -> &str {
        self.pairs
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| key_spec(key).expect("known key").default)
    }

    fn typed<T: std::str::FromStr>(&self, key: &'static str, expected: &'static str) -> Result<T> {
        let v = self.raw(key);
        v.parse().map_err(|_| ConfigError::Type {
            key: key.to_string(),
            expected,
            value: v.to_string(),
        })
    }

    fn real(&self, key: &'static str) -> Result<f64> {
        let v: f64 = self.typed(key, "a real number")?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ConfigError::Type {
                key: key.to_string(),
                expected: "a finite real number",
                value: self.raw(key).to_string(),
            })
        }
    }

    fn int(&self, key: &'static str) -> Result<usize> {
        self.typed(key, "a nonnegative integer")
    }

    fn u64(&self, key: &'static str) -> Result<u64> {
        self.typed(key, "a nonnegative integer")
    }

    fn boolean(&self, key: &'static str) -> Result<bool> {
        self.typed(key, "true or false")
    }

    fn choice(&self, key: &'static str, options: &'static str) -> Result<String> {
        let v = self.raw(key);
        if options.split(" | ").any(|o| o == v) {
            Ok(v.to_string())
        } else {
            Err(ConfigError::Type {
                key: key.to_string(),
                expected: options,
                value: v.to_string(),
            })
        }
    }

    fn id_list(&self, key: &'static str) -> Result<Vec<usize>> {
        let v = self.raw(key);
        let mut ids = v
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|_| ConfigError::Type {
                    key: key.to_string(),
                    expected: "a comma-separated list of client ids",
                    value: v.to_string(),
                })
            })
            .collect::<Result<Vec<usize>>>()?;
        ids.sort_unstable();
        ids.dedup();
        Ok(ids)
    }
}

impl ExperimentConfig {
    /// Resolves a map of raw values, filling defaults for absent keys.
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        if let Some(k) = pairs.keys().find(|k| key_spec(k).is_none()) {
            return Err(unknown_key(k));
        }
        let r = Resolver { pairs };
        let dataset = match r.choice("dataset", "spam | mnist")?.as_str() {
            "spam" => DatasetKind::Spam,
            _ => DatasetKind::Mnist,
        };
        let attack = match r.choice("attack", "none | sign_flip | label_flip | gaussian")?.as_str() {
            "none" => AttackSpec::None,
            "sign_flip" => AttackSpec::SignFlip,
            "label_flip" => AttackSpec::LabelFlip,
            _ => AttackSpec::Gaussian {
                scale: r.real("attack_scale")?,
            },
        };
        let n_clients = r.int("n_clients")?;
        let krum_f = r.int("krum_f")?;
        let rule = match r
            .choice("rule", "mean | tnbs | nbs | krum | multi_krum | cwtm | cw_median")?
            .as_str()
        {
            "mean" => AggregationRule::Mean,
            "tnbs" => AggregationRule::Tnbs {
                keep: r.real("tnbs_keep")?,
            },
            "nbs" => AggregationRule::Nbs {
                keep: r.real("nbs_keep")?,
            },
            "krum" => AggregationRule::Krum { f: krum_f },
            "multi_krum" => {
                let m = r.int("multi_krum_m")?;
                AggregationRule::MultiKrum {
                    f: krum_f,
                    m: if m == 0 { n_clients.saturating_sub(krum_f) } else { m },
                }
            }
            "cwtm" => AggregationRule::Cwtm {
                beta: r.real("cwtm_beta")?,
            },
            _ => AggregationRule::CwMedian,
        };
        let clip_c = r.real("clip_c")?;
        let dp = match r.choice("dp", "off | fixed_sigma | epsilon_delta")?.as_str() {
            "off" => DpConfig::Off,
            "fixed_sigma" => DpConfig::FixedSigma {
                sigma2: r.real("sigma2")?,
                clip_c: if r.boolean("clip")? { Some(clip_c) } else { None },
            },
            _ => DpConfig::EpsilonDelta {
                epsilon: r.real("epsilon")?,
                delta: r.real("delta")?,
                clip_c,
            },
        };
        let eval_every = match r.raw("eval_every") {
            "auto" => match dataset {
                DatasetKind::Spam => 1,
                DatasetKind::Mnist => 5,
            },
            _ => r.int("eval_every")?,
        };
        let cfg = Self {
            dataset,
            spam_path: PathBuf::from(r.raw("spam_path")),
            mnist_images: PathBuf::from(r.raw("mnist_images")),
            mnist_labels: PathBuf::from(r.raw("mnist_labels")),
            mnist_subset: r.int("mnist_subset")?,
            train_fraction: r.real("train_fraction")?,
            data_seed: r.u64("data_seed")?,
            n_clients,
            n_spam_clients: r.int("n_spam_clients")?,
            byzantine_ids: r.id_list("byzantine_ids")?,
            attack,
            rule,
            q: r.real("q")?,
            dp,
            eta: r.real("eta")?,
            rounds: r.int("rounds")?,
            seed: r.u64("seed")?,
            eval_every,
            weighted_by_pi: r.boolean("weighted_by_pi")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and applies `overrides` on top.
    pub fn parse(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Io {
                    path: p.to_path_buf(),
                    message: e.to_string(),
                })?;
                parse_pairs(&text)?
            }
            None => BTreeMap::new(),
        };
        for (k, v) in overrides {
            if key_spec(k).is_none() {
                return Err(unknown_key(k));
            }
            pairs.insert(k.clone(), v.clone());
        }
        Self::from_pairs(&pairs)
    }

    /// Every key with its resolved value; feeding this back to
    /// [`ExperimentConfig::from_pairs`] reproduces `self`.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let defaults: BTreeMap<&str, &str> = KEYS.iter().map(|k| (k.name, k.default)).collect();
        let mut out: BTreeMap<String, String> =
            defaults.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        let mut set = |k: &str, v: String| {
            out.insert(k.to_string(), v);
        };
        set(
            "dataset",
            match self.dataset {
                DatasetKind::Spam => "spam",
                DatasetKind::Mnist => "mnist",
            }
            .into(),
        );
        set("spam_path", self.spam_path.display().to_string());
        set("mnist_images", self.mnist_images.display().to_string());
        set("mnist_labels", self.mnist_labels.display().to_string());
        set("mnist_subset", self.mnist_subset.to_string());
        set("train_fraction", self.train_fraction.to_string());
        set("data_seed", self.data_seed.to_string());
        set("n_clients", self.n_clients.to_string());
        set("n_spam_clients", self.n_spam_clients.to_string());
        set(
            "byzantine_ids",
            self.byzantine_ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(","),
        );
        set("attack", self.attack.name().into());
        if let AttackSpec::Gaussian { scale } = self.attack {
            set("attack_scale", scale.to_string());
        }
        set("rule", self.rule.name().into());
        match self.rule {
            AggregationRule::Tnbs { keep } => set("tnbs_keep", keep.to_string()),
            AggregationRule::Nbs { keep } => set("nbs_keep", keep.to_string()),
            AggregationRule::Krum { f } => set("krum_f", f.to_string()),
            AggregationRule::MultiKrum { f, m } => {
                set("krum_f", f.to_string());
                set("multi_krum_m", m.to_string());
            }
            AggregationRule::Cwtm { beta } => set("cwtm_beta", beta.to_string()),
            AggregationRule::Mean | AggregationRule::CwMedian => {}
        }
        set("q", self.q.to_string());
        match self.dp {
            DpConfig::Off => set("dp", "off".into()),
            DpConfig::FixedSigma { sigma2, clip_c } => {
                set("dp", "fixed_sigma".into());
                set("sigma2", sigma2.to_string());
                set("clip", clip_c.is_some().to_string());
                if let Some(c) = clip_c {
                    set("clip_c", c.to_string());
                }
            }
            DpConfig::EpsilonDelta {
                epsilon,
                delta,
                clip_c,
            } => {
                set("dp", "epsilon_delta".into());
                set("epsilon", epsilon.to_string());
                set("delta", delta.to_string());
                set("clip_c", clip_c.to_string());
            }
        }
        set("eta", self.eta.to_string());
        set("rounds", self.rounds.to_string());
        set("seed", self.seed.to_string());
        set("eval_every", self.eval_every.to_string());
        set("weighted_by_pi", self.weighted_by_pi.to_string());
        out
    }

    /// The config as `key = value` text.
    pub fn to_text(&self) -> String {
        self.to_pairs().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.n_clients == 0 {
            return invalid("n_clients must be positive".into());
        }
        if let Some(&id) = self.byzantine_ids.iter().find(|&&id| id >= self.n_clients) {
            return invalid(format!("byzantine id {id} is not below n_clients = {}", self.n_clients));
        }
        if self.byzantine_ids.len() >= self.n_clients {
            return invalid("at least one client must be honest".into());
        }
        if self.q.is_nan() || self.q < 0.0 {
            return invalid(format!("q must be >= 0, got {}", self.q));
        }
        if self.eta.is_nan() || self.eta <= 0.0 {
            return invalid(format!("eta must be > 0, got {}", self.eta));
        }
        if self.eval_every == 0 {
            return invalid("eval_every must be positive".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return invalid(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        self.attack.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.dp.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        match self.rule {
            AggregationRule::Tnbs { keep } | AggregationRule::Nbs { keep } if !(keep > 0.0 && keep <= 1.0) => {
                return invalid(format!("keep fraction must lie in (0, 1], got {keep}"));
            }
            AggregationRule::Krum { f } | AggregationRule::MultiKrum { f, .. } if self.n_clients < f + 3 => {
                return invalid(format!("krum needs n_clients >= f + 3 (f = {f})"));
            }
            AggregationRule::MultiKrum { f, m } if m == 0 || m > self.n_clients - f => {
                return invalid(format!("multi_krum_m must lie in 1..={}", self.n_clients - f));
            }
            AggregationRule::Cwtm { beta } if !(0.0..0.5).contains(&beta) => {
                return invalid(format!("cwtm_beta must lie in [0, 0.5), got {beta}"));
            }
            _ => {}
        }
        Ok(())
    }

    /// Byzantine share `|byzantine_ids| / M`.
    pub fn alpha(&self) -> f64 {
        self.byzantine_ids.len() as f64 / self.n_clients as f64
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_pairs(&parse_pairs("# nothing\n\n").unwrap()).unwrap();
        assert_eq!(cfg.n_clients, 20);
        assert_eq!(cfg.byzantine_ids.len(), 4);
        assert_eq!(cfg.q, 1.0);
        assert_eq!(cfg.eta, 1.0);
        assert_eq!(cfg.rounds, 200);
        assert_eq!(cfg.rule, AggregationRule::Tnbs { keep: 0.6 });
        assert_eq!(
            cfg.dp,
            DpConfig::FixedSigma {
                sigma2: 0.2,
                clip_c: None
            }
        );
        assert_eq!(cfg.attack, AttackSpec::Gaussian { scale: 100.0 });
        assert_eq!(cfg.eval_every, 1);
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn single_override_changes_only_q() {
        let base = ExperimentConfig::default();
        let cfg = ExperimentConfig::parse(None, &[parse_override("q=0.5").unwrap()]).unwrap();
        assert_eq!(cfg.q, 0.5);
        assert_eq!(ExperimentConfig { q: 1.0, ..cfg }, base);
    }

    #[test]
    fn override_beats_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.cfg");
        std::fs::write(&path, "q = 0.25\nrounds = 7\n").unwrap();
        let cfg = ExperimentConfig::parse(Some(&path), &[("q".into(), "2".into())]).unwrap();
        assert_eq!((cfg.q, cfg.rounds), (2.0, 7));
    }

    #[test]
    fn typo_suggests_key() {
        match parse_pairs("sgima2 = 0.3") {
            Err(ConfigError::UnknownKey { suggestion, valid, .. }) => {
                assert_eq!(suggestion.as_deref(), Some("sigma2"));
                assert!(valid.contains(&"sigma2".to_string()));
            }
            other => panic!("expected unknown key, got {other:?}"),
        }
        let msg = parse_override("sgima2=1").unwrap_err().to_string();
        assert!(msg.contains("did you mean \"sigma2\""), "{msg}");
    }

    #[test]
    fn type_errors_name_key() {
        let err = ExperimentConfig::parse(None, &[("rounds".into(), "many".into())]).unwrap_err();
        assert_eq!(
            err,
            ConfigError::Type {
                key: "rounds".into(),
                expected: "a nonnegative integer",
                value: "many".into()
            }
        );
        assert!(matches!(parse_pairs("rounds"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(parse_pairs("q=1\nq=2"), Err(ConfigError::Duplicate { .. })));
    }

    #[test]
    fn invalid_combinations() {
        let bad = |k: &str, v: &str| ExperimentConfig::parse(None, &[(k.into(), v.into())]).is_err();
        assert!(bad("byzantine_ids", "0,25"));
        assert!(bad("q", "-1"));
        assert!(bad("tnbs_keep", "0"));
        assert!(bad("eta", "0"));
        assert!(bad("attack_scale", "0"));
        assert!(!bad("byzantine_ids", ""));
    }

    #[test]
    fn pairs_round_trip() {
        let overrides: Vec<(String, String)> = [
            ("rule", "multi_krum"),
            ("dp", "epsilon_delta"),
            ("attack", "label_flip"),
            ("dataset", "mnist"),
            ("seed", "12"),
        ]
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        let cfg = ExperimentConfig::parse(None, &overrides).unwrap();
        assert_eq!(cfg.eval_every, 5);
        assert_eq!(cfg.rule, AggregationRule::MultiKrum { f: 4, m: 16 });
        assert_eq!(ExperimentConfig::from_pairs(&cfg.to_pairs()).unwrap(), cfg);
        assert_eq!(ExperimentConfig::from_pairs(&parse_pairs(&cfg.to_text()).unwrap()).unwrap(), cfg);
    }
}
