//! Flat `section.key = value` experiment configuration.
//!
//! ```text
//! # AJ on MNIST, k = 2
//! game.k = 2
//! game.epochs = 20
//! data.source = idx
//! data.train_images = ../data/mnist/train-images-idx3-ubyte
//! data.eval_images = ../data/mnist/t10k-images-idx3-ubyte
//! run.output_dir = runs/aj-k2
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use aj_core::data::SynthKind;
use aj_core::game::{GameConfig, RegularizerKind};
use aj_core::oracle::OracleSpec;

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Idx {
        train_images: PathBuf,
        train_labels: Option<PathBuf>,
        eval_images: PathBuf,
        eval_labels: Option<PathBuf>,
        /// Keep only the first `train_limit` training images.
        train_limit: Option<usize>,
    },
    Synth {
        kind: String,
        n: usize,
        train_count: usize,
        eval_count: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleBlock {
    pub spec: OracleSpec,
    pub samples: usize,
    pub matching_samples: usize,
    pub seed: u64,
}

impl Default for OracleBlock {
    fn default() -> Self {
        OracleBlock {
            spec: OracleSpec::new(1.0, 1.0, 1.0, 0.0, 1),
            samples: 1_000_000,
            matching_samples: 1_000_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub game: GameConfig,
    pub data: Option<DataSource>,
    pub output_dir: PathBuf,
    pub eval_every: usize,
    pub sample_count: usize,
    pub oracle: Option<OracleBlock>,
}

const KEYS: &[&str] = &[
    "game.k",
    "game.n",
    "game.p_t",
    "game.p_a",
    "game.sigma_n_sq",
    "game.eta",
    "game.regularizer",
    "game.lambda",
    "game.mmd_scale",
    "game.batch_size",
    "game.epochs",
    "game.lr",
    "game.jscc_steps_per_data_step",
    "game.seed",
    "game.jscc_hidden",
    "game.data_hidden",
    "data.source",
    "data.train_images",
    "data.train_labels",
    "data.eval_images",
    "data.eval_labels",
    "data.train_limit",
    "data.synth_kind",
    "data.n",
    "data.train_count",
    "data.eval_count",
    "run.output_dir",
    "run.eval_every",
    "run.sample_count",
    "oracle.sigma_x_sq",
    "oracle.p_t",
    "oracle.p_a",
    "oracle.sigma_n_sq",
    "oracle.k",
    "oracle.beta",
    "oracle.kappa",
    "oracle.samples",
    "oracle.matching_samples",
    "oracle.seed",
];

struct Entries {
    file: String,
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn parse(file: &str, text: &str) -> Result<Self, CliError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!(
                    "{file}:{line_no}: expected `section.key = value`, found `{line}`"
                )));
            };
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(CliError::Config(format!("{file}:{line_no}: unknown key `{key}`")));
            }
            if value.is_empty() {
                return Err(CliError::Config(format!("{file}:{line_no}: `{key}` has no value")));
            }
            if map.insert(key.to_string(), (line_no, value.to_string())).is_some() {
                return Err(CliError::Config(format!("{file}:{line_no}: duplicate key `{key}`")));
            }
        }
        Ok(Entries {
            file: file.to_string(),
            map,
        })
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.map.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| {
                CliError::Config(format!("{}:{line}: cannot parse `{v}` for `{key}`", self.file))
            }),
        }
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|(_, v)| v.as_str())
    }

    fn line(&self, key: &str) -> usize {
        self.map.get(key).map(|(l, _)| *l).unwrap_or(0)
    }

    fn has_section(&self, section: &str) -> bool {
        self.map.keys().any(|k| k.starts_with(section))
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&path.display().to_string(), &text, base)
    }

    pub fn parse(file: &str, text: &str, base: &Path) -> Result<Self, CliError> {
        let e = Entries::parse(file, text)?;
        let cfg_err = |key: &str, msg: String| CliError::Config(format!("{file}:{}: {msg}", e.line(key)));

        let data = if e.has_section("data.") {
            let source = e.raw("data.source").unwrap_or("idx");
            Some(match source {
                "idx" => {
                    let path = |key: &str| e.raw(key).map(|p| resolve(base, p));
                    DataSource::Idx {
                        train_images: path("data.train_images")
                            .ok_or_else(|| CliError::Config(format!("{file}: missing `data.train_images`")))?,
                        train_labels: path("data.train_labels"),
                        eval_images: path("data.eval_images")
                            .ok_or_else(|| CliError::Config(format!("{file}: missing `data.eval_images`")))?,
                        eval_labels: path("data.eval_labels"),
                        train_limit: e.get("data.train_limit")?,
                    }
                }
                "synth" => {
                    let kind = e.raw("data.synth_kind").unwrap_or("gaussian").to_string();
                    SynthKind::parse(&kind).map_err(|err| cfg_err("data.synth_kind", err.to_string()))?;
                    DataSource::Synth {
                        kind,
                        n: e.or("data.n", 2)?,
                        train_count: e.or("data.train_count", 2048)?,
                        eval_count: e.or("data.eval_count", 1024)?,
                    }
                }
                other => {
                    return Err(cfg_err(
                        "data.source",
                        format!("unknown data source `{other}` (expected idx or synth)"),
                    ))
                }
            })
        } else {
            None
        };

        let defaults = GameConfig::new(2, 784);
        let regularizer = match e.raw("game.regularizer") {
            Some(r) => RegularizerKind::parse(r).map_err(|err| cfg_err("game.regularizer", err.to_string()))?,
            None => defaults.regularizer,
        };
        let n_default = match &data {
            Some(DataSource::Synth { n, .. }) => *n,
            _ => defaults.n,
        };
        let game = GameConfig {
            k: e.or("game.k", defaults.k)?,
            n: e.or("game.n", n_default)?,
            p_t: e.or("game.p_t", defaults.p_t)?,
            p_a: e.or("game.p_a", defaults.p_a)?,
            sigma_n_sq: e.or("game.sigma_n_sq", defaults.sigma_n_sq)?,
            eta: e.or("game.eta", defaults.eta)?,
            regularizer,
            lambda: e.get("game.lambda")?,
            mmd_scale: e.get("game.mmd_scale")?,
            batch_size: e.or("game.batch_size", defaults.batch_size)?,
            epochs: e.or("game.epochs", defaults.epochs)?,
            lr: e.or("game.lr", defaults.lr)?,
            jscc_steps_per_data_step: e.or("game.jscc_steps_per_data_step", defaults.jscc_steps_per_data_step)?,
            seed: e.or("game.seed", defaults.seed)?,
            jscc_hidden: e.or("game.jscc_hidden", defaults.jscc_hidden)?,
            data_hidden: e.or("game.data_hidden", defaults.data_hidden)?,
        };
        game.validate()
            .map_err(|err| CliError::Config(format!("{file}: {err}")))?;

        let eval_every: usize = e.or("run.eval_every", 1)?;
        if eval_every < 1 {
            return Err(cfg_err("run.eval_every", "run.eval_every must be at least 1".into()));
        }
        let oracle = if e.has_section("oracle.") {
            let d = OracleBlock::default();
            let spec = OracleSpec {
                sigma_x_sq: e.or("oracle.sigma_x_sq", d.spec.sigma_x_sq)?,
                p_t: e.or("oracle.p_t", d.spec.p_t)?,
                p_a: e.or("oracle.p_a", d.spec.p_a)?,
                sigma_n_sq: e.or("oracle.sigma_n_sq", d.spec.sigma_n_sq)?,
                k: e.or("oracle.k", d.spec.k)?,
                beta: e.get("oracle.beta")?,
                kappa: e.get("oracle.kappa")?,
            };
            Some(OracleBlock {
                spec,
                samples: e.or("oracle.samples", d.samples)?,
                matching_samples: e.or("oracle.matching_samples", d.matching_samples)?,
                seed: e.or("oracle.seed", d.seed)?,
            })
        } else {
            None
        };

        Ok(ExperimentConfig {
            game,
            data,
            output_dir: resolve(base, e.raw("run.output_dir").unwrap_or("runs/default")),
            eval_every,
            sample_count: e.or("run.sample_count", 16)?,
            oracle,
        })
    }

    /// Every setting with defaults materialized; parses back to `self`.
    pub fn resolved_text(&self) -> String {
        let g = &self.game;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("game.k", g.k.to_string());
        kv("game.n", g.n.to_string());
        kv("game.p_t", g.p_t.to_string());
        kv("game.p_a", g.p_a.to_string());
        kv("game.sigma_n_sq", g.sigma_n_sq.to_string());
        kv("game.eta", g.eta.to_string());
        kv("game.regularizer", g.regularizer.name().to_string());
        kv("game.lambda", g.reg_weight().to_string());
        kv("game.mmd_scale", g.imq_scale().to_string());
        kv("game.batch_size", g.batch_size.to_string());
        kv("game.epochs", g.epochs.to_string());
        kv("game.lr", g.lr.to_string());
        kv("game.jscc_steps_per_data_step", g.jscc_steps_per_data_step.to_string());
        kv("game.seed", g.seed.to_string());
        kv("game.jscc_hidden", g.jscc_hidden.to_string());
        kv("game.data_hidden", g.data_hidden.to_string());
        match &self.data {
            Some(DataSource::Idx {
                train_images,
                train_labels,
                eval_images,
                eval_labels,
                train_limit,
            }) => {
                kv("data.source", "idx".into());
                kv("data.train_images", train_images.display().to_string());
                if let Some(p) = train_labels {
                    kv("data.train_labels", p.display().to_string());
                }
                kv("data.eval_images", eval_images.display().to_string());
                if let Some(p) = eval_labels {
                    kv("data.eval_labels", p.display().to_string());
                }
                if let Some(l) = train_limit {
                    kv("data.train_limit", l.to_string());
                }
            }
            Some(DataSource::Synth {
                kind,
                n,
                train_count,
                eval_count,
            }) => {
                kv("data.source", "synth".into());
                kv("data.synth_kind", kind.clone());
                kv("data.n", n.to_string());
                kv("data.train_count", train_count.to_string());
                kv("data.eval_count", eval_count.to_string());
            }
            None => {}
        }
        kv("run.output_dir", self.output_dir.display().to_string());
        kv("run.eval_every", self.eval_every.to_string());
        kv("run.sample_count", self.sample_count.to_string());
        if let Some(o) = &self.oracle {
            kv("oracle.sigma_x_sq", o.spec.sigma_x_sq.to_string());
            kv("oracle.p_t", o.spec.p_t.to_string());
            kv("oracle.p_a", o.spec.p_a.to_string());
            kv("oracle.sigma_n_sq", o.spec.sigma_n_sq.to_string());
            kv("oracle.k", o.spec.k.to_string());
            kv("oracle.beta", o.spec.beta().to_string());
            kv("oracle.kappa", o.spec.kappa().to_string());
            kv("oracle.samples", o.samples.to_string());
            kv("oracle.matching_samples", o.matching_samples.to_string());
            kv("oracle.seed", o.seed.to_string());
        }
        s
    }
}
