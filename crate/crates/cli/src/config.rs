//! Run configuration files.
//!
//! Grammar, one item per line:
//!
//! ```text
//! # comment (also allowed after a value)
//! key = value          top-level keys: seed, out
//! [section]            data | split | train | eval | sweep | gradcheck
//! key = value          applies to the most recent section
//! ```
//!
//! Values are numbers, `true`/`false`, bare words, or comma-separated
//! lists. Blank lines are ignored. Unknown keys and repeated keys are
//! errors. Relative paths are resolved against the config file's directory.
//! Command-line overrides use the dotted form `section.key=value`.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crossview_core::dataset::{GenSpec, SplitMode};
use crossview_core::gradcheck::GradCheckOptions;
use crossview_core::{Error, Protocol, Result, TrainConfig};

const SECTIONS: [&str; 6] = ["data", "split", "train", "eval", "sweep", "gradcheck"];

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
    source: PathBuf,
}

/// Parsed `key = value` pairs keyed by `section.key` (or bare `key` at the
/// top level).
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, Entry>,
    base_dir: PathBuf,
}

impl RawConfig {
    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: source.to_path_buf(),
            line,
            message,
        };
        let mut entries = BTreeMap::new();
        let mut section: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| err(line, format!("unterminated section header {content:?}")))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(err(line, format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(line, format!("expected `key = value`, got {content:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(err(line, format!("bad key {key:?}")));
            }
            let full = match &section {
                Some(s) => format!("{s}.{key}"),
                None => key.to_string(),
            };
            let entry = Entry {
                value: value.to_string(),
                line,
                source: source.to_path_buf(),
            };
            if entries.insert(full.clone(), entry).is_some() {
                return Err(err(line, format!("{full} set twice")));
            }
        }
        Ok(RawConfig {
            entries,
            base_dir: source.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Sets or replaces `key` (dotted form) from the command line.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.into(),
                line: 0,
                source: PathBuf::from("<command line>"),
            },
        );
    }

    /// Applies a `section.key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::Validation(format!("override {spec:?} is not key=value")))?;
        self.set(key.trim(), value.trim());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Generate(GenSpec),
    /// Training features, plus an optional separate test file. Without a
    /// test file the training file is split by identity.
    Files { train: PathBuf, test: Option<PathBuf> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub protocols: Vec<Protocol>,
    pub trials: usize,
    pub probe_view: usize,
    pub gallery_view: usize,
    pub normalize: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            protocols: Protocol::ALL.to_vec(),
            trials: 10,
            probe_view: 0,
            gallery_view: 1,
            normalize: false,
        }
    }
}

/// Everything a command needs. Sub-seeds for data, split, training,
/// evaluation and gradient checks are derived from `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataSource,
    pub split: SplitMode,
    pub train: TrainConfig,
    pub eval: EvalSettings,
    pub sweep_lambdas: Vec<f64>,
    pub gradcheck: GradCheckOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("out"),
            data: DataSource::Generate(GenSpec::default()),
            split: SplitMode::HalfIdentity,
            train: TrainConfig::default(),
            eval: EvalSettings::default(),
            sweep_lambdas: vec![0.0, 1e-3, 1e-1, 1e1],
            gradcheck: GradCheckOptions::default(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, e: &Entry) -> Result<T>
where
    T::Err: Display,
{
    e.value.parse().map_err(|err: T::Err| Error::Parse {
        path: e.source.clone(),
        line: e.line,
        message: format!("{key}: cannot parse {:?}: {err}", e.value),
    })
}

fn parse_list<T: FromStr>(key: &str, e: &Entry) -> Result<Vec<T>>
where
    T::Err: Display,
{
    e.value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse().map_err(|err: T::Err| Error::Parse {
                path: e.source.clone(),
                line: e.line,
                message: format!("{key}: cannot parse {s:?}: {err}"),
            })
        })
        .collect()
}

impl RunConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut gen = GenSpec::default();
        let mut train_path: Option<PathBuf> = None;
        let mut test_path: Option<PathBuf> = None;
        let mut split_mode: Option<String> = None;
        let mut train_identities: Option<usize> = None;
        let resolve = |e: &Entry| {
            let p = PathBuf::from(&e.value);
            if p.is_absolute() || e.line == 0 {
                p
            } else {
                raw.base_dir.join(p)
            }
        };
        for (key, e) in &raw.entries {
            let k = key.as_str();
            let t = &mut cfg.train;
            match k {
                "seed" => cfg.seed = parse_value(k, e)?,
                "out" => cfg.out = resolve(e),

                "data.identities" => gen.identities = parse_value(k, e)?,
                "data.views" => gen.views = parse_value(k, e)?,
                "data.samples_per_identity_per_view" => gen.samples_per_identity_per_view = parse_value(k, e)?,
                "data.latent_dim" => gen.latent_dim = parse_value(k, e)?,
                "data.dim" => gen.dim = parse_value(k, e)?,
                "data.view_transform_scale" => gen.view_transform_scale = parse_value(k, e)?,
                "data.noise_sigma" => gen.noise_sigma = parse_value(k, e)?,
                "data.path" => train_path = Some(resolve(e)),
                "data.test_path" => test_path = Some(resolve(e)),

                "split.mode" => split_mode = Some(e.value.clone()),
                "split.train_identities" => train_identities = Some(parse_value(k, e)?),

                "train.lambda1" => t.lambda1 = parse_value(k, e)?,
                "train.lambda2" => t.lambda2 = parse_value(k, e)?,
                "train.learning_rate" => t.learning_rate = parse_value(k, e)?,
                "train.center_rate" => t.center_rate = parse_value(k, e)?,
                "train.momentum" => t.momentum = parse_value(k, e)?,
                "train.weight_decay" => t.weight_decay = parse_value(k, e)?,
                "train.batch_identities" => t.batch_identities = parse_value(k, e)?,
                "train.samples_per_view" => t.samples_per_view = parse_value(k, e)?,
                "train.eps1" => t.eps1 = parse_value(k, e)?,
                "train.eps2" => t.eps2 = parse_value(k, e)?,
                "train.eps" => t.eps = parse_value(k, e)?,
                "train.max_epochs_per_phase" => t.max_epochs_per_phase = parse_value(k, e)?,
                "train.max_outer_iters" => t.max_outer_iters = parse_value(k, e)?,
                "train.warmup_epochs" => t.warmup_epochs = parse_value(k, e)?,
                "train.multiview_passes" => t.multiview_passes = parse_value(k, e)?,
                "train.freeze_centers" => t.freeze_centers = parse_value(k, e)?,
                "train.hidden" => t.hidden = parse_list(k, e)?,
                "train.embed_dim" => t.embed_dim = parse_value(k, e)?,

                "eval.protocols" => cfg.eval.protocols = parse_list(k, e)?,
                "eval.trials" => cfg.eval.trials = parse_value(k, e)?,
                "eval.probe_view" => cfg.eval.probe_view = parse_value(k, e)?,
                "eval.gallery_view" => cfg.eval.gallery_view = parse_value(k, e)?,
                "eval.normalize" => cfg.eval.normalize = parse_value(k, e)?,

                "sweep.lambdas" => cfg.sweep_lambdas = parse_list(k, e)?,

                "gradcheck.instances" => cfg.gradcheck.instances = parse_value(k, e)?,
                "gradcheck.step" => cfg.gradcheck.step = parse_value(k, e)?,
                "gradcheck.tolerance" => cfg.gradcheck.tolerance = parse_value(k, e)?,
                "gradcheck.corrupt_cv_ec" => cfg.gradcheck.corrupt_cv_ec = Some(parse_value(k, e)?),

                _ => {
                    return Err(Error::Parse {
                        path: e.source.clone(),
                        line: e.line,
                        message: format!("unknown key {k}"),
                    })
                }
            }
        }
        cfg.data = match train_path {
            Some(train) => DataSource::Files { train, test: test_path },
            None if test_path.is_some() => {
                return Err(Error::Validation("data.test_path needs data.path".into()))
            }
            None => DataSource::Generate(gen),
        };
        cfg.split = match (split_mode.as_deref(), train_identities) {
            (None | Some("half-identity"), None) => SplitMode::HalfIdentity,
            (None | Some("fixed-counts"), Some(n)) => SplitMode::FixedCounts { train_identities: n },
            (Some("fixed-counts"), None) => {
                return Err(Error::Validation("split.mode = fixed-counts needs split.train_identities".into()))
            }
            (Some("half-identity"), Some(_)) => {
                return Err(Error::Validation("split.train_identities only applies to fixed-counts".into()))
            }
            (Some(other), _) => return Err(Error::Validation(format!("unknown split mode {other:?}"))),
        };
        if cfg.eval.protocols.is_empty() {
            return Err(Error::Validation("eval.protocols is empty".into()));
        }
        if cfg.sweep_lambdas.is_empty() {
            return Err(Error::Validation("sweep.lambdas is empty".into()));
        }
        cfg.train.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::from_raw(&RawConfig::parse(text, Path::new("/cfg/run.conf"))?)
    }

    #[test]
    fn sections_and_comments() {
        let cfg = parse(
            "seed = 9\nout = results # trailing\n\n[data]\nidentities = 12\nviews = 3\n[train]\nhidden = 8, 4\nlambda1 = 0.5\nfreeze_centers = true\n[eval]\nprotocols = multi-shot,single-query\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.out, PathBuf::from("/cfg/results"));
        match &cfg.data {
            DataSource::Generate(g) => assert_eq!((g.identities, g.views), (12, 3)),
            other => panic!("{other:?}"),
        }
        assert_eq!(cfg.train.hidden, vec![8, 4]);
        assert_eq!(cfg.train.lambda1, 0.5);
        assert!(cfg.train.freeze_centers);
        assert_eq!(cfg.eval.protocols, vec![Protocol::MultiShot, Protocol::SingleQuery]);
    }

    #[test]
    fn errors_name_the_line() {
        for (text, line) in [
            ("[train]\nlambda1 = x\n", 2),
            ("[train]\n\nnope = 1\n", 3),
            ("[bogus]\n", 1),
            ("seed 4\n", 1),
            ("seed = 1\nseed = 2\n", 2),
        ] {
            match parse(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn overrides_replace_file_values() {
        let mut raw = RawConfig::parse("[train]\nlambda1 = 0.5\n", Path::new("x.conf")).unwrap();
        raw.apply_override("train.lambda1=0").unwrap();
        raw.apply_override("out=/tmp/o").unwrap();
        let cfg = RunConfig::from_raw(&raw).unwrap();
        assert_eq!(cfg.train.lambda1, 0.0);
        assert_eq!(cfg.out, PathBuf::from("/tmp/o"));
        assert!(raw.apply_override("novalue").is_err());
    }

    #[test]
    fn split_modes() {
        assert_eq!(parse("").unwrap().split, SplitMode::HalfIdentity);
        assert_eq!(
            parse("[split]\nmode = fixed-counts\ntrain_identities = 7\n").unwrap().split,
            SplitMode::FixedCounts { train_identities: 7 }
        );
        assert!(parse("[split]\nmode = fixed-counts\n").is_err());
        assert!(parse("[split]\nmode = thirds\n").is_err());
    }

    #[test]
    fn file_source_resolves_relative_paths() {
        let cfg = parse("[data]\npath = feats/train.csv\n").unwrap();
        assert_eq!(
            cfg.data,
            DataSource::Files {
                train: PathBuf::from("/cfg/feats/train.csv"),
                test: None
            }
        );
        assert!(parse("[data]\ntest_path = t.csv\n").is_err());
    }

    #[test]
    fn invalid_training_values_rejected() {
        assert!(matches!(parse("[train]\nlearning_rate = 0\n"), Err(Error::Validation(_))));
    }
}
