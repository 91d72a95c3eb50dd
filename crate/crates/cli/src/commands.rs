//! The five commands. Each reads a [`RunConfig`], writes its artifacts into
//! `cfg.out`, and returns what it wrote for the caller to summarize.

use std::path::{Path, PathBuf};

use crossview_core::dataset::{generate, load_csv, split, Dataset, GenSpec, SplitSpec};
use crossview_core::eval::{cmc_csv, evaluate, reports_csv, reports_table};
use crossview_core::gradcheck::{self, GradCheckReport};
use crossview_core::math::derive_seed;
use crossview_core::trainer::{init_pair, train_icv_eccl, train_multiview, TrainingData};
use crossview_core::{Error, EvalOptions, EvalReport, NetSet, Result, TrainConfig, TrainLog, ViewLabel, ViewNetwork};

use crate::config::{DataSource, RunConfig};

pub const DATASET_FILE: &str = "dataset.csv";
pub const LOG_FILE: &str = "train_log.csv";
pub const PHASES_FILE: &str = "phases.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const CMC_FILE: &str = "cmc.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const GRADCHECK_FILE: &str = "gradcheck.csv";
pub const PUBLIC_CHECKPOINT: &str = "public.ckpt";

pub fn view_checkpoint(view: usize) -> String {
    format!("view{view}.ckpt")
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn gen_spec(cfg: &RunConfig, spec: &GenSpec) -> GenSpec {
    GenSpec {
        seed: derive_seed(cfg.seed, "data"),
        ..spec.clone()
    }
}

fn need_two_views(views: usize) -> Result<()> {
    if views < 2 {
        return Err(Error::Validation(format!(
            "{views} view(s): cross-view training needs at least 2"
        )));
    }
    Ok(())
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<(Dataset, PathBuf)> {
    let DataSource::Generate(spec) = &cfg.data else {
        return Err(Error::Validation("generate needs a [data] spec, not data.path".into()));
    };
    need_two_views(spec.views)?;
    let ds = generate(&gen_spec(cfg, spec))?;
    let path = write(&cfg.out, DATASET_FILE, &ds.to_csv_string())?;
    Ok((ds, path))
}

pub fn dataset_summary(ds: &Dataset) -> String {
    let per_view: Vec<String> = (0..ds.num_views()).map(|v| ds.count_in_view(v).to_string()).collect();
    format!(
        "{} samples, {} identities, {} views, {} features; samples per view: {}",
        ds.len(),
        ds.num_identities(),
        ds.num_views(),
        ds.dim(),
        per_view.join(" ")
    )
}

/// Training and test sets as the config describes them.
pub fn load_data(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let split_spec = SplitSpec {
        mode: cfg.split,
        seed: derive_seed(cfg.seed, "split"),
    };
    let (train, test) = match &cfg.data {
        DataSource::Generate(spec) => {
            need_two_views(spec.views)?;
            split(&generate(&gen_spec(cfg, spec))?, &split_spec)?
        }
        DataSource::Files { train, test: None } => split(&load_csv(train)?, &split_spec)?,
        DataSource::Files { train, test: Some(test) } => (load_csv(train)?, load_csv(test)?),
    };
    need_two_views(train.num_views())?;
    if test.num_views() != train.num_views() || test.dim() != train.dim() {
        return Err(Error::Sizing("training and test sets differ in views or feature width".into()));
    }
    Ok((train, test))
}

fn train_config(cfg: &RunConfig) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(cfg.seed, "train"),
        ..cfg.train.clone()
    }
}

/// Trains the networks for `train` and returns them in checkpoint order:
/// view networks first, then the public network if there is one.
pub fn fit(train: &Dataset, test: &Dataset, tc: &TrainConfig) -> Result<(Vec<ViewNetwork>, TrainLog)> {
    if train.num_views() == 2 {
        let data = TrainingData::new(train, Some(test))?;
        let nets = init_pair(&tc.net_shape(train.dim(), train.num_identities()), tc.seed)?;
        let out = train_icv_eccl(nets, &data, tc)?;
        Ok((out.nets.to_vec(), out.log))
    } else {
        let out = train_multiview(train, Some(test), tc)?;
        let mut nets = out.view_nets;
        nets.push(out.public);
        Ok((nets, out.log))
    }
}

fn checkpoint_name(net: &ViewNetwork) -> String {
    match net.label() {
        ViewLabel::View(v) => view_checkpoint(v),
        ViewLabel::Public => PUBLIC_CHECKPOINT.to_string(),
    }
}

pub fn eval_reports(cfg: &RunConfig, nets: &NetSet, test: &Dataset) -> Result<Vec<EvalReport>> {
    cfg.eval
        .protocols
        .iter()
        .map(|&protocol| {
            let opts = EvalOptions {
                protocol,
                trials: cfg.eval.trials,
                seed: derive_seed(cfg.seed, "eval"),
                probe_view: cfg.eval.probe_view,
                gallery_view: cfg.eval.gallery_view,
                normalize: cfg.eval.normalize,
            };
            evaluate(nets, test, &opts)
        })
        .collect()
}

fn write_reports(cfg: &RunConfig, reports: &[EvalReport]) -> Result<()> {
    write(&cfg.out, REPORT_FILE, &reports_csv(reports))?;
    write(&cfg.out, CMC_FILE, &cmc_csv(reports))?;
    Ok(())
}

#[derive(Debug)]
pub struct TrainOutput {
    pub checkpoints: Vec<PathBuf>,
    pub log: TrainLog,
    pub reports: Vec<EvalReport>,
}

/// Trains, writes checkpoints and logs, then evaluates on the test split.
/// On divergence the last finite networks are saved as `*.last_good.ckpt`
/// before the error is returned.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutput> {
    let (train, test) = load_data(cfg)?;
    let (nets, log) = match fit(&train, &test, &train_config(cfg)) {
        Ok(r) => r,
        Err(Error::Diverged { phase, epoch, last_good }) => {
            for net in last_good.iter() {
                let name = checkpoint_name(net).replace(".ckpt", ".last_good.ckpt");
                write(&cfg.out, &name, &net.to_checkpoint_string())?;
            }
            return Err(Error::Diverged { phase, epoch, last_good });
        }
        Err(e) => return Err(e),
    };
    let mut checkpoints = Vec::with_capacity(nets.len());
    for net in &nets {
        checkpoints.push(write(&cfg.out, &checkpoint_name(net), &net.to_checkpoint_string())?);
    }
    write(&cfg.out, LOG_FILE, &log.to_csv())?;
    write(&cfg.out, PHASES_FILE, &log.phases_csv())?;
    let reports = eval_reports(cfg, &NetSet::new(nets)?, &test)?;
    write_reports(cfg, &reports)?;
    Ok(TrainOutput {
        checkpoints,
        log,
        reports,
    })
}

/// Loads the checkpoints a `train` run left in `dir` for a `views`-view
/// test set. A view without its own file falls back to `public.ckpt`.
pub fn load_checkpoints(dir: &Path, views: usize) -> Result<NetSet> {
    let public_path = dir.join(PUBLIC_CHECKPOINT);
    let mut nets = Vec::new();
    if public_path.exists() {
        nets.push(ViewNetwork::load(&public_path)?);
    }
    for v in 0..views {
        let path = dir.join(view_checkpoint(v));
        if path.exists() || nets.is_empty() {
            let net = ViewNetwork::load(&path)?;
            if net.label() != ViewLabel::View(v) {
                return Err(Error::Validation(format!(
                    "{} holds the network for {}",
                    path.display(),
                    net.label()
                )));
            }
            nets.push(net);
        }
    }
    NetSet::new(nets)
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<Vec<EvalReport>> {
    let (_, test) = load_data(cfg)?;
    let nets = load_checkpoints(&cfg.out, test.num_views())?;
    let reports = eval_reports(cfg, &nets, &test)?;
    write_reports(cfg, &reports)?;
    Ok(reports)
}

pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<GradCheckReport> {
    let opts = gradcheck::GradCheckOptions {
        seed: derive_seed(cfg.seed, "gradcheck"),
        ..cfg.gradcheck.clone()
    };
    let report = gradcheck::run(&opts)?;
    write(&cfg.out, GRADCHECK_FILE, &report.to_csv())?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub rank1: f64,
    pub map: f64,
    pub crossview_distance: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("lambda,rank1,map,crossview_dist\n");
    for r in rows {
        out.push_str(&format!("{:?},{:?},{:?},{:?}\n", r.lambda, r.rank1, r.map, r.crossview_distance));
    }
    out
}

/// Trains once per λ with `λ1 = λ2 = λ` and the same seed, and evaluates
/// each run with the first configured protocol.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    let (train, test) = load_data(cfg)?;
    let mut rows = Vec::with_capacity(cfg.sweep_lambdas.len());
    for &lambda in &cfg.sweep_lambdas {
        let tc = TrainConfig {
            lambda1: lambda,
            lambda2: lambda,
            ..train_config(cfg)
        };
        tc.validate()?;
        let (nets, _) = fit(&train, &test, &tc)?;
        let nets = NetSet::new(nets)?;
        let report = eval_reports(cfg, &nets, &test)?.remove(0);
        rows.push(SweepRow {
            lambda,
            rank1: report.rank(1),
            map: report.map,
            crossview_distance: report.crossview_distance,
        });
    }
    write(&cfg.out, SWEEP_FILE, &sweep_csv(&rows))?;
    Ok(rows)
}

pub fn print_reports(reports: &[EvalReport]) {
    print!("{}", reports_table(reports));
}
