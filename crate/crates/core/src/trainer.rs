//! Optimization: heavy-ball SGD, center updates, the two constrained
//! training phases, the iterative alternation between them, and the
//! one-to-others reduction for more than two views.
//!
//! A training pair is two networks, one per view, trained on a dataset with
//! exactly two views. Batches hold `batch_identities` identities that appear
//! in both views, with up to `samples_per_view` samples of each per view.

use std::fmt::Write as _;

use crate::dataset::{Dataset, IdentityViewIndex};
use crate::error::{Error, Result};
use crate::losses::{
    center_loss, cross_view_intra_class_distance, cv_cl, cv_ec, init_centers, joint_loss_l1,
    joint_loss_l2, softmax_loss, CenterBank, ClassGroup, IdentityGroup, LossReport, Phase,
};
use crate::math::{derive_seed, Matrix, SeededRng};
use crate::network::{ForwardTape, NetShape, ParamGrads, ViewLabel, ViewNetwork};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Weight of the cross-view Euclidean constraint.
    pub lambda1: f64,
    /// Weight of the cross-view center loss.
    pub lambda2: f64,
    pub learning_rate: f64,
    /// Step size of the center updates.
    pub center_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_identities: usize,
    pub samples_per_view: usize,
    /// Stop the Euclidean phase once its epoch-mean joint loss is below this.
    pub eps1: f64,
    /// Stop the center phase once its epoch-mean joint loss is below this.
    pub eps2: f64,
    /// Stop alternating once the summed joint losses are below this.
    pub eps: f64,
    pub max_epochs_per_phase: usize,
    pub max_outer_iters: usize,
    pub warmup_epochs: usize,
    /// Passes over all views in the multi-view procedure.
    pub multiview_passes: usize,
    /// Keep centers fixed at their initial means.
    pub freeze_centers: bool,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda1: 0.1,
            lambda2: 0.1,
            learning_rate: 1e-4,
            center_rate: 1e-3,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_identities: 8,
            samples_per_view: 2,
            eps1: 1e-6,
            eps2: 1e-6,
            eps: 1e-6,
            max_epochs_per_phase: 30,
            max_outer_iters: 2,
            warmup_epochs: 5,
            multiview_passes: 1,
            freeze_centers: false,
            hidden: vec![64],
            embed_dim: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("center_rate", self.center_rate),
            ("eps1", self.eps1),
            ("eps2", self.eps2),
            ("eps", self.eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("weight_decay", self.weight_decay),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::validation(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::validation("momentum must be in [0, 1)"));
        }
        let caps = [
            ("batch_identities", self.batch_identities),
            ("samples_per_view", self.samples_per_view),
            ("max_epochs_per_phase", self.max_epochs_per_phase),
            ("max_outer_iters", self.max_outer_iters),
            ("multiview_passes", self.multiview_passes),
            ("embed_dim", self.embed_dim),
        ];
        for (name, v) in caps {
            if v == 0 {
                return Err(Error::validation(format!("{name} must be at least 1")));
            }
        }
        if self.hidden.contains(&0) {
            return Err(Error::validation("hidden widths must be at least 1"));
        }
        Ok(())
    }

    pub fn net_shape(&self, input_dim: usize, classes: usize) -> NetShape {
        NetShape {
            input_dim,
            hidden: self.hidden.clone(),
            embed_dim: self.embed_dim,
            classes,
        }
    }
}

/// Momentum buffers, shaped like the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    velocity: ParamGrads,
}

impl OptimizerState {
    pub fn new(net: &ViewNetwork) -> Self {
        OptimizerState {
            velocity: ParamGrads::zeros_like(net),
        }
    }

    pub fn velocity(&self) -> &ParamGrads {
        &self.velocity
    }
}

/// One heavy-ball step: `v := momentum·v − μ·(g + weight_decay·θ)`, then
/// `θ := θ + v`.
pub fn sgd_step(
    net: &mut ViewNetwork,
    grads: &ParamGrads,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::numeric(format!(
            "non-finite gradient for network {}",
            net.label()
        )));
    }
    let g = grads.slices();
    let mut v = state.velocity.slices_mut();
    let mut theta = net.param_slices_mut();
    if g.len() != theta.len() || v.len() != theta.len() {
        return Err(Error::sizing("gradient does not match network"));
    }
    for ((t, g), v) in theta.iter_mut().zip(&g).zip(v.iter_mut()) {
        if t.len() != g.len() || t.len() != v.len() {
            return Err(Error::sizing("gradient does not match network"));
        }
        for ((t, g), v) in t.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
            *v = cfg.momentum * *v - cfg.learning_rate * (g + cfg.weight_decay * *t);
            *t += *v;
        }
    }
    Ok(())
}

/// `C := C − α·∂L/∂C` for every center in the bank.
pub fn center_step(bank: &mut CenterBank, grads: &CenterBank, alpha: f64) -> Result<()> {
    bank.step(grads, alpha)
}

/// Dataset positions of one identity in each of the two views.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchGroup {
    pub identity: usize,
    pub views: [Vec<usize>; 2],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub groups: Vec<BatchGroup>,
}

impl Batch {
    /// Positions of view `v` in batch order.
    pub fn positions(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.groups.iter().flat_map(move |g| g.views[v].iter().copied())
    }
}

/// The batches of one epoch.
///
/// Each identity's samples in each view are shuffled and cut into chunks of
/// `samples_per_view`; an identity with fewer samples in a view wraps around
/// its list. For every chunk round the cross-view identities are shuffled
/// and grouped `batch_identities` at a time, so an epoch visits every sample.
pub fn epoch_batches(index: &IdentityViewIndex, cfg: &TrainConfig, rng: &mut SeededRng) -> Result<Vec<Batch>> {
    let identities = index.cross_view_identities(0, 1);
    if identities.is_empty() {
        return Err(Error::validation("no identity has samples in both views"));
    }
    let k = cfg.samples_per_view;
    let shuffled: Vec<[Vec<usize>; 2]> = identities
        .iter()
        .map(|&i| {
            [0, 1].map(|v| {
                let mut p = index.positions(i, v).to_vec();
                rng.shuffle(&mut p);
                p
            })
        })
        .collect();
    let rounds = shuffled
        .iter()
        .flat_map(|s| s.iter().map(|p| p.len().div_ceil(k)))
        .max()
        .unwrap_or(1);
    let mut batches = Vec::new();
    for round in 0..rounds {
        let mut order: Vec<usize> = (0..identities.len()).collect();
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_identities) {
            let groups = chunk
                .iter()
                .map(|&slot| BatchGroup {
                    identity: identities[slot],
                    views: [0, 1].map(|v| {
                        let p = &shuffled[slot][v];
                        (0..k.min(p.len()))
                            .map(|j| p[(round * k + j) % p.len()])
                            .collect()
                    }),
                })
                .collect();
            batches.push(Batch { groups });
        }
    }
    Ok(batches)
}

/// The random stream behind the batches of one training phase.
pub fn phase_rng(seed: u64, task: &str, ordinal: usize) -> SeededRng {
    SeededRng::new(derive_seed(seed, &format!("batches/{task}/{ordinal}")))
}

/// A two-view training set with an optional held-out set of the same shape.
#[derive(Debug, Clone)]
pub struct TrainingData<'a> {
    pub train: &'a Dataset,
    pub index: IdentityViewIndex,
    pub heldout: Option<&'a Dataset>,
}

impl<'a> TrainingData<'a> {
    pub fn new(train: &'a Dataset, heldout: Option<&'a Dataset>) -> Result<Self> {
        for (name, ds) in [("training", Some(train)), ("held-out", heldout)] {
            let Some(ds) = ds else { continue };
            if ds.num_views() != 2 {
                return Err(Error::validation(format!(
                    "{name} data has {} views; pair training needs exactly 2",
                    ds.num_views()
                )));
            }
            if ds.index().cross_view_identities(0, 1).is_empty() {
                return Err(Error::validation(format!(
                    "{name} data has no identity present in both views"
                )));
            }
        }
        if let Some(h) = heldout {
            if h.dim() != train.dim() {
                return Err(Error::sizing("held-out feature dimension differs from training"));
            }
        }
        Ok(TrainingData {
            train,
            index: train.index(),
            heldout,
        })
    }
}

/// One epoch of a log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub outer: usize,
    /// Mean of the batch losses over the epoch.
    pub report: LossReport,
    pub crossview_train: f64,
    pub crossview_heldout: Option<f64>,
}

/// End of one constrained phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMarker {
    pub task: String,
    pub outer: usize,
    pub phase: Phase,
    pub epochs: usize,
    pub joint: f64,
    pub crossview_train: f64,
    pub crossview_heldout: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snapshot {
    pub crossview_train: f64,
    pub crossview_heldout: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    pub markers: Vec<PhaseMarker>,
    /// Distances before the first constrained phase of each pair task.
    pub baselines: Vec<(String, Snapshot)>,
    /// `L1 + L2` at each outer boundary, re-evaluated on current parameters.
    pub outer_losses: Vec<f64>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,phase,loss_softmax_v0,loss_softmax_v1,cv_ec,cv_cl,joint,crossview_dist,heldout_crossview_dist";
    pub const PHASES_HEADER: &'static str =
        "task,outer,phase,epochs,joint,crossview_dist,heldout_crossview_dist";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let r = &row.report;
            write!(out, "{},{}", row.epoch, r.phase).unwrap();
            for s in &r.softmax {
                write!(out, ",{s:?}").unwrap();
            }
            writeln!(
                out,
                ",{},{},{:?},{:?},{}",
                opt(r.cv_ec),
                opt(r.cv_cl),
                r.joint,
                row.crossview_train,
                opt(row.crossview_heldout)
            )
            .unwrap();
        }
        out
    }

    pub fn phases_csv(&self) -> String {
        let mut out = String::from(Self::PHASES_HEADER);
        out.push('\n');
        for m in &self.markers {
            writeln!(
                out,
                "{},{},{},{},{:?},{:?},{}",
                m.task,
                m.outer,
                m.phase,
                m.epochs,
                m.joint,
                m.crossview_train,
                opt(m.crossview_heldout)
            )
            .unwrap();
        }
        out
    }

    pub fn append(&mut self, other: TrainLog) {
        let offset = self.rows.len();
        self.rows.extend(other.rows.into_iter().map(|mut r| {
            r.epoch += offset;
            r
        }));
        self.markers.extend(other.markers);
        self.baselines.extend(other.baselines);
        self.outer_losses.extend(other.outer_losses);
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// Two view networks being trained together, with their optimizer state.
#[derive(Debug, Clone)]
pub struct PairModel {
    pub nets: [ViewNetwork; 2],
    opt: [OptimizerState; 2],
    task: String,
    phases_run: usize,
}

impl PairModel {
    pub fn new(nets: [ViewNetwork; 2], task: impl Into<String>) -> Result<Self> {
        let [a, b] = &nets;
        if a.input_dim() != b.input_dim() || a.embed_dim() != b.embed_dim() || a.classes() != b.classes() {
            return Err(Error::sizing("the two view networks must share input, embedding and class dimensions"));
        }
        let opt = [OptimizerState::new(a), OptimizerState::new(b)];
        Ok(PairModel {
            nets,
            opt,
            task: task.into(),
            phases_run: 0,
        })
    }

    pub fn into_nets(self) -> [ViewNetwork; 2] {
        self.nets
    }

    pub fn task(&self) -> &str {
        &self.task
    }

    /// Embeds every sample of a two-view dataset with its view's network.
    pub fn embed(&self, ds: &Dataset) -> Result<Matrix> {
        embed_with(&self.nets, ds)
    }

    /// Cross-view intra-class distance of a two-view dataset.
    pub fn crossview_distance(&self, ds: &Dataset) -> Result<f64> {
        let emb = self.embed(ds)?;
        cross_view_intra_class_distance(&emb, &ds.identities(), &ds.views(), [0, 1])
    }

    fn snapshot(&self, data: &TrainingData) -> Result<Snapshot> {
        Ok(Snapshot {
            crossview_train: self.crossview_distance(data.train)?,
            crossview_heldout: data
                .heldout
                .map(|h| self.crossview_distance(h))
                .transpose()?,
        })
    }

    fn check_data(&self, data: &TrainingData) -> Result<()> {
        if self.nets[0].input_dim() != data.train.dim() {
            return Err(Error::sizing(format!(
                "networks take {} features, data has {}",
                self.nets[0].input_dim(),
                data.train.dim()
            )));
        }
        if data.train.num_identities() > self.nets[0].classes() {
            return Err(Error::sizing(format!(
                "{} training identities but the heads have {} classes",
                data.train.num_identities(),
                self.nets[0].classes()
            )));
        }
        Ok(())
    }
}

fn embed_with(nets: &[ViewNetwork; 2], ds: &Dataset) -> Result<Matrix> {
    let mut emb = Matrix::zeros(ds.len(), nets[0].embed_dim());
    for (r, s) in ds.samples().iter().enumerate() {
        let net = nets
            .get(s.view)
            .ok_or_else(|| Error::validation(format!("no network for view {}", s.view)))?;
        emb.row_mut(r).copy_from_slice(&net.embed(&s.features)?);
    }
    Ok(emb)
}

/// Forward pass over one batch: embeddings stacked view 0 first, then view 1.
struct BatchForward {
    emb: Matrix,
    logits: [Matrix; 2],
    labels: [Vec<usize>; 2],
    tapes: [Vec<ForwardTape>; 2],
    groups: Vec<IdentityGroup>,
}

fn batch_forward(nets: &[ViewNetwork; 2], ds: &Dataset, batch: &Batch) -> Result<BatchForward> {
    let d = nets[0].embed_dim();
    let m = nets[0].classes();
    let counts = [0, 1].map(|v| batch.positions(v).count());
    let mut emb = Matrix::zeros(counts[0] + counts[1], d);
    let mut logits = [Matrix::zeros(counts[0], m), Matrix::zeros(counts[1], m)];
    let mut labels = [Vec::with_capacity(counts[0]), Vec::with_capacity(counts[1])];
    let mut tapes = [Vec::with_capacity(counts[0]), Vec::with_capacity(counts[1])];
    for v in 0..2 {
        let offset = if v == 0 { 0 } else { counts[0] };
        for (n, pos) in batch.positions(v).enumerate() {
            let s = &ds.samples()[pos];
            let f = nets[v].forward(&s.features)?;
            emb.row_mut(offset + n).copy_from_slice(&f.embedding);
            logits[v].row_mut(n).copy_from_slice(&f.logits);
            labels[v].push(s.identity);
            tapes[v].push(f.tape);
        }
    }
    let mut groups = Vec::with_capacity(batch.groups.len());
    let mut cursor = [0, counts[0]];
    for g in &batch.groups {
        let [first, second] = [0, 1].map(|v| {
            let rows: Vec<usize> = (cursor[v]..cursor[v] + g.views[v].len()).collect();
            cursor[v] += g.views[v].len();
            rows
        });
        groups.push(IdentityGroup {
            identity: g.identity,
            first,
            second,
        });
    }
    Ok(BatchForward {
        emb,
        logits,
        labels,
        tapes,
        groups,
    })
}

struct BatchLosses {
    report: LossReport,
    /// `λ·∂L_constraint/∂x`, same shape as the stacked embeddings.
    constraint_grad: Matrix,
    grad_logits: [Matrix; 2],
    center_grads: Option<CenterBank>,
}

fn batch_losses(
    fwd: &BatchForward,
    phase: Phase,
    bank: Option<&CenterBank>,
    cfg: &TrainConfig,
) -> Result<BatchLosses> {
    let (s0, g0) = softmax_loss(&fwd.logits[0], &fwd.labels[0])?;
    let (s1, g1) = softmax_loss(&fwd.logits[1], &fwd.labels[1])?;
    let softmax = vec![s0, s1];
    let mut report = LossReport {
        phase,
        softmax,
        cv_ec: None,
        cv_cl: None,
        center: None,
        joint: s0 + s1,
    };
    let mut center_grads = None;
    let constraint_grad = match phase {
        Phase::Warmup => Matrix::zeros(fwd.emb.rows(), fwd.emb.cols()),
        Phase::CrossViewEuclidean => {
            let out = cv_ec(&fwd.emb, &fwd.groups)?;
            report.cv_ec = Some(out.value);
            report.joint = joint_loss_l1(&report.softmax, out.value, cfg.lambda1);
            let mut g = out.grad;
            g.scale(cfg.lambda1);
            g
        }
        Phase::CrossViewCenter => {
            let bank = bank.ok_or_else(|| Error::validation("center phase needs a center bank"))?;
            let out = cv_cl(&fwd.emb, &fwd.groups, bank, [0, 1])?;
            let classes: Vec<ClassGroup> = fwd
                .groups
                .iter()
                .map(|g| ClassGroup {
                    identity: g.identity,
                    members: g.first.iter().chain(&g.second).copied().collect(),
                })
                .collect();
            report.center = Some(center_loss(&fwd.emb, &classes, &bank.global)?.value);
            report.cv_cl = Some(out.value);
            report.joint = joint_loss_l2(&report.softmax, out.value, cfg.lambda2);
            center_grads = Some(out.grad_centers);
            let mut g = out.grad_embeddings;
            g.scale(cfg.lambda2);
            g
        }
    };
    Ok(BatchLosses {
        report,
        constraint_grad,
        grad_logits: [g0, g1],
        center_grads,
    })
}

/// Parameter gradients of both networks for one batch: the softmax path
/// through each head plus the constraint path into each embedding.
fn batch_grads(nets: &[ViewNetwork; 2], fwd: &BatchForward, losses: &BatchLosses) -> Result<[ParamGrads; 2]> {
    let mut grads = [ParamGrads::zeros_like(&nets[0]), ParamGrads::zeros_like(&nets[1])];
    let offset = [0, fwd.tapes[0].len()];
    for v in 0..2 {
        for (n, tape) in fwd.tapes[v].iter().enumerate() {
            nets[v].backward_into(
                tape,
                losses.constraint_grad.row(offset[v] + n),
                losses.grad_logits[v].row(n),
                &mut grads[v],
            )?;
        }
    }
    Ok(grads)
}

/// Batch losses without any update.
pub fn batch_loss(
    model: &PairModel,
    ds: &Dataset,
    batch: &Batch,
    phase: Phase,
    bank: Option<&CenterBank>,
    cfg: &TrainConfig,
) -> Result<LossReport> {
    let fwd = batch_forward(&model.nets, ds, batch)?;
    Ok(batch_losses(&fwd, phase, bank, cfg)?.report)
}

/// Gradients of the batch loss, split into the softmax-only path and the
/// constraint-only path. Their sum equals the combined gradient used in
/// training.
pub fn split_batch_grads(
    model: &PairModel,
    ds: &Dataset,
    batch: &Batch,
    phase: Phase,
    bank: Option<&CenterBank>,
    cfg: &TrainConfig,
) -> Result<SplitGrads> {
    let fwd = batch_forward(&model.nets, ds, batch)?;
    let losses = batch_losses(&fwd, phase, bank, cfg)?;
    let combined = batch_grads(&model.nets, &fwd, &losses)?;
    let softmax_only = BatchLosses {
        report: losses.report.clone(),
        constraint_grad: Matrix::zeros(fwd.emb.rows(), fwd.emb.cols()),
        grad_logits: losses.grad_logits.clone(),
        center_grads: None,
    };
    let constraint_only = BatchLosses {
        report: losses.report.clone(),
        constraint_grad: losses.constraint_grad.clone(),
        grad_logits: [0, 1].map(|v| Matrix::zeros(fwd.logits[v].rows(), fwd.logits[v].cols())),
        center_grads: None,
    };
    Ok(SplitGrads {
        combined,
        softmax: batch_grads(&model.nets, &fwd, &softmax_only)?,
        constraint: batch_grads(&model.nets, &fwd, &constraint_only)?,
    })
}

#[derive(Debug, Clone)]
pub struct SplitGrads {
    pub combined: [ParamGrads; 2],
    pub softmax: [ParamGrads; 2],
    pub constraint: [ParamGrads; 2],
}

fn train_batch(
    model: &mut PairModel,
    ds: &Dataset,
    batch: &Batch,
    phase: Phase,
    bank: Option<&mut CenterBank>,
    cfg: &TrainConfig,
) -> Result<LossReport> {
    let fwd = batch_forward(&model.nets, ds, batch)?;
    let losses = batch_losses(&fwd, phase, bank.as_deref(), cfg)?;
    let grads = batch_grads(&model.nets, &fwd, &losses)?;
    for ((net, g), opt) in model.nets.iter_mut().zip(&grads).zip(model.opt.iter_mut()) {
        sgd_step(net, g, opt, cfg)?;
    }
    if let (Some(bank), Some(cg)) = (bank, &losses.center_grads) {
        if !cfg.freeze_centers {
            center_step(bank, cg, cfg.center_rate)?;
        }
    }
    Ok(losses.report)
}

/// Runs epochs of one phase until the epoch-mean joint loss drops below
/// `threshold` or `max_epochs` is reached. Returns the number of epochs run
/// and the last epoch-mean joint loss.
#[allow(clippy::too_many_arguments)]
fn run_phase(
    model: &mut PairModel,
    data: &TrainingData,
    cfg: &TrainConfig,
    phase: Phase,
    mut bank: Option<&mut CenterBank>,
    max_epochs: usize,
    threshold: Option<f64>,
    outer: usize,
    log: &mut TrainLog,
) -> Result<(usize, f64)> {
    model.check_data(data)?;
    let mut rng = phase_rng(cfg.seed, &model.task, model.phases_run);
    model.phases_run += 1;
    let mut joint = f64::INFINITY;
    let mut epochs = 0;
    for _ in 0..max_epochs {
        let last_good = model.nets.clone();
        let batches = epoch_batches(&data.index, cfg, &mut rng)?;
        let mut reports = Vec::with_capacity(batches.len());
        for batch in &batches {
            let report = train_batch(model, data.train, batch, phase, bank.as_deref_mut(), cfg)
                .and_then(|r| {
                    if r.is_finite() && model.nets.iter().all(ViewNetwork::is_finite) {
                        Ok(r)
                    } else {
                        Err(Error::numeric("non-finite loss"))
                    }
                });
            match report {
                Ok(r) => reports.push(r),
                Err(Error::Numeric(_)) => {
                    return Err(Error::Diverged {
                        phase: phase.to_string(),
                        epoch: log.rows.len() + 1,
                        last_good: Box::new(last_good.to_vec()),
                    })
                }
                Err(e) => return Err(e),
            }
        }
        epochs += 1;
        let report = LossReport::mean(&reports).expect("an epoch has at least one batch");
        joint = report.joint;
        let snap = model.snapshot(data)?;
        log.rows.push(LogRow {
            epoch: log.rows.len() + 1,
            outer,
            report,
            crossview_train: snap.crossview_train,
            crossview_heldout: snap.crossview_heldout,
        });
        if threshold.is_some_and(|t| joint < t) {
            break;
        }
    }
    Ok((epochs, joint))
}

fn mark(model: &PairModel, data: &TrainingData, outer: usize, phase: Phase, epochs: usize, joint: f64, log: &mut TrainLog) -> Result<()> {
    let snap = model.snapshot(data)?;
    log.markers.push(PhaseMarker {
        task: model.task.clone(),
        outer,
        phase,
        epochs,
        joint,
        crossview_train: snap.crossview_train,
        crossview_heldout: snap.crossview_heldout,
    });
    Ok(())
}

/// Softmax-only training of both networks, standing in for pretrained
/// initialization.
pub fn train_warmup(model: &mut PairModel, data: &TrainingData, cfg: &TrainConfig, log: &mut TrainLog) -> Result<()> {
    if cfg.warmup_epochs > 0 {
        run_phase(model, data, cfg, Phase::Warmup, None, cfg.warmup_epochs, None, 0, log)?;
    }
    Ok(())
}

/// Trains with `L1 = Σ softmax + λ1·cv_ec` until `L1 < eps1` or the epoch cap.
pub fn train_phase_cvec(
    model: &mut PairModel,
    data: &TrainingData,
    cfg: &TrainConfig,
    outer: usize,
    log: &mut TrainLog,
) -> Result<()> {
    let phase = Phase::CrossViewEuclidean;
    let (epochs, joint) = run_phase(model, data, cfg, phase, None, cfg.max_epochs_per_phase, Some(cfg.eps1), outer, log)?;
    mark(model, data, outer, phase, epochs, joint, log)
}

/// Trains with `L2 = Σ softmax + λ2·cv_cl` until `L2 < eps2` or the epoch
/// cap, updating the centers alongside the networks.
pub fn train_phase_cvcl(
    model: &mut PairModel,
    bank: &mut CenterBank,
    data: &TrainingData,
    cfg: &TrainConfig,
    outer: usize,
    log: &mut TrainLog,
) -> Result<()> {
    let phase = Phase::CrossViewCenter;
    let (epochs, joint) = run_phase(model, data, cfg, phase, Some(bank), cfg.max_epochs_per_phase, Some(cfg.eps2), outer, log)?;
    mark(model, data, outer, phase, epochs, joint, log)
}

/// Centers computed from the current embeddings of the training set.
pub fn compute_centers(model: &PairModel, ds: &Dataset) -> Result<CenterBank> {
    let emb = model.embed(ds)?;
    init_centers(&emb, &ds.identities(), &ds.views(), ds.num_identities(), 2)
}

/// `L1 + L2` over one deterministic pass of batches, without updates.
pub fn evaluate_joint(model: &PairModel, bank: &CenterBank, data: &TrainingData, cfg: &TrainConfig, tag: &str) -> Result<f64> {
    let mut rng = SeededRng::new(derive_seed(cfg.seed, &format!("outer-check/{}/{tag}", model.task)));
    let batches = epoch_batches(&data.index, cfg, &mut rng)?;
    let mut total = 0.0;
    for batch in &batches {
        let fwd = batch_forward(&model.nets, data.train, batch)?;
        let l1 = batch_losses(&fwd, Phase::CrossViewEuclidean, None, cfg)?.report.joint;
        let l2 = batch_losses(&fwd, Phase::CrossViewCenter, Some(bank), cfg)?.report.joint;
        total += l1 + l2;
    }
    Ok(total / batches.len() as f64)
}

#[derive(Debug, Clone)]
pub struct PairOutcome {
    pub nets: [ViewNetwork; 2],
    pub log: TrainLog,
}

/// Iterative alternation: optional softmax warmup, then repeated
/// {Euclidean phase, center initialization, center phase} until
/// `L1 + L2 < eps` or `max_outer_iters`.
pub fn train_icv_eccl(nets: [ViewNetwork; 2], data: &TrainingData, cfg: &TrainConfig) -> Result<PairOutcome> {
    let mut log = TrainLog::default();
    let nets = run_icv_eccl(nets, data, cfg, "pair", true, &mut log)?;
    Ok(PairOutcome { nets, log })
}

fn run_icv_eccl(
    nets: [ViewNetwork; 2],
    data: &TrainingData,
    cfg: &TrainConfig,
    task: &str,
    warmup: bool,
    log: &mut TrainLog,
) -> Result<[ViewNetwork; 2]> {
    cfg.validate()?;
    let mut model = PairModel::new(nets, task)?;
    if warmup {
        train_warmup(&mut model, data, cfg, log)?;
    }
    log.baselines.push((task.to_string(), model.snapshot(data)?));
    for outer in 0..cfg.max_outer_iters {
        train_phase_cvec(&mut model, data, cfg, outer, log)?;
        let mut bank = compute_centers(&model, data.train)?;
        train_phase_cvcl(&mut model, &mut bank, data, cfg, outer, log)?;
        let total = evaluate_joint(&model, &bank, data, cfg, &outer.to_string())?;
        log.outer_losses.push(total);
        if total < cfg.eps {
            break;
        }
    }
    Ok(model.into_nets())
}

/// Two freshly initialized, identical networks for views 0 and 1.
pub fn init_pair(shape: &NetShape, seed: u64) -> Result<[ViewNetwork; 2]> {
    Ok([
        ViewNetwork::init(ViewLabel::View(0), shape, seed)?,
        ViewNetwork::init(ViewLabel::View(1), shape, seed)?,
    ])
}

#[derive(Debug, Clone)]
pub struct MultiViewOutcome {
    pub view_nets: Vec<ViewNetwork>,
    pub public: ViewNetwork,
    pub log: TrainLog,
}

/// One-to-others training for three or more views. For each view in turn,
/// that view's network is paired with a public network that sees every
/// other view's samples, and the pair is trained with the iterative
/// alternation. The public network carries over to the next view.
pub fn train_multiview(data: &Dataset, heldout: Option<&Dataset>, cfg: &TrainConfig) -> Result<MultiViewOutcome> {
    cfg.validate()?;
    let v_count = data.num_views();
    if v_count < 3 {
        return Err(Error::validation(format!(
            "multi-view training needs at least 3 views, got {v_count}; use the two-view iterative trainer"
        )));
    }
    for v in 0..v_count {
        if data.count_in_view(v) == 0 {
            return Err(Error::validation(format!("view {v} has no samples")));
        }
    }
    let shape = cfg.net_shape(data.dim(), data.num_identities());
    let mut view_nets: Vec<ViewNetwork> = (0..v_count)
        .map(|v| ViewNetwork::init(ViewLabel::View(v), &shape, cfg.seed))
        .collect::<Result<_>>()?;
    let mut public = ViewNetwork::init(ViewLabel::Public, &shape, cfg.seed)?;
    let mut log = TrainLog::default();
    for pass in 0..cfg.multiview_passes {
        for v in 0..v_count {
            let pair = data.one_vs_rest(v)?;
            let held_pair = heldout.map(|h| h.one_vs_rest(v)).transpose()?;
            let training = TrainingData::new(&pair, held_pair.as_ref())?;
            let nets = [view_nets[v].clone(), public.clone()];
            let task = format!("view{v}/pass{pass}");
            let [vnet, pnet] = run_icv_eccl(nets, &training, cfg, &task, pass == 0, &mut log)?;
            view_nets[v] = vnet.with_label(ViewLabel::View(v));
            public = pnet.with_label(ViewLabel::Public);
        }
    }
    Ok(MultiViewOutcome {
        view_nets,
        public,
        log,
    })
}
