//! Finite-difference verification of every analytic gradient.
//!
//! Each group draws random small instances and compares the analytic
//! gradient against central differences, coordinate by coordinate. The
//! relative error is `|a − n| / max(|a|, |n|, 1e-6)`; the floor keeps exact
//! zeros (dead ReLU paths, identities outside a batch) from dividing by
//! round-off. Network instances with a pre-activation within `1e-3` of the
//! ReLU kink are redrawn, since differences across the kink are not
//! derivatives.

use crate::dataset::{Dataset, Sample};
use crate::error::Result;
use crate::losses::{center_loss, cv_cl, cv_ec, softmax_loss, CenterBank, ClassGroup, IdentityGroup, Phase};
use crate::math::{Matrix, SeededRng};
use crate::network::{NetShape, ParamGrads, ViewLabel, ViewNetwork};
use crate::trainer::{batch_loss, split_batch_grads, Batch, BatchGroup, PairModel, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    /// Random instances per group.
    pub instances: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Scales the analytic cross-view Euclidean gradient by `1 + δ` before
    /// comparing; a non-zero `δ` must make that group fail.
    pub corrupt_cv_ec: Option<f64>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            instances: 100,
            step: 1e-5,
            tolerance: 1e-4,
            seed: 0,
            corrupt_cv_ec: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckRow {
    pub group: &'static str,
    pub instances: usize,
    pub coordinates: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub rows: Vec<GradCheckRow>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.rows.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,instances,coordinates,max_rel_err,passed\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:e},{}\n",
                r.group, r.instances, r.coordinates, r.max_rel_err, r.passed
            ));
        }
        out
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central difference of `f` in every coordinate of `x`.
pub fn numeric_grad(x: &mut [f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(x);
            x[i] = orig - h;
            let down = f(x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

struct Tally {
    group: &'static str,
    instances: usize,
    coordinates: usize,
    max: f64,
}

impl Tally {
    fn new(group: &'static str) -> Self {
        Tally {
            group,
            instances: 0,
            coordinates: 0,
            max: 0.0,
        }
    }

    fn compare(&mut self, analytic: &[f64], numeric: &[f64]) {
        assert_eq!(analytic.len(), numeric.len());
        for (a, n) in analytic.iter().zip(numeric) {
            let e = rel_err(*a, *n);
            // NaN must register as a failure
            self.max = if e.is_nan() { f64::INFINITY } else { self.max.max(e) };
        }
        self.coordinates += analytic.len();
    }

    fn finish(self, tolerance: f64) -> GradCheckRow {
        GradCheckRow {
            group: self.group,
            instances: self.instances,
            coordinates: self.coordinates,
            max_rel_err: self.max,
            passed: self.max < tolerance && self.instances > 0,
        }
    }
}

fn random_matrix(rng: &mut SeededRng, rows: usize, cols: usize) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).expect("shape")
}

/// Random identity groups over a fresh embedding matrix: `m` identities,
/// 1 to 4 rows per view each, rows laid out view 0 first.
fn random_groups(rng: &mut SeededRng, m: usize) -> (Vec<IdentityGroup>, usize) {
    let counts: Vec<[usize; 2]> = (0..m)
        .map(|_| [1 + rng.below(4), 1 + rng.below(4)])
        .collect();
    let total0: usize = counts.iter().map(|c| c[0]).sum();
    let mut cursor = [0, total0];
    let groups = counts
        .iter()
        .enumerate()
        .map(|(identity, c)| {
            let [first, second] = [0, 1].map(|v| {
                let rows: Vec<usize> = (cursor[v]..cursor[v] + c[v]).collect();
                cursor[v] += c[v];
                rows
            });
            IdentityGroup {
                identity,
                first,
                second,
            }
        })
        .collect();
    (groups, cursor[1])
}

fn random_bank(rng: &mut SeededRng, m: usize, d: usize) -> CenterBank {
    CenterBank {
        global: random_matrix(rng, m, d),
        per_view: vec![random_matrix(rng, m, d), random_matrix(rng, m, d)],
    }
}

fn check_softmax(rng: &mut SeededRng, opts: &GradCheckOptions) -> Result<GradCheckRow> {
    let mut t = Tally::new("softmax/logits");
    for _ in 0..opts.instances {
        let rows = 1 + rng.below(4);
        let classes = 2 + rng.below(5);
        let mut logits = random_matrix(rng, rows, classes);
        logits.scale(2.0);
        let labels: Vec<usize> = (0..rows).map(|_| rng.below(classes)).collect();
        let (_, grad) = softmax_loss(&logits, &labels)?;
        let numeric = numeric_grad(logits.data_mut(), opts.step, |x| {
            let m = Matrix::new(rows, classes, x.to_vec()).expect("shape");
            softmax_loss(&m, &labels).expect("valid").0
        });
        t.compare(grad.data(), &numeric);
        t.instances += 1;
    }
    Ok(t.finish(opts.tolerance))
}

fn check_cv_ec(rng: &mut SeededRng, opts: &GradCheckOptions) -> Result<GradCheckRow> {
    let mut t = Tally::new("cv_ec/embeddings");
    for _ in 0..opts.instances {
        let m = 1 + rng.below(4);
        let (groups, n) = random_groups(rng, m);
        let d = 1 + rng.below(4);
        let mut emb = random_matrix(rng, n, d);
        let mut grad = cv_ec(&emb, &groups)?.grad;
        if let Some(delta) = opts.corrupt_cv_ec {
            grad.scale(1.0 + delta);
        }
        let numeric = numeric_grad(emb.data_mut(), opts.step, |x| {
            let m = Matrix::new(n, d, x.to_vec()).expect("shape");
            cv_ec(&m, &groups).expect("valid").value
        });
        t.compare(grad.data(), &numeric);
        t.instances += 1;
    }
    Ok(t.finish(opts.tolerance))
}

fn check_center_loss(rng: &mut SeededRng, opts: &GradCheckOptions) -> Result<GradCheckRow> {
    let mut t = Tally::new("center_loss/embeddings");
    for _ in 0..opts.instances {
        let m = 1 + rng.below(4);
        let (groups, n) = random_groups(rng, m);
        let classes: Vec<ClassGroup> = groups
            .iter()
            .map(|g| ClassGroup {
                identity: g.identity,
                members: g.first.iter().chain(&g.second).copied().collect(),
            })
            .collect();
        let d = 1 + rng.below(4);
        let mut emb = random_matrix(rng, n, d);
        let centers = random_matrix(rng, m, d);
        let grad = center_loss(&emb, &classes, &centers)?.grad;
        let numeric = numeric_grad(emb.data_mut(), opts.step, |x| {
            let e = Matrix::new(n, d, x.to_vec()).expect("shape");
            center_loss(&e, &classes, &centers).expect("valid").value
        });
        t.compare(grad.data(), &numeric);
        t.instances += 1;
    }
    Ok(t.finish(opts.tolerance))
}

fn check_cv_cl(rng: &mut SeededRng, opts: &GradCheckOptions) -> Result<[GradCheckRow; 3]> {
    let mut te = Tally::new("cv_cl/embeddings");
    let mut tv = Tally::new("cv_cl/view_centers");
    let mut tg = Tally::new("cv_cl/global_centers");
    for _ in 0..opts.instances {
        let m = 1 + rng.below(4);
        let (groups, n) = random_groups(rng, m);
        let d = 1 + rng.below(4);
        let mut emb = random_matrix(rng, n, d);
        let bank = random_bank(rng, m, d);
        let out = cv_cl(&emb, &groups, &bank, [0, 1])?;

        let numeric = numeric_grad(emb.data_mut(), opts.step, |x| {
            let e = Matrix::new(n, d, x.to_vec()).expect("shape");
            cv_cl(&e, &groups, &bank, [0, 1]).expect("valid").value
        });
        te.compare(out.grad_embeddings.data(), &numeric);

        for v in 0..2 {
            let mut b = bank.clone();
            let numeric = numeric_grad(b.per_view[v].data_mut(), opts.step, |x| {
                let mut probe = bank.clone();
                probe.per_view[v].data_mut().copy_from_slice(x);
                cv_cl(&emb, &groups, &probe, [0, 1]).expect("valid").value
            });
            tv.compare(out.grad_centers.per_view[v].data(), &numeric);
        }
        let mut b = bank.clone();
        let numeric = numeric_grad(b.global.data_mut(), opts.step, |x| {
            let mut probe = bank.clone();
            probe.global.data_mut().copy_from_slice(x);
            cv_cl(&emb, &groups, &probe, [0, 1]).expect("valid").value
        });
        tg.compare(out.grad_centers.global.data(), &numeric);
        for t in [&mut te, &mut tv, &mut tg] {
            t.instances += 1;
        }
    }
    Ok([te, tv, tg].map(|t| t.finish(opts.tolerance)))
}

fn random_shape(rng: &mut SeededRng) -> NetShape {
    NetShape {
        input_dim: 1 + rng.below(4),
        hidden: (0..1 + rng.below(2)).map(|_| 2 + rng.below(4)).collect(),
        embed_dim: 1 + rng.below(3),
        classes: 2 + rng.below(3),
    }
}

/// A network with every parameter drawn from N(0, 0.7²).
fn random_net(rng: &mut SeededRng, label: ViewLabel, shape: &NetShape) -> Result<ViewNetwork> {
    let mut net = ViewNetwork::init(label, shape, rng.next_u64())?;
    for s in net.param_slices_mut() {
        s.iter_mut().for_each(|p| *p = 0.7 * rng.normal());
    }
    Ok(net)
}

/// True if every ReLU input is at least `1e-3` from zero.
fn clear_of_kinks(net: &ViewNetwork, inputs: &[Vec<f64>]) -> Result<bool> {
    for x in inputs {
        let f = net.forward(x)?;
        let pre = f.tape.pre_activations();
        // the last layer is linear
        let relu_fed = &pre[..pre.len() - 1];
        if relu_fed.iter().flatten().any(|z| z.abs() < 1e-3) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn flatten(g: &ParamGrads) -> Vec<f64> {
    g.slices().concat()
}

fn net_numeric(net: &ViewNetwork, h: f64, mut f: impl FnMut(&ViewNetwork) -> f64) -> Vec<f64> {
    let mut probe = net.clone();
    let mut out = Vec::with_capacity(net.param_count());
    let sizes: Vec<usize> = net.param_slices().iter().map(|s| s.len()).collect();
    for (k, &len) in sizes.iter().enumerate() {
        for i in 0..len {
            let orig = probe.param_slices()[k][i];
            probe.param_slices_mut()[k][i] = orig + h;
            let up = f(&probe);
            probe.param_slices_mut()[k][i] = orig - h;
            let down = f(&probe);
            probe.param_slices_mut()[k][i] = orig;
            out.push((up - down) / (2.0 * h));
        }
    }
    out
}

/// Network parameters under a probe loss `softmax(logits, y) + ⟨r, embedding⟩`
/// summed over a few inputs, exercising both backward entry points.
fn check_network(rng: &mut SeededRng, opts: &GradCheckOptions) -> Result<GradCheckRow> {
    let mut t = Tally::new("network/parameters");
    while t.instances < opts.instances {
        let shape = random_shape(rng);
        let net = random_net(rng, ViewLabel::View(0), &shape)?;
        let n = 1 + rng.below(3);
        let inputs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..shape.input_dim).map(|_| rng.normal()).collect())
            .collect();
        if !clear_of_kinks(&net, &inputs)? {
            continue;
        }
        let labels: Vec<usize> = (0..n).map(|_| rng.below(shape.classes)).collect();
        let probes: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..shape.embed_dim).map(|_| rng.normal()).collect())
            .collect();
        let loss = |net: &ViewNetwork| {
            let mut total = 0.0;
            for ((x, &y), r) in inputs.iter().zip(&labels).zip(&probes) {
                let f = net.forward(x).expect("valid");
                let logits = Matrix::new(1, f.logits.len(), f.logits.clone()).expect("shape");
                total += softmax_loss(&logits, &[y]).expect("valid").0;
                total += f.embedding.iter().zip(r).map(|(e, r)| e * r).sum::<f64>();
            }
            total
        };
        let mut grads = ParamGrads::zeros_like(&net);
        for ((x, &y), r) in inputs.iter().zip(&labels).zip(&probes) {
            let f = net.forward(x)?;
            let logits = Matrix::new(1, f.logits.len(), f.logits.clone())?;
            let (_, gl) = softmax_loss(&logits, &[y])?;
            net.backward_into(&f.tape, r, gl.row(0), &mut grads)?;
        }
        t.compare(&flatten(&grads), &net_numeric(&net, opts.step, loss));
        t.instances += 1;
    }
    Ok(t.finish(opts.tolerance))
}

/// Both joint losses end to end through two view networks, using the same
/// batch code path as training.
fn check_joint(rng: &mut SeededRng, opts: &GradCheckOptions, phase: Phase, group: &'static str) -> Result<GradCheckRow> {
    let mut t = Tally::new(group);
    while t.instances < opts.instances {
        let mut shape = random_shape(rng);
        let m = 1 + rng.below(3);
        shape.classes = m;
        let nets = [
            random_net(rng, ViewLabel::View(0), &shape)?,
            random_net(rng, ViewLabel::View(1), &shape)?,
        ];
        let mut samples = Vec::new();
        let mut groups = Vec::new();
        for identity in 0..m {
            let mut views = [Vec::new(), Vec::new()];
            for (view, rows) in views.iter_mut().enumerate() {
                for _ in 0..1 + rng.below(3) {
                    rows.push(samples.len());
                    samples.push(Sample {
                        identity,
                        view,
                        features: (0..shape.input_dim).map(|_| rng.normal()).collect(),
                    });
                }
            }
            groups.push(BatchGroup { identity, views });
        }
        let ds = Dataset::new(samples)?;
        let clear = (0..2).try_fold(true, |ok, v| -> Result<bool> {
            let inputs: Vec<Vec<f64>> = ds
                .samples()
                .iter()
                .filter(|s| s.view == v)
                .map(|s| s.features.clone())
                .collect();
            Ok(ok && clear_of_kinks(&nets[v], &inputs)?)
        })?;
        if !clear {
            continue;
        }
        let batch = Batch { groups };
        let cfg = TrainConfig {
            lambda1: 0.5 + rng.uniform(),
            lambda2: 0.5 + rng.uniform(),
            ..TrainConfig::default()
        };
        let bank = random_bank(rng, m, shape.embed_dim);
        let bank_ref = (phase == Phase::CrossViewCenter).then_some(&bank);
        let mut model = PairModel::new(nets, "gradcheck")?;
        let analytic = split_batch_grads(&model, &ds, &batch, phase, bank_ref, &cfg)?.combined;
        for v in 0..2 {
            let net = model.nets[v].clone();
            let numeric = net_numeric(&net, opts.step, |probe| {
                let saved = std::mem::replace(&mut model.nets[v], probe.clone());
                let j = batch_loss(&model, &ds, &batch, phase, bank_ref, &cfg).expect("valid").joint;
                model.nets[v] = saved;
                j
            });
            t.compare(&flatten(&analytic[v]), &numeric);
        }
        t.instances += 1;
    }
    Ok(t.finish(opts.tolerance))
}

/// Runs every group and collects one row per group.
pub fn run(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = SeededRng::new(opts.seed);
    let mut rows = vec![
        check_softmax(&mut rng, opts)?,
        check_cv_ec(&mut rng, opts)?,
        check_center_loss(&mut rng, opts)?,
    ];
    rows.extend(check_cv_cl(&mut rng, opts)?);
    rows.push(check_network(&mut rng, opts)?);
    rows.push(check_joint(&mut rng, opts, Phase::CrossViewEuclidean, "joint_l1/parameters")?);
    rows.push(check_joint(&mut rng, opts, Phase::CrossViewCenter, "joint_l2/parameters")?);
    Ok(GradCheckReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_grad_of_quadratic() {
        let mut x = vec![1.0, -2.0];
        let g = numeric_grad(&mut x, 1e-5, |x| x[0] * x[0] + 3.0 * x[1]);
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8);
        assert_eq!(x, vec![1.0, -2.0]);
    }

    #[test]
    fn all_groups_pass_small() {
        let report = run(&GradCheckOptions {
            instances: 10,
            ..GradCheckOptions::default()
        })
        .unwrap();
        assert!(report.passed(), "{}", report.to_csv());
        assert_eq!(report.rows.len(), 9);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let report = run(&GradCheckOptions {
            instances: 5,
            corrupt_cv_ec: Some(1e-3),
            ..GradCheckOptions::default()
        })
        .unwrap();
        let row = report.rows.iter().find(|r| r.group == "cv_ec/embeddings").unwrap();
        assert!(!row.passed);
        assert!(!report.passed());
    }
}
