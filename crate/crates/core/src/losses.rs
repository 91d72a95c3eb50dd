//! Loss values and their exact analytic gradients.
//!
//! Embeddings are passed as a matrix with one row per sample. Identity
//! grouping is expressed with row indices, so each loss returns a gradient
//! matrix of the same shape as its input.
//!
//! The averaged losses are differentiated exactly. For the cross-view
//! Euclidean constraint over identities `i = 1..M` with `K¹ᵢ`, `K²ᵢ` samples
//! per view:
//!
//! ```text
//! L = 1/(2M) Σᵢ 1/(K¹ᵢK²ᵢ) Σₚ Σ_q ‖x¹ᵢₚ − x²ᵢ_q‖²
//! ∂L/∂x¹ᵢₚ = 1/(M·K¹ᵢ) · (x¹ᵢₚ − mean_q x²ᵢ_q)
//! ```
//!
//! and for the cross-view center loss with view centers `Cᵛᵢ` and a global
//! center `Cᵢ`:
//!
//! ```text
//! L = 1/(2M) Σᵢ Σᵥ 1/Kᵛᵢ Σₚ (‖xᵛᵢₚ − Cᵛᵢ‖² + ‖xᵛᵢₚ − Cᵢ‖²)
//! ∂L/∂xᵛᵢₚ = 1/(M·Kᵛᵢ) · ((xᵛᵢₚ − Cᵛᵢ) + (xᵛᵢₚ − Cᵢ))
//! ∂L/∂Cᵛᵢ  = 1/(M·Kᵛᵢ) · Σₚ (Cᵛᵢ − xᵛᵢₚ)
//! ∂L/∂Cᵢ   = Σᵥ 1/(M·Kᵛᵢ) · Σₚ (Cᵢ − xᵛᵢₚ)
//! ```
//!
//! These are the per-pair directions with the positive averaging factors
//! applied. Identities missing from either view contribute nothing and are
//! counted in `skipped`.

use std::fmt;

use crate::error::{Error, Result};
use crate::math::{log_softmax, squared_distance, Matrix};

/// Rows of one identity in each of the two views being compared.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentityGroup {
    pub identity: usize,
    pub first: Vec<usize>,
    pub second: Vec<usize>,
}

/// Rows of one identity, regardless of view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassGroup {
    pub identity: usize,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ConstraintOutput {
    pub value: f64,
    pub grad: Matrix,
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Warmup,
    CrossViewEuclidean,
    CrossViewCenter,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::CrossViewEuclidean => "cvec",
            Phase::CrossViewCenter => "cvcl",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Loss values of one batch (or the mean over an epoch). Constraint terms
/// that are not active in the phase are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub phase: Phase,
    pub softmax: Vec<f64>,
    pub cv_ec: Option<f64>,
    pub cv_cl: Option<f64>,
    pub center: Option<f64>,
    pub joint: f64,
}

impl LossReport {
    /// Element-wise mean of several reports from the same phase.
    pub fn mean(reports: &[LossReport]) -> Option<LossReport> {
        let first = reports.first()?;
        let n = reports.len() as f64;
        let mean_opt = |get: fn(&LossReport) -> Option<f64>| -> Option<f64> {
            reports
                .iter()
                .map(get)
                .sum::<Option<f64>>()
                .map(|s| s / n)
        };
        Some(LossReport {
            phase: first.phase,
            softmax: (0..first.softmax.len())
                .map(|v| reports.iter().map(|r| r.softmax[v]).sum::<f64>() / n)
                .collect(),
            cv_ec: mean_opt(|r| r.cv_ec),
            cv_cl: mean_opt(|r| r.cv_cl),
            center: mean_opt(|r| r.center),
            joint: reports.iter().map(|r| r.joint).sum::<f64>() / n,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.joint.is_finite()
            && self.softmax.iter().all(|v| v.is_finite())
            && [self.cv_ec, self.cv_cl, self.center]
                .iter()
                .flatten()
                .all(|v| v.is_finite())
    }
}

/// Summed softmax cross-entropy over a batch of logit rows. The gradient of
/// each row is `softmax(logits) − onehot(label)`.
pub fn softmax_loss(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if logits.rows() != labels.len() {
        return Err(Error::sizing(format!(
            "{} logit rows for {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    let mut value = 0.0;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    for (n, (row, &label)) in logits.iter_rows().zip(labels).enumerate() {
        if label >= row.len() {
            return Err(Error::validation(format!(
                "label {label} out of range for {} classes",
                row.len()
            )));
        }
        let logp = log_softmax(row)?;
        value -= logp[label];
        for (g, lp) in grad.row_mut(n).iter_mut().zip(&logp) {
            *g = lp.exp();
        }
        grad[(n, label)] -= 1.0;
    }
    Ok((value, grad))
}

fn check_rows(emb: &Matrix, rows: &[usize]) -> Result<()> {
    match rows.iter().find(|&&r| r >= emb.rows()) {
        Some(r) => Err(Error::sizing(format!(
            "row {r} out of range for {} embeddings",
            emb.rows()
        ))),
        None => Ok(()),
    }
}

fn mean_row(emb: &Matrix, rows: &[usize]) -> Vec<f64> {
    let mut mean = vec![0.0; emb.cols()];
    for &r in rows {
        for (m, x) in mean.iter_mut().zip(emb.row(r)) {
            *m += x;
        }
    }
    let k = rows.len() as f64;
    mean.iter_mut().for_each(|m| *m /= k);
    mean
}

fn spread(emb: &Matrix, rows: &[usize], mean: &[f64]) -> f64 {
    rows.iter().map(|&r| squared_distance(emb.row(r), mean)).sum()
}

fn add_into(row: &mut [f64], s: f64, a: &[f64], b: &[f64]) {
    for ((g, x), y) in row.iter_mut().zip(a).zip(b) {
        *g += s * (x - y);
    }
}

/// Cross-view Euclidean constraint and its embedding gradient.
pub fn cv_ec(emb: &Matrix, groups: &[IdentityGroup]) -> Result<ConstraintOutput> {
    let active: Vec<&IdentityGroup> = groups
        .iter()
        .filter(|g| !g.first.is_empty() && !g.second.is_empty())
        .collect();
    if active.is_empty() {
        return Err(Error::validation("no identity has samples in both views"));
    }
    let m = active.len() as f64;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(emb.rows(), emb.cols());
    for g in &active {
        check_rows(emb, &g.first)?;
        check_rows(emb, &g.second)?;
        let (k1, k2) = (g.first.len() as f64, g.second.len() as f64);
        let mean1 = mean_row(emb, &g.first);
        let mean2 = mean_row(emb, &g.second);
        // Σₚ Σ_q ‖aₚ − b_q‖² = K¹K²‖ā − b̄‖² + K² Σ‖aₚ − ā‖² + K¹ Σ‖b_q − b̄‖²
        let pair_sum = k1 * k2 * squared_distance(&mean1, &mean2)
            + k2 * spread(emb, &g.first, &mean1)
            + k1 * spread(emb, &g.second, &mean2);
        value += pair_sum / (2.0 * m * k1 * k2);
        for &p in &g.first {
            let x = emb.row(p).to_vec();
            add_into(grad.row_mut(p), 1.0 / (m * k1), &x, &mean2);
        }
        for &q in &g.second {
            let x = emb.row(q).to_vec();
            add_into(grad.row_mut(q), 1.0 / (m * k2), &x, &mean1);
        }
    }
    Ok(ConstraintOutput {
        value,
        grad,
        skipped: groups.len() - active.len(),
    })
}

/// Single-center loss against global centers (one row per identity).
pub fn center_loss(emb: &Matrix, groups: &[ClassGroup], centers: &Matrix) -> Result<ConstraintOutput> {
    if centers.cols() != emb.cols() {
        return Err(Error::sizing("center and embedding dimensions differ"));
    }
    let active: Vec<&ClassGroup> = groups.iter().filter(|g| !g.members.is_empty()).collect();
    if active.is_empty() {
        return Err(Error::validation("no identity has any samples"));
    }
    let m = active.len() as f64;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(emb.rows(), emb.cols());
    for g in &active {
        if g.identity >= centers.rows() {
            return Err(Error::validation(format!("no center for identity {}", g.identity)));
        }
        check_rows(emb, &g.members)?;
        let c = centers.row(g.identity);
        let k = g.members.len() as f64;
        value += spread(emb, &g.members, c) / (2.0 * m * k);
        for &r in &g.members {
            let x = emb.row(r).to_vec();
            add_into(grad.row_mut(r), 1.0 / (m * k), &x, c);
        }
    }
    Ok(ConstraintOutput {
        value,
        grad,
        skipped: groups.len() - active.len(),
    })
}

/// Per-identity global centers and per-view centers, one row per identity.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterBank {
    pub global: Matrix,
    pub per_view: Vec<Matrix>,
}

impl CenterBank {
    pub fn num_identities(&self) -> usize {
        self.global.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.global.cols()
    }

    pub fn num_views(&self) -> usize {
        self.per_view.len()
    }

    pub fn zeros_like(&self) -> CenterBank {
        CenterBank {
            global: Matrix::zeros(self.global.rows(), self.global.cols()),
            per_view: self
                .per_view
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.global.is_finite() && self.per_view.iter().all(Matrix::is_finite)
    }

    fn same_shape(&self, other: &CenterBank) -> bool {
        self.global.shape() == other.global.shape()
            && self.per_view.len() == other.per_view.len()
            && self
                .per_view
                .iter()
                .zip(&other.per_view)
                .all(|(a, b)| a.shape() == b.shape())
    }

    /// `C := C − α·∂L/∂C` for every center.
    pub fn step(&mut self, grads: &CenterBank, alpha: f64) -> Result<()> {
        if !self.same_shape(grads) {
            return Err(Error::sizing("center gradient does not match the bank"));
        }
        if !grads.is_finite() {
            return Err(Error::numeric("non-finite center gradient"));
        }
        self.global.add_scaled(&grads.global, -alpha)?;
        for (c, g) in self.per_view.iter_mut().zip(&grads.per_view) {
            c.add_scaled(g, -alpha)?;
        }
        Ok(())
    }

    /// Root-mean-square distance between matching centers of two banks.
    pub fn rms_distance(&self, other: &CenterBank) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(Error::sizing("banks have different shapes"));
        }
        let mut total = squared_distance(self.global.data(), other.global.data());
        for (a, b) in self.per_view.iter().zip(&other.per_view) {
            total += squared_distance(a.data(), b.data());
        }
        let rows = self.global.rows() * (1 + self.per_view.len());
        Ok((total / rows as f64).sqrt())
    }
}

#[derive(Debug, Clone)]
pub struct CenterLossOutput {
    pub value: f64,
    pub grad_embeddings: Matrix,
    /// Gradient for every center in the bank; zero for identities outside
    /// the batch.
    pub grad_centers: CenterBank,
    pub skipped: usize,
}

/// Cross-view center loss. `views` names the bank views matching the
/// `first` and `second` rows of each group.
pub fn cv_cl(
    emb: &Matrix,
    groups: &[IdentityGroup],
    bank: &CenterBank,
    views: [usize; 2],
) -> Result<CenterLossOutput> {
    if bank.embed_dim() != emb.cols() {
        return Err(Error::sizing("center and embedding dimensions differ"));
    }
    if views.iter().any(|&v| v >= bank.num_views()) {
        return Err(Error::validation("bank has no centers for the requested views"));
    }
    let active: Vec<&IdentityGroup> = groups
        .iter()
        .filter(|g| !g.first.is_empty() && !g.second.is_empty())
        .collect();
    if active.is_empty() {
        return Err(Error::validation("no identity has samples in both views"));
    }
    let m = active.len() as f64;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(emb.rows(), emb.cols());
    let mut grad_centers = bank.zeros_like();
    for g in &active {
        let i = g.identity;
        if i >= bank.num_identities() {
            return Err(Error::validation(format!("no centers for identity {i}")));
        }
        let global = bank.global.row(i);
        for (rows, view) in [(&g.first, views[0]), (&g.second, views[1])] {
            check_rows(emb, rows)?;
            let k = rows.len() as f64;
            let vc = bank.per_view[view].row(i);
            value += (spread(emb, rows, vc) + spread(emb, rows, global)) / (2.0 * m * k);
            let s = 1.0 / (m * k);
            for &r in rows.iter() {
                let x = emb.row(r).to_vec();
                add_into(grad.row_mut(r), s, &x, vc);
                add_into(grad.row_mut(r), s, &x, global);
                add_into(grad_centers.per_view[view].row_mut(i), s, vc, &x);
                add_into(grad_centers.global.row_mut(i), s, global, &x);
            }
        }
    }
    Ok(CenterLossOutput {
        value,
        grad_embeddings: grad,
        grad_centers,
        skipped: groups.len() - active.len(),
    })
}

/// `Σᵥ Lₛᵛ + λ₁·L_cv-ec`.
pub fn joint_loss_l1(softmax: &[f64], cv_ec: f64, lambda1: f64) -> f64 {
    softmax.iter().sum::<f64>() + lambda1 * cv_ec
}

/// `Σᵥ Lₛᵛ + λ₂·L_cv-cl`.
pub fn joint_loss_l2(softmax: &[f64], cv_cl: f64, lambda2: f64) -> f64 {
    softmax.iter().sum::<f64>() + lambda2 * cv_cl
}

/// Class centers from embeddings: per-view means, and the mean over all of
/// an identity's samples. A view in which an identity has no samples gets
/// the identity's global mean.
pub fn init_centers(
    emb: &Matrix,
    identities: &[usize],
    views: &[usize],
    num_identities: usize,
    num_views: usize,
) -> Result<CenterBank> {
    if identities.len() != emb.rows() || views.len() != emb.rows() {
        return Err(Error::sizing("labels do not match embedding rows"));
    }
    let d = emb.cols();
    let mut global = Matrix::zeros(num_identities, d);
    let mut per_view = vec![Matrix::zeros(num_identities, d); num_views];
    let mut count = vec![0usize; num_identities];
    let mut view_count = vec![vec![0usize; num_views]; num_identities];
    for (r, (&i, &v)) in identities.iter().zip(views).enumerate() {
        if i >= num_identities || v >= num_views {
            return Err(Error::validation(format!("label ({i}, {v}) out of range")));
        }
        count[i] += 1;
        view_count[i][v] += 1;
        for (c, x) in global.row_mut(i).iter_mut().zip(emb.row(r)) {
            *c += x;
        }
        for (c, x) in per_view[v].row_mut(i).iter_mut().zip(emb.row(r)) {
            *c += x;
        }
    }
    for i in 0..num_identities {
        if count[i] == 0 {
            return Err(Error::validation(format!("identity {i} has no embeddings")));
        }
        let n = count[i] as f64;
        global.row_mut(i).iter_mut().for_each(|c| *c /= n);
        for v in 0..num_views {
            let k = view_count[i][v];
            if k == 0 {
                let g = global.row(i).to_vec();
                per_view[v].row_mut(i).copy_from_slice(&g);
            } else {
                per_view[v].row_mut(i).iter_mut().for_each(|c| *c /= k as f64);
            }
        }
    }
    Ok(CenterBank { global, per_view })
}

/// Groups rows by identity for a pair of views. Identities present in only
/// one of them are kept (with an empty side) so losses can count them.
pub fn group_by_identity(identities: &[usize], views: &[usize], pair: [usize; 2]) -> Vec<IdentityGroup> {
    let num_identities = identities.iter().map(|i| i + 1).max().unwrap_or(0);
    let mut groups: Vec<IdentityGroup> = (0..num_identities)
        .map(|identity| IdentityGroup {
            identity,
            first: Vec::new(),
            second: Vec::new(),
        })
        .collect();
    for (r, (&i, &v)) in identities.iter().zip(views).enumerate() {
        if v == pair[0] {
            groups[i].first.push(r);
        } else if v == pair[1] {
            groups[i].second.push(r);
        }
    }
    groups.retain(|g| !g.first.is_empty() || !g.second.is_empty());
    groups
}

/// The cross-view Euclidean constraint evaluated over a whole sample set:
/// the mean squared same-identity distance between two views.
pub fn cross_view_intra_class_distance(
    emb: &Matrix,
    identities: &[usize],
    views: &[usize],
    pair: [usize; 2],
) -> Result<f64> {
    if identities.len() != emb.rows() || views.len() != emb.rows() {
        return Err(Error::sizing("labels do not match embedding rows"));
    }
    let groups = group_by_identity(identities, views, pair);
    Ok(cv_ec(emb, &groups)?.value)
}

/// Mean of the pairwise cross-view distance over every pair of views that
/// shares at least one identity. Equals the two-view distance when there are
/// only two views.
pub fn mean_cross_view_distance(
    emb: &Matrix,
    identities: &[usize],
    views: &[usize],
    num_views: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..num_views {
        for b in a + 1..num_views {
            match cross_view_intra_class_distance(emb, identities, views, [a, b]) {
                Ok(d) => {
                    total += d;
                    pairs += 1;
                }
                Err(Error::Validation(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    if pairs == 0 {
        return Err(Error::validation("no identity appears in two views"));
    }
    Ok(total / pairs as f64)
}
