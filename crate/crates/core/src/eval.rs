//! Retrieval evaluation: embedding a test set with per-view networks,
//! probe-to-gallery distances, CMC curves, mean average precision, and the
//! four single/multi shot and query protocols.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::losses::mean_cross_view_distance;
use crate::math::{derive_seed, squared_distance, Matrix, SeededRng};
use crate::network::{ViewLabel, ViewNetwork};

/// Ranks at which CMC values are reported.
pub const REPORT_RANKS: [usize; 4] = [1, 5, 10, 20];

/// The networks used to embed a test set. A view without its own network
/// falls back to the public network.
#[derive(Debug, Clone)]
pub struct NetSet {
    view_nets: BTreeMap<usize, ViewNetwork>,
    public: Option<ViewNetwork>,
}

impl NetSet {
    pub fn new(nets: Vec<ViewNetwork>) -> Result<Self> {
        let mut view_nets = BTreeMap::new();
        let mut public = None;
        let mut dims = None;
        for net in nets {
            let d = (net.input_dim(), net.embed_dim());
            if *dims.get_or_insert(d) != d {
                return Err(Error::sizing("networks disagree on input or embedding dimension"));
            }
            match net.label() {
                ViewLabel::View(v) => {
                    if view_nets.insert(v, net).is_some() {
                        return Err(Error::validation(format!("two networks for view {v}")));
                    }
                }
                ViewLabel::Public => {
                    if public.replace(net).is_some() {
                        return Err(Error::validation("two public networks"));
                    }
                }
            }
        }
        if view_nets.is_empty() && public.is_none() {
            return Err(Error::validation("no networks given"));
        }
        Ok(NetSet { view_nets, public })
    }

    pub fn public(&self) -> Option<&ViewNetwork> {
        self.public.as_ref()
    }

    pub fn net_for(&self, view: usize) -> Result<&ViewNetwork> {
        self.view_nets
            .get(&view)
            .or(self.public.as_ref())
            .ok_or_else(|| Error::validation(format!("no network for view {view} and no public network")))
    }

    /// Embeds every sample with its view's network, optionally scaling each
    /// embedding to unit length.
    pub fn embed(&self, ds: &Dataset, normalize: bool) -> Result<Matrix> {
        let first = self.net_for(ds.samples().first().map_or(0, |s| s.view))?;
        if first.input_dim() != ds.dim() {
            return Err(Error::sizing(format!(
                "networks take {} features, data has {}",
                first.input_dim(),
                ds.dim()
            )));
        }
        let mut emb = Matrix::zeros(ds.len(), first.embed_dim());
        for (r, s) in ds.samples().iter().enumerate() {
            let mut e = self.net_for(s.view)?.embed(&s.features)?;
            if normalize {
                let n = e.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > 0.0 {
                    e.iter_mut().for_each(|x| *x /= n);
                }
            }
            emb.row_mut(r).copy_from_slice(&e);
        }
        Ok(emb)
    }
}

/// Squared Euclidean distances, one row per probe.
pub fn distance_matrix(probes: &Matrix, gallery: &Matrix) -> Result<Matrix> {
    if probes.cols() != gallery.cols() {
        return Err(Error::sizing("probe and gallery embedding widths differ"));
    }
    let mut d = Matrix::zeros(probes.rows(), gallery.rows());
    for (p, pr) in probes.iter_rows().enumerate() {
        for (g, gr) in gallery.iter_rows().enumerate() {
            d.row_mut(p)[g] = squared_distance(pr, gr);
        }
    }
    Ok(d)
}

/// Gallery indices of one probe row, nearest first. Ties keep gallery order.
fn ranking(row: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
    order
}

fn check_labels(dist: &Matrix, probe_ids: &[usize], gallery_ids: &[usize]) -> Result<()> {
    if dist.rows() != probe_ids.len() || dist.cols() != gallery_ids.len() {
        return Err(Error::sizing("identity lists do not match the distance matrix"));
    }
    if dist.rows() == 0 {
        return Err(Error::validation("no probes"));
    }
    if !dist.is_finite() {
        return Err(Error::numeric("non-finite distance"));
    }
    for &p in probe_ids {
        if !gallery_ids.contains(&p) {
            return Err(Error::validation(format!("probe identity {p} has no gallery match")));
        }
    }
    Ok(())
}

/// Cumulative match characteristic: entry `k − 1` is the fraction of probes
/// whose first correct gallery match is at rank `k` or better.
pub fn cmc(dist: &Matrix, probe_ids: &[usize], gallery_ids: &[usize]) -> Result<Vec<f64>> {
    check_labels(dist, probe_ids, gallery_ids)?;
    let mut hits = vec![0usize; gallery_ids.len()];
    for (p, &id) in probe_ids.iter().enumerate() {
        let first = ranking(dist.row(p))
            .iter()
            .position(|&g| gallery_ids[g] == id)
            .expect("checked above");
        hits[first] += 1;
    }
    let n = probe_ids.len() as f64;
    let mut acc = 0usize;
    Ok(hits
        .into_iter()
        .map(|h| {
            acc += h;
            acc as f64 / n
        })
        .collect())
}

/// Mean over probes of the average precision of the ranked gallery.
pub fn mean_ap(dist: &Matrix, probe_ids: &[usize], gallery_ids: &[usize]) -> Result<f64> {
    check_labels(dist, probe_ids, gallery_ids)?;
    let mut total = 0.0;
    for (p, &id) in probe_ids.iter().enumerate() {
        let mut found = 0usize;
        let mut ap = 0.0;
        for (rank, g) in ranking(dist.row(p)).into_iter().enumerate() {
            if gallery_ids[g] == id {
                found += 1;
                ap += found as f64 / (rank + 1) as f64;
            }
        }
        total += ap / found as f64;
    }
    Ok(total / probe_ids.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// One random gallery sample per identity, every probe queried.
    SingleShot,
    /// Full gallery, every probe queried.
    MultiShot,
    /// One random probe per identity against the full gallery.
    SingleQuery,
    /// The mean probe embedding of each identity against the full gallery.
    MultiQuery,
}

impl Protocol {
    pub const ALL: [Protocol; 4] = [
        Protocol::SingleShot,
        Protocol::MultiShot,
        Protocol::SingleQuery,
        Protocol::MultiQuery,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::SingleShot => "single-shot",
            Protocol::MultiShot => "multi-shot",
            Protocol::SingleQuery => "single-query",
            Protocol::MultiQuery => "multi-query",
        }
    }

    fn is_random(self) -> bool {
        matches!(self, Protocol::SingleShot | Protocol::SingleQuery)
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::validation(format!("unknown protocol {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub protocol: Protocol,
    /// Random trials for the single-shot and single-query protocols.
    pub trials: usize,
    pub seed: u64,
    pub probe_view: usize,
    pub gallery_view: usize,
    pub normalize: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            protocol: Protocol::SingleShot,
            trials: 10,
            seed: 0,
            probe_view: 0,
            gallery_view: 1,
            normalize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub protocol: Protocol,
    /// Trial-averaged CMC curve.
    pub cmc: Vec<f64>,
    /// `(k, rate)` for each reported rank, clamped to the gallery size.
    pub rank_k: Vec<(usize, f64)>,
    /// Standard deviation of the rank-1 rate across trials.
    pub rank1_std: f64,
    pub map: f64,
    /// Mean cross-view intra-class distance over view pairs of the test set.
    pub crossview_distance: f64,
    pub trials: usize,
    pub probes: usize,
}

impl EvalReport {
    pub fn rank(&self, k: usize) -> f64 {
        self.cmc[k.clamp(1, self.cmc.len()) - 1]
    }

    pub const CSV_HEADER: &'static str =
        "protocol,trials,probes,rank1,rank5,rank10,rank20,rank1_std,map,crossview_dist";

    pub fn csv_row(&self) -> String {
        let mut out = format!("{},{},{}", self.protocol, self.trials, self.probes);
        for &(_, r) in &self.rank_k {
            write!(out, ",{r:?}").unwrap();
        }
        write!(out, ",{:?},{:?},{:?}", self.rank1_std, self.map, self.crossview_distance).unwrap();
        out
    }
}

pub fn reports_csv(reports: &[EvalReport]) -> String {
    let mut out = format!("{}\n", EvalReport::CSV_HEADER);
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn cmc_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("protocol,rank,rate\n");
    for r in reports {
        for (k, v) in r.cmc.iter().enumerate() {
            writeln!(out, "{},{},{v:?}", r.protocol, k + 1).unwrap();
        }
    }
    out
}

/// Fixed-width summary for terminals.
pub fn reports_table(reports: &[EvalReport]) -> String {
    let mut out = format!(
        "{:<13} {:>7} {:>7} {:>7} {:>7} {:>7} {:>12}\n",
        "protocol", "rank1", "rank5", "rank10", "rank20", "mAP", "crossview"
    );
    for r in reports {
        write!(out, "{:<13}", r.protocol.as_str()).unwrap();
        for &(_, v) in &r.rank_k {
            write!(out, " {:>6.2}%", 100.0 * v).unwrap();
        }
        writeln!(out, " {:>6.2}% {:>12.4e}", 100.0 * r.map, r.crossview_distance).unwrap();
    }
    out
}

fn gather(emb: &Matrix, rows: &[usize]) -> Matrix {
    let mut m = Matrix::zeros(rows.len(), emb.cols());
    for (i, &r) in rows.iter().enumerate() {
        m.row_mut(i).copy_from_slice(emb.row(r));
    }
    m
}

/// Evaluates one protocol on a test set with probes from `probe_view` and
/// gallery from `gallery_view`. Probes whose identity is absent from the
/// gallery view are left out.
pub fn evaluate(nets: &NetSet, test: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    let emb = nets.embed(test, opts.normalize)?;
    evaluate_embeddings(&emb, test, opts)
}

/// [`evaluate`] on precomputed embeddings, one row per test sample.
pub fn evaluate_embeddings(emb: &Matrix, test: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    if emb.rows() != test.len() {
        return Err(Error::sizing("embedding rows do not match the test set"));
    }
    if opts.probe_view == opts.gallery_view {
        return Err(Error::validation("probe and gallery views must differ"));
    }
    if opts.trials == 0 {
        return Err(Error::validation("trials must be at least 1"));
    }
    let index = test.index();
    let shared = index.cross_view_identities(opts.probe_view, opts.gallery_view);
    if shared.is_empty() {
        return Err(Error::validation(format!(
            "no identity appears in both view {} and view {}",
            opts.probe_view, opts.gallery_view
        )));
    }
    let gallery_identities: Vec<usize> = (0..index.num_identities())
        .filter(|&i| index.count(i, opts.gallery_view) > 0)
        .collect();
    let full_gallery: Vec<usize> = gallery_identities
        .iter()
        .flat_map(|&i| index.positions(i, opts.gallery_view).iter().copied())
        .collect();
    let all_probes: Vec<usize> = shared
        .iter()
        .flat_map(|&i| index.positions(i, opts.probe_view).iter().copied())
        .collect();
    let ids = test.identities();
    let pick = |rows: &[usize]| rows.iter().map(|&r| ids[r]).collect::<Vec<_>>();

    let trials = if opts.protocol.is_random() { opts.trials } else { 1 };
    let mut rng = SeededRng::new(derive_seed(opts.seed, &format!("eval/{}", opts.protocol)));
    let mut cmc_sum: Vec<f64> = Vec::new();
    let mut rank1 = Vec::with_capacity(trials);
    let mut map_sum = 0.0;
    let mut probes = 0;
    for _ in 0..trials {
        let (probe_emb, probe_ids, gallery_rows) = match opts.protocol {
            Protocol::SingleShot => {
                let gallery: Vec<usize> = gallery_identities
                    .iter()
                    .map(|&i| {
                        let p = index.positions(i, opts.gallery_view);
                        p[rng.below(p.len())]
                    })
                    .collect();
                (gather(emb, &all_probes), pick(&all_probes), gallery)
            }
            Protocol::MultiShot => (gather(emb, &all_probes), pick(&all_probes), full_gallery.clone()),
            Protocol::SingleQuery => {
                let chosen: Vec<usize> = shared
                    .iter()
                    .map(|&i| {
                        let p = index.positions(i, opts.probe_view);
                        p[rng.below(p.len())]
                    })
                    .collect();
                (gather(emb, &chosen), pick(&chosen), full_gallery.clone())
            }
            Protocol::MultiQuery => {
                let mut m = Matrix::zeros(shared.len(), emb.cols());
                for (k, &i) in shared.iter().enumerate() {
                    let p = index.positions(i, opts.probe_view);
                    for &r in p {
                        for (a, b) in m.row_mut(k).iter_mut().zip(emb.row(r)) {
                            *a += b / p.len() as f64;
                        }
                    }
                }
                (m, shared.clone(), full_gallery.clone())
            }
        };
        let dist = distance_matrix(&probe_emb, &gather(emb, &gallery_rows))?;
        let gallery_ids = pick(&gallery_rows);
        let curve = cmc(&dist, &probe_ids, &gallery_ids)?;
        map_sum += mean_ap(&dist, &probe_ids, &gallery_ids)?;
        rank1.push(curve[0]);
        if cmc_sum.is_empty() {
            cmc_sum = vec![0.0; curve.len()];
        }
        cmc_sum.iter_mut().zip(&curve).for_each(|(s, c)| *s += c);
        probes = probe_ids.len();
    }
    let t = trials as f64;
    let cmc: Vec<f64> = cmc_sum.into_iter().map(|s| s / t).collect();
    let mean1 = rank1.iter().sum::<f64>() / t;
    let rank1_std = (rank1.iter().map(|r| (r - mean1).powi(2)).sum::<f64>() / t).sqrt();
    let rank_k = REPORT_RANKS
        .iter()
        .map(|&k| (k, cmc[k.min(cmc.len()) - 1]))
        .collect();
    let crossview_distance = mean_cross_view_distance(emb, &ids, &test.views(), test.num_views())?;
    Ok(EvalReport {
        protocol: opts.protocol,
        cmc,
        rank_k,
        rank1_std,
        map: map_sum / t,
        crossview_distance,
        trials,
        probes,
    })
}
