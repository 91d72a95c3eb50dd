//! Multi-view identity datasets: synthetic generation, CSV ingest and
//! identity-disjoint splits.
//!
//! The synthetic generator draws one latent code per identity and one affine
//! distortion per view, so the same identity looks systematically different
//! in each view. That controlled gap is what the cross-view constraints are
//! meant to close.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::{squared_distance, Matrix, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub identity: usize,
    pub view: usize,
    pub features: Vec<f64>,
}

/// Ordered samples with `identity < num_identities`, `view < num_views` and a
/// fixed feature dimension. Every identity appears at least once.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    num_identities: usize,
    num_views: usize,
    dim: usize,
}

impl Dataset {
    /// Infers the identity and view counts as one past the largest label.
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::validation("dataset has no samples"))?;
        let dim = first.features.len();
        if dim == 0 {
            return Err(Error::validation("samples have no features"));
        }
        let mut num_identities = 0;
        let mut num_views = 0;
        for (n, s) in samples.iter().enumerate() {
            if s.features.len() != dim {
                return Err(Error::sizing(format!(
                    "sample {n} has {} features, expected {dim}",
                    s.features.len()
                )));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("sample {n} has a non-finite feature")));
            }
            num_identities = num_identities.max(s.identity + 1);
            num_views = num_views.max(s.view + 1);
        }
        let mut seen = vec![false; num_identities];
        for s in &samples {
            seen[s.identity] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::validation(format!(
                "identity {missing} has no samples; labels must be dense 0..{num_identities}"
            )));
        }
        Ok(Dataset {
            samples,
            num_identities,
            num_views,
            dim,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_identities(&self) -> usize {
        self.num_identities
    }

    pub fn num_views(&self) -> usize {
        self.num_views
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn identities(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.identity).collect()
    }

    pub fn views(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.view).collect()
    }

    pub fn count_in_view(&self, view: usize) -> usize {
        self.samples.iter().filter(|s| s.view == view).count()
    }

    pub fn index(&self) -> IdentityViewIndex {
        index_by_identity_view(self)
    }

    /// Keeps the given views, relabelled `0..views.len()` in the given order.
    pub fn select_views(&self, views: &[usize]) -> Result<Dataset> {
        let samples: Vec<Sample> = self
            .samples
            .iter()
            .filter_map(|s| {
                views.iter().position(|&v| v == s.view).map(|nv| Sample {
                    view: nv,
                    ..s.clone()
                })
            })
            .collect();
        relabel_dense(samples)
    }

    /// View `view` becomes view 0 and every other view is pooled into view 1.
    pub fn one_vs_rest(&self, view: usize) -> Result<Dataset> {
        if view >= self.num_views {
            return Err(Error::validation(format!("view {view} out of range")));
        }
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                view: usize::from(s.view != view),
                ..s.clone()
            })
            .collect();
        // identity labels are unchanged, so the head dimension still matches
        Dataset::new(samples)
    }

    /// Writes `identity,view,f1,...,fD` lines, shortest round-trip decimals.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            write!(out, "{},{}", s.identity, s.view).unwrap();
            for f in &s.features {
                write!(out, ",{f:?}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    /// Mean raw-feature cross-view distance (identities present in both
    /// views) and mean within-view, same-identity pairwise distance.
    pub fn view_gap(&self, view_a: usize, view_b: usize) -> Result<(f64, f64)> {
        let index = self.index();
        let mut cross = 0.0;
        let mut cross_n = 0usize;
        let mut within = 0.0;
        let mut within_n = 0usize;
        for i in 0..self.num_identities {
            let a = index.positions(i, view_a);
            let b = index.positions(i, view_b);
            if !a.is_empty() && !b.is_empty() {
                let mut acc = 0.0;
                for &p in a {
                    for &q in b {
                        acc += squared_distance(&self.samples[p].features, &self.samples[q].features);
                    }
                }
                cross += acc / (a.len() * b.len()) as f64;
                cross_n += 1;
            }
            for list in [a, b] {
                if list.len() < 2 {
                    continue;
                }
                let mut acc = 0.0;
                let mut pairs = 0usize;
                for (k, &p) in list.iter().enumerate() {
                    for &q in &list[k + 1..] {
                        acc += squared_distance(&self.samples[p].features, &self.samples[q].features);
                        pairs += 1;
                    }
                }
                within += acc / pairs as f64;
                within_n += 1;
            }
        }
        if cross_n == 0 || within_n == 0 {
            return Err(Error::validation("need identities with samples in both views and repeats within a view"));
        }
        Ok((cross / cross_n as f64, within / within_n as f64))
    }
}

fn relabel_dense(mut samples: Vec<Sample>) -> Result<Dataset> {
    let max = samples.iter().map(|s| s.identity).max().unwrap_or(0);
    let mut map = vec![usize::MAX; max + 1];
    let mut present: Vec<usize> = samples.iter().map(|s| s.identity).collect();
    present.sort_unstable();
    present.dedup();
    for (new, old) in present.into_iter().enumerate() {
        map[old] = new;
    }
    for s in &mut samples {
        s.identity = map[s.identity];
    }
    Dataset::new(samples)
}

/// Parameters of the synthetic generator.
///
/// Features are `(B + s·G_v)·z_i + s·c_v + noise`, where `B` is a base
/// projection shared by all views, `G_v` and `c_v` are the per-view
/// distortion, `s` is `view_transform_scale` and noise is
/// `N(0, noise_sigma²)` per coordinate. With `s = 0` every view sees the same
/// features for an identity.
#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub identities: usize,
    pub views: usize,
    pub samples_per_identity_per_view: usize,
    pub latent_dim: usize,
    pub dim: usize,
    pub view_transform_scale: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            identities: 40,
            views: 2,
            samples_per_identity_per_view: 6,
            latent_dim: 8,
            dim: 32,
            view_transform_scale: 1.0,
            noise_sigma: 0.1,
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("identities", self.identities),
            ("views", self.views),
            ("samples_per_identity_per_view", self.samples_per_identity_per_view),
            ("latent_dim", self.latent_dim),
            ("dim", self.dim),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::validation(format!("{name} must be at least 1")));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::validation("noise_sigma must be finite and >= 0"));
        }
        if !self.view_transform_scale.is_finite() {
            return Err(Error::validation("view_transform_scale must be finite"));
        }
        Ok(())
    }
}

/// Draws a dataset. Output is a pure function of the spec.
pub fn generate(spec: &GenSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = SeededRng::new(spec.seed);
    let entry_scale = 1.0 / (spec.latent_dim as f64).sqrt();
    let gaussian_matrix = |rng: &mut SeededRng, rows: usize, cols: usize, scale: f64| {
        let data = (0..rows * cols).map(|_| scale * rng.normal()).collect();
        Matrix::new(rows, cols, data).expect("shape")
    };

    let base = gaussian_matrix(&mut rng, spec.dim, spec.latent_dim, entry_scale);
    let mut transforms = Vec::with_capacity(spec.views);
    for _ in 0..spec.views {
        let mut a = gaussian_matrix(&mut rng, spec.dim, spec.latent_dim, entry_scale);
        a.scale(spec.view_transform_scale);
        a.add_scaled(&base, 1.0)?;
        let offset: Vec<f64> = (0..spec.dim)
            .map(|_| spec.view_transform_scale * rng.normal())
            .collect();
        transforms.push((a, offset));
    }
    let latents: Vec<Vec<f64>> = (0..spec.identities)
        .map(|_| (0..spec.latent_dim).map(|_| rng.normal()).collect())
        .collect();

    let mut samples = Vec::with_capacity(spec.identities * spec.views * spec.samples_per_identity_per_view);
    for (identity, z) in latents.iter().enumerate() {
        for (view, (a, offset)) in transforms.iter().enumerate() {
            let clean = a.mul_vec(z)?;
            for _ in 0..spec.samples_per_identity_per_view {
                let features = clean
                    .iter()
                    .zip(offset)
                    .map(|(c, o)| c + o + spec.noise_sigma * rng.normal())
                    .collect();
                samples.push(Sample {
                    identity,
                    view,
                    features,
                });
            }
        }
    }
    Dataset::new(samples)
}

/// Parses `identity,view,f1,...,fD` lines. Blank lines are not allowed.
pub fn parse_csv(text: &str, source: &Path) -> Result<Dataset> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: source.to_path_buf(),
        line,
        message,
    };
    let mut samples = Vec::new();
    let mut dim = None;
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let mut fields = line.split(',');
        let identity = fields
            .next()
            .filter(|f| !f.trim().is_empty())
            .ok_or_else(|| parse_err(line_no, "empty line".into()))?;
        let identity: usize = identity
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, format!("identity {identity:?} is not a non-negative integer")))?;
        let view = fields
            .next()
            .ok_or_else(|| parse_err(line_no, "missing view field".into()))?;
        let view: usize = view
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, format!("view {view:?} is not a non-negative integer")))?;
        let features = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(line_no, format!("feature {f:?} is not a finite number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if features.is_empty() {
            return Err(parse_err(line_no, "row has no features".into()));
        }
        match dim {
            None => dim = Some(features.len()),
            Some(d) if d != features.len() => {
                return Err(parse_err(
                    line_no,
                    format!("row has {} features, earlier rows have {d}", features.len()),
                ))
            }
            Some(_) => {}
        }
        samples.push(Sample {
            identity,
            view,
            features,
        });
    }
    if samples.is_empty() {
        return Err(parse_err(0, "file contains no samples".into()));
    }
    Dataset::new(samples)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// `⌊M/2⌋` training identities.
    HalfIdentity,
    /// An explicit number of training identities.
    FixedCounts { train_identities: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub seed: u64,
}

/// Identity-disjoint train/test partition. Identities are chosen by a seeded
/// shuffle and relabelled densely inside each part, in ascending order of
/// their original label.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let m = ds.num_identities();
    if m < 2 {
        return Err(Error::validation(format!("cannot split {m} identities")));
    }
    let train_count = match spec.mode {
        SplitMode::HalfIdentity => m / 2,
        SplitMode::FixedCounts { train_identities } => train_identities,
    };
    if train_count == 0 || train_count >= m {
        return Err(Error::validation(format!(
            "training identity count {train_count} must be in 1..{m}"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    SeededRng::new(spec.seed).shuffle(&mut order);
    let mut in_train = vec![false; m];
    for &i in &order[..train_count] {
        in_train[i] = true;
    }
    let (train, test): (Vec<Sample>, Vec<Sample>) = ds
        .samples()
        .iter()
        .cloned()
        .partition(|s| in_train[s.identity]);
    Ok((relabel_dense(train)?, relabel_dense(test)?))
}

/// Sample positions grouped by identity, then view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentityViewIndex {
    num_views: usize,
    positions: Vec<Vec<Vec<usize>>>,
}

impl IdentityViewIndex {
    /// Positions of identity `identity` in view `view`, in dataset order.
    /// Empty for out-of-range labels.
    pub fn positions(&self, identity: usize, view: usize) -> &[usize] {
        self.positions
            .get(identity)
            .and_then(|v| v.get(view))
            .map_or(&[], Vec::as_slice)
    }

    pub fn count(&self, identity: usize, view: usize) -> usize {
        self.positions(identity, view).len()
    }

    pub fn num_identities(&self) -> usize {
        self.positions.len()
    }

    pub fn num_views(&self) -> usize {
        self.num_views
    }

    /// Identities with at least one sample in each of the two views.
    pub fn cross_view_identities(&self, view_a: usize, view_b: usize) -> Vec<usize> {
        (0..self.num_identities())
            .filter(|&i| self.count(i, view_a) > 0 && self.count(i, view_b) > 0)
            .collect()
    }

    pub fn total(&self) -> usize {
        self.positions.iter().flatten().map(Vec::len).sum()
    }
}

pub fn index_by_identity_view(ds: &Dataset) -> IdentityViewIndex {
    let mut positions = vec![vec![Vec::new(); ds.num_views()]; ds.num_identities()];
    for (n, s) in ds.samples().iter().enumerate() {
        positions[s.identity][s.view].push(n);
    }
    IdentityViewIndex {
        num_views: ds.num_views(),
        positions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> GenSpec {
        GenSpec {
            identities: 3,
            views: 2,
            samples_per_identity_per_view: 2,
            latent_dim: 3,
            dim: 5,
            view_transform_scale: 0.5,
            noise_sigma: 0.1,
            seed: 11,
        }
    }

    #[test]
    fn generate_counts() {
        let ds = generate(&small_spec()).unwrap();
        assert_eq!(ds.len(), 12);
        assert_eq!((ds.num_identities(), ds.num_views(), ds.dim()), (3, 2, 5));
        let index = ds.index();
        for i in 0..3 {
            for v in 0..2 {
                assert_eq!(index.count(i, v), 2);
            }
        }
        assert_eq!(index.total(), ds.len());
    }

    #[test]
    fn generate_is_deterministic() {
        let a = generate(&small_spec()).unwrap();
        let b = generate(&small_spec()).unwrap();
        assert_eq!(a.to_csv_string(), b.to_csv_string());
        let other = generate(&GenSpec {
            seed: 12,
            ..small_spec()
        })
        .unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn degenerate_transform_aligns_views() {
        let ds = generate(&GenSpec {
            view_transform_scale: 0.0,
            noise_sigma: 0.0,
            ..small_spec()
        })
        .unwrap();
        let index = ds.index();
        for i in 0..3 {
            let a = &ds.samples()[index.positions(i, 0)[0]].features;
            for &q in index.positions(i, 1) {
                assert_eq!(a, &ds.samples()[q].features);
            }
        }
        let (cross, within) = ds.view_gap(0, 1).unwrap();
        assert_eq!(cross, 0.0);
        assert_eq!(within, 0.0);
    }

    #[test]
    fn generated_views_have_a_gap() {
        let ds = generate(&GenSpec {
            identities: 10,
            samples_per_identity_per_view: 4,
            ..small_spec()
        })
        .unwrap();
        let (cross, within) = ds.view_gap(0, 1).unwrap();
        assert!(cross > within, "cross {cross} within {within}");
    }

    #[test]
    fn generate_rejects_bad_spec() {
        for spec in [
            GenSpec { identities: 0, ..small_spec() },
            GenSpec { views: 0, ..small_spec() },
            GenSpec { samples_per_identity_per_view: 0, ..small_spec() },
            GenSpec { noise_sigma: -1.0, ..small_spec() },
        ] {
            assert!(matches!(generate(&spec), Err(Error::Validation(_))));
        }
    }

    #[test]
    fn csv_two_rows() {
        let ds = parse_csv("0,0,1.0,2.0\n0,1,1.5,2.5\n", Path::new("t.csv")).unwrap();
        assert_eq!((ds.num_identities(), ds.num_views(), ds.dim()), (1, 2, 2));
        assert_eq!(ds.samples()[1].features, vec![1.5, 2.5]);
    }

    #[test]
    fn csv_empty_is_error() {
        assert!(matches!(parse_csv("", Path::new("e.csv")), Err(Error::Parse { .. })));
    }

    #[test]
    fn csv_inconsistent_dim_names_line() {
        let err = parse_csv("0,0,1,2\n1,1,3,4\n1,0,1,2,3\n", Path::new("d.csv")).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_non_numeric_names_line() {
        let err = parse_csv("0,0,1,2\n0,x,3,4\n", Path::new("d.csv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_csv("0,0,1,abc\n", Path::new("d.csv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = generate(&small_spec()).unwrap();
        let back = parse_csv(&ds.to_csv_string(), Path::new("r.csv")).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn split_half() {
        let ds = generate(&GenSpec {
            identities: 10,
            ..small_spec()
        })
        .unwrap();
        let spec = SplitSpec {
            mode: SplitMode::HalfIdentity,
            seed: 3,
        };
        let (train, test) = split(&ds, &spec).unwrap();
        assert_eq!(train.num_identities(), 5);
        assert_eq!(test.num_identities(), 5);
        assert_eq!(train.len() + test.len(), ds.len());
        // disjoint: no feature vector appears in both parts
        for s in train.samples() {
            assert!(!test.samples().iter().any(|t| t.features == s.features));
        }
        assert_eq!(split(&ds, &spec).unwrap(), (train, test));
    }

    #[test]
    fn split_fixed_counts() {
        let ds = generate(&GenSpec {
            identities: 10,
            ..small_spec()
        })
        .unwrap();
        let spec = SplitSpec {
            mode: SplitMode::FixedCounts { train_identities: 7 },
            seed: 0,
        };
        let (train, test) = split(&ds, &spec).unwrap();
        assert_eq!((train.num_identities(), test.num_identities()), (7, 3));
    }

    #[test]
    fn split_needs_two_identities() {
        let ds = parse_csv("0,0,1\n0,1,2\n", Path::new("s.csv")).unwrap();
        let spec = SplitSpec {
            mode: SplitMode::HalfIdentity,
            seed: 0,
        };
        assert!(matches!(split(&ds, &spec), Err(Error::Validation(_))));
    }

    #[test]
    fn index_handles_missing_view() {
        let ds = parse_csv("0,0,1\n0,1,2\n1,0,3\n1,0,4\n", Path::new("m.csv")).unwrap();
        let index = ds.index();
        assert_eq!(index.positions(1, 1), &[] as &[usize]);
        assert_eq!(index.positions(1, 0), &[2, 3]);
        assert_eq!(index.cross_view_identities(0, 1), vec![0]);
        assert_eq!(index.total(), 4);
    }

    #[test]
    fn one_vs_rest_pools_other_views() {
        let ds = generate(&GenSpec {
            views: 3,
            ..small_spec()
        })
        .unwrap();
        let pair = ds.one_vs_rest(1).unwrap();
        assert_eq!(pair.num_views(), 2);
        assert_eq!(pair.count_in_view(0), 6);
        assert_eq!(pair.count_in_view(1), 12);
        for (a, b) in ds.samples().iter().zip(pair.samples()) {
            assert_eq!(b.view == 0, a.view == 1);
        }
    }
}
