//! Benchmark fixtures shared by the criterion targets.

use crossview_core::dataset::{generate, GenSpec};
use crossview_core::losses::{group_by_identity, IdentityGroup};
use crossview_core::{Dataset, Matrix, SeededRng};

/// A synthetic two-view dataset of `identities` identities.
pub fn dataset(identities: usize) -> Dataset {
    generate(&GenSpec {
        identities,
        latent_dim: 3,
        seed: 5,
        ..GenSpec::default()
    })
    .expect("valid spec")
}

/// Random embeddings for `identities` identities with `k` samples per view,
/// plus their identity groups.
pub fn embeddings(identities: usize, k: usize, dim: usize) -> (Matrix, Vec<IdentityGroup>) {
    let mut rng = SeededRng::new(9);
    let rows = identities * 2 * k;
    let emb = Matrix::new(rows, dim, (0..rows * dim).map(|_| rng.normal()).collect()).expect("shape");
    let ids: Vec<usize> = (0..rows).map(|r| r / (2 * k)).collect();
    let views: Vec<usize> = (0..rows).map(|r| (r / k) % 2).collect();
    (emb, group_by_identity(&ids, &views, [0, 1]))
}
