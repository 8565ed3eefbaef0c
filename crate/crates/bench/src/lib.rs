//! Seeded fixtures shared by the criterion benches.

use mmembed_core::retrieval::CandidatePool;
use mmembed_core::selftest::random_matrix;
use mmembed_core::{ContrastiveBatch, DenseMatrix, SourceTable, ToyEncoder, TrainingBatch};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn matrix(seed: u64, rows: usize, cols: usize) -> DenseMatrix {
    random_matrix(&mut rng(seed), rows, cols)
}

/// In-batch contrastive problem with `n` pairs of `dim`-wide embeddings.
pub fn embedding_batch(n: usize, dim: usize) -> ContrastiveBatch {
    ContrastiveBatch::paired(matrix(1, n, dim), matrix(2, n, dim)).expect("paired batch")
}

/// Encoder plus a paired batch of raw features for grad-cache runs.
pub fn training_fixture(
    n: usize,
    d_in: usize,
    hidden: usize,
    d_out: usize,
) -> (ToyEncoder, TrainingBatch) {
    let enc = ToyEncoder::random(d_in, hidden, d_out, &mut rng(3));
    let batch =
        TrainingBatch::paired(matrix(4, n, d_in), matrix(5, n, d_in)).expect("paired batch");
    (enc, batch)
}

pub fn candidate_pool(m: usize, dim: usize) -> CandidatePool {
    let ids = (0..m).map(|i| format!("c{i}")).collect();
    CandidatePool::new(ids, matrix(6, m, dim)).expect("pool")
}

/// `sources` sources with weights 1..=sources, each large enough for any sub-batch.
pub fn source_table(sources: usize, examples: usize) -> SourceTable {
    let mut t = SourceTable::new();
    for s in 0..sources {
        t.insert(format!("s{s}"), (s + 1) as f64, examples)
            .expect("source");
    }
    t
}
