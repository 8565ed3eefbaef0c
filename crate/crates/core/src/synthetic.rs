//! Synthetic cluster retrieval task for exercising the training loop.
//!
//! Each cluster has a random unit-norm center. Queries and targets are the
//! center plus independent Gaussian noise, and the target id is the cluster.
//! Clusters are split evenly across sources.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::encoder::ToyEncoder;
use crate::error::{Error, Result};
use crate::retrieval::{hit_at_1, rank_candidates, CandidatePool};
use crate::tensor::{l2_normalize, DenseMatrix};
use crate::train::FeatureSource;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterTaskSpec {
    pub clusters: usize,
    pub d_in: usize,
    pub noise: f64,
    pub sources: usize,
    pub train_per_cluster: usize,
    pub eval_per_cluster: usize,
    pub seed: u64,
}

impl Default for ClusterTaskSpec {
    fn default() -> Self {
        Self {
            clusters: 32,
            d_in: 32,
            noise: 0.1,
            sources: 4,
            train_per_cluster: 32,
            eval_per_cluster: 8,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClusterTask {
    pub sources: Vec<FeatureSource>,
    pub eval_queries: DenseMatrix,
    /// Cluster of each evaluation query.
    pub eval_labels: Vec<usize>,
    /// One noisy candidate per cluster, id `c<k>`.
    pub pool: DenseMatrix,
    pub pool_ids: Vec<String>,
}

fn cluster_id(k: usize) -> String {
    format!("c{k}")
}

fn noisy<R: Rng>(center: &[f64], noise: &Normal<f64>, rng: &mut R) -> Vec<f64> {
    center.iter().map(|c| c + noise.sample(rng)).collect()
}

pub fn generate_cluster_task(spec: &ClusterTaskSpec) -> Result<ClusterTask> {
    if spec.clusters < 2
        || spec.d_in == 0
        || spec.sources == 0
        || spec.train_per_cluster == 0
        || spec.eval_per_cluster == 0
    {
        return Err(Error::InvalidArgument(format!(
            "degenerate cluster task {spec:?}"
        )));
    }
    if !spec.clusters.is_multiple_of(spec.sources) {
        return Err(Error::InvalidArgument(format!(
            "{} clusters do not split evenly over {} sources",
            spec.clusters, spec.sources
        )));
    }
    let noise = Normal::new(0.0, spec.noise)
        .map_err(|e| Error::InvalidArgument(format!("noise {}: {e}", spec.noise)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers: Vec<Vec<f64>> = (0..spec.clusters)
        .map(|_| loop {
            let raw: Vec<f64> = (0..spec.d_in)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            if let Ok(v) = l2_normalize(&raw) {
                break v.into_vec();
            }
        })
        .collect();

    let per_source = spec.clusters / spec.sources;
    let mut sources = Vec::with_capacity(spec.sources);
    for s in 0..spec.sources {
        let mut queries = Vec::new();
        let mut targets = Vec::new();
        let mut ids = Vec::new();
        for (k, center) in centers
            .iter()
            .enumerate()
            .skip(s * per_source)
            .take(per_source)
        {
            for _ in 0..spec.train_per_cluster {
                queries.push(noisy(center, &noise, &mut rng));
                targets.push(noisy(center, &noise, &mut rng));
                ids.push(cluster_id(k));
            }
        }
        sources.push(FeatureSource::new(
            format!("source{s}"),
            1.0,
            DenseMatrix::from_rows(&queries)?,
            DenseMatrix::from_rows(&targets)?,
            ids,
        )?);
    }

    let mut eval = Vec::new();
    let mut eval_labels = Vec::new();
    for (k, c) in centers.iter().enumerate() {
        for _ in 0..spec.eval_per_cluster {
            eval.push(noisy(c, &noise, &mut rng));
            eval_labels.push(k);
        }
    }
    let pool: Vec<Vec<f64>> = centers.iter().map(|c| noisy(c, &noise, &mut rng)).collect();
    Ok(ClusterTask {
        sources,
        eval_queries: DenseMatrix::from_rows(&eval)?,
        eval_labels,
        pool: DenseMatrix::from_rows(&pool)?,
        pool_ids: (0..spec.clusters).map(cluster_id).collect(),
    })
}

/// Mean Hit@1 of the held-out queries against the one-per-cluster pool.
pub fn held_out_hit_at_1(encoder: &ToyEncoder, task: &ClusterTask) -> Result<f64> {
    let pool = CandidatePool::new(task.pool_ids.clone(), encoder.encode_batch(&task.pool)?)?;
    let queries = encoder.encode_batch(&task.eval_queries)?;
    let mut total = 0.0;
    for (i, label) in task.eval_labels.iter().enumerate() {
        let ranking = rank_candidates(queries.row(i), &pool)?;
        total += hit_at_1(&ranking, &[cluster_id(*label)])?;
    }
    Ok(total / task.eval_labels.len() as f64)
}
