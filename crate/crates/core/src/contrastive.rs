//! InfoNCE over temperature-scaled cosine logits, its analytic gradient, and
//! the two-pass gradient-cache procedure.
//!
//! For query `i` with positive target `p(i)` and allowed negative set `N_i`
//! the per-query loss is
//!
//! ```text
//! l_i = logsumexp_{j in {p(i)} ∪ N_i} (cos(q_i, t_j) / tau) - cos(q_i, t_p(i)) / tau
//! ```
//!
//! and the batch loss is the mean over queries. Only target rows are ever
//! negatives; queries never compete with each other.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{row_norms, similarity_matrix, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HardNegativePolicy {
    /// Hard negatives of query `i` are negatives for query `i` only.
    PerQuery,
    /// Every hard negative is a negative for every query.
    #[default]
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub temperature: f64,
    pub false_negative_masking: bool,
    pub hard_negative_policy: HardNegativePolicy,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.02,
            false_negative_masking: true,
            hard_negative_policy: HardNegativePolicy::Pooled,
        }
    }
}

impl LossConfig {
    pub fn with_temperature(temperature: f64) -> Self {
        Self {
            temperature,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Query embeddings against a shared target matrix holding the positives,
/// in-batch negatives and hard negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub queries: DenseMatrix,
    pub targets: DenseMatrix,
    pub positive_index: Vec<usize>,
    pub target_ids: Vec<String>,
    pub hard_negative_rows: Vec<Vec<usize>>,
    /// Per query, target rows removed from its negative set.
    excluded: Vec<Vec<usize>>,
}

fn validate_layout(
    n_queries: usize,
    n_targets: usize,
    positive_index: &[usize],
    target_ids: &[String],
    hard_negative_rows: &[Vec<usize>],
) -> Result<()> {
    if positive_index.len() != n_queries {
        return Err(Error::shape(format!(
            "{} positive indices for {n_queries} queries",
            positive_index.len()
        )));
    }
    if target_ids.len() != n_targets {
        return Err(Error::shape(format!(
            "{} target ids for {n_targets} targets",
            target_ids.len()
        )));
    }
    if hard_negative_rows.len() != n_queries {
        return Err(Error::shape(format!(
            "{} hard-negative lists for {n_queries} queries",
            hard_negative_rows.len()
        )));
    }
    for (i, &p) in positive_index.iter().enumerate() {
        if p >= n_targets {
            return Err(Error::InvalidArgument(format!(
                "query {i} positive index {p} out of range ({n_targets} targets)"
            )));
        }
        for &h in &hard_negative_rows[i] {
            if h >= n_targets || h == p {
                return Err(Error::InvalidArgument(format!(
                    "query {i} hard negative {h} is out of range or its own positive"
                )));
            }
        }
    }
    Ok(())
}

impl ContrastiveBatch {
    pub fn new(
        queries: DenseMatrix,
        targets: DenseMatrix,
        positive_index: Vec<usize>,
        target_ids: Vec<String>,
    ) -> Result<Self> {
        let b = queries.rows();
        Self::with_hard_negatives(
            queries,
            targets,
            positive_index,
            target_ids,
            vec![Vec::new(); b],
        )
    }

    pub fn with_hard_negatives(
        queries: DenseMatrix,
        targets: DenseMatrix,
        positive_index: Vec<usize>,
        target_ids: Vec<String>,
        hard_negative_rows: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if queries.cols() != targets.cols() {
            return Err(Error::shape(format!(
                "query dim {} vs target dim {}",
                queries.cols(),
                targets.cols()
            )));
        }
        validate_layout(
            queries.rows(),
            targets.rows(),
            &positive_index,
            &target_ids,
            &hard_negative_rows,
        )?;
        let excluded = vec![Vec::new(); queries.rows()];
        Ok(Self {
            queries,
            targets,
            positive_index,
            target_ids,
            hard_negative_rows,
            excluded,
        })
    }

    /// Diagonal layout: query `i` is paired with target row `i`, target ids are row numbers.
    pub fn paired(queries: DenseMatrix, targets: DenseMatrix) -> Result<Self> {
        let b = queries.rows();
        let ids = (0..targets.rows()).map(|j| j.to_string()).collect();
        Self::new(queries, targets, (0..b).collect(), ids)
    }

    pub fn len(&self) -> usize {
        self.queries.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.rows() == 0
    }

    pub fn excluded(&self, query: usize) -> &[usize] {
        &self.excluded[query]
    }

    /// Per query, whether each target row takes part in its softmax.
    fn allowed(&self, policy: HardNegativePolicy) -> Vec<Vec<bool>> {
        let m = self.targets.rows();
        let mut hard_union = vec![false; m];
        if policy == HardNegativePolicy::PerQuery {
            for rows in &self.hard_negative_rows {
                for &h in rows {
                    hard_union[h] = true;
                }
            }
        }
        (0..self.len())
            .map(|i| {
                let mut row = vec![true; m];
                if policy == HardNegativePolicy::PerQuery {
                    for (j, r) in row.iter_mut().enumerate() {
                        if hard_union[j] {
                            *r = false;
                        }
                    }
                    for &h in &self.hard_negative_rows[i] {
                        row[h] = true;
                    }
                }
                for &x in &self.excluded[i] {
                    row[x] = false;
                }
                row[self.positive_index[i]] = true;
                row
            })
            .collect()
    }
}

/// Removes, for every query, each target row that shares its positive's id.
pub fn mask_false_negatives(batch: &ContrastiveBatch) -> ContrastiveBatch {
    let mut out = batch.clone();
    for (i, &p) in batch.positive_index.iter().enumerate() {
        let pos_id = &batch.target_ids[p];
        let mut ex: Vec<usize> = batch
            .target_ids
            .iter()
            .enumerate()
            .filter(|&(j, id)| j != p && id == pos_id)
            .map(|(j, _)| j)
            .collect();
        ex.extend_from_slice(&batch.excluded[i]);
        ex.sort_unstable();
        ex.dedup();
        out.excluded[i] = ex;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// Gradient of the loss with respect to the `B x M` logits (cos / tau).
    pub d_logits: DenseMatrix,
    pub d_query: DenseMatrix,
    pub d_target: DenseMatrix,
}

struct Prepared {
    cos: DenseMatrix,
    allowed: Vec<Vec<bool>>,
}

fn prepare(batch: &ContrastiveBatch, cfg: &LossConfig) -> Result<Prepared> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::Empty("contrastive batch has no queries"));
    }
    let masked;
    let batch = if cfg.false_negative_masking {
        masked = mask_false_negatives(batch);
        &masked
    } else {
        batch
    };
    let cos = similarity_matrix(&batch.queries, &batch.targets)?;
    let allowed = batch.allowed(cfg.hard_negative_policy);
    for (i, row) in allowed.iter().enumerate() {
        if row.iter().filter(|&&a| a).count() < 2 {
            return Err(Error::EmptyNegatives { query: i });
        }
    }
    Ok(Prepared { cos, allowed })
}

/// Per-query losses and softmax rows over the allowed logits.
///
/// Works on offsets `(cos_ij - cos_i,pos) / tau` so a near-saturated query
/// keeps full relative precision: the loss is `m + ln_1p(sum of the other
/// exp(offset - m))` with `m` the largest offset, and the positive's
/// gradient entry is minus the sum of the negative probabilities.
fn softmax_rows(
    prep: &Prepared,
    batch: &ContrastiveBatch,
    tau: f64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut losses = Vec::with_capacity(batch.len());
    let mut probs = Vec::with_capacity(batch.len());
    for (i, allowed) in prep.allowed.iter().enumerate() {
        let cos = prep.cos.row(i);
        let pos = batch.positive_index[i];
        let offsets: Vec<Option<f64>> = cos
            .iter()
            .zip(allowed)
            .map(|(c, &a)| a.then(|| (c - cos[pos]) / tau))
            .collect();
        let (top, m) = offsets
            .iter()
            .enumerate()
            .filter_map(|(j, o)| o.map(|v| (j, v)))
            .fold(
                (pos, 0.0),
                |best, (j, v)| if v > best.1 { (j, v) } else { best },
            );
        let rest: f64 = offsets
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != top)
            .filter_map(|(_, o)| o.map(|v| (v - m).exp()))
            .sum();
        let loss = m + rest.ln_1p();
        if !loss.is_finite() {
            return Err(Error::NonFinite { index: i });
        }
        losses.push(loss);
        let mut p: Vec<f64> = offsets
            .iter()
            .map(|o| o.map_or(0.0, |v| (v - loss).exp()))
            .collect();
        p[pos] = 1.0
            - p.iter()
                .enumerate()
                .filter(|(j, _)| *j != pos)
                .map(|(_, v)| v)
                .sum::<f64>();
        probs.push(p);
    }
    Ok((losses, probs))
}

pub fn info_nce_forward(batch: &ContrastiveBatch, cfg: &LossConfig) -> Result<f64> {
    let prep = prepare(batch, cfg)?;
    let (losses, _) = softmax_rows(&prep, batch, cfg.temperature)?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Loss plus gradients with respect to the logits and both embedding matrices.
pub fn info_nce_backward(batch: &ContrastiveBatch, cfg: &LossConfig) -> Result<LossOutput> {
    let prep = prepare(batch, cfg)?;
    let tau = cfg.temperature;
    let (losses, probs) = softmax_rows(&prep, batch, tau)?;
    let b = batch.len();
    let m = batch.targets.rows();
    let d = batch.queries.cols();
    let inv_b = 1.0 / b as f64;

    let mut d_logits = DenseMatrix::zeros(b, m);
    for (i, p) in probs.iter().enumerate() {
        let row = d_logits.row_mut(i);
        let pos = batch.positive_index[i];
        for (j, &pij) in p.iter().enumerate() {
            row[j] = pij * inv_b;
        }
        let negatives: f64 = p
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != pos)
            .map(|(_, v)| v)
            .sum();
        row[pos] = -negatives * inv_b;
    }

    // d cos = d logits / tau, then through cos(q, t) = q.t / (|q||t|).
    let q_norms = row_norms(&batch.queries)?;
    let t_norms = row_norms(&batch.targets)?;
    let mut d_query = DenseMatrix::zeros(b, d);
    let mut d_target = DenseMatrix::zeros(m, d);
    for (i, &qn) in q_norms.iter().enumerate() {
        let q = batch.queries.row(i);
        for (j, &tn) in t_norms.iter().enumerate() {
            let g = d_logits.get(i, j) / tau;
            if g == 0.0 {
                continue;
            }
            let t = batch.targets.row(j);
            let c = prep.cos.get(i, j);
            let cross = g / (qn * tn);
            let q_self = g * c / (qn * qn);
            let t_self = g * c / (tn * tn);
            for (k, dq) in d_query.row_mut(i).iter_mut().enumerate() {
                *dq += cross * t[k] - q_self * q[k];
            }
            for (k, dt) in d_target.row_mut(j).iter_mut().enumerate() {
                *dt += cross * q[k] - t_self * t[k];
            }
        }
    }

    Ok(LossOutput {
        loss: losses.iter().sum::<f64>() * inv_b,
        d_logits,
        d_query,
        d_target,
    })
}

/// A trainable encoder whose forward pass can be rerun with activations
/// kept for back-propagation.
pub trait EmbeddingModel {
    type Grads;

    /// Forward pass without keeping activations.
    fn embed(&self, inputs: &DenseMatrix) -> Result<DenseMatrix>;

    fn zero_grads(&self) -> Self::Grads;

    /// Recomputes the forward pass for `inputs` and accumulates the
    /// parameter gradient of `sum(d_out * output)` into `grads`, row by row
    /// in input order.
    fn backprop(
        &self,
        inputs: &DenseMatrix,
        d_out: &DenseMatrix,
        grads: &mut Self::Grads,
    ) -> Result<()>;
}

/// Raw encoder inputs for one contrastive step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub query_inputs: DenseMatrix,
    pub target_inputs: DenseMatrix,
    pub positive_index: Vec<usize>,
    pub target_ids: Vec<String>,
    pub hard_negative_rows: Vec<Vec<usize>>,
}

impl TrainingBatch {
    pub fn paired(query_inputs: DenseMatrix, target_inputs: DenseMatrix) -> Result<Self> {
        let b = query_inputs.rows();
        let batch = Self {
            positive_index: (0..b).collect(),
            target_ids: (0..target_inputs.rows()).map(|j| j.to_string()).collect(),
            hard_negative_rows: vec![Vec::new(); b],
            query_inputs,
            target_inputs,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn validate(&self) -> Result<()> {
        validate_layout(
            self.query_inputs.rows(),
            self.target_inputs.rows(),
            &self.positive_index,
            &self.target_ids,
            &self.hard_negative_rows,
        )
    }

    fn with_embeddings(
        &self,
        queries: DenseMatrix,
        targets: DenseMatrix,
    ) -> Result<ContrastiveBatch> {
        ContrastiveBatch::with_hard_negatives(
            queries,
            targets,
            self.positive_index.clone(),
            self.target_ids.clone(),
            self.hard_negative_rows.clone(),
        )
    }
}

#[derive(Debug, Clone)]
pub struct GradCacheOutput<G> {
    pub loss: f64,
    pub grads: G,
}

fn chunk_bounds(rows: usize, chunk: usize) -> Vec<(usize, usize)> {
    (0..rows)
        .step_by(chunk.max(1))
        .map(|s| (s, (s + chunk).min(rows)))
        .collect()
}

fn embed_chunked<M: EmbeddingModel + Sync>(
    model: &M,
    inputs: &DenseMatrix,
    chunk: usize,
) -> Result<DenseMatrix> {
    let parts: Vec<DenseMatrix> = chunk_bounds(inputs.rows(), chunk)
        .into_par_iter()
        .map(|(s, e)| model.embed(&inputs.slice_rows(s, e)))
        .collect::<Result<_>>()?;
    let mut out = DenseMatrix::zeros(0, 0);
    for p in &parts {
        out = out.vstack(p)?;
    }
    Ok(out)
}

/// Gradient-cache step.
///
/// Pass one embeds queries and targets chunk by chunk without activations and
/// computes the loss and embedding gradients for the full batch. Pass two
/// re-encodes each chunk and back-propagates its slice of the cached
/// embedding gradients, accumulating parameter gradients sequentially
/// (query chunks, then target chunks). A `chunk_size` above the batch size is
/// clamped.
pub fn grad_cache_run<M: EmbeddingModel + Sync>(
    model: &M,
    batch: &TrainingBatch,
    chunk_size: usize,
    cfg: &LossConfig,
) -> Result<GradCacheOutput<M::Grads>> {
    if chunk_size == 0 {
        return Err(Error::InvalidArgument(
            "chunk size must be at least 1".into(),
        ));
    }
    batch.validate()?;
    let q_chunk = chunk_size.min(batch.query_inputs.rows().max(1));
    let t_chunk = chunk_size.min(batch.target_inputs.rows().max(1));

    let q_emb = embed_chunked(model, &batch.query_inputs, q_chunk)?;
    let t_emb = embed_chunked(model, &batch.target_inputs, t_chunk)?;
    let out = info_nce_backward(&batch.with_embeddings(q_emb, t_emb)?, cfg)?;

    let mut grads = model.zero_grads();
    for (s, e) in chunk_bounds(batch.query_inputs.rows(), q_chunk) {
        model.backprop(
            &batch.query_inputs.slice_rows(s, e),
            &out.d_query.slice_rows(s, e),
            &mut grads,
        )?;
    }
    for (s, e) in chunk_bounds(batch.target_inputs.rows(), t_chunk) {
        model.backprop(
            &batch.target_inputs.slice_rows(s, e),
            &out.d_target.slice_rows(s, e),
            &mut grads,
        )?;
    }
    Ok(GradCacheOutput {
        loss: out.loss,
        grads,
    })
}

/// Single-pass reference: embed everything, then back-propagate the whole
/// query block followed by the whole target block.
pub fn direct_backprop<M: EmbeddingModel>(
    model: &M,
    batch: &TrainingBatch,
    cfg: &LossConfig,
) -> Result<GradCacheOutput<M::Grads>> {
    batch.validate()?;
    let q_emb = model.embed(&batch.query_inputs)?;
    let t_emb = model.embed(&batch.target_inputs)?;
    let out = info_nce_backward(&batch.with_embeddings(q_emb, t_emb)?, cfg)?;
    let mut grads = model.zero_grads();
    model.backprop(&batch.query_inputs, &out.d_query, &mut grads)?;
    model.backprop(&batch.target_inputs, &out.d_target, &mut grads)?;
    Ok(GradCacheOutput {
        loss: out.loss,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    fn no_mask(tau: f64) -> LossConfig {
        LossConfig {
            temperature: tau,
            false_negative_masking: false,
            hard_negative_policy: HardNegativePolicy::Pooled,
        }
    }

    /// Literal ratio-of-exponentials form, for temperatures where it is representable.
    fn product_form(batch: &ContrastiveBatch, tau: f64) -> f64 {
        let mut total = 0.0;
        for i in 0..batch.len() {
            let q = batch.queries.row(i);
            let phi = |j: usize| {
                (crate::tensor::cosine_sim(q, batch.targets.row(j)).unwrap() / tau).exp()
            };
            let p = batch.positive_index[i];
            let pos = phi(p);
            let neg: f64 = (0..batch.targets.rows()).filter(|&j| j != p).map(phi).sum();
            total += -(pos / (pos + neg)).ln();
        }
        total / batch.len() as f64
    }

    fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DenseMatrix {
        DenseMatrix::new(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn equal_logits_give_ln_k() {
        let b =
            ContrastiveBatch::paired(m(&[&[1.0, 1.0]]), m(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert_abs_diff_eq!(
            info_nce_forward(&b, &no_mask(0.3)).unwrap(),
            2f64.ln(),
            epsilon = 1e-12
        );
        let b = ContrastiveBatch::paired(
            m(&[&[0.0, 0.0, 0.0, 0.0, 1.0]]),
            m(&[
                &[1.0, 0.0, 0.0, 0.0, 0.0],
                &[0.0, 1.0, 0.0, 0.0, 0.0],
                &[0.0, 0.0, 1.0, 0.0, 0.0],
                &[0.0, 0.0, 0.0, 1.0, 0.0],
            ]),
        )
        .unwrap();
        for tau in [1.0, 0.1, 0.02] {
            assert_abs_diff_eq!(
                info_nce_forward(&b, &no_mask(tau)).unwrap(),
                4f64.ln(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn two_candidate_softmax() {
        let b =
            ContrastiveBatch::paired(m(&[&[1.0, 0.0]]), m(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        // -log(e^1 / (e^1 + e^0)) = ln(1 + e^-1)
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert_abs_diff_eq!(
            info_nce_forward(&b, &no_mask(1.0)).unwrap(),
            expected,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(expected, 0.313262, epsilon = 1e-6);
    }

    #[test]
    fn log_space_matches_product_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for tau in [0.2, 0.5, 1.0] {
            for _ in 0..20 {
                let q = random_matrix(&mut rng, 4, 6);
                let t = random_matrix(&mut rng, 7, 6);
                let b = ContrastiveBatch::paired(q, t).unwrap();
                let a = info_nce_forward(&b, &no_mask(tau)).unwrap();
                assert!((a - product_form(&b, tau)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn errors() {
        let single = ContrastiveBatch::paired(m(&[&[1.0, 0.0]]), m(&[&[1.0, 0.0]])).unwrap();
        assert!(matches!(
            info_nce_forward(&single, &no_mask(1.0)),
            Err(Error::EmptyNegatives { query: 0 })
        ));
        let zero =
            ContrastiveBatch::paired(m(&[&[0.0, 0.0]]), m(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert!(matches!(
            info_nce_forward(&zero, &no_mask(1.0)),
            Err(Error::ZeroNorm { .. })
        ));
        let b =
            ContrastiveBatch::paired(m(&[&[1.0, 0.0]]), m(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert!(info_nce_forward(&b, &no_mask(0.0)).is_err());
        assert!(
            ContrastiveBatch::new(m(&[&[1.0]]), m(&[&[1.0]]), vec![3], vec!["a".into()]).is_err()
        );
    }

    #[test]
    fn saturated_batch_has_vanishing_gradient() {
        // Every negative is antipodal to the query.
        let b = ContrastiveBatch::paired(
            m(&[&[1.0, 0.0]]),
            m(&[&[1.0, 0.0], &[-1.0, 0.0], &[-2.0, 0.0]]),
        )
        .unwrap();
        let out = info_nce_backward(&b, &LossConfig::with_temperature(0.02)).unwrap();
        assert!(out.d_query.frobenius_norm() < 1e-10);
        assert!(out.d_target.frobenius_norm() < 1e-10);
        assert!(out.loss >= 0.0 && out.loss < 1e-40);
    }

    #[test]
    fn logit_gradient_rows_sum_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b =
            ContrastiveBatch::paired(random_matrix(&mut rng, 5, 8), random_matrix(&mut rng, 9, 8))
                .unwrap();
        let out = info_nce_backward(&b, &no_mask(0.1)).unwrap();
        for row in out.d_logits.row_iter() {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-6;
        let cfg = no_mask(0.5);
        let b =
            ContrastiveBatch::paired(random_matrix(&mut rng, 3, 4), random_matrix(&mut rng, 5, 4))
                .unwrap();
        let out = info_nce_backward(&b, &cfg).unwrap();
        let mut max_rel: f64 = 0.0;
        for (is_query, grad) in [(true, &out.d_query), (false, &out.d_target)] {
            for idx in 0..grad.values().len() {
                let eval = |delta: f64| {
                    let mut pb = b.clone();
                    let mat = if is_query {
                        &mut pb.queries
                    } else {
                        &mut pb.targets
                    };
                    mat.values_mut()[idx] += delta;
                    info_nce_forward(&pb, &cfg).unwrap()
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = grad.values()[idx];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                max_rel = max_rel.max(rel);
            }
        }
        assert!(max_rel < 1e-6, "max relative error {max_rel}");
    }

    #[test]
    fn masking_examples() {
        let q = m(&[&[1.0, 0.2], &[0.3, 1.0]]);
        let t = m(&[&[1.0, 0.0], &[0.0, 1.0], &[0.7, 0.7]]);
        let distinct = ContrastiveBatch::new(
            q.clone(),
            t.clone(),
            vec![0, 1],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        assert_eq!(mask_false_negatives(&distinct), distinct);

        let dup = ContrastiveBatch::new(
            q.clone(),
            t.clone(),
            vec![0, 1],
            vec!["a".into(), "b".into(), "a".into()],
        )
        .unwrap();
        let masked = mask_false_negatives(&dup);
        assert_eq!(masked.excluded(0), &[2]);
        assert!(masked.excluded(1).is_empty());

        // Two queries whose positives are copies of one target.
        let shared = ContrastiveBatch::new(
            m(&[&[1.0, 0.1], &[0.9, 0.0]]),
            m(&[&[1.0, 0.0], &[1.0, 0.05], &[0.0, 1.0]]),
            vec![0, 1],
            vec!["x".into(), "x".into(), "y".into()],
        )
        .unwrap();
        let masked = mask_false_negatives(&shared);
        assert_eq!(masked.excluded(0), &[1]);
        assert_eq!(masked.excluded(1), &[0]);
        let unmasked_loss = info_nce_forward(&shared, &no_mask(0.1)).unwrap();
        let masked_loss = info_nce_forward(&shared, &LossConfig::with_temperature(0.1)).unwrap();
        assert!(masked_loss < unmasked_loss);
    }

    #[test]
    fn hard_negative_policies() {
        let q = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let t = m(&[&[1.0, 0.1], &[0.1, 1.0], &[0.9, 0.5], &[0.5, 0.9]]);
        let ids = vec!["0".into(), "1".into(), "h0".into(), "h1".into()];
        let b =
            ContrastiveBatch::with_hard_negatives(q, t, vec![0, 1], ids, vec![vec![2], vec![3]])
                .unwrap();
        let pooled = LossConfig {
            temperature: 0.5,
            false_negative_masking: false,
            hard_negative_policy: HardNegativePolicy::Pooled,
        };
        let per_query = LossConfig {
            hard_negative_policy: HardNegativePolicy::PerQuery,
            ..pooled
        };
        let out = info_nce_backward(&b, &per_query).unwrap();
        // Query 0 never sees query 1's hard negative.
        assert_eq!(out.d_logits.get(0, 3), 0.0);
        assert_eq!(out.d_logits.get(1, 2), 0.0);
        let lp = info_nce_forward(&b, &pooled).unwrap();
        let lq = info_nce_forward(&b, &per_query).unwrap();
        assert!(lp > lq);
    }
}
