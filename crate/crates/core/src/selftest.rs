//! Built-in numerical checks run by `mmembed selftest`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::contrastive::{
    direct_backprop, grad_cache_run, info_nce_backward, info_nce_forward, ContrastiveBatch,
    LossConfig, TrainingBatch,
};
use crate::dataio::uemb::{decode_embeddings, encode_record, Dtype};
use crate::encoder::{merge_adapter, LowRankAdapter, ToyEncoder};
use crate::error::Result;
use crate::formatting::{
    render_query, sample_frame_indices, Modality, ModalityCode, TemplateTable, VisualTokenTable,
};
use crate::retrieval::{ndcg_at_k, weighted_mean, RankedCandidate, Ranking};
use crate::tensor::{log_sum_exp, DenseMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Largest entrywise difference divided by the largest entry magnitude of
/// either vector. Zero when both are all zero.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "compared vectors differ in length");
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a
        .iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn random_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DenseMatrix {
    let values = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    DenseMatrix::new(rows, cols, values).expect("finite by construction")
}

/// Central-difference gradient of the loss with respect to every query and
/// target entry, in that order.
pub fn numeric_embedding_gradient(
    batch: &ContrastiveBatch,
    cfg: &LossConfig,
    h: f64,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(batch.queries.values().len() + batch.targets.values().len());
    for which in 0..2 {
        let n = if which == 0 {
            batch.queries.values().len()
        } else {
            batch.targets.values().len()
        };
        for k in 0..n {
            let eval = |delta: f64| -> Result<f64> {
                let mut b = batch.clone();
                let m = if which == 0 {
                    &mut b.queries
                } else {
                    &mut b.targets
                };
                m.values_mut()[k] += delta;
                info_nce_forward(&b, cfg)
            };
            let plus = eval(h)?;
            let minus = eval(-h)?;
            out.push((plus - minus) / (2.0 * h));
        }
    }
    Ok(out)
}

/// Max relative error between the analytic and central-difference
/// embedding gradients.
pub fn embedding_gradient_error(batch: &ContrastiveBatch, cfg: &LossConfig, h: f64) -> Result<f64> {
    let analytic = info_nce_backward(batch, cfg)?;
    let mut a = analytic.d_query.into_values();
    a.extend(analytic.d_target.into_values());
    let n = numeric_embedding_gradient(batch, cfg, h)?;
    Ok(max_relative_error(&a, &n))
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name,
        passed,
        detail,
    }
}

fn closed_form() -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for k in [2usize, 4, 16] {
        let ones = DenseMatrix::from_raw(k, 1, vec![1.0; k]);
        let batch = ContrastiveBatch::paired(ones.clone(), ones)?;
        let cfg = LossConfig {
            false_negative_masking: false,
            ..LossConfig::with_temperature(1.0)
        };
        worst = worst.max((info_nce_forward(&batch, &cfg)? - (k as f64).ln()).abs());
    }
    let two = ContrastiveBatch::new(
        DenseMatrix::from_rows(&[[1.0, 0.0]])?,
        DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]])?,
        vec![0],
        vec!["p".into(), "n".into()],
    )?;
    let expected = (1.0 + (-1.0f64).exp()).ln();
    worst =
        worst.max((info_nce_forward(&two, &LossConfig::with_temperature(1.0))? - expected).abs());
    Ok(check(
        "closed-form loss",
        worst <= 1e-12,
        format!("max abs error {worst:.3e}"),
    ))
}

fn finite_difference(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for &tau in &[1.0, 0.1, 0.02] {
        for _ in 0..5 {
            let b = rng.random_range(2..=6);
            let d = rng.random_range(2..=8);
            let batch =
                ContrastiveBatch::paired(random_matrix(rng, b, d), random_matrix(rng, b, d))?;
            worst = worst.max(embedding_gradient_error(
                &batch,
                &LossConfig::with_temperature(tau),
                1e-6,
            )?);
        }
    }
    Ok(check(
        "loss gradient vs finite differences",
        worst < 1e-5,
        format!("max rel error {worst:.3e}"),
    ))
}

fn grad_cache(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let enc = ToyEncoder::random(6, 8, 4, rng);
    let batch = TrainingBatch::paired(random_matrix(rng, 14, 6), random_matrix(rng, 14, 6))?;
    let cfg = LossConfig::with_temperature(0.1);
    let direct = direct_backprop(&enc, &batch, &cfg)?;
    let reference = direct.grads.flatten();
    let mut worst = 0.0f64;
    for chunk in [1, 2, 7, 14] {
        let out = grad_cache_run(&enc, &batch, chunk, &cfg)?;
        worst = worst.max(max_relative_error(&out.grads.flatten(), &reference));
        worst = worst.max((out.loss - direct.loss).abs());
    }
    Ok(check(
        "gradient cache equals direct backprop",
        worst <= 1e-9,
        format!("max error {worst:.3e}"),
    ))
}

fn adapter(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let base = ToyEncoder::random(5, 7, 3, rng);
    let with = base
        .clone()
        .with_adapter(LowRankAdapter::init(7, 3, 2, 4.0, rng)?)?;
    let x = random_matrix(rng, 4, 5);
    let identical = base.encode_batch(&x)? == with.encode_batch(&x)?;
    let mut trained = with.clone();
    if let Some(ad) = trained.adapter.as_mut() {
        *ad = LowRankAdapter {
            b: random_matrix(rng, ad.b.rows(), ad.b.cols()),
            ..ad.clone()
        };
    }
    let merged = merge_adapter(&trained)?;
    let a = trained.encode_batch(&x)?;
    let m = merged.encode_batch(&x)?;
    let diff = a
        .values()
        .iter()
        .zip(m.values())
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    Ok(check(
        "adapter identity and merge",
        identical && diff <= 1e-12,
        format!("zero-B identical: {identical}, merge max diff {diff:.3e}"),
    ))
}

fn formats(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let ids: Vec<String> = (0..3).map(|i| format!("row{i}")).collect();
    let m = random_matrix(rng, 3, 5);
    let back = decode_embeddings(&encode_record(&ids, &m, Dtype::F64)?)?;
    let uemb_ok = back.ids() == ids.as_slice()
        && back
            .matrix()
            .values()
            .iter()
            .zip(m.values())
            .all(|(a, b)| a.to_bits() == b.to_bits());
    let frames_ok = sample_frame_indices(16, 8)? == vec![1, 3, 5, 7, 9, 11, 13, 15]
        && sample_frame_indices(5, 8)? == vec![0, 0, 1, 2, 2, 3, 4, 4];
    let table =
        TemplateTable::with_tokens(VisualTokenTable::new().with(Modality::Video, "<video-token>"));
    let rendered = render_query(
        "Find a video that contains the following visual content:",
        "a dog catching a frisbee",
        ModalityCode::VIDEO,
        &table,
    )?;
    let render_ok = rendered.text
        == "<video-token> Instruct: Find a video that contains the following visual content:\nQuery: a dog catching a frisbee";
    Ok(check(
        "formats and rendering",
        uemb_ok && frames_ok && render_ok,
        format!("uemb {uemb_ok}, frames {frames_ok}, render {render_ok}"),
    ))
}

fn metrics() -> Result<CheckResult> {
    let ranking = Ranking(
        ["a", "b", "c", "d", "e"]
            .iter()
            .enumerate()
            .map(|(i, id)| RankedCandidate {
                id: id.to_string(),
                score: -(i as f64),
            })
            .collect(),
    );
    let n1 = ndcg_at_k(&ranking, &["c".to_string()], 5)?;
    let n2 = ndcg_at_k(&ranking, &["b".to_string(), "d".to_string()], 5)?;
    let image = weighted_mean(&[(62.9, 10), (56.3, 10), (69.5, 12), (77.3, 4)])?;
    let overall = weighted_mean(&[(64.9, 36), (34.6, 18), (65.4, 24)])?;
    let lse = log_sum_exp(&[50.0, 0.0])?;
    let ok = (n1 - 0.5).abs() <= 1e-12
        && (n2 - 0.6509209298071326).abs() <= 1e-12
        && (image - 64.9).abs() <= 0.05
        && (overall - 58.0).abs() <= 0.1
        && (lse - 50.0).abs() <= 1e-12;
    Ok(check(
        "metrics and aggregation",
        ok,
        format!("ndcg {n1:.6}/{n2:.6}, image avg {image:.3}, overall {overall:.3}"),
    ))
}

/// Runs every check with a fixed seed.
pub fn run_selftest(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(vec![
        closed_form()?,
        finite_difference(&mut rng)?,
        grad_cache(&mut rng)?,
        adapter(&mut rng)?,
        formats(&mut rng)?,
        metrics()?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for r in run_selftest(0).unwrap() {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }

    #[test]
    fn relative_error_is_normwise() {
        assert_eq!(max_relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((max_relative_error(&[2.0, 1e-9], &[2.0, 2e-9]) - 5e-10).abs() < 1e-20);
        assert!((max_relative_error(&[1.0], &[1.1]) - 0.1 / 1.1).abs() < 1e-15);
    }
}
