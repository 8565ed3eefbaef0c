//! Desk-scale stand-in for a vision-language backbone: a two-layer tanh
//! perceptron over pre-extracted feature vectors, with an optional low-rank
//! adapter on the output projection.
//!
//! ```text
//! y = tanh(x W1 + b1) W_eff + b2,    W_eff = W2 + (alpha / r) A B
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::contrastive::EmbeddingModel;
use crate::error::{Error, Result};
use crate::tensor::{DenseMatrix, RowVector};

/// Factorized additive update `(alpha / r) * A * B` on the output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankAdapter {
    /// `hidden x rank`
    pub a: DenseMatrix,
    /// `rank x d_out`, zero at initialization.
    pub b: DenseMatrix,
    pub alpha: f64,
}

impl LowRankAdapter {
    /// `A ~ U(-1/sqrt(hidden), 1/sqrt(hidden))`, `B = 0`.
    pub fn init<R: Rng + ?Sized>(
        hidden: usize,
        d_out: usize,
        rank: usize,
        alpha: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if rank == 0 {
            return Err(Error::InvalidArgument(
                "adapter rank must be at least 1".into(),
            ));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "adapter alpha must be positive, got {alpha}"
            )));
        }
        let bound = 1.0 / (hidden.max(1) as f64).sqrt();
        let a = (0..hidden * rank)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Ok(Self {
            a: DenseMatrix::new(hidden, rank, a)?,
            b: DenseMatrix::zeros(rank, d_out),
            alpha,
        })
    }

    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank() as f64
    }

    /// `(alpha / r) * A * B`
    pub fn delta(&self) -> Result<DenseMatrix> {
        let mut ab = self.a.matmul(&self.b)?;
        let s = self.scale();
        for v in ab.values_mut() {
            *v *= s;
        }
        Ok(ab)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    /// `d_in x hidden`
    pub w1: DenseMatrix,
    pub b1: RowVector,
    /// `hidden x d_out`
    pub w2: DenseMatrix,
    pub b2: RowVector,
    pub adapter: Option<LowRankAdapter>,
}

impl ToyEncoder {
    pub fn new(w1: DenseMatrix, b1: RowVector, w2: DenseMatrix, b2: RowVector) -> Result<Self> {
        let enc = Self {
            w1,
            b1,
            w2,
            b2,
            adapter: None,
        };
        enc.validate()?;
        Ok(enc)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn random<R: Rng + ?Sized>(d_in: usize, hidden: usize, d_out: usize, rng: &mut R) -> Self {
        let glorot = |fan_in: usize, fan_out: usize, rng: &mut R| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let v = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            DenseMatrix::from_raw(fan_in, fan_out, v)
        };
        let w1 = glorot(d_in, hidden, rng);
        let w2 = glorot(hidden, d_out, rng);
        Self {
            w1,
            b1: RowVector::zeros(hidden),
            w2,
            b2: RowVector::zeros(d_out),
            adapter: None,
        }
    }

    pub fn with_adapter(mut self, adapter: LowRankAdapter) -> Result<Self> {
        self.adapter = Some(adapter);
        self.validate()?;
        Ok(self)
    }

    pub fn d_in(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn d_out(&self) -> usize {
        self.w2.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, o) = (self.hidden(), self.d_out());
        if self.b1.dim() != h || self.w2.rows() != h || self.b2.dim() != o {
            return Err(Error::shape(format!(
                "inconsistent encoder shapes: w1 {:?}, b1 {}, w2 {:?}, b2 {}",
                self.w1.shape(),
                self.b1.dim(),
                self.w2.shape(),
                self.b2.dim()
            )));
        }
        if let Some(ad) = &self.adapter {
            if ad.a.rows() != h || ad.b.rows() != ad.a.cols() || ad.b.cols() != o || ad.rank() == 0
            {
                return Err(Error::shape(format!(
                    "adapter A {:?} / B {:?} does not fit a {h}x{o} projection",
                    ad.a.shape(),
                    ad.b.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn encode(&self, features: &[f64]) -> Result<RowVector> {
        let x = DenseMatrix::new(1, features.len(), features.to_vec())?;
        Ok(RowVector::from_raw(self.encode_batch(&x)?.into_values()))
    }

    pub fn encode_batch(&self, inputs: &DenseMatrix) -> Result<DenseMatrix> {
        let (_, out) = self.forward(inputs, &effective_weight(self)?)?;
        Ok(out)
    }

    fn forward(
        &self,
        inputs: &DenseMatrix,
        w_eff: &DenseMatrix,
    ) -> Result<(DenseMatrix, DenseMatrix)> {
        if inputs.cols() != self.d_in() {
            return Err(Error::shape(format!(
                "encoder expects {} input features, got {}",
                self.d_in(),
                inputs.cols()
            )));
        }
        let mut hidden = inputs.matmul(&self.w1)?;
        for r in 0..hidden.rows() {
            for (v, b) in hidden.row_mut(r).iter_mut().zip(self.b1.iter()) {
                *v = (*v + b).tanh();
            }
        }
        let mut out = hidden.matmul(w_eff)?;
        for r in 0..out.rows() {
            for (v, b) in out.row_mut(r).iter_mut().zip(self.b2.iter()) {
                *v += b;
            }
        }
        Ok((hidden, out))
    }

    /// Flat views of the trainable tensors, in a fixed order matching
    /// [`EncoderGrads::slices`].
    pub(crate) fn trainable_mut(&mut self, freeze_base: bool) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        if !freeze_base {
            out.push(self.w1.values_mut());
            out.push(self.b1.as_mut_slice());
            out.push(self.w2.values_mut());
            out.push(self.b2.as_mut_slice());
        }
        if let Some(ad) = &mut self.adapter {
            out.push(ad.a.values_mut());
            out.push(ad.b.values_mut());
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        let base = self.w1.values().len() + self.b1.dim() + self.w2.values().len() + self.b2.dim();
        base + self
            .adapter
            .as_ref()
            .map_or(0, |a| a.a.values().len() + a.b.values().len())
    }
}

/// `W2 + (alpha / r) A B`; exactly `W2` when there is no adapter or `B = 0`.
pub fn effective_weight(params: &ToyEncoder) -> Result<DenseMatrix> {
    match &params.adapter {
        None => Ok(params.w2.clone()),
        Some(ad) => {
            let mut w = params.w2.clone();
            w.add_scaled(&ad.delta()?, 1.0)?;
            Ok(w)
        }
    }
}

/// Folds the adapter into `W2` and drops it.
pub fn merge_adapter(params: &ToyEncoder) -> Result<ToyEncoder> {
    if params.adapter.is_none() {
        return Err(Error::NoAdapter);
    }
    Ok(ToyEncoder {
        w2: effective_weight(params)?,
        adapter: None,
        ..params.clone()
    })
}

/// Parameter gradients with the same layout as [`ToyEncoder`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub w1: DenseMatrix,
    pub b1: Vec<f64>,
    pub w2: DenseMatrix,
    pub b2: Vec<f64>,
    pub adapter_a: Option<DenseMatrix>,
    pub adapter_b: Option<DenseMatrix>,
}

impl EncoderGrads {
    pub(crate) fn slices(&self, freeze_base: bool) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        if !freeze_base {
            out.push(self.w1.values());
            out.push(&self.b1);
            out.push(self.w2.values());
            out.push(&self.b2);
        }
        if let (Some(a), Some(b)) = (&self.adapter_a, &self.adapter_b) {
            out.push(a.values());
            out.push(b.values());
        }
        out
    }

    /// All gradient entries, base tensors first.
    pub fn flatten(&self) -> Vec<f64> {
        self.slices(false).concat()
    }
}

fn add_column_sums(acc: &mut [f64], m: &DenseMatrix) {
    for row in m.row_iter() {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
}

impl EmbeddingModel for ToyEncoder {
    type Grads = EncoderGrads;

    fn embed(&self, inputs: &DenseMatrix) -> Result<DenseMatrix> {
        self.encode_batch(inputs)
    }

    fn zero_grads(&self) -> EncoderGrads {
        EncoderGrads {
            w1: DenseMatrix::zeros(self.d_in(), self.hidden()),
            b1: vec![0.0; self.hidden()],
            w2: DenseMatrix::zeros(self.hidden(), self.d_out()),
            b2: vec![0.0; self.d_out()],
            adapter_a: self
                .adapter
                .as_ref()
                .map(|a| DenseMatrix::zeros(a.a.rows(), a.a.cols())),
            adapter_b: self
                .adapter
                .as_ref()
                .map(|a| DenseMatrix::zeros(a.b.rows(), a.b.cols())),
        }
    }

    fn backprop(
        &self,
        inputs: &DenseMatrix,
        d_out: &DenseMatrix,
        grads: &mut EncoderGrads,
    ) -> Result<()> {
        if d_out.shape() != (inputs.rows(), self.d_out()) {
            return Err(Error::shape(format!(
                "output gradient {:?} for {} inputs of a {}-dim encoder",
                d_out.shape(),
                inputs.rows(),
                self.d_out()
            )));
        }
        let w_eff = effective_weight(self)?;
        let (hidden, _) = self.forward(inputs, &w_eff)?;

        let d_w_eff = hidden.t_matmul(d_out)?;
        grads.w2.add_scaled(&d_w_eff, 1.0)?;
        add_column_sums(&mut grads.b2, d_out);
        if let Some(ad) = &self.adapter {
            let s = ad.scale();
            let d_a = d_w_eff.matmul_t(&ad.b)?;
            let d_b = ad.a.t_matmul(&d_w_eff)?;
            if let (Some(ga), Some(gb)) = (&mut grads.adapter_a, &mut grads.adapter_b) {
                ga.add_scaled(&d_a, s)?;
                gb.add_scaled(&d_b, s)?;
            }
        }

        let mut d_pre = d_out.matmul_t(&w_eff)?;
        for r in 0..d_pre.rows() {
            for (d, h) in d_pre.row_mut(r).iter_mut().zip(hidden.row(r)) {
                *d *= 1.0 - h * h;
            }
        }
        grads.w1.add_scaled(&inputs.t_matmul(&d_pre)?, 1.0)?;
        add_column_sums(&mut grads.b1, &d_pre);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam or plain SGD over a fixed list of flat tensors.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(
                "parameter and gradient lists differ".to_string(),
            ));
        }
        self.t += 1;
        if self.m.is_empty() && self.kind == OptimizerKind::Adam {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.into_iter().zip(grads) {
                    for (pi, gi) in p.iter_mut().zip(g) {
                        *pi -= self.lr * gi;
                    }
                }
            }
            OptimizerKind::Adam => {
                let bc1 = 1.0 - ADAM_BETA1.powf(self.t as f64);
                let bc2 = 1.0 - ADAM_BETA2.powf(self.t as f64);
                for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
                    let (m, v) = (&mut self.m[k], &mut self.v[k]);
                    for i in 0..p.len() {
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        p[i] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_encoder(seed: u64) -> ToyEncoder {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut enc = ToyEncoder::random(4, 5, 3, &mut rng);
        for v in enc.b1.as_mut_slice() {
            *v = rng.random_range(-0.5..0.5);
        }
        for v in enc.b2.as_mut_slice() {
            *v = rng.random_range(-0.5..0.5);
        }
        enc
    }

    fn with_trained_adapter(enc: ToyEncoder, seed: u64) -> ToyEncoder {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ad = LowRankAdapter::init(enc.hidden(), enc.d_out(), 2, 4.0, &mut rng).unwrap();
        for v in ad.b.values_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        enc.with_adapter(ad).unwrap()
    }

    #[test]
    fn zero_params_encode_to_zero() {
        let enc = ToyEncoder::new(
            DenseMatrix::zeros(3, 4),
            RowVector::zeros(4),
            DenseMatrix::zeros(4, 2),
            RowVector::zeros(2),
        )
        .unwrap();
        assert_eq!(
            enc.encode(&[1.0, -2.0, 3.0]).unwrap().as_slice(),
            &[0.0, 0.0]
        );
    }

    #[test]
    fn identity_encoder_is_tanh() {
        let enc = ToyEncoder::new(
            DenseMatrix::identity(3),
            RowVector::zeros(3),
            DenseMatrix::identity(3),
            RowVector::zeros(3),
        )
        .unwrap();
        let x = [1e-3, -2e-3, 5e-4];
        let y = enc.encode(&x).unwrap();
        for (yi, xi) in y.iter().zip(x) {
            assert_eq!(*yi, xi.tanh());
            assert!((yi - xi).abs() < 1e-8);
        }
        assert!(enc.encode(&[1.0]).is_err());
    }

    #[test]
    fn golden_forward() {
        // Recorded from an independent numpy evaluation of tanh(x W1 + b1) W2 + b2
        // with the fixed parameters below.
        let w1 = DenseMatrix::from_rows(&[[0.5, -0.25], [0.125, 1.0], [-1.0, 0.75]]).unwrap();
        let b1 = RowVector::new(vec![0.1, -0.2]).unwrap();
        let w2 = DenseMatrix::from_rows(&[[1.5, 0.0, -0.5], [0.25, 2.0, 1.0]]).unwrap();
        let b2 = RowVector::new(vec![0.0, 0.5, -1.0]).unwrap();
        let enc = ToyEncoder::new(w1, b1, w2, b2).unwrap();
        let y = enc.encode(&[1.0, 2.0, -0.5]).unwrap();
        let golden = [1.5175470456088749, 2.151736910238915, -0.611158188823546];
        for (a, b) in y.iter().zip(golden) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn adapter_scaling_and_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let enc = small_encoder(1);
        let ad = LowRankAdapter::init(enc.hidden(), enc.d_out(), 16, 32.0, &mut rng).unwrap();
        assert_eq!(ad.scale(), 2.0);
        let with = enc.clone().with_adapter(ad).unwrap();
        assert_eq!(effective_weight(&with).unwrap(), enc.w2);
        let x = [0.3, -0.1, 0.8, 0.2];
        assert_eq!(with.encode(&x).unwrap(), enc.encode(&x).unwrap());

        for rank in [8, 32] {
            let ad = LowRankAdapter::init(5, 3, rank, 32.0, &mut rng).unwrap();
            assert_eq!(ad.rank(), rank);
        }
        assert!(LowRankAdapter::init(5, 3, 0, 32.0, &mut rng).is_err());
    }

    #[test]
    fn merge_preserves_outputs() {
        let enc = with_trained_adapter(small_encoder(2), 3);
        let merged = merge_adapter(&enc).unwrap();
        assert!(merged.adapter.is_none());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = enc.encode(&x).unwrap();
            let b = merged.encode(&x).unwrap();
            for (u, v) in a.iter().zip(b.iter()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
        assert!(matches!(merge_adapter(&merged), Err(Error::NoAdapter)));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let zero_b = small_encoder(6)
            .with_adapter(LowRankAdapter::init(5, 3, 4, 8.0, &mut rng).unwrap())
            .unwrap();
        let merged = merge_adapter(&zero_b).unwrap();
        let bits = |m: &DenseMatrix| m.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&merged.w2), bits(&zero_b.w2));
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let enc = with_trained_adapter(small_encoder(7), 8);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x =
            DenseMatrix::new(3, 4, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let d_out =
            DenseMatrix::new(3, 3, (0..9).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let mut grads = enc.zero_grads();
        enc.backprop(&x, &d_out, &mut grads).unwrap();
        let analytic = grads.flatten();

        let objective = |e: &ToyEncoder| -> f64 {
            let y = e.encode_batch(&x).unwrap();
            y.values()
                .iter()
                .zip(d_out.values())
                .map(|(a, b)| a * b)
                .sum()
        };
        let h = 1e-6;
        let mut idx = 0;
        let mut max_rel: f64 = 0.0;
        let n_tensors = enc.clone().trainable_mut(false).len();
        for t in 0..n_tensors {
            let len = enc.clone().trainable_mut(false)[t].len();
            for i in 0..len {
                let mut plus = enc.clone();
                plus.trainable_mut(false)[t][i] += h;
                let mut minus = enc.clone();
                minus.trainable_mut(false)[t][i] -= h;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let an = analytic[idx];
                max_rel = max_rel.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6));
                idx += 1;
            }
        }
        assert_eq!(idx, analytic.len());
        assert!(max_rel < 1e-5, "max relative error {max_rel}");
    }

    #[test]
    fn sgd_and_adam_step() {
        let mut p = vec![1.0, -1.0];
        let mut sgd = Optimizer::new(OptimizerKind::Sgd, 0.5);
        sgd.step(vec![&mut p], vec![&[2.0, -2.0]]).unwrap();
        assert_eq!(p, vec![0.0, 0.0]);

        // First Adam step moves every coordinate by lr * sign(g) (up to eps).
        let mut p = vec![1.0, -1.0];
        let mut adam = Optimizer::new(OptimizerKind::Adam, 0.1);
        adam.step(vec![&mut p], vec![&[3.0, -0.01]]).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-5);
    }
}
