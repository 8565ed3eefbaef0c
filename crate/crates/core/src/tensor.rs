//! Dense row-major matrices and the handful of kernels the engine needs:
//! cosine similarity, batched similarity, stabilized log-sum-exp and L2
//! normalization. Everything is `f64`.

use std::ops::Deref;

use crate::error::{Error, Result};

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// A single embedding. All entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct RowVector(Vec<f64>);

impl RowVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values)?;
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl Deref for RowVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Row-major `rows x cols` matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(values.len()) {
            return Err(Error::shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows.saturating_mul(cols),
                values.len()
            )));
        }
        check_finite(&values)?;
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equal-length rows. An empty slice yields a 0x`cols` matrix
    /// only through [`DenseMatrix::zeros`]; here it is 0x0.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            values.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, values)
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, values.len());
        Self { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.values[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    /// Copies the given rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self::from_raw(indices.len(), self.cols, values)
    }

    /// Contiguous row range `start..end`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self::from_raw(
            end - start,
            self.cols,
            self.values[start * self.cols..end * self.cols].to_vec(),
        )
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &DenseMatrix) -> Result<Self> {
        if self.rows > 0 && other.rows > 0 && self.cols != other.cols {
            return Err(Error::shape(format!(
                "cannot stack {} columns on {} columns",
                other.cols, self.cols
            )));
        }
        let cols = if self.rows > 0 { self.cols } else { other.cols };
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Ok(Self::from_raw(self.rows + other.rows, cols, values))
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.values[j * self.rows + i] = self.values[i * self.cols + j];
            }
        }
        out
    }

    /// `self * other`.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = out.row_mut(i);
            for (k, &aik) in a.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                for (oj, &bkj) in o.iter_mut().zip(other.row(k)) {
                    *oj += aik * bkj;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * other`, accumulating rows in order.
    pub fn t_matmul(&self, other: &DenseMatrix) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::shape(format!(
                "t_matmul {}x{}^T by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let a = self.row(r);
            let b = other.row(r);
            for (i, &ai) in a.iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                for (oj, &bj) in out.row_mut(i).iter_mut().zip(b) {
                    *oj += ai * bj;
                }
            }
        }
        Ok(out)
    }

    /// `self * other^T`.
    pub fn matmul_t(&self, other: &DenseMatrix) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::shape(format!(
                "matmul_t {}x{} by {}x{}^T",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.values[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    /// Adds `scale * other` in place.
    pub fn add_scaled(&mut self, other: &DenseMatrix, scale: f64) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "add {:?} to {:?}",
                other.shape(),
                self.shape()
            )));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.values)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn cosine_unchecked(a: &[f64], b: &[f64], norm_a: f64, norm_b: f64) -> f64 {
    (dot(a, b) / (norm_a * norm_b)).clamp(-1.0, 1.0)
}

/// Cosine of the angle between `a` and `b`, clamped to `[-1, 1]`.
///
/// Zero-norm inputs are an error rather than a silent zero.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "cosine of dims {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm { row: None });
    }
    Ok(cosine_unchecked(a, b, na, nb))
}

/// Norm of every row, failing on the first zero-norm row.
pub fn row_norms(m: &DenseMatrix) -> Result<Vec<f64>> {
    m.row_iter()
        .enumerate()
        .map(|(i, r)| match norm(r) {
            n if n > 0.0 => Ok(n),
            _ => Err(Error::ZeroNorm { row: Some(i) }),
        })
        .collect()
}

/// `B x M` matrix of pairwise cosines between the rows of `queries` and `targets`.
/// Entry `(i, j)` is bitwise equal to `cosine_sim(queries.row(i), targets.row(j))`.
pub fn similarity_matrix(queries: &DenseMatrix, targets: &DenseMatrix) -> Result<DenseMatrix> {
    if queries.cols() != targets.cols() {
        return Err(Error::shape(format!(
            "query dim {} vs target dim {}",
            queries.cols(),
            targets.cols()
        )));
    }
    let qn = row_norms(queries)?;
    let tn = row_norms(targets)?;
    let mut values = Vec::with_capacity(queries.rows() * targets.rows());
    for (i, q) in queries.row_iter().enumerate() {
        for (j, t) in targets.row_iter().enumerate() {
            values.push(cosine_unchecked(q, t, qn[i], tn[j]));
        }
    }
    Ok(DenseMatrix::from_raw(
        queries.rows(),
        targets.rows(),
        values,
    ))
}

/// `max(v) + ln(sum(exp(v_i - max(v))))`.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Empty("log_sum_exp of an empty vector"));
    }
    check_finite(v)?;
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = v.iter().map(|x| (x - m).exp()).sum();
    Ok(m + s.ln())
}

pub fn l2_normalize(v: &[f64]) -> Result<RowVector> {
    let n = norm(v);
    if n == 0.0 {
        return Err(Error::ZeroNorm { row: None });
    }
    Ok(RowVector(v.iter().map(|x| x / n).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_sim(&[3.0, 0.0], &[3.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        // 1*2 + 2*1 + 2*2 = 8, both norms 3.
        let hand = 8.0 / (3.0 * 3.0);
        assert_abs_diff_eq!(
            cosine_sim(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap(),
            hand,
            epsilon = 1e-15
        );
    }

    #[test]
    fn cosine_rejects_zero_and_mismatch() {
        assert!(matches!(
            cosine_sim(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroNorm { row: None })
        ));
        assert!(matches!(
            cosine_sim(&[1.0], &[1.0, 0.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn similarity_matrix_examples() {
        let i2 = DenseMatrix::identity(2);
        let s = similarity_matrix(&i2, &i2).unwrap();
        assert_eq!(s.values(), &[1.0, 0.0, 0.0, 1.0]);

        let q = DenseMatrix::from_rows(&[[1.0, 2.0, 2.0]]).unwrap();
        let t = DenseMatrix::from_rows(&[[2.0, 1.0, 2.0]]).unwrap();
        assert_abs_diff_eq!(
            similarity_matrix(&q, &t).unwrap().get(0, 0),
            8.0 / 9.0,
            epsilon = 1e-15
        );

        let q = DenseMatrix::from_rows(&[[1.0, 2.0], [-3.0, 0.5], [0.1, 0.1]]).unwrap();
        let s = similarity_matrix(&q, &q).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(s.get(i, i), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn similarity_matrix_reports_zero_row() {
        let q = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        let t = DenseMatrix::identity(2);
        assert!(matches!(
            similarity_matrix(&q, &t),
            Err(Error::ZeroNorm { row: Some(1) })
        ));
        let t3 = DenseMatrix::identity(3);
        assert!(matches!(similarity_matrix(&t, &t3), Err(Error::Shape(_))));
    }

    #[test]
    fn log_sum_exp_examples() {
        assert_abs_diff_eq!(
            log_sum_exp(&[0.0, 0.0]).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        assert_eq!(log_sum_exp(&[50.0]).unwrap(), 50.0);
        // ln(1 + e^-50) ~ 1.9e-22, below f64 resolution at 50.
        assert_eq!(log_sum_exp(&[50.0, 0.0]).unwrap(), 50.0);
        // 1/0.02 logits over many terms: naive accumulation overflows.
        let big = vec![50.0 * 20.0; 4096];
        let lse = log_sum_exp(&big).unwrap();
        assert!(lse.is_finite());
        assert_abs_diff_eq!(lse, 1000.0 + (4096f64).ln(), epsilon = 1e-9);
        assert!(matches!(log_sum_exp(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn l2_normalize_examples() {
        let v = l2_normalize(&[3.0, 4.0]).unwrap();
        assert_abs_diff_eq!(v[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 0.8, epsilon = 1e-15);
        let u = l2_normalize(&[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(u.as_slice(), &[0.0, 1.0, 0.0]);
        assert_eq!(
            l2_normalize(&[2.0, 2.0, 2.0, 2.0]).unwrap().as_slice(),
            &[0.5, 0.5, 0.5, 0.5]
        );
        assert!(l2_normalize(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn construction_rejects_non_finite() {
        assert!(matches!(
            DenseMatrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(RowVector::new(vec![f64::INFINITY]).is_err());
        assert!(matches!(
            DenseMatrix::new(2, 2, vec![1.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn matmul_variants_agree() {
        let a = DenseMatrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let b = DenseMatrix::from_rows(&[[1.0, 0.5], [-1.0, 2.0], [0.0, 1.0]]).unwrap();
        let ab = a.matmul(&b).unwrap();
        assert_eq!(ab.values(), &[-1.0, 7.5, -1.0, 18.0]);
        assert_eq!(a.transpose().t_matmul(&b).unwrap(), ab);
        assert_eq!(a.matmul_t(&b.transpose()).unwrap(), ab);
    }

    fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, dim).prop_filter("non-zero", |v| norm(v) > 1e-3)
    }

    proptest! {
        #[test]
        fn cosine_is_symmetric((a, b) in (1usize..12).prop_flat_map(|d| (vec_strategy(d), vec_strategy(d)))) {
            let ab = cosine_sim(&a, &b).unwrap();
            let ba = cosine_sim(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-15);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }

        #[test]
        fn cosine_is_scale_invariant(
            (a, b) in (1usize..12).prop_flat_map(|d| (vec_strategy(d), vec_strategy(d))),
            c in 1e-3f64..1e3,
        ) {
            let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
            let lhs = cosine_sim(&scaled, &b).unwrap();
            let rhs = cosine_sim(&a, &b).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn similarity_matrix_matches_pairwise(
            (q, t, d) in (1usize..6).prop_flat_map(|d| (
                proptest::collection::vec(vec_strategy(d), 1..5),
                proptest::collection::vec(vec_strategy(d), 1..5),
                Just(d),
            ))
        ) {
            let qm = DenseMatrix::from_rows(&q).unwrap();
            let tm = DenseMatrix::from_rows(&t).unwrap();
            let s = similarity_matrix(&qm, &tm).unwrap();
            prop_assert_eq!(s.shape(), (q.len(), t.len()));
            prop_assert_eq!(qm.cols(), d);
            for (i, qi) in q.iter().enumerate() {
                for (j, tj) in t.iter().enumerate() {
                    prop_assert!((s.get(i, j) - cosine_sim(qi, tj).unwrap()).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn log_sum_exp_bounds(v in proptest::collection::vec(-1e3f64..1e3, 1..64)) {
            let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = log_sum_exp(&v).unwrap();
            prop_assert!(lse.is_finite());
            prop_assert!(lse >= m);
            prop_assert!(lse <= m + (v.len() as f64).ln() + 1e-12);
        }

        #[test]
        fn l2_normalize_yields_unit_norm(v in vec_strategy(7)) {
            let u = l2_normalize(&v).unwrap();
            prop_assert!((norm(&u) - 1.0).abs() < 1e-12);
        }
    }
}
