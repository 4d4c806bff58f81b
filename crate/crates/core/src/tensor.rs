//! Dense N-way tensors, missing-data masks and the multilinear algebra
//! used by every fitting and sampling routine.
//!
//! Storage is column-major with mode 0 varying fastest. The mode-n
//! matricization maps entry `(i_0, .., i_{N-1})` to row `i_n` and column
//! `sum_{k != n} i_k J_k` with `J_k = prod_{m < k, m != n} I_m`, so the
//! design matrix of a CP model at mode n is the Khatri-Rao chain
//! `U^{N-1} ⊙ .. ⊙ U^{n+1} ⊙ U^{n-1} ⊙ .. ⊙ U^0`.
//!
//! Modes are 0-based in this API; file formats and the CLI are 1-based.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Highest tensor order accepted.
pub const MAX_ORDER: usize = 8;

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() || dims.len() > MAX_ORDER {
        return Err(Error::Shape(format!(
            "tensor order must be in 1..={MAX_ORDER}, got {}",
            dims.len()
        )));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Shape(format!("zero-length mode in {dims:?}")));
    }
    Ok(dims.iter().product())
}

/// Column-major strides for `dims`.
pub fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(dims.len());
    let mut acc = 1;
    for &d in dims {
        s.push(acc);
        acc *= d;
    }
    s
}

/// Linear offset of a 0-based multi-index.
pub fn linear_index(dims: &[usize], idx: &[usize]) -> usize {
    debug_assert_eq!(dims.len(), idx.len());
    let mut off = 0;
    let mut stride = 1;
    for (&i, &d) in idx.iter().zip(dims) {
        debug_assert!(i < d);
        off += i * stride;
        stride *= d;
    }
    off
}

/// 0-based multi-index of a linear offset.
pub fn multi_index(dims: &[usize], mut lin: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(dims.len());
    for &d in dims {
        idx.push(lin % d);
        lin /= d;
    }
    idx
}

/// Dense real tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n = check_dims(&dims)?;
        if data.len() != n {
            return Err(Error::Shape(format!(
                "{} values for dims {dims:?} (expected {n})",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let n = check_dims(&dims)?;
        Ok(Self {
            dims,
            data: vec![0.0; n],
        })
    }

    /// Builds a tensor by evaluating `f` at every 0-based multi-index.
    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let n = check_dims(&dims)?;
        let data = (0..n).map(|l| f(&multi_index(&dims, l))).collect();
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[linear_index(&self.dims, idx)]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// A tensor with a set of missing entries.
///
/// Missing entries hold `NaN` so that any accidental read shows up in the
/// output. `missing` is kept sorted by linear offset. Equality compares
/// dims, mask and observed values.
#[derive(Clone, Debug)]
pub struct MaskedTensor {
    values: DenseTensor,
    observed: Vec<bool>,
    missing: Vec<usize>,
}

impl PartialEq for MaskedTensor {
    fn eq(&self, other: &Self) -> bool {
        self.values.dims == other.values.dims
            && self.observed == other.observed
            && self
                .observed_indices()
                .all(|i| self.values.data[i] == other.values.data[i])
    }
}

impl MaskedTensor {
    /// Builds a masked tensor from dense values and the linear offsets of
    /// missing entries. Values at missing offsets are ignored.
    pub fn new(dims: Vec<usize>, mut data: Vec<f64>, missing: &[usize]) -> Result<Self> {
        let n = check_dims(&dims)?;
        if data.len() != n {
            return Err(Error::Shape(format!(
                "{} values for dims {dims:?} (expected {n})",
                data.len()
            )));
        }
        let mut observed = vec![true; n];
        for &m in missing {
            if m >= n {
                return Err(Error::Shape(format!("missing offset {m} outside {n} entries")));
            }
            observed[m] = false;
        }
        for (v, &obs) in data.iter_mut().zip(&observed) {
            if obs {
                if !v.is_finite() {
                    return Err(Error::NonFinite("observed tensor entry".into()));
                }
            } else {
                *v = f64::NAN;
            }
        }
        let missing = observed
            .iter()
            .enumerate()
            .filter_map(|(i, &o)| (!o).then_some(i))
            .collect();
        Ok(Self {
            values: DenseTensor { dims, data },
            observed,
            missing,
        })
    }

    /// Treats every `NaN` in `data` as missing.
    pub fn from_nan(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let missing: Vec<usize> = data
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.is_nan().then_some(i))
            .collect();
        Self::new(dims, data, &missing)
    }

    pub fn fully_observed(t: DenseTensor) -> Result<Self> {
        let DenseTensor { dims, data } = t;
        Self::new(dims, data, &[])
    }

    /// Masks `missing` offsets of a dense tensor.
    pub fn mask(t: &DenseTensor, missing: &[usize]) -> Result<Self> {
        Self::new(t.dims.clone(), t.data.clone(), missing)
    }

    pub fn dims(&self) -> &[usize] {
        &self.values.dims
    }

    pub fn order(&self) -> usize {
        self.values.dims.len()
    }

    pub fn len(&self) -> usize {
        self.values.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.data.is_empty()
    }

    /// Raw storage; missing entries are `NaN`.
    pub fn raw(&self) -> &[f64] {
        &self.values.data
    }

    pub fn is_observed(&self, lin: usize) -> bool {
        self.observed[lin]
    }

    pub fn observed_mask(&self) -> &[bool] {
        &self.observed
    }

    pub fn missing(&self) -> &[usize] {
        &self.missing
    }

    pub fn n_observed(&self) -> usize {
        self.len() - self.missing.len()
    }

    pub fn observed_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.observed
            .iter()
            .enumerate()
            .filter_map(|(i, &o)| o.then_some(i))
    }

    /// Dense copy with missing entries replaced by `fill[k]` for the k-th
    /// missing offset.
    pub fn completed_with(&self, fill: &[f64]) -> DenseTensor {
        assert_eq!(fill.len(), self.missing.len());
        let mut out = self.values.clone();
        for (&m, &v) in self.missing.iter().zip(fill) {
            out.data[m] = v;
        }
        out
    }

    /// Dense copy with every missing entry set to `value`.
    pub fn filled(&self, value: f64) -> DenseTensor {
        let fill = vec![value; self.missing.len()];
        self.completed_with(&fill)
    }

    /// Adds further missing offsets (used for cross-validation holdout).
    pub fn with_extra_missing(&self, extra: &[usize]) -> Result<Self> {
        let mut all = self.missing.clone();
        all.extend_from_slice(extra);
        Self::new(self.values.dims.clone(), self.values.data.clone(), &all)
    }
}

/// Shift applied by [`center_observed`].
///
/// Keeps the original observed values so that restoring is exact.
#[derive(Clone, Debug)]
pub struct Centering {
    pub mean: f64,
    original: MaskedTensor,
}

impl Centering {
    /// Maps a completed tensor on the centered scale back to the data scale.
    /// Observed entries are restored bit-for-bit; others are shifted by the
    /// mean.
    pub fn restore(&self, centered: &DenseTensor) -> DenseTensor {
        let mut out = centered.clone();
        for (i, v) in out.data.iter_mut().enumerate() {
            if self.original.observed[i] {
                *v = self.original.values.data[i];
            } else {
                *v += self.mean;
            }
        }
        out
    }

    /// Shifts a value from the centered scale back to the data scale.
    pub fn uncenter(&self, v: f64) -> f64 {
        v + self.mean
    }

    pub fn original(&self) -> &MaskedTensor {
        &self.original
    }
}

/// Subtracts the mean of the observed entries.
pub fn center_observed(t: &MaskedTensor) -> Result<(MaskedTensor, Centering)> {
    let n = t.n_observed();
    if n == 0 {
        return Err(Error::EmptyObserved);
    }
    let mean = t.observed_indices().map(|i| t.raw()[i]).sum::<f64>() / n as f64;
    let mut c = t.clone();
    for (v, &o) in c.values.data.iter_mut().zip(&t.observed) {
        if o {
            *v -= mean;
        }
    }
    Ok((
        c,
        Centering {
            mean,
            original: t.clone(),
        },
    ))
}

fn check_mode(n: usize, order: usize) -> Result<()> {
    if n >= order {
        Err(Error::ModeOutOfRange { mode: n, order })
    } else {
        Ok(())
    }
}

/// Mode-n matricization of raw column-major storage.
pub fn matricize_raw(dims: &[usize], data: &[f64], n: usize) -> Result<DMatrix<f64>> {
    check_mode(n, dims.len())?;
    let left: usize = dims[..n].iter().product();
    let rows = dims[n];
    let right: usize = dims[n + 1..].iter().product();
    let mut m = DMatrix::zeros(rows, left * right);
    for b in 0..right {
        for i in 0..rows {
            let src = left * (i + rows * b);
            for a in 0..left {
                m[(i, a + left * b)] = data[src + a];
            }
        }
    }
    Ok(m)
}

/// Mode-n matricization, `I_n x prod_{k != n} I_k`.
pub fn matricize(t: &DenseTensor, n: usize) -> Result<DMatrix<f64>> {
    matricize_raw(&t.dims, &t.data, n)
}

/// Inverse of [`matricize`].
pub fn fold(m: &DMatrix<f64>, n: usize, dims: &[usize]) -> Result<DenseTensor> {
    let total = check_dims(dims)?;
    check_mode(n, dims.len())?;
    let left: usize = dims[..n].iter().product();
    let rows = dims[n];
    let right: usize = dims[n + 1..].iter().product();
    if m.nrows() != rows || m.ncols() != left * right {
        return Err(Error::Shape(format!(
            "{}x{} matrix cannot fold to mode {n} of {dims:?}",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut data = vec![0.0; total];
    for b in 0..right {
        for i in 0..rows {
            let dst = left * (i + rows * b);
            for a in 0..left {
                data[dst + a] = m[(i, a + left * b)];
            }
        }
    }
    Ok(DenseTensor {
        dims: dims.to_vec(),
        data,
    })
}

/// Mode-n product `Y = X x_n M`, i.e. `Y_(n) = M X_(n)`.
pub fn mode_product(t: &DenseTensor, n: usize, m: &DMatrix<f64>) -> Result<DenseTensor> {
    check_mode(n, t.order())?;
    if m.ncols() != t.dims[n] {
        return Err(Error::Shape(format!(
            "mode-{n} product needs {} columns, got {}",
            t.dims[n],
            m.ncols()
        )));
    }
    let left: usize = t.dims[..n].iter().product();
    let rows = t.dims[n];
    let right: usize = t.dims[n + 1..].iter().product();
    let out_rows = m.nrows();
    let mut dims = t.dims.clone();
    dims[n] = out_rows;
    let mut data = vec![0.0; left * out_rows * right];
    for b in 0..right {
        for i in 0..rows {
            let src = left * (i + rows * b);
            let xs = &t.data[src..src + left];
            for j in 0..out_rows {
                let w = m[(j, i)];
                if w == 0.0 {
                    continue;
                }
                let dst = left * (j + out_rows * b);
                for (d, &x) in data[dst..dst + left].iter_mut().zip(xs) {
                    *d += w * x;
                }
            }
        }
    }
    Ok(DenseTensor { dims, data })
}

/// Column-wise Kronecker product: column r is `kron(A[:, r], B[:, r])`.
pub fn khatri_rao(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::Shape(format!(
            "khatri-rao column counts differ: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let (ia, jb) = (a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(ia * jb, a.ncols());
    for r in 0..a.ncols() {
        for i in 0..ia {
            let av = a[(i, r)];
            for j in 0..jb {
                out[(i * jb + j, r)] = av * b[(j, r)];
            }
        }
    }
    Ok(out)
}

/// `U^{N-1} ⊙ .. ⊙ U^0` omitting `skip`. With a single remaining factor
/// the result is that factor; with none it is a `1 x R` row of ones.
pub fn khatri_rao_chain(factors: &[DMatrix<f64>], skip: Option<usize>) -> Result<DMatrix<f64>> {
    let r = factors
        .first()
        .map(|f| f.ncols())
        .ok_or_else(|| Error::Shape("no factors".into()))?;
    let mut acc = DMatrix::from_element(1, r, 1.0);
    for (k, f) in factors.iter().enumerate().rev() {
        if Some(k) == skip {
            continue;
        }
        acc = khatri_rao(&acc, f)?;
    }
    Ok(acc)
}

pub fn kronecker(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

pub fn hadamard(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "hadamard shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a.component_mul(b))
}

/// CP model `[[λ; U^0, .., U^{N-1}]]`.
///
/// `lambda` is all ones unless the model has been normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct CpModel {
    factors: Vec<DMatrix<f64>>,
    lambda: DVector<f64>,
}

impl CpModel {
    pub fn new(factors: Vec<DMatrix<f64>>) -> Result<Self> {
        let r = factors.first().map(|f| f.ncols()).unwrap_or(0);
        Self::with_weights(factors, DVector::from_element(r, 1.0))
    }

    pub fn with_weights(factors: Vec<DMatrix<f64>>, lambda: DVector<f64>) -> Result<Self> {
        if factors.is_empty() || factors.len() > MAX_ORDER {
            return Err(Error::Shape(format!("{} factor matrices", factors.len())));
        }
        let r = factors[0].ncols();
        if r == 0 {
            return Err(Error::InvalidRank {
                rank: 0,
                reason: "rank must be at least 1".into(),
            });
        }
        if factors.iter().any(|f| f.ncols() != r) || lambda.len() != r {
            return Err(Error::Shape("factor column counts disagree".into()));
        }
        if factors.iter().any(|f| f.nrows() == 0) {
            return Err(Error::Shape("empty factor".into()));
        }
        if factors.iter().any(|f| f.iter().any(|v| !v.is_finite()))
            || lambda.iter().any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("CP factor".into()));
        }
        Ok(Self { factors, lambda })
    }

    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    pub fn factors_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.factors
    }

    pub fn lambda(&self) -> &DVector<f64> {
        &self.lambda
    }

    /// Unit-norm columns with scales moved into `lambda`.
    pub fn normalized(&self) -> Self {
        let mut out = self.clone();
        for f in &mut out.factors {
            for r in 0..f.ncols() {
                let norm = f.column(r).norm();
                if norm > 0.0 {
                    f.column_mut(r).unscale_mut(norm);
                    out.lambda[r] *= norm;
                } else {
                    out.lambda[r] = 0.0;
                }
            }
        }
        out
    }

    /// Folds `lambda` into the first factor.
    pub fn absorb_weights(&self) -> Self {
        let mut out = self.clone();
        for r in 0..self.rank() {
            out.factors[0].column_mut(r).scale_mut(self.lambda[r]);
        }
        out.lambda.fill(1.0);
        out
    }

    /// Rescales columns so every mode carries the same column norm while
    /// leaving the reconstruction unchanged. Weights are absorbed first.
    pub fn balance(&mut self) {
        if self.lambda.iter().any(|&l| l != 1.0) {
            *self = self.absorb_weights();
        }
        let n = self.factors.len() as f64;
        for r in 0..self.rank() {
            let norms: Vec<f64> = self.factors.iter().map(|f| f.column(r).norm()).collect();
            if norms.iter().any(|&x| x == 0.0 || !x.is_finite()) {
                continue;
            }
            let geo = (norms.iter().map(|x| x.ln()).sum::<f64>() / n).exp();
            for (f, &nr) in self.factors.iter_mut().zip(&norms) {
                f.column_mut(r).scale_mut(geo / nr);
            }
        }
    }
}

/// Full tensor `sum_r λ_r u_r^0 ∘ .. ∘ u_r^{N-1}`.
pub fn cp_reconstruct(m: &CpModel) -> DenseTensor {
    let dims = m.dims();
    let design = khatri_rao_chain(&m.factors, Some(0)).expect("factors share rank");
    let mut u0 = m.factors[0].clone();
    for r in 0..m.rank() {
        u0.column_mut(r).scale_mut(m.lambda[r]);
    }
    // X_(0) is stored column-major exactly like the tensor itself.
    let x0 = u0 * design.transpose();
    DenseTensor {
        dims,
        data: x0.as_slice().to_vec(),
    }
}

/// `(U^k)^T U^k` Hadamard-multiplied over all k except `skip`.
pub fn gram_hadamard(factors: &[DMatrix<f64>], skip: usize) -> DMatrix<f64> {
    let r = factors[0].ncols();
    let mut g = DMatrix::from_element(r, r, 1.0);
    for (k, f) in factors.iter().enumerate() {
        if k != skip {
            g.component_mul_assign(&(f.transpose() * f));
        }
    }
    g
}
