//! Symmetric tridiagonal precision matrices.
//!
//! A chain-structured GMRF has a tridiagonal precision, so everything the
//! inference engine needs (factorisation, solves, log-determinants, draws and
//! the marginal covariance bands) is O(n) through a lower-bidiagonal
//! Cholesky factor. [`dense_oracle`] mirrors the same quantities with dense
//! routines for verification.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Smallest admissible Cholesky pivot.
pub const PIVOT_TOL: f64 = 1e-300;

/// Largest dimension accepted by [`dense_oracle`].
pub const DENSE_LIMIT: usize = 512;

/// Symmetric tridiagonal matrix stored by its two bands.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagSym {
    diag: Vec<f64>,
    offdiag: Vec<f64>,
}

impl TridiagSym {
    pub fn new(diag: Vec<f64>, offdiag: Vec<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        if offdiag.len() + 1 != diag.len() {
            return Err(Error::DimensionMismatch {
                expected: diag.len() - 1,
                got: offdiag.len(),
            });
        }
        Ok(Self { diag, offdiag })
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, value: f64) -> Self {
        assert!(n >= 1, "dimension must be positive");
        Self {
            diag: vec![value; n],
            offdiag: vec![0.0; n - 1],
        }
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn offdiag(&self) -> &[f64] {
        &self.offdiag
    }

    /// `self + diag(c)`.
    pub fn add_diag(&self, c: &[f64]) -> Result<Self> {
        check_len(self.n(), c.len())?;
        let diag = self.diag.iter().zip(c).map(|(a, b)| a + b).collect();
        Ok(Self {
            diag,
            offdiag: self.offdiag.clone(),
        })
    }

    /// Contiguous principal sub-block `[start, end)`.
    pub fn sub_block(&self, start: usize, end: usize) -> Self {
        assert!(start < end && end <= self.n());
        Self {
            diag: self.diag[start..end].to_vec(),
            offdiag: self.offdiag[start..end - 1].to_vec(),
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        check_len(n, x.len())?;
        let mut out: Vec<f64> = self.diag.iter().zip(x).map(|(d, v)| d * v).collect();
        for i in 0..n - 1 {
            out[i] += self.offdiag[i] * x[i + 1];
            out[i + 1] += self.offdiag[i] * x[i];
        }
        Ok(out)
    }

    /// `xᵀ Q x`.
    pub fn quad_form(&self, x: &[f64]) -> Result<f64> {
        let qx = self.mul_vec(x)?;
        Ok(qx.iter().zip(x).map(|(a, b)| a * b).sum())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
        }
        for i in 0..n - 1 {
            m[(i, i + 1)] = self.offdiag[i];
            m[(i + 1, i)] = self.offdiag[i];
        }
        m
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Lower-bidiagonal Cholesky factor `L` with `L Lᵀ = Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholBidiag {
    d: Vec<f64>,
    e: Vec<f64>,
    logdet: f64,
}

impl CholBidiag {
    pub fn n(&self) -> usize {
        self.d.len()
    }

    /// Diagonal of `L`.
    pub fn d(&self) -> &[f64] {
        &self.d
    }

    /// Sub-diagonal of `L`.
    pub fn e(&self) -> &[f64] {
        &self.e
    }

    /// `log |Q|`.
    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    /// `L Lᵀ` as a tridiagonal matrix.
    pub fn recompose(&self) -> TridiagSym {
        let n = self.n();
        let mut diag = Vec::with_capacity(n);
        for i in 0..n {
            let below = if i > 0 { self.e[i - 1].powi(2) } else { 0.0 };
            diag.push(self.d[i] * self.d[i] + below);
        }
        let offdiag = (0..n - 1).map(|i| self.e[i] * self.d[i]).collect();
        TridiagSym { diag, offdiag }
    }

    /// Solves `L y = b` in place.
    fn forward(&self, b: &mut [f64]) {
        b[0] /= self.d[0];
        for i in 1..b.len() {
            b[i] = (b[i] - self.e[i - 1] * b[i - 1]) / self.d[i];
        }
    }

    /// Solves `Lᵀ x = y` in place.
    fn backward(&self, y: &mut [f64]) {
        let n = y.len();
        y[n - 1] /= self.d[n - 1];
        for i in (0..n - 1).rev() {
            y[i] = (y[i] - self.e[i] * y[i + 1]) / self.d[i];
        }
    }
}

pub fn cholesky(q: &TridiagSym) -> Result<CholBidiag> {
    let n = q.n();
    let mut d = Vec::with_capacity(n);
    let mut e = Vec::with_capacity(n - 1);
    let mut logdet = 0.0;
    let mut pivot = q.diag[0];
    for i in 0..n {
        if !(pivot > PIVOT_TOL) {
            return Err(Error::NotPositiveDefinite { index: i, pivot });
        }
        let di = pivot.sqrt();
        logdet += 2.0 * di.ln();
        d.push(di);
        if i + 1 < n {
            let ei = q.offdiag[i] / di;
            e.push(ei);
            pivot = q.diag[i + 1] - ei * ei;
        }
    }
    Ok(CholBidiag { d, e, logdet })
}

/// Solves `Q x = b` given the factor of `Q`.
pub fn solve(l: &CholBidiag, b: &[f64]) -> Result<Vec<f64>> {
    check_len(l.n(), b.len())?;
    let mut x = b.to_vec();
    l.forward(&mut x);
    l.backward(&mut x);
    Ok(x)
}

/// Draws from `N(mean, Q⁻¹)` as `mean + L⁻ᵀ z`.
pub fn sample_gaussian(l: &CholBidiag, mean: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
    check_len(l.n(), mean.len())?;
    let mut z: Vec<f64> = (0..l.n()).map(|_| rng.standard_normal()).collect();
    l.backward(&mut z);
    Ok(z.iter().zip(mean).map(|(a, m)| a + m).collect())
}

/// Diagonal and first super-diagonal of `Q⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialInverse {
    /// `Σ_{t,t}`
    pub var: Vec<f64>,
    /// `Σ_{t,t+1}`
    pub cov1: Vec<f64>,
}

impl PartialInverse {
    pub fn sd(&self, t: usize) -> f64 {
        self.var[t].sqrt()
    }
}

/// Backward Takahashi recursion on the bidiagonal factor, O(n).
pub fn partial_inverse(l: &CholBidiag) -> PartialInverse {
    let n = l.n();
    let mut var = vec![0.0; n];
    let mut cov1 = vec![0.0; n - 1];
    var[n - 1] = 1.0 / (l.d[n - 1] * l.d[n - 1]);
    for i in (0..n - 1).rev() {
        let r = l.e[i] / l.d[i];
        cov1[i] = -r * var[i + 1];
        var[i] = 1.0 / (l.d[i] * l.d[i]) - r * cov1[i];
    }
    PartialInverse { var, cov1 }
}

/// Dense inverse and log-determinant of a tridiagonal matrix.
#[derive(Debug, Clone)]
pub struct DenseOracle {
    pub inverse: DMatrix<f64>,
    pub logdet: f64,
}

/// Dense mirror of the banded routines, for verification only.
pub fn dense_oracle(q: &TridiagSym) -> Result<DenseOracle> {
    let n = q.n();
    if n > DENSE_LIMIT {
        return Err(Error::DimensionTooLarge { n, limit: DENSE_LIMIT });
    }
    let dense = q.to_dense();
    let chol = dense
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { index: 0, pivot: f64::NAN })?;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let inverse = dense
        .lu()
        .try_inverse()
        .ok_or(Error::NotPositiveDefinite { index: 0, pivot: 0.0 })?;
    Ok(DenseOracle { inverse, logdet })
}
