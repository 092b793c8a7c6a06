//! Nominal regressor `φ(t)` and the Laplace basis expansion `γ(t)`.
//!
//! `φ(t) = [y(t-1)ᵀ … y(t-n_a)ᵀ u(t-1)ᵀ … u(t-n_b)ᵀ 1]ᵀ`, with samples before
//! the start of the record taken as zero. The basis is the tensor product of
//! one-dimensional Laplace eigenfunctions on `[-ℓ_i, ℓ_i]`,
//!
//! ```text
//! γ_{k_1..k_d} = Π_i ℓ_i^{-1/2} sin(π k_i (φ_i + ℓ_i) / (2 ℓ_i)),   k_i ∈ 1..=M
//! ```
//!
//! over the `d = p - 1` non-constant regressor entries. Multi-indices are
//! flattened lexicographically with the last index varying fastest.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{LavaError, Result};

/// Lower bound applied to estimated boundaries of constant-zero channels.
pub const MIN_BOUND: f64 = 1e-6;
pub const DEFAULT_MARGIN: f64 = 1.2;
/// Largest basis dimension `q` accepted.
pub const MAX_BASIS_DIM: usize = 1 << 22;

#[derive(Debug, Clone, PartialEq)]
pub struct RegressorConfig {
    pub n_a: usize,
    pub n_b: usize,
    pub n_u: usize,
    pub n_y: usize,
    /// Basis resolution `M` per regressor dimension.
    pub resolution: usize,
    /// Boundaries `ℓ_i`, one per non-constant entry of `φ`.
    pub ell: Vec<f64>,
}

impl RegressorConfig {
    pub fn new(n_a: usize, n_b: usize, n_u: usize, n_y: usize, resolution: usize, ell: Vec<f64>) -> Result<Self> {
        let cfg = RegressorConfig {
            n_a,
            n_b,
            n_u,
            n_y,
            resolution,
            ell,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Builds a config whose boundaries are estimated from `data` with
    /// [`estimate_bounds`].
    pub fn from_data(data: &Dataset, n_a: usize, n_b: usize, resolution: usize, margin: f64) -> Result<Self> {
        let ell = estimate_bounds(data, n_a, n_b, margin)?;
        Self::new(n_a, n_b, data.n_u(), data.n_y(), resolution, ell)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_y == 0 {
            return Err(LavaError::argument("n_y must be positive"));
        }
        if self.resolution == 0 {
            return Err(LavaError::argument("basis resolution M must be positive"));
        }
        if self.ell.len() != self.p() - 1 {
            return Err(LavaError::argument(format!(
                "expected {} boundaries, got {}",
                self.p() - 1,
                self.ell.len()
            )));
        }
        if self.ell.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(LavaError::argument("all boundaries must be positive and finite"));
        }
        self.checked_q()?;
        Ok(())
    }

    /// `p = n_y n_a + n_u n_b + 1`.
    pub fn p(&self) -> usize {
        self.n_y * self.n_a + self.n_u * self.n_b + 1
    }

    /// `q = M^(p-1)`.
    pub fn q(&self) -> usize {
        self.checked_q().expect("validated config")
    }

    fn checked_q(&self) -> Result<usize> {
        u32::try_from(self.p() - 1)
            .ok()
            .and_then(|e| self.resolution.checked_pow(e))
            .filter(|&q| q <= MAX_BASIS_DIM)
            .ok_or_else(|| {
                LavaError::argument(format!(
                    "basis dimension {}^{} is too large",
                    self.resolution,
                    self.p() - 1
                ))
            })
    }

    /// Longest lag, i.e. the number of leading samples with incomplete history.
    pub fn warmup(&self) -> usize {
        self.n_a.max(self.n_b)
    }

    pub fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if data.n_u() != self.n_u || data.n_y() != self.n_y {
            return Err(LavaError::schema(format!(
                "dataset has n_u={}, n_y={} but the model expects n_u={}, n_y={}",
                data.n_u(),
                data.n_y(),
                self.n_u,
                self.n_y
            )));
        }
        Ok(())
    }

    /// Writes `φ(t)` into `out` from an output history and input record.
    /// `outputs` may be a simulated trajectory; only columns before `t` are read.
    pub fn fill_phi(&self, outputs: &DMatrix<f64>, inputs: &DMatrix<f64>, t: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.p());
        let mut k = 0;
        for lag in 1..=self.n_a {
            for i in 0..self.n_y {
                out[k] = if t >= lag { outputs[(i, t - lag)] } else { 0.0 };
                k += 1;
            }
        }
        for lag in 1..=self.n_b {
            for i in 0..self.n_u {
                out[k] = if t >= lag { inputs[(i, t - lag)] } else { 0.0 };
                k += 1;
            }
        }
        out[k] = 1.0;
    }

    pub fn build_phi(&self, data: &Dataset, t: usize) -> Result<DVector<f64>> {
        self.check_dataset(data)?;
        if t >= data.len() {
            return Err(LavaError::argument(format!(
                "sample {t} outside record of length {}",
                data.len()
            )));
        }
        let mut phi = DVector::zeros(self.p());
        self.fill_phi(data.outputs(), data.inputs(), t, phi.as_mut_slice());
        Ok(phi)
    }

    /// Evaluates `γ(φ)`. The flag is `true` when some `|φ_i| > ℓ_i`.
    pub fn build_gamma(&self, phi: &DVector<f64>) -> (DVector<f64>, bool) {
        let mut gamma = DVector::zeros(self.q());
        let oob = self.fill_gamma(phi.as_slice(), gamma.as_mut_slice());
        (gamma, oob)
    }

    pub fn fill_gamma(&self, phi: &[f64], out: &mut [f64]) -> bool {
        laplace_basis(&phi[..self.p() - 1], &self.ell, self.resolution, out)
    }

    /// Regressor matrices `Φ (p × N)`, `Γ (q × N)` for a whole record.
    pub fn regressor_matrices(&self, data: &Dataset) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_dataset(data)?;
        let (p, q, n) = (self.p(), self.q(), data.len());
        let mut phi = DMatrix::zeros(p, n);
        let mut gamma = DMatrix::zeros(q, n);
        let mut oob = 0usize;
        for t in 0..n {
            self.fill_phi(data.outputs(), data.inputs(), t, phi.column_mut(t).as_mut_slice());
            let col = phi.column(t).clone_owned();
            if self.fill_gamma(col.as_slice(), gamma.column_mut(t).as_mut_slice()) {
                oob += 1;
            }
        }
        if oob > 0 {
            log::warn!("{oob} of {n} regressors fall outside the basis boundaries");
        }
        Ok((phi, gamma))
    }
}

/// Tensor-product Laplace basis over `x` with boundaries `ell`. Returns the
/// out-of-bounds flag.
pub fn laplace_basis(x: &[f64], ell: &[f64], m: usize, out: &mut [f64]) -> bool {
    debug_assert_eq!(x.len(), ell.len());
    let d = x.len();
    let mut oob = false;
    let mut table = vec![0.0; d * m];
    for (i, (&xi, &li)) in x.iter().zip(ell).enumerate() {
        oob |= xi.abs() > li;
        let scale = li.sqrt().recip();
        for k in 0..m {
            table[i * m + k] = scale * (PI * (k + 1) as f64 * (xi + li) / (2.0 * li)).sin();
        }
    }
    // Expand dimension by dimension; each pass multiplies the current prefix
    // products by the next dimension's factors, so the last index is fastest.
    out[0] = 1.0;
    let mut len = 1;
    for i in 0..d {
        let factors = &table[i * m..(i + 1) * m];
        for idx in (0..len).rev() {
            let base = out[idx];
            for (k, f) in factors.iter().enumerate() {
                out[idx * m + k] = base * f;
            }
        }
        len *= m;
    }
    debug_assert_eq!(len, out.len());
    oob
}

/// `ℓ_i = margin · max_t |φ_i(t)|`, floored at [`MIN_BOUND`].
pub fn estimate_bounds(data: &Dataset, n_a: usize, n_b: usize, margin: f64) -> Result<Vec<f64>> {
    if !(margin >= 1.0 && margin.is_finite()) {
        return Err(LavaError::argument("bound margin must be at least 1"));
    }
    // The final sample never enters φ as a lagged value.
    let n = data.len();
    let peak = |m: &DMatrix<f64>, i: usize, lag: usize| {
        (0..n.saturating_sub(lag))
            .map(|t| m[(i, t)].abs())
            .fold(0.0f64, f64::max)
    };
    let mut ell = Vec::with_capacity(data.n_y() * n_a + data.n_u() * n_b);
    for lag in 1..=n_a {
        for i in 0..data.n_y() {
            ell.push((margin * peak(data.outputs(), i, lag)).max(MIN_BOUND));
        }
    }
    for lag in 1..=n_b {
        for i in 0..data.n_u() {
            ell.push((margin * peak(data.inputs(), i, lag)).max(MIN_BOUND));
        }
    }
    Ok(ell)
}
