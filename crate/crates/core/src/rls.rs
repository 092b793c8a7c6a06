//! Recursive least squares for the nominal parameters `Θ̄` and the
//! cross-projection `H`.
//!
//! At time `t` the state approximates `Θ̄ = Y Φ†` and `Hᵀ = Γ Φ†`. Both share
//! the gain `P(t)`, which tends to `(Φ Φᵀ)⁻¹`.

use nalgebra::{DMatrix, DVector};

use crate::error::{LavaError, Result};

pub const DEFAULT_INITIAL_GAIN: f64 = 1e4;

#[derive(Debug, Clone, PartialEq)]
pub struct RlsState {
    /// `n_y × p`
    pub theta_bar: DMatrix<f64>,
    /// `p × q`
    pub h: DMatrix<f64>,
    /// `p × p`, symmetric positive definite.
    pub gain: DMatrix<f64>,
    pub t: usize,
}

impl RlsState {
    /// Zero parameters and `P(0) = c·I`.
    pub fn new(n_y: usize, p: usize, q: usize, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(LavaError::argument("initial gain c must be positive"));
        }
        Ok(RlsState {
            theta_bar: DMatrix::zeros(n_y, p),
            h: DMatrix::zeros(p, q),
            gain: DMatrix::identity(p, p) * c,
            t: 0,
        })
    }

    pub fn n_y(&self) -> usize {
        self.theta_bar.nrows()
    }

    pub fn p(&self) -> usize {
        self.theta_bar.ncols()
    }

    pub fn q(&self) -> usize {
        self.h.ncols()
    }

    /// Absorbs one sample. `P(t)` is formed first; `Θ̄(t)` and `H(t)` are then
    /// corrected along `P(t) φ(t)`.
    pub fn update(&mut self, y: &DVector<f64>, phi: &DVector<f64>, gamma: &DVector<f64>) -> Result<()> {
        if y.len() != self.n_y() || phi.len() != self.p() || gamma.len() != self.q() {
            return Err(LavaError::argument(format!(
                "RLS update expects y:{}, phi:{}, gamma:{}; got {}, {}, {}",
                self.n_y(),
                self.p(),
                self.q(),
                y.len(),
                phi.len(),
                gamma.len()
            )));
        }
        if y.iter().chain(phi.iter()).chain(gamma.iter()).any(|v| !v.is_finite()) {
            return Err(LavaError::numeric("non-finite sample passed to RLS"));
        }

        let p_phi = &self.gain * phi;
        let denom = 1.0 + phi.dot(&p_phi);
        self.gain.ger(-1.0 / denom, &p_phi, &p_phi, 1.0);
        let sym = (&self.gain + self.gain.transpose()) * 0.5;
        self.gain = sym;

        // k = P(t) φ(t); for the symmetric gain this equals P(t-1)φ / denom.
        let k = &self.gain * phi;
        let residual = y - &self.theta_bar * phi;
        self.theta_bar.ger(1.0, &residual, &k, 1.0);
        let h_residual = gamma - self.h.tr_mul(phi);
        self.h.ger(1.0, &k, &h_residual, 1.0);
        self.t += 1;

        if self.gain.iter().any(|v| !v.is_finite()) {
            return Err(LavaError::numeric("RLS gain became non-finite"));
        }
        Ok(())
    }
}

/// Minimum-norm batch solution `Θ̄ = Y Φ†`, `H = (Γ Φ†)ᵀ`.
pub fn batch_ls(phi: &DMatrix<f64>, y: &DMatrix<f64>, gamma: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = phi.ncols();
    if n == 0 || y.ncols() != n || gamma.ncols() != n {
        return Err(LavaError::argument("batch_ls needs matching nonempty sample counts"));
    }
    let pinv = pseudo_inverse(phi)?;
    let theta_bar = y * &pinv;
    let h = (gamma * &pinv).transpose();
    Ok((theta_bar, h))
}

/// Moore–Penrose pseudoinverse with the usual `max(m, n)·ε·σ_max` cutoff.
pub fn pseudo_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = smax * a.nrows().max(a.ncols()) as f64 * f64::EPSILON;
    svd.pseudo_inverse(tol.max(f64::MIN_POSITIVE))
        .map_err(|e| LavaError::numeric(format!("pseudoinverse failed: {e}")))
}
