//! Reference computations used by the integration tests.
//!
//! Everything here works with the full vectorized (Kronecker) forms
//! `Γ̃ = Γᵀ ⊗ I`, `Λ = Γ̃ D Γ̃ᵀ + I ⊗ Σ` and dense factorizations, so it shares
//! no code path with the row-decoupled library implementation.

#![allow(dead_code)]

use lava_core::mm::{BatchData, MlParams};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    // Box-Muller keeps this independent of rand_distr.
    DMatrix::from_fn(r, c, |_, _| {
        let u1: f64 = rng.random_range(f64::EPSILON..1.0);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    })
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(lo..hi))
}

pub struct Instance {
    pub data: BatchData,
    pub params: MlParams,
}

/// Random regression problem with a planted sparse latent part and random
/// diagonal covariances (`D ≻ 0` unless `d_zero`).
pub fn random_instance(rng: &mut ChaCha8Rng, n_y: usize, n: usize, p: usize, q: usize, d_zero: bool) -> Instance {
    let phi = gaussian_matrix(rng, p, n);
    let gamma = gaussian_matrix(rng, q, n);
    let theta_true = gaussian_matrix(rng, n_y, p);
    let mut z_true = gaussian_matrix(rng, n_y, q);
    for v in z_true.iter_mut() {
        if rng.random_bool(0.6) {
            *v = 0.0;
        }
    }
    let noise = gaussian_matrix(rng, n_y, n) * 0.3;
    let y = &theta_true * &phi + &z_true * &gamma + noise;
    let data = BatchData::new(phi, gamma, y).unwrap();
    let params = MlParams {
        theta: gaussian_matrix(rng, n_y, p),
        d: if d_zero {
            DMatrix::zeros(n_y, q)
        } else {
            uniform_matrix(rng, n_y, q, 0.05, 1.5)
        },
        sigma: DVector::from_fn(n_y, |_, _| rng.random_range(0.2..2.0)),
    };
    Instance { data, params }
}

/// `Γ̃ = Γᵀ ⊗ I_{n_y}`: `N n_y × q n_y`.
pub fn gamma_tilde(gamma: &DMatrix<f64>, n_y: usize) -> DMatrix<f64> {
    let (q, n) = gamma.shape();
    let mut out = DMatrix::zeros(n * n_y, q * n_y);
    for t in 0..n {
        for j in 0..q {
            for i in 0..n_y {
                out[(t * n_y + i, j * n_y + i)] = gamma[(j, t)];
            }
        }
    }
    out
}

/// `diag(vec-ordered d)`.
pub fn d_full(d: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(d.as_slice()))
}

/// `I_N ⊗ Σ`.
pub fn noise_full(sigma: &DVector<f64>, n: usize) -> DMatrix<f64> {
    let n_y = sigma.len();
    DMatrix::from_diagonal(&DVector::from_fn(n * n_y, |k, _| sigma[k % n_y]))
}

pub fn lambda_full(params: &MlParams, data: &BatchData) -> DMatrix<f64> {
    let gt = gamma_tilde(&data.gamma, data.n_y());
    &gt * d_full(&params.d) * gt.transpose() + noise_full(&params.sigma, data.n())
}

/// `vec(Y − ΘΦ)`.
pub fn nominal_residual_vec(theta: &DMatrix<f64>, data: &BatchData) -> DVector<f64> {
    let r = &data.y - theta * &data.phi;
    DVector::from_column_slice(r.as_slice())
}

pub fn log_det(m: &DMatrix<f64>) -> f64 {
    let chol = m.clone().cholesky().expect("positive definite");
    2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

pub fn inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().try_inverse().expect("invertible")
}

pub fn quad(x: &DVector<f64>, m_inv: &DMatrix<f64>) -> f64 {
    x.dot(&(m_inv * x))
}

/// `V(θ)` from the full `Λ`.
pub fn cost_full(params: &MlParams, data: &BatchData) -> f64 {
    let lambda = lambda_full(params, data);
    let r = nominal_residual_vec(&params.theta, data);
    quad(&r, &inverse(&lambda)) + log_det(&lambda)
}

/// `ln N(x; μ, C)`.
pub fn gaussian_log_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let d = x - mean;
    -0.5 * (quad(&d, &inverse(cov)) + log_det(cov) + x.len() as f64 * (std::f64::consts::TAU).ln())
}

/// Posterior of `vec(Z)` via the full information matrix
/// `(D⁻¹ + Γ̃ᵀ (I⊗Σ⁻¹) Γ̃)⁻¹` (requires `D ≻ 0`).
pub fn posterior_full(params: &MlParams, data: &BatchData) -> (DVector<f64>, DMatrix<f64>) {
    let gt = gamma_tilde(&data.gamma, data.n_y());
    let noise_inv = inverse(&noise_full(&params.sigma, data.n()));
    let info = inverse(&d_full(&params.d)) + gt.transpose() * &noise_inv * &gt;
    let cov = inverse(&info);
    let r = nominal_residual_vec(&params.theta, data);
    let mean = &cov * gt.transpose() * noise_inv * r;
    (mean, cov)
}

/// `log p(Y | θ)` through Bayes' rule evaluated at an arbitrary `ν`:
/// `log p(Y|ν) + log p(ν) − log p(ν|Y)`. Independent of `Λ`.
pub fn log_likelihood_via_bayes(params: &MlParams, data: &BatchData, nu: &DVector<f64>) -> f64 {
    let gt = gamma_tilde(&data.gamma, data.n_y());
    let r = nominal_residual_vec(&params.theta, data);
    let noise = noise_full(&params.sigma, data.n());
    let mean_y = &gt * nu;
    let lik = gaussian_log_density(&r, &mean_y, &noise);
    let prior = gaussian_log_density(nu, &DVector::zeros(nu.len()), &d_full(&params.d));
    let (pm, pc) = posterior_full(params, data);
    let post = gaussian_log_density(nu, &pm, &pc);
    lik + prior - post
}

/// Pieces of the majorizer built from the full `Λ̃` of the expansion point.
pub struct FullMajorizer {
    lambda_inv: DMatrix<f64>,
    gt: DMatrix<f64>,
    k_tilde: f64,
    n: usize,
}

impl FullMajorizer {
    pub fn new(point: &MlParams, data: &BatchData) -> Self {
        let lambda = lambda_full(point, data);
        let lambda_inv = inverse(&lambda);
        let gt = gamma_tilde(&data.gamma, data.n_y());
        let n = data.n();
        let mut fm = FullMajorizer {
            lambda_inv,
            gt,
            k_tilde: 0.0,
            n,
        };
        fm.k_tilde = log_det(&lambda) - fm.linear(point);
        fm
    }

    /// `tr(Λ̃⁻¹ (I⊗Σ)) + tr(Γ̃ᵀ Λ̃⁻¹ Γ̃ D)`
    pub fn linear(&self, params: &MlParams) -> f64 {
        let s = (&self.lambda_inv * noise_full(&params.sigma, self.n)).trace();
        let g = (self.gt.transpose() * &self.lambda_inv * &self.gt * d_full(&params.d)).trace();
        s + g
    }

    /// Tangent-plane bound on `ln|Λ(θ)|`.
    pub fn log_det_bound(&self, params: &MlParams) -> f64 {
        self.k_tilde + self.linear(params)
    }

    /// `V'(θ|θ̃)` in the closed form.
    pub fn value(&self, params: &MlParams, data: &BatchData) -> f64 {
        let lambda = lambda_full(params, data);
        let r = nominal_residual_vec(&params.theta, data);
        quad(&r, &inverse(&lambda)) + self.log_det_bound(params)
    }

    /// `V'(θ|Z, θ̃)`; requires `d > 0` wherever `z ≠ 0`.
    pub fn value_given_z(&self, params: &MlParams, z: &DMatrix<f64>, data: &BatchData) -> f64 {
        let resid = &data.y - &params.theta * &data.phi - z * &data.gamma;
        let mut fit = 0.0;
        for i in 0..data.n_y() {
            fit += resid.row(i).norm_squared() / params.sigma[i];
        }
        let mut prior = 0.0;
        for (zv, dv) in z.iter().zip(params.d.iter()) {
            if *zv != 0.0 {
                prior += zv * zv / dv;
            }
        }
        fit + prior + self.log_det_bound(params)
    }
}

/// Golden-section minimization of a unimodal function on `[a, b]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Minimizer of `√(α + βr² − 2|g|r) + w r` over `r ≥ 0` by a dense scan
/// followed by bisection on the (monotone) derivative.
pub fn scalar_min_numeric(alpha: f64, beta: f64, g: f64, w: f64) -> f64 {
    let ga = g.abs();
    let deriv = |r: f64| {
        let s = (beta * r * r - 2.0 * ga * r + alpha).max(0.0).sqrt();
        (beta * r - ga) / s + w
    };
    if deriv(0.0) >= 0.0 {
        return 0.0;
    }
    let hi0 = 2.0 * ga / beta + 1.0;
    let n = 2000;
    let mut lo = 0.0;
    let mut hi = hi0;
    for k in 1..=n {
        let r = hi0 * k as f64 / n as f64;
        if deriv(r) >= 0.0 {
            hi = r;
            lo = hi0 * (k - 1) as f64 / n as f64;
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if deriv(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).copysign(g)
}

pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
