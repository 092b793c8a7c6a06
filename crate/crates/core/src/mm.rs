//! Batch maximum-likelihood machinery.
//!
//! With `vec(Z) ~ N(0, D)` and `ε(t) | Z ~ N(Z γ(t), Σ)` the marginal
//! likelihood of the record leads to the cost
//!
//! ```text
//! V(θ) = ‖y − Φ̃ vec(Θ)‖²_{Λ⁻¹} + ln|Λ|,   Λ = Γ̃ D Γ̃ᵀ + I_N ⊗ Σ.
//! ```
//!
//! For diagonal `Σ = diag(σ_i)` and row-wise diagonal priors `D_i`, `Λ` is a
//! permutation of the block-diagonal matrix with blocks
//! `Ω_i = Γᵀ D_i Γ + σ_i I_N`, so every quantity here is evaluated row by row
//! through a Cholesky factor of `Ω_i`. Nothing inverts `Λ` explicitly.
//!
//! Linearizing `ln|Λ|` at a point `θ̃` yields a convex majorizer `V'(θ|θ̃)`
//! whose minimizer over the nuisance covariances is closed-form; what remains
//! is a weighted square-root-lasso per output row
//! ([`solve_concentrated`]). Iterating majorize/minimize gives
//! [`mm_iterate`], which decreases `V` monotonically.
//!
//! Vectorization follows the column-major convention: `vec(Z)[j·n_y + i] = Z[i, j]`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{LavaError, Result};
use crate::lava::coordinate_min;
use crate::regressors::RegressorConfig;
use crate::rls::batch_ls;
use crate::Dataset;

pub const SIGMA_FLOOR: f64 = 1e-12;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITERS: usize = 20;
pub const DEFAULT_MAX_CYCLES: usize = 20_000;

/// Parameters `θ = {Θ, D, Σ}` with diagonal covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct MlParams {
    /// `n_y × p`
    pub theta: DMatrix<f64>,
    /// Prior variances `d_{i,j}`, `n_y × q`.
    pub d: DMatrix<f64>,
    /// Noise variances `σ_i`.
    pub sigma: DVector<f64>,
}

impl MlParams {
    /// A nominal-model point `{Θ₀, 0, Σ₀}`.
    pub fn nominal(theta: DMatrix<f64>, sigma: DVector<f64>, q: usize) -> Self {
        let n_y = theta.nrows();
        MlParams {
            theta,
            d: DMatrix::zeros(n_y, q),
            sigma,
        }
    }

    /// `{0, 0, I}`.
    pub fn default_init(n_y: usize, p: usize, q: usize) -> Self {
        Self::nominal(DMatrix::zeros(n_y, p), DVector::from_element(n_y, 1.0), q)
    }

    pub fn n_y(&self) -> usize {
        self.theta.nrows()
    }

    pub fn validate(&self, data: &BatchData) -> Result<()> {
        let (n_y, p, q) = (data.n_y(), data.p(), data.q());
        if self.theta.shape() != (n_y, p) || self.d.shape() != (n_y, q) || self.sigma.len() != n_y {
            return Err(LavaError::argument(format!(
                "parameter shapes do not match data (n_y={n_y}, p={p}, q={q})"
            )));
        }
        if self.sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(LavaError::argument("noise variances must be positive"));
        }
        if self.d.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return Err(LavaError::argument("prior variances must be nonnegative"));
        }
        Ok(())
    }
}

/// Stacked regressors and outputs of a record: `Φ (p × N)`, `Γ (q × N)`,
/// `Y (n_y × N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchData {
    pub phi: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl BatchData {
    pub fn new(phi: DMatrix<f64>, gamma: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        let n = y.ncols();
        if n == 0 || phi.ncols() != n || gamma.ncols() != n {
            return Err(LavaError::argument("Φ, Γ and Y must share a nonzero sample count"));
        }
        Ok(BatchData { phi, gamma, y })
    }

    pub fn from_dataset(reg: &RegressorConfig, data: &Dataset) -> Result<Self> {
        let (phi, gamma) = reg.regressor_matrices(data)?;
        Self::new(phi, gamma, data.outputs().clone())
    }

    pub fn n(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_y(&self) -> usize {
        self.y.nrows()
    }

    pub fn p(&self) -> usize {
        self.phi.nrows()
    }

    pub fn q(&self) -> usize {
        self.gamma.nrows()
    }

    /// Nominal residual `y_i − Φᵀ θ_i`.
    fn nominal_residual(&self, theta: &DMatrix<f64>, row: usize) -> DVector<f64> {
        self.y.row(row).transpose() - self.phi.tr_mul(&theta.row(row).transpose())
    }

    /// Full residual `y_i − Φᵀ θ_i − Γᵀ z_i`.
    fn residual(&self, theta: &DMatrix<f64>, z: &DMatrix<f64>, row: usize) -> DVector<f64> {
        self.nominal_residual(theta, row) - self.gamma.tr_mul(&z.row(row).transpose())
    }
}

/// Cholesky factor of `Ω_i = Γᵀ diag(d_i) Γ + σ_i I_N`.
struct RowCovariance {
    chol: Cholesky<f64, Dyn>,
}

impl RowCovariance {
    fn new(gamma: &DMatrix<f64>, d_row: &[f64], sigma: f64) -> Result<Self> {
        let n = gamma.ncols();
        let mut scaled = gamma.clone();
        for (j, d) in d_row.iter().enumerate() {
            scaled.row_mut(j).scale_mut(d.max(0.0).sqrt());
        }
        let mut omega = scaled.tr_mul(&scaled);
        for t in 0..n {
            omega[(t, t)] += sigma;
        }
        let chol = Cholesky::new(omega).ok_or_else(|| LavaError::numeric("row covariance is not positive definite"))?;
        Ok(RowCovariance { chol })
    }

    fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// `xᵀ Ω⁻¹ x`
    fn quad(&self, x: &DVector<f64>) -> f64 {
        let l = self.chol.l();
        let half = l
            .solve_lower_triangular(x)
            .expect("Cholesky factor has a positive diagonal");
        half.norm_squared()
    }

    /// `tr(Ω⁻¹) = ‖L⁻¹‖_F²` and `γ_jᵀ Ω⁻¹ γ_j` for every basis row `j`.
    fn geometry(&self, gamma: &DMatrix<f64>) -> (f64, DVector<f64>) {
        let l = self.chol.l();
        let n = l.nrows();
        let l_inv = l
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .expect("Cholesky factor has a positive diagonal");
        let inv_trace = l_inv.norm_squared();
        let half = l
            .solve_lower_triangular(&gamma.transpose())
            .expect("Cholesky factor has a positive diagonal");
        let col_quad = DVector::from_iterator(half.ncols(), half.column_iter().map(|c| c.norm_squared()));
        (inv_trace, col_quad)
    }
}

/// `V(θ)`.
pub fn cost_v(params: &MlParams, data: &BatchData) -> Result<f64> {
    params.validate(data)?;
    let mut total = 0.0;
    for i in 0..data.n_y() {
        let cov = RowCovariance::new(&data.gamma, params.d.row(i).transpose().as_slice(), params.sigma[i])?;
        let eps = data.nominal_residual(&params.theta, i);
        total += cov.quad(&eps) + cov.log_det();
    }
    Ok(total)
}

/// `ln|Λ|`.
pub fn log_det_lambda(params: &MlParams, gamma: &DMatrix<f64>) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..params.n_y() {
        total += RowCovariance::new(gamma, params.d.row(i).transpose().as_slice(), params.sigma[i])?.log_det();
    }
    Ok(total)
}

/// Gaussian posterior of `vec(Z)` given `θ` and the record.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl LatentStats {
    /// The posterior mean reshaped to `n_y × q`.
    pub fn mean_matrix(&self, n_y: usize) -> DMatrix<f64> {
        DMatrix::from_column_slice(n_y, self.mean.len() / n_y, self.mean.as_slice())
    }
}

/// Posterior mean and covariance of `vec(Z)`.
///
/// Per row, `Σ̄_i = S (I + S Γ Γᵀ S / σ_i)⁻¹ S` with `S = D_i^{1/2}`, and
/// `μ̄_i = Σ̄_i Γ ε_i / σ_i`. This information form equals
/// `(D_i⁻¹ + ΓΓᵀ/σ_i)⁻¹` when `D_i ≻ 0` and pins coordinates with `d = 0`
/// to a deterministic zero.
pub fn latent_stats(params: &MlParams, data: &BatchData) -> Result<LatentStats> {
    params.validate(data)?;
    let (n_y, q) = (data.n_y(), data.q());
    let gram = &data.gamma * data.gamma.transpose();
    let mut mean = DVector::zeros(n_y * q);
    let mut cov = DMatrix::zeros(n_y * q, n_y * q);
    for i in 0..n_y {
        let sigma = params.sigma[i];
        let s = DVector::from_iterator(q, params.d.row(i).iter().map(|d| d.sqrt()));
        let mut inner = DMatrix::from_fn(q, q, |a, b| s[a] * gram[(a, b)] * s[b] / sigma);
        for a in 0..q {
            inner[(a, a)] += 1.0;
        }
        let inner_inv = Cholesky::new(inner)
            .ok_or_else(|| LavaError::numeric("posterior information matrix is not positive definite"))?
            .inverse();
        let post = DMatrix::from_fn(q, q, |a, b| s[a] * inner_inv[(a, b)] * s[b]);
        let eps = data.nominal_residual(&params.theta, i);
        let mu = &post * (&data.gamma * eps) / sigma;
        for a in 0..q {
            mean[a * n_y + i] = mu[a];
            for b in 0..q {
                cov[(a * n_y + i, b * n_y + i)] = post[(a, b)];
            }
        }
    }
    Ok(LatentStats { mean, cov })
}

/// Quantities of the majorizer that depend only on the expansion point `θ̃`.
#[derive(Debug, Clone)]
pub struct Majorizer {
    point: MlParams,
    /// `tr(Ω̃_i⁻¹)`
    inv_trace: DVector<f64>,
    /// `γ_jᵀ Ω̃_i⁻¹ γ_j`, `n_y × q`.
    col_quad: DMatrix<f64>,
    /// `K̃_i = ln|Ω̃_i| − σ̃_i tr(Ω̃_i⁻¹) − Σ_j d̃_{ij} γ_jᵀ Ω̃_i⁻¹ γ_j`.
    k_tilde: DVector<f64>,
}

impl Majorizer {
    pub fn new(point: &MlParams, gamma: &DMatrix<f64>) -> Result<Self> {
        let (n_y, q) = (point.n_y(), gamma.nrows());
        if point.d.shape() != (n_y, q) {
            return Err(LavaError::argument(
                "expansion point does not match the basis dimension",
            ));
        }
        if point.sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(LavaError::argument("expansion point needs positive noise variances"));
        }
        let mut inv_trace = DVector::zeros(n_y);
        let mut col_quad = DMatrix::zeros(n_y, q);
        let mut k_tilde = DVector::zeros(n_y);
        for i in 0..n_y {
            let d_row = point.d.row(i).transpose();
            let cov = RowCovariance::new(gamma, d_row.as_slice(), point.sigma[i])?;
            let (tr, quad) = cov.geometry(gamma);
            if !(tr > 0.0) {
                return Err(LavaError::numeric("zero trace of the inverse row covariance"));
            }
            inv_trace[i] = tr;
            col_quad.set_row(i, &quad.transpose());
            k_tilde[i] = cov.log_det() - point.sigma[i] * tr - d_row.dot(&quad);
        }
        Ok(Majorizer {
            point: point.clone(),
            inv_trace,
            col_quad,
            k_tilde,
        })
    }

    pub fn point(&self) -> &MlParams {
        &self.point
    }

    /// `w_{ij} = √(γ_jᵀ Ω̃_i⁻¹ γ_j / tr(Ω̃_i⁻¹))`.
    pub fn weights(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.col_quad.nrows(), self.col_quad.ncols(), |i, j| {
            (self.col_quad[(i, j)].max(0.0) / self.inv_trace[i]).sqrt()
        })
    }

    /// Tangent-plane upper bound on `ln|Λ(θ)|`.
    pub fn log_det_bound(&self, params: &MlParams) -> f64 {
        (0..params.n_y())
            .map(|i| self.row_linear_terms(params, i) + self.k_tilde[i])
            .sum()
    }

    fn row_linear_terms(&self, params: &MlParams, i: usize) -> f64 {
        params.sigma[i] * self.inv_trace[i] + params.d.row(i).dot(&self.col_quad.row(i))
    }

    /// `V'(θ|θ̃) = ‖ε‖²_{Λ⁻¹} + tr(Ω̃⁻¹(I ⊗ Σ)) + tr(Γ̃ᵀ Ω̃⁻¹ Γ̃ D) + K̃`.
    pub fn value(&self, params: &MlParams, data: &BatchData) -> Result<f64> {
        params.validate(data)?;
        let mut total = 0.0;
        for i in 0..data.n_y() {
            let cov = RowCovariance::new(&data.gamma, params.d.row(i).transpose().as_slice(), params.sigma[i])?;
            total += cov.quad(&data.nominal_residual(&params.theta, i));
        }
        Ok(total + self.log_det_bound(params))
    }

    /// `V'(θ|Z, θ̃) = ‖Y − ΘΦ − ZΓ‖²_{Σ⁻¹} + ‖vec Z‖²_{D⁻¹} + (linear terms) + K̃`.
    ///
    /// A coordinate with `d_{ij} = 0` contributes `0` when `z_{ij} = 0` and
    /// `+∞` otherwise.
    pub fn value_given_z(&self, params: &MlParams, z: &DMatrix<f64>, data: &BatchData) -> Result<f64> {
        params.validate(data)?;
        if z.shape() != params.d.shape() {
            return Err(LavaError::argument("Z shape does not match the prior variances"));
        }
        let mut total = 0.0;
        for i in 0..data.n_y() {
            total += data.residual(&params.theta, z, i).norm_squared() / params.sigma[i];
            for (zij, dij) in z.row(i).iter().zip(params.d.row(i).iter()) {
                if *zij != 0.0 {
                    total += zij * zij / dij;
                }
            }
        }
        Ok(total + self.log_det_bound(params))
    }

    /// Closed-form minimizers of `V'(θ|Z, θ̃)` over `Σ` and `D` for fixed
    /// `(Θ, Z)`: `σ̂_i = ‖ȳ_i‖₂ / √tr(Ω̃_i⁻¹)`, `d̂_{ij} = |z_{ij}| / √(γ_jᵀ Ω̃_i⁻¹ γ_j)`.
    pub fn nuisance_update(&self, theta: &DMatrix<f64>, z: &DMatrix<f64>, data: &BatchData) -> Result<MlParams> {
        let (n_y, q) = (data.n_y(), data.q());
        if theta.shape() != (n_y, data.p()) || z.shape() != (n_y, q) {
            return Err(LavaError::argument("Θ or Z shape does not match the data"));
        }
        let mut sigma = DVector::zeros(n_y);
        let mut d = DMatrix::zeros(n_y, q);
        for i in 0..n_y {
            let resid = data.residual(theta, z, i).norm();
            let s = resid / self.inv_trace[i].sqrt();
            if s < SIGMA_FLOOR {
                log::warn!("row {i} fits the record exactly; flooring its noise variance");
            }
            sigma[i] = s.max(SIGMA_FLOOR);
            for j in 0..q {
                let quad = self.col_quad[(i, j)];
                d[(i, j)] = if z[(i, j)] == 0.0 || quad <= 0.0 {
                    0.0
                } else {
                    z[(i, j)].abs() / quad.sqrt()
                };
            }
        }
        Ok(MlParams {
            theta: theta.clone(),
            d,
            sigma,
        })
    }
}

/// Data-adaptive weights of the concentrated problem at `point`.
pub fn weights_full(point: &MlParams, gamma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(Majorizer::new(point, gamma)?.weights())
}

/// `V'(θ|θ̃)`.
pub fn majorizer_value(params: &MlParams, point: &MlParams, data: &BatchData) -> Result<f64> {
    Majorizer::new(point, &data.gamma)?.value(params, data)
}

pub fn nuisance_update(theta: &DMatrix<f64>, z: &DMatrix<f64>, point: &MlParams, data: &BatchData) -> Result<MlParams> {
    Majorizer::new(point, &data.gamma)?.nuisance_update(theta, z, data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Relative objective change, and coordinate step relative to
    /// `max(1, ‖z_i‖∞)`, below which a row is converged.
    pub tol: f64,
    pub max_cycles: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: DEFAULT_TOL,
            max_cycles: DEFAULT_MAX_CYCLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentratedSolution {
    pub theta: DMatrix<f64>,
    pub z: DMatrix<f64>,
    /// `Σ_i ‖y_i − Φᵀθ_i − Γᵀz_i‖₂ + ‖w_i ⊙ z_i‖₁`
    pub objective: f64,
    pub converged: bool,
    pub cycles: usize,
}

/// `min Σ_i ‖y_i − Φᵀθ_i − Γᵀz_i‖₂ + ‖w_i ⊙ z_i‖₁`.
///
/// `Θ` is eliminated through `Θ = Θ̄ − Z Hᵀ` with the pseudoinverse solution
/// `Θ̄ = YΦ†`, `Hᵀ = ΓΦ†`. Each row then runs cyclic coordinate descent on an
/// explicitly maintained residual, starting from `z = 0`. If a row hits
/// `max_cycles` the last iterate is returned with `converged = false`.
pub fn solve_concentrated(
    weights: &DMatrix<f64>,
    data: &BatchData,
    opts: SolveOptions,
) -> Result<ConcentratedSolution> {
    let (n_y, q, n) = (data.n_y(), data.q(), data.n());
    if weights.shape() != (n_y, q) {
        return Err(LavaError::argument("weights must be n_y × q"));
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(LavaError::argument("weights must be finite and nonnegative"));
    }
    let (theta_bar, h) = batch_ls(&data.phi, &data.y, &data.gamma)?;
    // A = Γᵀ − ΦᵀH, N × q
    let a = data.gamma.transpose() - data.phi.tr_mul(&h);
    let beta: Vec<f64> = a.column_iter().map(|c| c.norm_squared()).collect();

    let mut z = DMatrix::zeros(n_y, q);
    let mut objective = 0.0;
    let mut converged = true;
    let mut cycles = 0;
    for i in 0..n_y {
        let w = weights.row(i);
        let mut resid = data.nominal_residual(&theta_bar, i);
        let mut zi = DVector::<f64>::zeros(q);
        let row_obj = |resid: &DVector<f64>, zi: &DVector<f64>| {
            resid.norm() + zi.iter().zip(w.iter()).map(|(z, w)| w * z.abs()).sum::<f64>()
        };
        let mut prev = row_obj(&resid, &zi);
        let mut row_converged = false;
        let mut scratch = DVector::zeros(n);
        for k in 0..opts.max_cycles {
            let mut step = 0.0f64;
            for j in 0..q {
                let col = a.column(j);
                let old = zi[j];
                scratch.copy_from(&resid);
                if old != 0.0 {
                    scratch.axpy(old, &col, 1.0);
                }
                let alpha = scratch.norm_squared();
                let g = col.dot(&scratch);
                let new = coordinate_min(alpha, beta[j], g, w[j]);
                if new != old {
                    resid.copy_from(&scratch);
                    resid.axpy(-new, &col, 1.0);
                    zi[j] = new;
                    step = step.max((new - old).abs());
                }
            }
            cycles = cycles.max(k + 1);
            let obj = row_obj(&resid, &zi);
            let small_obj = (prev - obj).abs() <= opts.tol * obj.abs().max(f64::MIN_POSITIVE);
            let small_step = step <= opts.tol * zi.amax().max(1.0);
            prev = obj;
            if small_obj && small_step {
                row_converged = true;
                break;
            }
        }
        if !row_converged {
            log::warn!("coordinate descent on row {i} stopped after {} cycles", opts.max_cycles);
        }
        converged &= row_converged;
        objective += prev;
        z.set_row(i, &zi.transpose());
    }
    let theta = &theta_bar - &z * h.transpose();
    Ok(ConcentratedSolution {
        theta,
        z,
        objective,
        converged,
        cycles,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmOptions {
    pub max_iters: usize,
    /// Stop when `|V(θ_{k+1}) − V(θ_k)| < tol·|V(θ_k)|`.
    pub tol: f64,
    pub solve: SolveOptions,
}

impl Default for MmOptions {
    fn default() -> Self {
        MmOptions {
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            solve: SolveOptions {
                tol: 1e-12,
                ..SolveOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmStep {
    /// `θ_{k+1}`
    pub params: MlParams,
    /// `Ẑ_{k+1}`
    pub z: DMatrix<f64>,
    /// Weights used to obtain this step.
    pub weights: DMatrix<f64>,
    /// `V(θ_{k+1})`
    pub cost: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmTrace {
    pub initial_cost: f64,
    pub steps: Vec<MmStep>,
}

impl MmTrace {
    pub fn last(&self) -> Option<&MmStep> {
        self.steps.last()
    }

    /// `V(θ_0), V(θ_1), …`
    pub fn costs(&self) -> Vec<f64> {
        std::iter::once(self.initial_cost)
            .chain(self.steps.iter().map(|s| s.cost))
            .collect()
    }
}

/// Majorization-minimization from `init`: weights at `θ_k`, concentrated
/// solve, closed-form nuisance update.
pub fn mm_iterate(data: &BatchData, init: &MlParams, opts: MmOptions) -> Result<MmTrace> {
    init.validate(data)?;
    let mut current = init.clone();
    let mut cost = cost_v(&current, data)?;
    let mut trace = MmTrace {
        initial_cost: cost,
        steps: Vec::with_capacity(opts.max_iters),
    };
    for _ in 0..opts.max_iters {
        let maj = Majorizer::new(&current, &data.gamma)?;
        let weights = maj.weights();
        let sol = solve_concentrated(&weights, data, opts.solve)?;
        let next = maj.nuisance_update(&sol.theta, &sol.z, data)?;
        let next_cost = cost_v(&next, data)?;
        if !next_cost.is_finite() {
            return Err(LavaError::numeric("MM cost became non-finite"));
        }
        let done = (next_cost - cost).abs() < opts.tol * cost.abs();
        trace.steps.push(MmStep {
            params: next.clone(),
            z: sol.z,
            weights,
            cost: next_cost,
            converged: sol.converged,
        });
        current = next;
        cost = next_cost;
        if done {
            break;
        }
    }
    Ok(trace)
}
