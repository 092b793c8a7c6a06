//! Recursive solver for the sparse latent-variable model (LAVA-R).
//!
//! Each sample updates the RLS estimates `Θ̄(t)`, `H(t)` and six running
//! cross-product sums. From those sums the solver forms, for each output row
//! `i`, the concentrated problem
//!
//! ```text
//! min_ν ‖ε̄_i − A ν‖₂ + ‖w_i ⊙ ν‖₁,   A = Γᵀ − Φᵀ H,   ε̄_i = y_i − Φᵀ θ̄_i
//! ```
//!
//! without touching past samples, and runs `L` sweeps of exact coordinate
//! minimization over `ν = z_i`, warm-started from the previous sample's `Ẑ`.
//! The refined nominal parameters are `Θ̂ = Θ̄ − Ẑ Hᵀ`.
//!
//! The residual energy `η_i = ‖ε̄_i − A ν‖²` is maintained with the update
//! `η += T_jj (ž − ẑ)² + 2 (ž − ẑ) ζ_j`, which follows from expanding the
//! squared norm.

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{LavaError, Result};
use crate::predictor::Model;
use crate::regressors::RegressorConfig;
use crate::rls::{RlsState, DEFAULT_INITIAL_GAIN};

/// Gram diagonals below this are treated as unexcited columns.
pub const BETA_FLOOR: f64 = 1e-12;
pub const DEFAULT_CYCLES: usize = 5;

/// Exact minimizer over `z` of `‖ẽ − a z‖₂ + w |z|`, expressed through
/// `α = ‖ẽ‖²`, `β = ‖a‖²` and `g = aᵀẽ`.
///
/// The zero solution is returned when `α w² ≥ g²`; otherwise the stationary
/// point `|g|/β − w √(αβ − g²) / (β √(β − w²))` carries the sign of `g`.
pub fn coordinate_min(alpha: f64, beta: f64, g: f64, w: f64) -> f64 {
    if beta < BETA_FLOOR {
        return 0.0;
    }
    if alpha * w * w >= g * g {
        return 0.0;
    }
    let slack = beta - w * w;
    if slack <= 0.0 {
        return 0.0;
    }
    let radicand = (alpha * beta - g * g).max(0.0);
    let r = g.abs() / beta - w / (beta * slack.sqrt()) * radicand.sqrt();
    r.max(0.0).copysign(g)
}

/// Running sums `R^{a,b}(t) = Σ_s a(s) b(s)ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossProducts {
    pub phi_phi: DMatrix<f64>,
    pub gam_gam: DMatrix<f64>,
    pub y_y: DMatrix<f64>,
    pub phi_gam: DMatrix<f64>,
    pub phi_y: DMatrix<f64>,
    pub gam_y: DMatrix<f64>,
    pub t: usize,
}

impl CrossProducts {
    pub fn new(n_y: usize, p: usize, q: usize) -> Self {
        CrossProducts {
            phi_phi: DMatrix::zeros(p, p),
            gam_gam: DMatrix::zeros(q, q),
            y_y: DMatrix::zeros(n_y, n_y),
            phi_gam: DMatrix::zeros(p, q),
            phi_y: DMatrix::zeros(p, n_y),
            gam_y: DMatrix::zeros(q, n_y),
            t: 0,
        }
    }

    pub fn accumulate(&mut self, y: &DVector<f64>, phi: &DVector<f64>, gamma: &DVector<f64>) {
        self.phi_phi.ger(1.0, phi, phi, 1.0);
        self.gam_gam.ger(1.0, gamma, gamma, 1.0);
        self.y_y.ger(1.0, y, y, 1.0);
        self.phi_gam.ger(1.0, phi, gamma, 1.0);
        self.phi_y.ger(1.0, phi, y, 1.0);
        self.gam_y.ger(1.0, gamma, y, 1.0);
        self.t += 1;
    }

    /// `T = AᵀA = R^{γγ} − R^{γφ}H − HᵀR^{φγ} + HᵀR^{φφ}H`.
    pub fn residual_gram(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        let cross = h.tr_mul(&self.phi_gam);
        let inner = h.tr_mul(&(&self.phi_phi * h));
        let mut t = &self.gam_gam - &cross - cross.transpose() + inner;
        let sym = (&t + t.transpose()) * 0.5;
        t.copy_from(&sym);
        t
    }

    /// `κ_i = ‖ε̄_i‖²` and `ρ_i = Aᵀ ε̄_i` for the nominal row `theta`.
    pub fn row_statistics(&self, h: &DMatrix<f64>, theta: &DVector<f64>, row: usize) -> (f64, DVector<f64>) {
        let phi_y = self.phi_y.column(row);
        let phi_phi_theta = &self.phi_phi * theta;
        let kappa = self.y_y[(row, row)] + theta.dot(&phi_phi_theta) - 2.0 * theta.dot(&phi_y);
        let rho = self.gam_y.column(row) - self.phi_gam.tr_mul(theta) - h.tr_mul(&(phi_y - phi_phi_theta));
        (kappa, rho)
    }

    /// Single-step weights `w_j = ‖γ_j‖₂ / √t` from the running Gram diagonal.
    pub fn running_weights(&self) -> DVector<f64> {
        let t = self.t.max(1) as f64;
        DVector::from_iterator(
            self.gam_gam.nrows(),
            self.gam_gam.diagonal().iter().map(|d| (d.max(0.0) / t).sqrt()),
        )
    }
}

/// Coordinate-descent state for one output row.
///
/// Holds the iterate `ž`, the residual energy `η = ‖ε̄ − Až‖²` and the
/// correlation `ζ = Aᵀ(ε̄ − Až)`, all updated incrementally.
#[derive(Debug, Clone)]
pub struct RowCycler<'a> {
    gram: &'a DMatrix<f64>,
    weights: &'a [f64],
    z: DVector<f64>,
    eta: f64,
    zeta: DVector<f64>,
}

impl<'a> RowCycler<'a> {
    pub fn new(gram: &'a DMatrix<f64>, weights: &'a [f64], kappa: f64, rho: DVector<f64>, z: DVector<f64>) -> Self {
        let gz = gram * &z;
        let eta = kappa - 2.0 * rho.dot(&z) + z.dot(&gz);
        let zeta = rho - gz;
        RowCycler {
            gram,
            weights,
            z,
            eta,
            zeta,
        }
    }

    pub fn z(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn into_z(self) -> DVector<f64> {
        self.z
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn zeta(&self) -> &DVector<f64> {
        &self.zeta
    }

    /// `√η + Σ w_j |z_j|`.
    pub fn objective(&self) -> f64 {
        self.eta.max(0.0).sqrt() + self.z.iter().zip(self.weights).map(|(z, w)| w * z.abs()).sum::<f64>()
    }

    /// Minimizes over coordinate `j`; returns the change `ẑ − ž`.
    pub fn update_coordinate(&mut self, j: usize) -> f64 {
        let beta = self.gram[(j, j)];
        let old = self.z[j];
        let zeta_j = self.zeta[j];
        let alpha = self.eta + beta * old * old + 2.0 * zeta_j * old;
        let g = zeta_j + beta * old;
        let w = self.weights[j];
        let new = coordinate_min(alpha, beta, g, w);
        debug_assert!(
            new == 0.0 || beta - w * w > 0.0,
            "nonzero update with β ≤ w² (β={beta}, w={w})"
        );
        let diff = old - new;
        if diff != 0.0 {
            self.eta += beta * diff * diff + 2.0 * diff * zeta_j;
            self.zeta.axpy(diff, &self.gram.column(j), 1.0);
            self.z[j] = new;
        }
        -diff
    }

    /// One sweep over `j = 0..q`; returns the largest absolute change.
    pub fn cycle(&mut self) -> f64 {
        (0..self.z.len())
            .map(|j| self.update_coordinate(j).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightMode {
    /// `‖γ_j‖₂/√t` from the samples seen so far.
    Running,
    /// A fixed `n_y × q` weight matrix, e.g. full-record batch weights.
    Fixed(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LavaConfig {
    /// Coordinate sweeps `L` per sample.
    pub cycles: usize,
    /// RLS initial gain `c` in `P(0) = c I`.
    pub initial_gain: f64,
    pub weights: WeightMode,
}

impl Default for LavaConfig {
    fn default() -> Self {
        LavaConfig {
            cycles: DEFAULT_CYCLES,
            initial_gain: DEFAULT_INITIAL_GAIN,
            weights: WeightMode::Running,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LavaSolver {
    config: LavaConfig,
    rls: RlsState,
    cross: CrossProducts,
    z: DMatrix<f64>,
}

impl LavaSolver {
    pub fn new(n_y: usize, p: usize, q: usize, config: LavaConfig) -> Result<Self> {
        if config.cycles == 0 {
            return Err(LavaError::argument("cycle count L must be positive"));
        }
        if let WeightMode::Fixed(w) = &config.weights {
            if w.shape() != (n_y, q) {
                return Err(LavaError::argument(format!(
                    "fixed weights must be {n_y}×{q}, got {}×{}",
                    w.nrows(),
                    w.ncols()
                )));
            }
            if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(LavaError::argument("weights must be finite and nonnegative"));
            }
        }
        Ok(LavaSolver {
            rls: RlsState::new(n_y, p, q, config.initial_gain)?,
            cross: CrossProducts::new(n_y, p, q),
            z: DMatrix::zeros(n_y, q),
            config,
        })
    }

    pub fn for_config(reg: &RegressorConfig, config: LavaConfig) -> Result<Self> {
        Self::new(reg.n_y, reg.p(), reg.q(), config)
    }

    pub fn config(&self) -> &LavaConfig {
        &self.config
    }

    pub fn rls(&self) -> &RlsState {
        &self.rls
    }

    pub fn cross(&self) -> &CrossProducts {
        &self.cross
    }

    /// Current latent estimate `Ẑ(t)`.
    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn t(&self) -> usize {
        self.cross.t
    }

    /// `Θ̂(t) = Θ̄(t) − Ẑ(t) Hᵀ(t)`.
    pub fn theta_hat(&self) -> DMatrix<f64> {
        &self.rls.theta_bar - &self.z * self.rls.h.transpose()
    }

    pub fn weights(&self) -> DMatrix<f64> {
        match &self.config.weights {
            WeightMode::Fixed(w) => w.clone(),
            WeightMode::Running => {
                let w = self.cross.running_weights();
                DMatrix::from_fn(self.z.nrows(), self.z.ncols(), |_, j| w[j])
            }
        }
    }

    /// Processes one sample: RLS and cross-product updates followed by `L`
    /// coordinate sweeps.
    pub fn step(&mut self, y: &DVector<f64>, phi: &DVector<f64>, gamma: &DVector<f64>) -> Result<()> {
        self.absorb(y, phi, gamma)?;
        self.refine(self.config.cycles)?;
        Ok(())
    }

    /// Updates the recursive quantities without touching `Ẑ`.
    pub fn absorb(&mut self, y: &DVector<f64>, phi: &DVector<f64>, gamma: &DVector<f64>) -> Result<()> {
        self.rls.update(y, phi, gamma)?;
        self.cross.accumulate(y, phi, gamma);
        Ok(())
    }

    /// Runs `cycles` coordinate sweeps on the current accumulators. Returns
    /// the largest coordinate change in the last sweep.
    pub fn refine(&mut self, cycles: usize) -> Result<f64> {
        self.sweep_until(cycles, 0.0).map(|(delta, _)| delta)
    }

    /// Sweeps until the largest change is at most `tol · max(1, ‖Ẑ‖∞)` or
    /// `max_cycles` is reached. Returns whether the tolerance was met.
    pub fn polish(&mut self, max_cycles: usize, tol: f64) -> Result<bool> {
        let (delta, _) = self.sweep_until(max_cycles, tol)?;
        Ok(delta <= tol * self.z.amax().max(1.0))
    }

    fn sweep_until(&mut self, max_cycles: usize, tol: f64) -> Result<(f64, usize)> {
        if self.cross.t == 0 {
            return Ok((0.0, 0));
        }
        let gram = self.cross.residual_gram(&self.rls.h);
        let weights = self.weights();
        let mut worst = 0.0f64;
        let mut used = 0usize;
        for i in 0..self.z.nrows() {
            let theta = self.rls.theta_bar.row(i).transpose();
            let (kappa, rho) = self.cross.row_statistics(&self.rls.h, &theta, i);
            let w_row: Vec<f64> = weights.row(i).iter().copied().collect();
            let mut cycler = RowCycler::new(&gram, &w_row, kappa, rho, self.z.row(i).transpose());
            let mut delta = 0.0;
            for k in 0..max_cycles {
                delta = cycler.cycle();
                used = used.max(k + 1);
                if delta <= tol * cycler.z().amax().max(1.0) {
                    break;
                }
            }
            if !cycler.eta().is_finite() {
                return Err(LavaError::numeric(format!("residual energy of row {i} is not finite")));
            }
            worst = worst.max(delta);
            self.z.set_row(i, &cycler.into_z().transpose());
        }
        Ok((worst, used))
    }

    /// Runs the solver over every sample of `data`.
    pub fn fit(reg: &RegressorConfig, data: &Dataset, config: LavaConfig) -> Result<LavaSolver> {
        reg.check_dataset(data)?;
        let mut solver = Self::for_config(reg, config)?;
        let mut phi = DVector::zeros(reg.p());
        let mut gamma = DVector::zeros(reg.q());
        let mut oob = 0usize;
        for t in 0..data.len() {
            reg.fill_phi(data.outputs(), data.inputs(), t, phi.as_mut_slice());
            if reg.fill_gamma(phi.as_slice(), gamma.as_mut_slice()) {
                oob += 1;
            }
            let y = data.outputs().column(t).clone_owned();
            solver.step(&y, &phi, &gamma)?;
        }
        if oob > 0 {
            log::warn!(
                "{oob} of {} training regressors exceed the basis boundaries",
                data.len()
            );
        }
        Ok(solver)
    }

    /// The refined predictor `Θ̂ φ + Ẑ γ`.
    pub fn model(&self, reg: &RegressorConfig) -> Result<Model> {
        Model::from_dense(self.theta_hat(), &self.z, reg.clone())
    }

    /// The affine ARX predictor `Θ̄ φ` obtained as a by-product.
    pub fn arx_model(&self, reg: &RegressorConfig) -> Result<Model> {
        Model::from_dense(
            self.rls.theta_bar.clone(),
            &DMatrix::zeros(self.z.nrows(), self.z.ncols()),
            reg.clone(),
        )
    }
}
