//! The identified predictor `ŷ(t) = Θ̂ φ(t) + Ẑ γ(t)`, free-run simulation and
//! the RMSE / FIT validation metrics.

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{LavaError, Result};
use crate::regressors::RegressorConfig;

/// Free-run outputs beyond this multiple of the training output bound abort
/// the simulation.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// A nonzero entry of `Ẑ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZEntry {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    theta: DMatrix<f64>,
    z: Vec<ZEntry>,
    config: RegressorConfig,
}

impl Model {
    pub fn from_dense(theta: DMatrix<f64>, z: &DMatrix<f64>, config: RegressorConfig) -> Result<Self> {
        if z.shape() != (config.n_y, config.q()) {
            return Err(LavaError::argument(format!(
                "Z must be {}×{}, got {}×{}",
                config.n_y,
                config.q(),
                z.nrows(),
                z.ncols()
            )));
        }
        let entries = (0..z.nrows())
            .flat_map(|i| (0..z.ncols()).map(move |j| (i, j)))
            .filter(|&(i, j)| z[(i, j)] != 0.0)
            .map(|(row, col)| ZEntry {
                row,
                col,
                value: z[(row, col)],
            })
            .collect();
        Self::from_sparse(theta, entries, config)
    }

    pub fn from_sparse(theta: DMatrix<f64>, mut z: Vec<ZEntry>, config: RegressorConfig) -> Result<Self> {
        config.validate()?;
        if theta.shape() != (config.n_y, config.p()) {
            return Err(LavaError::argument(format!(
                "Θ must be {}×{}, got {}×{}",
                config.n_y,
                config.p(),
                theta.nrows(),
                theta.ncols()
            )));
        }
        let q = config.q();
        for e in &z {
            if e.row >= config.n_y || e.col >= q {
                return Err(LavaError::argument(format!(
                    "Z entry ({}, {}) outside {}×{q}",
                    e.row, e.col, config.n_y
                )));
            }
            if e.value == 0.0 || !e.value.is_finite() {
                return Err(LavaError::argument("stored Z entries must be finite and nonzero"));
            }
        }
        z.sort_by_key(|e| (e.row, e.col));
        if z.windows(2).any(|w| (w[0].row, w[0].col) == (w[1].row, w[1].col)) {
            return Err(LavaError::argument("duplicate Z entry"));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(LavaError::argument("Θ must be finite"));
        }
        Ok(Model { theta, z, config })
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn z_entries(&self) -> &[ZEntry] {
        &self.z
    }

    pub fn z_dense(&self) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.config.n_y, self.config.q());
        for e in &self.z {
            z[(e.row, e.col)] = e.value;
        }
        z
    }

    pub fn nonzeros(&self) -> usize {
        self.z.len()
    }

    pub fn config(&self) -> &RegressorConfig {
        &self.config
    }

    /// Evaluates the predictor at a given regressor. `gamma` is scratch space
    /// of length `q`; it is left untouched when `Ẑ` is empty.
    fn evaluate(&self, phi: &[f64], gamma: &mut [f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.theta.row(i).iter().zip(phi).map(|(a, b)| a * b).sum();
        }
        if !self.z.is_empty() {
            self.config.fill_gamma(phi, gamma);
            for e in &self.z {
                out[e.row] += e.value * gamma[e.col];
            }
        }
    }

    /// One-step-ahead prediction of `y(t)` from measured history.
    pub fn predict_one_step(&self, data: &Dataset, t: usize) -> Result<DVector<f64>> {
        let phi = self.config.build_phi(data, t)?;
        let mut gamma = vec![0.0; self.config.q()];
        let mut out = DVector::zeros(self.config.n_y);
        self.evaluate(phi.as_slice(), &mut gamma, out.as_mut_slice());
        Ok(out)
    }

    /// One-step-ahead predictions for every sample.
    pub fn predict_all(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        self.config.check_dataset(data)?;
        let mut phi = vec![0.0; self.config.p()];
        let mut gamma = vec![0.0; self.config.q()];
        let mut out = DMatrix::zeros(self.config.n_y, data.len());
        for t in 0..data.len() {
            self.config.fill_phi(data.outputs(), data.inputs(), t, &mut phi);
            self.evaluate(&phi, &mut gamma, out.column_mut(t).as_mut_slice());
        }
        Ok(out)
    }

    /// Output magnitude above which a free run counts as diverged:
    /// [`DIVERGENCE_FACTOR`] times the largest output-lag boundary.
    pub fn divergence_limit(&self) -> f64 {
        let out_entries = self.config.n_y * self.config.n_a;
        let bound = if out_entries > 0 {
            self.config.ell[..out_entries].iter().cloned().fold(0.0, f64::max)
        } else {
            self.config.ell.iter().cloned().fold(1.0, f64::max)
        };
        DIVERGENCE_FACTOR * bound
    }

    /// Free-run simulation driven by the measured inputs of `data`; simulated
    /// outputs replace measured ones in the regressor.
    pub fn simulate_free_run(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        self.config.check_dataset(data)?;
        let limit = self.divergence_limit();
        let mut sim = DMatrix::zeros(self.config.n_y, data.len());
        let mut phi = vec![0.0; self.config.p()];
        let mut gamma = vec![0.0; self.config.q()];
        let mut out = vec![0.0; self.config.n_y];
        for t in 0..data.len() {
            self.config.fill_phi(&sim, data.inputs(), t, &mut phi);
            self.evaluate(&phi, &mut gamma, &mut out);
            if out.iter().any(|v| !(v.abs() <= limit)) {
                return Err(LavaError::Diverged { sample: t });
            }
            sim.column_mut(t).copy_from_slice(&out);
        }
        Ok(sim)
    }
}

/// Per-channel RMSE over Monte Carlo runs, skipping `warmup` leading samples:
/// `√( Σ_runs Σ_t (y_i − ŷ_i)² / (runs · T) )`.
pub fn rmse(simulated: &[DMatrix<f64>], measured: &[DMatrix<f64>], warmup: usize) -> Result<DVector<f64>> {
    if simulated.is_empty() || simulated.len() != measured.len() {
        return Err(LavaError::argument("need matching, nonempty lists of runs"));
    }
    let n_y = measured[0].nrows();
    let mut sum = DVector::zeros(n_y);
    let mut count = 0usize;
    for (s, m) in simulated.iter().zip(measured) {
        if s.shape() != m.shape() || m.nrows() != n_y {
            return Err(LavaError::argument("simulated and measured shapes differ"));
        }
        if m.ncols() <= warmup {
            return Err(LavaError::argument("record shorter than the warm-up window"));
        }
        for t in warmup..m.ncols() {
            for i in 0..n_y {
                let e = m[(i, t)] - s[(i, t)];
                sum[i] += e * e;
            }
        }
        count += m.ncols() - warmup;
    }
    Ok(sum.map(|v: f64| (v / count as f64).sqrt()))
}

/// `FIT = 100 (1 − ‖y − ŷ‖₂ / ‖y − ȳ‖₂)` for one channel.
pub fn fit_metric(simulated: &[f64], measured: &[f64]) -> Result<f64> {
    if simulated.len() != measured.len() || measured.is_empty() {
        return Err(LavaError::argument("FIT needs equal-length nonempty channels"));
    }
    let mean = measured.iter().sum::<f64>() / measured.len() as f64;
    let spread = measured.iter().map(|y| (y - mean).powi(2)).sum::<f64>().sqrt();
    if spread == 0.0 {
        return Err(LavaError::UndefinedMetric("measured channel is constant".into()));
    }
    let err = simulated
        .iter()
        .zip(measured)
        .map(|(s, y)| (y - s).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(100.0 * (1.0 - err / spread))
}

/// FIT per channel, skipping `warmup` leading samples.
pub fn fit_per_channel(simulated: &DMatrix<f64>, measured: &DMatrix<f64>, warmup: usize) -> Result<DVector<f64>> {
    if simulated.shape() != measured.shape() || measured.ncols() <= warmup {
        return Err(LavaError::argument(
            "FIT needs matching records longer than the warm-up",
        ));
    }
    let mut fits = DVector::zeros(measured.nrows());
    for i in 0..measured.nrows() {
        let s: Vec<f64> = simulated.row(i).iter().skip(warmup).copied().collect();
        let m: Vec<f64> = measured.row(i).iter().skip(warmup).copied().collect();
        fits[i] = fit_metric(&s, &m)?;
    }
    Ok(fits)
}
