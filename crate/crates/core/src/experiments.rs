//! Saturating two-state benchmark and the amplitude-sweep Monte Carlo harness.
//!
//! ```text
//! x₁(t+1) = sat_a[0.9 x₁(t) + 0.1 u₁(t)]
//! x₂(t+1) = 0.08 x₁(t) + 0.9 x₂(t) + 0.6 u₂(t)
//! y(t)    = x(t) + e(t),   e(t) ~ N(0, σ I)
//! ```

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::dataset::{generate_rs, Dataset, RsSignalSpec};
use crate::error::{LavaError, Result};
use crate::lava::{LavaConfig, LavaSolver, DEFAULT_CYCLES};
use crate::predictor::{rmse, Model};
use crate::regressors::{RegressorConfig, DEFAULT_MARGIN};
use crate::rls::DEFAULT_INITIAL_GAIN;

pub const DEFAULT_NOISE_VARIANCE: f64 = 2.5e-3;
pub const DEFAULT_SATURATION: f64 = 2.0;
pub const DEFAULT_AMPLITUDES: [f64; 8] = [0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturationSystemSpec {
    /// Output noise variance `σ` per channel.
    pub noise_variance: f64,
    /// Saturation level `a`; `f64::INFINITY` gives the linear system.
    pub saturation_level: f64,
    pub seed: u64,
}

impl Default for SaturationSystemSpec {
    fn default() -> Self {
        SaturationSystemSpec {
            noise_variance: DEFAULT_NOISE_VARIANCE,
            saturation_level: DEFAULT_SATURATION,
            seed: 0,
        }
    }
}

pub fn sat(x: f64, level: f64) -> f64 {
    if x.abs() < level {
        x
    } else {
        level.copysign(x)
    }
}

/// Simulates the benchmark from a zero state for the `2 × N` input record.
pub fn simulate_saturation(spec: &SaturationSystemSpec, input: &DMatrix<f64>) -> Result<Dataset> {
    if input.nrows() != 2 {
        return Err(LavaError::argument("the saturation system has two inputs"));
    }
    if !(spec.noise_variance >= 0.0) || !(spec.saturation_level > 0.0) {
        return Err(LavaError::argument(
            "noise variance must be ≥ 0 and saturation level > 0",
        ));
    }
    let n = input.ncols();
    let noise = Normal::new(0.0, spec.noise_variance.sqrt())
        .map_err(|e| LavaError::argument(format!("noise distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut y = DMatrix::zeros(2, n);
    let (mut x1, mut x2) = (0.0f64, 0.0f64);
    for t in 0..n {
        y[(0, t)] = x1 + noise.sample(&mut rng);
        y[(1, t)] = x2 + noise.sample(&mut rng);
        let next1 = sat(0.9 * x1 + 0.1 * input[(0, t)], spec.saturation_level);
        let next2 = 0.08 * x1 + 0.9 * x2 + 0.6 * input[(1, t)];
        x1 = next1;
        x2 = next2;
    }
    Dataset::new(input.clone(), y, 1.0)
}

/// Two independent `RS(A)` channels.
pub fn rs_input(amplitude: f64, length: usize, base_period: usize, seed: u64) -> Result<DMatrix<f64>> {
    let mut u = DMatrix::zeros(2, length);
    for ch in 0..2 {
        let spec = RsSignalSpec::new(amplitude, length, derive_seed(seed, &[ch as u64])).with_base_period(base_period);
        let sig = generate_rs(&spec)?;
        u.row_mut(ch).copy_from_slice(&sig);
    }
    Ok(u)
}

/// Benchmark record driven by `RS(A)` inputs.
pub fn saturation_record(
    system: &SaturationSystemSpec,
    amplitude: f64,
    length: usize,
    base_period: usize,
    input_seed: u64,
) -> Result<Dataset> {
    let u = rs_input(amplitude, length, base_period, input_seed)?;
    simulate_saturation(system, &u)
}

/// SplitMix64-style mixing of a base seed with a path of tags.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    tags.iter().fold(mix(base), |acc, &t| mix(acc ^ mix(t)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    LavaR,
    Arx,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::LavaR => "lava-r",
            Estimator::Arx => "arx",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub amplitudes: Vec<f64>,
    pub mc_runs: usize,
    pub seed: u64,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub n_a: usize,
    pub n_b: usize,
    pub resolution: usize,
    pub cycles: usize,
    pub initial_gain: f64,
    pub margin: f64,
    pub base_period: usize,
    pub noise_variance: f64,
    pub saturation_level: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            amplitudes: DEFAULT_AMPLITUDES.to_vec(),
            mc_runs: 100,
            seed: 0,
            train_samples: 1000,
            validation_samples: 1000,
            n_a: 1,
            n_b: 1,
            resolution: 4,
            cycles: DEFAULT_CYCLES,
            initial_gain: DEFAULT_INITIAL_GAIN,
            margin: DEFAULT_MARGIN,
            base_period: RsSignalSpec::DEFAULT_BASE_PERIOD,
            noise_variance: DEFAULT_NOISE_VARIANCE,
            saturation_level: DEFAULT_SATURATION,
        }
    }
}

/// Result for one amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeOutcome {
    pub amplitude: f64,
    pub lava_rmse: DVector<f64>,
    pub arx_rmse: DVector<f64>,
    /// Nonzero entries of the fitted `Ẑ`.
    pub lava_nonzeros: usize,
    /// Capacity `n_y · q` of `Ẑ`.
    pub z_capacity: usize,
    /// Validation runs in which a free run diverged, per estimator.
    pub lava_diverged: usize,
    pub arx_diverged: usize,
}

/// One line of the sweep CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub estimator: Estimator,
    pub amplitude: f64,
    /// 1-based output channel.
    pub channel: usize,
    pub rmse: f64,
}

/// Fitted LAVA-R and affine ARX models for one training record.
pub struct FittedPair {
    pub lava: Model,
    pub arx: Model,
}

pub fn fit_pair(train: &Dataset, cfg: &SweepConfig) -> Result<FittedPair> {
    let reg = RegressorConfig::from_data(train, cfg.n_a, cfg.n_b, cfg.resolution, cfg.margin)?;
    let lava_cfg = LavaConfig {
        cycles: cfg.cycles,
        initial_gain: cfg.initial_gain,
        ..LavaConfig::default()
    };
    let solver = LavaSolver::fit(&reg, train, lava_cfg)?;
    Ok(FittedPair {
        lava: solver.model(&reg)?,
        arx: solver.arx_model(&reg)?,
    })
}

/// Fresh training record per amplitude, LAVA-R and ARX fits, RMSE of free-run
/// simulation over `mc_runs` independent validation records. Diverged runs
/// are counted and excluded from the RMSE.
pub fn run_amplitude_sweep(cfg: &SweepConfig) -> Result<Vec<AmplitudeOutcome>> {
    if cfg.mc_runs == 0 {
        return Err(LavaError::argument("need at least one Monte Carlo run"));
    }
    if cfg.amplitudes.is_empty() || cfg.amplitudes.iter().any(|a| !(*a > 0.0)) {
        return Err(LavaError::argument("amplitudes must be positive"));
    }
    cfg.amplitudes
        .par_iter()
        .enumerate()
        .map(|(k, &a)| sweep_amplitude(cfg, k as u64, a))
        .collect()
}

fn sweep_amplitude(cfg: &SweepConfig, index: u64, amplitude: f64) -> Result<AmplitudeOutcome> {
    let system = |noise_seed| SaturationSystemSpec {
        noise_variance: cfg.noise_variance,
        saturation_level: cfg.saturation_level,
        seed: noise_seed,
    };
    let train = saturation_record(
        &system(derive_seed(cfg.seed, &[index, 0, 1])),
        amplitude,
        cfg.train_samples,
        cfg.base_period,
        derive_seed(cfg.seed, &[index, 0, 0]),
    )?;
    let pair = fit_pair(&train, cfg)?;
    let warmup = pair.lava.config().warmup();

    let runs: Vec<Result<ValidationRun>> = (0..cfg.mc_runs)
        .into_par_iter()
        .map(|r| {
            let tag = r as u64 + 1;
            let val = saturation_record(
                &system(derive_seed(cfg.seed, &[index, tag, 1])),
                amplitude,
                cfg.validation_samples,
                cfg.base_period,
                derive_seed(cfg.seed, &[index, tag, 0]),
            )?;
            let lava = simulate_or_flag(&pair.lava, &val)?;
            let arx = simulate_or_flag(&pair.arx, &val)?;
            Ok((val, lava, arx))
        })
        .collect();

    let mut lava_sims = (Vec::new(), Vec::new());
    let mut arx_sims = (Vec::new(), Vec::new());
    let (mut lava_div, mut arx_div) = (0, 0);
    for run in runs {
        let (val, lava, arx) = run?;
        match lava {
            Some(s) => {
                lava_sims.0.push(s);
                lava_sims.1.push(val.outputs().clone());
            }
            None => lava_div += 1,
        }
        match arx {
            Some(s) => {
                arx_sims.0.push(s);
                arx_sims.1.push(val.outputs().clone());
            }
            None => arx_div += 1,
        }
    }
    let n_y = train.n_y();
    let summarize = |sims: &(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)| -> Result<DVector<f64>> {
        if sims.0.is_empty() {
            Ok(DVector::from_element(n_y, f64::INFINITY))
        } else {
            rmse(&sims.0, &sims.1, warmup)
        }
    };
    Ok(AmplitudeOutcome {
        amplitude,
        lava_rmse: summarize(&lava_sims)?,
        arx_rmse: summarize(&arx_sims)?,
        lava_nonzeros: pair.lava.nonzeros(),
        z_capacity: n_y * pair.lava.config().q(),
        lava_diverged: lava_div,
        arx_diverged: arx_div,
    })
}

/// Validation record with the LAVA-R and ARX free runs (`None` if diverged).
type ValidationRun = (Dataset, Option<DMatrix<f64>>, Option<DMatrix<f64>>);

fn simulate_or_flag(model: &Model, data: &Dataset) -> Result<Option<DMatrix<f64>>> {
    match model.simulate_free_run(data) {
        Ok(s) => Ok(Some(s)),
        Err(LavaError::Diverged { sample }) => {
            log::warn!("free run diverged at sample {sample}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

pub fn sweep_rows(outcomes: &[AmplitudeOutcome]) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for o in outcomes {
        for (estimator, values) in [(Estimator::LavaR, &o.lava_rmse), (Estimator::Arx, &o.arx_rmse)] {
            for (i, v) in values.iter().enumerate() {
                rows.push(SweepRow {
                    estimator,
                    amplitude: o.amplitude,
                    channel: i + 1,
                    rmse: *v,
                });
            }
        }
    }
    rows
}

/// Writes `estimator,amplitude,channel,rmse`.
pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(w, "estimator,amplitude,channel,rmse")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.estimator.name(), r.amplitude, r.channel, r.rmse)?;
    }
    Ok(())
}
