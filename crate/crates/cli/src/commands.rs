use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use lava_core::experiments::{
    derive_seed, run_amplitude_sweep, saturation_record, sweep_rows, write_sweep_csv, SaturationSystemSpec,
    SweepConfig, DEFAULT_AMPLITUDES,
};
use lava_core::lava::DEFAULT_CYCLES;
use lava_core::mm::{mm_iterate, BatchData, MlParams, MmOptions};
use lava_core::predictor::{fit_per_channel, rmse};
use lava_core::regressors::DEFAULT_MARGIN;
use lava_core::rls::DEFAULT_INITIAL_GAIN;
use lava_core::{Dataset, LavaConfig, LavaError, LavaSolver, Model, RegressorConfig, RsSignalSpec};

use crate::model_file::{fingerprint, ModelFile, Provenance, Solver};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "lava",
    version,
    about = "Recursive identification with sparse latent-variable models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum System {
    Saturation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Fit,
    Rmse,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a benchmark record driven by random-amplitude PRBS inputs.
    Gen {
        #[arg(long, value_enum)]
        system: System,
        #[arg(long)]
        amplitude: f64,
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Samples per PRBS clock.
        #[arg(long, default_value_t = RsSignalSpec::DEFAULT_BASE_PERIOD)]
        base_period: usize,
    },
    /// Fit a model to a data CSV.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        na: usize,
        #[arg(long)]
        nb: usize,
        /// Basis functions per regressor dimension.
        #[arg(long = "M")]
        m: usize,
        /// Coordinate sweeps per sample.
        #[arg(long, default_value_t = DEFAULT_CYCLES)]
        cycles: usize,
        /// Initial RLS gain scale.
        #[arg(long, default_value_t = DEFAULT_INITIAL_GAIN)]
        c: f64,
        /// Batch majorization-minimization steps; 0 selects the recursive solver.
        #[arg(long, default_value_t = 0)]
        mm_iters: usize,
        /// Factor applied to the observed regressor range to set the basis domain.
        #[arg(long, default_value_t = DEFAULT_MARGIN)]
        margin: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Free-run simulation of a fitted model on a data CSV.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Metric::Fit)]
        metric: Metric,
    },
    /// Amplitude sweep on the saturation benchmark.
    Sweep {
        /// Comma-separated input amplitudes.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_AMPLITUDES.to_vec())]
        amplitudes: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        mc_runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Executes a parsed command, writing summaries to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Gen {
            system: System::Saturation,
            amplitude,
            samples,
            seed,
            out,
            base_period,
        } => cmd_gen(amplitude, samples, seed, base_period, &out),
        Command::Fit {
            data,
            na,
            nb,
            m,
            cycles,
            c,
            mm_iters,
            margin,
            out,
        } => cmd_fit(
            &FitArgs {
                data: &data,
                na,
                nb,
                m,
                cycles,
                c,
                mm_iters,
                margin,
                out: &out,
            },
            stdout,
        ),
        Command::Simulate {
            model,
            data,
            out,
            metric,
        } => cmd_simulate(&model, &data, &out, metric, stdout),
        Command::Sweep {
            amplitudes,
            mc_runs,
            seed,
            out,
        } => cmd_sweep(amplitudes, mc_runs, seed, &out),
    }
    .and_then(|()| stdout.flush().map_err(|e| CliError::Usage(format!("stdout: {e}"))))
}

fn cmd_gen(amplitude: f64, samples: usize, seed: u64, base_period: usize, out: &Path) -> Result<(), CliError> {
    let system = SaturationSystemSpec {
        seed: derive_seed(seed, &[1]),
        ..SaturationSystemSpec::default()
    };
    let data = saturation_record(&system, amplitude, samples, base_period, derive_seed(seed, &[0]))?;
    data.write_csv(out)?;
    Ok(())
}

struct FitArgs<'a> {
    data: &'a Path,
    na: usize,
    nb: usize,
    m: usize,
    cycles: usize,
    c: f64,
    mm_iters: usize,
    margin: f64,
    out: &'a Path,
}

fn cmd_fit(args: &FitArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let bytes = fs::read(args.data).map_err(|e| CliError::io(args.data, e))?;
    let data = Dataset::read_csv(bytes.as_slice(), None)?;
    let reg = RegressorConfig::from_data(&data, args.na, args.nb, args.m, args.margin)?;
    let fingerprint = fingerprint(&bytes);

    let (model, provenance) = if args.mm_iters == 0 {
        let cfg = LavaConfig {
            cycles: args.cycles,
            initial_gain: args.c,
            ..LavaConfig::default()
        };
        let solver = LavaSolver::fit(&reg, &data, cfg)?;
        let provenance = Provenance {
            solver: Solver::LavaR,
            cycles: Some(args.cycles),
            k_max: None,
            c: Some(args.c),
            seed: None,
            data_fingerprint: fingerprint,
        };
        (solver.model(&reg)?, provenance)
    } else {
        let batch = BatchData::from_dataset(&reg, &data)?;
        let opts = MmOptions {
            max_iters: args.mm_iters,
            ..MmOptions::default()
        };
        let init = MlParams::default_init(reg.n_y, reg.p(), reg.q());
        let trace = mm_iterate(&batch, &init, opts)?;
        let last = trace.last().expect("at least one MM step");
        let provenance = Provenance {
            solver: Solver::MmBatch,
            cycles: None,
            k_max: Some(args.mm_iters),
            c: None,
            seed: None,
            data_fingerprint: fingerprint,
        };
        (
            Model::from_dense(last.params.theta.clone(), &last.z, reg.clone())?,
            provenance,
        )
    };

    ModelFile::from_model(&model, provenance).write(args.out)?;
    writeln!(
        stdout,
        "p={} q={} theta={}x{} ({} entries) z_capacity={} z_nonzero={}",
        reg.p(),
        reg.q(),
        reg.n_y,
        reg.p(),
        reg.n_y * reg.p(),
        reg.n_y * reg.q(),
        model.nonzeros()
    )
    .map_err(stdout_error)?;
    Ok(())
}

fn cmd_simulate(
    model_path: &Path,
    data_path: &Path,
    out: &Path,
    metric: Metric,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let model = ModelFile::read(model_path)?.to_model()?;
    let cfg = model.config();
    let data = Dataset::load_csv(data_path, cfg.n_u, cfg.n_y)?;
    let sim = match model.simulate_free_run(&data) {
        Ok(sim) => sim,
        Err(LavaError::Diverged { sample }) => {
            writeln!(stdout, "diverged,{sample}").map_err(stdout_error)?;
            return Err(CliError::Numeric(format!(
                "free-run simulation diverged at sample {sample}"
            )));
        }
        Err(e) => return Err(e.into()),
    };
    data.write_csv_with_predictions(out, Some(&sim))?;
    let values = match metric {
        Metric::Fit => fit_per_channel(&sim, data.outputs(), cfg.warmup())?,
        Metric::Rmse => rmse(&[sim], &[data.outputs().clone()], cfg.warmup())?,
    };
    writeln!(stdout, "channel,value").map_err(stdout_error)?;
    for (i, v) in values.iter().enumerate() {
        writeln!(stdout, "{},{v}", i + 1).map_err(stdout_error)?;
    }
    Ok(())
}

fn cmd_sweep(amplitudes: Vec<f64>, mc_runs: usize, seed: u64, out: &Path) -> Result<(), CliError> {
    let cfg = SweepConfig {
        amplitudes,
        mc_runs,
        seed,
        ..SweepConfig::default()
    };
    let outcomes = run_amplitude_sweep(&cfg)?;
    for o in &outcomes {
        if o.lava_diverged + o.arx_diverged > 0 {
            log::warn!(
                "amplitude {}: {} LAVA-R and {} ARX validation runs diverged",
                o.amplitude,
                o.lava_diverged,
                o.arx_diverged
            );
        }
    }
    let file = fs::File::create(out).map_err(|e| CliError::io(out, e))?;
    let mut w = io::BufWriter::new(file);
    write_sweep_csv(&mut w, &sweep_rows(&outcomes))
        .and_then(|()| w.flush())
        .map_err(|e| CliError::io(out, e))
}

fn stdout_error(e: io::Error) -> CliError {
    CliError::Usage(format!("stdout: {e}"))
}
