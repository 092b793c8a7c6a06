//! Multi-channel input/output records and excitation signals.
//!
//! Samples are stored column-wise: column `t` of [`Dataset::inputs`] and
//! [`Dataset::outputs`] holds `u(t)` and `y(t)`. Indices are zero-based.
//!
//! Random sequences use `ChaCha8Rng` seeded through `SeedableRng::seed_from_u64`,
//! which is specified bit-for-bit by `rand_chacha` and therefore reproducible
//! across platforms.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{LavaError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: DMatrix<f64>,
    outputs: DMatrix<f64>,
    sample_period: f64,
}

impl Dataset {
    /// `inputs` is `n_u × N`, `outputs` is `n_y × N`. `n_u` may be zero for
    /// autonomous systems.
    pub fn new(inputs: DMatrix<f64>, outputs: DMatrix<f64>, sample_period: f64) -> Result<Self> {
        if outputs.ncols() == 0 {
            return Err(LavaError::argument("dataset must contain at least one sample"));
        }
        if inputs.ncols() != outputs.ncols() {
            return Err(LavaError::argument(format!(
                "inputs have {} samples but outputs have {}",
                inputs.ncols(),
                outputs.ncols()
            )));
        }
        if outputs.nrows() == 0 {
            return Err(LavaError::argument("dataset needs at least one output channel"));
        }
        if !(sample_period > 0.0 && sample_period.is_finite()) {
            return Err(LavaError::argument("sample period must be positive"));
        }
        if inputs.iter().chain(outputs.iter()).any(|v| !v.is_finite()) {
            return Err(LavaError::argument("dataset contains non-finite values"));
        }
        Ok(Dataset {
            inputs,
            outputs,
            sample_period,
        })
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn outputs(&self) -> &DMatrix<f64> {
        &self.outputs
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    pub fn n_u(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn n_y(&self) -> usize {
        self.outputs.nrows()
    }

    /// Number of samples `N`.
    pub fn len(&self) -> usize {
        self.outputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Splits into samples `0..boundary` and `boundary..N`.
    pub fn split(&self, boundary: usize) -> Result<(Dataset, Dataset)> {
        let n = self.len();
        if boundary == 0 || boundary >= n {
            return Err(LavaError::argument(format!(
                "split boundary {boundary} must lie in 1..{n}"
            )));
        }
        let head = Dataset {
            inputs: self.inputs.columns(0, boundary).into_owned(),
            outputs: self.outputs.columns(0, boundary).into_owned(),
            sample_period: self.sample_period,
        };
        let tail = Dataset {
            inputs: self.inputs.columns(boundary, n - boundary).into_owned(),
            outputs: self.outputs.columns(boundary, n - boundary).into_owned(),
            sample_period: self.sample_period,
        };
        Ok((head, tail))
    }

    /// Loads a CSV with header `u1,..,u{n_u},y1,..,y{n_y}`.
    pub fn load_csv(path: impl AsRef<Path>, n_u: usize, n_y: usize) -> Result<Dataset> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|source| LavaError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read_csv(BufReader::new(file), Some((n_u, n_y)))
    }

    /// Loads a CSV and infers `n_u`, `n_y` from the `u*`/`y*` header names.
    pub fn load_csv_auto(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|source| LavaError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read_csv(BufReader::new(file), None)
    }

    pub fn read_csv<R: BufRead>(reader: R, dims: Option<(usize, usize)>) -> Result<Dataset> {
        let mut lines = reader.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => line.map_err(|e| LavaError::schema(format!("unreadable header: {e}")))?,
            None => return Err(LavaError::schema("empty file")),
        };
        let names: Vec<&str> = header.trim_end_matches('\r').split(',').map(str::trim).collect();
        let inferred_u = names.iter().take_while(|n| n.starts_with('u')).count();
        let (n_u, n_y) = dims.unwrap_or((inferred_u, names.len() - inferred_u));
        let expected = expected_header(n_u, n_y);
        if names != expected.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(LavaError::schema(format!(
                "header {:?} does not match expected {:?}",
                header,
                expected.join(",")
            )));
        }

        let width = n_u + n_y;
        let mut columns: Vec<f64> = Vec::new();
        for (idx, line) in lines {
            // 1-based data row; the header is row 0.
            let row = idx;
            let line = line.map_err(|e| LavaError::Parse {
                row,
                message: e.to_string(),
            })?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != width {
                return Err(LavaError::schema(format!(
                    "row {row} has {} fields, expected {width}",
                    fields.len()
                )));
            }
            for field in fields {
                let value: f64 = field.trim().parse().map_err(|_| LavaError::Parse {
                    row,
                    message: format!("invalid number {field:?}"),
                })?;
                if !value.is_finite() {
                    return Err(LavaError::Parse {
                        row,
                        message: format!("non-finite value {field:?}"),
                    });
                }
                columns.push(value);
            }
        }
        let n = columns.len() / width.max(1);
        if n == 0 {
            return Err(LavaError::schema("no data rows"));
        }
        let all = DMatrix::from_column_slice(width, n, &columns);
        let inputs = all.rows(0, n_u).into_owned();
        let outputs = all.rows(n_u, n_y).into_owned();
        Dataset::new(inputs, outputs, 1.0)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv_with_predictions(path, None)
    }

    /// Writes the dataset, optionally followed by `yhat1..yhat{n_y}` columns.
    pub fn write_csv_with_predictions(&self, path: impl AsRef<Path>, predictions: Option<&DMatrix<f64>>) -> Result<()> {
        let path = path.as_ref();
        let io_err = |source| LavaError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut buf = Vec::new();
        self.write_csv_to(&mut buf, predictions).map_err(io_err)?;
        fs::write(path, buf).map_err(io_err)
    }

    pub fn write_csv_to<W: Write>(&self, mut w: W, predictions: Option<&DMatrix<f64>>) -> std::io::Result<()> {
        let mut header = expected_header(self.n_u(), self.n_y());
        if let Some(pred) = predictions {
            header.extend((1..=pred.nrows()).map(|i| format!("yhat{i}")));
        }
        writeln!(w, "{}", header.join(","))?;
        for t in 0..self.len() {
            let mut fields: Vec<String> = Vec::with_capacity(header.len());
            // `{}` on f64 prints the shortest representation that parses back exactly.
            fields.extend(self.inputs.column(t).iter().map(|v| format!("{v}")));
            fields.extend(self.outputs.column(t).iter().map(|v| format!("{v}")));
            if let Some(pred) = predictions {
                fields.extend(pred.column(t).iter().map(|v| format!("{v}")));
            }
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

fn expected_header(n_u: usize, n_y: usize) -> Vec<String> {
    (1..=n_u)
        .map(|i| format!("u{i}"))
        .chain((1..=n_y).map(|i| format!("y{i}")))
        .collect()
}

/// Feedback taps of maximal-length Fibonacci LFSRs, indexed by register order.
const LFSR_TAPS: &[(u32, &[u32])] = &[
    (3, &[3, 2]),
    (4, &[4, 3]),
    (5, &[5, 3]),
    (6, &[6, 5]),
    (7, &[7, 6]),
    (8, &[8, 6, 5, 4]),
    (9, &[9, 5]),
    (10, &[10, 7]),
    (11, &[11, 9]),
    (12, &[12, 11, 10, 4]),
    (13, &[13, 12, 11, 8]),
    (14, &[14, 13, 12, 2]),
    (15, &[15, 14]),
    (16, &[16, 15, 13, 4]),
];

/// Maximal-length linear feedback shift register producing a binary
/// sequence with period `2^order - 1`.
#[derive(Debug, Clone)]
pub struct Lfsr {
    order: u32,
    taps: &'static [u32],
    state: u32,
}

impl Lfsr {
    pub fn new(order: u32, state: u32) -> Result<Self> {
        let taps = LFSR_TAPS
            .iter()
            .find(|(o, _)| *o == order)
            .map(|(_, t)| *t)
            .ok_or_else(|| LavaError::argument(format!("unsupported PRBS order {order} (3..=16)")))?;
        let state = state & ((1u32 << order) - 1);
        if state == 0 {
            return Err(LavaError::argument("LFSR state must be nonzero"));
        }
        Ok(Lfsr { order, taps, state })
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn next_bit(&mut self) -> bool {
        let out = self.state & 1 == 1;
        let feedback = self
            .taps
            .iter()
            .fold(0u32, |acc, &t| acc ^ (self.state >> (self.order - t)))
            & 1;
        self.state = (self.state >> 1) | (feedback << (self.order - 1));
        out
    }
}

/// Random-amplitude PRBS, `RS(A)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RsSignalSpec {
    pub amplitude: f64,
    /// Samples per PRBS clock.
    pub base_period: usize,
    pub length: usize,
    pub seed: u64,
    pub prbs_order: u32,
}

impl RsSignalSpec {
    pub const DEFAULT_BASE_PERIOD: usize = 5;
    pub const DEFAULT_PRBS_ORDER: u32 = 9;

    pub fn new(amplitude: f64, length: usize, seed: u64) -> Self {
        RsSignalSpec {
            amplitude,
            base_period: Self::DEFAULT_BASE_PERIOD,
            length,
            seed,
            prbs_order: Self::DEFAULT_PRBS_ORDER,
        }
    }

    pub fn with_base_period(mut self, base_period: usize) -> Self {
        self.base_period = base_period;
        self
    }
}

/// Generates an `RS(A)` sequence: a PRBS with levels ±1 where every interval
/// of constant level is scaled by an independent draw from `U[0, A]`.
pub fn generate_rs(spec: &RsSignalSpec) -> Result<Vec<f64>> {
    if !(spec.amplitude > 0.0 && spec.amplitude.is_finite()) {
        return Err(LavaError::argument("RS amplitude must be positive and finite"));
    }
    if spec.length == 0 {
        return Err(LavaError::argument("RS length must be positive"));
    }
    if spec.base_period == 0 {
        return Err(LavaError::argument("RS base period must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mask = (1u32 << spec.prbs_order.min(31)) - 1;
    let start = loop {
        let s = rng.random::<u32>() & mask;
        if s != 0 {
            break s;
        }
    };
    let mut lfsr = Lfsr::new(spec.prbs_order, start)?;

    let mut out = Vec::with_capacity(spec.length);
    let mut level = 0.0f64;
    let mut value = 0.0;
    while out.len() < spec.length {
        let next_level = if lfsr.next_bit() { 1.0 } else { -1.0 };
        if next_level != level {
            level = next_level;
            value = level * rng.random_range(0.0..=spec.amplitude);
        }
        let run = spec.base_period.min(spec.length - out.len());
        out.extend(std::iter::repeat_n(value, run));
    }
    Ok(out)
}
