//! Fixtures shared by the benchmarks.

use lava_core::experiments::{saturation_record, SaturationSystemSpec};
use lava_core::regressors::DEFAULT_MARGIN;
use lava_core::{Dataset, RegressorConfig};

/// Saturation-benchmark training record with its regressor configuration
/// (`n_a = n_b = 1`).
pub fn saturation_fixture(amplitude: f64, samples: usize, resolution: usize) -> (Dataset, RegressorConfig) {
    let data = saturation_record(&SaturationSystemSpec::default(), amplitude, samples, 5, 7)
        .expect("valid benchmark parameters");
    let reg = RegressorConfig::from_data(&data, 1, 1, resolution, DEFAULT_MARGIN).expect("valid regressor config");
    (data, reg)
}
