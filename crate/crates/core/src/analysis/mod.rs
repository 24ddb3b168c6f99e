//! Monte Carlo harness for quantization error statistics: samplers, the
//! normalized model quantizer, rate regressions, group and scale-format
//! sweeps, outlier error and moment fits.

mod experiments;
mod model;
#[cfg(test)]
mod oracle;
mod sampler;

pub use experiments::{
    kurtosis_report, outlier_mape, rate_experiment, spec_for_scale, sweep_groups, sweep_scale_formats,
    FormatSweepRow, GroupSweepRow, KurtosisReport, RateRow, RateTable,
};
pub use model::{estimate_metrics, model_quantize_block, MetricsReport, ModelGrid};
pub use sampler::{correlated_gaussian, outlier_mixture, Distribution, Sampler};
