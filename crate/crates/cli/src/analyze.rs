//! Analysis subcommands. Column names are part of the interface; see the README.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use mfp_core::analysis::{
    estimate_metrics, outlier_mape, outlier_mixture, rate_experiment, sweep_groups, sweep_scale_formats,
    Distribution, ModelGrid, Sampler,
};
use mfp_core::io::read_tensor;
use mfp_core::{quantize_rtn, reconstruct, FormatSpec, ScaleFormat, ScalePolicy, TransformSpec};
use ndarray::Array2;

use crate::commands::FormatArgs;
use crate::table::Table;
use crate::usage;

#[derive(Subcommand, Debug)]
pub enum Analyze {
    /// Preserved mass R(G) of the dead-zone model and its log-corrected slope
    Rates(RatesArgs),
    /// Model-quantizer error on the top coordinate vs the per-element average
    Lemma1(Lemma1Args),
    /// RTN error by group size, with and without a size-G Hadamard rotation
    SweepGroups(SweepGroupsArgs),
    /// RTN error by scale format at a fixed group size
    SweepScaleFormats(SweepFormatsArgs),
    /// Relative error on the largest elements of an outlier mixture
    Outliers(OutliersArgs),
}

/// Accepts plain integers and integral scientific notation such as `1e7`.
fn parse_count(s: &str) -> std::result::Result<usize, String> {
    if let Ok(n) = s.parse::<usize>() {
        return Ok(n);
    }
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v < 1e18 => Ok(v as usize),
        _ => Err(format!("`{s}` is not a non-negative integer")),
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum GridKind {
    /// {0, ±2δ, ±1}
    Deadzone,
    /// E2M1 magnitudes divided by 6
    E2m1,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    #[arg(long, value_enum)]
    grid: Option<GridKind>,
    /// Dead-zone half-width in the normalized domain
    #[arg(long, default_value_t = 0.25)]
    delta: f64,
}

impl GridArgs {
    fn build(&self, default: GridKind) -> Result<ModelGrid> {
        match self.grid.unwrap_or(default) {
            GridKind::Deadzone => ModelGrid::dead_zone(self.delta).map_err(|e| usage(e.to_string())),
            GridKind::E2m1 => Ok(ModelGrid::e2m1()),
        }
    }
}

#[derive(Args, Debug)]
pub struct OutArgs {
    /// CSV destination; standard output if absent
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
pub struct RatesArgs {
    dist: Distribution,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [64usize, 128, 256, 512, 1024, 2048, 4096, 8192, 16384, 32768, 65536])]
    g_list: Vec<usize>,
    /// Samples per group size
    #[arg(long, value_parser = parse_count, default_value = "1000000")]
    n: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
pub struct Lemma1Args {
    #[arg(default_value = "normal")]
    dist: Distribution,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [16usize, 32, 64])]
    g_list: Vec<usize>,
    /// Blocks per group size
    #[arg(long, value_parser = parse_count, default_value = "100000")]
    n: usize,
    /// Apply a normalized Hadamard rotation before quantizing
    #[arg(long, action = clap::ArgAction::Set, default_value_t = true)]
    rotate: bool,
    #[command(flatten)]
    out: OutArgs,
}

/// Input matrix: a tensor file, or synthetic i.i.d. data.
#[derive(Args, Debug)]
pub struct DataArgs {
    /// MFPT tensor to analyse instead of synthetic data
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value = "laplace")]
    dist: Distribution,
    #[arg(long, default_value_t = 1024)]
    rows: usize,
    #[arg(long, default_value_t = 4096)]
    cols: usize,
}

impl DataArgs {
    fn load(&self, seed: u64) -> Result<Array2<f32>> {
        match &self.input {
            Some(p) => read_tensor(p).with_context(|| format!("reading {}", p.display())),
            None => {
                if self.rows == 0 || self.cols == 0 {
                    return Err(usage("rows and cols must be positive"));
                }
                Ok(Sampler::new(self.dist, seed).sample_matrix(self.rows, self.cols))
            }
        }
    }
}

#[derive(Args, Debug)]
pub struct SweepGroupsArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Scale format: mxfp4 and nvfp4 select e8m0 and e4m3
    #[arg(long, default_value = "nvfp4")]
    format: String,
    #[arg(long, value_delimiter = ',', default_values_t = [8usize, 16, 32, 64, 128, 256])]
    g_list: Vec<usize>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
pub struct SweepFormatsArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 16)]
    group_size: usize,
    /// Scale formats; defaults to unquantized, the FP8 family, e8m0 and int8
    #[arg(long, value_delimiter = ',')]
    scales: Vec<ScaleFormat>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
pub struct OutliersArgs {
    /// Outlier probability per element
    #[arg(long, default_value_t = 1e-3)]
    p: f64,
    /// Outlier magnitude multiplier
    #[arg(long, default_value_t = 50.0)]
    factor: f64,
    #[arg(long, default_value_t = 1024)]
    rows: usize,
    #[arg(long, default_value_t = 4096)]
    cols: usize,
    #[command(flatten)]
    format: FormatArgs,
    #[command(flatten)]
    out: OutArgs,
}

pub fn run(a: Analyze) -> Result<()> {
    match a {
        Analyze::Rates(a) => rates(a),
        Analyze::Lemma1(a) => lemma1(a),
        Analyze::SweepGroups(a) => groups(a),
        Analyze::SweepScaleFormats(a) => formats(a),
        Analyze::Outliers(a) => outliers(a),
    }
}

fn rates(a: RatesArgs) -> Result<()> {
    let grid = a.grid.build(GridKind::Deadzone)?;
    let table = rate_experiment(&Sampler::new(a.dist, a.out.seed), &grid, &a.g_list, a.n)?;
    let mut t = Table::new(&["G", "R", "stderr", "corrected_log_R"])?;
    for r in &table.rows {
        t.row([r.g.to_string(), r.r.to_string(), r.stderr.to_string(), r.corrected_log_r.to_string()])?;
    }
    t.finish(a.out.csv.as_deref())?;
    if a.out.csv.is_some() {
        println!("slope={}", table.slope);
    } else {
        eprintln!("slope={}", table.slope);
    }
    Ok(())
}

fn lemma1(a: Lemma1Args) -> Result<()> {
    let grid = a.grid.build(GridKind::E2m1)?;
    let sampler = Sampler::new(a.dist, a.out.seed);
    let mut t = Table::new(&[
        "G",
        "rotate",
        "mse",
        "mse_stderr",
        "mse_top",
        "mse_top_stderr",
        "top_minus_mse_stderr",
        "mse_top_rel",
        "preserved_mass",
    ])?;
    for &g in &a.g_list {
        let m = estimate_metrics(&sampler.derive(g as u64), g, &grid, a.rotate, a.n)?;
        t.row([
            g.to_string(),
            a.rotate.to_string(),
            m.mse.to_string(),
            m.mse_stderr.to_string(),
            m.mse_top.to_string(),
            m.mse_top_stderr.to_string(),
            m.top_minus_mse_stderr.to_string(),
            m.mse_top_rel.to_string(),
            m.preserved_mass.to_string(),
        ])?;
    }
    t.finish(a.out.csv.as_deref())
}

fn sweep_scale(name: &str) -> Result<ScaleFormat> {
    match name.to_ascii_lowercase().as_str() {
        "mxfp4" => Ok(ScaleFormat::E8M0),
        "nvfp4" => Ok(ScaleFormat::E4M3),
        other => other.parse().map_err(|e: mfp_core::Error| usage(e.to_string())),
    }
}

fn groups(a: SweepGroupsArgs) -> Result<()> {
    let scale = sweep_scale(&a.format)?;
    let x = a.data.load(a.out.seed)?;
    let rows = sweep_groups(&x, scale, &a.g_list)?;
    let mut t = Table::new(&["G", "transform", "mse_rel", "mse_rel_stderr", "mse_top_rel", "mse_top_rel_stderr"])?;
    for r in rows {
        let transform = if r.hadamard { format!("hadamard:{}", r.g) } else { "none".to_string() };
        t.row([
            r.g.to_string(),
            transform,
            r.mse_rel.to_string(),
            r.mse_rel_stderr.to_string(),
            r.mse_top_rel.to_string(),
            r.mse_top_rel_stderr.to_string(),
        ])?;
    }
    t.finish(a.out.csv.as_deref())
}

fn formats(a: SweepFormatsArgs) -> Result<()> {
    let scales = if a.scales.is_empty() {
        let mut v = vec![ScaleFormat::Unquantized];
        v.extend(ScaleFormat::fp8_family());
        v.extend([ScaleFormat::E8M0, ScaleFormat::Int8Linear { range: None }]);
        v
    } else {
        a.scales.clone()
    };
    let x = a.data.load(a.out.seed)?;
    let rows = sweep_scale_formats(&x, a.group_size, &scales)?;
    let mut t = Table::new(&["scale", "mse_rel", "mse_rel_stderr", "mse_top_rel"])?;
    for r in rows {
        t.row([
            r.format.to_string(),
            r.mse_rel.to_string(),
            r.mse_rel_stderr.to_string(),
            r.mse_top_rel.to_string(),
        ])?;
    }
    t.finish(a.out.csv.as_deref())
}

fn outliers(a: OutliersArgs) -> Result<()> {
    if a.rows == 0 || a.cols == 0 {
        return Err(usage("rows and cols must be positive"));
    }
    let spec: FormatSpec = a.format.spec()?;
    let x = outlier_mixture(a.rows, a.cols, a.p, a.factor, a.out.seed);
    let policy = ScalePolicy::for_spec(&spec);
    let mut t = Table::new(&["scale", "G", "transform", "p", "outlier_mape", "mse_top_rel", "mse_rel"])?;
    for transform in [None, Some(TransformSpec::hadamard(spec.group_size)?)] {
        let r = quantize_rtn(&x, &spec, &policy, transform)?;
        let mape = outlier_mape(&x, &reconstruct(&r.tensor), a.p)?;
        t.row([
            spec.scale.to_string(),
            spec.group_size.to_string(),
            transform.map_or("none".to_string(), |t| t.to_string()),
            a.p.to_string(),
            mape.to_string(),
            r.mse_top_rel.to_string(),
            r.mse_rel.to_string(),
        ])?;
    }
    t.finish(a.out.csv.as_deref())
}
