use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use mfp_core::analysis::{Distribution, Sampler};
use mfp_core::gptq::MrGptqOptions;
use mfp_core::io::{read_quant, read_tensor, write_quant, write_tensor};
use mfp_core::{
    gptq_quantize, mr_gptq, quantize_rtn, reconstruct, FormatSpec, GptqConfig, Hessian, QuantResult, ScaleFitting,
    ScaleFormat, ScaleMode, ScalePolicy, TransformSpec,
};

use crate::usage;

#[derive(Args, Debug)]
pub struct GenArgs {
    /// laplace or normal, both with unit variance
    pub dist: Distribution,
    pub rows: usize,
    pub cols: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub out: PathBuf,
}

pub fn gen(a: GenArgs) -> Result<()> {
    if a.rows == 0 || a.cols == 0 {
        return Err(usage("rows and cols must be positive"));
    }
    let x = Sampler::new(a.dist, a.seed).sample_matrix(a.rows, a.cols);
    write_tensor(&a.out, &x).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Mxfp4,
    Nvfp4,
    Custom,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Rtn,
    Gptq,
    MrGptq,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScaleOpt {
    Absmax,
    Mse,
}

impl From<ScaleOpt> for ScaleMode {
    fn from(s: ScaleOpt) -> Self {
        match s {
            ScaleOpt::Absmax => ScaleMode::AbsMax,
            ScaleOpt::Mse => ScaleMode::MseOptimized,
        }
    }
}

/// Format selection shared by `quantize` and the analysis sweeps.
#[derive(Args, Debug, Clone)]
pub struct FormatArgs {
    #[arg(long, value_enum, default_value_t = Preset::Nvfp4)]
    pub format: Preset,
    /// Override the preset group size (required for custom)
    #[arg(long)]
    pub group_size: Option<usize>,
    /// Scale format for custom: e8m0, e4m3, e3m4, e5m2, int8, int8:<lo>:<hi>, unquantized
    #[arg(long)]
    pub scale: Option<ScaleFormat>,
    /// Use a per-tensor FP32 scale (custom only; NVFP4 always has one)
    #[arg(long)]
    pub global_scale: bool,
}

impl FormatArgs {
    pub fn spec(&self) -> Result<FormatSpec> {
        let mut spec = match self.format {
            Preset::Mxfp4 => FormatSpec::mxfp4(),
            Preset::Nvfp4 => FormatSpec::nvfp4(),
            Preset::Custom => {
                let g = self.group_size.ok_or_else(|| usage("--format custom needs --group-size"))?;
                let scale = self.scale.ok_or_else(|| usage("--format custom needs --scale"))?;
                return Ok(FormatSpec::new(g, scale, self.global_scale)?);
            }
        };
        if self.scale.is_some() || self.global_scale {
            return Err(usage("--scale and --global-scale only apply to --format custom"));
        }
        if let Some(g) = self.group_size {
            spec = FormatSpec::new(g, spec.scale, spec.global_scale)?;
        }
        Ok(spec)
    }
}

#[derive(Args, Debug)]
pub struct QuantizeArgs {
    /// MFPT tensor (rows × cols weights)
    pub input: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub format: FormatArgs,
    #[arg(long, value_enum, default_value_t = Method::Rtn)]
    pub method: Method,
    /// none, hadamard:K, dct:K or dst:K (mr-gptq defaults to hadamard)
    #[arg(long)]
    pub transform: Option<String>,
    /// absmax or mse (mr-gptq defaults per format)
    #[arg(long, value_enum)]
    pub scale_opt: Option<ScaleOpt>,
    /// Fit the E8M0 code grid to the observed scale range
    #[arg(long, conflicts_with = "no_scale_fit")]
    pub scale_fit: bool,
    /// Disable the fitted grid mr-gptq uses by default for E8M0
    #[arg(long)]
    pub no_scale_fit: bool,
    /// Disable the 4/3 rescale of E8M0 scales
    #[arg(long)]
    pub no_four_thirds: bool,
    /// Static activation reordering for gptq (always on for mr-gptq)
    #[arg(long)]
    pub act_order: bool,
    /// MFPT tensor of calibration activations (n × cols), required for gptq
    #[arg(long)]
    pub calib: Option<PathBuf>,
    /// Hessian dampening as a fraction of the mean diagonal
    #[arg(long, default_value_t = 1e-2)]
    pub damp: f64,
    /// Accepted for uniformity; quantization is deterministic
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn parse_transform(s: &str) -> Result<Option<TransformSpec>> {
    if s.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        Ok(Some(s.parse().map_err(|e: mfp_core::Error| usage(e.to_string()))?))
    }
}

fn run_quantize(a: &QuantizeArgs, w: &ndarray::Array2<f32>, spec: &FormatSpec) -> Result<QuantResult> {
    let transform = a.transform.as_deref().map(parse_transform).transpose()?;
    let fitting = if a.scale_fit {
        Some(ScaleFitting::FromData)
    } else if a.no_scale_fit {
        Some(ScaleFitting::Off)
    } else {
        None
    };

    let hessian = || -> Result<Hessian> {
        let path = a.calib.as_ref().ok_or_else(|| usage("gptq methods need --calib"))?;
        let x = read_tensor(path).with_context(|| format!("reading {}", path.display()))?;
        if x.ncols() != w.ncols() {
            return Err(usage(format!(
                "calibration has {} columns but weights have {}",
                x.ncols(),
                w.ncols()
            )));
        }
        Ok(Hessian::from_activations(&x)?)
    };

    let result = match a.method {
        Method::Rtn | Method::Gptq => {
            let mut policy = ScalePolicy::for_spec(spec)
                .with_mode(a.scale_opt.unwrap_or(ScaleOpt::Absmax).into())
                .with_scale_fit(fitting.unwrap_or(ScaleFitting::Off));
            if a.no_four_thirds {
                policy.four_thirds = false;
            }
            if a.method == Method::Rtn {
                quantize_rtn(w, spec, &policy, transform.flatten())?
            } else {
                let cfg = GptqConfig {
                    dampening: a.damp,
                    act_order: a.act_order,
                    scale_policy: policy,
                    transform: transform.flatten(),
                    ..GptqConfig::for_spec(spec)
                };
                gptq_quantize(w, &hessian()?, spec, &cfg)?
            }
        }
        Method::MrGptq => {
            let mut opts = MrGptqOptions::for_format(spec)?;
            opts.dampening = a.damp;
            if let Some(t) = transform {
                opts.transform = t;
            }
            if let Some(s) = a.scale_opt {
                opts.scale_mode = s.into();
            }
            if let Some(f) = fitting {
                opts.scale_fit = f;
            }
            if a.no_four_thirds {
                let mut cfg = opts.config(spec);
                cfg.scale_policy.four_thirds = false;
                gptq_quantize(w, &hessian()?, spec, &cfg)?
            } else {
                mr_gptq(w, &hessian()?, spec, &opts)?
            }
        }
    };
    Ok(result)
}

pub fn quantize(a: QuantizeArgs) -> Result<()> {
    let spec = a.format.spec()?;
    let w = read_tensor(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let r = run_quantize(&a, &w, &spec)?;
    write_quant(&a.out, &r.tensor).with_context(|| format!("writing {}", a.out.display()))?;
    println!("mse_rel={} mse_top_rel={}", r.mse_rel, r.mse_top_rel);
    Ok(())
}

#[derive(Args, Debug)]
pub struct DequantizeArgs {
    /// MFPQ container
    pub input: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Write the quantization-domain values without undoing the transform
    #[arg(long)]
    pub raw: bool,
}

pub fn dequantize(a: DequantizeArgs) -> Result<()> {
    let t = read_quant(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let x = if a.raw { t.dequantize() } else { reconstruct(&t) };
    write_tensor(&a.out, &x).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}
