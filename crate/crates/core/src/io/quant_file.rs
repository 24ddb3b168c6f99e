use std::path::Path;

use super::{write_atomic, Reader};
use crate::error::{Error, Result};
use crate::formats::{ElementFormat, FormatSpec, MfpTensor, ScaleFit, ScaleFormat, TensorMeta};
use crate::quantizers::ScaleMode;
use crate::transforms::TransformSpec;

pub const QUANT_MAGIC: &[u8; 4] = b"MFPQ";
pub const QUANT_VERSION: u8 = 1;

/// Header keys, always written in this order.
const KEYS: [&str; 14] = [
    "format",
    "group_size",
    "element",
    "scale",
    "global_scale",
    "rows",
    "cols",
    "tensor_scale",
    "four_thirds",
    "scale_fit",
    "transform",
    "policy",
    "permutation",
    "scale_code_bytes",
];

fn scale_code_bytes(fmt: &ScaleFormat) -> usize {
    fmt.code_bytes()
}

fn preset_name(spec: &FormatSpec) -> &'static str {
    if *spec == FormatSpec::mxfp4() {
        "mxfp4"
    } else if *spec == FormatSpec::nvfp4() {
        "nvfp4"
    } else {
        "custom"
    }
}

fn header(t: &MfpTensor) -> String {
    let spec = t.spec();
    let meta = t.meta();
    let (rows, cols) = t.dims();
    let values = [
        preset_name(spec).to_string(),
        spec.group_size.to_string(),
        "e2m1".to_string(),
        spec.scale.to_string(),
        spec.global_scale.to_string(),
        rows.to_string(),
        cols.to_string(),
        // Debug prints the shortest string that parses back to the same bits.
        format!("{:?}", meta.tensor_scale),
        meta.four_thirds.to_string(),
        meta.scale_fit
            .map_or("none".to_string(), |f| format!("{:?}:{:?}", f.alpha, f.beta)),
        meta.transform.map_or("none".to_string(), |t| t.to_string()),
        match meta.scale_mode {
            ScaleMode::AbsMax => "absmax",
            ScaleMode::MseOptimized => "mse",
        }
        .to_string(),
        meta.permutation.is_some().to_string(),
        scale_code_bytes(&spec.scale).to_string(),
    ];
    KEYS.iter()
        .zip(values)
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect()
}

/// Serializes a quantized tensor. `decode_quant(encode_quant(t)) == t` bit-exactly.
pub fn encode_quant(t: &MfpTensor) -> Vec<u8> {
    let head = header(t);
    let width = scale_code_bytes(&t.spec().scale);
    let mut out = Vec::new();
    out.extend_from_slice(QUANT_MAGIC);
    out.push(QUANT_VERSION);
    out.extend_from_slice(&(head.len() as u32).to_le_bytes());
    out.extend_from_slice(head.as_bytes());
    out.extend_from_slice(t.packed_codes());
    for &c in t.scale_codes() {
        out.extend_from_slice(&c.to_le_bytes()[..width]);
    }
    if let Some(p) = &t.meta().permutation {
        for &i in p {
            out.extend_from_slice(&(i as u64).to_le_bytes());
        }
    }
    out
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corrupt(msg.into())
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| corrupt(format!("bad value `{v}` for header key `{key}`")))
}

struct Header<'a> {
    values: Vec<&'a str>,
}

impl<'a> Header<'a> {
    fn parse(text: &'a str) -> Result<Self> {
        let mut values = Vec::with_capacity(KEYS.len());
        let mut lines = text.lines();
        for key in KEYS {
            let line = lines.next().ok_or_else(|| corrupt(format!("header is missing `{key}`")))?;
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| corrupt(format!("malformed header line `{line}`")))?;
            if k != key {
                return Err(corrupt(format!("expected header key `{key}`, found `{k}`")));
            }
            values.push(v);
        }
        if lines.any(|l| !l.is_empty()) {
            return Err(corrupt("unexpected header lines"));
        }
        Ok(Self { values })
    }

    fn get(&self, key: &str) -> &'a str {
        self.values[KEYS.iter().position(|k| *k == key).expect("known key")]
    }

    fn typed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        parse(key, self.get(key))
    }
}

pub fn decode_quant(bytes: &[u8]) -> Result<MfpTensor> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic")? != QUANT_MAGIC {
        return Err(corrupt("not an MFPQ quantized file"));
    }
    let version = r.u8("version")?;
    if version != QUANT_VERSION {
        return Err(corrupt(format!("unsupported quantized file version {version}")));
    }
    let len = r.u32("header length")? as usize;
    let text = std::str::from_utf8(r.take(len, "header")?).map_err(|_| corrupt("header is not UTF-8"))?;
    let h = Header::parse(text)?;

    let preset = h.get("format");
    if !matches!(preset, "mxfp4" | "nvfp4" | "custom") {
        return Err(corrupt(format!("unknown format `{preset}`")));
    }
    if h.get("element") != "e2m1" {
        return Err(corrupt(format!("unsupported element format `{}`", h.get("element"))));
    }
    let spec = FormatSpec {
        group_size: h.typed("group_size")?,
        element: ElementFormat::E2M1,
        scale: h.typed::<ScaleFormat>("scale")?,
        global_scale: h.typed("global_scale")?,
    };
    spec.validate().map_err(|e| corrupt(e.to_string()))?;
    let rows: usize = h.typed("rows")?;
    let cols: usize = h.typed("cols")?;
    let scale_fit = match h.get("scale_fit") {
        "none" => None,
        v => {
            let (a, b) = v.split_once(':').ok_or_else(|| corrupt(format!("bad scale_fit `{v}`")))?;
            Some(ScaleFit::new(parse("scale_fit", a)?, parse("scale_fit", b)?).map_err(|e| corrupt(e.to_string()))?)
        }
    };
    let transform = match h.get("transform") {
        "none" => None,
        v => Some(parse::<TransformSpec>("transform", v)?),
    };
    let scale_mode = match h.get("policy") {
        "absmax" => ScaleMode::AbsMax,
        "mse" => ScaleMode::MseOptimized,
        v => return Err(corrupt(format!("unknown policy `{v}`"))),
    };
    let has_perm: bool = h.typed("permutation")?;
    let width: usize = h.typed("scale_code_bytes")?;
    if width != scale_code_bytes(&spec.scale) {
        return Err(corrupt(format!("scale_code_bytes {width} does not match scale format {}", spec.scale)));
    }

    let n = rows.checked_mul(cols).ok_or_else(|| corrupt("dimensions overflow"))?;
    if spec.group_size == 0 || cols % spec.group_size != 0 {
        return Err(corrupt(format!("cols {cols} not divisible by group size {}", spec.group_size)));
    }
    let codes = r.take(n.div_ceil(2), "packed codes")?.to_vec();
    let groups = n / spec.group_size;
    let scale_bytes = r.take(groups * width, "scale codes")?;
    let scale_codes = scale_bytes
        .chunks_exact(width)
        .map(|c| {
            let mut b = [0u8; 8];
            b[..width].copy_from_slice(c);
            u64::from_le_bytes(b)
        })
        .collect();
    let permutation = if has_perm {
        let mut p = Vec::with_capacity(cols);
        for _ in 0..cols {
            let i = r.u64("permutation")?;
            p.push(usize::try_from(i).map_err(|_| corrupt("permutation index overflow"))?);
        }
        Some(p)
    } else {
        None
    };
    r.finish()?;

    let meta = TensorMeta {
        tensor_scale: h.typed("tensor_scale")?,
        transform,
        four_thirds: h.typed("four_thirds")?,
        scale_fit,
        scale_mode,
        permutation,
    };
    MfpTensor::from_packed(spec, (rows, cols), codes, scale_codes, meta).map_err(|e| match e {
        Error::Corrupt(_) => e,
        other => corrupt(other.to_string()),
    })
}

pub fn write_quant(path: &Path, t: &MfpTensor) -> Result<()> {
    write_atomic(path, &encode_quant(t))
}

pub fn read_quant(path: &Path) -> Result<MfpTensor> {
    decode_quant(&std::fs::read(path)?)
}
