//! Binary containers.
//!
//! A tensor container is
//!
//! ```text
//! "HTSR1" | dtype: u8 (1 = u8, 2 = f32) | ndim: u32 | dims: ndim x u32 | payload
//! ```
//!
//! with every integer and float little-endian. A model file is
//!
//! ```text
//! "HTMF" | version: u32 | header_len: u32 | header: JSON | tensor containers
//! ```
//!
//! where the JSON header carries the architecture, quantization schemes, the
//! reference clean accuracy and the order of the weight/bias tensors that
//! follow. Datasets are a `[N, C, H, W]` u8 image container (pixel / 255)
//! paired with an `[N]` u8 label container.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Dataset, LayerParams, NetworkDef, Params, QuantNet, QuantSchemes, Tensor};

pub const TENSOR_MAGIC: &[u8; 5] = b"HTSR1";
pub const MODEL_MAGIC: &[u8; 4] = b"HTMF";
pub const MODEL_VERSION: u32 = 1;

const DTYPE_U8: u8 = 1;
const DTYPE_F32: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    U8 { shape: Vec<usize>, data: Vec<u8> },
    F32 { shape: Vec<usize>, data: Vec<f32> },
}

impl TensorData {
    pub fn shape(&self) -> &[usize] {
        match self {
            TensorData::U8 { shape, .. } | TensorData::F32 { shape, .. } => shape,
        }
    }
}

pub fn encode_tensor(t: &TensorData, out: &mut Vec<u8>) {
    out.extend_from_slice(TENSOR_MAGIC);
    let shape = t.shape();
    out.push(match t {
        TensorData::U8 { .. } => DTYPE_U8,
        TensorData::F32 { .. } => DTYPE_F32,
    });
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match t {
        TensorData::U8 { data, .. } => out.extend_from_slice(data),
        TensorData::F32 { data, .. } => {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

fn read_tensor(r: &mut Reader<'_>) -> Result<TensorData> {
    let start = r.pos as u64;
    if r.take(5, "tensor magic")? != TENSOR_MAGIC {
        return Err(Error::format(start, "bad tensor magic"));
    }
    let dtype = r.take(1, "dtype")?[0];
    let ndim = r.u32("ndim")? as usize;
    if ndim == 0 || ndim > 8 {
        return Err(Error::format(start + 6, format!("unsupported ndim {ndim}")));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(r.u32("dims")? as usize);
    }
    let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    let n = match n {
        Some(n) if n > 0 => n,
        _ => return Err(Error::format(start + 10, format!("invalid dims {shape:?}"))),
    };
    match dtype {
        DTYPE_U8 => Ok(TensorData::U8 {
            data: r.take(n, "payload")?.to_vec(),
            shape,
        }),
        DTYPE_F32 => {
            let bytes = r.take(
                n.checked_mul(4)
                    .ok_or_else(|| Error::format(start, "payload too large"))?,
                "payload",
            )?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(TensorData::F32 { shape, data })
        }
        other => Err(Error::format(start + 5, format!("unknown dtype code {other}"))),
    }
}

/// Decodes exactly one container; trailing bytes are an error.
pub fn decode_tensor(bytes: &[u8]) -> Result<TensorData> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if bytes.is_empty() {
        return Err(Error::format(0, "empty file"));
    }
    let t = read_tensor(&mut r)?;
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos as u64, "trailing bytes after tensor"));
    }
    Ok(t)
}

pub fn read_tensor_file(path: &Path) -> Result<TensorData> {
    let bytes = std::fs::read(path)?;
    decode_tensor(&bytes).map_err(|e| annotate(e, path))
}

fn annotate(e: Error, path: &Path) -> Error {
    match e {
        Error::Format { offset, reason } => Error::Format {
            offset,
            reason: format!("{}: {reason}", path.display()),
        },
        other => other,
    }
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// A network with its weights and quantizers.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub name: String,
    pub net: NetworkDef,
    pub params: Params,
    pub schemes: QuantSchemes,
    /// Clean accuracy (percent) of the quantized model on its shipped test split.
    pub reference_accuracy: Option<f64>,
}

impl Model {
    pub fn quantized(&self) -> Result<QuantNet> {
        QuantNet::new(&self.net, &self.params, &self.schemes)
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    layer: usize,
    role: String,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    format_version: u32,
    name: String,
    network: NetworkDef,
    schemes: QuantSchemes,
    reference_accuracy: Option<f64>,
    tensors: Vec<TensorEntry>,
}

pub fn encode_model(m: &Model) -> Result<Vec<u8>> {
    m.net.shapes()?;
    m.params.validate(&m.net)?;
    m.schemes.validate(&m.net)?;
    let mut entries = Vec::new();
    let mut payload = Vec::new();
    for (l, p) in m.params.layers.iter().enumerate() {
        for (role, t) in [("weight", &p.weight), ("bias", &p.bias)] {
            if let Some(t) = t {
                entries.push(TensorEntry {
                    layer: l,
                    role: role.to_string(),
                });
                let data = TensorData::F32 {
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|&v| v as f32).collect(),
                };
                encode_tensor(&data, &mut payload);
            }
        }
    }
    let header = ModelHeader {
        format_version: MODEL_VERSION,
        name: m.name.clone(),
        network: m.net.clone(),
        schemes: m.schemes.clone(),
        reference_accuracy: m.reference_accuracy,
        tensors: entries,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut out = Vec::with_capacity(12 + json.len() + payload.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "model magic")? != MODEL_MAGIC {
        return Err(Error::format(0, "bad model magic"));
    }
    let version = r.u32("version")?;
    if version != MODEL_VERSION {
        return Err(Error::format(4, format!("unsupported model version {version}")));
    }
    let hlen = r.u32("header length")? as usize;
    let hstart = r.pos as u64;
    let header: ModelHeader = serde_json::from_slice(r.take(hlen, "header")?)
        .map_err(|e| Error::format(hstart + e.column() as u64, format!("header: {e}")))?;
    if header.format_version != version {
        return Err(Error::format(hstart, "header version disagrees with preamble"));
    }
    let net = header.network;
    net.shapes().map_err(|e| Error::format(hstart, e.to_string()))?;
    let mut params = Params {
        layers: vec![LayerParams::default(); net.layers.len()],
    };
    for entry in &header.tensors {
        let at = r.pos as u64;
        let t = read_tensor(&mut r)?;
        let TensorData::F32 { shape, data } = t else {
            return Err(Error::format(at, "weights must be f32"));
        };
        let Some((ws, bs)) = net.layers.get(entry.layer).and_then(|l| l.param_shapes()) else {
            return Err(Error::format(at, format!("layer {} takes no parameters", entry.layer)));
        };
        let slot = &mut params.layers[entry.layer];
        let (expect, dst) = match entry.role.as_str() {
            "weight" => (ws, &mut slot.weight),
            "bias" => (bs, &mut slot.bias),
            other => return Err(Error::format(at, format!("unknown tensor role {other:?}"))),
        };
        if shape != expect {
            return Err(Error::format(
                at,
                format!("layer {} {} has shape {shape:?}, expected {expect:?}", entry.layer, entry.role),
            ));
        }
        if dst.is_some() {
            return Err(Error::format(at, "duplicate tensor"));
        }
        *dst = Some(Tensor {
            shape,
            data: data.into_iter().map(f64::from).collect(),
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos as u64, "trailing bytes after model tensors"));
    }
    let end = r.pos as u64;
    params
        .validate(&net)
        .map_err(|e| Error::format(end, e.to_string()))?;
    header
        .schemes
        .validate(&net)
        .map_err(|e| Error::format(hstart, e.to_string()))?;
    Ok(Model {
        name: header.name,
        net,
        params,
        schemes: header.schemes,
        reference_accuracy: header.reference_accuracy,
    })
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path)?;
    decode_model(&bytes).map_err(|e| annotate(e, path))
}

pub fn save_model(path: &Path, m: &Model) -> Result<()> {
    write_atomic(path, &encode_model(m)?)
}

pub fn encode_dataset(data: &Dataset) -> (Vec<u8>, Vec<u8>) {
    let mut shape = vec![data.len()];
    shape.extend_from_slice(data.sample_shape());
    let pixels: Vec<u8> = (0..data.len())
        .flat_map(|i| data.image(i).iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8))
        .collect();
    let mut img = Vec::new();
    encode_tensor(&TensorData::U8 { shape, data: pixels }, &mut img);
    let mut lab = Vec::new();
    encode_tensor(
        &TensorData::U8 {
            shape: vec![data.len()],
            data: data.labels().iter().map(|&l| l as u8).collect(),
        },
        &mut lab,
    );
    (img, lab)
}

pub fn decode_dataset(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let TensorData::U8 { shape, data } = decode_tensor(images)? else {
        return Err(Error::format(5, "images must be u8"));
    };
    if shape.len() < 2 {
        return Err(Error::format(6, format!("images need [N, ...] dims, got {shape:?}")));
    }
    let lab = decode_tensor(labels)?;
    let TensorData::U8 { shape: lshape, data: ldata } = lab else {
        return Err(Error::format(5, "labels must be u8"));
    };
    if lshape.len() != 1 {
        return Err(Error::format(6, format!("labels need [N] dims, got {lshape:?}")));
    }
    if lshape[0] != shape[0] {
        return Err(Error::format(
            10,
            format!("{} images but {} labels", shape[0], lshape[0]),
        ));
    }
    Dataset::new(
        shape[1..].to_vec(),
        data.into_iter().map(|c| f64::from(c) / 255.0).collect(),
        ldata.into_iter().map(usize::from).collect(),
    )
}

pub fn load_dataset(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = std::fs::read(images)?;
    let lab = std::fs::read(labels)?;
    decode_dataset(&img, &lab).map_err(|e| annotate(e, images))
}

pub fn save_dataset(images: &Path, labels: &Path, data: &Dataset) -> Result<()> {
    let (img, lab) = encode_dataset(data);
    write_atomic(images, &img)?;
    write_atomic(labels, &lab)
}
