//! Single-file checkpoints: one JSON header line, then a little-endian `f64`
//! payload.
//!
//! Plain checkpoints store one parameter vector. Up-scaled checkpoints store,
//! for each MoE layer in layout order, the base segment, the `T` task vectors
//! and the router parameters, followed by the statically merged segments.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::merge::TaskVectorDictionary;
use crate::moe::{PweMoeLayer, Router, UpscaledModel};
use crate::nn::ParamVector;
use crate::tasks::Realization;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointKind {
    Plain,
    Upscaled,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    /// Hex digest of the configuration that produced the checkpoint.
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CheckpointBody {
    Plain(ParamVector),
    Upscaled(UpscaledModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub realization: Realization,
    pub body: CheckpointBody,
    pub provenance: Provenance,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: CheckpointKind,
    realization: Realization,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_tasks: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    moe_layers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    payload_len: usize,
    provenance: Provenance,
}

impl Checkpoint {
    pub fn plain(realization: Realization, params: ParamVector, provenance: Provenance) -> Result<Self> {
        realization.layout().ensure_same(params.layout())?;
        Ok(Self {
            realization,
            body: CheckpointBody::Plain(params),
            provenance,
        })
    }

    pub fn upscaled(model: UpscaledModel, provenance: Provenance) -> Self {
        Self {
            realization: model.realization().clone(),
            body: CheckpointBody::Upscaled(model),
            provenance,
        }
    }

    pub fn kind(&self) -> CheckpointKind {
        match self.body {
            CheckpointBody::Plain(_) => CheckpointKind::Plain,
            CheckpointBody::Upscaled(_) => CheckpointKind::Upscaled,
        }
    }

    pub fn into_plain(self) -> Result<ParamVector> {
        match self.body {
            CheckpointBody::Plain(p) => Ok(p),
            CheckpointBody::Upscaled(_) => Err(Error::Format("expected a plain checkpoint, found an up-scaled one".into())),
        }
    }

    pub fn into_upscaled(self) -> Result<UpscaledModel> {
        match self.body {
            CheckpointBody::Upscaled(m) => Ok(m),
            CheckpointBody::Plain(_) => Err(Error::Format("expected an up-scaled checkpoint, found a plain one".into())),
        }
    }

    /// Flat payload in storage order.
    pub fn payload(&self) -> Vec<f64> {
        match &self.body {
            CheckpointBody::Plain(p) => p.values().to_vec(),
            CheckpointBody::Upscaled(m) => {
                let mut out = Vec::new();
                for layer in m.moe_layers() {
                    out.extend_from_slice(layer.dictionary().base().values());
                    for c in layer.dictionary().columns() {
                        out.extend_from_slice(c.values());
                    }
                    out.extend_from_slice(layer.router().params().values());
                }
                out.extend_from_slice(m.static_params().values());
                out
            }
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let payload = self.payload();
        let header = match &self.body {
            CheckpointBody::Plain(_) => Header {
                format_version: FORMAT_VERSION,
                kind: CheckpointKind::Plain,
                realization: self.realization.clone(),
                num_tasks: None,
                moe_layers: Vec::new(),
                lambda: None,
                payload_len: payload.len(),
                provenance: self.provenance.clone(),
            },
            CheckpointBody::Upscaled(m) => Header {
                format_version: FORMAT_VERSION,
                kind: CheckpointKind::Upscaled,
                realization: self.realization.clone(),
                num_tasks: Some(m.num_tasks()),
                moe_layers: m.moe_layers().iter().map(|l| l.name().to_string()).collect(),
                lambda: Some(m.lambda()),
                payload_len: payload.len(),
                provenance: self.provenance.clone(),
            },
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        out.reserve(payload.len() * 8);
        for v in payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let split = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("missing header line".into()))?;
        let value: serde_json::Value = serde_json::from_slice(&bytes[..split])
            .map_err(|e| Error::Format(format!("unreadable header: {e}")))?;
        let version = value.get("format_version").and_then(serde_json::Value::as_u64);
        if version != Some(u64::from(FORMAT_VERSION)) {
            return Err(Error::Format(format!(
                "unsupported format version {}, expected {FORMAT_VERSION}",
                version.map_or_else(|| "(missing)".to_string(), |v| v.to_string())
            )));
        }
        let header: Header = serde_json::from_value(value).map_err(|e| Error::Format(format!("bad header: {e}")))?;
        let raw = &bytes[split + 1..];
        if raw.len() != header.payload_len * 8 {
            return Err(Error::Format(format!(
                "payload holds {} bytes, header announces {} values",
                raw.len(),
                header.payload_len
            )));
        }
        let payload: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let layout = header.realization.layout();
        let body = match header.kind {
            CheckpointKind::Plain => CheckpointBody::Plain(ParamVector::new(layout, payload)?),
            CheckpointKind::Upscaled => {
                let t = header
                    .num_tasks
                    .ok_or_else(|| Error::Format("up-scaled checkpoint without a task count".into()))?;
                let lambda = header
                    .lambda
                    .ok_or_else(|| Error::Format("up-scaled checkpoint without λ".into()))?;
                let mut cursor = Reader { data: &payload, pos: 0 };
                let mut layers = Vec::with_capacity(header.moe_layers.len());
                for name in &header.moe_layers {
                    let seg_layout = layout.subset(&[name.as_str()])?;
                    let n = seg_layout.total_len();
                    let base = ParamVector::new(seg_layout.clone(), cursor.take(n)?)?;
                    let columns = (0..t)
                        .map(|_| ParamVector::new(seg_layout.clone(), cursor.take(n)?))
                        .collect::<Result<Vec<_>>>()?;
                    let router_len = 4 * t * t + 3 * t;
                    let router_params = ParamVector::new(Router::layout(t), cursor.take(router_len)?)?;
                    let router = Router::from_params(t, &router_params)?;
                    let dict = TaskVectorDictionary::from_parts(base, columns)?;
                    layers.push(PweMoeLayer::new(name.clone(), dict, router)?);
                }
                let rest: Vec<&str> = layout
                    .names()
                    .filter(|n| !header.moe_layers.iter().any(|m| m == n))
                    .collect();
                let static_layout = layout.subset(&rest)?;
                let n = static_layout.total_len();
                let static_params = ParamVector::new(static_layout, cursor.take(n)?)?;
                if cursor.pos != payload.len() {
                    return Err(Error::Format("trailing values after the last section".into()));
                }
                CheckpointBody::Upscaled(UpscaledModel::from_parts(
                    header.realization.clone(),
                    layers,
                    static_params,
                    lambda,
                )?)
            }
        };
        Ok(Self {
            realization: header.realization,
            body,
            provenance: header.provenance,
        })
    }

    /// Writes through a temporary sibling and renames, so concurrent readers
    /// never see a partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, path)
        };
        write().map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    data: &'a [f64],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<Vec<f64>> {
        let end = self.pos + n;
        if end > self.data.len() {
            return Err(Error::Format("payload ends inside a section".into()));
        }
        let out = self.data[self.pos..end].to_vec();
        self.pos = end;
        Ok(out)
    }
}
