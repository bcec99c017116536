//! Hardware-agnostic network description.
//!
//! A [`NetworkIR`] is an ordered list of layers fed by one spiking input
//! tensor. It is stored as JSON plus a binary weight sidecar (see
//! [`save`]/[`load`]); [`lower::validate_and_lower`] turns it into a flat
//! graph of populations and connections.

pub mod functional;
pub mod learning;
pub mod lower;
pub mod presets;

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Word16;

pub use functional::{simulate, FunctionalTrace};
pub use learning::{accum_fc_update, stdp_update, AccumFc, StdpParams};
pub use lower::{
    validate_and_lower, ConnKind, Connection, LoweredNet, ModelKind, NeuronParams, Population,
    Source,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IrError {
    #[error("layer {layer}: {msg}")]
    Shape { layer: String, msg: String },
    #[error("layer {layer}: unsupported combination: {msg}")]
    Unsupported { layer: String, msg: String },
    #[error("layer {layer}: {what} is not representable in binary16")]
    NotFp16 { layer: String, what: String },
    #[error("unknown layer {0}")]
    UnknownLayer(String),
    #[error("duplicate layer name {0}")]
    Duplicate(String),
    #[error("cycle through layer {0} (only declared recurrent edges may loop)")]
    Cycle(String),
    #[error("skip {from} -> {to}: {msg}")]
    Skip {
        from: String,
        to: String,
        msg: String,
    },
    #[error("i/o: {0}")]
    Io(String),
    #[error("format: {0}")]
    Format(String),
}

/// Dense FP16 array. `data` may be empty when the values live in a
/// sidecar; `values` is a convenience for hand-written files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub data: Vec<Word16>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sidecar: Option<u32>,
}

impl Tensor {
    pub fn new(shape: Vec<u32>, data: Vec<Word16>) -> Self {
        Tensor {
            shape,
            data,
            values: Vec::new(),
            sidecar: None,
        }
    }

    pub fn from_f32(shape: Vec<u32>, v: &[f32]) -> Self {
        Tensor::new(shape, v.iter().map(|&x| Word16::from_f32(x)).collect())
    }

    pub fn len(&self) -> usize {
        self.shape.iter().map(|&d| d as usize).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values as FP16 words, converting `values` when needed.
    pub fn words(&self) -> Vec<Word16> {
        if self.data.is_empty() && !self.values.is_empty() {
            self.values.iter().map(|&x| Word16::from_f32(x)).collect()
        } else {
            self.data.clone()
        }
    }

    pub fn f64s(&self) -> Vec<f64> {
        if self.data.is_empty() && !self.values.is_empty() {
            self.values.iter().map(|&x| x as f64).collect()
        } else {
            self.data.iter().map(|w| w.to_f64()).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub mean: Tensor,
    pub var: Tensor,
    #[serde(default = "default_eps")]
    pub eps: f32,
}

fn default_eps() -> f32 {
    1e-5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    /// `weights` is `[c_out, c_in, k, k]`; `pool` fuses a following
    /// non-overlapping average pool into the convolution.
    Conv {
        c_out: u32,
        k: u32,
        #[serde(default = "one")]
        stride: u32,
        #[serde(default)]
        pad: u32,
        #[serde(default)]
        pool: Option<u32>,
        weights: Tensor,
        #[serde(default)]
        bias: Option<Tensor>,
    },
    /// `weights` is `[out, in]`.
    Fc {
        out: u32,
        weights: Tensor,
        #[serde(default)]
        bias: Option<Tensor>,
    },
    /// Non-overlapping window; every input adds `weight`.
    Pool { window: u32, weight: f32 },
    /// Edge list `(src, dst)` with one weight per edge.
    Sparse {
        out: u32,
        edges: Vec<(u32, u32)>,
        weights: Tensor,
    },
    /// Dense feed-forward input plus recurrent edges inside the layer,
    /// delivered one timestep later.
    Recurrent {
        out: u32,
        weights: Tensor,
        edges: Vec<(u32, u32)>,
        rec_weights: Tensor,
    },
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum NeuronModel {
    Lif {
        tau: f32,
        v_th: f32,
    },
    /// Adaptive threshold `v_th + beta*a`, `a <- rho*a + s_prev`.
    Alif {
        tau: f32,
        v_th: f32,
        beta: f32,
        rho: f32,
    },
    /// One leaky dendritic branch per entry of `branch_tau`, summed into a
    /// LIF soma.
    DhLif {
        tau: f32,
        v_th: f32,
        branch_tau: Vec<f32>,
    },
    /// Leaky integrator read out as a value every timestep.
    Integrator {
        tau: f32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    pub neuron: NeuronModel,
    /// Source layer; the previous layer (or the input) when absent.
    #[serde(default)]
    pub input: Option<String>,
    /// Per-neuron thresholds overriding the model's `v_th`.
    #[serde(default)]
    pub thresholds: Option<Vec<f32>>,
    #[serde(default)]
    pub bn: Option<BatchNorm>,
    /// Report this layer's spikes (or values) to the host.
    #[serde(default)]
    pub output: bool,
}

/// Identity-shaped shortcut: neuron `i` of `from` feeds neuron `i` of `to`
/// with `weight`, arriving in step with the main path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skip {
    pub from: String,
    pub to: String,
    #[serde(default = "unit")]
    pub weight: f32,
}

fn unit() -> f32 {
    1.0
}

/// Name by which layers refer to the network input.
pub const INPUT: &str = "input";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkIR {
    pub name: String,
    /// `[channels, height, width]` of the spiking input.
    pub input: [u32; 3],
    pub timesteps: u32,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub skips: Vec<Skip>,
}

impl NetworkIR {
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        for l in &mut self.layers {
            match &mut l.kind {
                LayerKind::Conv { weights, bias, .. } | LayerKind::Fc { weights, bias, .. } => {
                    v.push(weights);
                    if let Some(b) = bias {
                        v.push(b);
                    }
                }
                LayerKind::Pool { .. } => {}
                LayerKind::Sparse { weights, .. } => v.push(weights),
                LayerKind::Recurrent {
                    weights,
                    rec_weights,
                    ..
                } => {
                    v.push(weights);
                    v.push(rec_weights);
                }
            }
            if let Some(bn) = &mut l.bn {
                v.extend([&mut bn.gamma, &mut bn.beta, &mut bn.mean, &mut bn.var]);
            }
        }
        v
    }
}

const SIDECAR_MAGIC: &[u8; 4] = b"F16W";

/// Sidecar layout: magic, tensor count, then per tensor `ndim`, dims and
/// the little-endian binary16 values.
pub fn write_sidecar(tensors: &[Tensor], w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(SIDECAR_MAGIC)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for d in &t.shape {
            w.write_all(&d.to_le_bytes())?;
        }
        for x in t.words() {
            w.write_all(&x.0.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_sidecar(r: &mut impl Read) -> Result<Vec<Tensor>, IrError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)
        .map_err(|e| IrError::Io(e.to_string()))?;
    let mut pos = 0usize;
    let u32_at = |pos: &mut usize| -> Result<u32, IrError> {
        let b = buf
            .get(*pos..*pos + 4)
            .ok_or_else(|| IrError::Format("sidecar truncated".into()))?;
        *pos += 4;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    };
    if buf.get(0..4) != Some(&SIDECAR_MAGIC[..]) {
        return Err(IrError::Format("bad sidecar magic".into()));
    }
    pos += 4;
    let n = u32_at(&mut pos)?;
    let mut out = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let nd = u32_at(&mut pos)?;
        let shape = (0..nd)
            .map(|_| u32_at(&mut pos))
            .collect::<Result<Vec<_>, _>>()?;
        let len: usize = shape.iter().map(|&d| d as usize).product();
        let bytes = buf
            .get(pos..pos + 2 * len)
            .ok_or_else(|| IrError::Format("sidecar truncated".into()))?;
        pos += 2 * len;
        let data = bytes
            .chunks_exact(2)
            .map(|c| Word16(u16::from_le_bytes([c[0], c[1]])))
            .collect();
        out.push(Tensor::new(shape, data));
    }
    Ok(out)
}

/// Sidecar path used next to an IR file: `net.json` -> `net.f16`.
pub fn sidecar_path(json: &Path) -> std::path::PathBuf {
    json.with_extension("f16")
}

/// Writes the IR as JSON with every tensor moved to the sidecar.
pub fn save(ir: &NetworkIR, json: &Path) -> Result<(), IrError> {
    let mut ir = ir.clone();
    let mut side = Vec::new();
    for (i, t) in ir.tensors_mut().into_iter().enumerate() {
        side.push(Tensor::new(t.shape.clone(), t.words()));
        t.data.clear();
        t.values.clear();
        t.sidecar = Some(i as u32);
    }
    let io = |e: std::io::Error| IrError::Io(e.to_string());
    let text = serde_json::to_string_pretty(&ir).map_err(|e| IrError::Format(e.to_string()))?;
    std::fs::write(json, text).map_err(io)?;
    let mut f = std::fs::File::create(sidecar_path(json)).map_err(io)?;
    write_sidecar(&side, &mut f).map_err(io)
}

pub fn load(json: &Path) -> Result<NetworkIR, IrError> {
    let text = std::fs::read_to_string(json).map_err(|e| IrError::Io(e.to_string()))?;
    let mut ir: NetworkIR =
        serde_json::from_str(&text).map_err(|e| IrError::Format(e.to_string()))?;
    let needs_side = ir.tensors_mut().iter().any(|t| t.sidecar.is_some());
    if needs_side {
        let mut f =
            std::fs::File::open(sidecar_path(json)).map_err(|e| IrError::Io(e.to_string()))?;
        let side = read_sidecar(&mut f)?;
        for t in ir.tensors_mut() {
            if let Some(i) = t.sidecar.take() {
                let s = side
                    .get(i as usize)
                    .ok_or_else(|| IrError::Format(format!("sidecar tensor {i} missing")))?;
                if s.shape != t.shape {
                    return Err(IrError::Format(format!("sidecar tensor {i} shape differs")));
                }
                t.data = s.data.clone();
            }
        }
    }
    Ok(ir)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny() -> NetworkIR {
        NetworkIR {
            name: "tiny".into(),
            input: [1, 1, 4],
            timesteps: 4,
            layers: vec![LayerSpec {
                name: "fc".into(),
                kind: LayerKind::Fc {
                    out: 2,
                    weights: Tensor::from_f32(
                        vec![2, 4],
                        &[0.5, 0.25, -1.0, 2.0, 1.0, 1.0, 1.0, 1.0],
                    ),
                    bias: None,
                },
                neuron: NeuronModel::Lif {
                    tau: 0.5,
                    v_th: 1.0,
                },
                input: None,
                thresholds: None,
                bn: None,
                output: true,
            }],
            skips: vec![],
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = std::env::temp_dir().join(format!("ir-rt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("net.json");
        let ir = tiny();
        save(&ir, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"sidecar\": 0"));
        assert_eq!(load(&p).unwrap(), ir);
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn inline_values() {
        let t: Tensor = serde_json::from_str(r#"{"shape":[2],"values":[0.5,3.0]}"#).unwrap();
        assert_eq!(
            t.words(),
            vec![Word16::from_f32(0.5), Word16::from_f32(3.0)]
        );
    }
}
