//! Deployable artifact: binary container, chip loading and host-side I/O.
//!
//! Layout (little endian): `"TBAI"`, `u16` version, `u8` rows, `u8` cols,
//! `u32` section count, then one 20-byte entry per section (`[u8; 4]` tag,
//! `u64` offset, `u64` length) and the section bodies.
//!
//! Sections: `META` (JSON), `CONF` (configuration packets, 8 bytes each),
//! `IMGS` (region images: `u16` cc, `u8` kind, `u8` nc, `u32` word count,
//! then the words).

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::codegen::{CoreRecord, Image, ImageKind, InputRoute, OutputRecord};
use super::partition::Role;
use super::CompileReport;
use crate::chip::{ChipConfig, ChipError, ChipState, RunOutput};
use crate::neuron_core::NeuronType;
use crate::noc::{Coord, Grid, Packet};
use crate::Word16;

pub const MAGIC: &[u8; 4] = b"TBAI";
pub const VERSION: u16 = 1;
const HEADER: usize = 12;
const ENTRY: usize = 20;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("not an artifact (bad magic)")]
    BadMagic,
    #[error("unsupported artifact version {0}")]
    Version(u16),
    #[error("artifact truncated")]
    Truncated,
    #[error("missing section {0}")]
    MissingSection(&'static str),
    #[error("bad metadata: {0}")]
    Meta(String),
    #[error("bad packet in configuration stream: {0}")]
    Packet(String),
    #[error("bad image record: {0}")]
    Image(String),
    #[error("input index {0} out of range ({1} inputs)")]
    InputIndex(u32, usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Chip(#[from] ChipError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopInfo {
    pub name: String,
    pub shape: [u32; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub name: String,
    pub rows: u8,
    pub cols: u8,
    pub input_shape: [u32; 3],
    pub timesteps: u32,
    pub pops: Vec<PopInfo>,
    /// Logical CC -> mesh coordinate.
    pub placement: Vec<Coord>,
    pub inputs: Vec<InputRoute>,
    pub outputs: Vec<OutputRecord>,
    pub cores: Vec<CoreRecord>,
    pub cycle_budget: u64,
    pub report: CompileReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub meta: Meta,
    pub config: Vec<Packet>,
    pub images: Vec<Image>,
}

/// One decoded host output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutputSpike {
    /// Index into `meta.outputs`.
    pub output: usize,
    pub neuron: u32,
    pub value: Option<Word16>,
}

/// Chip run with outputs decoded per timestep.
#[derive(Debug, Clone)]
pub struct ChipRun {
    pub raw: RunOutput,
    /// `spikes[t][output]`: firing neurons, ascending.
    pub spikes: Vec<Vec<Vec<u32>>>,
    /// `values[t][output]`: integrator readouts `(neuron, value)`.
    pub values: Vec<Vec<Vec<(u32, Word16)>>>,
}

struct Reader<'a> {
    b: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ArtifactError> {
        let s = self
            .b
            .get(self.at..self.at + n)
            .ok_or(ArtifactError::Truncated)?;
        self.at += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, ArtifactError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, ArtifactError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, ArtifactError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, ArtifactError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl Artifact {
    pub fn grid(&self) -> Grid {
        Grid::new(self.meta.rows, self.meta.cols)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        let conf: Vec<u8> = self.config.iter().flat_map(|p| p.to_le_bytes()).collect();
        let mut imgs = Vec::new();
        for i in &self.images {
            imgs.extend_from_slice(&i.cc.to_le_bytes());
            imgs.push(i.kind.code());
            imgs.push(i.nc);
            imgs.extend_from_slice(&(i.words.len() as u32).to_le_bytes());
            for w in &i.words {
                imgs.extend_from_slice(&w.to_le_bytes());
            }
        }
        let sections: [(&[u8; 4], Vec<u8>); 3] =
            [(b"META", meta), (b"CONF", conf), (b"IMGS", imgs)];
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.meta.rows);
        out.push(self.meta.cols);
        out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
        let mut off = (HEADER + ENTRY * sections.len()) as u64;
        for (tag, body) in &sections {
            out.extend_from_slice(*tag);
            out.extend_from_slice(&off.to_le_bytes());
            out.extend_from_slice(&(body.len() as u64).to_le_bytes());
            off += body.len() as u64;
        }
        for (_, body) in sections {
            out.extend_from_slice(&body);
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, ArtifactError> {
        let mut r = Reader { b, at: 0 };
        if r.take(4)? != MAGIC {
            return Err(ArtifactError::BadMagic);
        }
        let v = r.u16()?;
        if v != VERSION {
            return Err(ArtifactError::Version(v));
        }
        let (rows, cols) = (r.u8()?, r.u8()?);
        let n = r.u32()? as usize;
        let mut secs = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            let tag: [u8; 4] = r.take(4)?.try_into().unwrap();
            let (off, len) = (r.u64()? as usize, r.u64()? as usize);
            let body = off
                .checked_add(len)
                .and_then(|end| b.get(off..end))
                .ok_or(ArtifactError::Truncated)?;
            secs.push((tag, body));
        }
        let find = |t: &'static str| {
            secs.iter()
                .find(|s| s.0 == t.as_bytes())
                .map(|s| s.1)
                .ok_or(ArtifactError::MissingSection(t))
        };
        let meta: Meta = serde_json::from_slice(find("META")?)
            .map_err(|e| ArtifactError::Meta(e.to_string()))?;
        if (meta.rows, meta.cols) != (rows, cols) {
            return Err(ArtifactError::Meta(
                "header grid differs from metadata".into(),
            ));
        }
        let conf = find("CONF")?;
        if conf.len() % 8 != 0 {
            return Err(ArtifactError::Truncated);
        }
        let config = conf
            .chunks_exact(8)
            .map(|c| {
                Packet::from_le_bytes(c.try_into().unwrap())
                    .map_err(|e| ArtifactError::Packet(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut images = Vec::new();
        let mut r = Reader {
            b: find("IMGS")?,
            at: 0,
        };
        while r.at < r.b.len() {
            let cc = r.u16()?;
            let kind = r.u8()?;
            let kind = ImageKind::from_code(kind)
                .ok_or_else(|| ArtifactError::Image(format!("kind {kind}")))?;
            let nc = r.u8()?;
            let n = r.u32()? as usize;
            let words = r
                .take(n.checked_mul(2).ok_or(ArtifactError::Truncated)?)?
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]))
                .collect();
            images.push(Image {
                cc,
                kind,
                nc,
                words,
            });
        }
        Ok(Artifact {
            meta,
            config,
            images,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), ArtifactError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, ArtifactError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Chip configuration matching the artifact's grid.
    pub fn chip_config(&self) -> ChipConfig {
        ChipConfig {
            grid: self.grid(),
            ..Default::default()
        }
    }

    /// Streams the configuration into `chip` and leaves INIT.
    pub fn load(&self, chip: &mut ChipState) -> Result<(), ArtifactError> {
        chip.check_shape(self.meta.rows, self.meta.cols)?;
        chip.load_config(&self.config)?;
        chip.start()?;
        Ok(())
    }

    /// Host packets for the inputs spiking in one timestep.
    pub fn input_packets(&self, spikes: &[u32]) -> Result<Vec<Packet>, ArtifactError> {
        let mut out = Vec::new();
        for &i in spikes {
            let r = self
                .meta
                .inputs
                .get(i as usize)
                .ok_or(ArtifactError::InputIndex(i, self.meta.inputs.len()))?;
            for ie in &r.routes {
                out.push(Packet::spike(
                    ie.mode.packet_type(),
                    ie.area,
                    ie.tag,
                    ie.index,
                    r.payload,
                ));
            }
        }
        Ok(out)
    }

    pub fn encode_inputs(&self, steps: &[Vec<u32>]) -> Result<Vec<Vec<Packet>>, ArtifactError> {
        steps.iter().map(|s| self.input_packets(s)).collect()
    }

    pub fn decode_outputs(&self, packets: &[Packet]) -> Vec<OutputSpike> {
        packets
            .iter()
            .filter(|p| p.ptype.is_spike())
            .filter_map(|p| {
                let idx = p.index as u32;
                let (o, rec) = self
                    .meta
                    .outputs
                    .iter()
                    .enumerate()
                    .find(|(_, r)| (r.offset..r.offset + r.size).contains(&idx))?;
                Some(OutputSpike {
                    output: o,
                    neuron: idx - rec.offset,
                    value: rec.value.then_some(Word16(p.payload)),
                })
            })
            .collect()
    }

    /// Chip neuron `(grid index, nc, local)` -> `(pop, neuron, role)`.
    pub fn neuron_map(&self) -> HashMap<(u32, u8, u8), (u32, u32, Role)> {
        let g = self.grid();
        let mut m = HashMap::new();
        for c in &self.meta.cores {
            let at = g.index(c.coord) as u32;
            for (local, &(p, n, r)) in c.slots.iter().enumerate() {
                m.insert((at, c.nc, local as u8), (p, n, r));
            }
        }
        m
    }

    /// Fills per-layer spike counts and rates from a traced run.
    pub fn layer_stats(&self, raw: &mut RunOutput) {
        let ps = self.pop_spikes(raw);
        let steps = raw.outputs.len().max(1) as f64;
        for (p, info) in self.meta.pops.iter().enumerate() {
            let n: u64 = ps.iter().map(|t| t[p].len() as u64).sum();
            let size: u32 = info.shape.iter().product();
            raw.stats.layer_spikes.insert(info.name.clone(), n);
            raw.stats
                .layer_rates
                .insert(info.name.clone(), n as f64 / (size.max(1) as f64 * steps));
        }
    }

    /// Soma spikes of every population, `[t][pop]`, from a traced run.
    pub fn pop_spikes(&self, raw: &RunOutput) -> Vec<Vec<Vec<u32>>> {
        let map = self.neuron_map();
        let mut out = vec![vec![Vec::new(); self.meta.pops.len()]; raw.outputs.len()];
        for &(t, cc, rec) in &raw.spikes {
            if rec.event.kind == NeuronType::Value {
                continue;
            }
            if let Some(&(p, n, Role::Soma)) = map.get(&(cc, rec.nc, rec.event.neuron as u8)) {
                out[t as usize][p as usize].push(n);
            }
        }
        for step in &mut out {
            for v in step {
                v.sort_unstable();
            }
        }
        out
    }

    /// Loads a fresh chip and runs `inputs` through it.
    pub fn run(&self, config: ChipConfig, inputs: &[Vec<u32>]) -> Result<ChipRun, ArtifactError> {
        let mut chip = ChipState::new(config)?;
        self.load(&mut chip)?;
        self.run_on(&mut chip, inputs)
    }

    pub fn run_on(
        &self,
        chip: &mut ChipState,
        inputs: &[Vec<u32>],
    ) -> Result<ChipRun, ArtifactError> {
        let packets = self.encode_inputs(inputs)?;
        let raw = chip.run_timesteps(&packets)?;
        let no = self.meta.outputs.len();
        let mut spikes = Vec::new();
        let mut values = Vec::new();
        for outs in &raw.outputs {
            let mut s = vec![Vec::new(); no];
            let mut v = vec![Vec::new(); no];
            for o in self.decode_outputs(outs) {
                match o.value {
                    Some(x) => v[o.output].push((o.neuron, x)),
                    None => s[o.output].push(o.neuron),
                }
            }
            s.iter_mut().for_each(|x| x.sort_unstable());
            v.iter_mut().for_each(|x| x.sort_unstable_by_key(|e| e.0));
            spikes.push(s);
            values.push(v);
        }
        Ok(ChipRun {
            raw,
            spikes,
            values,
        })
    }
}
