//! Code generation: neuron images, routing tables and the configuration
//! packet stream.

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::partition::{channel_payload, shortcut_delay, Home, Mapping, Role};
use super::CompileError;
use crate::cc::{
    nc_ctrl_addr, nc_mem_addr, nc_prog_addr, CTRL_BASE, CTRL_NEURONS, CTRL_STRIDE, FANIN_DT_BASE,
    FANIN_IT_BASE, FANOUT_DT_BASE, FANOUT_IT_BASE,
};
use crate::ir::presets::{instantiate, BlockInit, Preset, PresetSpec, ROLE_SOMA};
use crate::ir::{ConnKind, LoweredNet, ModelKind, Source};
use crate::noc::{Area, Coord, Grid, Packet, PacketType};
use crate::topology::{
    allocate, encode_conv, encode_explicit, encode_full, encode_pool, encode_sparse, ConnPlan,
    FanOutIE, Loc, SourceRoutes, TableSet, FANOUT_DE_WORDS,
};
use crate::Word16;

/// Host-side route of one network input.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRoute {
    pub payload: u16,
    pub routes: Vec<FanOutIE>,
}

/// Host output indices `offset..offset+size` belong to population `pop`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub name: String,
    pub pop: usize,
    pub offset: u32,
    pub size: u32,
    /// Integrator readout: packets carry the membrane value.
    pub value: bool,
}

/// What one NC hosts after code generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreRecord {
    pub cc: u16,
    pub nc: u8,
    pub coord: Coord,
    pub slots: Vec<(u32, u32, Role)>,
    pub stride: u16,
    pub mem_words: usize,
    pub program_words: usize,
}

/// Raw image of one configurable region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Image {
    pub cc: u16,
    pub kind: ImageKind,
    pub nc: u8,
    pub words: Vec<u16>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImageKind {
    Memory,
    Program,
    Control,
    FaninDt,
    FaninIt,
    FanoutDt,
    FanoutIt,
}

impl ImageKind {
    pub const ALL: [ImageKind; 7] = [
        ImageKind::Memory,
        ImageKind::Program,
        ImageKind::Control,
        ImageKind::FaninDt,
        ImageKind::FaninIt,
        ImageKind::FanoutDt,
        ImageKind::FanoutIt,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

pub struct Generated {
    pub tables: TableSet,
    pub images: Vec<Image>,
    pub inputs: Vec<InputRoute>,
    pub outputs: Vec<OutputRecord>,
    pub cores: Vec<CoreRecord>,
    pub connections: usize,
}

fn u16_of(n: u32, what: &str) -> Result<u16, CompileError> {
    u16::try_from(n).map_err(|_| CompileError::Infeasible(format!("{what} {n} exceeds 16 bits")))
}

/// Memory of one NC under construction.
struct CoreMem {
    words: Vec<Word16>,
    limit: usize,
}

impl CoreMem {
    fn alloc(&mut self, data: &[Word16]) -> Result<u16, CompileError> {
        let base = self.words.len();
        if base + data.len() > self.limit {
            return Err(CompileError::Infeasible(format!(
                "core memory overflow: {} words needed, {} available",
                base + data.len(),
                self.limit
            )));
        }
        self.words.extend_from_slice(data);
        Ok(base as u16)
    }
}

/// Explicit synapses of every population: per destination the weights in
/// slot order, per connection the `(src, dst, slot)` edges.
struct Explicit {
    weights: Vec<Vec<Vec<Word16>>>,
    edges: HashMap<usize, Vec<(u32, u32, u16)>>,
}

pub(crate) fn is_explicit(c: &crate::ir::Connection) -> bool {
    !c.primary || matches!(c.kind, ConnKind::Explicit { .. })
}

fn explicit_slots(net: &LoweredNet) -> Result<Explicit, CompileError> {
    let mut weights: Vec<Vec<Vec<Word16>>> = net
        .pops
        .iter()
        .map(|p| vec![Vec::new(); p.size() as usize])
        .collect();
    let mut edges = HashMap::new();
    for (ci, c) in net.conns.iter().enumerate() {
        if !is_explicit(c) {
            continue;
        }
        let mut e = Vec::new();
        for (s, d, w) in c.kind.synapses(net.pops[c.to].size()) {
            let list = &mut weights[c.to][d as usize];
            if list.len() >= 0x7FFF {
                return Err(CompileError::Infeasible(format!(
                    "{}: too many explicit synapses on one neuron",
                    net.pops[c.to].name
                )));
            }
            e.push((s, d, list.len() as u16));
            list.push(w);
        }
        edges.insert(ci, e);
    }
    Ok(Explicit { weights, edges })
}

pub(crate) fn part_ranges(m: &Mapping, net: &LoweredNet, p: usize) -> Vec<Range<u32>> {
    m.splits[p].clone().unwrap_or_else(|| {
        let n = net.primary(p).map_or(0, |c| net.source_size(c.from));
        vec![0..n]
    })
}

/// Payload word of source neuron `i`.
pub fn payload_of(net: &LoweredNet, src: Source, i: u32) -> Result<u16, CompileError> {
    if channel_payload(net, src)? {
        let [_, h, w] = net.source_shape(src);
        Ok((i / (h * w)) as u16)
    } else {
        u16_of(i, "source index")
    }
}

pub fn generate(
    net: &LoweredNet,
    m: &Mapping,
    coords: &[Coord],
    grid: Grid,
    mem_limit: usize,
    ie_capacity: usize,
) -> Result<Generated, CompileError> {
    let homes = m.homes(net);
    let mut presets: HashMap<PresetSpec, Preset> = HashMap::new();
    for spec in &m.presets {
        if !presets.contains_key(spec) {
            presets.insert(*spec, instantiate(spec)?);
        }
    }
    let expl = explicit_slots(net)?;
    let ranges: Vec<Vec<Range<u32>>> = (0..net.pops.len())
        .map(|p| part_ranges(m, net, p))
        .collect();

    let mut images = Vec::new();
    let mut cores = Vec::new();
    for (cc, list) in m.ccs.iter().enumerate() {
        for (nc, &ci) in list.iter().enumerate() {
            let core = &m.cores[ci];
            let preset = &presets[&core.preset];
            let lay = preset.layout;
            let stride = lay.stride as usize;
            let mut mem = CoreMem {
                words: vec![Word16::ZERO; core.slots.len() * stride],
                limit: mem_limit,
            };
            // convolution filters, one region per hosted output channel
            let mut filter_base: HashMap<u32, u16> = HashMap::new();
            if let Some(cb) = &core.conv {
                let p = core.slots[0].pop as usize;
                if let Some(ConnKind::Conv { geom, w }) = net.primary(p).map(|c| &c.kind) {
                    let per = (geom.c_in * geom.k * geom.k) as usize;
                    for co in cb.chans.clone() {
                        let b = mem.alloc(&w[co as usize * per..(co as usize + 1) * per])?;
                        filter_base.insert(co, b);
                    }
                }
            }
            for (local, slot) in core.slots.iter().enumerate() {
                let p = slot.pop as usize;
                let d = slot.neuron as usize;
                let pop = &net.pops[p];
                let prm = &pop.params;
                let soma_local = homes[p][d].soma.local as u16;
                let mut init = BlockInit {
                    tau: prm.tau,
                    vth: prm.v_th(d),
                    role: ROLE_SOMA,
                    ..Default::default()
                };
                if let ModelKind::Alif { rho, .. } = &prm.kind {
                    init.rho = *rho;
                }
                let range_of = |r: usize| ranges[p][r].clone();
                let primary_range = match slot.role {
                    Role::Soma => {
                        init.bias = prm.bias(d);
                        if lay.xb.is_some() {
                            init.xb = Word16(mem.alloc(&expl.weights[p][d])?);
                        }
                        if m.splits[p].is_some() {
                            None
                        } else {
                            Some(range_of(0))
                        }
                    }
                    Role::Part(r) => {
                        init.role = soma_local;
                        init.tau = match &prm.kind {
                            ModelKind::DhLif { branch_tau } => branch_tau[r as usize],
                            _ => Word16::ZERO,
                        };
                        Some(range_of(r as usize))
                    }
                };
                if let (Some(range), Some(c)) = (primary_range, net.primary(p)) {
                    init.wb = match &c.kind {
                        ConnKind::Full { n_in, w } => {
                            let row = d * *n_in as usize;
                            let b = mem
                                .alloc(&w[row + range.start as usize..row + range.end as usize])?;
                            Word16(b.wrapping_sub(range.start as u16))
                        }
                        ConnKind::Sparse { n_in, edges } => {
                            let nw = (*n_in as usize).div_ceil(16);
                            let mut region = vec![Word16::ZERO; 1 + nw];
                            region[0] = Word16(u16_of(*n_in, "sparse input size")?);
                            let mut ws: Vec<(u32, Word16)> = edges
                                .iter()
                                .filter(|e| e.1 as usize == d && range.contains(&e.0))
                                .map(|e| (e.0, e.2))
                                .collect();
                            ws.sort_by_key(|x| x.0);
                            for &(s, w) in &ws {
                                region[1 + s as usize / 16].0 |= 1 << (s % 16);
                                region.push(w);
                            }
                            Word16(mem.alloc(&region)?)
                        }
                        ConnKind::Conv { geom, .. } => {
                            let co = slot.neuron / geom.out_size();
                            Word16(filter_base[&co])
                        }
                        ConnKind::Pool { w, .. } => *w,
                        ConnKind::Explicit { .. } => Word16::ZERO,
                    };
                }
                let block = lay.block(&init);
                mem.words[local * stride..(local + 1) * stride].copy_from_slice(&block);
            }
            let prog = preset.program.to_image();
            images.push(Image {
                cc: cc as u16,
                kind: ImageKind::Memory,
                nc: nc as u8,
                words: mem.words.iter().map(|w| w.0).collect(),
            });
            images.push(Image {
                cc: cc as u16,
                kind: ImageKind::Program,
                nc: nc as u8,
                words: prog.clone(),
            });
            images.push(Image {
                cc: cc as u16,
                kind: ImageKind::Control,
                nc: nc as u8,
                words: vec![core.slots.len() as u16, 0, lay.stride],
            });
            cores.push(CoreRecord {
                cc: cc as u16,
                nc: nc as u8,
                coord: coords[cc],
                slots: core
                    .slots
                    .iter()
                    .map(|s| (s.pop, s.neuron, s.role))
                    .collect(),
                stride: lay.stride,
                mem_words: mem.words.len(),
                program_words: prog.len(),
            });
        }
    }

    // routing
    let mut tables = TableSet::new(m.cc_count());
    let mut inputs: Vec<InputRoute> = (0..net.input_size())
        .map(|i| {
            Ok(InputRoute {
                payload: payload_of(net, Source::Input, i)?,
                routes: Vec::new(),
            })
        })
        .collect::<Result<_, CompileError>>()?;
    let mut routes: Vec<Vec<SourceRoutes>> = net
        .pops
        .iter()
        .enumerate()
        .map(|(p, pop)| {
            let delay = shortcut_delay(net, p)?.unwrap_or(0);
            let delay = u8::try_from(delay)
                .map_err(|_| CompileError::Unsupported(format!("{}: delay {delay}", pop.name)))?;
            Ok(vec![
                SourceRoutes {
                    delay,
                    ..Default::default()
                };
                pop.size() as usize
            ])
        })
        .collect::<Result<_, CompileError>>()?;
    let mut tag = 0u8;
    for (ci, c) in net.conns.iter().enumerate() {
        let somas: Vec<Loc> = homes[c.to].iter().map(|h| h.soma).collect();
        let n_src = net.source_size(c.from);
        let plan: ConnPlan = if is_explicit(c) {
            encode_explicit(n_src, &expl.edges[&ci], &somas)?
        } else {
            match &c.kind {
                ConnKind::Full { .. } => {
                    let parts = &ranges[c.to];
                    let dst = dst_parts(&homes[c.to], parts.len(), m.splits[c.to].is_some());
                    encode_full(parts, &dst)?
                }
                ConnKind::Sparse { edges, .. } => {
                    let parts = &ranges[c.to];
                    let dst = dst_parts(&homes[c.to], parts.len(), m.splits[c.to].is_some());
                    let e: Vec<(u32, u32)> = edges.iter().map(|e| (e.0, e.1)).collect();
                    encode_sparse(n_src, &e, parts, &dst)?
                }
                ConnKind::Conv { geom, .. } => encode_conv(geom, &somas)?,
                ConnKind::Pool { geom, .. } => encode_pool(geom, &somas)?,
                ConnKind::Explicit { .. } => unreachable!(),
            }
        };
        if plan.keys.is_empty() {
            continue;
        }
        tag = tag.checked_add(1).filter(|&t| t != 0).ok_or_else(|| {
            CompileError::Infeasible("more than 255 connections need routing tags".into())
        })?;
        let pairs = allocate(&plan, tag, coords, grid, &mut tables)?;
        for (s, ie) in pairs {
            match c.from {
                Source::Input => {
                    if c.latency != 0 {
                        return Err(CompileError::Unsupported("delayed input connection".into()));
                    }
                    inputs[s as usize].routes.push(ie);
                }
                Source::Pop(q) => {
                    let r = &mut routes[q][s as usize];
                    if c.latency >= 2 {
                        r.delayed.push(ie);
                    } else {
                        r.forward.push(ie);
                    }
                }
            }
        }
    }

    let mut outputs = Vec::new();
    let mut offset = 0u32;
    for (p, pop) in net.pops.iter().enumerate() {
        if !pop.output {
            continue;
        }
        for d in 0..pop.size() {
            let idx = offset + d;
            if idx >= 1 << 12 {
                return Err(CompileError::Infeasible(format!(
                    "output index {idx} exceeds 12 bits"
                )));
            }
            let idx = idx as u16;
            routes[p][d as usize].forward.push(FanOutIE::host(idx));
        }
        outputs.push(OutputRecord {
            name: pop.name.clone(),
            pop: p,
            offset,
            size: pop.size(),
            value: !pop.params.spiking(),
        });
        offset += pop.size();
    }
    for (p, pop) in net.pops.iter().enumerate() {
        for d in 0..pop.size() {
            let soma = homes[p][d as usize].soma;
            let axon = payload_of(net, Source::Pop(p), d)?;
            tables
                .set_fanout(
                    soma.cc as usize,
                    soma.id(),
                    axon,
                    &routes[p][d as usize],
                    ie_capacity,
                )
                .map_err(|e| CompileError::Infeasible(format!("{} neuron {d}: {e}", pop.name)))?;
        }
    }

    for cc in 0..m.cc_count() {
        let mut push = |kind: ImageKind, words: Vec<u16>| {
            if !words.is_empty() {
                images.push(Image {
                    cc: cc as u16,
                    kind,
                    nc: 0,
                    words,
                });
            }
        };
        push(
            ImageKind::FaninDt,
            tables.fanin_dt[cc]
                .iter()
                .flat_map(|d| d.to_words())
                .collect(),
        );
        push(
            ImageKind::FaninIt,
            tables.fanin_it[cc]
                .iter()
                .flat_map(|d| d.to_words())
                .collect(),
        );
        let mut fdt = Vec::new();
        for (&id, de) in &tables.fanout_dt[cc] {
            let at = id as usize * FANOUT_DE_WORDS;
            if fdt.len() < at + FANOUT_DE_WORDS {
                fdt.resize(at + FANOUT_DE_WORDS, 0);
            }
            fdt[at..at + FANOUT_DE_WORDS].copy_from_slice(&de.to_words());
        }
        push(ImageKind::FanoutDt, fdt);
        push(
            ImageKind::FanoutIt,
            tables.fanout_it[cc]
                .iter()
                .flat_map(|d| d.to_words())
                .collect(),
        );
    }
    images.sort_by_key(|i| (i.cc, i.kind.code(), i.nc));
    Ok(Generated {
        tables,
        images,
        inputs,
        outputs,
        cores,
        connections: tag as usize,
    })
}

pub(crate) fn dst_parts(homes: &[Home], parts: usize, split: bool) -> Vec<Vec<Loc>> {
    (0..parts)
        .map(|r| {
            homes
                .iter()
                .map(|h| if split { h.parts[r] } else { h.soma })
                .collect()
        })
        .collect()
}

/// Configuration packets writing every image to its CC.
pub fn config_stream(images: &[Image], coords: &[Coord]) -> Vec<Packet> {
    let mut out = Vec::new();
    for img in images {
        let dest = Area::single(coords[img.cc as usize]);
        let nc = img.nc as usize;
        let addr = |k: usize| -> u32 {
            match img.kind {
                ImageKind::Memory => nc_mem_addr(nc, k),
                ImageKind::Program => nc_prog_addr(nc, k),
                ImageKind::Control => nc_ctrl_addr(nc, [CTRL_NEURONS, CTRL_BASE, CTRL_STRIDE][k]),
                ImageKind::FaninDt => FANIN_DT_BASE + k as u32,
                ImageKind::FaninIt => FANIN_IT_BASE + k as u32,
                ImageKind::FanoutDt => FANOUT_DT_BASE + k as u32,
                ImageKind::FanoutIt => FANOUT_IT_BASE + k as u32,
            }
        };
        for (k, &w) in img.words.iter().enumerate() {
            // memory resets to zero
            if img.kind == ImageKind::Memory && w == 0 {
                continue;
            }
            out.push(Packet::mem(PacketType::MemWrite, dest, addr(k), w));
        }
    }
    out
}
