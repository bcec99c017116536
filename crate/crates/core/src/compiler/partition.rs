//! Neuron-to-core partitioning, core merging and CC packing.

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{CompileError, Target};
use crate::cc::NCS_PER_CC;
use crate::ir::presets::{PresetSpec, PrimaryPath, SomaModel, Threshold, VarLayout};
use crate::ir::{ConnKind, LoweredNet, ModelKind, Source};
use crate::neuron_core::{NeuronType, MAX_NEURONS};
use crate::topology::{expand_fanin, Loc, FANIN_LIMIT, MAX_FANIN_DES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Soma,
    Part(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub pop: u32,
    pub neuron: u32,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub chans: Range<u32>,
    pub positions: Range<u32>,
}

/// One neuron core: its program and the neurons it hosts, slot by slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreSpec {
    pub preset: PresetSpec,
    pub slots: Vec<Slot>,
    pub conv: Option<ConvBlock>,
    /// Ledger claims.
    pub mem_words: usize,
    pub fanin_keys: usize,
}

impl CoreSpec {
    pub fn pops(&self) -> BTreeSet<u32> {
        self.slots.iter().map(|s| s.pop).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mapping {
    pub cores: Vec<CoreSpec>,
    /// Logical CC -> cores, the position being the NC index.
    pub ccs: Vec<Vec<usize>>,
    /// Per population: source ranges of the dendrite parts, if split.
    pub splits: Vec<Option<Vec<Range<u32>>>>,
    pub presets: Vec<PresetSpec>,
}

/// Physical neurons of one logical neuron.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Home {
    pub soma: Loc,
    pub parts: Vec<Loc>,
}

impl Mapping {
    pub fn nc_count(&self) -> usize {
        self.cores.len()
    }

    pub fn cc_count(&self) -> usize {
        self.ccs.len()
    }

    /// Per population, per logical neuron, where it lives.
    pub fn homes(&self, net: &LoweredNet) -> Vec<Vec<Home>> {
        let mut h: Vec<Vec<Home>> = net
            .pops
            .iter()
            .enumerate()
            .map(|(p, pop)| {
                let parts = self.splits[p].as_ref().map_or(0, |s| s.len());
                vec![
                    Home {
                        soma: Loc::new(0, 0, 0),
                        parts: vec![Loc::new(0, 0, 0); parts],
                    };
                    pop.size() as usize
                ]
            })
            .collect();
        for (cc, cores) in self.ccs.iter().enumerate() {
            for (nc, &core) in cores.iter().enumerate() {
                for (local, s) in self.cores[core].slots.iter().enumerate() {
                    let loc = Loc::new(cc as u16, nc as u8, local as u8);
                    let home = &mut h[s.pop as usize][s.neuron as usize];
                    match s.role {
                        Role::Soma => home.soma = loc,
                        Role::Part(r) => home.parts[r as usize] = loc,
                    }
                }
            }
        }
        h
    }
}

/// Payload each source population puts on its packets: the channel index
/// when a convolution reads it, otherwise the flat index.
pub fn channel_payload(net: &LoweredNet, s: Source) -> Result<bool, CompileError> {
    let mut conv = false;
    let mut flat = false;
    for c in net.conns.iter().filter(|c| c.from == s) {
        match c.kind {
            ConnKind::Conv { .. } => conv = true,
            ConnKind::Full { .. } | ConnKind::Sparse { .. } => flat = true,
            _ => {}
        }
    }
    if conv && flat {
        let name = match s {
            Source::Input => "input".to_string(),
            Source::Pop(p) => net.pops[p].name.clone(),
        };
        return Err(CompileError::Unsupported(format!(
            "{name} feeds both a convolution and a dense/sparse layer"
        )));
    }
    Ok(conv)
}

/// Delay of the shortcut fan-out of population `p`, if it has one.
pub fn shortcut_delay(net: &LoweredNet, p: usize) -> Result<Option<u32>, CompileError> {
    let lats: BTreeSet<u32> = net
        .conns
        .iter()
        .filter(|c| c.from == Source::Pop(p) && c.latency >= 2)
        .map(|c| c.latency - 1)
        .collect();
    match lats.len() {
        0 => Ok(None),
        1 => Ok(lats.into_iter().next()),
        _ => Err(CompileError::Unsupported(format!(
            "{} feeds shortcuts with different delays",
            net.pops[p].name
        ))),
    }
}

fn split_of(net: &LoweredNet, p: usize) -> Result<Option<Vec<Range<u32>>>, CompileError> {
    if let Some(b) = net.branches(p) {
        return Ok(Some(b));
    }
    let Some(c) = net.primary(p) else {
        return Ok(None);
    };
    let n_in = net.source_size(c.from);
    let over = match &c.kind {
        ConnKind::Full { .. } => n_in as usize > FANIN_LIMIT,
        ConnKind::Sparse { edges, .. } => {
            let mut deg = vec![0usize; net.pops[p].size() as usize];
            for e in edges {
                deg[e.1 as usize] += 1;
            }
            deg.into_iter().max().unwrap_or(0) > FANIN_LIMIT
        }
        ConnKind::Conv { geom, .. } => {
            if geom.fan_in() as usize > FANIN_LIMIT {
                return Err(CompileError::Infeasible(format!(
                    "{}: convolution fan-in {} exceeds {FANIN_LIMIT}",
                    net.pops[p].name,
                    geom.fan_in()
                )));
            }
            false
        }
        _ => false,
    };
    if !over {
        return Ok(None);
    }
    let s = expand_fanin(n_in, FANIN_LIMIT, None)
        .map_err(|e| CompileError::Infeasible(format!("{}: {e}", net.pops[p].name)))?;
    Ok(Some(s.parts))
}

pub fn preset_for(
    net: &LoweredNet,
    p: usize,
    split: &Option<Vec<Range<u32>>>,
) -> Result<PresetSpec, CompileError> {
    let pop = &net.pops[p];
    let primary = match net.primary(p).map(|c| &c.kind) {
        None => PrimaryPath::None,
        Some(ConnKind::Full { .. }) => PrimaryPath::Dense,
        Some(ConnKind::Sparse { .. }) => PrimaryPath::Sparse,
        Some(ConnKind::Conv { geom, .. }) => PrimaryPath::Conv {
            kk: (geom.k * geom.k) as u16,
        },
        Some(ConnKind::Pool { .. }) => PrimaryPath::Pool,
        Some(ConnKind::Explicit { .. }) => PrimaryPath::None,
    };
    let explicit = net
        .conns
        .iter()
        .any(|c| c.to == p && (!c.primary || matches!(c.kind, ConnKind::Explicit { .. })));
    let soma = match &pop.params.kind {
        ModelKind::Lif | ModelKind::DhLif { .. } => SomaModel::Lif,
        ModelKind::Alif { beta, .. } => SomaModel::Alif { beta: *beta },
        ModelKind::Integrator => SomaModel::Integrator,
    };
    let threshold = match pop.params.shared_threshold() {
        Some(t) => Threshold::Imm(t),
        None => Threshold::Var,
    };
    let send = if shortcut_delay(net, p)?.is_some() {
        NeuronType::Delayed
    } else {
        NeuronType::Normal
    };
    Ok(PresetSpec {
        soma,
        primary,
        explicit,
        dendrites: split.is_some(),
        bias: pop.params.bias.is_some(),
        threshold,
        send,
    })
}

/// Per-destination explicit in-degree of population `p`.
pub fn explicit_degree(net: &LoweredNet, p: usize) -> Vec<u32> {
    let mut deg = vec![0u32; net.pops[p].size() as usize];
    for c in net.conns.iter().filter(|c| c.to == p) {
        if let ConnKind::Explicit { edges, .. } = &c.kind {
            for e in edges {
                deg[e.1 as usize] += 1;
            }
        }
    }
    deg
}

/// Weight words of one dendrite part (or of the unsplit neuron).
fn primary_words(kind: &ConnKind, n_in: u32, range: &Range<u32>, sparse_nnz: usize) -> usize {
    match kind {
        ConnKind::Full { .. } => range.len(),
        ConnKind::Sparse { .. } => 1 + (n_in as usize).div_ceil(16) + sparse_nnz,
        _ => 0,
    }
}

pub struct Ctx<'a> {
    pub net: &'a LoweredNet,
    pub mem_words: usize,
    pub target: Target,
}

/// Splits every population into cores.
pub fn partition(ctx: &Ctx) -> Result<Mapping, CompileError> {
    let net = ctx.net;
    let mut m = Mapping {
        cores: Vec::new(),
        ccs: Vec::new(),
        splits: Vec::new(),
        presets: Vec::new(),
    };
    for p in 0..net.pops.len() {
        let split = split_of(net, p)?;
        let preset = preset_for(net, p, &split)?;
        m.splits.push(split);
        m.presets.push(preset);
    }
    for p in 0..net.pops.len() {
        let cores = match net.primary(p).map(|c| &c.kind) {
            Some(ConnKind::Conv { .. }) => conv_cores(ctx, p, &m)?,
            _ => plain_cores(ctx, p, &m)?,
        };
        m.cores.extend(cores);
    }
    fill_fanin_keys(net, &mut m);
    Ok(m)
}

fn plain_cores(ctx: &Ctx, p: usize, m: &Mapping) -> Result<Vec<CoreSpec>, CompileError> {
    let net = ctx.net;
    let pop = &net.pops[p];
    let n = pop.size();
    let preset = m.presets[p];
    let stride = VarLayout::new(&preset).stride as usize;
    let split = &m.splits[p];
    let width = split.as_ref().map_or(1, |s| s.len() + 1);
    let xdeg = explicit_degree(net, p);
    let prim = net.primary(p);
    let n_in = prim.map_or(0, |c| net.source_size(c.from));
    let ranges: Vec<Range<u32>> = split.clone().unwrap_or_else(|| vec![0..n_in]);
    // sparse in-degree per (neuron, part)
    let mut nnz = vec![vec![0usize; ranges.len()]; n as usize];
    if let Some(ConnKind::Sparse { edges, .. }) = prim.map(|c| &c.kind) {
        for e in edges {
            let r = ranges.iter().position(|r| r.contains(&e.0)).unwrap_or(0);
            nnz[e.1 as usize][r] += 1;
        }
    }
    let need = |d: u32| -> usize {
        let mut w = width * stride + xdeg[d as usize] as usize;
        if let Some(c) = prim {
            for (r, range) in ranges.iter().enumerate() {
                w += primary_words(&c.kind, n_in, range, nnz[d as usize][r]);
            }
        }
        w
    };
    let cap = match ctx.target {
        Target::MinCores => MAX_NEURONS,
        Target::MaxThroughput => {
            let per = (n as usize).div_ceil(NCS_PER_CC).max(1) * width;
            per.min(MAX_NEURONS)
        }
    };
    if width > MAX_NEURONS {
        return Err(CompileError::Infeasible(format!(
            "{}: {width} parts per neuron",
            pop.name
        )));
    }
    let mut cores = Vec::new();
    let mut cur = CoreSpec {
        preset,
        slots: Vec::new(),
        conv: None,
        mem_words: 0,
        fanin_keys: 0,
    };
    for d in 0..n {
        let w = need(d);
        if w > ctx.mem_words {
            return Err(CompileError::Infeasible(format!(
                "{} neuron {d} needs {w} words, a core has {}",
                pop.name, ctx.mem_words
            )));
        }
        if !cur.slots.is_empty()
            && (cur.slots.len() + width > cap || cur.mem_words + w > ctx.mem_words)
        {
            cores.push(std::mem::replace(
                &mut cur,
                CoreSpec {
                    preset,
                    slots: Vec::new(),
                    conv: None,
                    mem_words: 0,
                    fanin_keys: 0,
                },
            ));
        }
        for r in 0..width - 1 {
            cur.slots.push(Slot {
                pop: p as u32,
                neuron: d,
                role: Role::Part(r as u8),
            });
        }
        cur.slots.push(Slot {
            pop: p as u32,
            neuron: d,
            role: Role::Soma,
        });
        cur.mem_words += w;
    }
    if !cur.slots.is_empty() {
        cores.push(cur);
    }
    Ok(cores)
}

fn conv_cores(ctx: &Ctx, p: usize, m: &Mapping) -> Result<Vec<CoreSpec>, CompileError> {
    let net = ctx.net;
    let pop = &net.pops[p];
    let Some(ConnKind::Conv { geom, .. }) = net.primary(p).map(|c| &c.kind) else {
        unreachable!()
    };
    let preset = m.presets[p];
    let stride = VarLayout::new(&preset).stride as usize;
    let xmax = explicit_degree(net, p).into_iter().max().unwrap_or(0) as usize;
    let s = geom.out_size() as usize;
    let c_out = geom.c_out as usize;
    let filt = geom.fan_in() as usize;
    let (mut n, mut per) = if s <= MAX_NEURONS {
        ((MAX_NEURONS / s).min(c_out), s)
    } else {
        (1, MAX_NEURONS)
    };
    if ctx.target == Target::MaxThroughput && n > 1 {
        n = n.div_ceil(2);
    }
    let mem = |n: usize, per: usize| n * filt + n * per * (stride + xmax);
    while mem(n, per) > ctx.mem_words {
        if n > 1 {
            n -= 1;
        } else if per > 1 {
            per = per.div_ceil(2);
        } else {
            return Err(CompileError::Infeasible(format!(
                "{}: one channel filter does not fit a core",
                pop.name
            )));
        }
    }
    let mut cores = Vec::new();
    for g0 in (0..c_out).step_by(n) {
        let chans = g0 as u32..(g0 + n).min(c_out) as u32;
        for s0 in (0..s).step_by(per) {
            let positions = s0 as u32..(s0 + per).min(s) as u32;
            let mut slots = Vec::new();
            for pos in positions.clone() {
                for c in chans.clone() {
                    slots.push(Slot {
                        pop: p as u32,
                        neuron: c * s as u32 + pos,
                        role: Role::Soma,
                    });
                }
            }
            cores.push(CoreSpec {
                preset,
                mem_words: mem(chans.len(), positions.len()),
                slots,
                conv: Some(ConvBlock {
                    chans: chans.clone(),
                    positions,
                }),
                fanin_keys: 0,
            });
        }
    }
    Ok(cores)
}

/// Fills every core's upper bound on the fan-in DEs its neurons need in
/// their CC: one per input partition of a dense connection, one per source
/// position reaching a convolution block, one per distinct source otherwise.
pub fn fill_fanin_keys(net: &LoweredNet, m: &mut Mapping) {
    let mut core_of: Vec<Vec<usize>> = net
        .pops
        .iter()
        .map(|p| vec![0; p.size() as usize])
        .collect();
    for (ci, c) in m.cores.iter().enumerate() {
        for s in &c.slots {
            core_of[s.pop as usize][s.neuron as usize] = ci;
        }
    }
    let mut keys = vec![0usize; m.cores.len()];
    for c in &net.conns {
        let hosting: BTreeSet<usize> = core_of[c.to].iter().copied().collect();
        match &c.kind {
            ConnKind::Full { .. } if c.primary => {
                let parts = m.splits[c.to].as_ref().map_or(1, |s| s.len());
                for &ci in &hosting {
                    keys[ci] += parts;
                }
            }
            ConnKind::Conv { geom, .. } if c.primary => {
                for &ci in &hosting {
                    let Some(cb) = &m.cores[ci].conv else {
                        continue;
                    };
                    keys[ci] += (0..geom.in_size())
                        .filter(|&pos| {
                            geom.reach(pos)
                                .iter()
                                .any(|&(o, _)| cb.positions.contains(&o))
                        })
                        .count();
                }
            }
            kind => {
                let mut seen: BTreeSet<(usize, u32)> = BTreeSet::new();
                for (s, d, _) in kind.synapses(net.pops[c.to].size()) {
                    seen.insert((core_of[c.to][d as usize], s));
                }
                for (ci, _) in seen {
                    keys[ci] += 1;
                }
            }
        }
    }
    for (c, k) in m.cores.iter_mut().zip(keys) {
        c.fanin_keys = k;
    }
}

/// Merges non-convolution cores running identical programs while they fit.
pub fn merge_cores(m: &mut Mapping, mem_words: usize, target: Target) {
    if target == Target::MaxThroughput {
        return;
    }
    let mut out: Vec<CoreSpec> = Vec::new();
    for c in m.cores.drain(..) {
        let host = out.iter_mut().find(|o| {
            o.conv.is_none()
                && c.conv.is_none()
                && o.preset == c.preset
                && o.slots.len() + c.slots.len() <= MAX_NEURONS
                && o.mem_words + c.mem_words <= mem_words
                && o.fanin_keys + c.fanin_keys <= MAX_FANIN_DES
        });
        match host {
            Some(o) => {
                o.slots.extend(c.slots);
                o.mem_words += c.mem_words;
                o.fanin_keys += c.fanin_keys;
            }
            None => out.push(c),
        }
    }
    m.cores = out;
}

/// Groups cores into logical CCs of up to eight, keeping each CC's fan-in
/// DE estimate under the table size. `MaxThroughput` starts a new CC for
/// every population.
pub fn pack_ccs(m: &mut Mapping, target: Target) {
    m.ccs.clear();
    let mut cur: Vec<usize> = Vec::new();
    let mut keys = 0;
    let mut last_pop: Option<u32> = None;
    for (i, c) in m.cores.iter().enumerate() {
        let first_pop = c.slots.first().map(|s| s.pop);
        let new_pop =
            target == Target::MaxThroughput && last_pop.is_some() && first_pop != last_pop;
        if !cur.is_empty()
            && (cur.len() == NCS_PER_CC || keys + c.fanin_keys > MAX_FANIN_DES || new_pop)
        {
            m.ccs.push(std::mem::take(&mut cur));
            keys = 0;
        }
        cur.push(i);
        keys += c.fanin_keys;
        last_pop = c.slots.last().map(|s| s.pop);
    }
    if !cur.is_empty() {
        m.ccs.push(cur);
    }
}
