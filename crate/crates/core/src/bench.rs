//! Routing-table storage benchmark and the shortcut-relay comparison.
//!
//! Storage is counted analytically from a mapping, one column per encoding
//! technique, each column adding one technique to the previous:
//!
//! * `baseline`: one fan-in DE per (source neuron, destination CC), one IE
//!   per synapse, one unicast fan-out IE per destination CC.
//! * `conv`: convolution keys are shared by all input channels at one
//!   position; Type3 IEs cover the output channels of one NC.
//! * `parallel`: NCs with identical channel blocks share one masked IE, and
//!   every source reaches all its CCs with a single multicast fan-out IE.
//! * `incremental`: fully connected layers use one Type2 key per input
//!   partition instead of per-synapse entries.
//!
//! Sparse, pooling and explicit connections use their native per-synapse
//! encoding in every column. No conv synapse list is ever materialized.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::Serialize;

use crate::compiler::codegen::{dst_parts, is_explicit, part_ranges};
use crate::compiler::{map_net, CompileError, CompileOptions, Mapping};
use crate::ir::{
    ConnKind, Connection, LoweredNet, ModelKind, NetworkIR, NeuronParams, Population, Source,
};
use crate::models::Builder;
use crate::topology::{encode_conv, encode_full, IeType, Loc, StorageReport};
use crate::Word16;

pub const COLUMNS: [&str; 4] = ["baseline", "conv", "parallel", "incremental"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Columns {
    pub reports: [StorageReport; 4],
}

impl Columns {
    pub fn entries(&self) -> [usize; 4] {
        self.reports.map(|r| r.entries())
    }

    pub fn bits(&self) -> [usize; 4] {
        self.reports.map(|r| r.bits())
    }

    pub fn ratio_entries(&self) -> f64 {
        ratio(self.reports[0].entries(), self.reports[3].entries())
    }

    pub fn ratio_bits(&self) -> f64 {
        ratio(self.reports[0].bits(), self.reports[3].bits())
    }

    fn each(&mut self, f: impl Fn(usize, &mut StorageReport)) {
        for (i, r) in self.reports.iter_mut().enumerate() {
            f(i, r);
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        1.0
    } else {
        a as f64 / b as f64
    }
}

/// Synapse count and distinct destination CCs of one source neuron.
#[derive(Default, Clone, Copy)]
struct Fan {
    syn: usize,
    ccs: usize,
}

fn fans(n_src: u32, syn: impl Iterator<Item = (u32, Loc)>) -> Vec<Fan> {
    let mut ccs: Vec<BTreeSet<u16>> = vec![BTreeSet::new(); n_src as usize];
    let mut n = vec![0usize; n_src as usize];
    for (s, l) in syn {
        ccs[s as usize].insert(l.cc);
        n[s as usize] += 1;
    }
    n.into_iter()
        .zip(ccs)
        .map(|(syn, c)| Fan { syn, ccs: c.len() })
        .collect()
}

/// Adds per-synapse entries of IE type `t`; `cols` selects the columns.
fn add_fans(out: &mut Columns, fans: &[Fan], t: IeType, cols: std::ops::Range<usize>) {
    for f in fans.iter().filter(|f| f.syn > 0) {
        for i in cols.clone() {
            let r = &mut out.reports[i];
            r.fanin_des += f.ccs;
            r.fanin_ies[t as usize] += f.syn;
            r.fanout_ies += if i >= 2 { 1 } else { f.ccs };
        }
    }
}

/// Storage of `net` mapped by `m` under each column.
pub fn storage_columns(net: &LoweredNet, m: &Mapping) -> Result<Columns, CompileError> {
    let homes = m.homes(net);
    let mut out = Columns::default();
    let somas_total: usize = net.pops.iter().map(|p| p.size() as usize).sum();
    out.each(|_, r| r.fanout_des = somas_total);

    for c in &net.conns {
        let somas: Vec<Loc> = homes[c.to].iter().map(|h| h.soma).collect();
        let n_src = net.source_size(c.from);
        let n_out = net.pops[c.to].size();
        if is_explicit(c) {
            let syn = c.kind.synapses(n_out);
            let f = fans(n_src, syn.iter().map(|e| (e.0, somas[e.1 as usize])));
            add_fans(&mut out, &f, IeType::Type1, 0..4);
            continue;
        }
        match &c.kind {
            ConnKind::Full { .. } => {
                let parts = part_ranges(m, net, c.to);
                let dst = dst_parts(&homes[c.to], parts.len(), m.splits[c.to].is_some());
                let mut f = vec![Fan::default(); n_src as usize];
                for (r, range) in parts.iter().enumerate() {
                    let ccs: BTreeSet<u16> = dst[r].iter().map(|l| l.cc).collect();
                    for s in range.clone() {
                        f[s as usize] = Fan {
                            syn: dst[r].len(),
                            ccs: ccs.len(),
                        };
                    }
                }
                add_fans(&mut out, &f, IeType::Type1, 0..3);
                let plan = encode_full(&parts, &dst)?;
                let r = &mut out.reports[3];
                for k in &plan.keys {
                    r.fanin_des += k.per_cc.len();
                    r.fanin_ies[IeType::Type2 as usize] +=
                        k.per_cc.values().map(|v| v.len()).sum::<usize>();
                    if !k.per_cc.is_empty() {
                        r.fanout_ies += k.sources.len();
                    }
                }
            }
            ConnKind::Sparse { edges, .. } => {
                let parts = part_ranges(m, net, c.to);
                let dst = dst_parts(&homes[c.to], parts.len(), m.splits[c.to].is_some());
                let part_of = |s: u32| parts.iter().position(|r| r.contains(&s)).unwrap_or(0);
                let f = fans(
                    n_src,
                    edges.iter().map(|e| (e.0, dst[part_of(e.0)][e.1 as usize])),
                );
                add_fans(&mut out, &f, IeType::Type0, 0..4);
            }
            ConnKind::Pool { geom, .. } => {
                let f = fans(
                    n_src,
                    (0..n_src).filter_map(|s| geom.target(s).map(|d| (s, somas[d as usize]))),
                );
                add_fans(&mut out, &f, IeType::Type0, 0..4);
            }
            ConnKind::Conv { geom: g, .. } => {
                let (s_out, c_in) = (g.out_size(), g.c_in as usize);
                for pos in 0..g.in_size() {
                    let reach = g.reach(pos);
                    if reach.is_empty() {
                        continue;
                    }
                    let mut ccs = BTreeSet::new();
                    let mut ncs = 0usize;
                    for &(o, _) in &reach {
                        let mut per_o = BTreeSet::new();
                        for co in 0..g.c_out {
                            let l = somas[(co * s_out + o) as usize];
                            ccs.insert(l.cc);
                            per_o.insert((l.cc, l.nc));
                        }
                        ncs += per_o.len();
                    }
                    let syn = reach.len() * g.c_out as usize;
                    let b = &mut out.reports[0];
                    b.fanin_des += c_in * ccs.len();
                    b.fanin_ies[IeType::Type1 as usize] += c_in * syn;
                    b.fanout_ies += c_in * ccs.len();
                    let k = &mut out.reports[1];
                    k.fanin_des += ccs.len();
                    k.fanin_ies[IeType::Type3 as usize] += ncs;
                    k.fanout_ies += c_in * ccs.len();
                }
                let plan = encode_conv(g, &somas)?;
                for r in &mut out.reports[2..] {
                    for k in &plan.keys {
                        r.fanin_des += k.per_cc.len();
                        r.fanin_ies[IeType::Type3 as usize] +=
                            k.per_cc.values().map(|v| v.len()).sum::<usize>();
                        r.fanout_ies += k.sources.len();
                    }
                }
            }
            ConnKind::Explicit { .. } => unreachable!(),
        }
    }
    Ok(out)
}

fn scaled(c: u32, scale: f64) -> u32 {
    ((c as f64 * scale).round() as u32).max(1)
}

/// VGG-style network on a 3×32×32 input: thirteen 3×3 convolutions in five
/// pooled stages, then three fully connected layers. Channel widths are
/// multiplied by `scale` and capped at 224 so every fan-in fits one core.
pub fn vgg_like(scale: f64, seed: u64) -> NetworkIR {
    let mut b = Builder::new("vgg_like", [3, 32, 32], 4, seed);
    let stages: [&[u32]; 5] = [&[64, 64], &[128, 128], &[224; 3], &[224; 3], &[224; 3]];
    for (i, stage) in stages.iter().enumerate() {
        for (j, &c) in stage.iter().enumerate() {
            b.conv(
                &format!("conv{}_{}", i + 1, j + 1),
                scaled(c, scale).min(224),
                3,
                1,
                1,
                None,
            );
        }
        b.pool(&format!("pool{}", i + 1), 2, 1.0);
    }
    b.fc("fc1", scaled(512, scale))
        .fc("fc2", scaled(512, scale))
        .fc("fc3", 10)
        .output();
    b.build()
}

/// Residual network on a 3×32×32 input: a stem convolution and three stages
/// of two blocks; each block is two 3×3 convolutions bridged by a shortcut
/// from the block input.
pub fn resnet_like(scale: f64, seed: u64) -> NetworkIR {
    let mut b = Builder::new("resnet_like", [3, 32, 32], 4, seed);
    b.conv("stem", scaled(16, scale), 3, 1, 1, None);
    let mut prev = "stem".to_string();
    for (i, &c) in [16u32, 32, 64].iter().enumerate() {
        let c = scaled(c, scale);
        if i > 0 {
            b.pool(&format!("pool{i}"), 2, 1.0);
            let t = format!("trans{i}");
            b.conv(&t, c, 3, 1, 1, None);
            prev = t;
        }
        for j in 0..2 {
            let (a, z) = (format!("s{i}b{j}a"), format!("s{i}b{j}b"));
            b.conv(&a, c, 3, 1, 1, None).conv(&z, c, 3, 1, 1, None);
            b.skip(&prev, &z);
            prev = z;
        }
    }
    b.pool("pool3", 2, 1.0).fc("fc", 10).output();
    b.build()
}

/// Replaces every shortcut of latency `L > 1` by a chain of `L - 1` relay
/// populations that copy the source one timestep later each, so that every
/// connection has latency at most one. The rewired shortcut keeps its
/// position in the connection list and its edges.
pub fn relay_shortcuts(net: &LoweredNet) -> LoweredNet {
    let mut out = net.clone();
    let relay = |shape: [u32; 3], name: String| Population {
        name,
        shape,
        params: NeuronParams {
            kind: ModelKind::Lif,
            tau: Word16::ZERO,
            v_th: vec![Word16::FP_ONE],
            bias: None,
        },
        output: false,
    };
    let (mut pops, mut conns) = (Vec::new(), Vec::new());
    for c in out.conns.iter_mut() {
        let Source::Pop(src) = c.from else { continue };
        if c.latency < 2 {
            continue;
        }
        let shape = net.pops[src].shape;
        let n = net.pops[src].size();
        let mut from = c.from;
        for k in 1..c.latency {
            let p = net.pops.len() + pops.len();
            pops.push(relay(shape, format!("{}.relay{k}", c.name)));
            conns.push(Connection {
                name: format!("{}.relay{k}.in", c.name),
                from,
                to: p,
                kind: ConnKind::Explicit {
                    n_in: n,
                    edges: (0..n).map(|i| (i, i, Word16::FP_ONE)).collect(),
                },
                latency: 1,
                primary: false,
            });
            from = Source::Pop(p);
        }
        c.from = from;
        c.latency = 1;
    }
    out.pops.extend(pops);
    out.conns.extend(conns);
    out
}

/// NCs used by the delayed-spike mapping and by the relay baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SkipCores {
    pub delayed: usize,
    pub relay: usize,
}

pub fn skip_cores(net: &LoweredNet, opts: &CompileOptions) -> Result<SkipCores, CompileError> {
    Ok(SkipCores {
        delayed: map_net(net, opts)?.nc_count(),
        relay: map_net(&relay_shortcuts(net), opts)?.nc_count(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub model: String,
    pub scale: f64,
    pub neurons: u64,
    pub synapses: u64,
    pub ncs: usize,
    pub ccs: usize,
    pub columns: Columns,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub skip: Option<(String, SkipCores)>,
}

pub fn bench_row(
    ir: &NetworkIR,
    scale: f64,
    opts: &CompileOptions,
) -> Result<BenchRow, CompileError> {
    let net = crate::ir::validate_and_lower(ir)?;
    let m = map_net(&net, opts)?;
    Ok(BenchRow {
        model: ir.name.clone(),
        scale,
        neurons: net.neuron_count(),
        synapses: net.synapse_count(),
        ncs: m.nc_count(),
        ccs: m.cc_count(),
        columns: storage_columns(&net, &m)?,
    })
}

/// The storage table for both benchmark models plus the shortcut comparison.
pub fn topology_bench(
    scale: f64,
    seed: u64,
    opts: &CompileOptions,
) -> Result<BenchReport, CompileError> {
    let vgg = vgg_like(scale, seed);
    let res = resnet_like(scale, seed);
    let rows = vec![bench_row(&vgg, scale, opts)?, bench_row(&res, scale, opts)?];
    let skip = skip_cores(&crate::ir::validate_and_lower(&res)?, opts)?;
    Ok(BenchReport {
        rows,
        skip: Some((res.name.clone(), skip)),
    })
}

impl BenchReport {
    /// One `key=value` record per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "model={} scale={} neurons={} synapses={} ncs={} ccs={}",
                r.model, r.scale, r.neurons, r.synapses, r.ncs, r.ccs
            );
            for (i, name) in COLUMNS.iter().enumerate() {
                let rep = &r.columns.reports[i];
                let _ = writeln!(
                    s,
                    "  column={name} entries={} bits={} fanin_des={} fanin_ies={:?} fanout_des={} fanout_ies={}",
                    rep.entries(),
                    rep.bits(),
                    rep.fanin_des,
                    rep.fanin_ies,
                    rep.fanout_des,
                    rep.fanout_ies
                );
            }
            let _ = writeln!(
                s,
                "  ratio_entries={:.2} ratio_bits={:.2}",
                r.columns.ratio_entries(),
                r.columns.ratio_bits()
            );
        }
        if let Some((name, k)) = &self.skip {
            let _ = writeln!(
                s,
                "skip model={name} delayed_ncs={} relay_ncs={}",
                k.delayed, k.relay
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{simulate, validate_and_lower};

    fn columns(ir: &NetworkIR) -> Columns {
        let net = validate_and_lower(ir).unwrap();
        let m = map_net(&net, &CompileOptions::default()).unwrap();
        storage_columns(&net, &m).unwrap()
    }

    #[test]
    fn fc_only_conv_column_is_baseline() {
        let mut b = Builder::new("fc", [300, 1, 1], 4, 1);
        b.fc("a", 400).fc("b", 10);
        let c = columns(&b.build());
        assert_eq!(c.reports[0], c.reports[1]);
        assert!(c.reports[3].entries() < c.reports[2].entries());
    }

    #[test]
    fn columns_monotone() {
        for ir in [vgg_like(0.125, 3), resnet_like(0.5, 3)] {
            let e = columns(&ir).entries();
            assert!(e.windows(2).all(|w| w[0] >= w[1]), "{}: {e:?}", ir.name);
        }
    }

    #[test]
    fn type3_count_independent_of_out_channels() {
        let ies = |c_out| {
            let mut b = Builder::new("t3", [8, 4, 4], 4, 2);
            b.conv("c", c_out, 3, 1, 1, None);
            columns(&b.build()).reports[3].fanin_ies[IeType::Type3 as usize]
        };
        assert_eq!(ies(16), ies(32));
    }

    #[test]
    fn relays_reproduce_shortcut_timing() {
        let mut b = Builder::new("res", [24, 1, 1], 8, 5);
        b.fc("a", 16)
            .fc("b", 16)
            .fc("c", 16)
            .fc("d", 16)
            .skip("a", "d")
            .output();
        let net = validate_and_lower(&b.build()).unwrap();
        let relay = relay_shortcuts(&net);
        assert_eq!(relay.pops.len(), net.pops.len() + 2);
        assert!(relay.conns.iter().all(|c| c.latency <= 1));
        let inputs = crate::compiler::profile_inputs(24, 8, 0.5, 9);
        let (x, y) = (simulate(&net, &inputs), simulate(&relay, &inputs));
        for p in 0..net.pops.len() {
            assert_eq!(
                x.spikes.iter().map(|t| &t[p]).collect::<Vec<_>>(),
                y.spikes.iter().map(|t| &t[p]).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn delayed_shortcuts_save_cores() {
        for scale in [0.25, 1.0] {
            let net = validate_and_lower(&resnet_like(scale, 1)).unwrap();
            let k = skip_cores(&net, &CompileOptions::default()).unwrap();
            eprintln!("{scale} {k:?}");
            assert!(k.delayed < k.relay, "{k:?}");
        }
    }
}
