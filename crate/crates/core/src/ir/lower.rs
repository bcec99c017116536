//! Validation and lowering into populations and connections.

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{BatchNorm, IrError, LayerKind, LayerSpec, NetworkIR, NeuronModel, Tensor, INPUT};
use crate::topology::{expand_fanin, ConvGeom, PoolGeom};
use crate::Word16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    Input,
    Pop(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Lif,
    Alif { beta: Word16, rho: Word16 },
    DhLif { branch_tau: Vec<Word16> },
    Integrator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronParams {
    pub kind: ModelKind,
    pub tau: Word16,
    /// One shared threshold or one per neuron.
    pub v_th: Vec<Word16>,
    /// Current each timestep starts from; zero when absent.
    pub bias: Option<Vec<Word16>>,
}

impl NeuronParams {
    pub fn v_th(&self, i: usize) -> Word16 {
        if self.v_th.len() == 1 {
            self.v_th[0]
        } else {
            self.v_th[i]
        }
    }

    pub fn bias(&self, i: usize) -> Word16 {
        self.bias.as_ref().map_or(Word16::ZERO, |b| b[i])
    }

    pub fn shared_threshold(&self) -> Option<Word16> {
        let first = self.v_th[0];
        self.v_th.iter().all(|&v| v == first).then_some(first)
    }

    pub fn spiking(&self) -> bool {
        self.kind != ModelKind::Integrator
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Population {
    pub name: String,
    /// `[channels, height, width]`.
    pub shape: [u32; 3],
    pub params: NeuronParams,
    pub output: bool,
}

impl Population {
    pub fn size(&self) -> u32 {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConnKind {
    /// `w[d * n_in + s]`.
    Full {
        n_in: u32,
        w: Vec<Word16>,
    },
    Sparse {
        n_in: u32,
        edges: Vec<(u32, u32, Word16)>,
    },
    /// `w[((o * c_in + c) * k + ky) * k + kx]`.
    Conv {
        geom: ConvGeom,
        w: Vec<Word16>,
    },
    Pool {
        geom: PoolGeom,
        w: Word16,
    },
    /// Per-synapse entries; used for recurrent edges and shortcuts.
    Explicit {
        n_in: u32,
        edges: Vec<(u32, u32, Word16)>,
    },
}

impl ConnKind {
    pub fn name(&self) -> &'static str {
        match self {
            ConnKind::Full { .. } => "full",
            ConnKind::Sparse { .. } => "sparse",
            ConnKind::Conv { .. } => "conv",
            ConnKind::Pool { .. } => "pool",
            ConnKind::Explicit { .. } => "explicit",
        }
    }

    /// Every synapse `(src, dst, weight)`, grouped by source.
    pub fn synapses(&self, n_out: u32) -> Vec<(u32, u32, Word16)> {
        match self {
            ConnKind::Full { n_in, w } => {
                let mut v = Vec::with_capacity(w.len());
                for s in 0..*n_in {
                    for d in 0..n_out {
                        v.push((s, d, w[(d * n_in + s) as usize]));
                    }
                }
                v
            }
            ConnKind::Sparse { edges, .. } | ConnKind::Explicit { edges, .. } => {
                let mut v = edges.clone();
                v.sort_by_key(|e| (e.0, e.1));
                v
            }
            ConnKind::Conv { geom: g, w } => {
                let (s_in, s_out, kk) = (g.in_size(), g.out_size(), g.k * g.k);
                let mut v = Vec::new();
                for c in 0..g.c_in {
                    for pos in 0..s_in {
                        for (o, off) in g.reach(pos) {
                            for co in 0..g.c_out {
                                let wi = (co * g.c_in + c) * kk + off;
                                v.push((c * s_in + pos, co * s_out + o, w[wi as usize]));
                            }
                        }
                    }
                }
                v
            }
            ConnKind::Pool { geom, w } => (0..geom.c * geom.h_in * geom.w_in)
                .filter_map(|s| geom.target(s).map(|d| (s, d, *w)))
                .collect(),
        }
    }

    pub fn synapse_count(&self, n_out: u32) -> usize {
        match self {
            ConnKind::Full { n_in, .. } => (*n_in * n_out) as usize,
            ConnKind::Sparse { edges, .. } | ConnKind::Explicit { edges, .. } => edges.len(),
            ConnKind::Conv { geom: g, .. } => {
                let reach: usize = (0..g.in_size()).map(|p| g.reach(p).len()).sum();
                reach * (g.c_in * g.c_out) as usize
            }
            ConnKind::Pool { geom, .. } => (0..geom.c * geom.h_in * geom.w_in)
                .filter(|&s| geom.target(s).is_some())
                .count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Connection {
    pub name: String,
    pub from: Source,
    pub to: usize,
    pub kind: ConnKind,
    /// Timesteps from the source firing to the target integrating; 0 for
    /// the network input.
    pub latency: u32,
    /// The one connection whose weights the target addresses by axon.
    pub primary: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoweredNet {
    pub name: String,
    pub input_shape: [u32; 3],
    pub timesteps: u32,
    pub pops: Vec<Population>,
    pub conns: Vec<Connection>,
}

impl LoweredNet {
    pub fn input_size(&self) -> u32 {
        self.input_shape.iter().product()
    }

    pub fn source_shape(&self, s: Source) -> [u32; 3] {
        match s {
            Source::Input => self.input_shape,
            Source::Pop(i) => self.pops[i].shape,
        }
    }

    pub fn source_size(&self, s: Source) -> u32 {
        self.source_shape(s).iter().product()
    }

    pub fn conns_into(&self, pop: usize) -> impl Iterator<Item = (usize, &Connection)> {
        self.conns
            .iter()
            .enumerate()
            .filter(move |(_, c)| c.to == pop)
    }

    pub fn conns_from(&self, s: Source) -> impl Iterator<Item = (usize, &Connection)> {
        self.conns
            .iter()
            .enumerate()
            .filter(move |(_, c)| c.from == s)
    }

    pub fn primary(&self, pop: usize) -> Option<&Connection> {
        self.conns.iter().find(|c| c.to == pop && c.primary)
    }

    /// Source ranges feeding each dendritic branch of a DH-LIF population.
    pub fn branches(&self, pop: usize) -> Option<Vec<Range<u32>>> {
        let ModelKind::DhLif { branch_tau } = &self.pops[pop].params.kind else {
            return None;
        };
        let n = self.source_size(self.primary(pop)?.from);
        expand_fanin(n, usize::MAX, Some(branch_tau.len()))
            .ok()
            .map(|s| s.parts)
    }

    pub fn neuron_count(&self) -> u64 {
        self.pops.iter().map(|p| p.size() as u64).sum()
    }

    pub fn synapse_count(&self) -> u64 {
        self.conns
            .iter()
            .map(|c| c.kind.synapse_count(self.pops[c.to].size()) as u64)
            .sum()
    }

    pub fn pop_index(&self, name: &str) -> Option<usize> {
        self.pops.iter().position(|p| p.name == name)
    }
}

fn fp(layer: &str, what: &str, x: f64) -> Result<Word16, IrError> {
    let w = Word16::from_f64(x);
    if !w.is_finite_fp() {
        return Err(IrError::NotFp16 {
            layer: layer.into(),
            what: what.into(),
        });
    }
    Ok(w)
}

fn shape_err(layer: &str, msg: impl Into<String>) -> IrError {
    IrError::Shape {
        layer: layer.into(),
        msg: msg.into(),
    }
}

fn unsupported(layer: &str, msg: impl Into<String>) -> IrError {
    IrError::Unsupported {
        layer: layer.into(),
        msg: msg.into(),
    }
}

fn check_len(layer: &str, what: &str, t: &Tensor, want: &[u32]) -> Result<(), IrError> {
    if t.shape != want || t.words().len() != t.len() {
        return Err(shape_err(
            layer,
            format!("{what} shape {:?}, expected {:?}", t.shape, want),
        ));
    }
    Ok(())
}

/// Per-channel scale and shift of an inference batch norm.
fn bn_affine(layer: &str, bn: &BatchNorm, c: u32) -> Result<Vec<(f64, f64)>, IrError> {
    for (n, t) in [
        ("gamma", &bn.gamma),
        ("beta", &bn.beta),
        ("mean", &bn.mean),
        ("var", &bn.var),
    ] {
        check_len(layer, n, t, &[c])?;
    }
    let (g, b, m, v) = (
        bn.gamma.f64s(),
        bn.beta.f64s(),
        bn.mean.f64s(),
        bn.var.f64s(),
    );
    Ok((0..c as usize)
        .map(|i| {
            let s = g[i] / (v[i] + bn.eps as f64).sqrt();
            (s, b[i] - m[i] * s)
        })
        .collect())
}

fn lower_params(l: &LayerSpec, n: u32) -> Result<NeuronParams, IrError> {
    let name = l.name.as_str();
    let (kind, tau, v_th) = match &l.neuron {
        NeuronModel::Lif { tau, v_th } => (ModelKind::Lif, *tau, *v_th),
        NeuronModel::Alif {
            tau,
            v_th,
            beta,
            rho,
        } => (
            ModelKind::Alif {
                beta: fp(name, "beta", *beta as f64)?,
                rho: fp(name, "rho", *rho as f64)?,
            },
            *tau,
            *v_th,
        ),
        NeuronModel::DhLif {
            tau,
            v_th,
            branch_tau,
        } => {
            if branch_tau.is_empty() {
                return Err(unsupported(name, "DH-LIF needs at least one branch"));
            }
            let bt = branch_tau
                .iter()
                .map(|&x| fp(name, "branch tau", x as f64))
                .collect::<Result<_, _>>()?;
            (ModelKind::DhLif { branch_tau: bt }, *tau, *v_th)
        }
        NeuronModel::Integrator { tau } => (ModelKind::Integrator, *tau, 0.0),
    };
    let v_th = match &l.thresholds {
        Some(t) => {
            if t.len() != n as usize {
                return Err(shape_err(
                    name,
                    format!("{} thresholds for {n} neurons", t.len()),
                ));
            }
            t.iter()
                .map(|&x| fp(name, "threshold", x as f64))
                .collect::<Result<_, _>>()?
        }
        None => vec![fp(name, "v_th", v_th as f64)?],
    };
    Ok(NeuronParams {
        kind,
        tau: fp(name, "tau", tau as f64)?,
        v_th,
        bias: None,
    })
}

/// Folds batch norm and fused pooling into the weights, turns recurrent
/// edges and shortcuts into explicit connections, and checks every shape.
pub fn validate_and_lower(ir: &NetworkIR) -> Result<LoweredNet, IrError> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, l) in ir.layers.iter().enumerate() {
        if l.name == INPUT || index.insert(&l.name, i).is_some() {
            return Err(IrError::Duplicate(l.name.clone()));
        }
    }
    if ir.input.contains(&0) {
        return Err(shape_err(INPUT, "empty input"));
    }
    let mut net = LoweredNet {
        name: ir.name.clone(),
        input_shape: ir.input,
        timesteps: ir.timesteps,
        pops: Vec::new(),
        conns: Vec::new(),
    };
    let mut depth: Vec<u32> = Vec::new();
    for (i, l) in ir.layers.iter().enumerate() {
        let name = l.name.as_str();
        let from = match l.input.as_deref() {
            None if i == 0 => Source::Input,
            None => Source::Pop(i - 1),
            Some(INPUT) => Source::Input,
            Some(s) => {
                let j = *index
                    .get(s)
                    .ok_or_else(|| IrError::UnknownLayer(s.into()))?;
                if j >= i {
                    return Err(IrError::Cycle(name.into()));
                }
                Source::Pop(j)
            }
        };
        if let Source::Pop(j) = from {
            if !net.pops[j].params.spiking() {
                return Err(unsupported(
                    name,
                    "an integrator layer cannot feed other layers",
                ));
            }
        }
        let [c_in, h_in, w_in] = net.source_shape(from);
        let n_in = c_in * h_in * w_in;
        let latency = u32::from(from != Source::Input);
        let mut bias: Option<Vec<f64>> = None;
        let (shape, kind, extra) = match &l.kind {
            LayerKind::Conv {
                c_out,
                k,
                stride,
                pad,
                pool,
                weights,
                bias: b,
            } => {
                let (c_out, k) = (*c_out, *k);
                check_len(name, "weights", weights, &[c_out, c_in, k, k])?;
                if k == 0 || *stride == 0 || h_in + 2 * pad < k || w_in + 2 * pad < k {
                    return Err(shape_err(name, "kernel does not fit the input"));
                }
                let mut w = weights.f64s();
                let mut b = match b {
                    Some(t) => {
                        check_len(name, "bias", t, &[c_out])?;
                        t.f64s()
                    }
                    None => vec![0.0; c_out as usize],
                };
                let mut geom = ConvGeom {
                    c_in,
                    h_in,
                    w_in,
                    c_out,
                    k,
                    stride: *stride,
                    pad: *pad,
                };
                if let Some(p) = *pool {
                    if *stride != 1 {
                        return Err(unsupported(name, "pool fusion needs a unit-stride conv"));
                    }
                    if p == 0 || geom.h_out() < p || geom.w_out() < p {
                        return Err(shape_err(name, "pool window larger than the conv output"));
                    }
                    let k2 = k + p - 1;
                    let mut f = vec![0.0; (c_out * c_in * k2 * k2) as usize];
                    let scale = 1.0 / (p * p) as f64;
                    for oc in 0..c_out {
                        for c in 0..c_in {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let wv = w[(((oc * c_in + c) * k + ky) * k + kx) as usize];
                                    for a in 0..p {
                                        for bb in 0..p {
                                            let fi = ((oc * c_in + c) * k2 + ky + a) * k2 + kx + bb;
                                            f[fi as usize] += wv * scale;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    w = f;
                    geom.k = k2;
                    geom.stride = p;
                }
                if let Some(bn) = &l.bn {
                    let aff = bn_affine(name, bn, c_out)?;
                    let per = (c_in * geom.k * geom.k) as usize;
                    for (oc, &(s, sh)) in aff.iter().enumerate() {
                        for x in &mut w[oc * per..(oc + 1) * per] {
                            *x *= s;
                        }
                        b[oc] = b[oc] * s + sh;
                    }
                }
                let s_out = geom.out_size();
                if b.iter().any(|&x| x != 0.0) {
                    bias = Some(
                        (0..c_out as usize)
                            .flat_map(|c| std::iter::repeat_n(b[c], s_out as usize))
                            .collect(),
                    );
                }
                let w = w
                    .iter()
                    .map(|&x| fp(name, "weight", x))
                    .collect::<Result<Vec<_>, _>>()?;
                (
                    [c_out, geom.h_out(), geom.w_out()],
                    ConnKind::Conv { geom, w },
                    None,
                )
            }
            LayerKind::Fc {
                out,
                weights,
                bias: b,
            } => {
                check_len(name, "weights", weights, &[*out, n_in])?;
                let mut w = weights.f64s();
                let mut b = match b {
                    Some(t) => {
                        check_len(name, "bias", t, &[*out])?;
                        t.f64s()
                    }
                    None => vec![0.0; *out as usize],
                };
                if let Some(bn) = &l.bn {
                    for (o, (s, sh)) in bn_affine(name, bn, *out)?.into_iter().enumerate() {
                        for x in &mut w[o * n_in as usize..(o + 1) * n_in as usize] {
                            *x *= s;
                        }
                        b[o] = b[o] * s + sh;
                    }
                }
                if b.iter().any(|&x| x != 0.0) {
                    bias = Some(b);
                }
                let w = w
                    .iter()
                    .map(|&x| fp(name, "weight", x))
                    .collect::<Result<Vec<_>, _>>()?;
                ([*out, 1, 1], ConnKind::Full { n_in, w }, None)
            }
            LayerKind::Pool { window, weight } => {
                if l.bn.is_some() {
                    return Err(unsupported(name, "batch norm on a pooling layer"));
                }
                let geom = PoolGeom {
                    c: c_in,
                    h_in,
                    w_in,
                    window: *window,
                };
                if *window == 0 || geom.h_out() == 0 || geom.w_out() == 0 {
                    return Err(shape_err(name, "pool window larger than the input"));
                }
                let w = fp(name, "weight", *weight as f64)?;
                (
                    [c_in, geom.h_out(), geom.w_out()],
                    ConnKind::Pool { geom, w },
                    None,
                )
            }
            LayerKind::Sparse {
                out,
                edges,
                weights,
            } => {
                if l.bn.is_some() {
                    return Err(unsupported(name, "batch norm on a sparse layer"));
                }
                check_len(name, "weights", weights, &[edges.len() as u32])?;
                let w = weights.words();
                let mut e = Vec::with_capacity(edges.len());
                for (i, &(s, d)) in edges.iter().enumerate() {
                    if s >= n_in || d >= *out {
                        return Err(shape_err(name, format!("edge ({s},{d}) out of range")));
                    }
                    e.push((s, d, fp(name, "weight", w[i].to_f64())?));
                }
                dedupe_check(name, &e)?;
                ([*out, 1, 1], ConnKind::Sparse { n_in, edges: e }, None)
            }
            LayerKind::Recurrent {
                out,
                weights,
                edges,
                rec_weights,
            } => {
                if l.bn.is_some() {
                    return Err(unsupported(name, "batch norm on a recurrent layer"));
                }
                check_len(name, "weights", weights, &[*out, n_in])?;
                check_len(name, "rec_weights", rec_weights, &[edges.len() as u32])?;
                let rw = rec_weights.words();
                let mut e = Vec::with_capacity(edges.len());
                for (k, &(s, d)) in edges.iter().enumerate() {
                    if s >= *out || d >= *out {
                        return Err(shape_err(
                            name,
                            format!("recurrent edge ({s},{d}) out of range"),
                        ));
                    }
                    e.push((s, d, fp(name, "weight", rw[k].to_f64())?));
                }
                dedupe_check(name, &e)?;
                let w = weights
                    .f64s()
                    .iter()
                    .map(|&x| fp(name, "weight", x))
                    .collect::<Result<Vec<_>, _>>()?;
                (
                    [*out, 1, 1],
                    ConnKind::Full { n_in, w },
                    Some(ConnKind::Explicit {
                        n_in: *out,
                        edges: e,
                    }),
                )
            }
        };
        let n: u32 = shape.iter().product();
        if n == 0 {
            return Err(shape_err(name, "layer has no neurons"));
        }
        if l.bn.is_some() && !matches!(l.kind, LayerKind::Conv { .. } | LayerKind::Fc { .. }) {
            return Err(unsupported(name, "batch norm"));
        }
        let mut params = lower_params(l, n)?;
        if let ModelKind::DhLif { branch_tau } = &params.kind {
            if !matches!(kind, ConnKind::Full { .. } | ConnKind::Sparse { .. }) {
                return Err(unsupported(
                    name,
                    "dendritic branches need a full or sparse input",
                ));
            }
            if branch_tau.len() as u32 > n_in {
                return Err(unsupported(name, "more branches than inputs"));
            }
        }
        if let Some(b) = bias {
            params.bias = Some(
                b.iter()
                    .map(|&x| fp(name, "bias", x))
                    .collect::<Result<_, _>>()?,
            );
        }
        let p = net.pops.len();
        depth.push(match from {
            Source::Input => 1,
            Source::Pop(j) => depth[j] + 1,
        });
        net.pops.push(Population {
            name: l.name.clone(),
            shape,
            params,
            output: l.output,
        });
        net.conns.push(Connection {
            name: format!("{}.in", l.name),
            from,
            to: p,
            kind,
            latency,
            primary: true,
        });
        if let Some(rec) = extra {
            net.conns.push(Connection {
                name: format!("{}.rec", l.name),
                from: Source::Pop(p),
                to: p,
                kind: rec,
                latency: 1,
                primary: false,
            });
        }
    }
    for s in &ir.skips {
        let err = |msg: &str| IrError::Skip {
            from: s.from.clone(),
            to: s.to.clone(),
            msg: msg.into(),
        };
        let a = *index
            .get(s.from.as_str())
            .ok_or_else(|| err("unknown source layer"))?;
        let b = *index
            .get(s.to.as_str())
            .ok_or_else(|| err("unknown target layer"))?;
        if depth[b] <= depth[a] {
            return Err(err("target must lie downstream of the source"));
        }
        if net.pops[a].size() != net.pops[b].size() {
            return Err(err("shortcut needs equal layer sizes"));
        }
        if !net.pops[a].params.spiking() {
            return Err(err("an integrator cannot feed a shortcut"));
        }
        let w = fp(&s.to, "skip weight", s.weight as f64)?;
        let n = net.pops[a].size();
        net.conns.push(Connection {
            name: format!("{}->{}", s.from, s.to),
            from: Source::Pop(a),
            to: b,
            kind: ConnKind::Explicit {
                n_in: n,
                edges: (0..n).map(|i| (i, i, w)).collect(),
            },
            latency: depth[b] - depth[a],
            primary: false,
        });
    }
    let consumed: Vec<bool> = (0..net.pops.len())
        .map(|p| {
            net.conns
                .iter()
                .any(|c| c.from == Source::Pop(p) && c.to != p)
        })
        .collect();
    if net.pops.iter().all(|p| !p.output) {
        if let Some(last) = net.pops.last_mut() {
            last.output = true;
        }
    }
    for (p, pop) in net.pops.iter().enumerate() {
        if !pop.params.spiking() && consumed[p] {
            return Err(unsupported(
                &pop.name,
                "an integrator layer cannot feed other layers",
            ));
        }
    }
    Ok(net)
}

fn dedupe_check(layer: &str, e: &[(u32, u32, Word16)]) -> Result<(), IrError> {
    let mut k: Vec<(u32, u32)> = e.iter().map(|x| (x.0, x.1)).collect();
    k.sort();
    if k.windows(2).any(|w| w[0] == w[1]) {
        return Err(shape_err(layer, "duplicate edge"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny;
    use super::super::*;
    use super::*;

    fn conv_layer(c_in: u32, c_out: u32, k: u32, pool: Option<u32>, w: Vec<f32>) -> LayerSpec {
        LayerSpec {
            name: "c".into(),
            kind: LayerKind::Conv {
                c_out,
                k,
                stride: 1,
                pad: 0,
                pool,
                weights: Tensor::from_f32(vec![c_out, c_in, k, k], &w),
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
        }
    }

    #[test]
    fn identity_bn_leaves_weights() {
        let mut l = conv_layer(1, 2, 3, None, (0..18).map(|i| i as f32 / 16.0).collect());
        l.bn = Some(BatchNorm {
            gamma: Tensor::from_f32(vec![2], &[1.0, 1.0]),
            beta: Tensor::from_f32(vec![2], &[0.0, 0.0]),
            mean: Tensor::from_f32(vec![2], &[0.0, 0.0]),
            var: Tensor::from_f32(vec![2], &[1.0, 1.0]),
            eps: 0.0,
        });
        let ir = NetworkIR {
            name: "c".into(),
            input: [1, 5, 5],
            timesteps: 1,
            layers: vec![l],
            skips: vec![],
        };
        let net = validate_and_lower(&ir).unwrap();
        let ConnKind::Conv { w, .. } = &net.conns[0].kind else {
            panic!()
        };
        let want: Vec<Word16> = (0..18).map(|i| Word16::from_f32(i as f32 / 16.0)).collect();
        assert_eq!(w, &want);
        assert!(net.pops[0].params.bias.is_none());
    }

    #[test]
    fn pool_fusion_matches_conv_then_pool() {
        // 1x1 kernel of weight 1 followed by 2x2 average = 2x2 kernel of 0.25
        let ir = NetworkIR {
            name: "p".into(),
            input: [1, 4, 4],
            timesteps: 1,
            layers: vec![conv_layer(1, 1, 1, Some(2), vec![1.0])],
            skips: vec![],
        };
        let net = validate_and_lower(&ir).unwrap();
        let ConnKind::Conv { geom, w } = &net.conns[0].kind else {
            panic!()
        };
        assert_eq!((geom.k, geom.stride, geom.out_size()), (2, 2, 4));
        assert!(w.iter().all(|&x| x == Word16::from_f32(0.25)));
        assert_eq!(net.pops[0].shape, [1, 2, 2]);
    }

    #[test]
    fn recurrent_lowering_and_errors() {
        let n = 5u32;
        let edges: Vec<(u32, u32)> = (0..n).flat_map(|s| (0..n).map(move |d| (s, d))).collect();
        let mut ir = tiny();
        ir.layers[0].kind = LayerKind::Recurrent {
            out: n,
            weights: Tensor::from_f32(vec![n, 4], &[0.5; 20]),
            rec_weights: Tensor::from_f32(vec![25], &[0.25; 25]),
            edges,
        };
        let net = validate_and_lower(&ir).unwrap();
        assert_eq!(net.conns.len(), 2);
        let rec = &net.conns[1];
        assert_eq!(
            (rec.latency, rec.primary, rec.from),
            (1, false, Source::Pop(0))
        );
        assert_eq!(rec.kind.synapse_count(n), 25);

        let mut bad = tiny();
        bad.layers[0].kind = LayerKind::Fc {
            out: 2,
            weights: Tensor::from_f32(vec![2, 3], &[0.0; 6]),
            bias: None,
        };
        assert!(matches!(
            validate_and_lower(&bad),
            Err(IrError::Shape { .. })
        ));
        let mut bad = tiny();
        bad.layers[0].neuron = NeuronModel::Lif {
            tau: 0.5,
            v_th: 1e6,
        };
        assert!(matches!(
            validate_and_lower(&bad),
            Err(IrError::NotFp16 { .. })
        ));
    }
}
