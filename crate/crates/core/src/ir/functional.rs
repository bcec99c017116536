//! Functional simulator for lowered networks.
//!
//! Works directly on populations and connections, with the same FP16
//! update rules as the neuron presets. Within a timestep, contributions are
//! summed per connection in source order; when the summation order is not
//! exact in FP16 the chip may differ in the last bits.

use super::lower::{LoweredNet, ModelKind, Source};
use crate::word16::{diff_step, fp_add, fp_mul};
use crate::Word16;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FunctionalTrace {
    /// `spikes[t][pop]`: firing neurons in ascending order.
    pub spikes: Vec<Vec<Vec<u32>>>,
    /// `values[t][pop]`: integrator readouts (empty for spiking layers).
    pub values: Vec<Vec<Vec<Word16>>>,
}

impl FunctionalTrace {
    pub fn spike_total(&self, pop: usize) -> usize {
        self.spikes.iter().map(|s| s[pop].len()).sum()
    }
}

#[derive(Clone)]
struct State {
    v: Vec<Word16>,
    a: Vec<Word16>,
    s_prev: Vec<Word16>,
    branch: Vec<Vec<Word16>>,
}

/// `inputs[t]` lists the input indices spiking at `t`.
pub fn simulate(net: &LoweredNet, inputs: &[Vec<u32>]) -> FunctionalTrace {
    let fanout: Vec<Vec<Vec<(u32, Word16)>>> = net
        .conns
        .iter()
        .map(|c| {
            let mut by = vec![Vec::new(); net.source_size(c.from) as usize];
            for (s, d, w) in c.kind.synapses(net.pops[c.to].size()) {
                by[s as usize].push((d, w));
            }
            by
        })
        .collect();
    let branches: Vec<Option<Vec<std::ops::Range<u32>>>> =
        (0..net.pops.len()).map(|p| net.branches(p)).collect();
    let mut st: Vec<State> = net
        .pops
        .iter()
        .enumerate()
        .map(|(p, pop)| {
            let n = pop.size() as usize;
            let nb = branches[p].as_ref().map_or(0, |b| b.len());
            State {
                v: vec![Word16::ZERO; n],
                a: vec![Word16::ZERO; n],
                s_prev: vec![Word16::ZERO; n],
                branch: vec![vec![Word16::ZERO; nb]; n],
            }
        })
        .collect();
    let mut trace = FunctionalTrace::default();
    for t in 0..inputs.len() {
        let mut cur: Vec<Vec<Word16>> = net
            .pops
            .iter()
            .map(|p| (0..p.size() as usize).map(|i| p.params.bias(i)).collect())
            .collect();
        let mut bcur: Vec<Vec<Vec<Word16>>> = st
            .iter()
            .map(|s| {
                s.branch
                    .iter()
                    .map(|b| vec![Word16::ZERO; b.len()])
                    .collect()
            })
            .collect();
        for (ci, c) in net.conns.iter().enumerate() {
            let lat = c.latency as usize;
            if t < lat {
                continue;
            }
            let src: &[u32] = match c.from {
                Source::Input => &inputs[t - lat],
                Source::Pop(q) => &trace.spikes[t - lat][q],
            };
            let br = if c.primary {
                branches[c.to].as_ref()
            } else {
                None
            };
            for &s in src {
                for &(d, w) in &fanout[ci][s as usize] {
                    match br {
                        Some(r) => {
                            let b = r.iter().position(|x| x.contains(&s)).unwrap();
                            let x = &mut bcur[c.to][d as usize][b];
                            *x = fp_add(*x, w);
                        }
                        None => {
                            let x = &mut cur[c.to][d as usize];
                            *x = fp_add(*x, w);
                        }
                    }
                }
            }
        }
        let mut spikes = Vec::with_capacity(net.pops.len());
        let mut values = Vec::with_capacity(net.pops.len());
        for (p, pop) in net.pops.iter().enumerate() {
            let prm = &pop.params;
            let s = &mut st[p];
            let mut fired = Vec::new();
            let mut vals = Vec::new();
            for i in 0..pop.size() as usize {
                let mut current = cur[p][i];
                if let ModelKind::DhLif { branch_tau } = &prm.kind {
                    for (b, tb) in branch_tau.iter().enumerate() {
                        s.branch[i][b] = diff_step(s.branch[i][b], *tb, bcur[p][i][b]);
                        current = fp_add(current, s.branch[i][b]);
                    }
                }
                let v = diff_step(s.v[i], prm.tau, current);
                s.v[i] = v;
                let th = match &prm.kind {
                    ModelKind::Integrator => {
                        vals.push(v);
                        continue;
                    }
                    ModelKind::Alif { beta, rho } => {
                        s.a[i] = diff_step(s.a[i], *rho, s.s_prev[i]);
                        fp_add(fp_mul(s.a[i], *beta), prm.v_th(i))
                    }
                    _ => prm.v_th(i),
                };
                let spike = !(v.to_f32() < th.to_f32());
                if spike {
                    s.v[i] = Word16::ZERO;
                    fired.push(i as u32);
                }
                s.s_prev[i] = if spike { Word16::FP_ONE } else { Word16::ZERO };
            }
            spikes.push(fired);
            values.push(vals);
        }
        trace.spikes.push(spikes);
        trace.values.push(values);
    }
    trace
}

#[cfg(test)]
mod tests {
    use super::super::lower::validate_and_lower;
    use super::super::tests::tiny;
    use super::*;

    #[test]
    fn tiny_fc() {
        let net = validate_and_lower(&tiny()).unwrap();
        // neuron 1 sums all inputs with weight 1: one input -> 1.0 >= 1.0
        let tr = simulate(&net, &[vec![0], vec![], vec![2, 3]]);
        assert_eq!(tr.spikes[0][0], vec![1]);
        assert!(tr.spikes[1][0].is_empty());
        // neuron 0: v = 0.5*0.25 + (-1 + 2) = 1.125 -> spikes
        assert_eq!(tr.spikes[2][0], vec![0, 1]);
    }
}
