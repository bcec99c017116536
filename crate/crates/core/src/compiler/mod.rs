//! Compiler: network IR to a placed, routed chip configuration.
//!
//! Pipeline: lower, partition neurons into cores, merge cores, pack cores
//! into logical CCs, place CCs (zigzag start, then optimisation against a
//! profiled traffic matrix), generate images and tables, measure a cycle
//! budget on the finished artifact.

pub mod artifact;
pub mod codegen;
pub mod partition;
pub mod place;

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use artifact::{Artifact, ArtifactError, ChipRun, Meta, OutputSpike, PopInfo};
pub use codegen::{config_stream, CoreRecord, Image, ImageKind, InputRoute, OutputRecord};
pub use partition::{merge_cores, pack_ccs, partition, Mapping, Role};
pub use place::{objective, optimize_placement, place_initial, Node, Placer, Traffic};

use crate::cc::CcConfig;
use crate::chip::{ChipConfig, ChipState};
use crate::ir::presets::PresetError;
use crate::ir::{
    simulate, validate_and_lower, ConnKind, FunctionalTrace, IrError, LoweredNet, NetworkIR, Source,
};
use crate::neuron_core::{NeuronCoreConfig, DEFAULT_MEM_WORDS};
use crate::noc::Grid;
use crate::topology::{StorageReport, TopoError, DEFAULT_IE_CAPACITY};

#[derive(Debug, Error)]
pub enum CompileError {
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("does not fit: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Topo(#[from] TopoError),
    #[error(transparent)]
    Preset(#[from] PresetError),
    #[error("profiling run failed: {0}")]
    Profile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    /// Pack populations densely and merge cores with identical programs.
    MinCores,
    /// One population per CC, spread over its NCs.
    MaxThroughput,
}

impl FromStr for Target {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.replace('-', "_").as_str() {
            "min_cores" => Ok(Target::MinCores),
            "max_throughput" => Ok(Target::MaxThroughput),
            _ => Err(format!("unknown target {s:?} (min_cores, max_throughput)")),
        }
    }
}

impl FromStr for Placer {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "greedy" => Ok(Placer::Greedy),
            "sa" | "anneal" => Ok(Placer::Anneal),
            "none" | "zigzag" => Ok(Placer::None),
            _ => Err(format!("unknown placement {s:?} (greedy, sa, none)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompileOptions {
    pub grid: Grid,
    pub target: Target,
    pub placer: Placer,
    pub seed: u64,
    /// Objective evaluations (greedy) or attempted swaps (annealing).
    pub place_budget: usize,
    pub profile_steps: usize,
    /// Input spike probability per timestep during profiling.
    pub profile_rate: f64,
    pub mem_words: usize,
    /// Fan-out IEs per neuron and kind.
    pub ie_capacity: usize,
    pub budget_margin: f64,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions {
            grid: Grid::default(),
            target: Target::MinCores,
            placer: Placer::Greedy,
            seed: 0,
            place_budget: 20_000,
            profile_steps: 8,
            profile_rate: 0.25,
            mem_words: DEFAULT_MEM_WORDS,
            ie_capacity: DEFAULT_IE_CAPACITY,
            budget_margin: 1.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompileReport {
    pub target: Target,
    pub placer: Placer,
    pub seed: u64,
    pub neurons: u64,
    pub synapses: u64,
    pub physical_neurons: usize,
    pub ncs: usize,
    pub ccs: usize,
    pub connections: usize,
    pub objective_initial: u64,
    pub objective_final: u64,
    pub storage: StorageReport,
    pub memory_words: usize,
    pub profile_max_cycles: u64,
    pub cycle_budget: u64,
}

impl CompileReport {
    /// One `key=value` per line.
    pub fn to_text(&self) -> String {
        let st = &self.storage;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        kv("target", format!("{:?}", self.target));
        kv("placement", format!("{:?}", self.placer));
        kv("seed", self.seed.to_string());
        kv("neurons", self.neurons.to_string());
        kv("synapses", self.synapses.to_string());
        kv("physical_neurons", self.physical_neurons.to_string());
        kv("ncs", self.ncs.to_string());
        kv("ccs", self.ccs.to_string());
        kv("connections", self.connections.to_string());
        kv("objective_initial", self.objective_initial.to_string());
        kv("objective_final", self.objective_final.to_string());
        kv("memory_words", self.memory_words.to_string());
        kv("profile_max_cycles", self.profile_max_cycles.to_string());
        kv("cycle_budget", self.cycle_budget.to_string());
        kv("storage.fanin_des", st.fanin_des.to_string());
        for (i, n) in st.fanin_ies.iter().enumerate() {
            kv(&format!("storage.fanin_ies.type{i}"), n.to_string());
        }
        kv("storage.fanout_des", st.fanout_des.to_string());
        kv("storage.fanout_ies", st.fanout_ies.to_string());
        kv("storage.entries", st.entries().to_string());
        kv("storage.bits", st.bits().to_string());
        s
    }
}

pub fn compile(ir: &NetworkIR, opts: &CompileOptions) -> Result<Artifact, CompileError> {
    let net = validate_and_lower(ir)?;
    compile_lowered(&net, opts)
}

/// Seeded Bernoulli input spikes for profiling.
pub fn profile_inputs(n: u32, steps: usize, rate: f64, seed: u64) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..steps)
        .map(|_| (0..n).filter(|_| rng.gen::<f64>() < rate).collect())
        .collect()
}

/// Packets between logical CCs for a functional run: every source neuron
/// sends `spikes + 1` packets to each CC its connections reach, so silent
/// neurons still pull their consumers closer.
pub fn traffic(
    net: &LoweredNet,
    m: &Mapping,
    inputs: &[Vec<u32>],
    trace: &FunctionalTrace,
) -> Traffic {
    let homes = m.homes(net);
    let mut t = Traffic::new(m.cc_count());
    let count = |src: Source, i: u32| -> u64 {
        let s = match src {
            Source::Input => inputs.iter().filter(|x| x.contains(&i)).count(),
            Source::Pop(p) => trace
                .spikes
                .iter()
                .filter(|x| x[p].binary_search(&i).is_ok())
                .count(),
        };
        s as u64 + 1
    };
    let node = |src: Source, i: u32| match src {
        Source::Input => Node::Host,
        Source::Pop(p) => Node::Cc(homes[p][i as usize].soma.cc as usize),
    };
    for c in &net.conns {
        let n_src = net.source_size(c.from);
        let mut dst: Vec<Vec<usize>> = vec![Vec::new(); n_src as usize];
        if let ConnKind::Full { .. } = c.kind {
            let mut all: Vec<usize> = homes[c.to].iter().map(|h| h.soma.cc as usize).collect();
            all.sort_unstable();
            all.dedup();
            dst.iter_mut().for_each(|d| *d = all.clone());
        } else {
            for (s, d, _) in c.kind.synapses(net.pops[c.to].size()) {
                dst[s as usize].push(homes[c.to][d as usize].soma.cc as usize);
            }
        }
        for (s, mut ccs) in dst.into_iter().enumerate() {
            ccs.sort_unstable();
            ccs.dedup();
            let n = count(c.from, s as u32);
            for cc in ccs {
                t.add(node(c.from, s as u32), Node::Cc(cc), n);
            }
        }
    }
    for (p, pop) in net.pops.iter().enumerate() {
        if pop.output {
            for i in 0..pop.size() {
                t.add(
                    node(Source::Pop(p), i),
                    Node::Host,
                    count(Source::Pop(p), i),
                );
            }
        }
    }
    t.compact();
    t
}

pub fn chip_config_for(opts: &CompileOptions) -> ChipConfig {
    ChipConfig {
        grid: opts.grid,
        cc: CcConfig {
            nc: NeuronCoreConfig {
                mem_words: opts.mem_words,
                ..Default::default()
            },
            ..Default::default()
        },
        ..Default::default()
    }
}

/// Partitioning, merging and CC packing, without placement.
pub fn map_net(net: &LoweredNet, opts: &CompileOptions) -> Result<Mapping, CompileError> {
    let ctx = partition::Ctx {
        net,
        mem_words: opts.mem_words,
        target: opts.target,
    };
    let mut m = partition(&ctx)?;
    merge_cores(&mut m, opts.mem_words, opts.target);
    pack_ccs(&mut m, opts.target);
    Ok(m)
}

pub fn compile_lowered(net: &LoweredNet, opts: &CompileOptions) -> Result<Artifact, CompileError> {
    let m = map_net(net, opts)?;
    let start = place_initial(m.cc_count(), opts.grid)?;

    let inputs = profile_inputs(
        net.input_size(),
        opts.profile_steps,
        opts.profile_rate,
        opts.seed,
    );
    let trace = simulate(net, &inputs);
    let tr = traffic(net, &m, &inputs, &trace);
    let coords = optimize_placement(
        &tr,
        &start,
        opts.grid,
        opts.placer,
        opts.place_budget,
        opts.seed,
    );

    let g = codegen::generate(
        net,
        &m,
        &coords,
        opts.grid,
        opts.mem_words,
        opts.ie_capacity,
    )?;
    let config = config_stream(&g.images, &coords);
    let report = CompileReport {
        target: opts.target,
        placer: opts.placer,
        seed: opts.seed,
        neurons: net.neuron_count(),
        synapses: net.synapse_count(),
        physical_neurons: m.cores.iter().map(|c| c.slots.len()).sum(),
        ncs: m.nc_count(),
        ccs: m.cc_count(),
        connections: g.connections,
        objective_initial: objective(&tr, &start),
        objective_final: objective(&tr, &coords),
        storage: g.tables.report(),
        memory_words: g.cores.iter().map(|c| c.mem_words).sum(),
        profile_max_cycles: 0,
        cycle_budget: 0,
    };
    let mut art = Artifact {
        meta: Meta {
            name: net.name.clone(),
            rows: opts.grid.rows,
            cols: opts.grid.cols,
            input_shape: net.input_shape,
            timesteps: net.timesteps,
            pops: net
                .pops
                .iter()
                .map(|p| PopInfo {
                    name: p.name.clone(),
                    shape: p.shape,
                })
                .collect(),
            placement: coords,
            inputs: g.inputs,
            outputs: g.outputs,
            cores: g.cores,
            cycle_budget: 0,
            report,
        },
        config,
        images: g.images,
    };

    // cycle budget from a profiling run of the finished artifact
    let mut chip =
        ChipState::new(chip_config_for(opts)).map_err(|e| CompileError::Profile(e.to_string()))?;
    let run = art
        .load(&mut chip)
        .and_then(|_| art.run_on(&mut chip, &inputs))
        .map_err(|e| CompileError::Profile(e.to_string()))?;
    let max = run.raw.stats.wall_cycles.iter().copied().max().unwrap_or(0);
    let budget = (max as f64 * opts.budget_margin).ceil() as u64;
    art.meta.report.profile_max_cycles = max;
    art.meta.report.cycle_budget = budget;
    art.meta.cycle_budget = budget;
    Ok(art)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::NeuronModel;
    use crate::models::Builder;

    fn run_both(ir: &NetworkIR, opts: &CompileOptions, steps: usize, rate: f64) {
        let net = validate_and_lower(ir).unwrap();
        let art = compile_lowered(&net, opts).unwrap();
        let inputs = profile_inputs(net.input_size(), steps, rate, 77);
        let want = simulate(&net, &inputs);
        let mut cfg = chip_config_for(opts);
        cfg.grid = opts.grid;
        let mut chip = ChipState::new(cfg).unwrap();
        chip.set_trace(true);
        art.load(&mut chip).unwrap();
        let run = art.run_on(&mut chip, &inputs).unwrap();
        let got = art.pop_spikes(&run.raw);
        for t in 0..steps {
            for p in 0..net.pops.len() {
                if net.pops[p].params.spiking() {
                    assert_eq!(
                        got[t][p], want.spikes[t][p],
                        "t={t} pop={}",
                        net.pops[p].name
                    );
                }
            }
            for (o, rec) in art.meta.outputs.iter().enumerate() {
                if rec.value {
                    let v: Vec<_> = run.values[t][o].iter().map(|x| x.1).collect();
                    assert_eq!(v, want.values[t][rec.pop]);
                } else {
                    assert_eq!(run.spikes[t][o], want.spikes[t][rec.pop]);
                }
            }
        }
        assert!(
            want.spikes.iter().flatten().map(|s| s.len()).sum::<usize>() > 0,
            "network is silent"
        );
    }

    #[test]
    fn two_layer_fc() {
        let mut b = Builder::new("fc2", [1, 1, 32], 8, 1);
        b.fc("h", 40).fc("o", 10).output();
        run_both(&b.build(), &CompileOptions::default(), 12, 0.4);
    }

    #[test]
    fn mixed_layers() {
        let mut b = Builder::new("mix", [2, 8, 8], 8, 2);
        b.conv("c1", 4, 3, 1, 1, None)
            .pool("p1", 2, 0.5)
            .conv("c2", 6, 3, 1, 1, Some(2))
            .fc("f1", 12)
            .sparse("s1", 20, 0.3)
            .recurrent("r1", 12, 0.2)
            .model(NeuronModel::Alif {
                tau: 0.5,
                v_th: 1.0,
                beta: 0.25,
                rho: 0.5,
            })
            .fc("o", 5)
            .model(NeuronModel::Integrator { tau: 0.5 })
            .output();
        b.skip("f1", "r1");
        for target in [Target::MinCores, Target::MaxThroughput] {
            for placer in [Placer::Greedy, Placer::Anneal] {
                let opts = CompileOptions {
                    target,
                    placer,
                    ..Default::default()
                };
                run_both(&b.build(), &opts, 10, 0.5);
            }
        }
    }

    #[test]
    fn psum_and_dendrites() {
        let mut b = Builder::new("wide", [1, 1, 4096], 4, 3);
        b.step = 1.0 / 64.0;
        b.lo = -1.0 / 64.0;
        b.hi = 2.0 / 64.0;
        b.fc("h", 3).fc("d", 4).model(NeuronModel::DhLif {
            tau: 0.5,
            v_th: 0.5,
            branch_tau: vec![0.5, 0.25],
        });
        b.fc("o", 2).output();
        let opts = CompileOptions::default();
        run_both(&b.build(), &opts, 6, 0.2);
        let net = validate_and_lower(&b.build()).unwrap();
        let art = compile_lowered(&net, &opts).unwrap();
        // soma plus parts of one neuron share an NC
        let c = &art.meta.cores[0];
        assert_eq!(
            &c.slots[..3],
            &[
                (0, 0, Role::Part(0)),
                (0, 0, Role::Part(1)),
                (0, 0, Role::Soma)
            ]
        );
    }

    #[test]
    fn deterministic_bytes() {
        let mut b = Builder::new("det", [1, 4, 4], 4, 4);
        b.conv("c", 3, 3, 1, 1, None).fc("o", 6).output();
        let opts = CompileOptions {
            placer: Placer::Anneal,
            seed: 11,
            ..Default::default()
        };
        let a = compile(&b.build(), &opts).unwrap().to_bytes();
        let c = compile(&b.build(), &opts).unwrap().to_bytes();
        assert_eq!(a, c);
        assert_eq!(&a[..4], b"TBAI");
        let back = Artifact::from_bytes(&a).unwrap();
        assert_eq!(back.to_bytes(), a);
    }

    #[test]
    fn merge_two_half_cores() {
        let mut b = Builder::new("m", [1, 1, 16], 4, 5);
        b.fc("a", 120).fc("b", 120).output();
        let net = validate_and_lower(&b.build()).unwrap();
        let ctx = partition::Ctx {
            net: &net,
            mem_words: DEFAULT_MEM_WORDS,
            target: Target::MinCores,
        };
        let mut m = partition(&ctx).unwrap();
        assert_eq!(m.cores.len(), 2);
        merge_cores(&mut m, DEFAULT_MEM_WORDS, Target::MaxThroughput);
        assert_eq!(m.cores.len(), 2);
        merge_cores(&mut m, DEFAULT_MEM_WORDS, Target::MinCores);
        assert_eq!(m.cores.len(), 1);
        run_both(&b.build(), &CompileOptions::default(), 8, 0.5);
    }

    #[test]
    fn empty_network() {
        let ir = NetworkIR {
            name: "empty".into(),
            input: [1, 1, 1],
            timesteps: 1,
            layers: vec![],
            skips: vec![],
        };
        let art = compile(&ir, &CompileOptions::default()).unwrap();
        assert!(art.config.is_empty());
        assert_eq!(Artifact::from_bytes(&art.to_bytes()).unwrap(), art);
    }

    #[test]
    fn budget_covers_profile() {
        let mut b = Builder::new("b", [1, 1, 20], 4, 6);
        b.fc("h", 30).fc("o", 4).output();
        let art = compile(&b.build(), &CompileOptions::default()).unwrap();
        assert!(art.meta.cycle_budget >= art.meta.report.profile_max_cycles);
        assert!(art.meta.cycle_budget > 0);
    }
}
