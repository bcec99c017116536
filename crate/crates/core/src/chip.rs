//! Whole-chip simulator: INIT, then (INTEG, FIRE) per timestep.
//!
//! Timing of one timestep `t`:
//! 1. host inputs for `t` are injected and the mesh runs to idle;
//! 2. every CC handles the packets held from FIRE(t-1) followed by the
//!    input packets, in delivery order, and drains its cores (INTEG);
//! 3. every CC runs FIRE and fan-out; the packets are injected in CC order
//!    and the mesh runs to idle. Deliveries to the host are the outputs of
//!    `t`; deliveries to CCs are held for INTEG(t+1).
//!
//! CCs are advanced in parallel with rayon; every cross-CC effect goes
//! through the mesh, which is stepped on one thread, so results do not
//! depend on the number of workers.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cc::{CcConfig, CcError, CcPhase, CcState, SpikeRecord, NCS_PER_CC};
use crate::neuron_core::InputEvent;
use crate::noc::{
    Coord, Grid, Injection, Mesh, NocError, Packet, PacketType, Port, DEFAULT_QUEUE_DEPTH,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChipError {
    #[error("CC {at:?}: {err}")]
    Cc { at: Coord, err: CcError },
    #[error(transparent)]
    Noc(#[from] NocError),
    #[error("artifact grid {0}x{1} does not fit chip grid {2}x{3}")]
    ShapeMismatch(u8, u8, u8, u8),
    #[error("config packet for {0:?} must target a single CC")]
    BadConfigTarget(Coord),
    #[error("chip is in {0:?}, operation needs {1:?}")]
    Phase(CcPhase, CcPhase),
    #[error(
        "timestep {t} needed {cycles} cycles, budget is {budget} (spike loop inside a timestep?)"
    )]
    NonQuiescent { t: u32, cycles: u64, budget: u64 },
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Exact mode runs each stage to global quiescence; budget mode also
/// requires every timestep to finish within a fixed number of cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunMode {
    Exact,
    Budget(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChipConfig {
    pub grid: Grid,
    pub cc: CcConfig,
    pub queue_depth: usize,
    /// Stall limit handed to the mesh.
    pub stall_limit: u64,
    /// 0 uses rayon's global pool.
    pub threads: usize,
    pub mode: RunMode,
}

impl Default for ChipConfig {
    fn default() -> Self {
        ChipConfig {
            grid: Grid::default(),
            cc: CcConfig::default(),
            queue_depth: DEFAULT_QUEUE_DEPTH,
            stall_limit: 10_000,
            threads: 0,
            mode: RunMode::Exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Joules per synaptic operation.
    pub e_sop: f64,
    /// Joules per link traversal.
    pub e_hop: f64,
    /// Static power in watts.
    pub p_static: f64,
    /// Seconds per cycle.
    pub cycle_time: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            e_sop: 2.61e-12,
            e_hop: 0.0,
            p_static: 0.0,
            cycle_time: 2e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub energy_j: f64,
    pub sop_energy_j: f64,
    pub hop_energy_j: f64,
    pub static_energy_j: f64,
    pub elapsed_s: f64,
    pub avg_power_w: f64,
    /// One run is one sample.
    pub samples_per_s: f64,
    pub timesteps_per_s: f64,
}

pub fn estimate(stats: &RunStats, cm: &CostModel) -> Estimate {
    let elapsed_s = stats.total_cycles() as f64 * cm.cycle_time;
    let sop_energy_j = stats.sop_count as f64 * cm.e_sop;
    let hop_energy_j = stats.link_traversals as f64 * cm.e_hop;
    let static_energy_j = elapsed_s * cm.p_static;
    let energy_j = sop_energy_j + hop_energy_j + static_energy_j;
    let per = |x: f64| if elapsed_s > 0.0 { x / elapsed_s } else { 0.0 };
    Estimate {
        energy_j,
        sop_energy_j,
        hop_energy_j,
        static_energy_j,
        elapsed_s,
        avg_power_w: per(energy_j),
        samples_per_s: per(1.0),
        timesteps_per_s: per(stats.timesteps as f64),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub timesteps: u32,
    pub sop_count: u64,
    pub spikes: u64,
    /// Spike-type packets caused by spikes; integrator readouts excluded.
    pub spike_packets: u64,
    pub value_packets: u64,
    /// Injected packets by type name.
    pub packets: BTreeMap<String, u64>,
    pub host_packets_out: u64,
    pub link_traversals: u64,
    /// Per CC (row-major), traversals of the N, E, S, W output links.
    pub link_use: Vec<[u64; 4]>,
    /// Per CC (row-major), busy cycles of each NC.
    pub nc_busy: Vec<[u64; NCS_PER_CC]>,
    pub drops: u64,
    pub noc_cycles: u64,
    pub wall_cycles: Vec<u64>,
    /// Filled by the artifact layer: spikes per named layer.
    pub layer_spikes: BTreeMap<String, u64>,
    pub layer_rates: BTreeMap<String, f64>,
    pub energy_j: f64,
}

impl RunStats {
    pub fn total_cycles(&self) -> u64 {
        self.wall_cycles.iter().sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }
}

/// Input event seen by a core: timestep, CC index, NC, event.
pub type TraceEvent = (u32, u32, u8, InputEvent);
/// Fired neuron: timestep, CC index, record.
pub type TraceSpike = (u32, u32, SpikeRecord);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutput {
    /// Host-bound packets of each timestep, in arrival order.
    pub outputs: Vec<Vec<Packet>>,
    pub stats: RunStats,
    pub events: Vec<TraceEvent>,
    pub spikes: Vec<TraceSpike>,
    /// Every injected packet with its timestep.
    pub packets: Vec<(u32, Injection)>,
}

pub struct ChipState {
    pub config: ChipConfig,
    pub ccs: Vec<CcState>,
    pub mesh: Mesh,
    pub phase: CcPhase,
    pub timestep: u32,
    /// CC deliveries held for the next INTEG, per CC.
    held: Vec<Vec<Packet>>,
    /// Memory read responses that reached the host.
    pub host_rx: Vec<Packet>,
    trace: bool,
    pool: Option<rayon::ThreadPool>,
}

impl ChipState {
    pub fn new(config: ChipConfig) -> Result<Self, ChipError> {
        let grid = config.grid;
        let ccs = (0..grid.len())
            .map(|i| CcState::new(grid.coord(i), config.cc))
            .collect();
        let pool = if config.threads > 0 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.threads)
                    .build()
                    .map_err(|e| ChipError::Pool(e.to_string()))?,
            )
        } else {
            None
        };
        Ok(ChipState {
            mesh: Mesh::with_depth(grid, config.queue_depth),
            held: vec![Vec::new(); grid.len()],
            config,
            ccs,
            phase: CcPhase::Init,
            timestep: 0,
            host_rx: Vec::new(),
            trace: false,
            pool,
        })
    }

    pub fn grid(&self) -> Grid {
        self.config.grid
    }

    pub fn cc(&self, c: Coord) -> &CcState {
        &self.ccs[self.config.grid.index(c)]
    }

    pub fn cc_mut(&mut self, c: Coord) -> &mut CcState {
        let i = self.config.grid.index(c);
        &mut self.ccs[i]
    }

    /// Records per-timestep input events, spikes and injected packets in
    /// the run output.
    pub fn set_trace(&mut self, on: bool) {
        self.trace = on;
        self.mesh.set_log(on);
    }

    pub fn check_shape(&self, rows: u8, cols: u8) -> Result<(), ChipError> {
        let g = self.config.grid;
        if rows > g.rows || cols > g.cols {
            return Err(ChipError::ShapeMismatch(rows, cols, g.rows, g.cols));
        }
        Ok(())
    }

    fn config_target(&self, p: &Packet) -> Result<usize, ChipError> {
        let at = Coord::new(p.dest.y0, p.dest.x0);
        if !p.dest.is_single() || !self.config.grid.contains(at) {
            return Err(ChipError::BadConfigTarget(at));
        }
        Ok(self.config.grid.index(at))
    }

    /// Replays a config stream. Packets go straight to the scheduler of
    /// their CC; the transport of configuration is not timed.
    pub fn load_config(&mut self, stream: &[Packet]) -> Result<(), ChipError> {
        if self.phase != CcPhase::Init {
            return Err(ChipError::Phase(self.phase, CcPhase::Init));
        }
        for p in stream {
            let i = self.config_target(p)?;
            let at = self.ccs[i].coord;
            if let Some(resp) = self.ccs[i]
                .handle_packet(p)
                .map_err(|err| ChipError::Cc { at, err })?
            {
                self.host_rx.push(resp);
            }
        }
        Ok(())
    }

    /// Reads one config word of the CC at `at` with a read request.
    pub fn read_back(&mut self, at: Coord, addr: u32) -> Result<u16, ChipError> {
        let p = Packet::mem(
            PacketType::MemReadReq,
            crate::noc::Area::single(at),
            addr,
            0,
        );
        let i = self.config_target(&p)?;
        let resp = self.ccs[i]
            .handle_packet(&p)
            .map_err(|err| ChipError::Cc { at, err })?
            .expect("read request answers");
        Ok(resp.payload)
    }

    /// Leaves INIT on every CC.
    pub fn start(&mut self) -> Result<(), ChipError> {
        if self.phase != CcPhase::Init {
            return Err(ChipError::Phase(self.phase, CcPhase::Init));
        }
        for cc in &mut self.ccs {
            let at = cc.coord;
            cc.start().map_err(|err| ChipError::Cc { at, err })?;
        }
        self.phase = CcPhase::Integ;
        Ok(())
    }

    pub fn hosted_neurons(&self) -> usize {
        self.ccs.iter().map(|c| c.hosted_total()).sum()
    }

    fn par<F, R>(&mut self, f: F) -> Vec<R>
    where
        F: Fn(usize, &mut CcState) -> R + Sync + Send,
        R: Send,
    {
        let ccs = &mut self.ccs;
        let mut run = move || {
            ccs.par_iter_mut()
                .enumerate()
                .map(|(i, c)| f(i, c))
                .collect::<Vec<R>>()
        };
        match &self.pool {
            Some(p) => p.install(run),
            None => run(),
        }
    }

    fn mesh_to_idle(&mut self) -> Result<u64, ChipError> {
        Ok(self.mesh.run_until_idle(self.config.stall_limit)?)
    }

    /// Runs `inputs.len()` timesteps. `inputs[t]` are host packets.
    pub fn run_timesteps(&mut self, inputs: &[Vec<Packet>]) -> Result<RunOutput, ChipError> {
        if self.phase == CcPhase::Init {
            self.start()?;
        }
        let grid = self.config.grid;
        let trace = self.trace;
        for cc in &mut self.ccs {
            cc.event_log = trace.then(Vec::new);
            cc.spike_log = trace.then(Vec::new);
            cc.take_busy();
        }
        let sop0: u64 = self.ccs.iter().map(|c| c.sops()).sum();
        let stats0 = self.mesh.stats().clone();
        let spikes0: u64 = self.ccs.iter().map(|c| c.stats.spikes).sum();
        let values0: u64 = self.ccs.iter().map(|c| c.stats.value_packets).sum();
        let drops0: u64 = self.ccs.iter().map(|c| c.stats.drops).sum();
        let busy0: Vec<_> = self.ccs.iter().map(|c| c.nc_cycles()).collect();
        let links0: Vec<[u64; 4]> = (0..grid.len())
            .map(|i| link_row(&self.mesh, grid.coord(i)))
            .collect();

        let mut out = RunOutput::default();
        for input in inputs {
            let t = self.timestep;
            let mut cycles = 0;

            // INTEG
            for p in input {
                self.mesh.inject_host(*p)?;
            }
            cycles += self.mesh_to_idle()?;
            for d in self.mesh.take_deliveries() {
                self.held[grid.index(d.at)].push(d.packet);
            }
            for d in self.mesh.take_host() {
                self.host_rx.push(d.packet);
            }
            let taken = std::mem::replace(&mut self.held, vec![Vec::new(); grid.len()]);
            let res = self.par(|i, cc| -> Result<Vec<Packet>, CcError> {
                let mut resp = Vec::new();
                for p in &taken[i] {
                    resp.extend(cc.handle_packet(p)?);
                }
                cc.drain()?;
                Ok(resp)
            });
            for (i, r) in res.into_iter().enumerate() {
                let resp = r.map_err(|err| ChipError::Cc {
                    at: grid.coord(i),
                    err,
                })?;
                self.host_rx.extend(resp);
            }

            // FIRE
            self.phase = CcPhase::Fire;
            let fired = self.par(|_, cc| cc.fire(t));
            let mut to_inject = Vec::new();
            for (i, r) in fired.into_iter().enumerate() {
                let at = grid.coord(i);
                let pk = r.map_err(|err| ChipError::Cc { at, err })?;
                to_inject.push((at, pk));
            }
            for (at, pk) in to_inject {
                for p in pk {
                    self.mesh.inject(at, p)?;
                }
            }
            cycles += self.mesh_to_idle()?;
            for d in self.mesh.take_deliveries() {
                self.held[grid.index(d.at)].push(d.packet);
            }
            let outs: Vec<Packet> = self
                .mesh
                .take_host()
                .into_iter()
                .map(|d| d.packet)
                .collect();
            self.phase = CcPhase::Integ;

            cycles += self
                .ccs
                .iter_mut()
                .map(|c| c.take_busy())
                .max()
                .unwrap_or(0);
            if let RunMode::Budget(budget) = self.config.mode {
                if cycles > budget {
                    return Err(ChipError::NonQuiescent { t, cycles, budget });
                }
            }
            if trace {
                for (i, cc) in self.ccs.iter_mut().enumerate() {
                    for (nc, ev) in cc.event_log.as_mut().unwrap().drain(..) {
                        out.events.push((t, i as u32, nc, ev));
                    }
                    for s in cc.spike_log.as_mut().unwrap().drain(..) {
                        out.spikes.push((t, i as u32, s));
                    }
                }
                out.packets
                    .extend(self.mesh.take_log().into_iter().map(|p| (t, p)));
            }
            out.stats.wall_cycles.push(cycles);
            out.outputs.push(outs);
            self.timestep += 1;
        }

        let ns = self.mesh.stats();
        let s = &mut out.stats;
        s.timesteps = inputs.len() as u32;
        s.sop_count = self.ccs.iter().map(|c| c.sops()).sum::<u64>() - sop0;
        s.spikes = self.ccs.iter().map(|c| c.stats.spikes).sum::<u64>() - spikes0;
        s.drops = self.ccs.iter().map(|c| c.stats.drops).sum::<u64>() - drops0;
        for (k, v) in &ns.injected_by_type {
            let d = v - stats0.injected_by_type.get(k).copied().unwrap_or(0);
            if d > 0 {
                s.packets.insert(k.clone(), d);
            }
        }
        s.value_packets = self.ccs.iter().map(|c| c.stats.value_packets).sum::<u64>() - values0;
        s.spike_packets = PacketType::ALL
            .iter()
            .filter(|p| p.is_spike())
            .map(|p| s.packets.get(p.name()).copied().unwrap_or(0))
            .sum::<u64>()
            - s.value_packets;
        s.host_packets_out = ns.to_host - stats0.to_host;
        s.link_traversals = ns.link_traversals - stats0.link_traversals;
        s.noc_cycles = ns.cycles - stats0.cycles;
        s.link_use = (0..grid.len())
            .map(|i| {
                let now = link_row(&self.mesh, grid.coord(i));
                std::array::from_fn(|k| now[k] - links0[i][k])
            })
            .collect();
        s.nc_busy = self
            .ccs
            .iter()
            .zip(&busy0)
            .map(|(c, b)| {
                let now = c.nc_cycles();
                std::array::from_fn(|k| now[k] - b[k])
            })
            .collect();
        s.energy_j = estimate(s, &CostModel::default()).energy_j;
        Ok(out)
    }
}

fn link_row(mesh: &Mesh, c: Coord) -> [u64; 4] {
    [Port::North, Port::East, Port::South, Port::West].map(|p| mesh.link_count(c, p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_is_linear() {
        let s = RunStats {
            sop_count: 1_000_000_000,
            wall_cycles: vec![500],
            timesteps: 1,
            ..Default::default()
        };
        let e = estimate(&s, &CostModel::default());
        assert!((e.energy_j - 2.61e-3).abs() < 1e-15);
        let cm = CostModel {
            e_sop: 2.0 * 2.61e-12,
            ..Default::default()
        };
        assert_eq!(estimate(&s, &cm).sop_energy_j, 2.0 * e.sop_energy_j);
        let idle = RunStats {
            wall_cycles: vec![100, 100],
            ..Default::default()
        };
        let cm = CostModel {
            p_static: 0.5,
            ..Default::default()
        };
        assert_eq!(estimate(&idle, &cm).energy_j, 200.0 * 2e-9 * 0.5);
    }

    #[test]
    fn empty_chip_runs_idle() {
        let mut chip = ChipState::new(ChipConfig::default()).unwrap();
        chip.load_config(&[]).unwrap();
        assert_eq!(chip.hosted_neurons(), 0);
        let out = chip.run_timesteps(&vec![Vec::new(); 4]).unwrap();
        assert_eq!(out.stats.sop_count, 0);
        assert_eq!(out.stats.spike_packets, 0);
        assert!(out.outputs.iter().all(|o| o.is_empty()));
        assert!(chip.check_shape(12, 12).is_err());
    }
}
