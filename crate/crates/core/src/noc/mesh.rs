//! Cycle-level mesh of routers with bounded input queues.
//!
//! Each cycle every router looks at the head of its input queues in the
//! order N, E, S, W, Local and forwards the head packet on every output it
//! still owes, provided the output link is unused this cycle and the
//! downstream queue has room. A multicast head may be forwarded to some
//! outputs now and the rest later. Ejection to the local CC happens as soon
//! as a packet arrives and costs no cycle.
//!
//! Queues are split into virtual channels by routing phase: the approach
//! phase is plain XY routing and the in-region phases move in straight
//! lines, so waits only ever point from a lower phase to a higher one and the
//! network cannot deadlock. Within a port, higher phases are served first.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::Serialize;
use thiserror::Error;

use super::packet::{Coord, Packet, PacketType, HOST_AREA};
use super::routing::{route_next_hops, Grid, Hop, Port, RouteError};

pub const DEFAULT_QUEUE_DEPTH: usize = 16;
/// Virtual channels per input port, one per multicast routing phase.
pub const VCS: usize = 3;

fn slot(port: Port, vc: u8) -> usize {
    port.index() * VCS + vc as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Delivery {
    pub cycle: u64,
    pub at: Coord,
    pub packet: Packet,
    pub id: u64,
    pub latency: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NocError {
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error("source {0} outside the grid")]
    BadSource(Coord),
    #[error("no progress for {0} cycles with {1} packets in flight")]
    Stalled(u64, usize),
}

#[derive(Debug, Clone)]
struct Flit {
    id: u64,
    pending: Vec<Hop>,
}

#[derive(Debug, Clone, Default)]
struct Router {
    /// One queue per (input port, virtual channel); the channel is the
    /// routing phase the packet carried on the incoming link.
    inputs: [VecDeque<Flit>; 5 * VCS],
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct NocStats {
    pub injected: u64,
    pub injected_by_type: BTreeMap<String, u64>,
    pub delivered: u64,
    pub to_host: u64,
    pub link_traversals: u64,
    pub stall_events: u64,
    pub max_queue: usize,
    pub cycles: u64,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    grid: Grid,
    depth: usize,
    routers: Vec<Router>,
    cycle: u64,
    next_id: u64,
    born: BTreeMap<u64, u64>,
    live: BTreeMap<u64, u32>,
    deliveries: Vec<Delivery>,
    host_rx: Vec<Delivery>,
    link_use: Vec<[u64; 4]>,
    stats: NocStats,
    log: Option<Vec<Injection>>,
}

/// One injected packet; `src` is `None` for the host.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Injection {
    pub cycle: u64,
    pub src: Option<Coord>,
    pub packet: Packet,
}

impl Mesh {
    pub fn new(grid: Grid) -> Self {
        Mesh::with_depth(grid, DEFAULT_QUEUE_DEPTH)
    }

    pub fn with_depth(grid: Grid, depth: usize) -> Self {
        Mesh {
            grid,
            depth: depth.max(1),
            routers: vec![Router::default(); grid.len()],
            cycle: 0,
            next_id: 0,
            born: BTreeMap::new(),
            live: BTreeMap::new(),
            deliveries: Vec::new(),
            host_rx: Vec::new(),
            link_use: vec![[0; 4]; grid.len()],
            stats: NocStats::default(),
            log: None,
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn stats(&self) -> &NocStats {
        &self.stats
    }

    /// Number of distinct packets with copies still inside the mesh.
    pub fn in_flight(&self) -> usize {
        self.live.len()
    }

    pub fn is_idle(&self) -> bool {
        self.live.is_empty()
    }

    /// Traversals of the link leaving `c` through `p` (N/E/S/W).
    pub fn link_count(&self, c: Coord, p: Port) -> u64 {
        if p == Port::Local {
            return 0;
        }
        self.link_use[self.grid.index(c)][p.index()]
    }

    /// Starts or stops recording injected packets.
    pub fn set_log(&mut self, on: bool) {
        self.log = on.then(Vec::new);
    }

    pub fn take_log(&mut self) -> Vec<Injection> {
        self.log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn take_deliveries(&mut self) -> Vec<Delivery> {
        std::mem::take(&mut self.deliveries)
    }

    pub fn take_host(&mut self) -> Vec<Delivery> {
        std::mem::take(&mut self.host_rx)
    }

    /// Injects a packet from the CC at `src`; returns its id. The local
    /// injection queue is not bounded (it stands for the CC output buffer).
    pub fn inject(&mut self, src: Coord, packet: Packet) -> Result<u64, NocError> {
        if !self.grid.contains(src) {
            return Err(NocError::BadSource(src));
        }
        self.inject_at(src, Port::Local, packet)
    }

    /// Injects a packet from the host, attached to the west port of (0,0).
    pub fn inject_host(&mut self, packet: Packet) -> Result<u64, NocError> {
        self.inject_at(Coord::new(0, 0), Port::West, packet)
    }

    fn inject_at(&mut self, at: Coord, port: Port, packet: Packet) -> Result<u64, NocError> {
        let hops = route_next_hops(self.grid, at, port, &packet)?;
        let id = self.next_id;
        self.next_id += 1;
        self.born.insert(id, self.cycle);
        if let Some(log) = &mut self.log {
            log.push(Injection {
                cycle: self.cycle,
                src: (port == Port::Local).then_some(at),
                packet,
            });
        }
        self.stats.injected += 1;
        *self
            .stats
            .injected_by_type
            .entry(packet.ptype.name().to_string())
            .or_default() += 1;
        // the copy being injected counts as live until it is queued
        self.live.insert(id, 1);
        self.arrive(at, port, packet.phase, id, hops);
        self.drop_copy(id);
        Ok(id)
    }

    fn arrive(&mut self, at: Coord, port: Port, vc: u8, id: u64, hops: Vec<Hop>) {
        let mut pending = Vec::with_capacity(hops.len());
        for h in hops {
            if h.0 == Port::Local {
                self.deliveries.push(Delivery {
                    cycle: self.cycle,
                    at,
                    packet: h.1,
                    id,
                    latency: self.cycle - self.born[&id],
                });
                self.stats.delivered += 1;
            } else {
                pending.push(h);
            }
        }
        if pending.is_empty() {
            return;
        }
        *self.live.get_mut(&id).expect("live packet") += 1;
        let q = &mut self.routers[self.grid.index(at)].inputs[slot(port, vc)];
        q.push_back(Flit { id, pending });
        self.stats.max_queue = self.stats.max_queue.max(q.len());
    }

    fn drop_copy(&mut self, id: u64) {
        let c = self.live.get_mut(&id).expect("live packet");
        *c -= 1;
        if *c == 0 {
            self.live.remove(&id);
            self.born.remove(&id);
        }
    }

    /// Advances one cycle. Returns the number of link traversals made.
    pub fn step(&mut self) -> Result<usize, NocError> {
        let n = self.grid.len();
        // queues only shrink after every router has decided, so their
        // lengths below are this cycle's occupancy
        let mut reserved: HashMap<usize, usize> = HashMap::new();
        // (from, out port, id, packet) moves, applied after all routers decide
        let mut moves: Vec<(Coord, Port, u64, Packet)> = Vec::new();
        let mut host_moves: Vec<(u64, Packet)> = Vec::new();
        let mut active = Vec::new();
        for r in 0..n {
            if self.routers[r].inputs.iter().all(|q| q.is_empty()) {
                continue;
            }
            active.push(r);
            let here = self.grid.coord(r);
            let mut link_busy = [false; 4];
            for qi in (0..5 * VCS).map(|i| i / VCS * VCS + (VCS - 1 - i % VCS)) {
                let Some(head) = self.routers[r].inputs[qi].front_mut() else {
                    continue;
                };
                let id = head.id;
                let pending = std::mem::take(&mut head.pending);
                let mut keep = Vec::new();
                for (out, pk) in pending {
                    let oi = out.index();
                    if link_busy[oi] {
                        keep.push((out, pk));
                        continue;
                    }
                    match self.grid.neighbor(here, out) {
                        Some(nb) => {
                            let slot =
                                self.grid.index(nb) * 5 * VCS + slot(out.opposite(), pk.phase);
                            let q = &self.routers[slot / (5 * VCS)].inputs[slot % (5 * VCS)];
                            let r = reserved.entry(slot).or_insert(0);
                            if q.len() + *r >= self.depth {
                                keep.push((out, pk));
                                continue;
                            }
                            *r += 1;
                            *self.live.get_mut(&id).unwrap() += 1;
                            moves.push((here, out, id, pk));
                        }
                        None => {
                            debug_assert!(pk.dest == HOST_AREA);
                            *self.live.get_mut(&id).unwrap() += 1;
                            host_moves.push((id, pk));
                        }
                    }
                    link_busy[oi] = true;
                    self.link_use[r][oi] += 1;
                }
                if !keep.is_empty() {
                    self.stats.stall_events += 1;
                }
                self.routers[r].inputs[qi].front_mut().unwrap().pending = keep;
            }
        }
        for r in active {
            for q in self.routers[r].inputs.iter_mut() {
                if q.front().is_some_and(|f| f.pending.is_empty()) {
                    let f = q.pop_front().unwrap();
                    // moves made this cycle hold their own copies, so this never hits zero
                    *self.live.get_mut(&f.id).expect("live packet") -= 1;
                }
            }
        }
        self.cycle += 1;
        self.stats.cycles = self.cycle;
        let traversed = moves.len() + host_moves.len();
        self.stats.link_traversals += traversed as u64;
        for (id, pk) in host_moves {
            self.host_rx.push(Delivery {
                cycle: self.cycle,
                at: Coord::new(0, 0),
                packet: pk,
                id,
                latency: self.cycle - self.born[&id],
            });
            self.stats.to_host += 1;
            self.drop_copy(id);
        }
        for (from, out, id, pk) in moves {
            let to = self.grid.neighbor(from, out).unwrap();
            let inp = out.opposite();
            let hops = route_next_hops(self.grid, to, inp, &pk)?;
            self.arrive(to, inp, pk.phase, id, hops);
            self.drop_copy(id);
        }
        Ok(traversed)
    }

    /// Steps until no packet is in flight. Fails if `limit` consecutive
    /// cycles pass without any link traversal while packets are queued.
    pub fn run_until_idle(&mut self, limit: u64) -> Result<u64, NocError> {
        let start = self.cycle;
        let mut idle = 0;
        while !self.is_idle() {
            if self.step()? == 0 {
                idle += 1;
                if idle >= limit {
                    return Err(NocError::Stalled(idle, self.in_flight()));
                }
            } else {
                idle = 0;
            }
        }
        Ok(self.cycle - start)
    }
}

/// Counts packets of each routing mode in a batch, for reporting.
pub fn mode_histogram(packets: &[Packet]) -> BTreeMap<&'static str, usize> {
    let mut h = BTreeMap::new();
    for p in packets {
        let name = match p.ptype {
            PacketType::SpikeUnicast | PacketType::SpikeMulticast | PacketType::SpikeBroadcast => {
                p.ptype.name()
            }
            _ => "memory",
        };
        *h.entry(name).or_default() += 1;
    }
    h
}
