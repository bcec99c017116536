//! Cortical column: scheduler, topology tables and eight neuron cores.
//!
//! Everything configurable sits in a 20-bit word-addressed config space:
//!
//! | range               | content                                         |
//! |---------------------|-------------------------------------------------|
//! | `0x00000..0x40000`  | NC data memory, `nc << 15 | word`               |
//! | `0x40000..0x48000`  | NC program image, `0x40000 + nc << 12 | word`   |
//! | `0x48000..0x48080`  | NC control, `0x48000 + nc << 4 | reg`           |
//! | `0x50000..0x80000`  | fan-in DT, 3 words per DE                       |
//! | `0x80000..0xC0000`  | fan-in IT, 4 words per IE                       |
//! | `0xC0000..0xD0000`  | fan-out DT, 4 words per DE, neuron `nc<<8|slot` |
//! | `0xD0000..0x100000` | fan-out IT, 4 words per IE                      |
//!
//! NC control registers: 0 hosted neurons, 1 block base, 2 block stride.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::{Program, ProgramError};
use crate::neuron_core::{
    CoreError, InputEvent, NeuronCore, NeuronCoreConfig, NeuronType, OutputEvent, Phase,
};
use crate::noc::{Coord, Packet, PacketType, HOST_AREA};
use crate::topology::{
    decode_fanin, FanInDE, FanInIE, FanOutDE, FanOutIE, TopoError, FANIN_DE_WORDS, FANOUT_DE_WORDS,
    IE_WORDS, PLACEHOLDER_TAG,
};
use crate::Word16;

pub const NCS_PER_CC: usize = 8;

pub const NC_MEM_BASE: u32 = 0x00000;
pub const NC_MEM_SHIFT: u32 = 15;
pub const NC_PROG_BASE: u32 = 0x40000;
pub const NC_PROG_SHIFT: u32 = 12;
pub const NC_CTRL_BASE: u32 = 0x48000;
pub const NC_CTRL_SHIFT: u32 = 4;
pub const FANIN_DT_BASE: u32 = 0x50000;
pub const FANIN_IT_BASE: u32 = 0x80000;
pub const FANOUT_DT_BASE: u32 = 0xC0000;
pub const FANOUT_IT_BASE: u32 = 0xD0000;
pub const CONFIG_END: u32 = 0x100000;

pub const CTRL_NEURONS: u32 = 0;
pub const CTRL_BASE: u32 = 1;
pub const CTRL_STRIDE: u32 = 2;

/// Decoded config-space address.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    NcMem { nc: usize, word: usize },
    NcProgram { nc: usize, word: usize },
    NcControl { nc: usize, reg: usize },
    FaninDt(usize),
    FaninIt(usize),
    FanoutDt(usize),
    FanoutIt(usize),
}

pub fn nc_mem_addr(nc: usize, word: usize) -> u32 {
    NC_MEM_BASE + ((nc as u32) << NC_MEM_SHIFT) + word as u32
}

pub fn nc_prog_addr(nc: usize, word: usize) -> u32 {
    NC_PROG_BASE + ((nc as u32) << NC_PROG_SHIFT) + word as u32
}

pub fn nc_ctrl_addr(nc: usize, reg: u32) -> u32 {
    NC_CTRL_BASE + ((nc as u32) << NC_CTRL_SHIFT) + reg
}

pub fn decode_address(addr: u32, mem_words: usize) -> Result<Region, CcError> {
    let a = addr;
    let r = match a {
        _ if a < NC_PROG_BASE => {
            let nc = (a >> NC_MEM_SHIFT) as usize;
            let word = (a & ((1 << NC_MEM_SHIFT) - 1)) as usize;
            if word >= mem_words {
                return Err(CcError::Unmapped(addr));
            }
            Region::NcMem { nc, word }
        }
        _ if a < NC_CTRL_BASE => Region::NcProgram {
            nc: ((a - NC_PROG_BASE) >> NC_PROG_SHIFT) as usize,
            word: ((a - NC_PROG_BASE) & ((1 << NC_PROG_SHIFT) - 1)) as usize,
        },
        _ if a < NC_CTRL_BASE + ((NCS_PER_CC as u32) << NC_CTRL_SHIFT) => {
            let reg = ((a - NC_CTRL_BASE) & ((1 << NC_CTRL_SHIFT) - 1)) as usize;
            if reg > CTRL_STRIDE as usize {
                return Err(CcError::Unmapped(addr));
            }
            Region::NcControl {
                nc: ((a - NC_CTRL_BASE) >> NC_CTRL_SHIFT) as usize,
                reg,
            }
        }
        _ if (FANIN_DT_BASE..FANIN_IT_BASE).contains(&a) => {
            Region::FaninDt((a - FANIN_DT_BASE) as usize)
        }
        _ if (FANIN_IT_BASE..FANOUT_DT_BASE).contains(&a) => {
            Region::FaninIt((a - FANIN_IT_BASE) as usize)
        }
        _ if (FANOUT_DT_BASE..FANOUT_IT_BASE).contains(&a) => {
            Region::FanoutDt((a - FANOUT_DT_BASE) as usize)
        }
        _ if (FANOUT_IT_BASE..CONFIG_END).contains(&a) => {
            Region::FanoutIt((a - FANOUT_IT_BASE) as usize)
        }
        _ => return Err(CcError::Unmapped(addr)),
    };
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CcError {
    #[error("config address {0:#07x} is not mapped")]
    Unmapped(u32),
    #[error("fan-in DT index {0} beyond table")]
    IndexBeyondDt(u16),
    #[error("neuron {0:#06x} fired but has no fan-out DE")]
    NoFanout(u16),
    #[error("NC {nc}: {err}")]
    Core { nc: usize, err: CoreError },
    #[error("NC {nc} program: {err}")]
    Program { nc: usize, err: ProgramError },
    #[error(transparent)]
    Topo(#[from] TopoError),
    #[error("delayed-spike buffer overflow ({0} entries)")]
    DelayOverflow(usize),
    #[error("config writes are only accepted during INIT")]
    WriteOutsideInit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CcPhase {
    Init,
    Integ,
    Fire,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CcConfig {
    pub nc: NeuronCoreConfig,
    pub delay_capacity: usize,
}

impl Default for CcConfig {
    fn default() -> Self {
        CcConfig {
            nc: NeuronCoreConfig::default(),
            delay_capacity: 1 << 16,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CcStats {
    pub spike_packets_in: u64,
    pub drops: u64,
    pub events: u64,
    pub spikes: u64,
    /// Integrator readouts and the packets carrying them.
    pub readouts: u64,
    pub value_packets: u64,
    pub packets_out: u64,
    pub config_writes: u64,
    pub config_reads: u64,
}

/// One fired neuron: timestep, NC and the core's output event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpikeRecord {
    pub nc: u8,
    pub event: OutputEvent,
}

#[derive(Debug, Clone)]
pub struct CcState {
    pub coord: Coord,
    pub config: CcConfig,
    pub phase: CcPhase,
    ncs: Vec<Option<NeuronCore>>,
    program_img: Vec<Vec<u16>>,
    control: Vec<[u16; 3]>,
    fanin_dt: Vec<u16>,
    fanin_it: Vec<u16>,
    fanout_dt: Vec<u16>,
    fanout_it: Vec<u16>,
    /// emit timestep -> (neuron id, data) waiting for their delayed IEs
    delayed: BTreeMap<u32, Vec<(u16, Word16)>>,
    delayed_len: usize,
    pub stats: CcStats,
    pub event_log: Option<Vec<(u8, InputEvent)>>,
    pub spike_log: Option<Vec<SpikeRecord>>,
    busy_mark: [u64; NCS_PER_CC],
}

fn put(v: &mut Vec<u16>, i: usize, w: u16) {
    if v.len() <= i {
        v.resize(i + 1, 0);
    }
    v[i] = w;
}

fn get(v: &[u16], i: usize) -> u16 {
    v.get(i).copied().unwrap_or(0)
}

impl CcState {
    pub fn new(coord: Coord, config: CcConfig) -> Self {
        CcState {
            coord,
            config,
            phase: CcPhase::Init,
            ncs: (0..NCS_PER_CC).map(|_| None).collect(),
            program_img: vec![Vec::new(); NCS_PER_CC],
            control: vec![[0; 3]; NCS_PER_CC],
            fanin_dt: Vec::new(),
            fanin_it: Vec::new(),
            fanout_dt: Vec::new(),
            fanout_it: Vec::new(),
            delayed: BTreeMap::new(),
            delayed_len: 0,
            stats: CcStats::default(),
            event_log: None,
            spike_log: None,
            busy_mark: [0; NCS_PER_CC],
        }
    }

    pub fn nc(&self, n: usize) -> Option<&NeuronCore> {
        self.ncs.get(n).and_then(|x| x.as_ref())
    }

    pub fn nc_mut(&mut self, n: usize) -> Option<&mut NeuronCore> {
        self.ncs.get_mut(n).and_then(|x| x.as_mut())
    }

    fn nc_or_new(&mut self, n: usize) -> &mut NeuronCore {
        let cfg = self.config.nc;
        self.ncs[n].get_or_insert_with(|| NeuronCore::new(cfg))
    }

    pub fn hosted(&self) -> [u16; NCS_PER_CC] {
        let mut h = [0; NCS_PER_CC];
        for (i, c) in self.control.iter().enumerate() {
            h[i] = c[CTRL_NEURONS as usize];
        }
        h
    }

    pub fn hosted_total(&self) -> usize {
        self.hosted().iter().map(|&h| h as usize).sum()
    }

    pub fn is_configured(&self) -> bool {
        self.hosted_total() > 0 || !self.fanin_dt.is_empty() || !self.fanout_dt.is_empty()
    }

    pub fn write(&mut self, addr: u32, value: u16) -> Result<(), CcError> {
        if self.phase != CcPhase::Init {
            return Err(CcError::WriteOutsideInit);
        }
        self.stats.config_writes += 1;
        match decode_address(addr, self.config.nc.mem_words)? {
            Region::NcMem { nc, word } => self.nc_or_new(nc).mem[word] = Word16(value),
            Region::NcProgram { nc, word } => put(&mut self.program_img[nc], word, value),
            Region::NcControl { nc, reg } => self.control[nc][reg] = value,
            Region::FaninDt(i) => put(&mut self.fanin_dt, i, value),
            Region::FaninIt(i) => put(&mut self.fanin_it, i, value),
            Region::FanoutDt(i) => put(&mut self.fanout_dt, i, value),
            Region::FanoutIt(i) => put(&mut self.fanout_it, i, value),
        }
        Ok(())
    }

    pub fn read(&mut self, addr: u32) -> Result<u16, CcError> {
        self.stats.config_reads += 1;
        Ok(match decode_address(addr, self.config.nc.mem_words)? {
            Region::NcMem { nc, word } => self.nc(nc).map_or(0, |c| c.mem[word].0),
            Region::NcProgram { nc, word } => get(&self.program_img[nc], word),
            Region::NcControl { nc, reg } => self.control[nc][reg],
            Region::FaninDt(i) => get(&self.fanin_dt, i),
            Region::FaninIt(i) => get(&self.fanin_it, i),
            Region::FanoutDt(i) => get(&self.fanout_dt, i),
            Region::FanoutIt(i) => get(&self.fanout_it, i),
        })
    }

    /// Leaves INIT: decodes program images and binds them to the cores.
    pub fn start(&mut self) -> Result<(), CcError> {
        for n in 0..NCS_PER_CC {
            let [neurons, base, stride] = self.control[n];
            if neurons == 0 && self.program_img[n].is_empty() {
                continue;
            }
            let prog = Program::from_image(&self.program_img[n])
                .map_err(|err| CcError::Program { nc: n, err })?;
            let core = self.nc_or_new(n);
            core.load(prog, neurons, base, stride);
            core.phase = Phase::Integ;
        }
        self.phase = CcPhase::Integ;
        Ok(())
    }

    pub fn fanin_de(&self, index: u16) -> Option<FanInDE> {
        let i = index as usize * FANIN_DE_WORDS;
        if i + FANIN_DE_WORDS > self.fanin_dt.len() {
            return None;
        }
        FanInDE::from_words(&self.fanin_dt[i..i + FANIN_DE_WORDS]).ok()
    }

    fn fanin_ies(&self, de: &FanInDE) -> Result<Vec<FanInIE>, CcError> {
        let o = de.it_offset as usize;
        (o..o + de.it_count as usize)
            .map(|k| {
                let w = k * IE_WORDS;
                if w + IE_WORDS > self.fanin_it.len() {
                    return Err(CcError::Topo(TopoError::ItRange {
                        offset: o,
                        count: de.it_count as usize,
                        len: self.fanin_it.len() / IE_WORDS,
                    }));
                }
                Ok(FanInIE::from_words(
                    de.ie_type,
                    &self.fanin_it[w..w + IE_WORDS],
                ))
            })
            .collect()
    }

    pub fn fanout_de(&self, id: u16) -> Option<FanOutDE> {
        let i = id as usize * FANOUT_DE_WORDS;
        (i + FANOUT_DE_WORDS <= self.fanout_dt.len())
            .then(|| FanOutDE::from_words(&self.fanout_dt[i..i + FANOUT_DE_WORDS]))
    }

    fn fanout_ies(&self, off: u16, count: u8) -> Result<Vec<FanOutIE>, CcError> {
        (off as usize..off as usize + count as usize)
            .map(|k| {
                let w = k * IE_WORDS;
                let words: Vec<u16> = (w..w + IE_WORDS).map(|i| get(&self.fanout_it, i)).collect();
                Ok(FanOutIE::from_words(&words)?)
            })
            .collect()
    }

    /// Handles a packet delivered by the NoC. Memory reads return the
    /// response packet for the host.
    pub fn handle_packet(&mut self, p: &Packet) -> Result<Option<Packet>, CcError> {
        match p.ptype {
            PacketType::SpikeUnicast | PacketType::SpikeMulticast | PacketType::SpikeBroadcast => {
                self.stats.spike_packets_in += 1;
                let Some(de) = self.fanin_de(p.index) else {
                    if p.ptype == PacketType::SpikeUnicast {
                        return Err(CcError::IndexBeyondDt(p.index));
                    }
                    self.stats.drops += 1;
                    return Ok(None);
                };
                if de.tag != p.tag || de.tag == PLACEHOLDER_TAG {
                    self.stats.drops += 1;
                    return Ok(None);
                }
                let ies = self.fanin_ies(&de)?;
                let events = decode_fanin(&de, &ies, Word16(p.payload), &self.hosted())?;
                for d in events {
                    self.stats.events += 1;
                    if let Some(log) = self.event_log.as_mut() {
                        log.push((d.nc, d.event));
                    }
                    let nc = d.nc as usize;
                    let core = self.ncs[nc].as_mut().ok_or(CcError::Core {
                        nc,
                        err: CoreError::NoProgram,
                    })?;
                    if core.input.len() >= core.config.buffer_capacity {
                        core.drain().map_err(|err| CcError::Core { nc, err })?;
                    }
                    core.enqueue(d.event)
                        .map_err(|err| CcError::Core { nc, err })?;
                }
                Ok(None)
            }
            PacketType::MemWrite => {
                self.write(p.address(), p.payload)?;
                Ok(None)
            }
            PacketType::MemReadReq => {
                let v = self.read(p.address())?;
                Ok(Some(Packet::mem(
                    PacketType::MemReadResp,
                    HOST_AREA,
                    p.address(),
                    v,
                )))
            }
            PacketType::MemReadResp | PacketType::Sync => Ok(None),
        }
    }

    /// Runs every buffered INTEG event to completion.
    pub fn drain(&mut self) -> Result<(), CcError> {
        for (nc, c) in self.ncs.iter_mut().enumerate() {
            if let Some(core) = c {
                core.drain().map_err(|err| CcError::Core { nc, err })?;
            }
        }
        Ok(())
    }

    pub fn is_quiescent(&self) -> bool {
        self.ncs.iter().flatten().all(|c| c.is_quiescent())
    }

    fn packet_for(ie: &FanOutIE, payload: u16) -> Packet {
        if ie.is_host() {
            Packet::spike(
                PacketType::SpikeUnicast,
                HOST_AREA,
                ie.tag,
                ie.index,
                payload,
            )
        } else {
            Packet::spike(ie.mode.packet_type(), ie.area, ie.tag, ie.index, payload)
        }
    }

    /// FIRE stage of timestep `t` followed by fan-out: returns the packets
    /// to inject, forward ones first, then delayed ones falling due at `t`.
    pub fn fire(&mut self, t: u32) -> Result<Vec<Packet>, CcError> {
        self.phase = CcPhase::Fire;
        let mut fired: Vec<(u8, OutputEvent)> = Vec::new();
        for nc in 0..NCS_PER_CC {
            let Some(core) = self.ncs[nc].as_mut() else {
                continue;
            };
            if core.neurons == 0 {
                continue;
            }
            core.phase = Phase::Fire;
            let out = core.run_fire().map_err(|err| CcError::Core { nc, err })?;
            core.phase = Phase::Integ;
            fired.extend(out.into_iter().map(|e| (nc as u8, e)));
        }
        let packets = self.collect_and_fanout(t, &fired)?;
        self.phase = CcPhase::Integ;
        Ok(packets)
    }

    /// Looks up the fan-out tables for the events fired at timestep `t`.
    pub fn collect_and_fanout(
        &mut self,
        t: u32,
        fired: &[(u8, OutputEvent)],
    ) -> Result<Vec<Packet>, CcError> {
        let mut packets = Vec::new();
        for &(nc, ev) in fired {
            if ev.kind == NeuronType::Value {
                self.stats.readouts += 1;
            } else {
                self.stats.spikes += 1;
            }
            if let Some(log) = self.spike_log.as_mut() {
                log.push(SpikeRecord { nc, event: ev });
            }
            let id = (nc as u16) << 8 | ev.neuron;
            let de = self.fanout_de(id).ok_or(CcError::NoFanout(id))?;
            let payload = match ev.kind {
                NeuronType::Value => ev.data.0,
                _ => de.global_axon,
            };
            let ies = self.fanout_ies(de.fwd_offset, de.fwd_count)?;
            if ev.kind == NeuronType::Value {
                self.stats.value_packets += ies.len() as u64;
            }
            for ie in ies {
                packets.push(Self::packet_for(&ie, payload));
            }
            if ev.kind == NeuronType::Delayed && de.dly_count > 0 {
                if self.delayed_len >= self.config.delay_capacity {
                    return Err(CcError::DelayOverflow(self.delayed_len));
                }
                self.delayed_len += 1;
                self.delayed
                    .entry(t + de.delay as u32)
                    .or_default()
                    .push((id, Word16(payload)));
            }
        }
        if let Some(due) = self.delayed.remove(&t) {
            self.delayed_len -= due.len();
            for (id, payload) in due {
                let de = self.fanout_de(id).ok_or(CcError::NoFanout(id))?;
                for ie in self.fanout_ies(de.dly_offset, de.dly_count)? {
                    packets.push(Self::packet_for(&ie, payload.0));
                }
            }
        }
        self.stats.packets_out += packets.len() as u64;
        Ok(packets)
    }

    /// Delayed spikes still waiting in the buffer.
    pub fn pending_delayed(&self) -> usize {
        self.delayed_len
    }

    pub fn sops(&self) -> u64 {
        self.ncs.iter().flatten().map(|c| c.sops).sum()
    }

    /// Largest per-NC cycle count since the previous call.
    pub fn take_busy(&mut self) -> u64 {
        let mut m = 0;
        for (i, c) in self.ncs.iter().enumerate() {
            if let Some(core) = c {
                m = m.max(core.cycles - self.busy_mark[i]);
                self.busy_mark[i] = core.cycles;
            }
        }
        m
    }

    pub fn nc_cycles(&self) -> [u64; NCS_PER_CC] {
        let mut v = [0; NCS_PER_CC];
        for (i, c) in self.ncs.iter().enumerate() {
            if let Some(core) = c {
                v[i] = core.cycles;
            }
        }
        v
    }

    pub fn enable_sop_trace(&mut self) {
        for c in self.ncs.iter_mut().flatten() {
            c.sop_trace = Some(Vec::new());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::assemble;
    use crate::noc::Area;
    use crate::topology::{IeType, RouteMode};

    fn write_all(cc: &mut CcState, base: u32, words: &[u16]) {
        for (i, &w) in words.iter().enumerate() {
            cc.write(base + i as u32, w).unwrap();
        }
    }

    /// CC with one NC of 4 neurons that accumulate the event payload.
    fn toy() -> CcState {
        let mut cc = CcState::new(Coord::new(0, 0), CcConfig::default());
        let p = assemble(".integ\nRECV\nADD.I R1, R12, R14\nLD R2, [R1 + #8]\nLOCACC R2, [R12 + #0]\n.fire\nLD R1, [R12 + #0]\nSEND R1, R13, #0\n").unwrap();
        write_all(&mut cc, nc_prog_addr(0, 0), &p.to_image());
        cc.write(nc_ctrl_addr(0, CTRL_NEURONS), 4).unwrap();
        cc.write(nc_ctrl_addr(0, CTRL_STRIDE), 16).unwrap();
        // weights at block + 8 + axon
        for n in 0..4 {
            for a in 0..4 {
                cc.write(nc_mem_addr(0, n * 16 + 8 + a), Word16::from_f32(0.5).0)
                    .unwrap();
            }
        }
        let de = FanInDE {
            tag: 7,
            ie_type: IeType::Type2,
            it_offset: 0,
            it_count: 1,
        };
        write_all(&mut cc, FANIN_DT_BASE, &de.to_words());
        let ie = FanInIE::Type2 {
            mask: 1,
            margin: 1,
            count: 3,
            start: 0,
        };
        write_all(&mut cc, FANIN_IT_BASE, &ie.to_words());
        for n in 0..4u16 {
            let fo = FanOutDE {
                global_axon: 10 + n,
                fwd_offset: 0,
                fwd_count: 2,
                dly_offset: 2,
                dly_count: 1,
                delay: 2,
            };
            write_all(&mut cc, FANOUT_DT_BASE + n as u32 * 4, &fo.to_words());
        }
        let ies = [
            FanOutIE {
                mode: RouteMode::Unicast,
                area: Area::single(Coord::new(1, 1)),
                tag: 1,
                index: 3,
            },
            FanOutIE::host(5),
            FanOutIE {
                mode: RouteMode::Multicast,
                area: Area::rect(0, 0, 2, 2),
                tag: 2,
                index: 9,
            },
        ];
        for (i, ie) in ies.iter().enumerate() {
            write_all(&mut cc, FANOUT_IT_BASE + i as u32 * 4, &ie.to_words());
        }
        cc.start().unwrap();
        cc
    }

    fn spike(tag: u8, index: u16, payload: u16) -> Packet {
        Packet::spike(
            PacketType::SpikeUnicast,
            Area::single(Coord::new(0, 0)),
            tag,
            index,
            payload,
        )
    }

    #[test]
    fn type2_packet_dispatches_three_events() {
        let mut cc = toy();
        cc.handle_packet(&spike(7, 0, 1)).unwrap();
        assert_eq!(cc.stats.events, 3);
        cc.drain().unwrap();
        assert_eq!(cc.sops(), 3);
        assert_eq!(cc.nc(0).unwrap().mem[0], Word16::from_f32(0.5));
        assert_eq!(cc.nc(0).unwrap().mem[48], Word16::ZERO);
    }

    #[test]
    fn tag_mismatch_drops() {
        let mut cc = toy();
        cc.handle_packet(&spike(8, 0, 1)).unwrap();
        assert_eq!(cc.stats.drops, 1);
        assert_eq!(cc.stats.events, 0);
        let mut m = spike(7, 40, 0);
        assert!(cc.handle_packet(&m).is_err());
        m.ptype = PacketType::SpikeMulticast;
        cc.handle_packet(&m).unwrap();
        assert_eq!(cc.stats.drops, 2);
    }

    #[test]
    fn readback_and_write_guard() {
        let mut cc = toy();
        let r = cc
            .handle_packet(&Packet::mem(
                PacketType::MemReadReq,
                Area::single(Coord::new(0, 0)),
                nc_mem_addr(0, 3 * 16 + 8),
                0,
            ))
            .unwrap()
            .unwrap();
        assert_eq!(r.ptype, PacketType::MemReadResp);
        assert!(r.dest.is_host());
        assert_eq!(r.payload, Word16::from_f32(0.5).0);
        assert_eq!(cc.write(0, 1), Err(CcError::WriteOutsideInit));
        assert!(matches!(
            decode_address(0x48100, 1 << 15),
            Err(CcError::Unmapped(_))
        ));
    }

    #[test]
    fn fanout_forward_and_delayed() {
        let mut cc = toy();
        let ev = OutputEvent {
            kind: NeuronType::Normal,
            neuron: 1,
            data: Word16::ZERO,
        };
        let p = cc.collect_and_fanout(5, &[(0, ev)]).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].payload, 11);
        assert!(p[1].dest.is_host());
        assert_eq!(p[1].index, 5);
        let d = OutputEvent {
            kind: NeuronType::Delayed,
            ..ev
        };
        assert_eq!(cc.collect_and_fanout(5, &[(0, d)]).unwrap().len(), 2);
        assert!(cc.collect_and_fanout(6, &[]).unwrap().is_empty());
        let late = cc.collect_and_fanout(7, &[]).unwrap();
        assert_eq!(late.len(), 1);
        assert_eq!(late[0].ptype, PacketType::SpikeMulticast);
        assert_eq!(late[0].index, 9);
        assert!(cc.collect_and_fanout(8, &[]).unwrap().is_empty());
    }
}
