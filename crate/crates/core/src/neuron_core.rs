//! Neuron core: runs a [`Program`] over per-neuron data blocks.
//!
//! INTEG handlers are entered once per input event, right after the first
//! RECV of the INTEG segment, and run until the next RECV or the end of the
//! segment. The FIRE segment runs once per hosted neuron, in ascending local
//! ID order. Before each handler the core loads R12..R15 with the neuron's
//! block base, its local ID, and the event's axon and payload.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::{
    alu_exec, CycleCosts, Opcode, Operand, Program, Segment, REG_AXN, REG_BLK, REG_DAT, REG_NID,
    VALUE_AXON,
};
use crate::word16::{self, Word16};

pub const MAX_NEURONS: usize = 256;
pub const DEFAULT_MEM_WORDS: usize = 32 * 1024;
pub const DEFAULT_BUFFER: usize = 1024;
/// Instruction budget for a single handler before it is declared runaway.
pub const HANDLER_STEP_LIMIT: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputEvent {
    pub neuron: u16,
    pub axon: u16,
    pub payload: Word16,
}

/// Kind tag carried by SEND and stored in the output event memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NeuronType {
    /// Ordinary spike, routed through the forward fan-out entries.
    Normal,
    /// Spike re-emitted after a skip-connection delay.
    Delayed,
    /// FP16 value (membrane potential, current) carried to the destination.
    Value,
    /// Current handed to a sibling neuron on the same core.
    Local,
}

impl NeuronType {
    pub fn code(self) -> u16 {
        match self {
            NeuronType::Normal => 0,
            NeuronType::Delayed => 1,
            NeuronType::Value => 2,
            NeuronType::Local => 3,
        }
    }

    pub fn from_code(c: u16) -> Option<Self> {
        match c {
            0 => Some(NeuronType::Normal),
            1 => Some(NeuronType::Delayed),
            2 => Some(NeuronType::Value),
            3 => Some(NeuronType::Local),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputEvent {
    pub kind: NeuronType,
    pub neuron: u16,
    pub data: Word16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Resting,
    Integ,
    Fire,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoreError {
    #[error("input event buffer full ({0} events)")]
    BufferFull(usize),
    #[error("event targets neuron {neuron} but core hosts {hosted}")]
    NotHosted { neuron: u16, hosted: u16 },
    #[error("{seg:?} pc {pc}: memory access at {addr:#x} outside {size} words")]
    MemoryFault {
        seg: Segment,
        pc: usize,
        addr: usize,
        size: usize,
    },
    #[error("{seg:?} pc {pc}: axon {axon} outside bitmap of {len} bits")]
    AxonOutOfRange {
        seg: Segment,
        pc: usize,
        axon: u16,
        len: usize,
    },
    #[error("{seg:?} pc {pc}: branch to {target} outside segment")]
    BadBranch {
        seg: Segment,
        pc: usize,
        target: u16,
    },
    #[error("{seg:?} pc {pc}: invalid SEND type {code}")]
    BadSendType { seg: Segment, pc: usize, code: u16 },
    #[error("neuron {0} sent more than one event in one FIRE stage")]
    DuplicateSend(u16),
    #[error("{0:?} handler exceeded the instruction budget")]
    Runaway(Segment),
    #[error("no program loaded")]
    NoProgram,
    #[error("operation not allowed in phase {0:?}")]
    WrongPhase(Phase),
}

/// One LOCACC execution: neuron and the value added.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SopRecord {
    pub neuron: u16,
    pub value: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronCoreConfig {
    pub mem_words: usize,
    pub buffer_capacity: usize,
    pub costs: CycleCosts,
}

impl Default for NeuronCoreConfig {
    fn default() -> Self {
        NeuronCoreConfig {
            mem_words: DEFAULT_MEM_WORDS,
            buffer_capacity: DEFAULT_BUFFER,
            costs: CycleCosts::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NeuronCore {
    pub config: NeuronCoreConfig,
    pub regs: [Word16; 16],
    pub flag: bool,
    pub mem: Vec<Word16>,
    pub program: Program,
    pub input: VecDeque<InputEvent>,
    pub output: Vec<OutputEvent>,
    pub phase: Phase,
    pub neurons: u16,
    pub block_base: u16,
    pub block_stride: u16,
    pub cycles: u64,
    pub sops: u64,
    pub mem_accesses: u64,
    pub instructions: u64,
    pub sop_trace: Option<Vec<SopRecord>>,
}

impl NeuronCore {
    pub fn new(config: NeuronCoreConfig) -> Self {
        NeuronCore {
            config,
            regs: [Word16::ZERO; 16],
            flag: false,
            mem: vec![Word16::ZERO; config.mem_words],
            program: Program::default(),
            input: VecDeque::new(),
            output: Vec::new(),
            phase: Phase::Resting,
            neurons: 0,
            block_base: 0,
            block_stride: 0,
            cycles: 0,
            sops: 0,
            mem_accesses: 0,
            instructions: 0,
            sop_trace: None,
        }
    }

    pub fn load(&mut self, program: Program, neurons: u16, block_base: u16, block_stride: u16) {
        self.program = program;
        self.neurons = neurons;
        self.block_base = block_base;
        self.block_stride = block_stride;
    }

    pub fn block_addr(&self, neuron: u16) -> usize {
        self.block_base as usize + neuron as usize * self.block_stride as usize
    }

    pub fn is_quiescent(&self) -> bool {
        self.input.is_empty()
    }

    pub fn enqueue(&mut self, ev: InputEvent) -> Result<(), CoreError> {
        if ev.neuron >= self.neurons {
            return Err(CoreError::NotHosted {
                neuron: ev.neuron,
                hosted: self.neurons,
            });
        }
        if self.input.len() >= self.config.buffer_capacity {
            return Err(CoreError::BufferFull(self.config.buffer_capacity));
        }
        self.input.push_back(ev);
        Ok(())
    }

    /// Runs the INTEG handler for every buffered event. Returns cycles spent.
    pub fn drain(&mut self) -> Result<u64, CoreError> {
        let start = self.cycles;
        if self.input.is_empty() {
            return Ok(0);
        }
        let entry = self.program.integ_entry().ok_or(CoreError::NoProgram)?;
        while let Some(ev) = self.input.pop_front() {
            self.run_handler(Segment::Integ, entry, ev.neuron, ev.axon, ev.payload)?;
        }
        Ok(self.cycles - start)
    }

    /// Processes a batch of events in the INTEG phase.
    pub fn run_integ(&mut self, events: &[InputEvent]) -> Result<u64, CoreError> {
        if self.phase != Phase::Integ {
            return Err(CoreError::WrongPhase(self.phase));
        }
        let mut spent = 0;
        for ev in events {
            self.enqueue(*ev)?;
            if self.input.len() >= self.config.buffer_capacity {
                spent += self.drain()?;
            }
        }
        spent += self.drain()?;
        Ok(spent)
    }

    /// Posts an event from a sibling neuron without touching the NoC.
    pub fn deliver_intra_core(&mut self, ev: InputEvent) -> Result<(), CoreError> {
        self.enqueue(ev)
    }

    /// Runs the FIRE segment once per hosted neuron and returns the output
    /// events produced in this stage. Local sends are integrated before the
    /// next neuron fires.
    pub fn run_fire(&mut self) -> Result<Vec<OutputEvent>, CoreError> {
        if self.phase != Phase::Fire {
            return Err(CoreError::WrongPhase(self.phase));
        }
        self.output.clear();
        let entry = self.program.integ_entry().ok_or(CoreError::NoProgram)?;
        let mut sent = vec![false; self.neurons as usize];
        for n in 0..self.neurons {
            let before = self.output.len();
            self.run_handler(Segment::Fire, 0, n, 0, Word16::ZERO)?;
            for ev in &self.output[before..] {
                if matches!(ev.kind, NeuronType::Normal | NeuronType::Value) {
                    let slot = &mut sent[n as usize];
                    if *slot {
                        return Err(CoreError::DuplicateSend(n));
                    }
                    *slot = true;
                }
            }
            while let Some(ev) = self.input.pop_front() {
                self.run_handler(Segment::Integ, entry, ev.neuron, ev.axon, ev.payload)?;
            }
        }
        Ok(self.output.clone())
    }

    fn addr(&self, seg: Segment, pc: usize, base: u8, off: Operand) -> Result<usize, CoreError> {
        let b = self.regs[base as usize].0 as usize;
        let o = match off {
            Operand::Imm(v) => v as usize,
            Operand::Reg(r) => self.regs[r as usize].0 as usize,
        };
        let a = b + o;
        if a >= self.mem.len() {
            return Err(CoreError::MemoryFault {
                seg,
                pc,
                addr: a,
                size: self.mem.len(),
            });
        }
        Ok(a)
    }

    fn check(&self, seg: Segment, pc: usize, a: usize) -> Result<usize, CoreError> {
        if a >= self.mem.len() {
            Err(CoreError::MemoryFault {
                seg,
                pc,
                addr: a,
                size: self.mem.len(),
            })
        } else {
            Ok(a)
        }
    }

    fn run_handler(
        &mut self,
        seg: Segment,
        start: usize,
        neuron: u16,
        axon: u16,
        payload: Word16,
    ) -> Result<(), CoreError> {
        self.regs[REG_BLK as usize] = Word16(self.block_addr(neuron) as u16);
        self.regs[REG_NID as usize] = Word16(neuron);
        self.regs[REG_AXN as usize] = Word16(axon);
        self.regs[REG_DAT as usize] = payload;
        let costs = self.config.costs;
        let len = self.program.segment(seg).len();
        let mut pc = start;
        let mut steps = 0u64;
        while pc < len {
            steps += 1;
            if steps > HANDLER_STEP_LIMIT {
                return Err(CoreError::Runaway(seg));
            }
            let ins = self.program.segment(seg)[pc];
            self.instructions += 1;
            self.cycles += costs.cost(&ins, axon) as u64;
            let src2 = match ins.src2 {
                Operand::Reg(r) => self.regs[r as usize],
                Operand::Imm(v) => Word16(v),
            };
            let mut next = pc + 1;
            match ins.opcode {
                Opcode::Recv => return Ok(()),
                Opcode::Send => {
                    let code = src2.0;
                    let kind = NeuronType::from_code(code).ok_or(CoreError::BadSendType {
                        seg,
                        pc,
                        code,
                    })?;
                    let ev = OutputEvent {
                        kind,
                        neuron: self.regs[ins.src1 as usize].0,
                        data: self.regs[ins.dst as usize],
                    };
                    if kind == NeuronType::Local {
                        self.deliver_intra_core(InputEvent {
                            neuron: ev.neuron,
                            axon: VALUE_AXON,
                            payload: ev.data,
                        })?;
                    } else {
                        self.output.push(ev);
                    }
                }
                Opcode::FindIdx => {
                    let a = self.addr(seg, pc, ins.src1, ins.src2)?;
                    let bits = self.mem[a].0 as usize;
                    let nwords = bits.div_ceil(16);
                    let end = self.check(seg, pc, a + nwords)?;
                    self.mem_accesses += 1 + nwords as u64;
                    match crate::isa::findidx(&self.mem[a + 1..=end], bits, axon as usize) {
                        None => {
                            return Err(CoreError::AxonOutOfRange {
                                seg,
                                pc,
                                axon,
                                len: bits,
                            })
                        }
                        Some(crate::isa::FindIdx::Miss) => {
                            self.flag = false;
                            return Ok(());
                        }
                        Some(crate::isa::FindIdx::Hit(slot)) => {
                            self.flag = true;
                            let wa = a + 1 + nwords + slot as usize;
                            self.regs[ins.dst as usize] = Word16(wa as u16);
                        }
                    }
                }
                Opcode::LocAcc => {
                    let a = self.addr(seg, pc, ins.src1, ins.src2)?;
                    let v = self.regs[ins.dst as usize];
                    self.mem[a] = word16::add(ins.dtype, self.mem[a], v);
                    self.mem_accesses += 2;
                    if seg == Segment::Integ && axon != VALUE_AXON {
                        self.sops += 1;
                    }
                    if let Some(t) = self.sop_trace.as_mut() {
                        t.push(SopRecord { neuron, value: v.0 });
                    }
                }
                Opcode::Diff => {
                    let a = self.addr(seg, pc, ins.src1, ins.src2)?;
                    let b = self.check(seg, pc, a + 1)?;
                    let c = self.regs[ins.dst as usize];
                    let r = match ins.dtype {
                        crate::Dtype::Fp16 => word16::diff_step(self.mem[a], self.mem[b], c),
                        crate::Dtype::Int16 => {
                            word16::int_add(word16::int_mul(self.mem[b], self.mem[a]), c)
                        }
                    };
                    self.mem[a] = r;
                    self.regs[ins.dst as usize] = r;
                    self.mem_accesses += 3;
                }
                Opcode::Ld => {
                    let a = self.addr(seg, pc, ins.src1, ins.src2)?;
                    self.regs[ins.dst as usize] = self.mem[a];
                    self.mem_accesses += 1;
                }
                Opcode::St => {
                    let a = self.addr(seg, pc, ins.src1, ins.src2)?;
                    self.mem[a] = self.regs[ins.dst as usize];
                    self.mem_accesses += 1;
                }
                Opcode::B | Opcode::Bc => {
                    if ins.opcode == Opcode::B || self.flag {
                        let t = src2.0;
                        if t as usize >= len {
                            return Err(CoreError::BadBranch { seg, pc, target: t });
                        }
                        next = t as usize;
                    }
                }
                op => {
                    let a = self.regs[ins.src1 as usize];
                    let (r, f) = alu_exec(op, ins.rel(), ins.dtype, a, src2, self.flag);
                    self.flag = f;
                    let skip = op.is_conditional() && !f;
                    if op.writes_dst() && !skip {
                        self.regs[ins.dst as usize] = r;
                    }
                }
            }
            pc = next;
        }
        Ok(())
    }
}
