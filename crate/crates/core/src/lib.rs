//! Behavioral simulator and software stack for a many-core spiking neural
//! network processor: ISA and assembler, neuron cores, topology tables,
//! 2D-mesh NoC, cortical-column schedulers, whole-chip simulation, model IR,
//! and a compiler that maps networks onto the chip.

pub mod bench;
pub mod cc;
pub mod chip;
pub mod compiler;
pub mod ir;
pub mod isa;
pub mod models;
pub mod neuron_core;
pub mod noc;
pub mod topology;
pub mod word16;

pub use word16::{Dtype, Word16};
