//! Neuron-model presets: ISA programs plus the variable layout of a neuron
//! block.
//!
//! Block layout (word offsets): `V`, `TAU` (must follow `V` for DIFF), `I`,
//! then the optional variables in this order: `WB` (weight base, or the
//! weight itself for pooling), `XB` (explicit-weight base), `B` (bias),
//! `VTH`, `ROLE`, `A`, `RHO` (must follow `A`), `S`.
//!
//! INTEG dispatch: value events (axon `0xFFFF`) add their payload to `I`;
//! axons with the top bit set index the explicit weights; all other axons
//! go through the primary weight path.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::{assemble, AsmError, Program};
use crate::neuron_core::NeuronType;
use crate::Word16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrimaryPath {
    /// No addressed input.
    None,
    /// `w = mem[WB + axon]`.
    Dense,
    /// FINDIDX over a bitmap at `WB`.
    Sparse,
    /// `w = mem[WB + payload*kk + axon]`, `payload` being the input channel.
    Conv { kk: u16 },
    /// `w = WB`.
    Pool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Threshold {
    Imm(Word16),
    Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SomaModel {
    Lif,
    Alif { beta: Word16 },
    Integrator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PresetSpec {
    pub soma: SomaModel,
    pub primary: PrimaryPath,
    pub explicit: bool,
    /// Logical neurons are split into dendrite parts plus a soma.
    pub dendrites: bool,
    pub bias: bool,
    pub threshold: Threshold,
    /// `Normal`, or `Delayed` when the population also feeds a shortcut.
    pub send: NeuronType,
}

impl PresetSpec {
    pub fn lif(primary: PrimaryPath, v_th: Word16) -> Self {
        PresetSpec {
            soma: SomaModel::Lif,
            primary,
            explicit: false,
            dendrites: false,
            bias: false,
            threshold: Threshold::Imm(v_th),
            send: NeuronType::Normal,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarLayout {
    pub v: u16,
    pub tau: u16,
    pub i: u16,
    pub wb: Option<u16>,
    pub xb: Option<u16>,
    pub b: Option<u16>,
    pub vth: Option<u16>,
    pub role: Option<u16>,
    pub a: Option<u16>,
    pub s: Option<u16>,
    pub stride: u16,
}

/// Role value marking a soma (parts store the soma's local ID instead).
pub const ROLE_SOMA: u16 = 0xFFFF;

/// Initial values of one neuron block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BlockInit {
    pub tau: Word16,
    pub bias: Word16,
    pub wb: Word16,
    pub xb: Word16,
    pub vth: Word16,
    pub role: u16,
    pub rho: Word16,
}

impl VarLayout {
    pub fn new(spec: &PresetSpec) -> Self {
        let mut l = VarLayout {
            v: 0,
            tau: 1,
            i: 2,
            ..Default::default()
        };
        let mut next = 3;
        let mut take = |on: bool, n: u16| {
            on.then(|| {
                let o = next;
                next += n;
                o
            })
        };
        l.wb = take(spec.primary != PrimaryPath::None, 1);
        l.xb = take(spec.explicit, 1);
        l.b = take(spec.bias, 1);
        l.vth = take(spec.threshold == Threshold::Var, 1);
        l.role = take(spec.dendrites, 1);
        let alif = matches!(spec.soma, SomaModel::Alif { .. });
        l.a = take(alif, 2);
        l.s = take(alif, 1);
        l.stride = next;
        l
    }

    /// Block image at reset: `V = 0`, `I = bias`.
    pub fn block(&self, init: &BlockInit) -> Vec<Word16> {
        let mut b = vec![Word16::ZERO; self.stride as usize];
        b[self.tau as usize] = init.tau;
        b[self.i as usize] = init.bias;
        let mut set = |o: Option<u16>, v: Word16| {
            if let Some(o) = o {
                b[o as usize] = v;
            }
        };
        set(self.wb, init.wb);
        set(self.xb, init.xb);
        set(self.b, init.bias);
        set(self.vth, init.vth);
        set(self.role, Word16(init.role));
        set(self.a.map(|a| a + 1), init.rho);
        b
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PresetError {
    #[error("generated program does not assemble: {0}")]
    Asm(#[from] AsmError),
    #[error("threshold must be finite binary16")]
    BadThreshold,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Preset {
    pub spec: PresetSpec,
    pub layout: VarLayout,
    pub program: Program,
    pub source: String,
}

fn hex(w: Word16) -> String {
    format!("#0x{:04X}", w.0)
}

/// Builds the program text and layout for `spec`.
pub fn instantiate(spec: &PresetSpec) -> Result<Preset, PresetError> {
    if let Threshold::Imm(v) = spec.threshold {
        if !v.is_finite_fp() {
            return Err(PresetError::BadThreshold);
        }
    }
    let l = VarLayout::new(spec);
    let mut s = String::new();
    let mut line = |x: String| {
        s.push_str(&x);
        s.push('\n');
    };
    let var = |o: Option<u16>| format!("[BLK + #{}]", o.expect("variable in layout"));
    let i = format!("[BLK + #{}]", l.i);
    let v = format!("[BLK + #{}]", l.v);

    line(format!(".stride {}", l.stride));
    for (name, o) in [
        ("V", Some(l.v)),
        ("TAU", Some(l.tau)),
        ("I", Some(l.i)),
        ("WB", l.wb),
        ("XB", l.xb),
        ("B", l.b),
        ("VTH", l.vth),
        ("ROLE", l.role),
        ("A", l.a),
        ("RHO", l.a.map(|a| a + 1)),
        ("S", l.s),
    ] {
        if let Some(o) = o {
            line(format!(".var {name} {o}"));
        }
    }

    // INTEG
    line(".integ".into());
    line("RECV".into());
    let value_in = spec.dendrites;
    if value_in {
        line("CMP.EQ.I AXN, #0xFFFF".into());
        line("BC val".into());
    }
    let has_primary = spec.primary != PrimaryPath::None;
    if spec.explicit && has_primary {
        line("AND.I R1, AXN, #0x8000".into());
        line("CMP.NE.I R1, #0".into());
        line("BC expl".into());
    }
    let mut blocks: Vec<Vec<String>> = Vec::new();
    match spec.primary {
        PrimaryPath::None => {}
        PrimaryPath::Dense => blocks.push(vec![
            format!("LD R3, {}", var(l.wb)),
            "ADD.I R1, R3, AXN".into(),
            "LD R2, [R1 + #0]".into(),
            format!("LOCACC R2, {i}"),
        ]),
        PrimaryPath::Sparse => blocks.push(vec![
            format!("LD R3, {}", var(l.wb)),
            "FINDIDX R1, [R3 + #0]".into(),
            "LD R2, [R1 + #0]".into(),
            format!("LOCACC R2, {i}"),
        ]),
        PrimaryPath::Conv { kk } => blocks.push(vec![
            format!("LD R3, {}", var(l.wb)),
            format!("MUL.I R1, DAT, #{kk}"),
            "ADD.I R1, R1, AXN".into(),
            "ADD.I R1, R1, R3".into(),
            "LD R2, [R1 + #0]".into(),
            format!("LOCACC R2, {i}"),
        ]),
        PrimaryPath::Pool => blocks.push(vec![
            format!("LD R2, {}", var(l.wb)),
            format!("LOCACC R2, {i}"),
        ]),
    }
    if value_in {
        blocks.push(vec![format!("val: LOCACC DAT, {i}")]);
    }
    if spec.explicit {
        let first = if has_primary { "expl: " } else { "" };
        blocks.push(vec![
            format!("{first}AND.I R1, AXN, #0x7FFF"),
            format!("LD R3, {}", var(l.xb)),
            "ADD.I R1, R1, R3".into(),
            "LD R2, [R1 + #0]".into(),
            format!("LOCACC R2, {i}"),
        ]);
    }
    let nb = blocks.len();
    for (k, b) in blocks.into_iter().enumerate() {
        for x in b {
            line(x);
        }
        if k + 1 < nb {
            line("RECV".into());
        }
    }

    // FIRE
    line(".fire".into());
    let send = spec.send.code();
    if spec.dendrites {
        line(format!("LD R2, {}", var(l.role)));
        line("CMP.NE.I R2, #0xFFFF".into());
        line("BC part".into());
    }
    line(format!("LD R1, {i}"));
    line(format!("DIFF R1, {v}"));
    let cmp_th = |line: &mut dyn FnMut(String), reg: &str| match spec.threshold {
        Threshold::Imm(t) => line(format!("CMP.LT {reg}, {}", hex(t))),
        Threshold::Var => {
            line(format!("LD R4, {}", var(l.vth)));
            line(format!("CMP.LT {reg}, R4"));
        }
    };
    match spec.soma {
        SomaModel::Lif => {
            cmp_th(&mut line, "R1");
            line("BC done".into());
            line(format!("ST R0, {v}"));
            line(format!("SEND R0, NID, #{send}"));
            if spec.dendrites {
                line("B done".into());
            }
        }
        SomaModel::Alif { beta } => {
            line(format!("LD R2, {}", var(l.s)));
            line(format!("DIFF R2, {}", var(l.a)));
            line(format!("MUL R3, R2, {}", hex(beta)));
            match spec.threshold {
                Threshold::Imm(t) => line(format!("ADD R3, R3, {}", hex(t))),
                Threshold::Var => {
                    line(format!("LD R4, {}", var(l.vth)));
                    line("ADD R3, R3, R4".into());
                }
            }
            line("CMP.LT R1, R3".into());
            line("BC nosp".into());
            line(format!("ST R0, {v}"));
            line(format!("SEND R0, NID, #{send}"));
            line(format!("MOV R4, {}", hex(Word16::FP_ONE)));
            line(format!("ST R4, {}", var(l.s)));
            line("B done".into());
            line(format!("nosp: ST R0, {}", var(l.s)));
            if spec.dendrites {
                line("B done".into());
            }
        }
        SomaModel::Integrator => {
            line(format!("SEND R1, NID, #{}", NeuronType::Value.code()));
            if spec.dendrites {
                line("B done".into());
            }
        }
    }
    if spec.dendrites {
        line(format!("part: LD R1, {i}"));
        line(format!("DIFF R1, {v}"));
        line(format!("SEND R1, R2, #{}", NeuronType::Local.code()));
    }
    match l.b {
        Some(b) => {
            line(format!("done: LD R3, [BLK + #{b}]"));
            line(format!("ST R3, {i}"));
        }
        None => line(format!("done: ST R0, {i}")),
    }
    let program = assemble(&s)?;
    Ok(Preset {
        spec: *spec,
        layout: l,
        program,
        source: s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuron_core::{InputEvent, NeuronCore, NeuronCoreConfig, Phase};
    use crate::word16::diff_step;

    fn w(x: f32) -> Word16 {
        Word16::from_f32(x)
    }

    #[test]
    fn lif_budget() {
        let p = instantiate(&PresetSpec::lif(PrimaryPath::Dense, w(1.0))).unwrap();
        assert!(p.program.integ.len() <= 5, "{}", p.source);
        assert!(p.program.fire.len() <= 7, "{}", p.source);
        assert_eq!(p.layout.stride, 4);
    }

    #[test]
    fn every_variant_assembles() {
        for soma in [
            SomaModel::Lif,
            SomaModel::Alif { beta: w(0.5) },
            SomaModel::Integrator,
        ] {
            for primary in [
                PrimaryPath::None,
                PrimaryPath::Dense,
                PrimaryPath::Sparse,
                PrimaryPath::Conv { kk: 9 },
                PrimaryPath::Pool,
            ] {
                for bits in 0..16u8 {
                    let spec = PresetSpec {
                        soma,
                        primary,
                        explicit: bits & 1 != 0,
                        dendrites: bits & 2 != 0,
                        bias: bits & 4 != 0,
                        threshold: if bits & 8 != 0 {
                            Threshold::Var
                        } else {
                            Threshold::Imm(w(1.0))
                        },
                        send: NeuronType::Delayed,
                    };
                    let p = instantiate(&spec).unwrap_or_else(|e| panic!("{spec:?}: {e}"));
                    p.program.validate().unwrap();
                }
            }
        }
    }

    /// One LIF neuron driven by a single dense synapse of weight 0.75.
    #[test]
    fn lif_closed_form() {
        let (tau, th, wt) = (w(0.5), w(1.0), w(0.75));
        let p = instantiate(&PresetSpec::lif(PrimaryPath::Dense, th)).unwrap();
        let mut core = NeuronCore::new(NeuronCoreConfig::default());
        core.load(p.program.clone(), 1, 0, p.layout.stride);
        let blk = p.layout.block(&BlockInit {
            tau,
            wb: Word16(16),
            ..Default::default()
        });
        core.mem[..blk.len()].copy_from_slice(&blk);
        core.mem[16] = wt;
        let (mut v, mut fired) = (Word16::ZERO, Vec::new());
        let mut got = Vec::new();
        for t in 0..12 {
            core.phase = Phase::Integ;
            let ev = [InputEvent {
                neuron: 0,
                axon: 0,
                payload: Word16::ZERO,
            }];
            core.run_integ(if t % 3 != 2 { &ev } else { &[] }).unwrap();
            core.phase = Phase::Fire;
            if !core.run_fire().unwrap().is_empty() {
                got.push(t);
            }
            let i = if t % 3 != 2 { wt } else { Word16::ZERO };
            v = diff_step(v, tau, i);
            if v.to_f32() >= th.to_f32() {
                v = Word16::ZERO;
                fired.push(t);
            }
        }
        assert_eq!(got, fired);
        assert!(!fired.is_empty());
    }
}
