//! Text assembler and disassembler.
//!
//! ```text
//! ; comment (also `//`)
//! .stride 4            ; words per neuron block
//! .var V 0             ; named variable offset
//! .integ
//! wait: RECV
//!       ADD.I R1, BLK, AXN
//!       LD R2, [R1 + #4]
//!       LOCACC R2, [BLK + #2]
//! .fire
//!       LD R1, [BLK + #2]
//!       DIFF R1, [BLK + #0]
//!       CMP.LT R1, #0x3C00
//!       BC done
//!       ST R0, [BLK + #0]
//!       SEND R0, NID, #0
//! done: ST R0, [BLK + #2]
//! ```
//!
//! A mnemonic may carry `.I` (INT16) or `.F` (FP16, the default); CMP takes
//! its relation first (`CMP.GE.I`). Immediates are `#` followed by a decimal
//! or `0x` integer, or by a decimal float (`#0.5`) which is rounded to
//! binary16. Memory operands are `[Rb]`, `[Rb + #off]` or `[Rb + Rx]`.
//! Branch targets are labels, `#offset`, or a register.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use super::{Instruction, Opcode, Operand, Program, ProgramError, Rel, Segment, REG_BLK};
use crate::word16::{Dtype, Word16};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmErrorKind {
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
    #[error("undefined label `{0}`")]
    UndefinedLabel(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("bad register `{0}` (expected R0..R15 or BLK/NID/AXN/DAT)")]
    BadRegister(String),
    #[error("register R{0} is read-only")]
    ReadOnlyRegister(u8),
    #[error("immediate `{0}` not representable in 16 bits")]
    ImmediateRange(String),
    #[error("instruction outside of a .integ/.fire segment")]
    NoSegment,
    #[error("syntax: {0}")]
    Syntax(String),
    #[error(transparent)]
    Program(#[from] ProgramError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct AsmError {
    pub line: usize,
    pub kind: AsmErrorKind,
}

fn err<T>(line: usize, kind: AsmErrorKind) -> Result<T, AsmError> {
    Err(AsmError { line, kind })
}

fn parse_reg(tok: &str) -> Option<u8> {
    let t = tok.trim().to_ascii_uppercase();
    match t.as_str() {
        "BLK" => return Some(12),
        "NID" => return Some(13),
        "AXN" => return Some(14),
        "DAT" => return Some(15),
        _ => {}
    }
    let n = t.strip_prefix('R')?;
    let v: u8 = n.parse().ok()?;
    (v < 16).then_some(v)
}

fn parse_imm(tok: &str) -> Result<u16, AsmErrorKind> {
    let body = tok.trim().strip_prefix('#').unwrap_or(tok.trim());
    let range = || AsmErrorKind::ImmediateRange(tok.trim().to_string());
    let (neg, digits) = match body.strip_prefix('-') {
        Some(d) => (true, d),
        None => (false, body),
    };
    if let Some(hex) = digits
        .strip_prefix("0x")
        .or_else(|| digits.strip_prefix("0X"))
    {
        let v = u32::from_str_radix(hex, 16).map_err(|_| range())?;
        if neg || v > 0xFFFF {
            return Err(range());
        }
        return Ok(v as u16);
    }
    if digits.contains('.') || digits.contains('e') || digits.contains('E') {
        let v: f64 = body.parse().map_err(|_| range())?;
        let w = Word16::from_f64(v);
        if !w.is_finite_fp() {
            return Err(range());
        }
        return Ok(w.0);
    }
    let v: i64 = body.parse().map_err(|_| range())?;
    if !(-32768..=65535).contains(&v) {
        return Err(range());
    }
    Ok(v as i32 as u16)
}

fn parse_operand(tok: &str) -> Result<Operand, AsmErrorKind> {
    let t = tok.trim();
    if t.starts_with('#') {
        Ok(Operand::Imm(parse_imm(t)?))
    } else {
        parse_reg(t)
            .map(Operand::Reg)
            .ok_or_else(|| AsmErrorKind::BadRegister(t.to_string()))
    }
}

fn reg(tok: &str) -> Result<u8, AsmErrorKind> {
    parse_reg(tok).ok_or_else(|| AsmErrorKind::BadRegister(tok.trim().to_string()))
}

/// `[Rb]`, `[Rb + #off]`, `[Rb + Rx]`.
fn parse_mem(tok: &str) -> Result<(u8, Operand), AsmErrorKind> {
    let t = tok.trim();
    let inner = t
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| AsmErrorKind::Syntax(format!("expected memory operand, got `{t}`")))?;
    match inner.split_once('+') {
        None => Ok((reg(inner)?, Operand::Imm(0))),
        Some((b, o)) => Ok((reg(b)?, parse_operand(o)?)),
    }
}

/// Splits on commas that are not inside brackets.
fn split_operands(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '[' => {
                depth += 1;
                cur.push(c)
            }
            ']' => {
                depth -= 1;
                cur.push(c)
            }
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
            }
            _ => cur.push(c),
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

enum Pending {
    Done(Instruction),
    Branch { ins: Instruction, label: String },
}

struct Line<'a> {
    no: usize,
    seg: Segment,
    text: &'a str,
}

fn parse_mnemonic(m: &str) -> Result<(Opcode, Dtype, Option<Rel>), AsmErrorKind> {
    let upper = m.to_ascii_uppercase();
    let mut parts = upper.split('.');
    let base = parts.next().unwrap_or_default();
    let opcode =
        Opcode::from_mnemonic(base).ok_or_else(|| AsmErrorKind::UnknownMnemonic(m.to_string()))?;
    let mut dtype = Dtype::Fp16;
    let mut rel = None;
    for p in parts {
        match p {
            "I" => dtype = Dtype::Int16,
            "F" => dtype = Dtype::Fp16,
            "EQ" if opcode == Opcode::Cmp => rel = Some(Rel::Eq),
            "NE" if opcode == Opcode::Cmp => rel = Some(Rel::Ne),
            "LT" if opcode == Opcode::Cmp => rel = Some(Rel::Lt),
            "GE" if opcode == Opcode::Cmp => rel = Some(Rel::Ge),
            _ => return Err(AsmErrorKind::UnknownMnemonic(m.to_string())),
        }
    }
    if opcode == Opcode::Cmp && rel.is_none() {
        return Err(AsmErrorKind::Syntax(
            "CMP needs a relation: CMP.EQ/NE/LT/GE".into(),
        ));
    }
    Ok((opcode, dtype, rel))
}

fn parse_instruction(text: &str) -> Result<Pending, AsmErrorKind> {
    let (mn, rest) = match text.split_once(char::is_whitespace) {
        Some((m, r)) => (m, r.trim()),
        None => (text, ""),
    };
    let (opcode, dtype, rel) = parse_mnemonic(mn)?;
    let ops = split_operands(rest);
    let want = |n: usize| -> Result<(), AsmErrorKind> {
        if ops.len() == n {
            Ok(())
        } else {
            Err(AsmErrorKind::Syntax(format!(
                "{} takes {} operand(s), got {}",
                opcode.mnemonic(),
                n,
                ops.len()
            )))
        }
    };
    let mk = |dst: u8, src1: u8, src2: Operand| Instruction::new(opcode, dtype, dst, src1, src2);
    let ins = match opcode {
        Opcode::Recv => {
            want(0)?;
            mk(0, 0, Operand::Imm(0))
        }
        Opcode::Send => {
            want(3)?;
            mk(reg(&ops[0])?, reg(&ops[1])?, parse_operand(&ops[2])?)
        }
        Opcode::FindIdx => {
            want(2)?;
            let (b, off) = parse_mem(&ops[1])?;
            if !matches!(off, Operand::Imm(_)) {
                return Err(AsmErrorKind::Syntax(
                    "FINDIDX takes an immediate bitmap offset".into(),
                ));
            }
            mk(reg(&ops[0])?, b, off)
        }
        Opcode::LocAcc | Opcode::Diff | Opcode::Ld | Opcode::St => {
            want(2)?;
            let (b, off) = parse_mem(&ops[1])?;
            mk(reg(&ops[0])?, b, off)
        }
        Opcode::Add
        | Opcode::Sub
        | Opcode::Mul
        | Opcode::AddC
        | Opcode::SubC
        | Opcode::MulC
        | Opcode::And
        | Opcode::Or
        | Opcode::Xor => {
            want(3)?;
            mk(reg(&ops[0])?, reg(&ops[1])?, parse_operand(&ops[2])?)
        }
        Opcode::Cmp => {
            want(2)?;
            mk(rel.unwrap().code(), reg(&ops[0])?, parse_operand(&ops[1])?)
        }
        Opcode::Mov => {
            want(2)?;
            mk(reg(&ops[0])?, 0, parse_operand(&ops[1])?)
        }
        Opcode::B | Opcode::Bc => {
            want(1)?;
            let t = ops[0].trim();
            if t.starts_with('#') {
                mk(0, 0, Operand::Imm(parse_imm(t)?))
            } else if let Some(r) = parse_reg(t) {
                mk(0, 0, Operand::Reg(r))
            } else {
                if !t.chars().all(|c| c.is_alphanumeric() || c == '_') || t.is_empty() {
                    return Err(AsmErrorKind::Syntax(format!("bad branch target `{t}`")));
                }
                return Ok(Pending::Branch {
                    ins: mk(0, 0, Operand::Imm(0)),
                    label: t.to_string(),
                });
            }
        }
    };
    if opcode.writes_dst() && ins.dst >= REG_BLK {
        return Err(AsmErrorKind::ReadOnlyRegister(ins.dst));
    }
    Ok(Pending::Done(ins))
}

pub fn assemble(source: &str) -> Result<Program, AsmError> {
    let mut program = Program::default();
    let mut seg: Option<Segment> = None;
    let mut lines: Vec<Line> = Vec::new();
    let mut labels: BTreeMap<String, (Segment, usize)> = BTreeMap::new();
    let mut counts = [0usize; 2];

    for (i, raw) in source.lines().enumerate() {
        let no = i + 1;
        let mut text = raw;
        if let Some(p) = text.find(';') {
            text = &text[..p];
        }
        if let Some(p) = text.find("//") {
            text = &text[..p];
        }
        let mut text = text.trim();
        if text.is_empty() {
            continue;
        }
        if let Some(d) = text.strip_prefix('.') {
            let mut it = d.split_whitespace();
            match it.next().map(|s| s.to_ascii_lowercase()).as_deref() {
                Some("integ") => seg = Some(Segment::Integ),
                Some("fire") => seg = Some(Segment::Fire),
                Some("stride") => {
                    let v = it.next().unwrap_or("");
                    program.stride = parse_imm(v).map_err(|k| AsmError { line: no, kind: k })?;
                }
                Some("var") => {
                    let (Some(name), Some(v)) = (it.next(), it.next()) else {
                        return err(no, AsmErrorKind::Syntax(".var NAME OFFSET".into()));
                    };
                    let off = parse_imm(v).map_err(|k| AsmError { line: no, kind: k })?;
                    program.vars.insert(name.to_string(), off);
                }
                _ => {
                    return err(
                        no,
                        AsmErrorKind::Syntax(format!("unknown directive `{text}`")),
                    )
                }
            }
            continue;
        }
        if let Some((lbl, rest)) = text.split_once(':') {
            let lbl = lbl.trim();
            if !lbl.is_empty() && lbl.chars().all(|c| c.is_alphanumeric() || c == '_') {
                let Some(s) = seg else {
                    return err(no, AsmErrorKind::NoSegment);
                };
                let idx = counts[s as usize];
                if labels.insert(lbl.to_string(), (s, idx)).is_some() {
                    return err(no, AsmErrorKind::DuplicateLabel(lbl.to_string()));
                }
                text = rest.trim();
                if text.is_empty() {
                    continue;
                }
            }
        }
        let Some(s) = seg else {
            return err(no, AsmErrorKind::NoSegment);
        };
        counts[s as usize] += 1;
        lines.push(Line { no, seg: s, text });
    }

    for line in lines {
        let ins = match parse_instruction(line.text).map_err(|k| AsmError {
            line: line.no,
            kind: k,
        })? {
            Pending::Done(i) => i,
            Pending::Branch { mut ins, label } => match labels.get(&label) {
                Some(&(s, off)) if s == line.seg => {
                    ins.src2 = Operand::Imm(off as u16);
                    ins
                }
                _ => return err(line.no, AsmErrorKind::UndefinedLabel(label)),
            },
        };
        match line.seg {
            Segment::Integ => program.integ.push(ins),
            Segment::Fire => program.fire.push(ins),
        }
    }
    program.labels = labels;
    program.validate().map_err(|e| AsmError {
        line: 0,
        kind: e.into(),
    })?;
    Ok(program)
}

fn reg_name(r: u8) -> String {
    match r {
        12 => "BLK".into(),
        13 => "NID".into(),
        14 => "AXN".into(),
        15 => "DAT".into(),
        _ => format!("R{r}"),
    }
}

fn operand_text(o: Operand) -> String {
    match o {
        Operand::Reg(r) => reg_name(r),
        Operand::Imm(v) => format!("#{v:#06X}").replace("0X", "0x"),
    }
}

fn mem_text(base: u8, off: Operand) -> String {
    format!("[{} + {}]", reg_name(base), operand_text(off))
}

fn seg_prefix(s: Segment) -> &'static str {
    match s {
        Segment::Integ => "i",
        Segment::Fire => "f",
    }
}

/// Renders a program back to assembly text. Branch targets without a label
/// get a synthetic one (`i3`, `f6`).
pub fn disassemble(p: &Program) -> String {
    let mut out = String::new();
    if p.stride != 0 {
        let _ = writeln!(out, ".stride {}", p.stride);
    }
    for (name, off) in &p.vars {
        let _ = writeln!(out, ".var {name} {off}");
    }
    for seg in [Segment::Integ, Segment::Fire] {
        let code = p.segment(seg);
        let mut names: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for (name, &(s, off)) in &p.labels {
            if s == seg {
                names.entry(off).or_default().push(name.clone());
            }
        }
        for ins in code {
            if matches!(ins.opcode, Opcode::B | Opcode::Bc) {
                if let Operand::Imm(t) = ins.src2 {
                    names
                        .entry(t as usize)
                        .or_insert_with(|| vec![format!("{}{}", seg_prefix(seg), t)]);
                }
            }
        }
        let _ = writeln!(
            out,
            "{}",
            match seg {
                Segment::Integ => ".integ",
                Segment::Fire => ".fire",
            }
        );
        for (pc, ins) in code.iter().enumerate() {
            if let Some(ls) = names.get(&pc) {
                for l in ls {
                    let _ = writeln!(out, "{l}:");
                }
            }
            let _ = writeln!(out, "    {}", instruction_text(ins, &names));
        }
        // labels pointing one past the end
        if let Some(ls) = names.get(&code.len()) {
            for l in ls {
                let _ = writeln!(out, "{l}:");
            }
        }
    }
    out
}

fn instruction_text(ins: &Instruction, labels: &BTreeMap<usize, Vec<String>>) -> String {
    let mut mn = ins.opcode.mnemonic().to_string();
    if ins.opcode == Opcode::Cmp {
        mn.push('.');
        mn.push_str(ins.rel().name());
    }
    if ins.dtype == Dtype::Int16 {
        mn.push_str(".I");
    }
    let ops = match ins.opcode {
        Opcode::Recv => String::new(),
        Opcode::Send => format!(
            "{}, {}, {}",
            reg_name(ins.dst),
            reg_name(ins.src1),
            operand_text(ins.src2)
        ),
        Opcode::FindIdx | Opcode::LocAcc | Opcode::Diff | Opcode::Ld | Opcode::St => {
            format!("{}, {}", reg_name(ins.dst), mem_text(ins.src1, ins.src2))
        }
        Opcode::Cmp => format!("{}, {}", reg_name(ins.src1), operand_text(ins.src2)),
        Opcode::Mov => format!("{}, {}", reg_name(ins.dst), operand_text(ins.src2)),
        Opcode::B | Opcode::Bc => match ins.src2 {
            Operand::Imm(t) => labels
                .get(&(t as usize))
                .and_then(|v| v.first().cloned())
                .unwrap_or_else(|| format!("#{t}")),
            Operand::Reg(r) => reg_name(r),
        },
        _ => format!(
            "{}, {}, {}",
            reg_name(ins.dst),
            reg_name(ins.src1),
            operand_text(ins.src2)
        ),
    };
    // RECV keeps its unused fields zero; other non-canonical unused fields
    // are not representable in text, so the assembler always zeroes them.
    if ops.is_empty() {
        mn
    } else {
        format!("{mn} {ops}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_small_program() {
        let src = ".integ\nRECV\nLOCACC R1, [R2]\n.fire\nDIFF R3, [R4]";
        let p = assemble(src).unwrap();
        assert_eq!(p.integ.len(), 2);
        assert_eq!(p.fire.len(), 1);
        let text = disassemble(&p);
        let q = assemble(&text).unwrap();
        assert!(p.same_code(&q));
        let mnems: Vec<_> = text
            .lines()
            .filter(|l| l.starts_with("    "))
            .map(|l| l.split_whitespace().next().unwrap().to_string())
            .collect();
        assert_eq!(mnems, ["RECV", "LOCACC", "DIFF"]);
    }

    #[test]
    fn mov_immediate() {
        let p = assemble(".integ\nRECV\n.fire\nMOV R1, #0x3C00").unwrap();
        let i = p.fire[0];
        assert_eq!(i.opcode, Opcode::Mov);
        assert_eq!(i.dst, 1);
        assert_eq!(i.src2, Operand::Imm(0x3C00));
        let f = assemble(".integ\nRECV\n.fire\nMOV R1, #1.0").unwrap();
        assert_eq!(f.fire[0], i);
    }

    #[test]
    fn unknown_mnemonic() {
        let e = assemble(".integ\nRECV\nFOO R1, R2").unwrap_err();
        assert_eq!(e.kind, AsmErrorKind::UnknownMnemonic("FOO".into()));
        assert_eq!(e.line, 3);
    }

    #[test]
    fn error_cases() {
        let k = |s: &str| assemble(s).unwrap_err().kind;
        assert!(matches!(
            k(".integ\nRECV\nB nowhere"),
            AsmErrorKind::UndefinedLabel(_)
        ));
        assert!(matches!(
            k(".integ\nRECV\nADD R16, R1, R2"),
            AsmErrorKind::BadRegister(_)
        ));
        assert!(matches!(
            k(".integ\nRECV\nMOV R1, #70000"),
            AsmErrorKind::ImmediateRange(_)
        ));
        assert!(matches!(
            k(".integ\nRECV\nMOV R1, #1e9"),
            AsmErrorKind::ImmediateRange(_)
        ));
        assert!(matches!(
            k(".integ\nRECV\nMOV NID, #1"),
            AsmErrorKind::ReadOnlyRegister(13)
        ));
        assert!(matches!(
            k(".integ\nLD R1, [R2]"),
            AsmErrorKind::Program(ProgramError::NoRecv)
        ));
        assert!(matches!(k("RECV"), AsmErrorKind::NoSegment));
        assert!(matches!(
            k(".integ\nRECV\nB #9"),
            AsmErrorKind::Program(ProgramError::BadTarget(..))
        ));
        // labels do not cross segments
        assert!(matches!(
            k(".integ\nx: RECV\n.fire\nB x"),
            AsmErrorKind::UndefinedLabel(_)
        ));
    }

    #[test]
    fn labels_and_cmp() {
        let src = "
            .stride 4
            .var V 0
            .integ
            wait: RECV
                  B wait
            .fire
                  CMP.GE.I R1, #-1
                  BC done
                  ADD R1, R1, R2
            done: SEND R1, NID, #2
        ";
        let p = assemble(src).unwrap();
        assert_eq!(p.stride, 4);
        assert_eq!(p.vars["V"], 0);
        assert_eq!(p.fire[0].rel(), Rel::Ge);
        assert_eq!(p.fire[0].dtype, Dtype::Int16);
        assert_eq!(p.fire[0].src2, Operand::Imm(0xFFFF));
        assert_eq!(p.fire[1].src2, Operand::Imm(3));
        assert_eq!(p.integ[1].src2, Operand::Imm(0));
        let q = assemble(&disassemble(&p)).unwrap();
        assert_eq!(p, q);
    }
}
