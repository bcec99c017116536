use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use taibai::noc::trace::read_trace;
use taibai::noc::Packet;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_taibai"));
    c.env_remove("TAIBAI_SEED");
    c
}

fn ok(mut c: Command) -> String {
    let out = c.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: Output) -> i32 {
    out.status.code().unwrap()
}

fn kv(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn toy(dir: &Path) -> std::path::PathBuf {
    let ir = dir.join("fc.json");
    let mut c = bin();
    c.args(["model", "fc", "-o"]).arg(&ir);
    ok(c);
    ir
}

fn compiled(dir: &Path, target: &str) -> (std::path::PathBuf, BTreeMap<String, String>) {
    let ir = toy(dir);
    let art = dir.join(format!("{target}.tbai"));
    let mut c = bin();
    c.arg("compile").arg(&ir).arg("-o").arg(&art).arg(format!("--target={target}"));
    let report = kv(&ok(c));
    (art, report)
}

#[test]
fn compile_writes_magic() {
    let d = tempfile::tempdir().unwrap();
    let (art, report) = compiled(d.path(), "min-cores");
    assert_eq!(&std::fs::read(art).unwrap()[..4], b"TBAI");
    assert_eq!(report["neurons"], "42");
}

#[test]
fn min_cores_not_more_than_max_throughput() {
    let d = tempfile::tempdir().unwrap();
    let (_, a) = compiled(d.path(), "min-cores");
    let (_, b) = compiled(d.path(), "max-throughput");
    let n = |r: &BTreeMap<String, String>| r["ncs"].parse::<usize>().unwrap();
    assert!(n(&a) <= n(&b));
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let missing = bin()
        .args(["compile", "nope.json", "-o"])
        .arg(d.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(code(missing), 2);
    assert_eq!(code(bin().args(["compile", "--bogus"]).output().unwrap()), 2);
    let bad = d.path().join("bad.json");
    std::fs::write(&bad, "{}").unwrap();
    let out = bin().arg("compile").arg(&bad).arg("-o").arg(d.path().join("x")).output().unwrap();
    assert_eq!(code(out), 3);
    let junk = d.path().join("junk.tbai");
    std::fs::write(&junk, b"not an artifact").unwrap();
    assert_eq!(code(bin().arg("inspect").arg(&junk).output().unwrap()), 3);
}

fn simulate(art: &Path, extra: &[&str]) -> String {
    let mut c = bin();
    c.arg("simulate").arg(art).args(["-t", "32"]).args(extra);
    if !extra.contains(&"--seed") {
        c.args(["--seed", "7"]);
    }
    ok(c)
}

#[test]
fn simulate_report_and_determinism() {
    let d = tempfile::tempdir().unwrap();
    let (art, _) = compiled(d.path(), "min-cores");
    let a = simulate(&art, &["--threads", "1"]);
    let b = simulate(&art, &["--threads", "3"]);
    assert_eq!(a, b);
    let s = kv(&a);
    for k in ["sop_count", "spike_packets", "energy_j", "layer.out.rate", "packets.unicast"] {
        assert!(s.contains_key(k), "missing {k}");
    }
    let sops: f64 = s["sop_count"].parse().unwrap();
    let e: f64 = s["energy_j"].parse().unwrap();
    assert_eq!(e, sops * 2.61e-12);
    let other = simulate(&art, &["--seed", "8"]);
    assert_ne!(a, other);
}

#[test]
fn seed_from_environment() {
    let d = tempfile::tempdir().unwrap();
    let (art, _) = compiled(d.path(), "min-cores");
    let mut c = bin();
    c.env("TAIBAI_SEED", "7").arg("simulate").arg(&art).args(["-t", "32"]);
    assert_eq!(ok(c), simulate(&art, &[]));
}

#[test]
fn trace_parses_back_to_packets() {
    let d = tempfile::tempdir().unwrap();
    let (art, _) = compiled(d.path(), "min-cores");
    let tr = d.path().join("trace.bin");
    let sp = d.path().join("spikes.txt");
    let s = kv(&simulate(&art, &["--trace", tr.to_str().unwrap(), "--spikes", sp.to_str().unwrap()]));
    let raw = std::fs::read(&tr).unwrap();
    let recs = read_trace(&mut raw.as_slice()).unwrap();
    let total: u64 = s
        .iter()
        .filter(|(k, _)| k.starts_with("packets."))
        .map(|(_, v)| v.parse::<u64>().unwrap())
        .sum();
    assert_eq!(recs.len() as u64, total);
    for (i, (_, inj)) in recs.iter().enumerate() {
        let word = u64::from_le_bytes(raw[i * 24 + 16..i * 24 + 24].try_into().unwrap());
        assert_eq!(inj.packet.encode(), word);
        assert_eq!(Packet::decode(word).unwrap(), inj.packet);
    }
    let spikes = std::fs::read_to_string(sp).unwrap();
    assert_eq!(spikes.lines().count(), 32);
    assert!(spikes.lines().all(|l| l.starts_with("t=") && l.contains(" output=out spikes=")));
}

#[test]
fn zero_input_has_no_spike_traffic() {
    let d = tempfile::tempdir().unwrap();
    let (art, _) = compiled(d.path(), "min-cores");
    let s = kv(&simulate(&art, &["--rate", "0"]));
    assert_eq!(s["sop_count"], "0");
    assert_eq!(s["spike_packets"], "0");
}

#[test]
fn input_file() {
    let d = tempfile::tempdir().unwrap();
    let (art, _) = compiled(d.path(), "min-cores");
    let inp = d.path().join("in.json");
    std::fs::write(&inp, "[[0,1,2],[],[63]]").unwrap();
    let mut c = bin();
    c.arg("simulate").arg(&art).arg("--input").arg(&inp);
    assert_eq!(kv(&ok(c))["timesteps"], "3");
    std::fs::write(&inp, "[[64]]").unwrap();
    let out = bin().arg("simulate").arg(&art).arg("--input").arg(&inp).output().unwrap();
    assert_eq!(code(out), 3);
}

#[test]
fn bench_topology_report() {
    let mut c = bin();
    c.args(["bench-topology", "--scale", "0.125"]);
    let text = ok(c);
    let entries: Vec<u64> = text
        .lines()
        .filter(|l| l.trim_start().starts_with("column="))
        .map(|l| kv(&l.split_whitespace().collect::<Vec<_>>().join("\n"))["entries"].parse().unwrap())
        .collect();
    assert_eq!(entries.len(), 8);
    for row in entries.chunks(4) {
        assert!(row.windows(2).all(|w| w[0] >= w[1]), "{row:?}");
    }
    assert!(text.contains("skip model=resnet_like delayed_ncs="));
    assert_eq!(code(bin().args(["bench-topology", "--scale", "0"]).output().unwrap()), 2);
}
