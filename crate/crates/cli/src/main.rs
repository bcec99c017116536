use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};

use taibai::bench::{resnet_like, topology_bench, vgg_like};
use taibai::chip::{estimate, ChipConfig, ChipState, CostModel, RunMode};
use taibai::compiler::{compile, profile_inputs, Artifact, CompileOptions, Placer, Target};
use taibai::ir::{self, NetworkIR};
use taibai::models::Builder;
use taibai::noc::trace::write_trace;

const USAGE: u8 = 2;
const VALIDATION: u8 = 3;
const RUNTIME: u8 = 4;

#[derive(Parser)]
#[command(name = "taibai", version, about = "Compile, simulate and inspect SNNs for the many-core chip model")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compile a network IR (JSON + weight sidecar) into an artifact.
    Compile {
        ir: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value = "min-cores")]
        target: Target,
        #[arg(long, default_value = "greedy")]
        placement: Placer,
        #[arg(long, env = "TAIBAI_SEED", default_value_t = 0)]
        seed: u64,
        /// Also write the compiler report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run an artifact on the chip model.
    Simulate {
        artifact: PathBuf,
        /// JSON list of per-timestep input spike index lists.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Timesteps of random input when no input file is given.
        #[arg(short = 't', long)]
        steps: Option<u32>,
        /// Spike probability per input neuron and timestep.
        #[arg(long, default_value_t = 0.25)]
        rate: f64,
        #[arg(long, env = "TAIBAI_SEED", default_value_t = 0)]
        seed: u64,
        /// Worker threads; 0 uses all cores.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Enforce the compiled per-timestep cycle budget.
        #[arg(long)]
        budget: bool,
        /// Write every injected packet to this binary trace file.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Spike trains of the output layers.
        #[arg(long)]
        spikes: Option<PathBuf>,
        /// Stats report; printed to stdout when absent.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Energy per link traversal in picojoules.
        #[arg(long, default_value_t = 0.0)]
        hop_pj: f64,
        /// Static power in watts.
        #[arg(long, default_value_t = 0.0)]
        static_w: f64,
    },
    /// Print an artifact's metadata and compiler report.
    Inspect { artifact: PathBuf },
    /// Routing-table storage benchmark on the VGG-like and ResNet-like models.
    BenchTopology {
        /// Channel width multiplier.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, env = "TAIBAI_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "min-cores")]
        target: Target,
    },
    /// Write one of the bundled example networks as IR.
    Model {
        kind: ModelName,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, env = "TAIBAI_SEED", default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelName {
    /// Two fully connected LIF layers.
    Fc,
    VggLike,
    ResnetLike,
}

enum Fail {
    Usage(anyhow::Error),
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Fail {
    fn code(&self) -> u8 {
        match self {
            Fail::Usage(_) => USAGE,
            Fail::Validation(_) => VALIDATION,
            Fail::Runtime(_) => RUNTIME,
        }
    }
}

type Res<T> = Result<T, Fail>;

fn runtime<E: Into<anyhow::Error>>(e: E) -> Fail {
    Fail::Runtime(e.into())
}

fn validation<E: Into<anyhow::Error>>(e: E) -> Fail {
    Fail::Validation(e.into())
}

fn need_file(p: &Path) -> Res<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Fail::Usage(anyhow!("no such file: {}", p.display())))
    }
}

fn write_file(p: &Path, data: impl AsRef<[u8]>) -> Res<()> {
    fs::write(p, data).with_context(|| format!("writing {}", p.display())).map_err(runtime)
}

fn load_artifact(p: &Path) -> Res<Artifact> {
    need_file(p)?;
    Artifact::read(p)
        .with_context(|| format!("reading {}", p.display()))
        .map_err(validation)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let code = f.code();
            let (Fail::Usage(e) | Fail::Validation(e) | Fail::Runtime(e)) = f;
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn run(cmd: Cmd) -> Res<()> {
    match cmd {
        Cmd::Compile {
            ir: path,
            out,
            target,
            placement,
            seed,
            report,
        } => {
            need_file(&path)?;
            let net = ir::load(&path)
                .with_context(|| format!("loading {}", path.display()))
                .map_err(validation)?;
            let opts = CompileOptions {
                target,
                placer: placement,
                seed,
                ..Default::default()
            };
            let art = compile(&net, &opts)
                .with_context(|| format!("compiling {}", path.display()))
                .map_err(validation)?;
            art.write(&out).with_context(|| format!("writing {}", out.display())).map_err(runtime)?;
            let text = art.meta.report.to_text();
            match report {
                Some(p) => write_file(&p, &text)?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Cmd::Simulate {
            artifact,
            input,
            steps,
            rate,
            seed,
            threads,
            budget,
            trace,
            spikes,
            stats,
            hop_pj,
            static_w,
        } => {
            let art = load_artifact(&artifact)?;
            let inputs: Vec<Vec<u32>> = match input {
                Some(p) => {
                    need_file(&p)?;
                    let s = fs::read_to_string(&p).map_err(runtime)?;
                    serde_json::from_str(&s)
                        .with_context(|| format!("parsing {}", p.display()))
                        .map_err(validation)?
                }
                None => {
                    if !(0.0..=1.0).contains(&rate) {
                        return Err(Fail::Usage(anyhow!("--rate must lie in [0, 1]")));
                    }
                    let t = steps.unwrap_or(art.meta.timesteps) as usize;
                    let n = art.meta.input_shape.iter().product();
                    profile_inputs(n, t, rate, seed)
                }
            };
            let mut cfg = ChipConfig {
                threads,
                ..art.chip_config()
            };
            if budget {
                cfg.mode = RunMode::Budget(art.meta.cycle_budget);
            }
            let mut chip = ChipState::new(cfg).map_err(runtime)?;
            art.load(&mut chip).map_err(validation)?;
            chip.set_trace(true);
            let mut run = art.run_on(&mut chip, &inputs).map_err(|e| match e {
                taibai::compiler::ArtifactError::InputIndex(..) => validation(e),
                e => runtime(e),
            })?;
            art.layer_stats(&mut run.raw);
            if let Some(p) = trace {
                let f = fs::File::create(&p).with_context(|| format!("creating {}", p.display())).map_err(runtime)?;
                write_trace(&mut BufWriter::new(f), &run.raw.packets).map_err(runtime)?;
            }
            if let Some(p) = spikes {
                write_file(&p, spike_text(&art, &run))?;
            }
            let cm = CostModel {
                e_hop: hop_pj * 1e-12,
                p_static: static_w,
                ..Default::default()
            };
            let text = stats_text(&run.raw.stats, &cm);
            match stats {
                Some(p) => write_file(&p, &text)?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Cmd::Inspect { artifact } => {
            let art = load_artifact(&artifact)?;
            print!("{}", inspect_text(&art));
            Ok(())
        }
        Cmd::BenchTopology { scale, seed, target } => {
            if !(scale > 0.0 && scale <= 4.0) {
                return Err(Fail::Usage(anyhow!("--scale must lie in (0, 4]")));
            }
            let opts = CompileOptions {
                target,
                ..Default::default()
            };
            let r = topology_bench(scale, seed, &opts).map_err(validation)?;
            print!("{}", r.to_text());
            Ok(())
        }
        Cmd::Model { kind, out, scale, seed } => {
            let net = match kind {
                ModelName::Fc => fc_toy(seed),
                ModelName::VggLike => vgg_like(scale, seed),
                ModelName::ResnetLike => resnet_like(scale, seed),
            };
            ir::save(&net, &out).with_context(|| format!("writing {}", out.display())).map_err(runtime)
        }
    }
}

fn fc_toy(seed: u64) -> NetworkIR {
    let mut b = Builder::new("fc_toy", [64, 1, 1], 32, seed);
    b.fc("hidden", 32).fc("out", 10).output();
    b.build()
}

fn spike_text(art: &Artifact, run: &taibai::compiler::ChipRun) -> String {
    let mut s = String::new();
    for (t, outs) in run.spikes.iter().enumerate() {
        for (o, rec) in art.meta.outputs.iter().enumerate() {
            let list: Vec<String> = outs[o].iter().map(|n| n.to_string()).collect();
            let vals: Vec<String> = run.values[t][o]
                .iter()
                .map(|(n, v)| format!("{n}:{}", v.to_f64()))
                .collect();
            let _ = write!(s, "t={t} output={} spikes={}", rec.name, list.join(","));
            if !vals.is_empty() {
                let _ = write!(s, " values={}", vals.join(","));
            }
            s.push('\n');
        }
    }
    s
}

fn stats_text(st: &taibai::chip::RunStats, cm: &CostModel) -> String {
    let e = estimate(st, cm);
    let mut s = String::new();
    let _ = writeln!(s, "timesteps={}", st.timesteps);
    let _ = writeln!(s, "sop_count={}", st.sop_count);
    let _ = writeln!(s, "spikes={}", st.spikes);
    let _ = writeln!(s, "spike_packets={}", st.spike_packets);
    let _ = writeln!(s, "value_packets={}", st.value_packets);
    for (k, v) in &st.packets {
        let _ = writeln!(s, "packets.{k}={v}");
    }
    let _ = writeln!(s, "host_packets_out={}", st.host_packets_out);
    let _ = writeln!(s, "link_traversals={}", st.link_traversals);
    let _ = writeln!(s, "drops={}", st.drops);
    let _ = writeln!(s, "cycles={}", st.total_cycles());
    let _ = writeln!(s, "noc_cycles={}", st.noc_cycles);
    for (k, v) in &st.layer_spikes {
        let _ = writeln!(s, "layer.{k}.spikes={v}");
    }
    for (k, v) in &st.layer_rates {
        let _ = writeln!(s, "layer.{k}.rate={v}");
    }
    let _ = writeln!(s, "energy_j={:e}", e.energy_j);
    let _ = writeln!(s, "energy_sop_j={:e}", e.sop_energy_j);
    let _ = writeln!(s, "energy_hop_j={:e}", e.hop_energy_j);
    let _ = writeln!(s, "energy_static_j={:e}", e.static_energy_j);
    let _ = writeln!(s, "elapsed_s={:e}", e.elapsed_s);
    let _ = writeln!(s, "avg_power_w={:e}", e.avg_power_w);
    s
}

fn inspect_text(art: &Artifact) -> String {
    let m = &art.meta;
    let mut s = String::new();
    let _ = writeln!(s, "name={}", m.name);
    let _ = writeln!(s, "grid={}x{}", m.rows, m.cols);
    let _ = writeln!(s, "input_shape={:?}", m.input_shape);
    let _ = writeln!(s, "timesteps={}", m.timesteps);
    let _ = writeln!(s, "config_packets={}", art.config.len());
    let _ = writeln!(s, "images={}", art.images.len());
    let _ = writeln!(s, "cycle_budget={}", m.cycle_budget);
    for p in &m.pops {
        let _ = writeln!(s, "pop {} shape={:?}", p.name, p.shape);
    }
    for o in &m.outputs {
        let _ = writeln!(s, "output {} size={}", o.name, o.size);
    }
    for (i, c) in m.placement.iter().enumerate() {
        let _ = writeln!(s, "cc {i} at={c}");
    }
    for c in &m.cores {
        let _ = writeln!(
            s,
            "core cc={} nc={} neurons={} mem_words={} program_words={}",
            c.cc,
            c.nc,
            c.slots.len(),
            c.mem_words,
            c.program_words
        );
    }
    s.push_str(&m.report.to_text());
    s
}
