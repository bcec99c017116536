//! Test oracles written independently of the library: binary16 arithmetic
//! done in f64 with explicit rounding, and a dense reference simulator.

#![allow(dead_code)]

pub mod topo;

use taibai::ir::{ConnKind, LoweredNet, ModelKind, Source};

/// binary16 values held exactly as f64.
pub mod h16 {
    const MAX: f64 = 65504.0;

    /// 2^k for normal f64 exponents.
    fn pow2(k: i32) -> f64 {
        f64::from_bits(((k + 1023) as u64) << 52)
    }

    fn exponent(x: f64) -> i32 {
        ((x.abs().to_bits() >> 52) & 0x7ff) as i32 - 1023
    }

    /// Nearest binary16 value, ties to even; overflow goes to infinity.
    pub fn round(x: f64) -> f64 {
        if x.is_nan() || x.is_infinite() || x == 0.0 {
            return x;
        }
        let e = exponent(x).max(-14);
        let q = pow2(e - 10);
        let r = x.abs() / q;
        let mut f = r.floor();
        let frac = r - f;
        if frac > 0.5 || (frac == 0.5 && f as u64 & 1 == 1) {
            f += 1.0;
        }
        let m = f * q;
        let m = if m > MAX { f64::INFINITY } else { m };
        if x < 0.0 {
            -m
        } else {
            m
        }
    }

    pub fn add(a: f64, b: f64) -> f64 {
        round(a + b)
    }

    pub fn mul(a: f64, b: f64) -> f64 {
        round(a * b)
    }

    pub fn from_bits(b: u16) -> f64 {
        let sign = if b & 0x8000 != 0 { -1.0 } else { 1.0 };
        let e = ((b >> 10) & 0x1f) as i32;
        let m = (b & 0x3ff) as f64;
        sign * match e {
            0 => m * pow2(-24),
            31 if m == 0.0 => f64::INFINITY,
            31 => f64::NAN,
            _ => (1024.0 + m) * pow2(e - 25),
        }
    }

    /// Bit pattern of a value that is already a binary16 value.
    pub fn to_bits(x: f64) -> u16 {
        let sign = if x.is_sign_negative() { 0x8000 } else { 0 };
        let a = x.abs();
        if a.is_nan() {
            return 0x7e00;
        }
        if a.is_infinite() {
            return sign | 0x7c00;
        }
        if a < 2f64.powi(-14) {
            return sign | (a / 2f64.powi(-24)) as u16;
        }
        let e = exponent(a);
        let m = (a / 2f64.powi(e - 10)) as u16 - 1024;
        sign | (((e + 15) as u16) << 10) | m
    }
}

/// `spikes[t][pop]` ascending, and integrator readouts as bit patterns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefTrace {
    pub spikes: Vec<Vec<Vec<u32>>>,
    pub values: Vec<Vec<Vec<u16>>>,
}

fn w(x: taibai::Word16) -> f64 {
    h16::from_bits(x.bits())
}

/// Adds the contribution of spiking sources `src` through one connection.
fn deliver(
    kind: &ConnKind,
    n_out: usize,
    src: &[u32],
    acc: &mut [f64],
    branch_of: &dyn Fn(u32) -> usize,
    bacc: &mut [Vec<f64>],
    use_branches: bool,
) {
    let mut put = |s: u32, d: usize, x: f64| {
        if use_branches {
            let b = branch_of(s);
            bacc[d][b] = h16::add(bacc[d][b], x);
        } else {
            acc[d] = h16::add(acc[d], x);
        }
    };
    match kind {
        ConnKind::Full { n_in, w: ws } => {
            for &s in src {
                for d in 0..n_out {
                    put(s, d, w(ws[d * *n_in as usize + s as usize]));
                }
            }
        }
        ConnKind::Sparse { edges, .. } | ConnKind::Explicit { edges, .. } => {
            // edges in source order, as if each source were scanned in turn
            let mut on = vec![false; src.iter().max().map_or(0, |&m| m as usize + 1)];
            src.iter().for_each(|&s| on[s as usize] = true);
            let mut hit: Vec<&(u32, u32, taibai::Word16)> = edges
                .iter()
                .filter(|e| on.get(e.0 as usize) == Some(&true))
                .collect();
            hit.sort_by_key(|e| e.0);
            for &&(a, d, x) in &hit {
                put(a, d as usize, w(x));
            }
        }
        ConnKind::Conv { geom: g, w: ws } => {
            // dense: every output asks which of its window inputs spiked
            let on: std::collections::HashSet<u32> = src.iter().copied().collect();
            let (ho, wo) = (
                (g.h_in + 2 * g.pad - g.k) / g.stride + 1,
                (g.w_in + 2 * g.pad - g.k) / g.stride + 1,
            );
            for o in 0..g.c_out {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let d = ((o * ho + oy) * wo + ox) as usize;
                        for c in 0..g.c_in {
                            for ky in 0..g.k {
                                for kx in 0..g.k {
                                    let iy = (oy * g.stride + ky) as i64 - g.pad as i64;
                                    let ix = (ox * g.stride + kx) as i64 - g.pad as i64;
                                    if iy < 0
                                        || ix < 0
                                        || iy >= g.h_in as i64
                                        || ix >= g.w_in as i64
                                    {
                                        continue;
                                    }
                                    let s = (c * g.h_in + iy as u32) * g.w_in + ix as u32;
                                    if on.contains(&s) {
                                        let wi = ((o * g.c_in + c) * g.k + ky) * g.k + kx;
                                        put(s, d, w(ws[wi as usize]));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        ConnKind::Pool { geom: g, w: x } => {
            let (ho, wo) = (g.h_in / g.window, g.w_in / g.window);
            for &s in src {
                let c = s / (g.h_in * g.w_in);
                let (y, xx) = ((s / g.w_in) % g.h_in, s % g.w_in);
                let (oy, ox) = (y / g.window, xx / g.window);
                if oy < ho && ox < wo {
                    put(s, ((c * ho + oy) * wo + ox) as usize, w(*x));
                }
            }
        }
    }
}

/// Reference run of `net` on input spike lists.
pub fn reference(net: &LoweredNet, inputs: &[Vec<u32>]) -> RefTrace {
    let np = net.pops.len();
    let sizes: Vec<usize> = net.pops.iter().map(|p| p.size() as usize).collect();
    let branches: Vec<Vec<std::ops::Range<u32>>> = (0..np)
        .map(|p| net.branches(p).unwrap_or_default())
        .collect();
    let mut v: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
    let mut a = v.clone();
    let mut last = v.clone();
    let mut bv: Vec<Vec<Vec<f64>>> = (0..np)
        .map(|p| vec![vec![0.0; branches[p].len()]; sizes[p]])
        .collect();
    let mut out = RefTrace {
        spikes: Vec::new(),
        values: Vec::new(),
    };
    for t in 0..inputs.len() {
        let mut acc: Vec<Vec<f64>> = (0..np)
            .map(|p| {
                (0..sizes[p])
                    .map(|i| w(net.pops[p].params.bias(i)))
                    .collect()
            })
            .collect();
        let mut bacc: Vec<Vec<Vec<f64>>> = (0..np)
            .map(|p| vec![vec![0.0; branches[p].len()]; sizes[p]])
            .collect();
        for c in &net.conns {
            let lat = c.latency as usize;
            if t < lat {
                continue;
            }
            let src: &[u32] = match c.from {
                Source::Input => &inputs[t - lat],
                Source::Pop(q) => &out.spikes[t - lat][q],
            };
            let br = &branches[c.to];
            let use_b = c.primary && !br.is_empty();
            let branch_of = |s: u32| br.iter().position(|r| r.contains(&s)).unwrap();
            deliver(
                &c.kind,
                sizes[c.to],
                src,
                &mut acc[c.to],
                &branch_of,
                &mut bacc[c.to],
                use_b,
            );
        }
        let mut spikes = Vec::new();
        let mut values = Vec::new();
        for p in 0..np {
            let prm = &net.pops[p].params;
            let mut fired = Vec::new();
            let mut vals = Vec::new();
            for i in 0..sizes[p] {
                let mut cur = acc[p][i];
                if let ModelKind::DhLif { branch_tau } = &prm.kind {
                    for (b, tb) in branch_tau.iter().enumerate() {
                        bv[p][i][b] = h16::add(h16::mul(w(*tb), bv[p][i][b]), bacc[p][i][b]);
                        cur = h16::add(cur, bv[p][i][b]);
                    }
                }
                // v(t) = tau * v(t-1) + I(t)
                let x = h16::add(h16::mul(w(prm.tau), v[p][i]), cur);
                v[p][i] = x;
                let th = match &prm.kind {
                    ModelKind::Integrator => {
                        vals.push(h16::to_bits(x));
                        continue;
                    }
                    ModelKind::Alif { beta, rho } => {
                        a[p][i] = h16::add(h16::mul(w(*rho), a[p][i]), last[p][i]);
                        h16::add(h16::mul(a[p][i], w(*beta)), w(prm.v_th(i)))
                    }
                    _ => w(prm.v_th(i)),
                };
                let s = x >= th;
                if s {
                    v[p][i] = 0.0;
                    fired.push(i as u32);
                }
                last[p][i] = if s { 1.0 } else { 0.0 };
            }
            spikes.push(fired);
            values.push(vals);
        }
        out.spikes.push(spikes);
        out.values.push(values);
    }
    out
}

/// Bernoulli input trains from a small xorshift generator.
pub fn bernoulli(n: u32, steps: usize, rate: f64, seed: u64) -> Vec<Vec<u32>> {
    let mut x = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let mut next = || {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        (x >> 11) as f64 / (1u64 << 53) as f64
    };
    (0..steps)
        .map(|_| (0..n).filter(|_| next() < rate).collect())
        .collect()
}
