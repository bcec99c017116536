//! Random connection instances and an encode → allocate → decode round
//! trip compared against adjacency computed straight from the definition.

use std::collections::{BTreeSet, HashMap};
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use taibai::noc::{Coord, Grid};
use taibai::topology::*;
use taibai::Word16;

/// `(source, destination home, axon)`; axon is 0 where it carries nothing
/// beyond the source itself.
pub type Adj = Vec<(u32, Loc, u16)>;

pub struct Instance {
    pub kind: &'static str,
    pub n_src: u32,
    pub plan: ConnPlan,
    /// Packet payload of each source.
    pub payload: Vec<u16>,
    pub expected: Adj,
    pub ie_type: IeType,
}

/// Random distinct homes for `n` neurons across `ccs` CCs.
fn scatter(rng: &mut impl Rng, n: u32, ccs: u16) -> Vec<Loc> {
    let mut all: Vec<Loc> = (0..ccs)
        .flat_map(|c| (0..8u8).flat_map(move |nc| (0..=255u8).map(move |l| Loc::new(c, nc, l))))
        .collect();
    all.shuffle(rng);
    all.truncate(n as usize);
    all
}

/// Homes packed in runs (consecutive locals) to exercise incremental IEs.
fn packed(rng: &mut impl Rng, n: u32, ccs: u16) -> Vec<Loc> {
    let mut v = Vec::new();
    let (mut cc, mut nc, mut l) = (0u16, 0u8, rng.gen_range(0..4u16));
    for _ in 0..n {
        if l > 255 {
            l = rng.gen_range(0..4);
            nc += 1;
            if nc == 8 {
                nc = 0;
                cc = (cc + 1) % ccs;
            }
        }
        v.push(Loc::new(cc, nc, l as u8));
        l += rng.gen_range(1..3);
    }
    v
}

pub fn full(rng: &mut impl Rng) -> Instance {
    let n_src = rng.gen_range(1..3000u32);
    let n_out = rng.gen_range(1..300u32);
    let k = n_src.div_ceil(FANIN_LIMIT as u32);
    let step = n_src.div_ceil(k);
    let parts: Vec<Range<u32>> = (0..k)
        .map(|i| i * step..((i + 1) * step).min(n_src))
        .collect();
    let dst: Vec<Vec<Loc>> = parts
        .iter()
        .map(|_| {
            if rng.gen() {
                packed(rng, n_out, 4)
            } else {
                scatter(rng, n_out, 4)
            }
        })
        .collect();
    let mut expected = Vec::new();
    for (r, range) in parts.iter().enumerate() {
        for s in range.clone() {
            for d in 0..n_out {
                expected.push((s, dst[r][d as usize], 0));
            }
        }
    }
    Instance {
        kind: "full",
        n_src,
        plan: encode_full(&parts, &dst).unwrap(),
        payload: (0..n_src).map(|s| s as u16).collect(),
        expected,
        ie_type: IeType::Type2,
    }
}

pub fn sparse(rng: &mut impl Rng) -> Instance {
    let n_src = rng.gen_range(1..400u32);
    let n_out = rng.gen_range(1..400u32);
    let p: f64 = rng.gen_range(0.0..0.2);
    let edges: Vec<(u32, u32)> = (0..n_src)
        .flat_map(|s| (0..n_out).map(move |d| (s, d)))
        .filter(|_| rng.gen::<f64>() < p)
        .collect();
    let dst = vec![scatter(rng, n_out, 3)];
    Instance {
        kind: "sparse",
        n_src,
        expected: edges
            .iter()
            .map(|&(s, d)| (s, dst[0][d as usize], 0))
            .collect(),
        plan: encode_sparse(n_src, &edges, &[0..n_src], &dst).unwrap(),
        payload: (0..n_src).map(|s| s as u16).collect(),
        ie_type: IeType::Type0,
    }
}

pub fn explicit(rng: &mut impl Rng) -> Instance {
    let n_src = rng.gen_range(1..300u32);
    let n_out = rng.gen_range(1..300u32);
    let mut slots = vec![0u16; n_out as usize];
    let mut edges = Vec::new();
    for s in 0..n_src {
        for d in 0..n_out {
            if rng.gen::<f64>() < 0.05 {
                edges.push((s, d, slots[d as usize]));
                slots[d as usize] += 1;
            }
        }
    }
    let dst = scatter(rng, n_out, 3);
    Instance {
        kind: "explicit",
        n_src,
        expected: edges
            .iter()
            .map(|&(s, d, k)| (s, dst[d as usize], EXPLICIT_AXON | k))
            .collect(),
        plan: encode_explicit(n_src, &edges, &dst).unwrap(),
        payload: (0..n_src).map(|s| s as u16).collect(),
        ie_type: IeType::Type1,
    }
}

pub fn pool(rng: &mut impl Rng) -> Instance {
    let window = rng.gen_range(1..4u32);
    let g = PoolGeom {
        c: rng.gen_range(1..5),
        h_in: rng.gen_range(window..14),
        w_in: rng.gen_range(window..14),
        window,
    };
    let (ho, wo) = (g.h_in / window, g.w_in / window);
    let n_src = g.c * g.h_in * g.w_in;
    let dst = scatter(rng, g.c * ho * wo, 2);
    let mut expected = Vec::new();
    for c in 0..g.c {
        for y in 0..g.h_in {
            for x in 0..g.w_in {
                if y / window < ho && x / window < wo {
                    let s = (c * g.h_in + y) * g.w_in + x;
                    let d = (c * ho + y / window) * wo + x / window;
                    expected.push((s, dst[d as usize], 0));
                }
            }
        }
    }
    Instance {
        kind: "pool",
        n_src,
        plan: encode_pool(&g, &dst).unwrap(),
        payload: (0..n_src).map(|s| s as u16).collect(),
        expected,
        ie_type: IeType::Type0,
    }
}

/// Convolution with channel-interleaved homes: `n` channels per NC over a
/// block of positions, `local = pos_in_block * n + j`.
pub fn conv(rng: &mut impl Rng) -> Instance {
    let k = *[1u32, 3, 5, 7].choose(rng).unwrap();
    let stride = rng.gen_range(1..3);
    let pad = rng.gen_range(0..=k / 2);
    let h_in = rng.gen_range(k.max(2)..12);
    let w_in = rng.gen_range(k.max(2)..12);
    let c_in = rng.gen_range(1..5);
    let c_out = rng.gen_range(1..40);
    let g = ConvGeom {
        c_in,
        h_in,
        w_in,
        c_out,
        k,
        stride,
        pad,
    };
    let (ho, wo) = (
        (h_in + 2 * pad - k) / stride + 1,
        (w_in + 2 * pad - k) / stride + 1,
    );
    let s_out = ho * wo;
    // channels per NC and positions per NC, within 256 slots
    let per = *[1u32, 2, 4, 8, 16].choose(rng).unwrap();
    let pos_blk = (256 / per).min(s_out);
    let mut dst = vec![Loc::new(0, 0, 0); (c_out * s_out) as usize];
    let mut slot = 0u32;
    for cb in (0..c_out).step_by(per as usize) {
        for pb in (0..s_out).step_by(pos_blk as usize) {
            let (cc, nc) = ((slot / 8) as u16, (slot % 8) as u8);
            slot += 1;
            let cnt = per.min(c_out - cb);
            for c in cb..cb + cnt {
                for pos in pb..(pb + pos_blk).min(s_out) {
                    let local = (pos - pb) * cnt + (c - cb);
                    dst[(c * s_out + pos) as usize] = Loc::new(cc, nc, local as u8);
                }
            }
        }
    }
    let mut expected = Vec::new();
    for o in 0..c_out {
        for oy in 0..ho {
            for ox in 0..wo {
                for c in 0..c_in {
                    for ky in 0..k {
                        for kx in 0..k {
                            let (iy, ix) = (
                                (oy * stride + ky) as i64 - pad as i64,
                                (ox * stride + kx) as i64 - pad as i64,
                            );
                            if iy < 0 || ix < 0 || iy >= h_in as i64 || ix >= w_in as i64 {
                                continue;
                            }
                            let s = (c * h_in + iy as u32) * w_in + ix as u32;
                            expected.push((
                                s,
                                dst[(o * s_out + oy * wo + ox) as usize],
                                (ky * k + kx) as u16,
                            ));
                        }
                    }
                }
            }
        }
    }
    let n_src = c_in * h_in * w_in;
    Instance {
        kind: "conv",
        n_src,
        plan: encode_conv(&g, &dst).unwrap(),
        payload: (0..n_src).map(|s| (s / (h_in * w_in)) as u16).collect(),
        expected,
        ie_type: IeType::Type3,
    }
}

pub const KINDS: [fn(&mut rand_chacha::ChaCha8Rng) -> Instance; 5] =
    [full, sparse, explicit, pool, conv];

/// Places logical CCs on random distinct cells, allocates tables, routes
/// every source's fan-out and decodes what each reached CC would deliver.
pub fn round_trip(inst: &Instance, rng: &mut impl Rng) -> Result<Adj, String> {
    let grid = Grid::default();
    let ccs = inst
        .plan
        .keys
        .iter()
        .flat_map(|k| k.per_cc.keys())
        .map(|&c| c as usize + 1)
        .max()
        .unwrap_or(1);
    let mut cells: Vec<usize> = (0..grid.len()).collect();
    cells.shuffle(rng);
    let coords: Vec<Coord> = cells[..ccs].iter().map(|&i| grid.coord(i)).collect();
    let at: HashMap<Coord, usize> = coords.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut tables = TableSet::new(ccs);
    let tag = rng.gen_range(1..=255u8);
    let routes =
        allocate(&inst.plan, tag, &coords, grid, &mut tables).map_err(|e| e.to_string())?;

    let mut hosted = vec![[0u16; 8]; ccs];
    for k in &inst.plan.keys {
        for (cc, ies) in &k.per_cc {
            let de = FanInDE {
                tag: 1,
                ie_type: k.ie_type,
                it_offset: 0,
                it_count: ies.len() as u16,
            };
            for ev in decode_fanin(&de, ies, Word16(0), &[256; 8]).map_err(|e| e.to_string())? {
                let h = &mut hosted[*cc as usize][ev.nc as usize];
                *h = (*h).max(ev.event.neuron + 1);
            }
        }
    }

    let mut got = Vec::new();
    for (s, ie) in routes {
        if ie.tag != tag {
            return Err("route tag mismatch".into());
        }
        let p = Word16(inst.payload[s as usize]);
        let mut reached = BTreeSet::new();
        for c in ie.area.coords() {
            let Some(&cc) = at.get(&c) else { continue };
            reached.insert(cc);
            if let Some((de, ies)) = tables.lookup(cc, tag, ie.index) {
                if de.ie_type != inst.ie_type {
                    return Err(format!("{} encoded as {:?}", inst.kind, de.ie_type));
                }
                for ev in decode_fanin(&de, ies, p, &hosted[cc]).map_err(|e| e.to_string())? {
                    let axon = match inst.ie_type {
                        IeType::Type1 | IeType::Type3 => ev.event.axon,
                        _ => {
                            if ev.event.axon != p.0 {
                                return Err("payload not passed through".into());
                            }
                            0
                        }
                    };
                    got.push((s, Loc::new(cc as u16, ev.nc, ev.event.neuron as u8), axon));
                }
            }
        }
    }
    Ok(got)
}

pub fn same(mut a: Adj, mut b: Adj) -> bool {
    a.sort();
    b.sort();
    a == b
}
