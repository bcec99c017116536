//! Table construction.
//!
//! Encoding happens in two steps. `encode_*` turns one connection into a
//! [`ConnPlan`]: a list of keys, each naming the source neurons that share a
//! fan-in DE and the IEs that DE needs in every destination CC. `allocate`
//! then assigns DT indices (equal across a multicast rectangle), writes the
//! DEs and IEs into a [`TableSet`] and returns the fan-out IE every source
//! neuron must carry.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::*;
use crate::noc::{Area, Coord, Grid};

/// Physical home of a neuron: logical CC, NC inside it, slot inside the NC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Loc {
    pub cc: u16,
    pub nc: u8,
    pub local: u8,
}

impl Loc {
    pub fn new(cc: u16, nc: u8, local: u8) -> Self {
        Loc { cc, nc, local }
    }

    pub fn id(&self) -> u16 {
        neuron_id(self.nc, self.local)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyPlan {
    pub ie_type: IeType,
    pub sources: Vec<u32>,
    pub per_cc: BTreeMap<u16, Vec<FanInIE>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnPlan {
    pub keys: Vec<KeyPlan>,
}

impl ConnPlan {
    pub fn ie_count(&self) -> usize {
        self.keys
            .iter()
            .flat_map(|k| k.per_cc.values())
            .map(|v| v.len())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub c_in: u32,
    pub h_in: u32,
    pub w_in: u32,
    pub c_out: u32,
    pub k: u32,
    pub stride: u32,
    pub pad: u32,
}

impl ConvGeom {
    pub fn h_out(&self) -> u32 {
        (self.h_in + 2 * self.pad).saturating_sub(self.k) / self.stride + 1
    }

    pub fn w_out(&self) -> u32 {
        (self.w_in + 2 * self.pad).saturating_sub(self.k) / self.stride + 1
    }

    pub fn in_size(&self) -> u32 {
        self.h_in * self.w_in
    }

    pub fn out_size(&self) -> u32 {
        self.h_out() * self.w_out()
    }

    pub fn fan_in(&self) -> u32 {
        self.c_in * self.k * self.k
    }

    /// Output positions reached from input position `pos`, each with the
    /// filter offset `ky*k + kx` that connects them.
    pub fn reach(&self, pos: u32) -> Vec<(u32, u32)> {
        let (y, x) = ((pos / self.w_in) as i64, (pos % self.w_in) as i64);
        let (s, p) = (self.stride as i64, self.pad as i64);
        let mut v = Vec::new();
        for ky in 0..self.k as i64 {
            let ny = y + p - ky;
            if ny < 0 || ny % s != 0 || ny / s >= self.h_out() as i64 {
                continue;
            }
            for kx in 0..self.k as i64 {
                let nx = x + p - kx;
                if nx < 0 || nx % s != 0 || nx / s >= self.w_out() as i64 {
                    continue;
                }
                let o = (ny / s) as u32 * self.w_out() + (nx / s) as u32;
                v.push((o, (ky * self.k as i64 + kx) as u32));
            }
        }
        v.sort();
        v
    }
}

/// Non-overlapping pooling window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolGeom {
    pub c: u32,
    pub h_in: u32,
    pub w_in: u32,
    pub window: u32,
}

impl PoolGeom {
    pub fn h_out(&self) -> u32 {
        self.h_in / self.window
    }

    pub fn w_out(&self) -> u32 {
        self.w_in / self.window
    }

    /// Flat output index fed by flat input index `src`, if any.
    pub fn target(&self, src: u32) -> Option<u32> {
        let s_in = self.h_in * self.w_in;
        let (c, pos) = (src / s_in, src % s_in);
        let (y, x) = (pos / self.w_in / self.window, pos % self.w_in / self.window);
        (y < self.h_out() && x < self.w_out())
            .then(|| c * self.h_out() * self.w_out() + y * self.w_out() + x)
    }
}

fn part_of(parts: &[Range<u32>], src: u32) -> Option<usize> {
    parts.iter().position(|r| r.contains(&src))
}

/// Splits sorted locals into arithmetic runs `(start, margin, len)`.
fn runs(locals: &[u8]) -> Vec<(u16, u16, u16)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < locals.len() {
        let start = locals[i];
        let mut len = 1;
        let mut margin = 1u16;
        if i + 1 < locals.len() {
            margin = (locals[i + 1] - start) as u16;
            len = 2;
            while i + len < locals.len()
                && locals[i + len] as u16 == start as u16 + len as u16 * margin
            {
                len += 1;
            }
        }
        out.push((start as u16, margin, len as u16));
        i += len;
    }
    out
}

/// Groups NC-local runs with identical shape under one mask.
fn type2_ies(by_nc: &BTreeMap<u8, Vec<u8>>) -> Vec<FanInIE> {
    let mut groups: Vec<((u16, u16, u16), u8)> = Vec::new();
    for (&nc, locals) in by_nc {
        let mut l = locals.clone();
        l.sort();
        l.dedup();
        for r in runs(&l) {
            match groups.iter_mut().find(|g| g.0 == r && g.1 & (1 << nc) == 0) {
                Some(g) => g.1 |= 1 << nc,
                None => groups.push((r, 1 << nc)),
            }
        }
    }
    groups
        .into_iter()
        .map(|((start, margin, len), mask)| FanInIE::Type2 {
            mask,
            margin,
            count: len * mask.count_ones() as u16,
            start,
        })
        .collect()
}

/// Fully connected: every source in `parts[p]` reaches `dst[p][d]` for all
/// `d`. One key per input partition; the payload carries the source index.
pub fn encode_full(parts: &[Range<u32>], dst: &[Vec<Loc>]) -> Result<ConnPlan, TopoError> {
    if parts.len() != dst.len() {
        return Err(TopoError::Inconsistent("partition count"));
    }
    let mut plan = ConnPlan::default();
    for (p, range) in parts.iter().enumerate() {
        if range.len() > FANIN_LIMIT {
            return Err(TopoError::FaninTooLarge(range.len()));
        }
        let mut cc_nc: BTreeMap<u16, BTreeMap<u8, Vec<u8>>> = BTreeMap::new();
        for loc in &dst[p] {
            cc_nc
                .entry(loc.cc)
                .or_default()
                .entry(loc.nc)
                .or_default()
                .push(loc.local);
        }
        let per_cc = cc_nc.iter().map(|(&cc, m)| (cc, type2_ies(m))).collect();
        plan.keys.push(KeyPlan {
            ie_type: IeType::Type2,
            sources: range.clone().collect(),
            per_cc,
        });
    }
    Ok(plan)
}

/// Sparse edge list `(src, dst)`; weights are found by FINDIDX at the
/// destination. One key per source neuron.
pub fn encode_sparse(
    n_src: u32,
    edges: &[(u32, u32)],
    parts: &[Range<u32>],
    dst: &[Vec<Loc>],
) -> Result<ConnPlan, TopoError> {
    let mut by_src: Vec<Vec<Loc>> = vec![Vec::new(); n_src as usize];
    for &(s, d) in edges {
        let p = part_of(parts, s).ok_or(TopoError::Inconsistent("source outside partitions"))?;
        by_src[s as usize].push(dst[p][d as usize]);
    }
    let mut plan = ConnPlan::default();
    for (s, locs) in by_src.into_iter().enumerate() {
        if locs.is_empty() {
            continue;
        }
        let mut per_cc: BTreeMap<u16, Vec<FanInIE>> = BTreeMap::new();
        for l in locs {
            per_cc
                .entry(l.cc)
                .or_default()
                .push(FanInIE::Type0 { neuron: l.id() });
        }
        plan.keys.push(KeyPlan {
            ie_type: IeType::Type0,
            sources: vec![s as u32],
            per_cc,
        });
    }
    Ok(plan)
}

/// Explicit synapses `(src, dst, slot)`: the destination reads its weight
/// from slot `slot` of its explicit-weight array.
pub fn encode_explicit(
    n_src: u32,
    edges: &[(u32, u32, u16)],
    dst: &[Loc],
) -> Result<ConnPlan, TopoError> {
    let mut by_src: Vec<Vec<(Loc, u16)>> = vec![Vec::new(); n_src as usize];
    for &(s, d, slot) in edges {
        if slot >= EXPLICIT_AXON {
            return Err(TopoError::Inconsistent("explicit slot too large"));
        }
        by_src[s as usize].push((dst[d as usize], slot));
    }
    let mut plan = ConnPlan::default();
    for (s, v) in by_src.into_iter().enumerate() {
        if v.is_empty() {
            continue;
        }
        let mut per_cc: BTreeMap<u16, Vec<FanInIE>> = BTreeMap::new();
        for (l, slot) in v {
            per_cc.entry(l.cc).or_default().push(FanInIE::Type1 {
                neuron: l.id(),
                local_axon: EXPLICIT_AXON | slot,
            });
        }
        plan.keys.push(KeyPlan {
            ie_type: IeType::Type1,
            sources: vec![s as u32],
            per_cc,
        });
    }
    Ok(plan)
}

/// Pooling: each source feeds at most one destination. One key per source.
pub fn encode_pool(g: &PoolGeom, dst: &[Loc]) -> Result<ConnPlan, TopoError> {
    let mut plan = ConnPlan::default();
    for s in 0..g.c * g.h_in * g.w_in {
        if let Some(d) = g.target(s) {
            let l = dst[d as usize];
            plan.keys.push(KeyPlan {
                ie_type: IeType::Type0,
                sources: vec![s],
                per_cc: [(l.cc, vec![FanInIE::Type0 { neuron: l.id() }])].into(),
            });
        }
    }
    Ok(plan)
}

/// Convolution. `dst` is indexed by flat output index `c*S_out + pos`. The
/// key is the source position, shared by all input channels; destination
/// NCs must hold their channels interleaved (`local = pos*n + j`).
pub fn encode_conv(g: &ConvGeom, dst: &[Loc]) -> Result<ConnPlan, TopoError> {
    if g.fan_in() as usize > FANIN_LIMIT {
        return Err(TopoError::FaninTooLarge(g.fan_in() as usize));
    }
    let s_in = g.in_size();
    let s_out = g.out_size();
    let mut plan = ConnPlan::default();
    for pos in 0..s_in {
        let mut per_cc: BTreeMap<u16, Vec<FanInIE>> = BTreeMap::new();
        for (o, l) in g.reach(pos) {
            let mut by: BTreeMap<(u16, u8), Vec<u8>> = BTreeMap::new();
            for c in 0..g.c_out {
                let loc = dst[(c * s_out + o) as usize];
                by.entry((loc.cc, loc.nc)).or_default().push(loc.local);
            }
            // (cc, neuron, numbers) -> mask
            let mut groups: Vec<((u16, u16, u16), u8)> = Vec::new();
            for ((cc, nc), mut locals) in by {
                locals.sort();
                let n = locals.len() as u16;
                let base = locals[0] as u16;
                let consecutive = locals.windows(2).all(|w| w[1] == w[0] + 1);
                if !consecutive || !base.is_multiple_of(n) {
                    return Err(TopoError::Layout {
                        nc,
                        what: "interleaved channels",
                    });
                }
                let key = (cc, base / n, n);
                match groups.iter_mut().find(|g| g.0 == key) {
                    Some(g) => g.1 |= 1 << nc,
                    None => groups.push((key, 1 << nc)),
                }
            }
            for ((cc, neuron, numbers), mask) in groups {
                per_cc.entry(cc).or_default().push(FanInIE::Type3 {
                    mask,
                    numbers,
                    neuron,
                    local_axon: l as u16,
                });
            }
        }
        if per_cc.is_empty() {
            continue;
        }
        plan.keys.push(KeyPlan {
            ie_type: IeType::Type3,
            sources: (0..g.c_in).map(|c| c * s_in + pos).collect(),
            per_cc,
        });
    }
    Ok(plan)
}

/// Fan-out IEs of one source neuron.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRoutes {
    pub forward: Vec<FanOutIE>,
    pub delayed: Vec<FanOutIE>,
    pub delay: u8,
}

/// DT/IT images of every logical CC.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TableSet {
    pub fanin_dt: Vec<Vec<FanInDE>>,
    pub fanin_it: Vec<Vec<FanInIE>>,
    pub fanout_dt: Vec<BTreeMap<u16, FanOutDE>>,
    pub fanout_it: Vec<Vec<FanOutIE>>,
    #[serde(skip)]
    in_dedupe: Vec<HashMap<Vec<FanInIE>, u16>>,
    #[serde(skip)]
    out_dedupe: Vec<HashMap<Vec<FanOutIE>, u16>>,
}

impl TableSet {
    pub fn new(ccs: usize) -> Self {
        TableSet {
            fanin_dt: vec![Vec::new(); ccs],
            fanin_it: vec![Vec::new(); ccs],
            fanout_dt: vec![BTreeMap::new(); ccs],
            fanout_it: vec![Vec::new(); ccs],
            in_dedupe: vec![HashMap::new(); ccs],
            out_dedupe: vec![HashMap::new(); ccs],
        }
    }

    pub fn len(&self) -> usize {
        self.fanin_dt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fanin_dt.is_empty()
    }

    fn it_slice(&mut self, cc: usize, ies: &[FanInIE]) -> u16 {
        if let Some(&o) = self.in_dedupe[cc].get(ies) {
            return o;
        }
        let o = self.fanin_it[cc].len() as u16;
        self.fanin_it[cc].extend_from_slice(ies);
        self.in_dedupe[cc].insert(ies.to_vec(), o);
        o
    }

    fn pad_to(&mut self, cc: usize, len: usize) {
        while self.fanin_dt[cc].len() < len {
            self.fanin_dt[cc].push(FanInDE::placeholder());
        }
    }

    /// Looks up the DE at `index` and its IT slice, if the tag matches.
    pub fn lookup(&self, cc: usize, tag: u8, index: u16) -> Option<(FanInDE, &[FanInIE])> {
        let de = *self.fanin_dt.get(cc)?.get(index as usize)?;
        if de.tag != tag || tag == PLACEHOLDER_TAG {
            return None;
        }
        let o = de.it_offset as usize;
        Some((de, &self.fanin_it[cc][o..o + de.it_count as usize]))
    }

    /// Writes the fan-out DE of neuron `id` in CC `cc`.
    pub fn set_fanout(
        &mut self,
        cc: usize,
        id: u16,
        global_axon: u16,
        routes: &SourceRoutes,
        capacity: usize,
    ) -> Result<(), TopoError> {
        for v in [&routes.forward, &routes.delayed] {
            if v.len() > capacity.min(15) {
                return Err(TopoError::FanoutCapacity(v.len(), capacity));
            }
        }
        if !routes.delayed.is_empty() && routes.delay == 0 {
            return Err(TopoError::BadDelay);
        }
        let mut all = routes.forward.clone();
        all.extend_from_slice(&routes.delayed);
        let off = match self.out_dedupe[cc].get(&all) {
            Some(&o) => o,
            None => {
                let o = self.fanout_it[cc].len() as u16;
                self.fanout_it[cc].extend_from_slice(&all);
                self.out_dedupe[cc].insert(all, o);
                o
            }
        };
        self.fanout_dt[cc].insert(
            id,
            FanOutDE {
                global_axon,
                fwd_offset: off,
                fwd_count: routes.forward.len() as u8,
                dly_offset: off + routes.forward.len() as u16,
                dly_count: routes.delayed.len() as u8,
                delay: routes.delay,
            },
        );
        Ok(())
    }

    pub fn report(&self) -> StorageReport {
        let mut r = StorageReport::default();
        for cc in 0..self.len() {
            r.fanin_des += self.fanin_dt[cc].len();
            for ie in &self.fanin_it[cc] {
                r.fanin_ies[ie.ie_type() as usize] += 1;
            }
            r.fanout_des += self.fanout_dt[cc].len();
            r.fanout_ies += self.fanout_it[cc].len();
        }
        r
    }
}

/// Assigns DT indices for every key of `plan`, writes the fan-in side into
/// `tables` and returns `(source, fan-out IE)` pairs.
///
/// Keys reaching one CC get the next free index there and a unicast route.
/// Keys reaching several CCs get one index valid in every used CC of the
/// bounding rectangle; CCs of the rectangle that are not targets receive a
/// placeholder at that index so the packet is dropped by tag.
pub fn allocate(
    plan: &ConnPlan,
    tag: u8,
    coords: &[Coord],
    grid: Grid,
    tables: &mut TableSet,
) -> Result<Vec<(u32, FanOutIE)>, TopoError> {
    if tag == PLACEHOLDER_TAG {
        return Err(TopoError::Inconsistent("tag 0 is reserved"));
    }
    let by_coord: HashMap<Coord, usize> = coords.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut out = Vec::new();
    for key in &plan.keys {
        if key.per_cc.is_empty() {
            continue;
        }
        let targets: Vec<usize> = key.per_cc.keys().map(|&c| c as usize).collect();
        let (area, members) = if targets.len() == 1 {
            (Area::single(coords[targets[0]]), targets.clone())
        } else {
            let r0 = targets.iter().map(|&c| coords[c].row).min().unwrap();
            let r1 = targets.iter().map(|&c| coords[c].row).max().unwrap();
            let c0 = targets.iter().map(|&c| coords[c].col).min().unwrap();
            let c1 = targets.iter().map(|&c| coords[c].col).max().unwrap();
            let a = Area::rect(r0, c0, r1, c1);
            let m: Vec<usize> = a
                .coords()
                .filter_map(|c| by_coord.get(&c).copied())
                .collect();
            (a, m)
        };
        let index = members
            .iter()
            .map(|&c| tables.fanin_dt[c].len())
            .max()
            .unwrap();
        if index >= MAX_FANIN_DES {
            return Err(TopoError::DtFull(index));
        }
        for &c in &members {
            tables.pad_to(c, index);
            let de = match key.per_cc.get(&(c as u16)) {
                Some(ies) => FanInDE {
                    tag,
                    ie_type: key.ie_type,
                    it_offset: tables.it_slice(c, ies),
                    it_count: ies.len() as u16,
                },
                None => FanInDE::placeholder(),
            };
            tables.fanin_dt[c].push(de);
        }
        let mode = if targets.len() == 1 {
            RouteMode::Unicast
        } else if area == grid.full_area() {
            RouteMode::Broadcast
        } else {
            RouteMode::Multicast
        };
        let ie = FanOutIE {
            mode,
            area,
            tag,
            index: index as u16,
        };
        out.extend(key.sources.iter().map(|&s| (s, ie)));
    }
    Ok(out)
}

/// Entry and bit counts of a set of tables.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageReport {
    pub fanin_des: usize,
    pub fanin_ies: [usize; 4],
    pub fanout_des: usize,
    pub fanout_ies: usize,
}

/// Fan-out IE width: mode+tag, area, index.
pub const FANOUT_IE_FIELDS: usize = 3;

impl StorageReport {
    pub fn fanin_ie_total(&self) -> usize {
        self.fanin_ies.iter().sum()
    }

    pub fn entries(&self) -> usize {
        self.fanin_des + self.fanin_ie_total() + self.fanout_des + self.fanout_ies
    }

    pub fn bits(&self) -> usize {
        let ie_bits: usize = IeType::ALL
            .iter()
            .map(|t| self.fanin_ies[*t as usize] * t.fields() * IE_FIELD_BITS)
            .sum();
        (self.fanin_des + self.fanout_des) * DE_BITS
            + ie_bits
            + self.fanout_ies * FANOUT_IE_FIELDS * IE_FIELD_BITS
    }

    pub fn add(&mut self, o: &StorageReport) {
        self.fanin_des += o.fanin_des;
        for i in 0..4 {
            self.fanin_ies[i] += o.fanin_ies[i];
        }
        self.fanout_des += o.fanout_des;
        self.fanout_ies += o.fanout_ies;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runs_split() {
        assert_eq!(runs(&[0, 1, 2, 3]), vec![(0, 1, 4)]);
        assert_eq!(runs(&[0, 2, 4, 5]), vec![(0, 2, 3), (5, 1, 1)]);
        assert_eq!(runs(&[7]), vec![(7, 1, 1)]);
    }

    #[test]
    fn full_784_to_100_is_one_entry() {
        let dst: Vec<Loc> = (0..100).map(|i| Loc::new(0, 0, i as u8)).collect();
        let plan = encode_full(&[0..784], &[dst]).unwrap();
        assert_eq!(plan.keys.len(), 1);
        assert_eq!(plan.ie_count(), 1);
        let mut t = TableSet::new(1);
        let routes = allocate(&plan, 1, &[Coord::new(0, 0)], Grid::default(), &mut t).unwrap();
        assert_eq!(routes.len(), 784);
        let r = t.report();
        assert_eq!(r.fanin_des, 1);
        assert_eq!(r.fanin_ies[2], 1);
    }

    #[test]
    fn conv_reach_counts() {
        let g = ConvGeom {
            c_in: 1,
            h_in: 5,
            w_in: 5,
            c_out: 1,
            k: 3,
            stride: 1,
            pad: 1,
        };
        assert_eq!(g.reach(12).len(), 9);
        assert_eq!(g.reach(0).len(), 4);
        let g2 = ConvGeom { stride: 2, ..g };
        assert_eq!(g2.h_out(), 3);
        assert!(g2.reach(12).iter().all(|&(o, l)| o < 9 && l < 9));
    }

    #[test]
    fn multicast_alignment_and_placeholders() {
        // three CCs in a row; the key targets the outer two
        let coords = [Coord::new(0, 0), Coord::new(0, 1), Coord::new(0, 2)];
        let mut t = TableSet::new(3);
        t.pad_to(1, 5);
        let plan = ConnPlan {
            keys: vec![KeyPlan {
                ie_type: IeType::Type0,
                sources: vec![0],
                per_cc: [
                    (0, vec![FanInIE::Type0 { neuron: 1 }]),
                    (2, vec![FanInIE::Type0 { neuron: 2 }]),
                ]
                .into(),
            }],
        };
        let r = allocate(&plan, 3, &coords, Grid::default(), &mut t).unwrap();
        assert_eq!(r[0].1.index, 5);
        assert_eq!(r[0].1.mode, RouteMode::Multicast);
        assert!(t.lookup(0, 3, 5).is_some());
        assert!(t.lookup(1, 3, 5).is_none());
        assert!(t.lookup(2, 3, 5).is_some());
    }
}
