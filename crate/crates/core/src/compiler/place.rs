//! CC placement on the mesh: zigzag start, then greedy or annealed swaps
//! minimising Σ packets × hops.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CompileError;
use crate::noc::{Coord, Grid};

/// Flow endpoint: a logical CC or the host (west of `(0,0)`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Node {
    Host,
    Cc(usize),
}

/// Packet counts between logical CCs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Traffic {
    pub ccs: usize,
    pub flows: Vec<(Node, Node, u64)>,
}

impl Traffic {
    pub fn new(ccs: usize) -> Self {
        Traffic {
            ccs,
            flows: Vec::new(),
        }
    }

    pub fn add(&mut self, a: Node, b: Node, n: u64) {
        if n > 0 && a != b {
            self.flows.push((a, b, n));
        }
    }

    /// Merges duplicate pairs.
    pub fn compact(&mut self) {
        self.flows.sort_by_key(|f| (f.0, f.1));
        let mut out: Vec<(Node, Node, u64)> = Vec::new();
        for f in self.flows.drain(..) {
            match out.last_mut() {
                Some(l) if l.0 == f.0 && l.1 == f.1 => l.2 += f.2,
                _ => out.push(f),
            }
        }
        self.flows = out;
    }

    fn by_cc(&self) -> Vec<Vec<usize>> {
        let mut v = vec![Vec::new(); self.ccs];
        for (i, f) in self.flows.iter().enumerate() {
            for n in [f.0, f.1] {
                if let Node::Cc(c) = n {
                    if !v[c].contains(&i) {
                        v[c].push(i);
                    }
                }
            }
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Placer {
    Greedy,
    Anneal,
    /// Keep the zigzag layout.
    None,
}

fn hops(a: Node, b: Node, at: &[Coord]) -> u64 {
    let pos = |n: Node| match n {
        Node::Host => None,
        Node::Cc(c) => Some(at[c]),
    };
    match (pos(a), pos(b)) {
        (Some(x), Some(y)) => x.manhattan(y) as u64,
        (Some(x), None) | (None, Some(x)) => x.manhattan(Coord::new(0, 0)) as u64 + 1,
        (None, None) => 0,
    }
}

pub fn objective(t: &Traffic, at: &[Coord]) -> u64 {
    t.flows.iter().map(|f| f.2 * hops(f.0, f.1, at)).sum()
}

/// Boustrophedon order: row 0 left to right, row 1 right to left, ...
pub fn place_initial(n: usize, grid: Grid) -> Result<Vec<Coord>, CompileError> {
    if n > grid.len() {
        return Err(CompileError::Infeasible(format!(
            "{n} CCs needed, the grid has {}",
            grid.len()
        )));
    }
    Ok((0..n)
        .map(|i| {
            let r = i / grid.cols as usize;
            let c = i % grid.cols as usize;
            let c = if r.is_multiple_of(2) {
                c
            } else {
                grid.cols as usize - 1 - c
            };
            Coord::new(r as u8, c as u8)
        })
        .collect())
}

struct State<'a> {
    t: &'a Traffic,
    touch: Vec<Vec<usize>>,
    at: Vec<Coord>,
    /// grid cell -> occupying CC
    cell: Vec<Option<usize>>,
    grid: Grid,
}

impl<'a> State<'a> {
    fn new(t: &'a Traffic, at: &[Coord], grid: Grid) -> Self {
        let mut cell = vec![None; grid.len()];
        for (i, &c) in at.iter().enumerate() {
            cell[grid.index(c)] = Some(i);
        }
        State {
            t,
            touch: t.by_cc(),
            at: at.to_vec(),
            cell,
            grid,
        }
    }

    fn local_cost(&self, ccs: &[usize]) -> u64 {
        let mut seen: Vec<usize> = ccs
            .iter()
            .flat_map(|&c| self.touch[c].iter().copied())
            .collect();
        seen.sort_unstable();
        seen.dedup();
        seen.iter()
            .map(|&i| {
                let f = self.t.flows[i];
                f.2 * hops(f.0, f.1, &self.at)
            })
            .sum()
    }

    /// Moves CC `a` to cell `to`, swapping with its occupant.
    fn swap(&mut self, a: usize, to: usize) {
        let from = self.grid.index(self.at[a]);
        let b = self.cell[to];
        self.at[a] = self.grid.coord(to);
        if let Some(b) = b {
            self.at[b] = self.grid.coord(from);
        }
        self.cell[to] = Some(a);
        self.cell[from] = b;
    }

    /// Applies the swap and returns the cost change; undo with
    /// `swap(a, old cell of a)`.
    fn delta(&mut self, a: usize, to: usize) -> i64 {
        let moved: Vec<usize> = std::iter::once(a).chain(self.cell[to]).collect();
        let before = self.local_cost(&moved) as i64;
        self.swap(a, to);
        self.local_cost(&moved) as i64 - before
    }
}

/// Best-improvement swaps until no swap helps or `budget` evaluations run out.
pub fn greedy(t: &Traffic, start: &[Coord], grid: Grid, budget: usize) -> Vec<Coord> {
    let mut s = State::new(t, start, grid);
    let mut evals = 0;
    loop {
        let mut best: Option<(i64, usize, usize)> = None;
        for a in 0..s.at.len() {
            for to in 0..grid.len() {
                if s.cell[to] == Some(a) || s.cell[to].is_some_and(|b| b < a) {
                    continue;
                }
                let home = grid.index(s.at[a]);
                let d = s.delta(a, to);
                s.swap(a, home);
                evals += 1;
                if d < 0 && best.is_none_or(|b| d < b.0) {
                    best = Some((d, a, to));
                }
            }
        }
        match best {
            Some((_, a, to)) if evals <= budget => s.swap(a, to),
            _ => break,
        }
    }
    s.at
}

/// Simulated annealing over random swaps. The initial temperature accepts
/// about half of the uphill moves; cooling is geometric per epoch. Returns
/// the best layout seen.
pub fn anneal(t: &Traffic, start: &[Coord], grid: Grid, budget: usize, seed: u64) -> Vec<Coord> {
    const PER_EPOCH: usize = 100;
    const COOL: f64 = 0.95;
    let n = start.len();
    if n == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = State::new(t, start, grid);
    let mut cost = objective(t, &s.at) as i64;
    let mut best = (cost, s.at.clone());
    // calibrate
    let mut ups = Vec::new();
    for _ in 0..PER_EPOCH {
        let a = rng.gen_range(0..n);
        let to = rng.gen_range(0..grid.len());
        let home = grid.index(s.at[a]);
        let d = s.delta(a, to);
        s.swap(a, home);
        if d > 0 {
            ups.push(d as f64);
        }
    }
    let mean_up = if ups.is_empty() {
        1.0
    } else {
        ups.iter().sum::<f64>() / ups.len() as f64
    };
    let mut temp = mean_up / std::f64::consts::LN_2;
    let epochs = budget.div_ceil(PER_EPOCH).max(1);
    for _ in 0..epochs {
        for _ in 0..PER_EPOCH {
            let a = rng.gen_range(0..n);
            let to = rng.gen_range(0..grid.len());
            let home = grid.index(s.at[a]);
            let d = s.delta(a, to);
            let accept = d <= 0 || rng.gen::<f64>() < (-(d as f64) / temp).exp();
            if accept {
                cost += d;
                if cost < best.0 {
                    best = (cost, s.at.clone());
                }
            } else {
                s.swap(a, home);
            }
        }
        temp *= COOL;
    }
    best.1
}

/// Tries every injective assignment; for tiny instances and tests.
pub fn exhaustive(t: &Traffic, n: usize, grid: Grid) -> (u64, Vec<Coord>) {
    fn rec(
        t: &Traffic,
        grid: Grid,
        n: usize,
        cur: &mut Vec<Coord>,
        used: &mut Vec<bool>,
        best: &mut (u64, Vec<Coord>),
    ) {
        if cur.len() == n {
            let o = objective(t, cur);
            if o < best.0 {
                *best = (o, cur.clone());
            }
            return;
        }
        for i in 0..grid.len() {
            if !used[i] {
                used[i] = true;
                cur.push(grid.coord(i));
                rec(t, grid, n, cur, used, best);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut best = (u64::MAX, Vec::new());
    rec(
        t,
        grid,
        n,
        &mut Vec::new(),
        &mut vec![false; grid.len()],
        &mut best,
    );
    best
}

/// Placements of `n` CCs on `cells` cells, saturating.
fn search_space(cells: usize, n: usize) -> usize {
    (0..n).fold(1usize, |acc, i| acc.saturating_mul(cells - i))
}

/// Instances at most this large are solved exactly.
pub const EXACT_LIMIT: usize = 50_000;

/// Runs the selected placer from the zigzag start; never returns a layout
/// worse than the start. Tiny instances are solved by exhaustive search.
pub fn optimize_placement(
    t: &Traffic,
    start: &[Coord],
    grid: Grid,
    placer: Placer,
    budget: usize,
    seed: u64,
) -> Vec<Coord> {
    if placer != Placer::None && search_space(grid.len(), start.len()) <= EXACT_LIMIT {
        let (o, best) = exhaustive(t, start.len(), grid);
        if o < objective(t, start) {
            return best;
        }
        return start.to_vec();
    }
    let out = match placer {
        Placer::None => return start.to_vec(),
        Placer::Greedy => greedy(t, start, grid, budget),
        Placer::Anneal => anneal(t, start, grid, budget, seed),
    };
    if objective(t, &out) <= objective(t, start) {
        out
    } else {
        start.to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid {
        Grid::new(11, 12)
    }

    #[test]
    fn zigzag_rows() {
        let p = place_initial(5, grid()).unwrap();
        assert_eq!(p, (0..5).map(|c| Coord::new(0, c)).collect::<Vec<_>>());
        let p = place_initial(13, grid()).unwrap();
        assert_eq!(p[11], Coord::new(0, 11));
        assert_eq!(p[12], Coord::new(1, 11));
        assert!(place_initial(133, grid()).is_err());
    }

    fn chain(n: usize) -> Traffic {
        let mut t = Traffic::new(n);
        for i in 0..n - 1 {
            t.add(Node::Cc(i), Node::Cc(i + 1), 10 + i as u64);
        }
        t.add(Node::Cc(0), Node::Cc(n - 1), 50);
        t.add(Node::Host, Node::Cc(n - 1), 7);
        t
    }

    #[test]
    fn small_grid_matches_exhaustive() {
        let g = Grid::new(2, 2);
        let t = chain(3);
        let (opt, _) = exhaustive(&t, 3, g);
        let start = place_initial(3, g).unwrap();
        for placer in [Placer::Greedy, Placer::Anneal] {
            let p = optimize_placement(&t, &start, g, placer, 20_000, 3);
            assert_eq!(objective(&t, &p), opt, "{placer:?}");
        }
    }

    #[test]
    fn anneal_alone_finds_small_optimum() {
        let g = Grid::new(2, 2);
        for n in [3, 4] {
            let t = chain(n);
            let (opt, _) = exhaustive(&t, n, g);
            let p = anneal(&t, &place_initial(n, g).unwrap(), g, 5000, 1);
            assert_eq!(objective(&t, &p), opt);
        }
    }

    #[test]
    fn never_worse_and_seeded() {
        let g = grid();
        let t = chain(20);
        let start = place_initial(20, g).unwrap();
        let o0 = objective(&t, &start);
        for placer in [Placer::Greedy, Placer::Anneal] {
            let p = optimize_placement(&t, &start, g, placer, 5000, 9);
            assert!(objective(&t, &p) <= o0);
        }
        let a = optimize_placement(&t, &start, g, Placer::Anneal, 5000, 9);
        let b = optimize_placement(&t, &start, g, Placer::Anneal, 5000, 9);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_traffic() {
        let t = Traffic::new(6);
        let start = place_initial(6, grid()).unwrap();
        let p = optimize_placement(&t, &start, grid(), Placer::Anneal, 1000, 1);
        assert_eq!(objective(&t, &p), 0);
    }
}
