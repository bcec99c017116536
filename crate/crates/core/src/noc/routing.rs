//! Routing decisions of one router.
//!
//! * Unicast and memory packets use XY routing: columns first, then rows.
//!   Host-bound packets travel to (0,0) and leave through its west port.
//! * Regional multicast approaches the rectangle on the XY shortest path to
//!   its nearest cell (phase 0). The first cell reached becomes the root of
//!   an in-region tree: it spreads along its column (phase 1) and every
//!   column cell spreads along its row (phase 2).
//! * Broadcast is the same tree over the whole grid, rooted at the source.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::packet::{Area, Coord, Packet, PacketType};

pub const PHASE_APPROACH: u8 = 0;
pub const PHASE_COLUMN: u8 = 1;
pub const PHASE_ROW: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Port {
    North,
    East,
    South,
    West,
    Local,
}

impl Port {
    /// Arbitration priority order.
    pub const ALL: [Port; 5] = [
        Port::North,
        Port::East,
        Port::South,
        Port::West,
        Port::Local,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn opposite(self) -> Port {
        match self {
            Port::North => Port::South,
            Port::South => Port::North,
            Port::East => Port::West,
            Port::West => Port::East,
            Port::Local => Port::Local,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub rows: u8,
    pub cols: u8,
}

impl Default for Grid {
    fn default() -> Self {
        Grid { rows: 11, cols: 12 }
    }
}

impl Grid {
    pub fn new(rows: u8, cols: u8) -> Self {
        Grid { rows, cols }
    }

    pub fn len(&self) -> usize {
        self.rows as usize * self.cols as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, c: Coord) -> bool {
        c.row < self.rows && c.col < self.cols
    }

    pub fn index(&self, c: Coord) -> usize {
        c.row as usize * self.cols as usize + c.col as usize
    }

    pub fn coord(&self, i: usize) -> Coord {
        Coord::new(
            (i / self.cols as usize) as u8,
            (i % self.cols as usize) as u8,
        )
    }

    pub fn full_area(&self) -> Area {
        Area::rect(0, 0, self.rows - 1, self.cols - 1)
    }

    pub fn area_fits(&self, a: &Area) -> bool {
        a.is_well_formed() && a.x1 < self.cols && a.y1 < self.rows
    }

    pub fn neighbor(&self, c: Coord, p: Port) -> Option<Coord> {
        match p {
            Port::North if c.row > 0 => Some(Coord::new(c.row - 1, c.col)),
            Port::South if c.row + 1 < self.rows => Some(Coord::new(c.row + 1, c.col)),
            Port::West if c.col > 0 => Some(Coord::new(c.row, c.col - 1)),
            Port::East if c.col + 1 < self.cols => Some(Coord::new(c.row, c.col + 1)),
            _ => None,
        }
    }

    pub fn diameter(&self) -> u32 {
        self.rows as u32 + self.cols as u32 - 2
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RouteError {
    #[error("malformed destination area {0:?}")]
    MalformedArea(Area),
    #[error("destination {0:?} outside the {1}x{2} grid")]
    OutsideGrid(Area, u8, u8),
}

/// One routing output: a port and the packet copy sent there (the phase may
/// change). `Port::West` out of (0,0) for a host-bound packet reaches the host.
pub type Hop = (Port, Packet);

fn step_toward(cur: u8, target: u8, dec: Port, inc: Port) -> Option<Port> {
    use std::cmp::Ordering::*;
    match cur.cmp(&target) {
        Less => Some(inc),
        Greater => Some(dec),
        Equal => None,
    }
}

fn xy_port(cur: Coord, dst: Coord) -> Port {
    step_toward(cur.col, dst.col, Port::West, Port::East)
        .or_else(|| step_toward(cur.row, dst.row, Port::North, Port::South))
        .unwrap_or(Port::Local)
}

/// Direction of travel of a packet that arrived through `in_port`.
fn travel_dir(in_port: Port) -> Option<Port> {
    match in_port {
        Port::Local => None,
        p => Some(p.opposite()),
    }
}

fn in_region_tree(cur: Coord, area: &Area, p: &Packet, in_port: Port, out: &mut Vec<Hop>) {
    let with = |phase: u8| Packet { phase, ..*p };
    let row_spread = |out: &mut Vec<Hop>| {
        if cur.col > area.x0 {
            out.push((Port::West, with(PHASE_ROW)));
        }
        if cur.col < area.x1 {
            out.push((Port::East, with(PHASE_ROW)));
        }
    };
    out.push((Port::Local, with(p.phase)));
    match (p.phase, travel_dir(in_port)) {
        (PHASE_ROW, Some(d)) => {
            let keep = match d {
                Port::East => cur.col < area.x1,
                Port::West => cur.col > area.x0,
                _ => false,
            };
            if keep {
                out.push((d, with(PHASE_ROW)));
            }
        }
        (PHASE_COLUMN, Some(d)) => {
            let keep = match d {
                Port::North => cur.row > area.y0,
                Port::South => cur.row < area.y1,
                _ => false,
            };
            if keep {
                out.push((d, with(PHASE_COLUMN)));
            }
            row_spread(out);
        }
        _ => {
            // root of the tree: entry cell or the source itself
            if cur.row > area.y0 {
                out.push((Port::North, with(PHASE_COLUMN)));
            }
            if cur.row < area.y1 {
                out.push((Port::South, with(PHASE_COLUMN)));
            }
            row_spread(out);
        }
    }
}

/// Output ports for packet `p` arriving at router `cur` through `in_port`
/// (`Port::Local` for injection). The result lists each output at most once.
pub fn route_next_hops(
    grid: Grid,
    cur: Coord,
    in_port: Port,
    p: &Packet,
) -> Result<Vec<Hop>, RouteError> {
    let mut out = Vec::with_capacity(4);
    if p.dest.is_host() {
        let port = if cur.col > 0 {
            Port::West
        } else if cur.row > 0 {
            Port::North
        } else {
            Port::West
        };
        out.push((port, *p));
        return Ok(out);
    }
    let area = match p.ptype {
        PacketType::SpikeBroadcast => grid.full_area(),
        _ => p.dest,
    };
    if !area.is_well_formed() {
        return Err(RouteError::MalformedArea(area));
    }
    if !grid.area_fits(&area) {
        return Err(RouteError::OutsideGrid(area, grid.rows, grid.cols));
    }
    match p.ptype {
        PacketType::SpikeMulticast | PacketType::SpikeBroadcast => {
            if p.phase == PHASE_APPROACH && !area.contains(cur) {
                let target = Coord::new(
                    cur.row.clamp(area.y0, area.y1),
                    cur.col.clamp(area.x0, area.x1),
                );
                out.push((xy_port(cur, target), *p));
            } else {
                in_region_tree(cur, &area, p, in_port, &mut out);
            }
        }
        _ => {
            let dst = Coord::new(area.y0, area.x0);
            out.push((xy_port(cur, dst), *p));
        }
    }
    Ok(out)
}

/// Contention-free walk of a packet injected at `src`: the CCs it is
/// delivered to (in delivery order), whether it reached the host, and the
/// number of link traversals.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Walk {
    pub delivered: Vec<(Coord, u32)>,
    pub to_host: Option<u32>,
    pub links: u32,
}

pub fn walk(grid: Grid, src: Coord, p: &Packet) -> Result<Walk, RouteError> {
    let mut w = Walk::default();
    let mut frontier = vec![(src, Port::Local, *p, 0u32)];
    while let Some((at, inp, pk, hops)) = frontier.pop() {
        for (port, q) in route_next_hops(grid, at, inp, &pk)? {
            if port == Port::Local {
                w.delivered.push((at, hops));
                continue;
            }
            w.links += 1;
            match grid.neighbor(at, port) {
                Some(n) => frontier.push((n, port.opposite(), q, hops + 1)),
                None => {
                    if pk.dest.is_host() {
                        w.to_host = Some(hops + 1);
                    } else {
                        unreachable!("route leaves the grid at {at} via {port:?}");
                    }
                }
            }
        }
    }
    w.delivered.sort();
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uni(dst: Coord) -> Packet {
        Packet::spike(PacketType::SpikeUnicast, Area::single(dst), 1, 0, 0)
    }

    #[test]
    fn unicast_hops_is_manhattan() {
        let g = Grid::default();
        let w = walk(g, Coord::new(1, 2), &uni(Coord::new(4, 6))).unwrap();
        assert_eq!(w.delivered, vec![(Coord::new(4, 6), 7)]);
        assert_eq!(w.links, 7);
        let w = walk(g, Coord::new(3, 3), &uni(Coord::new(3, 3))).unwrap();
        assert_eq!(w.delivered, vec![(Coord::new(3, 3), 0)]);
        assert_eq!(w.links, 0);
    }

    #[test]
    fn multicast_rectangle_from_outside() {
        let g = Grid::default();
        let p = Packet::spike(PacketType::SpikeMulticast, Area::rect(0, 0, 1, 2), 1, 0, 0);
        let src = Coord::new(5, 5);
        let w = walk(g, src, &p).unwrap();
        let cells: Vec<Coord> = w.delivered.iter().map(|d| d.0).collect();
        let want: Vec<Coord> = Area::rect(0, 0, 1, 2).coords().collect();
        let mut want = want;
        want.sort();
        assert_eq!(cells, want);
        let unicast_sum: u32 = want.iter().map(|c| c.manhattan(src)).sum();
        assert!(w.links <= unicast_sum);
        // approach = distance to nearest cell (1,2) = 4+3, tree = 5 links
        assert_eq!(w.links, 7 + 5);
    }

    #[test]
    fn source_inside_rectangle_is_root() {
        let g = Grid::default();
        let p = Packet::spike(PacketType::SpikeMulticast, Area::rect(2, 2, 4, 5), 1, 0, 0);
        let w = walk(g, Coord::new(3, 3), &p).unwrap();
        assert_eq!(w.delivered.len(), 12);
        assert_eq!(w.links, 11);
    }

    #[test]
    fn broadcast_covers_grid_once() {
        let g = Grid::default();
        let p = Packet::spike(PacketType::SpikeBroadcast, g.full_area(), 1, 0, 0);
        let w = walk(g, Coord::new(5, 6), &p).unwrap();
        assert_eq!(w.delivered.len(), 132);
        assert_eq!(w.links, 131);
        let max = w.delivered.iter().map(|d| d.1).max().unwrap();
        assert!(max <= g.diameter());
    }

    #[test]
    fn host_path() {
        let g = Grid::default();
        let p = Packet::mem(
            PacketType::MemReadResp,
            super::super::packet::HOST_AREA,
            0,
            0,
        );
        let w = walk(g, Coord::new(3, 4), &p).unwrap();
        assert!(w.delivered.is_empty());
        assert_eq!(w.to_host, Some(8));
    }

    #[test]
    fn malformed_area() {
        let g = Grid::default();
        let p = Packet::spike(PacketType::SpikeMulticast, Area::rect(3, 0, 1, 2), 1, 0, 0);
        assert!(matches!(
            route_next_hops(g, Coord::new(0, 0), Port::Local, &p),
            Err(RouteError::MalformedArea(_))
        ));
    }
}
