use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bit layout of the 64-bit packet word, LSB first:
///
/// | bits  | field                                   |
/// |-------|-----------------------------------------|
/// | 0-15  | payload                                 |
/// | 16-19 | dest x0 (first column)                  |
/// | 20-23 | dest y0 (first row)                     |
/// | 24-27 | dest x1 (last column)                   |
/// | 28-31 | dest y1 (last row)                      |
/// | 32-43 | index                                   |
/// | 44-51 | tag                                     |
/// | 52-53 | phase                                   |
/// | 54-56 | type                                    |
/// | 57-63 | reserved, zero                          |
pub const PAYLOAD_SHIFT: u32 = 0;
pub const AREA_SHIFT: u32 = 16;
pub const INDEX_SHIFT: u32 = 32;
pub const TAG_SHIFT: u32 = 44;
pub const PHASE_SHIFT: u32 = 52;
pub const TYPE_SHIFT: u32 = 54;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PacketType {
    SpikeUnicast,
    SpikeMulticast,
    SpikeBroadcast,
    MemWrite,
    MemReadReq,
    MemReadResp,
    Sync,
}

impl PacketType {
    pub const ALL: [PacketType; 7] = [
        PacketType::SpikeUnicast,
        PacketType::SpikeMulticast,
        PacketType::SpikeBroadcast,
        PacketType::MemWrite,
        PacketType::MemReadReq,
        PacketType::MemReadResp,
        PacketType::Sync,
    ];

    pub fn code(self) -> u64 {
        PacketType::ALL.iter().position(|&t| t == self).unwrap() as u64
    }

    pub fn from_code(c: u64) -> Option<Self> {
        PacketType::ALL.get(c as usize).copied()
    }

    pub fn is_spike(self) -> bool {
        matches!(
            self,
            PacketType::SpikeUnicast | PacketType::SpikeMulticast | PacketType::SpikeBroadcast
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            PacketType::SpikeUnicast => "unicast",
            PacketType::SpikeMulticast => "multicast",
            PacketType::SpikeBroadcast => "broadcast",
            PacketType::MemWrite => "mem_write",
            PacketType::MemReadReq => "mem_read_req",
            PacketType::MemReadResp => "mem_read_resp",
            PacketType::Sync => "sync",
        }
    }
}

/// Grid coordinate of a cortical column.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
pub struct Coord {
    pub row: u8,
    pub col: u8,
}

impl Coord {
    pub fn new(row: u8, col: u8) -> Self {
        Coord { row, col }
    }

    pub fn manhattan(self, other: Coord) -> u32 {
        (self.row as i32 - other.row as i32).unsigned_abs()
            + (self.col as i32 - other.col as i32).unsigned_abs()
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

/// Destination rectangle, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Area {
    pub x0: u8,
    pub y0: u8,
    pub x1: u8,
    pub y1: u8,
}

/// Rectangle value reserved for the host port.
pub const HOST_AREA: Area = Area {
    x0: 0xF,
    y0: 0xF,
    x1: 0xF,
    y1: 0xF,
};

impl Area {
    pub fn single(c: Coord) -> Self {
        Area {
            x0: c.col,
            y0: c.row,
            x1: c.col,
            y1: c.row,
        }
    }

    pub fn rect(r0: u8, c0: u8, r1: u8, c1: u8) -> Self {
        Area {
            x0: c0,
            y0: r0,
            x1: c1,
            y1: r1,
        }
    }

    pub fn is_host(&self) -> bool {
        *self == HOST_AREA
    }

    pub fn is_single(&self) -> bool {
        self.x0 == self.x1 && self.y0 == self.y1
    }

    pub fn contains(&self, c: Coord) -> bool {
        (self.x0..=self.x1).contains(&c.col) && (self.y0..=self.y1).contains(&c.row)
    }

    pub fn cells(&self) -> usize {
        (self.x1 as usize + 1 - self.x0 as usize) * (self.y1 as usize + 1 - self.y0 as usize)
    }

    pub fn coords(&self) -> impl Iterator<Item = Coord> + '_ {
        (self.y0..=self.y1).flat_map(move |r| (self.x0..=self.x1).map(move |c| Coord::new(r, c)))
    }

    pub fn is_well_formed(&self) -> bool {
        self.x0 <= self.x1 && self.y0 <= self.y1
    }

    pub fn to_bits(&self) -> u64 {
        (self.x0 as u64 & 0xF)
            | (self.y0 as u64 & 0xF) << 4
            | (self.x1 as u64 & 0xF) << 8
            | (self.y1 as u64 & 0xF) << 12
    }

    pub fn from_bits(b: u64) -> Self {
        Area {
            x0: (b & 0xF) as u8,
            y0: (b >> 4 & 0xF) as u8,
            x1: (b >> 8 & 0xF) as u8,
            y1: (b >> 12 & 0xF) as u8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Packet {
    pub ptype: PacketType,
    pub phase: u8,
    pub tag: u8,
    pub index: u16,
    pub dest: Area,
    pub payload: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PacketError {
    #[error("unknown packet type {0}")]
    BadType(u64),
    #[error("reserved bits set in {0:#018x}")]
    Reserved(u64),
}

impl Packet {
    pub fn spike(ptype: PacketType, dest: Area, tag: u8, index: u16, payload: u16) -> Self {
        Packet {
            ptype,
            phase: 0,
            tag,
            index,
            dest,
            payload,
        }
    }

    /// Memory-access packet: the 20-bit address rides in tag (high 8 bits)
    /// and index (low 12 bits).
    pub fn mem(ptype: PacketType, dest: Area, addr: u32, payload: u16) -> Self {
        Packet {
            ptype,
            phase: 0,
            tag: (addr >> 12 & 0xFF) as u8,
            index: (addr & 0xFFF) as u16,
            dest,
            payload,
        }
    }

    pub fn address(&self) -> u32 {
        (self.tag as u32) << 12 | self.index as u32
    }

    pub fn encode(&self) -> u64 {
        (self.payload as u64) << PAYLOAD_SHIFT
            | self.dest.to_bits() << AREA_SHIFT
            | (self.index as u64 & 0xFFF) << INDEX_SHIFT
            | (self.tag as u64) << TAG_SHIFT
            | (self.phase as u64 & 0x3) << PHASE_SHIFT
            | self.ptype.code() << TYPE_SHIFT
    }

    pub fn decode(w: u64) -> Result<Packet, PacketError> {
        if w >> 57 != 0 {
            return Err(PacketError::Reserved(w));
        }
        let t = w >> TYPE_SHIFT & 0x7;
        Ok(Packet {
            ptype: PacketType::from_code(t).ok_or(PacketError::BadType(t))?,
            phase: (w >> PHASE_SHIFT & 0x3) as u8,
            tag: (w >> TAG_SHIFT & 0xFF) as u8,
            index: (w >> INDEX_SHIFT & 0xFFF) as u16,
            dest: Area::from_bits(w >> AREA_SHIFT & 0xFFFF),
            payload: (w >> PAYLOAD_SHIFT & 0xFFFF) as u16,
        })
    }

    pub fn to_le_bytes(&self) -> [u8; 8] {
        self.encode().to_le_bytes()
    }

    pub fn from_le_bytes(b: [u8; 8]) -> Result<Packet, PacketError> {
        Packet::decode(u64::from_le_bytes(b))
    }
}
