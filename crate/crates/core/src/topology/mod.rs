//! Two-level fan-in / fan-out topology tables.
//!
//! A directory entry (DE) points at a slice of the information table (IT).
//! Fan-in DEs are selected by the `index` of an arriving spike packet and
//! filtered by its `tag`; fan-out DEs are selected by the firing neuron.
//!
//! Fan-in IE kinds:
//!
//! * `Type0` – one destination neuron; the weight is found by FINDIDX on the
//!   global axon carried in the packet payload (sparse, pooling).
//! * `Type1` – one (neuron, local axon) pair (explicit synapses).
//! * `Type2` – incremental addressing: `start + i*margin` for `i < count`,
//!   split into contiguous blocks over the NCs selected by `mask`.
//! * `Type3` – convolution: every mask-selected NC receives `numbers`
//!   consecutive neurons starting at `neuron*numbers`, all with the same
//!   filter offset as local axon; the input channel rides in the payload.

mod decode;
mod encode;
mod expand;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noc::{Area, PacketType, HOST_AREA};

pub use decode::{decode_fanin, DecodedEvent};
pub use encode::{
    allocate, encode_conv, encode_explicit, encode_full, encode_pool, encode_sparse, ConnPlan,
    ConvGeom, KeyPlan, Loc, PoolGeom, SourceRoutes, StorageReport, TableSet,
};
pub use expand::{expand_fanin, expand_fanout, fanout_latency, FanOutScheme, FaninSplit};

/// Maximum synapses a single neuron may receive before PSUM expansion.
pub const FANIN_LIMIT: usize = 2048;
/// Default fan-out IEs per fan-out DE (forward and delayed ranges each).
pub const DEFAULT_IE_CAPACITY: usize = 8;
/// Packets carry a 12-bit fan-in DT index.
pub const MAX_FANIN_DES: usize = 1 << 12;
/// Tag 0 marks placeholder DEs that never match a packet.
pub const PLACEHOLDER_TAG: u8 = 0;
/// Local-axon flag distinguishing explicit (Type1) synapses.
pub const EXPLICIT_AXON: u16 = 0x8000;

pub const FANIN_DE_WORDS: usize = 3;
pub const IE_WORDS: usize = 4;
pub const FANOUT_DE_WORDS: usize = 4;
/// Nominal widths used for storage reports.
pub const DE_BITS: usize = 32;
pub const IE_FIELD_BITS: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopoError {
    #[error("local axon {local} out of range for k={k}")]
    LocalAxon { local: u32, k: u32 },
    #[error("bad IE type {0}")]
    BadType(u16),
    #[error("margin must be positive")]
    BadMargin,
    #[error("Type2 count must be at least 1")]
    BadCount,
    #[error("empty NC mask")]
    EmptyMask,
    #[error("NC {nc} hosts {hosted} neurons, event for neuron {neuron}")]
    NotHosted { nc: u8, neuron: u32, hosted: u16 },
    #[error("IT range {offset}+{count} beyond table of {len}")]
    ItRange {
        offset: usize,
        count: usize,
        len: usize,
    },
    #[error("fan-in DT full ({0} entries)")]
    DtFull(usize),
    #[error("fan-in of {0} exceeds the per-neuron limit; expand first")]
    FaninTooLarge(usize),
    #[error("neuron layout in NC {nc} does not fit {what}")]
    Layout { nc: u8, what: &'static str },
    #[error("{0} fan-out IEs exceed the per-DE capacity {1}")]
    FanoutCapacity(usize, usize),
    #[error("skip delay must be at least 1")]
    BadDelay,
    #[error("inconsistent {0}")]
    Inconsistent(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IeType {
    Type0,
    Type1,
    Type2,
    Type3,
}

impl IeType {
    pub const ALL: [IeType; 4] = [IeType::Type0, IeType::Type1, IeType::Type2, IeType::Type3];

    pub fn code(self) -> u16 {
        self as u16
    }

    pub fn from_code(c: u16) -> Result<IeType, TopoError> {
        IeType::ALL
            .get(c as usize)
            .copied()
            .ok_or(TopoError::BadType(c))
    }

    /// Meaningful 16-bit fields per IE of this type.
    pub fn fields(self) -> usize {
        match self {
            IeType::Type0 => 1,
            IeType::Type1 => 2,
            IeType::Type2 | IeType::Type3 => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FanInDE {
    pub tag: u8,
    pub ie_type: IeType,
    pub it_offset: u16,
    pub it_count: u16,
}

impl FanInDE {
    pub fn placeholder() -> Self {
        FanInDE {
            tag: PLACEHOLDER_TAG,
            ie_type: IeType::Type0,
            it_offset: 0,
            it_count: 0,
        }
    }

    pub fn to_words(&self) -> [u16; FANIN_DE_WORDS] {
        [
            self.tag as u16 | self.ie_type.code() << 8,
            self.it_offset,
            self.it_count,
        ]
    }

    pub fn from_words(w: &[u16]) -> Result<Self, TopoError> {
        Ok(FanInDE {
            tag: (w[0] & 0xFF) as u8,
            ie_type: IeType::from_code(w[0] >> 8)?,
            it_offset: w[1],
            it_count: w[2],
        })
    }
}

/// CC-wide neuron id: `nc << 8 | local`.
pub fn neuron_id(nc: u8, local: u8) -> u16 {
    (nc as u16) << 8 | local as u16
}

pub fn split_neuron_id(id: u16) -> (u8, u8) {
    ((id >> 8) as u8, (id & 0xFF) as u8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FanInIE {
    Type0 {
        neuron: u16,
    },
    Type1 {
        neuron: u16,
        local_axon: u16,
    },
    Type2 {
        mask: u8,
        margin: u16,
        count: u16,
        start: u16,
    },
    Type3 {
        mask: u8,
        numbers: u16,
        neuron: u16,
        local_axon: u16,
    },
}

impl FanInIE {
    pub fn ie_type(&self) -> IeType {
        match self {
            FanInIE::Type0 { .. } => IeType::Type0,
            FanInIE::Type1 { .. } => IeType::Type1,
            FanInIE::Type2 { .. } => IeType::Type2,
            FanInIE::Type3 { .. } => IeType::Type3,
        }
    }

    pub fn to_words(&self) -> [u16; IE_WORDS] {
        match *self {
            FanInIE::Type0 { neuron } => [neuron, 0, 0, 0],
            FanInIE::Type1 { neuron, local_axon } => [neuron, local_axon, 0, 0],
            FanInIE::Type2 {
                mask,
                margin,
                count,
                start,
            } => [mask as u16, margin, count, start],
            FanInIE::Type3 {
                mask,
                numbers,
                neuron,
                local_axon,
            } => [mask as u16, numbers, neuron, local_axon],
        }
    }

    pub fn from_words(t: IeType, w: &[u16]) -> FanInIE {
        match t {
            IeType::Type0 => FanInIE::Type0 { neuron: w[0] },
            IeType::Type1 => FanInIE::Type1 {
                neuron: w[0],
                local_axon: w[1],
            },
            IeType::Type2 => FanInIE::Type2 {
                mask: w[0] as u8,
                margin: w[1],
                count: w[2],
                start: w[3],
            },
            IeType::Type3 => FanInIE::Type3 {
                mask: w[0] as u8,
                numbers: w[1],
                neuron: w[2],
                local_axon: w[3],
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RouteMode {
    Unicast,
    Multicast,
    Broadcast,
}

impl RouteMode {
    pub fn packet_type(self) -> PacketType {
        match self {
            RouteMode::Unicast => PacketType::SpikeUnicast,
            RouteMode::Multicast => PacketType::SpikeMulticast,
            RouteMode::Broadcast => PacketType::SpikeBroadcast,
        }
    }

    fn code(self) -> u16 {
        self as u16
    }

    fn from_code(c: u16) -> Result<Self, TopoError> {
        [
            RouteMode::Unicast,
            RouteMode::Multicast,
            RouteMode::Broadcast,
        ]
        .get(c as usize)
        .copied()
        .ok_or(TopoError::BadType(c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FanOutIE {
    pub mode: RouteMode,
    pub area: Area,
    pub tag: u8,
    pub index: u16,
}

impl FanOutIE {
    /// Output to the host; `index` identifies the output neuron.
    pub fn host(index: u16) -> Self {
        FanOutIE {
            mode: RouteMode::Unicast,
            area: HOST_AREA,
            tag: PLACEHOLDER_TAG,
            index,
        }
    }

    pub fn is_host(&self) -> bool {
        self.area.is_host()
    }

    pub fn to_words(&self) -> [u16; IE_WORDS] {
        [
            self.mode.code() | (self.tag as u16) << 8,
            self.area.to_bits() as u16,
            self.index,
            0,
        ]
    }

    pub fn from_words(w: &[u16]) -> Result<Self, TopoError> {
        Ok(FanOutIE {
            mode: RouteMode::from_code(w[0] & 0xFF)?,
            tag: (w[0] >> 8) as u8,
            area: Area::from_bits(w[1] as u64),
            index: w[2],
        })
    }
}

/// Fan-out directory entry of one neuron. Forward IEs fire immediately;
/// delayed IEs fire `delay` timesteps later for delayed-type spikes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct FanOutDE {
    pub global_axon: u16,
    pub fwd_offset: u16,
    pub fwd_count: u8,
    pub dly_offset: u16,
    pub dly_count: u8,
    pub delay: u8,
}

impl FanOutDE {
    pub fn to_words(&self) -> [u16; FANOUT_DE_WORDS] {
        [
            self.global_axon,
            self.fwd_offset,
            self.dly_offset,
            (self.fwd_count as u16 & 0xF)
                | (self.dly_count as u16 & 0xF) << 4
                | (self.delay as u16) << 8,
        ]
    }

    pub fn from_words(w: &[u16]) -> Self {
        FanOutDE {
            global_axon: w[0],
            fwd_offset: w[1],
            dly_offset: w[2],
            fwd_count: (w[3] & 0xF) as u8,
            dly_count: (w[3] >> 4 & 0xF) as u8,
            delay: (w[3] >> 8) as u8,
        }
    }

    /// Ranges never overlap when both are non-empty.
    pub fn ranges_disjoint(&self) -> bool {
        let f = self.fwd_offset as u32..self.fwd_offset as u32 + self.fwd_count as u32;
        let d = self.dly_offset as u32..self.dly_offset as u32 + self.dly_count as u32;
        f.is_empty() || d.is_empty() || f.end <= d.start || d.end <= f.start
    }
}

/// Weight address inside a shared convolution filter: the input channel
/// (global axon) selects a k*k block, the filter offset (local axon) a word.
pub fn conv_weight_addr(global_axon: u32, local_axon: u32, k: u32) -> Result<u32, TopoError> {
    if local_axon >= k * k {
        return Err(TopoError::LocalAxon {
            local: local_axon,
            k,
        });
    }
    Ok(global_axon * k * k + local_axon)
}

/// Configuration of a skip connection spanning `span` layers: the source
/// emits delayed-type spikes and the CC re-emits them `span - 1` timesteps
/// later, so they meet the main path's wavefront.
pub fn encode_skip(span: u32) -> Result<u8, TopoError> {
    if span < 2 || span - 1 > u8::MAX as u32 {
        return Err(TopoError::BadDelay);
    }
    Ok((span - 1) as u8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_addr_examples() {
        assert_eq!(conv_weight_addr(2, 4, 3).unwrap(), 22);
        assert_eq!(conv_weight_addr(0, 0, 3).unwrap(), 0);
        assert_eq!(conv_weight_addr(5, 24, 5).unwrap(), 149);
        assert!(conv_weight_addr(0, 9, 3).is_err());
    }

    #[test]
    fn word_roundtrips() {
        let ies = [
            FanInIE::Type0 { neuron: 0x0305 },
            FanInIE::Type1 {
                neuron: 7,
                local_axon: 0x8003,
            },
            FanInIE::Type2 {
                mask: 0b1010,
                margin: 2,
                count: 100,
                start: 4,
            },
            FanInIE::Type3 {
                mask: 0xFF,
                numbers: 4,
                neuron: 63,
                local_axon: 8,
            },
        ];
        for ie in ies {
            assert_eq!(FanInIE::from_words(ie.ie_type(), &ie.to_words()), ie);
        }
        let de = FanInDE {
            tag: 9,
            ie_type: IeType::Type3,
            it_offset: 500,
            it_count: 12,
        };
        assert_eq!(FanInDE::from_words(&de.to_words()).unwrap(), de);
        let fo = FanOutDE {
            global_axon: 77,
            fwd_offset: 3,
            fwd_count: 2,
            dly_offset: 5,
            dly_count: 1,
            delay: 2,
        };
        assert_eq!(FanOutDE::from_words(&fo.to_words()), fo);
        assert!(fo.ranges_disjoint());
        let ie = FanOutIE {
            mode: RouteMode::Multicast,
            area: Area::rect(1, 2, 3, 4),
            tag: 5,
            index: 4095,
        };
        assert_eq!(FanOutIE::from_words(&ie.to_words()).unwrap(), ie);
    }

    #[test]
    fn skip_delay() {
        assert_eq!(encode_skip(3).unwrap(), 2);
        assert_eq!(encode_skip(2).unwrap(), 1);
        assert!(encode_skip(1).is_err());
    }
}
