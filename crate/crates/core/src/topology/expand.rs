use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{FanOutIE, TopoError};

/// Fan-in partition of one logical neuron. With no parts beyond one the
/// neuron is deployed as is; otherwise each part becomes a PSUM (dendrite)
/// neuron placed in the same NC just before its soma.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaninSplit {
    pub parts: Vec<Range<u32>>,
    pub psums: usize,
}

impl FaninSplit {
    /// Physical neurons per logical neuron.
    pub fn width(&self) -> usize {
        self.psums + 1
    }
}

/// Splits a fan-in of `n` synapses. `branches` forces a dendritic split into
/// that many contiguous parts even below the limit.
pub fn expand_fanin(
    n: u32,
    limit: usize,
    branches: Option<usize>,
) -> Result<FaninSplit, TopoError> {
    let k = match branches {
        Some(b) if b > 0 => b,
        _ if n as usize <= limit => {
            return Ok(FaninSplit {
                parts: vec![0..n],
                psums: 0,
            })
        }
        _ => (n as usize).div_ceil(limit),
    };
    let per = (n as usize).div_ceil(k);
    if per > limit {
        return Err(TopoError::FaninTooLarge(per));
    }
    let parts: Vec<Range<u32>> = (0..k)
        .map(|i| ((i * per).min(n as usize) as u32)..(((i + 1) * per).min(n as usize) as u32))
        .collect();
    Ok(FaninSplit { parts, psums: k })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FanOutScheme {
    /// Copies of the neuron in the same NC; costs neuron slots.
    IntraNc,
    /// Relay neurons in another NC; costs one extra dispatch round.
    InterNc,
}

/// Splits a neuron's fan-out IEs into groups of at most `capacity`, one per
/// split neuron. All split neurons fire together, so the union of their
/// destination areas equals the original.
pub fn expand_fanout(ies: &[FanOutIE], capacity: usize) -> Result<Vec<Vec<FanOutIE>>, TopoError> {
    if capacity == 0 {
        return Err(TopoError::FanoutCapacity(ies.len(), capacity));
    }
    if ies.len() <= capacity {
        return Ok(vec![ies.to_vec()]);
    }
    Ok(ies.chunks(capacity).map(|c| c.to_vec()).collect())
}

/// Dispatch rounds from the firing of the original neuron to the injection
/// of the last split packet.
pub fn fanout_latency(scheme: FanOutScheme, groups: usize) -> u32 {
    match scheme {
        _ if groups <= 1 => 0,
        FanOutScheme::IntraNc => 0,
        FanOutScheme::InterNc => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::super::RouteMode;
    use super::*;
    use crate::noc::Area;

    #[test]
    fn fanin_examples() {
        let s = expand_fanin(100, 2048, None).unwrap();
        assert_eq!(s.psums, 0);
        assert_eq!(s.parts, vec![0..100]);
        let s = expand_fanin(4096, 2048, None).unwrap();
        assert_eq!(s.parts, vec![0..2048, 2048..4096]);
        assert_eq!(s.width(), 3);
        let s = expand_fanin(2800, 2048, Some(4)).unwrap();
        assert_eq!(s.psums, 4);
        assert!(s.parts.iter().all(|r| r.len() == 700));
        assert!(expand_fanin(9000, 2048, Some(2)).is_err());
    }

    #[test]
    fn fanout_split() {
        let ies: Vec<FanOutIE> = (0..8)
            .map(|i| FanOutIE {
                mode: RouteMode::Multicast,
                area: Area::rect(i, 0, i, 3),
                tag: 1,
                index: 0,
            })
            .collect();
        let g = expand_fanout(&ies, 4).unwrap();
        assert_eq!(g.len(), 2);
        assert!(g.iter().all(|x| x.len() == 4));
        let mut union: Vec<FanOutIE> = g.concat();
        union.sort();
        let mut orig = ies.clone();
        orig.sort();
        assert_eq!(union, orig);
        assert_eq!(expand_fanout(&ies, 8).unwrap().len(), 1);
        assert_eq!(fanout_latency(FanOutScheme::InterNc, 2), 1);
        assert_eq!(fanout_latency(FanOutScheme::IntraNc, 2), 0);
    }
}
