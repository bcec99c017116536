use super::{split_neuron_id, FanInDE, FanInIE, TopoError};
use crate::neuron_core::InputEvent;
use crate::Word16;

/// One input event for NC `nc`. `seq` is the position of the event inside
/// its IE's expansion (the `i` of incremental addressing).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodedEvent {
    pub nc: u8,
    pub event: InputEvent,
    pub seq: u32,
}

fn mask_ncs(mask: u8) -> Result<Vec<u8>, TopoError> {
    let v: Vec<u8> = (0..8).filter(|b| mask >> b & 1 == 1).collect();
    if v.is_empty() {
        return Err(TopoError::EmptyMask);
    }
    Ok(v)
}

/// Expands the IT slice of a matched DE into per-NC input events.
/// `hosted[n]` is the number of neurons NC `n` hosts.
pub fn decode_fanin(
    de: &FanInDE,
    ies: &[FanInIE],
    payload: Word16,
    hosted: &[u16; 8],
) -> Result<Vec<DecodedEvent>, TopoError> {
    if ies.len() != de.it_count as usize {
        return Err(TopoError::ItRange {
            offset: de.it_offset as usize,
            count: de.it_count as usize,
            len: ies.len(),
        });
    }
    let mut out = Vec::new();
    let mut push = |nc: u8, neuron: u32, axon: u16, seq: u32| -> Result<(), TopoError> {
        let h = *hosted.get(nc as usize).unwrap_or(&0);
        if neuron >= h as u32 {
            return Err(TopoError::NotHosted {
                nc,
                neuron,
                hosted: h,
            });
        }
        out.push(DecodedEvent {
            nc,
            event: InputEvent {
                neuron: neuron as u16,
                axon,
                payload,
            },
            seq,
        });
        Ok(())
    };
    for ie in ies {
        if ie.ie_type() != de.ie_type {
            return Err(TopoError::Inconsistent("IE type differs from its DE"));
        }
        match *ie {
            FanInIE::Type0 { neuron } => {
                let (nc, local) = split_neuron_id(neuron);
                push(nc, local as u32, payload.0, 0)?;
            }
            FanInIE::Type1 { neuron, local_axon } => {
                let (nc, local) = split_neuron_id(neuron);
                push(nc, local as u32, local_axon, 0)?;
            }
            FanInIE::Type2 {
                mask,
                margin,
                count,
                start,
            } => {
                if margin == 0 {
                    return Err(TopoError::BadMargin);
                }
                if count == 0 {
                    return Err(TopoError::BadCount);
                }
                let ncs = mask_ncs(mask)?;
                let blk = (count as u32).div_ceil(ncs.len() as u32);
                for i in 0..count as u32 {
                    let r = i / blk;
                    let local = start as u32 + (i - r * blk) * margin as u32;
                    push(ncs[r as usize], local, payload.0, i)?;
                }
            }
            FanInIE::Type3 {
                mask,
                numbers,
                neuron,
                local_axon,
            } => {
                let ncs = mask_ncs(mask)?;
                let mut seq = 0;
                for nc in ncs {
                    for j in 0..numbers as u32 {
                        push(nc, neuron as u32 * numbers as u32 + j, local_axon, seq)?;
                        seq += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::IeType;
    use super::*;

    fn de(t: IeType, n: u16) -> FanInDE {
        FanInDE {
            tag: 1,
            ie_type: t,
            it_offset: 0,
            it_count: n,
        }
    }

    #[test]
    fn type2_incremental() {
        let ie = FanInIE::Type2 {
            mask: 1,
            margin: 2,
            count: 3,
            start: 100,
        };
        let ev = decode_fanin(&de(IeType::Type2, 1), &[ie], Word16(7), &[256; 8]).unwrap();
        let ids: Vec<u16> = ev.iter().map(|e| e.event.neuron).collect();
        assert_eq!(ids, vec![100, 102, 104]);
        assert!(ev.iter().all(|e| e.event.axon == 7 && e.nc == 0));
    }

    #[test]
    fn type2_degenerate_and_blocks() {
        let ie = FanInIE::Type2 {
            mask: 1,
            margin: 1,
            count: 1,
            start: 0,
        };
        let ev = decode_fanin(
            &de(IeType::Type2, 1),
            &[ie],
            Word16(0),
            &[1, 0, 0, 0, 0, 0, 0, 0],
        )
        .unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!((ev[0].nc, ev[0].event.neuron), (0, 0));

        let ie = FanInIE::Type2 {
            mask: 0b1001_0000,
            margin: 1,
            count: 6,
            start: 10,
        };
        let ev = decode_fanin(&de(IeType::Type2, 1), &[ie], Word16(0), &[256; 8]).unwrap();
        let got: Vec<(u8, u16, u32)> = ev.iter().map(|e| (e.nc, e.event.neuron, e.seq)).collect();
        assert_eq!(
            got,
            vec![
                (4, 10, 0),
                (4, 11, 1),
                (4, 12, 2),
                (7, 10, 3),
                (7, 11, 4),
                (7, 12, 5)
            ]
        );
    }

    #[test]
    fn type3_fans_channels() {
        let ie = FanInIE::Type3 {
            mask: 0b11,
            numbers: 2,
            neuron: 5,
            local_axon: 4,
        };
        let ev = decode_fanin(&de(IeType::Type3, 1), &[ie], Word16(2), &[256; 8]).unwrap();
        let got: Vec<(u8, u16)> = ev.iter().map(|e| (e.nc, e.event.neuron)).collect();
        assert_eq!(got, vec![(0, 10), (0, 11), (1, 10), (1, 11)]);
        assert!(ev
            .iter()
            .all(|e| e.event.axon == 4 && e.event.payload == Word16(2)));
    }

    #[test]
    fn errors() {
        let ie = FanInIE::Type2 {
            mask: 1,
            margin: 0,
            count: 3,
            start: 0,
        };
        assert_eq!(
            decode_fanin(&de(IeType::Type2, 1), &[ie], Word16(0), &[256; 8]),
            Err(TopoError::BadMargin)
        );
        let ie = FanInIE::Type0 { neuron: 0x0105 };
        assert!(matches!(
            decode_fanin(
                &de(IeType::Type0, 1),
                &[ie],
                Word16(0),
                &[256, 5, 0, 0, 0, 0, 0, 0]
            ),
            Err(TopoError::NotHosted { nc: 1, .. })
        ));
    }
}
