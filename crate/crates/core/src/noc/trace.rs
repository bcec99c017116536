//! Binary packet trace: 24 bytes per injected packet, little endian.
//!
//! `u32` timestep, `u64` cycle, `u8` source flag (0 host, 1 CC), `u8` row,
//! `u8` col, one zero byte, then the 64-bit packet word.

use std::io::{self, Read, Write};

use super::{Coord, Injection, Packet};

pub const RECORD: usize = 24;

pub fn write_trace(w: &mut impl Write, recs: &[(u32, Injection)]) -> io::Result<()> {
    for (t, inj) in recs {
        let mut b = [0u8; RECORD];
        b[0..4].copy_from_slice(&t.to_le_bytes());
        b[4..12].copy_from_slice(&inj.cycle.to_le_bytes());
        if let Some(c) = inj.src {
            b[12] = 1;
            b[13] = c.row;
            b[14] = c.col;
        }
        b[16..24].copy_from_slice(&inj.packet.to_le_bytes());
        w.write_all(&b)?;
    }
    Ok(())
}

pub fn read_trace(r: &mut impl Read) -> io::Result<Vec<(u32, Injection)>> {
    let mut all = Vec::new();
    r.read_to_end(&mut all)?;
    if all.len() % RECORD != 0 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "truncated trace record",
        ));
    }
    all.chunks_exact(RECORD)
        .map(|b| {
            let bad = |m: String| io::Error::new(io::ErrorKind::InvalidData, m);
            let t = u32::from_le_bytes(b[0..4].try_into().unwrap());
            let cycle = u64::from_le_bytes(b[4..12].try_into().unwrap());
            let src = match b[12] {
                0 => None,
                1 => Some(Coord::new(b[13], b[14])),
                f => return Err(bad(format!("bad source flag {f}"))),
            };
            let packet = Packet::from_le_bytes(b[16..24].try_into().unwrap())
                .map_err(|e| bad(e.to_string()))?;
            Ok((t, Injection { cycle, src, packet }))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noc::{Area, PacketType};

    #[test]
    fn round_trip() {
        let p = Packet::spike(
            PacketType::SpikeUnicast,
            Area::single(Coord::new(3, 4)),
            7,
            100,
            0xBEEF,
        );
        let recs = vec![
            (
                0,
                Injection {
                    cycle: 5,
                    src: None,
                    packet: p,
                },
            ),
            (
                3,
                Injection {
                    cycle: 99,
                    src: Some(Coord::new(10, 11)),
                    packet: p,
                },
            ),
        ];
        let mut buf = Vec::new();
        write_trace(&mut buf, &recs).unwrap();
        assert_eq!(buf.len(), 2 * RECORD);
        assert_eq!(read_trace(&mut buf.as_slice()).unwrap(), recs);
        assert!(read_trace(&mut &buf[..10]).is_err());
    }
}
