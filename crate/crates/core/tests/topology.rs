mod common;

use common::topo::{round_trip, same, KINDS};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn encode_decode_reproduces_adjacency(kind in 0usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = KINDS[kind](&mut rng);
        let got = round_trip(&inst, &mut rng).map_err(TestCaseError::fail)?;
        prop_assert!(same(got, inst.expected.clone()), "{} instance differs", inst.kind);
    }
}

#[test]
fn conv_ie_count_ignores_output_channels() {
    use taibai::topology::{encode_conv, ConvGeom, Loc};
    // 4x4 map, 16 channels per NC: one NC per 16 channels, all in one CC
    let count = |c_out: u32| {
        let g = ConvGeom {
            c_in: 3,
            h_in: 4,
            w_in: 4,
            c_out,
            k: 3,
            stride: 1,
            pad: 1,
        };
        let dst: Vec<Loc> = (0..c_out * 16)
            .map(|i| {
                let (c, pos) = (i / 16, i % 16);
                Loc::new(0, (c / 16) as u8, (pos * 16 + c % 16) as u8)
            })
            .collect();
        encode_conv(&g, &dst).unwrap().ie_count()
    };
    assert_eq!(count(16), count(32));
    assert_eq!(count(32), count(128));
}
