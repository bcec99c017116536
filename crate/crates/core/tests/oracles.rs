mod common;

use common::{bernoulli, h16, reference};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taibai::ir::{simulate, validate_and_lower, NeuronModel};
use taibai::models::Builder;
use taibai::word16::{fp_add, fp_mul};
use taibai::Word16;

#[test]
fn binary16_roundtrip_all_finite() {
    for b in 0..=u16::MAX {
        let x = h16::from_bits(b);
        if x.is_nan() {
            continue;
        }
        assert_eq!(h16::to_bits(x), b, "{b:#06x}");
        assert_eq!(Word16(b).to_f64().to_bits(), x.to_bits(), "{b:#06x}");
    }
}

#[test]
fn add_mul_match_library() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200_000 {
        let (a, b) = (rng.gen::<u16>(), rng.gen::<u16>());
        let (x, y) = (h16::from_bits(a), h16::from_bits(b));
        for (got, want) in [
            (fp_add(Word16(a), Word16(b)), h16::add(x, y)),
            (fp_mul(Word16(a), Word16(b)), h16::mul(x, y)),
        ] {
            if want.is_nan() {
                assert!(got.is_nan());
            } else {
                assert_eq!(got.bits(), h16::to_bits(want), "{a:#06x} {b:#06x}");
            }
        }
    }
}

#[test]
fn reference_agrees_with_functional_sim() {
    let mut b = Builder::new("mix", [2, 8, 8], 16, 4);
    b.conv("c1", 4, 3, 1, 1, None)
        .pool("p1", 2, 1.0)
        .fc("f1", 24)
        .model(NeuronModel::Alif {
            tau: 0.75,
            v_th: 1.0,
            beta: 0.5,
            rho: 0.875,
        })
        .sparse("s1", 24, 0.3)
        .recurrent("r1", 24, 0.1)
        .skip("f1", "r1")
        .fc("o", 5)
        .model(NeuronModel::Integrator { tau: 1.0 })
        .output();
    let net = validate_and_lower(&b.build()).unwrap();
    let inputs = bernoulli(128, 16, 0.3, 2);
    let f = simulate(&net, &inputs);
    let r = reference(&net, &inputs);
    assert_eq!(f.spikes, r.spikes);
    let fv: Vec<Vec<Vec<u16>>> = f
        .values
        .iter()
        .map(|t| {
            t.iter()
                .map(|p| p.iter().map(|w| w.bits()).collect())
                .collect()
        })
        .collect();
    assert_eq!(fv, r.values);
    assert!(f.spikes.iter().flatten().map(|s| s.len()).sum::<usize>() > 50);
}

#[test]
fn reference_rounding_cases() {
    assert_eq!(h16::round(1.0 + 2f64.powi(-11)), 1.0);
    assert_eq!(h16::round(1.0 + 3.0 * 2f64.powi(-11)), 1.0 + 2f64.powi(-9));
    assert_eq!(h16::round(65519.0), 65504.0);
    assert_eq!(h16::round(65520.0), f64::INFINITY);
    assert_eq!(h16::round(2f64.powi(-25)), 0.0);
    assert_eq!(h16::round(3.0 * 2f64.powi(-26)), 2f64.powi(-24));
    for b in (0u16..0x7c00).step_by(7) {
        assert_eq!(h16::to_bits(h16::from_bits(b)), b);
    }
}
