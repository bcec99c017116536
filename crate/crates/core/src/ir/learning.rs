//! On-chip learning rules: pair-based STDP and the accumulated-spike update
//! of a final fully connected layer.

use serde::{Deserialize, Serialize};

use crate::word16::{fp_add, fp_mul, fp_next};
use crate::Word16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StdpParams {
    pub a_plus: f32,
    pub a_minus: f32,
    /// Timesteps.
    pub tau_plus: f32,
    pub tau_minus: f32,
    pub w_min: f32,
    pub w_max: f32,
}

impl Default for StdpParams {
    fn default() -> Self {
        StdpParams {
            a_plus: 1.0 / 64.0,
            a_minus: 1.0 / 64.0,
            tau_plus: 16.0,
            tau_minus: 16.0,
            w_min: 0.0,
            w_max: 1.0,
        }
    }
}

/// Weight change magnitude for `|dt|` timesteps, rounded to binary16.
pub fn stdp_delta(dt: i32, p: &StdpParams) -> Word16 {
    let (a, tau) = if dt > 0 {
        (p.a_plus, p.tau_plus)
    } else {
        (p.a_minus, p.tau_minus)
    };
    Word16::from_f64(a as f64 * (-(dt.unsigned_abs() as f64) / tau as f64).exp())
}

/// `dt = t_post - t_pre`. Causal pairs potentiate, acausal pairs depress,
/// `dt == 0` leaves the weight alone. When the FP16 sum rounds back to `w`
/// the weight still moves by one ulp, so the sign of the change always
/// follows `dt` until a bound is hit.
pub fn stdp_update(w: Word16, dt: i32, p: &StdpParams) -> Word16 {
    if dt == 0 {
        return w;
    }
    let up = dt > 0;
    let d = stdp_delta(dt, p);
    let d = if up { d } else { Word16(d.0 ^ 0x8000) };
    let mut r = fp_add(w, d);
    if r == w || r.to_f32() == w.to_f32() {
        r = fp_next(w, up);
    }
    let (lo, hi) = (Word16::from_f32(p.w_min), Word16::from_f32(p.w_max));
    if r.to_f32() > hi.to_f32() {
        hi
    } else if r.to_f32() < lo.to_f32() {
        lo
    } else {
        r
    }
}

/// `dw[o][i] = -eta * delta[o] * s[i]` with `s` the accumulated spike
/// counts. Each product is rounded once per multiplication, `-eta*delta[o]`
/// first.
pub fn accum_fc_update(s: &[u16], delta: &[Word16], eta: Word16) -> Vec<Vec<Word16>> {
    let neg_eta = Word16(eta.0 ^ 0x8000);
    delta
        .iter()
        .map(|&d| {
            let g = fp_mul(neg_eta, d);
            s.iter()
                .map(|&c| fp_mul(g, Word16::from_f64(c as f64)))
                .collect()
        })
        .collect()
}

/// Learning state of an accumulated-spike FC layer: one counter per input,
/// whatever the number of timesteps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccumFc {
    pub counts: Vec<u16>,
}

impl AccumFc {
    pub fn new(n_in: usize) -> Self {
        AccumFc {
            counts: vec![0; n_in],
        }
    }

    pub fn observe(&mut self, spikes: &[u32]) {
        for &s in spikes {
            self.counts[s as usize] = self.counts[s as usize].saturating_add(1);
        }
    }

    pub fn state_bytes(&self) -> usize {
        std::mem::size_of_val(self.counts.as_slice())
    }

    /// Adds the update to row-major weights `w[o * n_in + i]`.
    pub fn apply(&mut self, w: &mut [Word16], delta: &[Word16], eta: Word16) {
        let dw = accum_fc_update(&self.counts, delta, eta);
        let n_in = self.counts.len();
        for (o, row) in dw.iter().enumerate() {
            for (i, &x) in row.iter().enumerate() {
                w[o * n_in + i] = fp_add(w[o * n_in + i], x);
            }
        }
        self.counts.iter_mut().for_each(|c| *c = 0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stdp_directions_and_clamp() {
        let p = StdpParams::default();
        let w = Word16::from_f32(0.5);
        assert!(stdp_update(w, 3, &p).to_f32() > 0.5);
        assert!(stdp_update(w, -3, &p).to_f32() < 0.5);
        assert_eq!(stdp_update(w, 0, &p), w);
        assert!(stdp_update(w, 1000, &p).to_f32() > 0.5);
        let hi = Word16::from_f32(1.0);
        assert_eq!(stdp_update(hi, 1, &p), hi);
        assert_eq!(stdp_update(Word16::ZERO, -1, &p), Word16::ZERO);
    }

    #[test]
    fn accum_zero_and_linear() {
        let d = [Word16::from_f32(0.5), Word16::from_f32(-0.25)];
        let z = accum_fc_update(&[0, 0], &d, Word16::from_f32(0.1));
        assert!(z.iter().flatten().all(|w| w.to_f32() == 0.0));
        let a = accum_fc_update(&[3, 1], &d, Word16::from_f32(0.1));
        let b = accum_fc_update(&[3, 1], &d, Word16::from_f32(0.2));
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            assert_eq!(2.0 * x.to_f32(), y.to_f32());
        }
        let mut st = AccumFc::new(2);
        let before = st.state_bytes();
        for _ in 0..100 {
            st.observe(&[0, 1]);
        }
        assert_eq!(st.state_bytes(), before);
        assert_eq!(st.counts, vec![100, 100]);
    }
}
