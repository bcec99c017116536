//! Network builders with seeded dyadic weights, used by the benchmarks, the
//! CLI demos and tests.
//!
//! Weights are multiples of `step` (a power of two), so small sums stay
//! exact in binary16 and results do not depend on summation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ir::{LayerKind, LayerSpec, NetworkIR, NeuronModel, Skip, Tensor};

pub struct Builder {
    ir: NetworkIR,
    rng: ChaCha8Rng,
    shape: [u32; 3],
    /// Weight range and granularity.
    pub lo: f32,
    pub hi: f32,
    pub step: f32,
    pub neuron: NeuronModel,
    pending_input: Option<String>,
}

impl Builder {
    pub fn new(name: &str, input: [u32; 3], timesteps: u32, seed: u64) -> Self {
        Builder {
            ir: NetworkIR {
                name: name.into(),
                input,
                timesteps,
                layers: Vec::new(),
                skips: Vec::new(),
            },
            rng: ChaCha8Rng::seed_from_u64(seed),
            shape: input,
            lo: -0.25,
            hi: 0.5,
            step: 1.0 / 16.0,
            neuron: NeuronModel::Lif {
                tau: 0.5,
                v_th: 1.0,
            },
            pending_input: None,
        }
    }

    pub fn weights(&mut self, n: usize) -> Vec<f32> {
        let (a, b) = ((self.lo / self.step) as i32, (self.hi / self.step) as i32);
        (0..n)
            .map(|_| self.rng.gen_range(a..=b) as f32 * self.step)
            .collect()
    }

    pub fn shape(&self) -> [u32; 3] {
        self.shape
    }

    fn push(&mut self, name: &str, kind: LayerKind, shape: [u32; 3]) -> &mut Self {
        self.ir.layers.push(LayerSpec {
            name: name.into(),
            kind,
            neuron: self.neuron.clone(),
            input: self.pending_input.take(),
            thresholds: None,
            bn: None,
            output: false,
        });
        self.shape = shape;
        self
    }

    pub fn fc(&mut self, name: &str, out: u32) -> &mut Self {
        let n_in: u32 = self.shape.iter().product();
        let w = self.weights((out * n_in) as usize);
        self.push(
            name,
            LayerKind::Fc {
                out,
                weights: Tensor::from_f32(vec![out, n_in], &w),
                bias: None,
            },
            [out, 1, 1],
        )
    }

    pub fn conv(
        &mut self,
        name: &str,
        c_out: u32,
        k: u32,
        stride: u32,
        pad: u32,
        pool: Option<u32>,
    ) -> &mut Self {
        let [c, h, w] = self.shape;
        let wt = self.weights((c_out * c * k * k) as usize);
        let (mut ho, mut wo) = (
            (h + 2 * pad - k) / stride + 1,
            (w + 2 * pad - k) / stride + 1,
        );
        if let Some(p) = pool {
            let k2 = k + p - 1;
            ho = (h + 2 * pad - k2) / p + 1;
            wo = (w + 2 * pad - k2) / p + 1;
        }
        self.push(
            name,
            LayerKind::Conv {
                c_out,
                k,
                stride,
                pad,
                pool,
                weights: Tensor::from_f32(vec![c_out, c, k, k], &wt),
                bias: None,
            },
            [c_out, ho, wo],
        )
    }

    pub fn pool(&mut self, name: &str, window: u32, weight: f32) -> &mut Self {
        let [c, h, w] = self.shape;
        self.push(
            name,
            LayerKind::Pool { window, weight },
            [c, h / window, w / window],
        )
    }

    /// Random sparse layer with about `density` of all pairs connected.
    pub fn sparse(&mut self, name: &str, out: u32, density: f64) -> &mut Self {
        let n_in: u32 = self.shape.iter().product();
        let mut edges = Vec::new();
        for s in 0..n_in {
            for d in 0..out {
                if self.rng.gen::<f64>() < density {
                    edges.push((s, d));
                }
            }
        }
        let w = self.weights(edges.len());
        let n = edges.len() as u32;
        self.push(
            name,
            LayerKind::Sparse {
                out,
                edges,
                weights: Tensor::from_f32(vec![n], &w),
            },
            [out, 1, 1],
        )
    }

    /// Dense input plus random recurrent edges of about `density`.
    pub fn recurrent(&mut self, name: &str, out: u32, density: f64) -> &mut Self {
        let n_in: u32 = self.shape.iter().product();
        let w = self.weights((out * n_in) as usize);
        let mut edges = Vec::new();
        for s in 0..out {
            for d in 0..out {
                if self.rng.gen::<f64>() < density {
                    edges.push((s, d));
                }
            }
        }
        let rw = self.weights(edges.len());
        let n = edges.len() as u32;
        self.push(
            name,
            LayerKind::Recurrent {
                out,
                weights: Tensor::from_f32(vec![out, n_in], &w),
                edges,
                rec_weights: Tensor::from_f32(vec![n], &rw),
            },
            [out, 1, 1],
        )
    }

    /// Neuron model of the most recent layer.
    pub fn model(&mut self, m: NeuronModel) -> &mut Self {
        if let Some(l) = self.ir.layers.last_mut() {
            l.neuron = m;
        }
        self
    }

    /// The next layer reads `src` (of shape `shape`) instead of the last one.
    pub fn input_from(&mut self, src: &str, shape: [u32; 3]) -> &mut Self {
        self.shape = shape;
        self.pending_input = Some(src.into());
        self
    }

    pub fn output(&mut self) -> &mut Self {
        if let Some(l) = self.ir.layers.last_mut() {
            l.output = true;
        }
        self
    }

    pub fn skip(&mut self, from: &str, to: &str) -> &mut Self {
        self.ir.skips.push(Skip {
            from: from.into(),
            to: to.into(),
            weight: 1.0,
        });
        self
    }

    pub fn build(&self) -> NetworkIR {
        self.ir.clone()
    }
}
