//! Small convolutional Q-value approximator with hand-rolled forward and
//! backward passes.
//!
//! Architecture (fixed): 6x6 input -> conv 3x3 stride 1, 20 filters ->
//! conv 2x2 stride 1, 40 filters -> dense 360->180 -> one dense head of
//! `out_dim` units per controlled pairing. ReLU everywhere, output included.

use crate::codec::{CodecError, Reader, Writer};
use rand::Rng;

pub const INPUT_SIDE: usize = 6;
pub const INPUT_LEN: usize = INPUT_SIDE * INPUT_SIDE;
const C1_FILTERS: usize = 20;
const C1_K: usize = 3;
const C1_SIDE: usize = INPUT_SIDE - C1_K + 1; // 4
const C2_FILTERS: usize = 40;
const C2_K: usize = 2;
const C2_SIDE: usize = C1_SIDE - C2_K + 1; // 3
const FLAT: usize = C2_SIDE * C2_SIDE * C2_FILTERS; // 360
const FC1: usize = 180;

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn relu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

fn xavier(rng: &mut impl Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
}

/// Network weights plus the layer geometry needed to run them.
#[derive(Clone, Debug, PartialEq)]
pub struct QNetwork {
    pub out_dim: usize,
    pub heads: usize,
    // conv1: [filter][ky][kx], conv2: [filter][in_ch][ky][kx]
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    wf: Vec<f64>, // [FC1][FLAT]
    bf: Vec<f64>,
    // one output head per pairing: [head][out][FC1]
    wo: Vec<Vec<f64>>,
    bo: Vec<Vec<f64>>,
}

/// Cached pre-activations from one forward pass, consumed by backprop.
pub struct ForwardCache {
    input: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    z3: Vec<f64>,
    a3: Vec<f64>,
    z4: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
}

impl QNetwork {
    pub fn new(out_dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        let w1 = xavier(rng, C1_K * C1_K, C1_FILTERS * C1_K * C1_K, C1_FILTERS * C1_K * C1_K);
        let b1 = vec![0.0; C1_FILTERS];
        let w2 = xavier(
            rng,
            C1_FILTERS * C2_K * C2_K,
            C2_FILTERS * C2_K * C2_K,
            C2_FILTERS * C1_FILTERS * C2_K * C2_K,
        );
        let b2 = vec![0.0; C2_FILTERS];
        let wf = xavier(rng, FLAT, FC1, FC1 * FLAT);
        let bf = vec![0.0; FC1];
        let mut wo = Vec::with_capacity(heads);
        let mut bo = Vec::with_capacity(heads);
        for _ in 0..heads {
            wo.push(xavier(rng, FC1, out_dim, out_dim * FC1));
            bo.push(vec![0.0; out_dim]);
        }
        Self { out_dim, heads, w1, b1, w2, b2, wf, bf, wo, bo }
    }

    /// Deterministic forward pass over a 36-entry row-major plane. Returns
    /// per-head Q-values of length `out_dim`.
    pub fn forward(&self, plane: &[f64]) -> ForwardCache {
        assert_eq!(plane.len(), INPUT_LEN, "plane must be 6x6");

        // conv1: valid convolution, stride 1
        let mut z1 = vec![0.0; C1_FILTERS * C1_SIDE * C1_SIDE];
        for f in 0..C1_FILTERS {
            for oy in 0..C1_SIDE {
                for ox in 0..C1_SIDE {
                    let mut acc = self.b1[f];
                    for ky in 0..C1_K {
                        for kx in 0..C1_K {
                            acc += self.w1[(f * C1_K + ky) * C1_K + kx]
                                * plane[(oy + ky) * INPUT_SIDE + (ox + kx)];
                        }
                    }
                    z1[(f * C1_SIDE + oy) * C1_SIDE + ox] = acc;
                }
            }
        }
        let a1: Vec<f64> = z1.iter().map(|&v| relu(v)).collect();

        // conv2 over 20 input channels
        let mut z2 = vec![0.0; C2_FILTERS * C2_SIDE * C2_SIDE];
        for f in 0..C2_FILTERS {
            for oy in 0..C2_SIDE {
                for ox in 0..C2_SIDE {
                    let mut acc = self.b2[f];
                    for c in 0..C1_FILTERS {
                        for ky in 0..C2_K {
                            for kx in 0..C2_K {
                                acc += self.w2[((f * C1_FILTERS + c) * C2_K + ky) * C2_K + kx]
                                    * a1[(c * C1_SIDE + oy + ky) * C1_SIDE + (ox + kx)];
                            }
                        }
                    }
                    z2[(f * C2_SIDE + oy) * C2_SIDE + ox] = acc;
                }
            }
        }
        let a2: Vec<f64> = z2.iter().map(|&v| relu(v)).collect();

        let mut z3 = vec![0.0; FC1];
        for o in 0..FC1 {
            let mut acc = self.bf[o];
            let row = &self.wf[o * FLAT..(o + 1) * FLAT];
            for (w, a) in row.iter().zip(&a2) {
                acc += w * a;
            }
            z3[o] = acc;
        }
        let a3: Vec<f64> = z3.iter().map(|&v| relu(v)).collect();

        let mut z4 = Vec::with_capacity(self.heads);
        let mut q = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let mut zh = vec![0.0; self.out_dim];
            for o in 0..self.out_dim {
                let mut acc = self.bo[h][o];
                let row = &self.wo[h][o * FC1..(o + 1) * FC1];
                for (w, a) in row.iter().zip(&a3) {
                    acc += w * a;
                }
                zh[o] = acc;
            }
            q.push(zh.iter().map(|&v| relu(v)).collect());
            z4.push(zh);
        }

        ForwardCache { input: plane.to_vec(), z1, a1, z2, a2, z3, a3, z4, q }
    }

    /// Q-values only, when the cache is not needed.
    pub fn q_values(&self, plane: &[f64]) -> Vec<Vec<f64>> {
        self.forward(plane).q
    }

    /// One SGD step on the squared TD error of the taken action in each
    /// head: `sum_h (target_h - Q_h[action_h])^2`. Returns the loss before
    /// the update.
    pub fn train_on(
        &mut self,
        cache: &ForwardCache,
        actions: &[usize],
        targets: &[f64],
        learning_rate: f64,
    ) -> f64 {
        assert_eq!(actions.len(), self.heads);
        assert_eq!(targets.len(), self.heads);

        let mut loss = 0.0;
        // gradient into z4, only at the taken action slots
        let mut d_z4 = vec![vec![0.0; self.out_dim]; self.heads];
        for h in 0..self.heads {
            let a = actions[h];
            let err = cache.q[h][a] - targets[h];
            loss += err * err;
            d_z4[h][a] = 2.0 * err * relu_grad(cache.z4[h][a]);
        }

        // output heads and gradient into a3
        let mut d_a3 = vec![0.0; FC1];
        for h in 0..self.heads {
            for o in 0..self.out_dim {
                let g = d_z4[h][o];
                if g == 0.0 {
                    continue;
                }
                for i in 0..FC1 {
                    d_a3[i] += g * self.wo[h][o * FC1 + i];
                    self.wo[h][o * FC1 + i] -= learning_rate * g * cache.a3[i];
                }
                self.bo[h][o] -= learning_rate * g;
            }
        }

        // fc1
        let mut d_a2 = vec![0.0; FLAT];
        for o in 0..FC1 {
            let g = d_a3[o] * relu_grad(cache.z3[o]);
            if g == 0.0 {
                continue;
            }
            for i in 0..FLAT {
                d_a2[i] += g * self.wf[o * FLAT + i];
                self.wf[o * FLAT + i] -= learning_rate * g * cache.a2[i];
            }
            self.bf[o] -= learning_rate * g;
        }

        // conv2
        let mut d_a1 = vec![0.0; C1_FILTERS * C1_SIDE * C1_SIDE];
        for f in 0..C2_FILTERS {
            for oy in 0..C2_SIDE {
                for ox in 0..C2_SIDE {
                    let idx = (f * C2_SIDE + oy) * C2_SIDE + ox;
                    let g = d_a2[idx] * relu_grad(cache.z2[idx]);
                    if g == 0.0 {
                        continue;
                    }
                    for c in 0..C1_FILTERS {
                        for ky in 0..C2_K {
                            for kx in 0..C2_K {
                                let widx = ((f * C1_FILTERS + c) * C2_K + ky) * C2_K + kx;
                                let aidx = (c * C1_SIDE + oy + ky) * C1_SIDE + (ox + kx);
                                d_a1[aidx] += g * self.w2[widx];
                                self.w2[widx] -= learning_rate * g * cache.a1[aidx];
                            }
                        }
                    }
                    self.b2[f] -= learning_rate * g;
                }
            }
        }

        // conv1
        for f in 0..C1_FILTERS {
            for oy in 0..C1_SIDE {
                for ox in 0..C1_SIDE {
                    let idx = (f * C1_SIDE + oy) * C1_SIDE + ox;
                    let g = d_a1[idx] * relu_grad(cache.z1[idx]);
                    if g == 0.0 {
                        continue;
                    }
                    for ky in 0..C1_K {
                        for kx in 0..C1_K {
                            let widx = (f * C1_K + ky) * C1_K + kx;
                            self.w1[widx] -=
                                learning_rate * g * cache.input[(oy + ky) * INPUT_SIDE + (ox + kx)];
                        }
                    }
                    self.b1[f] -= learning_rate * g;
                }
            }
        }
        loss
    }

    /// Loss without updating, for gradient checks.
    pub fn loss_on(&self, plane: &[f64], actions: &[usize], targets: &[f64]) -> f64 {
        let cache = self.forward(plane);
        let mut loss = 0.0;
        for h in 0..self.heads {
            let err = cache.q[h][actions[h]] - targets[h];
            loss += err * err;
        }
        loss
    }

    /// Flat view of every weight, paired with `set_flat` for finite
    /// difference probing and checkpoint I/O.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend(&self.w1);
        v.extend(&self.b1);
        v.extend(&self.w2);
        v.extend(&self.b2);
        v.extend(&self.wf);
        v.extend(&self.bf);
        for h in 0..self.heads {
            v.extend(&self.wo[h]);
            v.extend(&self.bo[h]);
        }
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut pos = 0;
        let mut take = |dst: &mut Vec<f64>| {
            let len = dst.len();
            dst.copy_from_slice(&flat[pos..pos + len]);
            pos += len;
        };
        take(&mut self.w1);
        take(&mut self.b1);
        take(&mut self.w2);
        take(&mut self.b2);
        take(&mut self.wf);
        take(&mut self.bf);
        for h in 0..self.heads {
            take(&mut self.wo[h]);
            take(&mut self.bo[h]);
        }
        assert_eq!(pos, flat.len());
    }

    /// Versioned binary checkpoint.
    pub fn to_checkpoint(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_raw(b"RSQN");
        w.put_u8(1);
        w.put_u32(self.out_dim as u32);
        w.put_u32(self.heads as u32);
        let flat = self.flatten();
        w.put_u32(flat.len() as u32);
        for v in flat {
            w.put_f64(v);
        }
        w.finish()
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        let magic = r.get_raw(4)?;
        if magic != b"RSQN" {
            return Err(CodecError::BadTag { tag: magic[0], context: "checkpoint magic" });
        }
        let version = r.get_u8()?;
        if version != 1 {
            return Err(CodecError::BadVersion(version));
        }
        let out_dim = r.get_u32()? as usize;
        let heads = r.get_u32()? as usize;
        let n = r.get_u32()? as usize;
        let mut flat = Vec::with_capacity(n);
        for _ in 0..n {
            flat.push(r.get_f64()?);
        }
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0);
        use rand::SeedableRng;
        let mut net = Self::new(out_dim, heads, &mut rng);
        net.set_flat(&flat);
        Ok(net)
    }

    pub fn zeroed(out_dim: usize, heads: usize) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0);
        let mut net = Self::new(out_dim, heads, &mut rng);
        let n = net.flatten().len();
        net.set_flat(&vec![0.0; n]);
        net
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn zero_weights_give_zero_outputs() {
        let net = QNetwork::zeroed(22, 1);
        let plane = vec![0.3; INPUT_LEN];
        let q = net.q_values(&plane);
        assert_eq!(q.len(), 1);
        assert_eq!(q[0].len(), 22);
        assert!(q[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn multi_head_output_shape() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let net = QNetwork::new(22, 3, &mut rng);
        let plane: Vec<f64> = (0..INPUT_LEN).map(|i| i as f64 / 36.0).collect();
        let q = net.q_values(&plane);
        assert_eq!(q.len(), 3, "one head per pairing");
        assert!(q.iter().all(|h| h.len() == 22));
        assert!(q.iter().flatten().all(|&v| v >= 0.0), "output ReLU clips at zero");
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let net = QNetwork::new(12, 1, &mut rng);
        let plane: Vec<f64> = (0..INPUT_LEN).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        assert_eq!(net.q_values(&plane), net.q_values(&plane));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut net = QNetwork::new(6, 2, &mut rng);
        let plane: Vec<f64> = (0..INPUT_LEN).map(|i| ((i * 7 % 13) as f64) / 13.0).collect();
        let actions = vec![2usize, 4usize];
        let targets = vec![1.5, -0.3];

        // analytic gradient read off as the weight delta of one SGD step
        // with unit learning rate: w' = w - grad
        let before = net.flatten();
        let cache = net.forward(&plane);
        net.train_on(&cache, &actions, &targets, 1.0);
        let after = net.flatten();
        let analytic: Vec<f64> = before.iter().zip(&after).map(|(b, a)| b - a).collect();

        // probe a spread of coordinates with central differences
        let mut probe = QNetwork::new(6, 2, &mut ChaCha12Rng::seed_from_u64(11));
        let n = before.len();
        let eps = 1e-6;
        let mut checked = 0;
        for idx in (0..n).step_by(n / 400 + 1) {
            let mut theta = before.clone();
            theta[idx] += eps;
            probe.set_flat(&theta);
            let up = probe.loss_on(&plane, &actions, &targets);
            theta[idx] -= 2.0 * eps;
            probe.set_flat(&theta);
            let down = probe.loss_on(&plane, &actions, &targets);
            let fd = (up - down) / (2.0 * eps);
            let an = analytic[idx];
            let tol = 1e-4 * an.abs().max(1e-3);
            assert!((fd - an).abs() <= tol, "idx {idx}: fd {fd} vs analytic {an}");
            checked += 1;
        }
        assert!(checked > 300);
    }

    #[test]
    fn zero_td_error_leaves_weights_unchanged() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let mut net = QNetwork::new(5, 1, &mut rng);
        let plane = vec![0.5; INPUT_LEN];
        let q = net.q_values(&plane);
        let action = 3usize;
        let before = net.flatten();
        let cache = net.forward(&plane);
        let loss = net.train_on(&cache, &[action], &[q[0][action]], 0.01);
        assert_eq!(loss, 0.0);
        assert_eq!(net.flatten(), before);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let net = QNetwork::new(22, 2, &mut rng);
        let bytes = net.to_checkpoint();
        let restored = QNetwork::from_checkpoint(&bytes).unwrap();
        assert_eq!(restored, net);

        let mut corrupted = bytes.clone();
        corrupted[4] = 99; // version byte
        assert!(QNetwork::from_checkpoint(&corrupted).is_err());
    }
}
