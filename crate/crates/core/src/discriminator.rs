//! Multi-resolution spectrogram critic used for adversarial refinement.
//! Each branch sees a log-magnitude spectrogram with frequency bins as
//! channels and emits a per-frame score; branch scores are time-averaged
//! and summed into one logit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv1d, Grads, Op, ParamStore, Sequential, Signal};
use crate::spectral::Stft;

pub const DISC_FFT_SIZES: [usize; 3] = [1024, 512, 256];
pub const DISC_CHANNELS: usize = 32;
const LOG_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub fft_sizes: Vec<usize>,
    pub channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            fft_sizes: DISC_FFT_SIZES.to_vec(),
            channels: DISC_CHANNELS,
        }
    }
}

#[derive(Debug, Clone)]
struct Branch {
    stft: Stft,
    net: Sequential,
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub params: ParamStore<f32>,
    branches: Vec<Branch>,
}

/// What the backward pass needs from one forward evaluation.
pub struct DiscTape {
    specs: Vec<crate::spectral::ComplexSpec>,
    tapes: Vec<crate::nn::Tape<f32>>,
    signal_len: usize,
    pub logit: f64,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        if config.fft_sizes.is_empty() || config.channels == 0 {
            return Err(Error::param("discriminator", "needs at least one branch and channel"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::default();
        let mut branches = Vec::new();
        let c = config.channels;
        for &n in &config.fft_sizes {
            let stft = Stft::quarter_hop(n)?;
            let bins = stft.bins();
            let name = format!("disc.fft{n}");
            let a = Conv1d::init(&mut params, &mut rng, &format!("{name}.conv0"), bins, c, 3, 1, 1, 1.0);
            let b = Conv1d::init(&mut params, &mut rng, &format!("{name}.conv1"), c, c, 3, 2, 1, 1.0);
            let o = Conv1d::init(&mut params, &mut rng, &format!("{name}.out"), c, 1, 3, 1, 1, 1.0);
            branches.push(Branch {
                stft,
                net: Sequential {
                    ops: vec![Op::Conv(a), Op::LeakyRelu, Op::Conv(b), Op::LeakyRelu, Op::Conv(o)],
                },
            });
        }
        Ok(Self { config, params, branches })
    }

    pub fn load_params(&mut self, params: ParamStore<f32>) -> Result<()> {
        let same = params.tensors.len() == self.params.tensors.len()
            && self
                .params
                .tensors
                .iter()
                .zip(&params.tensors)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape && a.data.len() == b.data.len());
        if !same {
            return Err(Error::Format("discriminator tensors do not match architecture".into()));
        }
        self.params = params;
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> DiscTape {
        let mut specs = Vec::with_capacity(self.branches.len());
        let mut tapes = Vec::with_capacity(self.branches.len());
        let mut logit = 0.0;
        for br in &self.branches {
            let spec = br.stft.forward(x);
            let mut s = Signal::<f32>::zeros(spec.bins, spec.frames);
            for f in 0..spec.frames {
                for b in 0..spec.bins {
                    s.row_mut(b)[f] = (spec.data[f * spec.bins + b].norm() + LOG_EPS).ln() as f32;
                }
            }
            let tape = br.net.forward(&self.params, s);
            let out = tape.output();
            logit += out.data.iter().map(|&v| v as f64).sum::<f64>() / out.len as f64;
            specs.push(spec);
            tapes.push(tape);
        }
        DiscTape {
            specs,
            tapes,
            signal_len: x.len(),
            logit,
        }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.forward(x).logit
    }

    /// Accumulate `dlogit · ∂logit/∂θ` into `grads`; optionally return the
    /// waveform gradient `dlogit · ∂logit/∂x`.
    pub fn backward(&self, tape: &DiscTape, dlogit: f64, grads: &mut Grads<f32>, need_input: bool) -> Option<Vec<f64>> {
        let mut dx = need_input.then(|| vec![0.0; tape.signal_len]);
        for ((br, spec), t) in self.branches.iter().zip(&tape.specs).zip(&tape.tapes) {
            let out = t.output();
            let g = (dlogit / out.len as f64) as f32;
            let dout = Signal::from_vec(1, out.len, vec![g; out.len]);
            let din = br.net.backward(&self.params, t, dout, grads, need_input);
            if let (Some(din), Some(dx)) = (din, dx.as_mut()) {
                let mut dmag = vec![0.0; spec.data.len()];
                for f in 0..spec.frames {
                    for b in 0..spec.bins {
                        let i = f * spec.bins + b;
                        dmag[i] = din.row(b)[f] as f64 / (spec.data[i].norm() + LOG_EPS);
                    }
                }
                let gx = br.stft.backward(tape.signal_len, &spec.magnitude_grad(&dmag));
                for (a, v) in dx.iter_mut().zip(gx) {
                    *a += v;
                }
            }
        }
        dx
    }
}

/// Hinge critic loss on one real/fake pair, with gradients accumulated.
pub fn hinge_step(disc: &Discriminator, real: &[f64], fake: &[f64], grads: &mut Grads<f32>) -> f64 {
    let tr = disc.forward(real);
    let tf = disc.forward(fake);
    let lr = (1.0 - tr.logit).max(0.0);
    let lf = (1.0 + tf.logit).max(0.0);
    if lr > 0.0 {
        disc.backward(&tr, -1.0, grads, false);
    }
    if lf > 0.0 {
        disc.backward(&tf, 1.0, grads, false);
    }
    lr + lf
}

/// Fraction of examples classified correctly (real > 0, fake < 0).
pub fn accuracy(disc: &Discriminator, real: &[Vec<f64>], fake: &[Vec<f64>]) -> f64 {
    let n = real.len() + fake.len();
    if n == 0 {
        return 0.0;
    }
    let ok = real.iter().filter(|x| disc.logit(x) > 0.0).count() + fake.iter().filter(|x| disc.logit(x) < 0.0).count();
    ok as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()
    }

    #[test]
    fn input_gradient_matches_finite_difference() {
        let d = Discriminator::new(
            DiscriminatorConfig {
                fft_sizes: vec![256, 128],
                channels: 4,
            },
            1,
        )
        .unwrap();
        let x = noise(1024, 2);
        let t = d.forward(&x);
        let mut g = d.params.zeros_like();
        let dx = d.backward(&t, 1.0, &mut g, true).unwrap();
        let h = 1e-3;
        for &i in &[3usize, 100, 511, 900] {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (d.logit(&xp) - d.logit(&xm)) / (2.0 * h);
            // The critic runs in single precision.
            assert!((fd - dx[i]).abs() < 2e-3 * (1.0 + fd.abs()), "{i}: {fd} vs {}", dx[i]);
        }
    }

    #[test]
    fn param_gradient_matches_finite_difference() {
        let mut d = Discriminator::new(
            DiscriminatorConfig {
                fft_sizes: vec![128],
                channels: 4,
            },
            3,
        )
        .unwrap();
        let x = noise(512, 4);
        let t = d.forward(&x);
        let mut g = d.params.zeros_like();
        d.backward(&t, 1.0, &mut g, false);
        let h = 1e-2f32;
        for (ti, j) in [(0usize, 5usize), (2, 7), (4, 1), (5, 0)] {
            let orig = d.params.tensors[ti].data[j];
            d.params.tensors[ti].data[j] = orig + h;
            let lp = d.logit(&x);
            d.params.tensors[ti].data[j] = orig - h;
            let lm = d.logit(&x);
            d.params.tensors[ti].data[j] = orig;
            let fd = (lp - lm) / (2.0 * h as f64);
            let an = g.tensors[ti][j] as f64;
            assert!((fd - an).abs() < 1e-2 * (1.0 + fd.abs()), "{ti}/{j}: {fd} vs {an}");
        }
    }

    #[test]
    fn hinge_is_zero_when_margins_are_met() {
        let d = Discriminator::new(DiscriminatorConfig::default(), 0).unwrap();
        let x = noise(4096, 1);
        let mut g = d.params.zeros_like();
        let l = hinge_step(&d, &x, &x, &mut g);
        let s = d.logit(&x);
        assert!((l - ((1.0 - s).max(0.0) + (1.0 + s).max(0.0))).abs() < 1e-9);
        assert!(l >= 2.0 - 1e-9);
    }
}
