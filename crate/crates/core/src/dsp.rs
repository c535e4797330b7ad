//! Small shared DSP primitives.

use std::f64::consts::PI;

/// Zeroth-order modified Bessel function of the first kind (power series).
pub fn bessel_i0(x: f64) -> f64 {
    let half = 0.5 * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

/// Normalized sinc, sin(pi x) / (pi x).
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

pub fn kaiser_window(len: usize, beta: f64) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = bessel_i0(beta);
    let m = (len - 1) as f64;
    (0..len)
        .map(|n| {
            let r = 2.0 * n as f64 / m - 1.0;
            bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom
        })
        .collect()
}

/// Kaiser beta for a stopband attenuation in dB.
pub fn kaiser_beta(attenuation_db: f64) -> f64 {
    if attenuation_db > 50.0 {
        0.1102 * (attenuation_db - 8.7)
    } else if attenuation_db >= 21.0 {
        0.5842 * (attenuation_db - 21.0).powf(0.4) + 0.07886 * (attenuation_db - 21.0)
    } else {
        0.0
    }
}

/// Periodic Hann window (the usual STFT analysis window).
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

pub fn db_to_gain(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Normalized biquad coefficients (a0 = 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiquadCoeffs {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl BiquadCoeffs {
    /// Cookbook peaking EQ with the bandwidth given in octaves.
    pub fn peaking_bw(sample_rate: f64, center_hz: f64, gain_db: f64, bw_oct: f64) -> Self {
        let w0 = 2.0 * PI * center_hz / sample_rate;
        let sw = w0.sin();
        let alpha = sw * ((2f64.ln() / 2.0) * bw_oct * w0 / sw).sinh();
        Self::peaking_alpha(w0, gain_db, alpha)
    }

    /// Cookbook peaking EQ with the bandwidth given as Q.
    pub fn peaking_q(sample_rate: f64, center_hz: f64, gain_db: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * center_hz / sample_rate;
        let alpha = w0.sin() / (2.0 * q);
        Self::peaking_alpha(w0, gain_db, alpha)
    }

    /// Constant 0 dB peak-gain band-pass (RBJ cookbook).
    pub fn bandpass_q(sample_rate: f64, center_hz: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * center_hz / sample_rate;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b0: alpha / a0,
            b1: 0.0,
            b2: -alpha / a0,
            a1: -2.0 * w0.cos() / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    fn peaking_alpha(w0: f64, gain_db: f64, alpha: f64) -> Self {
        let a = 10f64.powf(gain_db / 40.0);
        let cw = w0.cos();
        let a0 = 1.0 + alpha / a;
        Self {
            b0: (1.0 + alpha * a) / a0,
            b1: (-2.0 * cw) / a0,
            b2: (1.0 - alpha * a) / a0,
            a1: (-2.0 * cw) / a0,
            a2: (1.0 - alpha / a) / a0,
        }
    }

    /// Magnitude response at `freq_hz`.
    pub fn magnitude(&self, sample_rate: f64, freq_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / sample_rate;
        let (c1, s1) = (w.cos(), -w.sin());
        let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
        let nr = self.b0 + self.b1 * c1 + self.b2 * c2;
        let ni = self.b1 * s1 + self.b2 * s2;
        let dr = 1.0 + self.a1 * c1 + self.a2 * c2;
        let di = self.a1 * s1 + self.a2 * s2;
        ((nr * nr + ni * ni) / (dr * dr + di * di)).sqrt()
    }
}

/// Direct form I biquad state.
#[derive(Debug, Clone, Copy)]
pub struct Biquad {
    c: BiquadCoeffs,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl Biquad {
    pub fn new(c: BiquadCoeffs) -> Self {
        Self {
            c,
            x1: 0.0,
            x2: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let c = &self.c;
        let y = c.b0 * x + c.b1 * self.x1 + c.b2 * self.x2 - c.a1 * self.y1 - c.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// One-pole lowpass, y += a (x - y).
#[derive(Debug, Clone, Copy)]
pub struct OnePoleLowpass {
    a: f64,
    y: f64,
}

impl OnePoleLowpass {
    pub fn new(sample_rate: f64, cutoff_hz: f64) -> Self {
        let fc = cutoff_hz.clamp(0.0, 0.5 * sample_rate);
        Self {
            a: 1.0 - (-2.0 * PI * fc / sample_rate).exp(),
            y: 0.0,
        }
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        self.y += self.a * (x - self.y);
        self.y
    }
}

/// One-pole highpass, the complement of [`OnePoleLowpass`].
#[derive(Debug, Clone, Copy)]
pub struct OnePoleHighpass {
    lp: OnePoleLowpass,
}

impl OnePoleHighpass {
    pub fn new(sample_rate: f64, cutoff_hz: f64) -> Self {
        Self {
            lp: OnePoleLowpass::new(sample_rate, cutoff_hz),
        }
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        x - self.lp.process(x)
    }
}

/// Circular delay line with linear-interpolated fractional reads.
#[derive(Debug, Clone)]
pub struct DelayLine {
    buf: Vec<f64>,
    pos: usize,
}

impl DelayLine {
    /// `max_delay` in samples; reads up to that delay are valid.
    pub fn new(max_delay: usize) -> Self {
        Self {
            buf: vec![0.0; max_delay + 2],
            pos: 0,
        }
    }

    /// Value written `delay` samples ago (delay 0 is the most recent write).
    #[inline]
    pub fn read(&self, delay: f64) -> f64 {
        let n = self.buf.len();
        let d = delay.clamp(0.0, (n - 2) as f64);
        let di = d.floor() as usize;
        let frac = d - di as f64;
        let newest = (self.pos + n - 1) % n;
        let a = self.buf[(newest + n - di) % n];
        if frac == 0.0 {
            return a;
        }
        let b = self.buf[(newest + n - di - 1) % n];
        a + frac * (b - a)
    }

    #[inline]
    pub fn write(&mut self, x: f64) {
        self.buf[self.pos] = x;
        self.pos = (self.pos + 1) % self.buf.len();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_reference_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        // I0(1) and I0(5) from tables
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-13);
        assert!((bessel_i0(5.0) - 27.239_871_823_604_45).abs() < 1e-10);
    }

    #[test]
    fn zero_gain_peaking_is_identity() {
        let c = BiquadCoeffs::peaking_bw(44100.0, 1000.0, 0.0, 1.0);
        assert_eq!(c.b0, 1.0);
        assert_eq!(c.b1, c.a1);
        assert_eq!(c.b2, c.a2);
    }

    #[test]
    fn peaking_gain_at_center() {
        let c = BiquadCoeffs::peaking_q(44100.0, 1000.0, 6.0, 0.7);
        assert!((c.magnitude(44100.0, 1000.0) - db_to_gain(6.0)).abs() < 1e-9);
    }

    #[test]
    fn delay_line_integer_and_fraction() {
        let mut d = DelayLine::new(8);
        for i in 0..5 {
            d.write(i as f64);
        }
        assert_eq!(d.read(0.0), 4.0);
        assert_eq!(d.read(3.0), 1.0);
        assert!((d.read(1.5) - 2.5).abs() < 1e-12);
    }
}
