/// Instant-attack peak limiter with exponential release. Output never
/// exceeds `ceiling` in magnitude and non-finite input is replaced by zero.
#[derive(Debug, Clone)]
pub struct Limiter {
    pub ceiling: f64,
    gain: f64,
    release: f64,
}

pub const CEILING: f64 = 0.99;

impl Limiter {
    pub fn new(sample_rate: u32, release_ms: f64) -> Self {
        let release = 1.0 - (-1.0 / (release_ms * 1e-3 * sample_rate as f64)).exp();
        Self {
            ceiling: CEILING,
            gain: 1.0,
            release,
        }
    }

    pub fn process(&mut self, x: f64) -> f64 {
        if !x.is_finite() {
            return 0.0;
        }
        self.gain += (1.0 - self.gain) * self.release;
        let a = x.abs();
        if a * self.gain > self.ceiling {
            self.gain = self.ceiling / a;
        }
        (x * self.gain).clamp(-self.ceiling, self.ceiling)
    }

    pub fn process_in_place(&mut self, xs: &mut [f64]) {
        for x in xs {
            *x = self.process(*x);
        }
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }
}
