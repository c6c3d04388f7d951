//! Multicarrier test signals and block-level utilities.

use std::io::{BufRead, Write};
use std::ops::Deref;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, C64, FLOOR_DB};

/// A finite run of complex baseband samples at a normalized rate
/// (samples per symbol period).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexBlock {
    pub samples: Vec<C64>,
    pub rate: f64,
}

impl ComplexBlock {
    /// Checked constructor: at least one sample, all finite.
    pub fn new(samples: Vec<C64>, rate: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Config("a block needs at least one sample".into()));
        }
        if let Some(i) = samples.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Config(format!("sample {i} is not finite")));
        }
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::Config(format!("rate must be positive, got {rate}")));
        }
        Ok(Self { samples, rate })
    }

    pub fn mean_power(&self) -> f64 {
        mean_power(&self.samples)
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|z| z * a).collect(),
            rate: self.rate,
        }
    }
}

impl AsRef<[C64]> for ComplexBlock {
    fn as_ref(&self) -> &[C64] {
        &self.samples
    }
}

impl Deref for ComplexBlock {
    type Target = [C64];
    fn deref(&self) -> &[C64] {
        &self.samples
    }
}

pub fn mean_power(x: &[C64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|z| z.norm_sqr()).sum::<f64>() / x.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Constellation {
    Qpsk,
    Qam16,
}

impl Constellation {
    fn draw(self, rng: &mut ChaCha8Rng) -> C64 {
        match self {
            Constellation::Qpsk => {
                let a = std::f64::consts::FRAC_1_SQRT_2;
                let re = if rng.random::<bool>() { a } else { -a };
                let im = if rng.random::<bool>() { a } else { -a };
                C64::new(re, im)
            }
            Constellation::Qam16 => {
                const LEVELS: [f64; 4] = [-3.0, -1.0, 1.0, 3.0];
                let scale = 1.0 / 10f64.sqrt();
                let re = LEVELS[rng.random_range(0..4)];
                let im = LEVELS[rng.random_range(0..4)];
                C64::new(re * scale, im * scale)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalConfig {
    pub n_subcarriers: usize,
    pub active_mask: Vec<bool>,
    pub constellation: Constellation,
    pub oversampling: usize,
    pub n_symbols: usize,
    pub seed: u64,
    pub normalize: bool,
}

impl SignalConfig {
    /// All subcarriers active.
    pub fn dense(n_subcarriers: usize, oversampling: usize, n_symbols: usize, seed: u64) -> Self {
        Self {
            n_subcarriers,
            active_mask: vec![true; n_subcarriers],
            constellation: Constellation::Qpsk,
            oversampling,
            n_symbols,
            seed,
            normalize: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subcarriers == 0 || self.n_symbols == 0 || self.oversampling == 0 {
            return Err(Error::Config(
                "n_subcarriers, oversampling and n_symbols must be positive".into(),
            ));
        }
        if self.active_mask.len() != self.n_subcarriers {
            return Err(Error::Length {
                what: "active_mask",
                expected: self.n_subcarriers,
                got: self.active_mask.len(),
            });
        }
        if self.oversampling < 4 {
            return Err(Error::Config(format!(
                "oversampling must be at least 4 so adjacent channels fit, got {}",
                self.oversampling
            )));
        }
        Ok(())
    }
}

/// Inverse-DFT multicarrier synthesis without cyclic prefix. Subcarrier `j`
/// sits on bin `j - n_subcarriers/2` so the occupied band is centred on DC.
/// With every subcarrier inactive the result is an all-zero block.
pub fn generate_multicarrier(cfg: &SignalConfig) -> Result<ComplexBlock> {
    cfg.validate()?;
    let nfft = cfg.n_subcarriers * cfg.oversampling;
    let half = (cfg.n_subcarriers / 2) as isize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(nfft);
    let mut out = Vec::with_capacity(nfft * cfg.n_symbols);
    let mut buf = vec![C64::new(0.0, 0.0); nfft];
    for _ in 0..cfg.n_symbols {
        buf.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        for (j, _) in cfg.active_mask.iter().enumerate().filter(|(_, a)| **a) {
            let bin = (j as isize - half).rem_euclid(nfft as isize) as usize;
            buf[bin] = cfg.constellation.draw(&mut rng);
        }
        ifft.process(&mut buf);
        out.extend(buf.iter().map(|z| z / nfft as f64));
    }
    if cfg.normalize {
        let p = mean_power(&out);
        if p > 0.0 {
            let g = 1.0 / p.sqrt();
            out.iter_mut().for_each(|z| *z *= g);
        }
    }
    Ok(ComplexBlock {
        samples: out,
        rate: cfg.oversampling as f64,
    })
}

/// Normalized mean square error in dB; [`FLOOR_DB`] when the error energy
/// vanishes.
pub fn nmse_db(reference: &[C64], test: &[C64]) -> Result<f64> {
    if reference.len() != test.len() {
        return Err(Error::Length {
            what: "nmse operands",
            expected: reference.len(),
            got: test.len(),
        });
    }
    let den: f64 = reference.iter().map(|z| z.norm_sqr()).sum();
    if den == 0.0 {
        return Err(Error::Config("nmse reference block is all zero".into()));
    }
    let num: f64 = reference
        .iter()
        .zip(test)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    Ok(ratio_db(num, den))
}

/// `10 log10(num/den)` with the floor sentinel for zero or underflowing ratios.
pub fn ratio_db(num: f64, den: f64) -> f64 {
    let r = num / den;
    if !(r > 1e-30) {
        FLOOR_DB
    } else {
        10.0 * r.log10()
    }
}

/// Writes `# rate=<v>` then one `re,im` line per sample. Rust's float
/// formatting is shortest-roundtrip, so reading back is bit-exact.
pub fn write_block<W: Write>(block: &ComplexBlock, mut w: W) -> Result<()> {
    writeln!(w, "# rate={}", block.rate)?;
    for z in &block.samples {
        writeln!(w, "{},{}", z.re, z.im)?;
    }
    Ok(())
}

pub fn read_block<R: BufRead>(r: R) -> Result<ComplexBlock> {
    let mut rate = None;
    let mut samples = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(h) = t.strip_prefix('#') {
            if let Some(v) = h.trim().strip_prefix("rate=") {
                rate = Some(v.trim().parse::<f64>().map_err(|e| {
                    Error::Parse(format!("line {}: bad rate: {e}", i + 1))
                })?);
            }
            continue;
        }
        let (re, im) = t
            .split_once(',')
            .ok_or_else(|| Error::Parse(format!("line {}: expected re,im", i + 1)))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))
        };
        samples.push(C64::new(parse(re)?, parse(im)?));
    }
    let rate = rate.ok_or_else(|| Error::Parse("missing '# rate=' header".into()))?;
    ComplexBlock::new(samples, rate)
}
