//! Deterministic synthetic test fields.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::volume::{check_dims, shape3, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    Constant,
    Checker,
    GaussianBlobs,
    BandLimitedNoise,
}

impl SyntheticKind {
    pub const ALL: [SyntheticKind; 4] = [
        SyntheticKind::Constant,
        SyntheticKind::Checker,
        SyntheticKind::GaussianBlobs,
        SyntheticKind::BandLimitedNoise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SyntheticKind::Constant => "constant",
            SyntheticKind::Checker => "checker",
            SyntheticKind::GaussianBlobs => "gaussian_blobs",
            SyntheticKind::BandLimitedNoise => "band_limited_noise",
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SyntheticKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownKind(s.to_string()))
    }
}

/// Generates a field with values in `[0, 1]`. Pure in `(kind, dims, seed)`.
pub fn gen_synthetic(kind: SyntheticKind, dims: &[usize], seed: u64) -> Result<Volume> {
    check_dims(dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [nz, ny, nx] = shape3(dims);
    let n = nz * ny * nx;
    let data = match kind {
        SyntheticKind::Constant => vec![rng.gen_range(0.0f32..=1.0); n],
        SyntheticKind::Checker => {
            let mut out = Vec::with_capacity(n);
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        out.push(((z + y + x) % 2) as f32);
                    }
                }
            }
            out
        }
        SyntheticKind::GaussianBlobs => gaussian_blobs(&mut rng, dims, [nz, ny, nx]),
        SyntheticKind::BandLimitedNoise => band_limited_noise(&mut rng, dims, [nz, ny, nx]),
    };
    Volume::new(dims.to_vec(), data)
}

// Blobs have compact support (cut at 3 sigma) so the background stays exactly zero.
fn gaussian_blobs(rng: &mut ChaCha8Rng, dims: &[usize], [nz, ny, nx]: [usize; 3]) -> Vec<f32> {
    let is3d = dims.len() == 3;
    let min_axis = dims.iter().copied().min().unwrap_or(1) as f64;
    let count = rng.gen_range(2..=4);
    let cutoff = (-4.5f64).exp();
    let blobs: Vec<([f64; 3], f64, f64)> = (0..count)
        .map(|_| {
            let c = [
                if is3d {
                    rng.gen_range(0.25..0.75) * nz as f64
                } else {
                    0.0
                },
                rng.gen_range(0.25..0.75) * ny as f64,
                rng.gen_range(0.25..0.75) * nx as f64,
            ];
            let sigma = rng.gen_range(0.06..0.12) * min_axis;
            let amp = rng.gen_range(0.5..1.0);
            (c, sigma.max(0.5), amp)
        })
        .collect();

    let mut out = Vec::with_capacity(nz * ny * nx);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = [
                    if is3d { z as f64 + 0.5 } else { 0.0 },
                    y as f64 + 0.5,
                    x as f64 + 0.5,
                ];
                let mut v = 0.0;
                for (c, sigma, amp) in &blobs {
                    let r2: f64 = p.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                    let g = (-r2 / (2.0 * sigma * sigma)).exp();
                    if g > cutoff {
                        v += amp * (g - cutoff) / (1.0 - cutoff);
                    }
                }
                out.push(v);
            }
        }
    }
    let peak = out.iter().copied().fold(0.0, f64::max);
    let scale = if peak > 0.0 { 1.0 / peak } else { 0.0 };
    out.into_iter().map(|v| (v * scale) as f32).collect()
}

// Sum of a few low-frequency cosines, rescaled to [0, 1].
fn band_limited_noise(rng: &mut ChaCha8Rng, dims: &[usize], [nz, ny, nx]: [usize; 3]) -> Vec<f32> {
    let is3d = dims.len() == 3;
    let waves: Vec<([f64; 3], f64, f64)> = (0..8)
        .map(|_| {
            let k = [
                if is3d {
                    rng.gen_range(0..=4) as f64
                } else {
                    0.0
                },
                rng.gen_range(0..=4) as f64,
                rng.gen_range(0..=4) as f64,
            ];
            (k, rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.2..1.0))
        })
        .collect();
    let sizes = [nz as f64, ny as f64, nx as f64];

    let mut out = Vec::with_capacity(nz * ny * nx);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = [z as f64 + 0.5, y as f64 + 0.5, x as f64 + 0.5];
                let v: f64 = waves
                    .iter()
                    .map(|(k, phase, amp)| {
                        let arg: f64 = (0..3).map(|a| k[a] * p[a] / sizes[a]).sum();
                        amp * (2.0 * PI * arg + phase).cos()
                    })
                    .sum();
                out.push(v);
            }
        }
    }
    let (lo, hi) = out
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if hi > lo {
        out.into_iter()
            .map(|v| ((v - lo) / (hi - lo)) as f32)
            .collect()
    } else {
        vec![0.0; out.len()]
    }
}
