//! 2x resampling kernels and the per-level upscaler hierarchy.
//!
//! Samples sit at cell centers: fine voxel `j` along an axis maps to coarse
//! coordinate `(j + 0.5) / 2 - 0.5`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{shape3, Volume};

/// 2x downscaling rule. Both satisfy `down(V, 2S) == down(down(V, S), S)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Downscaler {
    #[default]
    MeanPool,
    Subsample,
}

impl Downscaler {
    pub fn as_str(self) -> &'static str {
        match self {
            Downscaler::MeanPool => "mean",
            Downscaler::Subsample => "subsample",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Downscaler::MeanPool => 0,
            Downscaler::Subsample => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Downscaler::MeanPool),
            1 => Some(Downscaler::Subsample),
            _ => None,
        }
    }
}

impl fmt::Display for Downscaler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Downscaler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" | "mean_pool" => Ok(Downscaler::MeanPool),
            "subsample" => Ok(Downscaler::Subsample),
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }
}

// Per-axis factor in padded 3D shape: the leading axis of a 2D volume is never scaled.
fn factors(ndim: usize) -> [usize; 3] {
    if ndim == 3 {
        [2, 2, 2]
    } else {
        [1, 2, 2]
    }
}

pub fn downscale2x(v: &Volume, d: Downscaler) -> Result<Volume> {
    for (axis, &len) in v.dims().iter().enumerate() {
        if len < 2 || len % 2 != 0 {
            return Err(Error::OddDimension { axis, len });
        }
    }
    let [_, sy, sx] = v.shape3();
    let [fz, fy, fx] = factors(v.ndim());
    let out_dims: Vec<usize> = v.dims().iter().map(|d| d / 2).collect();
    let [oz, oy, ox] = shape3(&out_dims);
    let src = v.data();
    let block = (fz * fy * fx) as f64;

    let mut out = vec![0f32; oz * oy * ox];
    out.par_chunks_mut(oy * ox)
        .enumerate()
        .for_each(|(z, plane)| {
            for y in 0..oy {
                for x in 0..ox {
                    let base = ((z * fz) * sy + y * fy) * sx + x * fx;
                    plane[y * ox + x] = match d {
                        Downscaler::Subsample => src[base],
                        Downscaler::MeanPool => {
                            let mut acc = 0f64;
                            for dz in 0..fz {
                                for dy in 0..fy {
                                    let row = base + (dz * sy + dy) * sx;
                                    for dx in 0..fx {
                                        acc += src[row + dx] as f64;
                                    }
                                }
                            }
                            (acc / block) as f32
                        }
                    };
                }
            }
        });
    Ok(Volume::from_parts(out_dims, out))
}

/// Downscales by a power-of-two `factor` through repeated [`downscale2x`].
pub fn downscale_by(v: &Volume, factor: usize, d: Downscaler) -> Result<Volume> {
    if !factor.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(factor));
    }
    for (axis, &len) in v.dims().iter().enumerate() {
        if len % factor != 0 {
            return Err(Error::IndivisibleDimension { axis, len, factor });
        }
    }
    let mut out = v.clone();
    out.set_meta(None);
    for _ in 0..factor.trailing_zeros() {
        out = downscale2x(&out, d)?;
    }
    Ok(out)
}

/// Replicates each voxel into its 2^D block.
pub fn upscale2x_nearest(v: &Volume) -> Volume {
    let [_, sy, sx] = v.shape3();
    let [fz, fy, fx] = factors(v.ndim());
    let out_dims: Vec<usize> = v.dims().iter().map(|d| d * 2).collect();
    let [oz, oy, ox] = shape3(&out_dims);
    let src = v.data();
    let mut out = vec![0f32; oz * oy * ox];
    out.par_chunks_mut(oy * ox)
        .enumerate()
        .for_each(|(z, plane)| {
            for y in 0..oy {
                let row = ((z / fz) * sy + y / fy) * sx;
                for x in 0..ox {
                    plane[y * ox + x] = src[row + x / fx];
                }
            }
        });
    Volume::from_parts(out_dims, out)
}

// (low index, high index, weight toward high) for each fine sample along an axis of length n.
fn linear_taps(n: usize) -> Vec<(usize, usize, f32)> {
    (0..2 * n)
        .map(|j| {
            let k = j / 2;
            if j % 2 == 0 {
                if k == 0 {
                    (0, 0, 0.0)
                } else {
                    (k - 1, k, 0.75)
                }
            } else if k + 1 < n {
                (k, k + 1, 0.25)
            } else {
                (k, k, 0.0)
            }
        })
        .collect()
}

fn upsample_axis(src: &[f32], shape: [usize; 3], axis: usize) -> (Vec<f32>, [usize; 3]) {
    let n = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let taps = linear_taps(n);
    let mut out_shape = shape;
    out_shape[axis] = 2 * n;
    let mut out = vec![0f32; outer * 2 * n * inner];
    out.par_chunks_mut(2 * n * inner)
        .enumerate()
        .for_each(|(o, chunk)| {
            let s = &src[o * n * inner..(o + 1) * n * inner];
            for (j, &(lo, hi, t)) in taps.iter().enumerate() {
                let dst = &mut chunk[j * inner..(j + 1) * inner];
                let a = &s[lo * inner..(lo + 1) * inner];
                let b = &s[hi * inner..(hi + 1) * inner];
                for i in 0..inner {
                    dst[i] = a[i] + t * (b[i] - a[i]);
                }
            }
        });
    (out, out_shape)
}

/// Bi/trilinear 2x upscaling with cell-center alignment and clamped borders.
pub fn upscale2x_linear(v: &Volume) -> Volume {
    let mut shape = v.shape3();
    let mut data = v.data().to_vec();
    let first = if v.ndim() == 3 { 0 } else { 1 };
    for axis in first..3 {
        let (d, s) = upsample_axis(&data, shape, axis);
        data = d;
        shape = s;
    }
    Volume::from_parts(v.dims().iter().map(|d| d * 2).collect(), data)
}

/// Any procedure that doubles every axis of a volume.
pub trait Upscaler2x: Send {
    fn upscale2x(&mut self, v: &Volume) -> Result<Volume>;

    fn name(&self) -> String {
        "custom".to_string()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Nearest;

impl Upscaler2x for Nearest {
    fn upscale2x(&mut self, v: &Volume) -> Result<Volume> {
        Ok(upscale2x_nearest(v))
    }

    fn name(&self) -> String {
        "nearest".to_string()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Linear;

impl Upscaler2x for Linear {
    fn upscale2x(&mut self, v: &Volume) -> Result<Volume> {
        Ok(upscale2x_linear(v))
    }

    fn name(&self) -> String {
        "linear".to_string()
    }
}

impl<F> Upscaler2x for F
where
    F: FnMut(&Volume) -> Result<Volume> + Send,
{
    fn upscale2x(&mut self, v: &Volume) -> Result<Volume> {
        self(v)
    }
}

/// One upscaler per downscaling level plus a fallback.
///
/// The upscaler registered at level `i` produces level `i` from level `i + 1`.
pub struct UpscalerHierarchy {
    per_level: BTreeMap<u32, Box<dyn Upscaler2x>>,
    fallback: Box<dyn Upscaler2x>,
}

impl UpscalerHierarchy {
    pub fn new(fallback: Box<dyn Upscaler2x>) -> Self {
        UpscalerHierarchy {
            per_level: BTreeMap::new(),
            fallback,
        }
    }

    pub fn nearest() -> Self {
        UpscalerHierarchy::new(Box::new(Nearest))
    }

    pub fn linear() -> Self {
        UpscalerHierarchy::new(Box::new(Linear))
    }

    pub fn with_level(mut self, level: u32, up: Box<dyn Upscaler2x>) -> Self {
        self.insert(level, up);
        self
    }

    pub fn insert(&mut self, level: u32, up: Box<dyn Upscaler2x>) -> Option<Box<dyn Upscaler2x>> {
        self.per_level.insert(level, up)
    }

    /// Number of explicitly mapped levels.
    pub fn mapped_levels(&self) -> usize {
        self.per_level.len()
    }

    pub fn upscaler_mut(&mut self, level: u32) -> &mut dyn Upscaler2x {
        match self.per_level.get_mut(&level) {
            Some(up) => up.as_mut(),
            None => self.fallback.as_mut(),
        }
    }

    /// Upscales `v` (at level `produce + 1`) to level `produce`, checking the
    /// doubling contract.
    pub fn step(&mut self, produce: u32, v: &Volume) -> Result<Volume> {
        let out = self.upscaler_mut(produce).upscale2x(v)?;
        let expected: Vec<usize> = v.dims().iter().map(|d| d * 2).collect();
        if out.dims() != expected.as_slice() {
            return Err(Error::ShapeMismatch {
                expected,
                actual: out.dims().to_vec(),
            });
        }
        Ok(out)
    }
}

impl fmt::Debug for UpscalerHierarchy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let levels: BTreeMap<_, _> = self.per_level.iter().map(|(k, v)| (*k, v.name())).collect();
        f.debug_struct("UpscalerHierarchy")
            .field("per_level", &levels)
            .field("fallback", &self.fallback.name())
            .finish()
    }
}

/// Upscales from `from_level` down to `to_level`, one 2x step per level.
/// `from_level == to_level` returns the input unchanged.
pub fn apply_hierarchy(
    h: &mut UpscalerHierarchy,
    v: &Volume,
    from_level: u32,
    to_level: u32,
) -> Result<Volume> {
    if to_level > from_level {
        return Err(Error::LevelOrder {
            from: from_level,
            to: to_level,
        });
    }
    let mut cur = v.clone();
    for produce in (to_level..from_level).rev() {
        cur = h.step(produce, &cur)?;
    }
    Ok(cur)
}
