//! Dense 2D/3D scalar fields stored row-major (last axis fastest).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a volume's values were mapped into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Linear,
    LogThenLinear,
}

impl Normalization {
    pub fn as_str(self) -> &'static str {
        match self {
            Normalization::Linear => "linear",
            Normalization::LogThenLinear => "log_then_linear",
        }
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Normalization::Linear),
            "log_then_linear" | "log" => Ok(Normalization::LogThenLinear),
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }
}

/// Value-range record attached to a volume.
///
/// With `mode == None` the range is expressed in the volume's own units.
/// With `mode == Some(_)` the volume holds normalized values and `min`/`max`
/// are the original bounds that map to 0 and 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub min: f64,
    pub max: f64,
    pub mode: Option<Normalization>,
}

impl ValueRange {
    /// Span of the data in the volume's current units.
    pub fn span(&self) -> f64 {
        match self.mode {
            Some(_) => 1.0,
            None => self.max - self.min,
        }
    }
}

/// Axis-aligned block of voxels: `origin` and `extent` per axis.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Region {
    pub origin: Vec<usize>,
    pub extent: Vec<usize>,
}

impl Region {
    pub fn new(origin: Vec<usize>, extent: Vec<usize>) -> Result<Self> {
        if origin.len() != extent.len() {
            return Err(Error::InvalidDims(format!(
                "origin has {} axes but extent has {}",
                origin.len(),
                extent.len()
            )));
        }
        if extent.contains(&0) {
            return Err(Error::EmptyVolume);
        }
        Ok(Region { origin, extent })
    }

    pub fn full(dims: &[usize]) -> Self {
        Region {
            origin: vec![0; dims.len()],
            extent: dims.to_vec(),
        }
    }

    pub fn ndim(&self) -> usize {
        self.extent.len()
    }

    pub fn voxel_count(&self) -> usize {
        self.extent.iter().product()
    }

    pub fn end(&self, axis: usize) -> usize {
        self.origin[axis] + self.extent[axis]
    }

    pub fn check_within(&self, dims: &[usize]) -> Result<()> {
        if self.ndim() != dims.len() {
            return Err(Error::OutOfBounds(format!(
                "region has {} axes, volume has {}",
                self.ndim(),
                dims.len()
            )));
        }
        for (axis, &d) in dims.iter().enumerate() {
            if self.extent[axis] == 0 || self.end(axis) > d {
                return Err(Error::OutOfBounds(format!(
                    "axis {axis}: [{}, {}) exceeds {d}",
                    self.origin[axis],
                    self.end(axis)
                )));
            }
        }
        Ok(())
    }

    pub fn divisible_by(&self, factor: usize) -> bool {
        self.origin.iter().all(|o| o % factor == 0) && self.extent.iter().all(|e| e % factor == 0)
    }

    /// Coordinates of this region on a grid coarser by `factor`.
    pub fn scaled_down(&self, factor: usize) -> Result<Region> {
        for (axis, (&o, &e)) in self.origin.iter().zip(&self.extent).enumerate() {
            if o % factor != 0 || e % factor != 0 {
                return Err(Error::IndivisibleDimension {
                    axis,
                    len: if e % factor != 0 { e } else { o },
                    factor,
                });
            }
        }
        Ok(Region {
            origin: self.origin.iter().map(|o| o / factor).collect(),
            extent: self.extent.iter().map(|e| e / factor).collect(),
        })
    }

    /// Offset of `self` relative to `outer`'s origin.
    pub fn relative_to(&self, outer: &Region) -> Region {
        Region {
            origin: self
                .origin
                .iter()
                .zip(&outer.origin)
                .map(|(a, b)| a - b)
                .collect(),
            extent: self.extent.clone(),
        }
    }

    pub fn contains(&self, other: &Region) -> bool {
        (0..self.ndim()).all(|a| other.origin[a] >= self.origin[a] && other.end(a) <= self.end(a))
    }
}

pub(crate) fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() != 2 && dims.len() != 3 {
        return Err(Error::InvalidDims(format!(
            "expected 2 or 3 axes, got {}",
            dims.len()
        )));
    }
    if dims.contains(&0) {
        return Err(Error::EmptyVolume);
    }
    Ok(())
}

/// Pads 2D dims to 3D with a leading unit axis.
pub(crate) fn shape3(dims: &[usize]) -> [usize; 3] {
    match *dims {
        [y, x] => [1, y, x],
        [z, y, x] => [z, y, x],
        _ => unreachable!("volumes are 2D or 3D"),
    }
}

/// Like [`shape3`] but pads with 0, for coordinates rather than extents.
pub(crate) fn origin3(origin: &[usize]) -> [usize; 3] {
    match *origin {
        [y, x] => [0, y, x],
        [z, y, x] => [z, y, x],
        _ => unreachable!("volumes are 2D or 3D"),
    }
}

/// Dense scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Vec<usize>,
    data: Vec<f32>,
    meta: Option<ValueRange>,
}

impl Volume {
    /// Builds a volume, validating the shape and that every value is finite.
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        check_dims(&dims)?;
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        Ok(Volume {
            dims,
            data,
            meta: None,
        })
    }

    /// Builds a volume without checking values for finiteness.
    ///
    /// Shape is still validated. Intended for upscaler implementations whose
    /// output is checked downstream.
    pub fn new_unchecked(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        check_dims(&dims)?;
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Volume {
            dims,
            data,
            meta: None,
        })
    }

    pub fn filled(dims: Vec<usize>, value: f32) -> Result<Self> {
        check_dims(&dims)?;
        let n = dims.iter().product();
        Volume::new(dims, vec![value; n])
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        Volume::filled(dims, 0.0)
    }

    /// Internal constructor for kernels that already uphold the invariants.
    pub(crate) fn from_parts(dims: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Volume {
            dims,
            data,
            meta: None,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn meta(&self) -> Option<&ValueRange> {
        self.meta.as_ref()
    }

    pub fn set_meta(&mut self, meta: Option<ValueRange>) {
        self.meta = meta;
    }

    pub fn with_meta(mut self, meta: Option<ValueRange>) -> Self {
        self.meta = meta;
        self
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.dims)
            .fold(0, |acc, (&i, &d)| acc * d + i)
    }

    pub fn get(&self, idx: &[usize]) -> f32 {
        self.data[self.flat_index(idx)]
    }

    pub(crate) fn shape3(&self) -> [usize; 3] {
        shape3(&self.dims)
    }

    /// Observed `(min, max)` of the data.
    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Dense copy of the sub-block `r`.
    pub fn read_region(&self, r: &Region) -> Result<Volume> {
        r.check_within(&self.dims)?;
        let [_, sy, sx] = self.shape3();
        let [oz, oy, ox] = origin3(&r.origin);
        let [ez, ey, ex] = shape3(&r.extent);
        let mut out = Vec::with_capacity(r.voxel_count());
        for z in oz..oz + ez {
            for y in oy..oy + ey {
                let start = (z * sy + y) * sx + ox;
                out.extend_from_slice(&self.data[start..start + ex]);
            }
        }
        Ok(Volume::from_parts(r.extent.clone(), out))
    }

    /// Overwrites the voxels of `r` with `patch`; everything else is untouched.
    pub fn write_region(&mut self, r: &Region, patch: &Volume) -> Result<()> {
        if patch.dims != r.extent {
            return Err(Error::ShapeMismatch {
                expected: r.extent.clone(),
                actual: patch.dims.clone(),
            });
        }
        r.check_within(&self.dims)?;
        let [_, sy, sx] = self.shape3();
        let [oz, oy, ox] = origin3(&r.origin);
        let [ez, ey, ex] = shape3(&r.extent);
        let mut src = patch.data.chunks_exact(ex);
        for z in oz..oz + ez {
            for y in oy..oy + ey {
                let start = (z * sy + y) * sx + ox;
                let row = src.next().expect("patch rows match extent");
                self.data[start..start + ex].copy_from_slice(row);
            }
        }
        Ok(())
    }
}

/// Maps values into `[0, 1]`, recording the original range in the meta.
///
/// A constant volume maps to all zeros.
pub fn normalize(v: &Volume, mode: Normalization) -> Result<Volume> {
    let transformed: Vec<f64> = match mode {
        Normalization::Linear => v.data.iter().map(|&x| x as f64).collect(),
        Normalization::LogThenLinear => {
            if v.data.iter().any(|&x| x <= 0.0) {
                return Err(Error::NonPositiveForLog);
            }
            v.data.iter().map(|&x| (x as f64).log10()).collect()
        }
    };
    let (lo, hi) = transformed
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| {
            (lo.min(t), hi.max(t))
        });
    let (orig_lo, orig_hi) = v.min_max();
    let span = hi - lo;
    let data = if span > 0.0 {
        transformed
            .iter()
            .map(|&t| ((t - lo) / span) as f32)
            .collect()
    } else {
        vec![0.0; transformed.len()]
    };
    Ok(
        Volume::from_parts(v.dims.clone(), data).with_meta(Some(ValueRange {
            min: orig_lo as f64,
            max: orig_hi as f64,
            mode: Some(mode),
        })),
    )
}

/// Inverts [`normalize`] using the recorded meta.
pub fn denormalize(v: &Volume) -> Result<Volume> {
    let meta = v.meta.filter(|m| m.mode.is_some()).ok_or_else(|| {
        Error::InvariantViolation("volume carries no normalization record".into())
    })?;
    let data: Vec<f32> = match meta.mode {
        Some(Normalization::Linear) => v
            .data
            .iter()
            .map(|&y| (meta.min + y as f64 * (meta.max - meta.min)) as f32)
            .collect(),
        Some(Normalization::LogThenLinear) => {
            let (lo, hi) = (meta.min.log10(), meta.max.log10());
            v.data
                .iter()
                .map(|&y| 10f64.powf(lo + y as f64 * (hi - lo)) as f32)
                .collect()
        }
        None => unreachable!(),
    };
    Volume::new(v.dims.clone(), data)
}
