//! Reconstruction quality metrics, all computed in data space.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::octree::SrOctree;
use crate::volume::{shape3, Volume};

fn same_shape(a: &Volume, b: &Volume) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch {
            expected: a.dims().to_vec(),
            actual: b.dims().to_vec(),
        });
    }
    Ok(())
}

pub fn mse(a: &Volume, b: &Volume) -> Result<f64> {
    same_shape(a, b)?;
    let sum: f64 = a
        .data()
        .par_iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// Peak signal-to-noise ratio in dB; `+inf` for identical inputs.
pub fn psnr(a: &Volume, b: &Volume, data_range: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * data_range.log10() - 10.0 * m.log10())
}

pub fn linf(a: &Volume, b: &Volume) -> Result<f64> {
    same_shape(a, b)?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .fold(0.0, f64::max))
}

/// Value span used as the denominator of [`mre`].
///
/// Taken from `a`'s value-range record when present, otherwise observed.
pub fn value_span(a: &Volume) -> f64 {
    match a.meta() {
        Some(m) => m.span(),
        None => {
            let (lo, hi) = a.min_max();
            hi as f64 - lo as f64
        }
    }
}

/// Maximum error relative to the value span of `a` (the reference).
pub fn mre(a: &Volume, b: &Volume) -> Result<f64> {
    let e = linf(a, b)?;
    let span = value_span(a);
    Ok(if e == 0.0 { 0.0 } else { e / span })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    /// Window size per axis.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn with_range(data_range: f64) -> Self {
        SsimParams {
            data_range,
            ..SsimParams::default()
        }
    }

    /// Normalized 1D Gaussian taps.
    pub fn kernel(&self) -> Vec<f64> {
        let c = (self.window as f64 - 1.0) / 2.0;
        let taps: Vec<f64> = (0..self.window)
            .map(|i| {
                let x = i as f64 - c;
                (-(x * x) / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let s: f64 = taps.iter().sum();
        taps.into_iter().map(|t| t / s).collect()
    }
}

// Valid-mode separable filtering along `axis` of a padded 3D array.
fn filter_axis(src: &[f64], shape: [usize; 3], axis: usize, k: &[f64]) -> (Vec<f64>, [usize; 3]) {
    let n = shape[axis];
    let m = n + 1 - k.len();
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out_shape = shape;
    out_shape[axis] = m;
    let mut out = vec![0f64; outer * m * inner];
    out.par_chunks_mut(m * inner)
        .enumerate()
        .for_each(|(o, chunk)| {
            let s = &src[o * n * inner..(o + 1) * n * inner];
            for j in 0..m {
                let dst = &mut chunk[j * inner..(j + 1) * inner];
                for (t, &w) in k.iter().enumerate() {
                    let row = &s[(j + t) * inner..(j + t + 1) * inner];
                    for i in 0..inner {
                        dst[i] += w * row[i];
                    }
                }
            }
        });
    (out, out_shape)
}

fn gaussian_filter(src: Vec<f64>, dims: &[usize], k: &[f64]) -> Vec<f64> {
    let mut shape = shape3(dims);
    let mut data = src;
    let first = if dims.len() == 3 { 0 } else { 1 };
    for axis in first..3 {
        let (d, s) = filter_axis(&data, shape, axis, k);
        data = d;
        shape = s;
    }
    data
}

/// Mean structural similarity over all full windows (Gaussian, isotropic).
pub fn ssim(a: &Volume, b: &Volume, params: &SsimParams) -> Result<f64> {
    same_shape(a, b)?;
    if a.dims().iter().any(|&d| d < params.window) {
        return Err(Error::TooSmallForWindow {
            dims: a.dims().to_vec(),
            window: params.window,
        });
    }
    let k = params.kernel();
    let x: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();

    let dims = a.dims();
    let mu_x = gaussian_filter(x, dims, &k);
    let mu_y = gaussian_filter(y, dims, &k);
    let s_xx = gaussian_filter(xx, dims, &k);
    let s_yy = gaussian_filter(yy, dims, &k);
    let s_xy = gaussian_filter(xy, dims, &k);

    let c1 = (params.k1 * params.data_range).powi(2);
    let c2 = (params.k2 * params.data_range).powi(2);
    let total: f64 = (0..mu_x.len())
        .into_par_iter()
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = s_xx[i] - mx * mx;
            let vy = s_yy[i] - my * my;
            let cov = s_xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mu_x.len() as f64)
}

/// Seam score of `v` with respect to the leaf boundaries of `t`.
///
/// Mean |difference| across neighbouring voxel pairs that straddle a leaf face,
/// minus the same mean over an evenly spaced sample of the same number of
/// pairs that do not; clamped at zero.
pub fn seam_metric(v: &Volume, t: &SrOctree) -> Result<f64> {
    if v.dims() != t.full_dims() {
        return Err(Error::ShapeMismatch {
            expected: t.full_dims().to_vec(),
            actual: v.dims().to_vec(),
        });
    }
    let dims = v.dims();
    let [nz, ny, nx] = shape3(dims);
    let mut owner = vec![0u32; v.len()];
    for (i, leaf) in t.leaves().iter().enumerate() {
        let [oz, oy, ox] = crate::volume::origin3(&leaf.region.origin);
        let [ez, ey, ex] = shape3(&leaf.region.extent);
        for z in oz..oz + ez {
            for y in oy..oy + ey {
                let row = (z * ny + y) * nx;
                owner[row + ox..row + ox + ex].fill(i as u32);
            }
        }
    }

    let data = v.data();
    let strides = [ny * nx, nx, 1];
    let lens = [nz, ny, nx];
    let mut boundary_sum = 0f64;
    let mut boundary_n = 0usize;
    let mut interior = Vec::new();
    for axis in 0..3 {
        if lens[axis] < 2 {
            continue;
        }
        let s = strides[axis];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let pos = [z, y, x];
                    if pos[axis] + 1 >= lens[axis] {
                        continue;
                    }
                    let i = (z * ny + y) * nx + x;
                    let diff = (data[i] as f64 - data[i + s] as f64).abs();
                    if owner[i] != owner[i + s] {
                        boundary_sum += diff;
                        boundary_n += 1;
                    } else {
                        interior.push(diff);
                    }
                }
            }
        }
    }
    if boundary_n == 0 {
        return Ok(0.0);
    }
    let boundary_mean = boundary_sum / boundary_n as f64;
    let interior_mean = if interior.is_empty() {
        0.0
    } else {
        let take = boundary_n.min(interior.len());
        let sum: f64 = (0..take).map(|k| interior[k * interior.len() / take]).sum();
        sum / take as f64
    };
    Ok((boundary_mean - interior_mean).max(0.0))
}

fn ser_f64_inf<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    } else {
        s.serialize_f64(*v)
    }
}

fn de_f64_inf<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Num {
        F(f64),
        S(String),
    }
    match Num::deserialize(d)? {
        Num::F(f) => Ok(f),
        Num::S(s) if s == "inf" => Ok(f64::INFINITY),
        Num::S(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
        Num::S(s) => Err(serde::de::Error::custom(format!("bad number `{s}`"))),
    }
}

/// Metrics for a reconstruction `b` against a reference `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(serialize_with = "ser_f64_inf", deserialize_with = "de_f64_inf")]
    pub psnr_db: f64,
    pub ssim: f64,
    pub linf: f64,
    pub mre: f64,
    /// Only available when the leaf layout is known.
    pub seam: Option<f64>,
}

impl MetricReport {
    pub fn compute(
        a: &Volume,
        b: &Volume,
        data_range: f64,
        tree: Option<&SrOctree>,
    ) -> Result<Self> {
        Ok(MetricReport {
            psnr_db: psnr(a, b, data_range)?,
            ssim: ssim(a, b, &SsimParams::with_range(data_range))?,
            linf: linf(a, b)?,
            mre: mre(a, b)?,
            seam: tree.map(|t| seam_metric(b, t)).transpose()?,
        })
    }

    /// `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "psnr_db={}", self.psnr_db);
        let _ = writeln!(s, "ssim={}", self.ssim);
        let _ = writeln!(s, "linf={}", self.linf);
        let _ = writeln!(s, "mre={}", self.mre);
        if let Some(seam) = self.seam {
            let _ = writeln!(s, "seam={seam}");
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::octree::{octants, BuildConfig, SrNode};
    use crate::volume::{Region, ValueRange};
    use rand::{Rng, SeedableRng};

    fn noise(dims: &[usize], seed: u64) -> Volume {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = dims.iter().product();
        Volume::new(dims.to_vec(), (0..n).map(|_| rng.gen()).collect()).unwrap()
    }

    // Quadtree over 8x8 with four 4x4 level-0 leaves.
    fn quad_tree(v: &Volume) -> SrOctree {
        let region = Region::full(v.dims());
        let kids = octants(&region)
            .into_iter()
            .map(|r| {
                let d = v.read_region(&r).unwrap();
                SrNode::leaf(r, 0, d)
            })
            .collect();
        SrOctree::from_parts(
            SrNode::branch(region, 0, kids),
            v.dims().to_vec(),
            BuildConfig::default(),
        )
    }

    #[test]
    fn psnr_examples() {
        let a = noise(&[4, 4], 1);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let z = Volume::zeros(vec![4, 4]).unwrap();
        let b = Volume::filled(vec![4, 4], 0.1).unwrap();
        // 0.1f32 squared is not exactly 0.01.
        assert!((psnr(&z, &b, 1.0).unwrap() - 20.0).abs() < 1e-5);

        let c = 3.5f32;
        let b2 = noise(&[4, 4], 2);
        let sa = Volume::new(vec![4, 4], a.data().iter().map(|x| x * c).collect()).unwrap();
        let sb = Volume::new(vec![4, 4], b2.data().iter().map(|x| x * c).collect()).unwrap();
        let p1 = psnr(&a, &b2, 1.0).unwrap();
        let p2 = psnr(&sa, &sb, c as f64).unwrap();
        assert!((p1 - p2).abs() < 1e-4, "{p1} vs {p2}");
        assert!(psnr(&a, &z.read_region(&Region::full(&[4, 4])).unwrap(), 1.0).is_ok());
        assert!(matches!(
            psnr(&a, &Volume::zeros(vec![4, 5]).unwrap(), 1.0),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn psnr_falls_with_noise() {
        let a = noise(&[16, 16], 3);
        let mut last = f64::INFINITY;
        for amp in [0.01f32, 0.02, 0.05, 0.1, 0.2] {
            let n = noise(&[16, 16], 4);
            let b = Volume::new(
                vec![16, 16],
                a.data()
                    .iter()
                    .zip(n.data())
                    .map(|(x, e)| x + amp * (e - 0.5))
                    .collect(),
            )
            .unwrap();
            let p = psnr(&a, &b, 1.0).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_identity_and_anticorrelation() {
        let a = noise(&[16, 16, 16], 5);
        assert!((ssim(&a, &a, &SsimParams::default()).unwrap() - 1.0).abs() < 1e-12);
        let neg =
            Volume::new(vec![16, 16, 16], a.data().iter().map(|x| 1.0 - x).collect()).unwrap();
        assert!(ssim(&a, &neg, &SsimParams::default()).unwrap() < 0.0);
    }

    #[test]
    fn ssim_constants_closed_form() {
        let (ma, d) = (0.3f64, 0.2f64);
        let a = Volume::filled(vec![12, 12], ma as f32).unwrap();
        let b = Volume::filled(vec![12, 12], (ma + d) as f32).unwrap();
        let p = SsimParams::default();
        let (mb, ma) = ((ma + d) as f32 as f64, ma as f32 as f64);
        let c1 = (p.k1 * p.data_range).powi(2);
        let want = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        let got = ssim(&a, &b, &p).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        assert!(matches!(
            ssim(
                &Volume::zeros(vec![10, 12]).unwrap(),
                &Volume::zeros(vec![10, 12]).unwrap(),
                &p
            ),
            Err(Error::TooSmallForWindow { .. })
        ));
    }

    #[test]
    fn linf_mre_examples() {
        let a = Volume::new(vec![1, 2], vec![0.0, 1.0]).unwrap();
        let b = Volume::new(vec![1, 2], vec![0.0, 0.5]).unwrap();
        assert_eq!(linf(&a, &a).unwrap(), 0.0);
        assert_eq!(mre(&a, &a).unwrap(), 0.0);
        assert_eq!(linf(&a, &b).unwrap(), 0.5);
        assert_eq!(mre(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn mre_uses_recorded_range() {
        let a = noise(&[8, 8], 6);
        let b = noise(&[8, 8], 7);
        let with = |v: &Volume, s: f32, c: f32, range: ValueRange| {
            Volume::new(vec![8, 8], v.data().iter().map(|x| s * x + c).collect())
                .unwrap()
                .with_meta(Some(range))
        };
        let r0 = ValueRange {
            min: -1.0,
            max: 3.0,
            mode: None,
        };
        let base = mre(&a.clone().with_meta(Some(r0)), &b).unwrap();
        let (s, c) = (4.0f32, -2.0f32);
        let r1 = ValueRange {
            min: s as f64 * r0.min + c as f64,
            max: s as f64 * r0.max + c as f64,
            mode: None,
        };
        let scaled = mre(&with(&a, s, c, r1), &with(&b, s, c, r1)).unwrap();
        assert!((base - scaled).abs() < 1e-6, "{base} vs {scaled}");
    }

    #[test]
    fn seam_examples() {
        // Ramp: boundaries are not special.
        let mut data = Vec::new();
        for y in 0..8 {
            for x in 0..8 {
                data.push((x + 2 * y) as f32 / 24.0);
            }
        }
        let ramp = Volume::new(vec![8, 8], data).unwrap();
        assert!(seam_metric(&ramp, &quad_tree(&ramp)).unwrap() < 1e-6);

        // +0.5 step exactly on the x = 4 face. Boundary pairs: 8 across x
        // (diff 0.5) and 8 across y (diff 0); interior pairs all 0.
        let step: Vec<f32> = (0..64)
            .map(|i| if i % 8 >= 4 { 0.5 } else { 0.0 })
            .collect();
        let step = Volume::new(vec![8, 8], step).unwrap();
        assert!((seam_metric(&step, &quad_tree(&step)).unwrap() - 0.25).abs() < 1e-12);

        let single = SrOctree::from_parts(
            SrNode::leaf(Region::full(&[8, 8]), 0, step.clone()),
            vec![8, 8],
            BuildConfig::default(),
        );
        assert_eq!(seam_metric(&step, &single).unwrap(), 0.0);
    }

    #[test]
    fn report_serialization() {
        let a = noise(&[12, 12], 8);
        let r = MetricReport::compute(&a, &a, 1.0, None).unwrap();
        assert!(r.psnr_db.is_infinite());
        assert!(r.to_kv().starts_with("psnr_db=inf\nssim=1\n"));
        let back: MetricReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
