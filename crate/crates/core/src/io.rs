//! On-disk formats.
//!
//! Volumes: a text header (`.hvol`) next to a raw little-endian `f32`
//! payload (`.raw`). Header lines are `key = value`:
//!
//! ```text
//! hvol = 1
//! dims = 64 64 64
//! element_type = f32
//! axis_order = row-major, last axis fastest
//! payload = field.raw
//! value_range = 0.5 12.25        (optional)
//! normalization = linear         (optional, requires value_range)
//! ```
//!
//! Trees (`.sroc`), all integers little-endian:
//!
//! ```text
//! "SROC" | version u16 = 1 | ndim u8 | full_dims u64 x ndim
//! epsilon f64 | min_chunk u32 | min_level u32 | max_level u32 | downscaler u8
//! nodes in pre-order:
//!   flags u8 (bit 0 = leaf) | origin u64 x ndim | extent u64 x ndim | level u32
//!   leaf: product(extent / 2^level) x f32
//!   branch: followed by its 2^ndim children
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::octree::{BuildConfig, NodeContent, SrNode, SrOctree};
use crate::resample::Downscaler;
use crate::volume::{Normalization, Region, ValueRange, Volume};

pub const TREE_MAGIC: &[u8; 4] = b"SROC";
pub const TREE_VERSION: u16 = 1;
const AXIS_ORDER: &str = "row-major, last axis fastest";
const LEAF_FLAG: u8 = 1;

/// Path of the payload file that accompanies `header`.
pub fn payload_path(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

pub fn encode_header(v: &Volume, payload_name: &str) -> String {
    let dims: Vec<String> = v.dims().iter().map(usize::to_string).collect();
    let mut s = format!(
        "hvol = 1\ndims = {}\nelement_type = f32\naxis_order = {AXIS_ORDER}\npayload = {payload_name}\n",
        dims.join(" ")
    );
    if let Some(m) = v.meta() {
        s.push_str(&format!("value_range = {:?} {:?}\n", m.min, m.max));
        if let Some(mode) = m.mode {
            s.push_str(&format!("normalization = {mode}\n"));
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeHeader {
    pub dims: Vec<usize>,
    pub payload: String,
    pub meta: Option<ValueRange>,
}

pub fn parse_header(text: &str) -> Result<VolumeHeader> {
    let corrupt = |m: String| Error::CorruptHeader(m);
    let mut dims = None;
    let mut payload = None;
    let mut range = None;
    let mut mode = None;
    let mut seen_magic = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| corrupt(format!("line {}: expected `key = value`", lineno + 1)))?;
        match key {
            "hvol" => {
                if value != "1" {
                    return Err(corrupt(format!("unsupported hvol version `{value}`")));
                }
                seen_magic = true;
            }
            "dims" => {
                let d = value
                    .split_whitespace()
                    .map(|t| {
                        t.parse::<usize>()
                            .map_err(|_| corrupt(format!("bad dim `{t}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                dims = Some(d);
            }
            "element_type" => {
                if value != "f32" {
                    return Err(Error::UnsupportedElementType(value.to_string()));
                }
            }
            "axis_order" => {
                if value != AXIS_ORDER {
                    return Err(corrupt(format!("unsupported axis order `{value}`")));
                }
            }
            "payload" => payload = Some(value.to_string()),
            "value_range" => {
                let parts: Vec<f64> = value
                    .split_whitespace()
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|_| corrupt(format!("bad range value `{t}`")))
                    })
                    .collect::<Result<_>>()?;
                match parts[..] {
                    [lo, hi] => range = Some((lo, hi)),
                    _ => return Err(corrupt("value_range needs two numbers".into())),
                }
            }
            "normalization" => {
                mode = Some(
                    value
                        .parse::<Normalization>()
                        .map_err(|_| corrupt(format!("bad normalization `{value}`")))?,
                )
            }
            other => return Err(corrupt(format!("unknown key `{other}`"))),
        }
    }
    if !seen_magic {
        return Err(corrupt("missing `hvol = 1`".into()));
    }
    let dims = dims.ok_or_else(|| corrupt("missing dims".into()))?;
    if dims.len() != 2 && dims.len() != 3 || dims.contains(&0) {
        return Err(corrupt(format!("invalid dims {dims:?}")));
    }
    let payload = payload.ok_or_else(|| corrupt("missing payload".into()))?;
    let meta = match (range, mode) {
        (Some((min, max)), mode) => Some(ValueRange { min, max, mode }),
        (None, Some(_)) => return Err(corrupt("normalization without value_range".into())),
        (None, None) => None,
    };
    Ok(VolumeHeader {
        dims,
        payload,
        meta,
    })
}

pub fn encode_payload(v: &Volume) -> Vec<u8> {
    v.data().iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn decode_payload(header: &VolumeHeader, bytes: &[u8]) -> Result<Volume> {
    let n: usize = header.dims.iter().product();
    if bytes.len() != 4 * n {
        return Err(Error::HeaderPayloadMismatch(format!(
            "dims {:?} need {} bytes, payload has {}",
            header.dims,
            4 * n,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Volume::new(header.dims.clone(), data)?.with_meta(header.meta))
}

/// Writes `path` (header) and its sibling `.raw` payload.
pub fn write_volume(path: &Path, v: &Volume) -> Result<()> {
    let raw = payload_path(path);
    let name = raw
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::CorruptHeader(format!("unusable payload path {}", raw.display())))?;
    fs::write(&raw, encode_payload(v))?;
    fs::write(path, encode_header(v, name))?;
    Ok(())
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let header = parse_header(&fs::read_to_string(path)?)?;
    let raw = match path.parent() {
        Some(dir) => dir.join(&header.payload),
        None => PathBuf::from(&header.payload),
    };
    decode_payload(&header, &fs::read(raw)?)
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

fn encode_node(w: &mut Writer, n: &SrNode) {
    w.u8(if n.is_leaf() { LEAF_FLAG } else { 0 });
    n.region.origin.iter().for_each(|&o| w.u64(o as u64));
    n.region.extent.iter().for_each(|&e| w.u64(e as u64));
    w.u32(n.level);
    match &n.content {
        NodeContent::Leaf(data) => data
            .data()
            .iter()
            .for_each(|x| w.0.extend_from_slice(&x.to_le_bytes())),
        NodeContent::Branch(children) => children.iter().for_each(|c| encode_node(w, c)),
    }
}

pub fn encode_tree(t: &SrOctree) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(TREE_MAGIC);
    w.u16(TREE_VERSION);
    w.u8(t.ndim() as u8);
    t.full_dims().iter().for_each(|&d| w.u64(d as u64));
    let c = t.config();
    w.f64(c.epsilon);
    w.u32(c.min_chunk as u32);
    w.u32(c.min_level);
    w.u32(c.max_level);
    w.u8(c.downscaler.code());
    encode_node(&mut w, t.root());
    w.0
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::InvariantViolation(format!(
                "truncated: need {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .map_err(|_| Error::InvariantViolation(format!("value {v} overflows usize")))
    }
}

fn decode_node(r: &mut Reader, ndim: usize, depth: usize) -> Result<SrNode> {
    if depth > 64 {
        return Err(Error::InvariantViolation(
            "tree deeper than 64 levels".into(),
        ));
    }
    let flags = r.u8()?;
    if flags & !LEAF_FLAG != 0 {
        return Err(Error::InvariantViolation(format!(
            "unknown node flags {flags:#04x}"
        )));
    }
    let origin = (0..ndim).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let extent = (0..ndim).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let level = r.u32()?;
    let region = Region { origin, extent };
    if level >= usize::BITS - 1 || region.extent.contains(&0) || !region.divisible_by(1 << level) {
        return Err(Error::InvariantViolation(format!(
            "level-divisibility: region {region:?} at level {level}"
        )));
    }
    if flags & LEAF_FLAG != 0 {
        let f = 1usize << level;
        let dims: Vec<usize> = region.extent.iter().map(|e| e / f).collect();
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::InvariantViolation("leaf payload size overflows".into()))?;
        let bytes = r.take(n)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let data = Volume::new(dims, data)
            .map_err(|e| Error::InvariantViolation(format!("leaf {region:?}: {e}")))?;
        Ok(SrNode::leaf(region, level, data))
    } else {
        let children = (0..1usize << ndim)
            .map(|_| decode_node(r, ndim, depth + 1))
            .collect::<Result<Vec<_>>>()?;
        Ok(SrNode::branch(region, level, children))
    }
}

/// Decodes and fully validates a tree.
pub fn decode_tree(bytes: &[u8]) -> Result<SrOctree> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if bytes.len() < 4 || &bytes[..4] != TREE_MAGIC {
        return Err(Error::BadMagic);
    }
    r.take(4)?;
    let version = r.u16()?;
    if version != TREE_VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let ndim = r.u8()? as usize;
    if ndim != 2 && ndim != 3 {
        return Err(Error::InvariantViolation(format!("dims: ndim {ndim}")));
    }
    let full_dims = (0..ndim).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let epsilon = r.f64()?;
    let min_chunk = r.u32()? as usize;
    let min_level = r.u32()?;
    let max_level = r.u32()?;
    let code = r.u8()?;
    let downscaler = Downscaler::from_code(code).ok_or_else(|| {
        Error::InvariantViolation(format!("build-config: downscaler code {code}"))
    })?;
    let config = BuildConfig {
        epsilon,
        min_chunk,
        min_level,
        max_level,
        downscaler,
    };
    let root = decode_node(&mut r, ndim, 0)?;
    if r.pos != bytes.len() {
        return Err(Error::InvariantViolation(format!(
            "{} trailing bytes after the last node",
            bytes.len() - r.pos
        )));
    }
    SrOctree::from_root(root, full_dims, config)
}

pub fn write_tree(path: &Path, t: &SrOctree) -> Result<()> {
    fs::write(path, encode_tree(t))?;
    Ok(())
}

pub fn read_tree(path: &Path) -> Result<SrOctree> {
    decode_tree(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::octree::{build_sr_octree, octants};
    use crate::synthetic::{gen_synthetic, SyntheticKind};

    #[test]
    fn volume_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.hvol");
        let v = gen_synthetic(SyntheticKind::BandLimitedNoise, &[8, 8, 8], 1)
            .unwrap()
            .with_meta(Some(ValueRange {
                min: 0.1,
                max: 1e7 / 3.0,
                mode: Some(Normalization::LogThenLinear),
            }));
        write_volume(&p, &v).unwrap();
        let back = read_volume(&p).unwrap();
        assert_eq!(back, v);
        assert_eq!(fs::read(payload_path(&p)).unwrap().len(), 4 * 512);
    }

    #[test]
    fn truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.hvol");
        write_volume(&p, &Volume::zeros(vec![4, 4]).unwrap()).unwrap();
        let raw = payload_path(&p);
        let mut bytes = fs::read(&raw).unwrap();
        bytes.truncate(60);
        fs::write(&raw, bytes).unwrap();
        assert!(matches!(
            read_volume(&p),
            Err(Error::HeaderPayloadMismatch(_))
        ));
    }

    #[test]
    fn header_errors() {
        let good = encode_header(&Volume::zeros(vec![2, 2]).unwrap(), "x.raw");
        assert!(parse_header(&good).is_ok());
        let f64h = good.replace("element_type = f32", "element_type = f64");
        assert!(matches!(parse_header(&f64h), Err(Error::UnsupportedElementType(t)) if t == "f64"));
        assert!(matches!(
            parse_header("dims = 2 2\n"),
            Err(Error::CorruptHeader(_))
        ));
        let extra = format!("{good}colour = blue\n");
        assert!(matches!(parse_header(&extra), Err(Error::CorruptHeader(_))));
    }

    #[test]
    fn tree_round_trip() {
        let v = gen_synthetic(SyntheticKind::GaussianBlobs, &[32, 32], 5).unwrap();
        let t = build_sr_octree(
            &v,
            &BuildConfig {
                epsilon: 0.03,
                ..BuildConfig::default()
            },
        )
        .unwrap();
        let bytes = encode_tree(&t);
        let back = decode_tree(&bytes).unwrap();
        assert_eq!(back, t);
        assert_eq!(encode_tree(&back), bytes);
    }

    #[test]
    fn tree_magic_and_version() {
        let t =
            build_sr_octree(&Volume::zeros(vec![8, 8]).unwrap(), &BuildConfig::default()).unwrap();
        let mut bytes = encode_tree(&t);
        bytes[0] = b'X';
        assert!(matches!(decode_tree(&bytes), Err(Error::BadMagic)));
        let mut bytes = encode_tree(&t);
        bytes[4] = 2;
        assert!(matches!(
            decode_tree(&bytes),
            Err(Error::VersionUnsupported(2))
        ));
        let mut bytes = encode_tree(&t);
        bytes.push(0);
        assert!(matches!(
            decode_tree(&bytes),
            Err(Error::InvariantViolation(_))
        ));
    }

    #[test]
    fn overlapping_leaves_rejected() {
        // Hand-built file: 4x4 root split into four leaves where the second
        // leaf claims the first leaf's region.
        let region = Region::full(&[4, 4]);
        let mut regions = octants(&region);
        regions[1] = regions[0].clone();
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(TREE_MAGIC);
        w.u16(1);
        w.u8(2);
        w.u64(4);
        w.u64(4);
        w.f64(0.0);
        w.u32(2);
        w.u32(0);
        w.u32(3);
        w.u8(0);
        w.u8(0);
        [0u64, 0, 4, 4].iter().for_each(|&x| w.u64(x));
        w.u32(0);
        for r in &regions {
            w.u8(LEAF_FLAG);
            r.origin
                .iter()
                .chain(&r.extent)
                .for_each(|&x| w.u64(x as u64));
            w.u32(0);
            for _ in 0..4 {
                w.0.extend_from_slice(&0.5f32.to_le_bytes());
            }
        }
        let err = decode_tree(&w.0).unwrap_err();
        assert!(
            matches!(err, Error::InvariantViolation(ref m) if m.contains("overlaps")),
            "{err}"
        );
    }
}
