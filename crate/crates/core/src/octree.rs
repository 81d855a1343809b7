//! SR-octree: a spatial partition whose leaves hold data blocks stored at a
//! per-leaf downscaling level.
//!
//! A leaf at level `L` covering `region` stores `region.extent / 2^L` voxels.
//! Children of an internal node are its 2^D equal-sized octants (quadrants in
//! 2D), ordered lexicographically by origin with the slowest axis outermost.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resample::{downscale_by, upscale2x_nearest, Downscaler};
use crate::volume::{shape3, Region, Volume};

/// Parameters for [`build_sr_octree`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    /// L-infinity bound, in the volume's (normalized) units.
    pub epsilon: f64,
    /// A suboctant is only recursed into if every axis, at its current stored
    /// resolution, is strictly larger than this.
    pub min_chunk: usize,
    /// Level every block is downscaled to before the error-driven search.
    pub min_level: u32,
    pub max_level: u32,
    pub downscaler: Downscaler,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            epsilon: 0.0,
            min_chunk: 2,
            min_level: 0,
            max_level: 3,
            downscaler: Downscaler::MeanPool,
        }
    }
}

impl BuildConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "epsilon {} < 0",
                self.epsilon
            )));
        }
        if self.min_chunk < 2 {
            return Err(Error::InvalidConfig(format!(
                "min_chunk {} < 2",
                self.min_chunk
            )));
        }
        if self.min_level > self.max_level {
            return Err(Error::InvalidConfig(format!(
                "min level {} > max level {}",
                self.min_level, self.max_level
            )));
        }
        if self.max_level >= usize::BITS - 1 {
            return Err(Error::InvalidConfig(format!(
                "max level {} too large",
                self.max_level
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeContent {
    Leaf(Volume),
    Branch(Vec<SrNode>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrNode {
    /// Full-resolution voxel coordinates.
    pub region: Region,
    /// Downscaling level. For internal nodes this is the level the node was
    /// at when it was split.
    pub level: u32,
    pub content: NodeContent,
}

impl SrNode {
    pub fn leaf(region: Region, level: u32, data: Volume) -> Self {
        SrNode {
            region,
            level,
            content: NodeContent::Leaf(data),
        }
    }

    pub fn branch(region: Region, level: u32, children: Vec<SrNode>) -> Self {
        SrNode {
            region,
            level,
            content: NodeContent::Branch(children),
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.content, NodeContent::Leaf(_))
    }

    pub fn data(&self) -> Option<&Volume> {
        match &self.content {
            NodeContent::Leaf(v) => Some(v),
            NodeContent::Branch(_) => None,
        }
    }

    pub fn children(&self) -> &[SrNode] {
        match &self.content {
            NodeContent::Leaf(_) => &[],
            NodeContent::Branch(c) => c,
        }
    }

    pub fn is_single_voxel_leaf(&self) -> bool {
        self.data().is_some_and(|d| d.len() == 1)
    }

    pub(crate) fn visit_leaves<'a>(&'a self, f: &mut impl FnMut(&'a SrNode)) {
        match &self.content {
            NodeContent::Leaf(_) => f(self),
            NodeContent::Branch(children) => children.iter().for_each(|c| c.visit_leaves(f)),
        }
    }

    pub fn leaf_count(&self) -> usize {
        let mut n = 0;
        self.visit_leaves(&mut |_| n += 1);
        n
    }

    pub fn node_count(&self) -> usize {
        1 + self
            .children()
            .iter()
            .map(SrNode::node_count)
            .sum::<usize>()
    }

    /// Highest level among the leaves below (or at) this node.
    pub fn max_leaf_level(&self) -> u32 {
        let mut m = 0;
        self.visit_leaves(&mut |n| m = m.max(n.level));
        m
    }
}

/// The 2^D equal octants of `r`, slowest axis outermost.
pub fn octants(r: &Region) -> Vec<Region> {
    let d = r.ndim();
    let half: Vec<usize> = r.extent.iter().map(|e| e / 2).collect();
    (0..1usize << d)
        .map(|k| {
            let origin = (0..d)
                .map(|a| {
                    r.origin[a]
                        + if (k >> (d - 1 - a)) & 1 == 1 {
                            half[a]
                        } else {
                            0
                        }
                })
                .collect();
            Region {
                origin,
                extent: half.clone(),
            }
        })
        .collect()
}

// Assembles same-level child leaves into one block covering `region`.
pub(crate) fn assemble_children(
    region: &Region,
    level: u32,
    children: &[SrNode],
) -> Result<Volume> {
    let f = 1usize << level;
    let dims: Vec<usize> = region.extent.iter().map(|e| e / f).collect();
    let mut out = Volume::zeros(dims)?;
    for c in children {
        let data = c.data().expect("assemble_children takes leaves");
        let rel = c.region.relative_to(region).scaled_down(f)?;
        out.write_region(&rel, data)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrOctree {
    root: SrNode,
    full_dims: Vec<usize>,
    config: BuildConfig,
}

impl SrOctree {
    /// Wraps a node tree, validating every structural invariant.
    pub fn from_root(root: SrNode, full_dims: Vec<usize>, config: BuildConfig) -> Result<Self> {
        let t = SrOctree {
            root,
            full_dims,
            config,
        };
        t.validate()?;
        Ok(t)
    }

    pub(crate) fn from_parts(root: SrNode, full_dims: Vec<usize>, config: BuildConfig) -> Self {
        SrOctree {
            root,
            full_dims,
            config,
        }
    }

    pub fn root(&self) -> &SrNode {
        &self.root
    }

    pub fn full_dims(&self) -> &[usize] {
        &self.full_dims
    }

    pub fn ndim(&self) -> usize {
        self.full_dims.len()
    }

    pub fn config(&self) -> &BuildConfig {
        &self.config
    }

    /// Leaves in pre-order.
    pub fn leaves(&self) -> Vec<&SrNode> {
        let mut out = Vec::new();
        self.root.visit_leaves(&mut |n| out.push(n));
        out
    }

    pub fn leaf_count(&self) -> usize {
        self.root.leaf_count()
    }

    pub fn node_count(&self) -> usize {
        self.root.node_count()
    }

    /// MAXDSL: the coarsest leaf level.
    pub fn max_level(&self) -> u32 {
        self.root.max_leaf_level()
    }

    /// MINDSL: the finest leaf level.
    pub fn min_level(&self) -> u32 {
        let mut m = u32::MAX;
        self.root.visit_leaves(&mut |n| m = m.min(n.level));
        m
    }

    pub fn stored_voxels(&self) -> usize {
        let mut n = 0;
        self.root
            .visit_leaves(&mut |l| n += l.data().map_or(0, Volume::len));
        n
    }

    /// Full-resolution voxel count over stored voxel count.
    pub fn reduction_factor(&self) -> f64 {
        self.full_dims.iter().product::<usize>() as f64 / self.stored_voxels() as f64
    }

    /// `level -> (leaf count, full-resolution voxels covered)`.
    pub fn level_histogram(&self) -> BTreeMap<u32, (usize, usize)> {
        let mut h = BTreeMap::new();
        self.root.visit_leaves(&mut |n| {
            let e = h.entry(n.level).or_insert((0, 0));
            e.0 += 1;
            e.1 += n.region.voxel_count();
        });
        h
    }

    /// Full-resolution volume holding each voxel's leaf level.
    pub fn level_map(&self) -> Volume {
        let mut out = Volume::zeros(self.full_dims.clone()).expect("validated dims");
        for leaf in self.leaves() {
            let patch = Volume::filled(leaf.region.extent.clone(), leaf.level as f32)
                .expect("leaf extent is valid");
            out.write_region(&leaf.region, &patch)
                .expect("leaf inside domain");
        }
        out
    }

    /// Full-resolution volume with every leaf nearest-replicated into place.
    pub fn flatten_nearest(&self) -> Volume {
        let mut out = Volume::zeros(self.full_dims.clone()).expect("validated dims");
        for leaf in self.leaves() {
            let mut block = leaf.data().expect("leaf").clone();
            for _ in 0..leaf.level {
                block = upscale2x_nearest(&block);
            }
            out.write_region(&leaf.region, &block)
                .expect("leaf inside domain");
        }
        out
    }

    /// Merges every group of 2^D sibling leaves that share a level, bottom-up,
    /// until no such group remains. The represented field is unchanged.
    pub fn join_adjacent(&self) -> SrOctree {
        SrOctree {
            root: join_node(&self.root),
            full_dims: self.full_dims.clone(),
            config: self.config,
        }
    }

    /// Checks every structural invariant, naming the first one violated.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, detail: String| {
            Err(Error::InvariantViolation(format!("{what}: {detail}")))
        };
        if self.config.validate().is_err() {
            return bad("build-config", format!("{:?}", self.config));
        }
        let nd = self.full_dims.len();
        if (nd != 2 && nd != 3) || self.full_dims.contains(&0) {
            return bad("dims", format!("{:?}", self.full_dims));
        }
        if self.root.region != Region::full(&self.full_dims) {
            return bad("root-region", format!("{:?}", self.root.region));
        }

        // Partition: every voxel covered by exactly one leaf.
        let mut leaves = Vec::new();
        collect_leaves_unchecked(&self.root, &mut leaves);
        let [_, sy, sx] = shape3(&self.full_dims);
        let mut cover = vec![0u8; self.full_dims.iter().product()];
        for leaf in &leaves {
            if leaf.region.ndim() != nd || leaf.region.check_within(&self.full_dims).is_err() {
                return bad(
                    "partition",
                    format!("leaf {:?} outside domain", leaf.region),
                );
            }
            let [oz, oy, ox] = crate::volume::origin3(&leaf.region.origin);
            let [ez, ey, ex] = shape3(&leaf.region.extent);
            for z in oz..oz + ez {
                for y in oy..oy + ey {
                    let row = (z * sy + y) * sx;
                    for c in &mut cover[row + ox..row + ox + ex] {
                        if *c != 0 {
                            return bad(
                                "partition",
                                format!("leaf {:?} overlaps another leaf", leaf.region),
                            );
                        }
                        *c = 1;
                    }
                }
            }
        }
        if cover.contains(&0) {
            return bad("partition", "leaves do not cover the domain".into());
        }

        validate_node(&self.root, nd)?;

        // Single-voxel leaves at MINDSL come in complete sibling groups.
        let min = self.min_level();
        if !self.root.is_leaf() {
            check_single_voxel_siblings(&self.root, min)?;
        }
        Ok(())
    }
}

fn collect_leaves_unchecked<'a>(n: &'a SrNode, out: &mut Vec<&'a SrNode>) {
    match &n.content {
        NodeContent::Leaf(_) => out.push(n),
        NodeContent::Branch(c) => c.iter().for_each(|c| collect_leaves_unchecked(c, out)),
    }
}

fn validate_node(n: &SrNode, nd: usize) -> Result<()> {
    let bad =
        |what: &str, detail: String| Err(Error::InvariantViolation(format!("{what}: {detail}")));
    if n.region.ndim() != nd || n.region.extent.contains(&0) {
        return bad("region", format!("{:?}", n.region));
    }
    if n.level >= usize::BITS - 1 || !n.region.divisible_by(1 << n.level) {
        return bad(
            "level-divisibility",
            format!("region {:?} not divisible by 2^{}", n.region, n.level),
        );
    }
    match &n.content {
        NodeContent::Leaf(data) => {
            let f = 1usize << n.level;
            let want: Vec<usize> = n.region.extent.iter().map(|e| e / f).collect();
            if data.dims() != want.as_slice() {
                return bad(
                    "leaf-shape",
                    format!(
                        "leaf {:?} stores {:?}, expected {:?}",
                        n.region,
                        data.dims(),
                        want
                    ),
                );
            }
            if !data.is_finite() {
                return bad(
                    "finite",
                    format!("leaf {:?} holds non-finite data", n.region),
                );
            }
        }
        NodeContent::Branch(children) => {
            if n.region.extent.iter().any(|e| e % 2 != 0) {
                return bad(
                    "child-partition",
                    format!("odd region {:?} has children", n.region),
                );
            }
            let expect = octants(&n.region);
            if children.len() != expect.len()
                || children.iter().zip(&expect).any(|(c, r)| &c.region != r)
            {
                return bad(
                    "child-partition",
                    format!("children of {:?} are not its ordered octants", n.region),
                );
            }
            for c in children {
                validate_node(c, nd)?;
            }
        }
    }
    Ok(())
}

fn check_single_voxel_siblings(n: &SrNode, min: u32) -> Result<()> {
    let children = n.children();
    let single = |c: &SrNode| c.is_single_voxel_leaf() && c.level == min;
    if children.iter().any(single) && !children.iter().all(single) {
        return Err(Error::InvariantViolation(format!(
            "single-voxel-sibling: children of {:?} mix single-voxel leaves at level {min} with other nodes",
            n.region
        )));
    }
    children
        .iter()
        .try_for_each(|c| check_single_voxel_siblings(c, min))
}

fn uniform_leaf_level(children: &[SrNode]) -> Option<u32> {
    let first = children.first()?;
    (children
        .iter()
        .all(|c| c.is_leaf() && c.level == first.level))
    .then_some(first.level)
}

fn join_node(n: &SrNode) -> SrNode {
    match &n.content {
        NodeContent::Leaf(_) => n.clone(),
        NodeContent::Branch(children) => {
            let joined: Vec<SrNode> = children.iter().map(join_node).collect();
            match uniform_leaf_level(&joined) {
                Some(level) => {
                    let data = assemble_children(&n.region, level, &joined)
                        .expect("sibling leaves tile their parent");
                    SrNode::leaf(n.region.clone(), level, data)
                }
                None => SrNode::branch(n.region.clone(), n.level, joined),
            }
        }
    }
}

/// Largest |original - nearest_upscale(downscale(original, 2^level))|, i.e.
/// the distortion of storing `original` at `level`, measured at full resolution.
pub fn node_error(original: &Volume, level: u32, d: Downscaler) -> Result<f64> {
    let f = 1usize << level;
    let coarse = downscale_by(original, f, d)?;
    let [nz, ny, nx] = original.shape3();
    let [_, cy, cx] = coarse.shape3();
    let fz = if original.ndim() == 3 { f } else { 1 };
    let src = original.data();
    let low = coarse.data();
    let mut err = 0f64;
    for z in 0..nz {
        for y in 0..ny {
            let row = (z * ny + y) * nx;
            let crow = ((z / fz) * cy + y / f) * cx;
            for x in 0..nx {
                let e = (src[row + x] as f64 - low[crow + x / f] as f64).abs();
                err = err.max(e);
            }
        }
    }
    Ok(err)
}

struct Builder<'a> {
    volume: &'a Volume,
    cfg: &'a BuildConfig,
}

impl Builder<'_> {
    /// Raises the level from `start` while the next level stays within epsilon.
    fn grow(&self, block: &Volume, start: u32) -> Result<u32> {
        let mut level = start;
        while level < self.cfg.max_level {
            let f = 1usize << (level + 1);
            if block.dims().iter().any(|d| d % f != 0) {
                break;
            }
            if node_error(block, level + 1, self.cfg.downscaler)? <= self.cfg.epsilon {
                level += 1;
            } else {
                break;
            }
        }
        Ok(level)
    }

    fn can_split(&self, region: &Region, level: u32) -> bool {
        let f = 1usize << level;
        let fmax = 1usize << self.cfg.max_level;
        let fits = region.extent.iter().all(|&e| {
            let child = e / 2;
            e % 2 == 0 && child % f == 0 && child / f > self.cfg.min_chunk
        });
        // Children must either reach MAXDSL on their own or be cubes that
        // shrink to single voxels together; anything else strands a sliver
        // like 2x1 that cannot be downscaled further.
        let c0 = region.extent[0] / 2;
        fits && (region.extent.iter().all(|&e| (e / 2) % fmax == 0)
            || (c0.is_power_of_two() && region.extent.iter().all(|&e| e / 2 == c0)))
    }

    fn leaf(&self, region: Region, block: &Volume, level: u32) -> Result<SrNode> {
        let data = downscale_by(block, 1 << level, self.cfg.downscaler)?;
        Ok(SrNode::leaf(region, level, data))
    }

    fn build(&self, region: Region, start: u32) -> Result<SrNode> {
        let block = self.volume.read_region(&region)?;
        let level = self.grow(&block, start)?;
        if level == self.cfg.max_level || !self.can_split(&region, level) {
            return self.leaf(region, &block, level);
        }
        let children = octants(&region)
            .into_par_iter()
            .map(|r| self.build(r, level))
            .collect::<Result<Vec<_>>>()?;
        match uniform_leaf_level(&children) {
            // Same-level siblings are joined here and the merged block keeps
            // searching upward, so joined leaves are maximal too.
            Some(child_level) => {
                let merged = self.grow(&block, child_level)?;
                self.leaf(region, &block, merged)
            }
            None => Ok(SrNode::branch(region, level, children)),
        }
    }
}

/// Builds an SR-octree from a full-resolution volume by error-bounded
/// trial-and-error downscaling, then joins same-level siblings.
pub fn build_sr_octree(v: &Volume, cfg: &BuildConfig) -> Result<SrOctree> {
    cfg.validate()?;
    if v.is_empty() {
        return Err(Error::EmptyVolume);
    }
    let fmax = 1usize << cfg.max_level;
    for (axis, &len) in v.dims().iter().enumerate() {
        if len % fmax != 0 {
            return Err(Error::IndivisibleDimension {
                axis,
                len,
                factor: fmax,
            });
        }
    }
    let builder = Builder { volume: v, cfg };
    let root = builder.build(Region::full(v.dims()), cfg.min_level)?;
    let tree = SrOctree::from_parts(root, v.dims().to_vec(), *cfg);
    Ok(tree.join_adjacent())
}
