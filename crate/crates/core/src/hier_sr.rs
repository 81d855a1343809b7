//! Hierarchical super resolution over SR-octrees.
//!
//! [`hierarchical_downscale`] brings every leaf to the coarsest level in small
//! global steps and assembles one uniform low-resolution grid.
//! [`hierarchical_upscale`] then upscales the whole domain one level at a time,
//! overwriting stale voxels with stored data after each step, so no upscaler
//! ever sees a block boundary. [`blockwise_upscale`] is the per-leaf baseline.

use crate::error::{Error, Result};
use crate::octree::{assemble_children, NodeContent, SrNode, SrOctree};
use crate::resample::{apply_hierarchy, downscale2x, downscale_by, Downscaler, UpscalerHierarchy};
use crate::volume::{Region, Volume};

/// Voxels to overwrite after one upscaling step.
#[derive(Debug, Clone, PartialEq)]
pub struct StaleEntry {
    /// Region in the coordinates of the current level's grid.
    pub region: Region,
    pub data: Volume,
    /// Pre-order index of the first leaf that sourced `data`.
    pub leaf: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaleSet {
    pub level: u32,
    pub entries: Vec<StaleEntry>,
}

fn merge_single_voxels(n: &mut SrNode, level: u32, is_root: bool) -> Result<()> {
    if n.is_leaf() {
        if !is_root && n.is_single_voxel_leaf() && n.level == level {
            // Reaching a single-voxel leaf directly means its parent could not merge it.
            return Err(Error::OrphanSingleVoxel {
                origin: n.region.origin.clone(),
                level,
            });
        }
        return Ok(());
    }
    let children = n.children();
    let single = |c: &SrNode| c.is_single_voxel_leaf() && c.level == level;
    if children.iter().all(single) {
        let data = assemble_children(&n.region, level, children)?;
        *n = SrNode::leaf(n.region.clone(), level, data);
        return Ok(());
    }
    if let NodeContent::Branch(children) = &mut n.content {
        for c in children {
            merge_single_voxels(c, level, false)?;
        }
    }
    Ok(())
}

/// Merges every complete group of single-voxel sibling leaves at `level`
/// into one 2^D-voxel leaf.
pub fn combine_single_voxel_siblings(t: &SrOctree, level: u32) -> Result<SrOctree> {
    let mut root = t.root().clone();
    merge_single_voxels(&mut root, level, true)?;
    Ok(SrOctree::from_parts(
        root,
        t.full_dims().to_vec(),
        *t.config(),
    ))
}

fn downscale_leaves_at(n: &mut SrNode, level: u32, d: Downscaler) -> Result<()> {
    match &mut n.content {
        NodeContent::Leaf(data) if n.level == level => {
            *data = downscale2x(data, d)?;
            n.level += 1;
        }
        NodeContent::Leaf(_) => {}
        NodeContent::Branch(children) => {
            for c in children {
                downscale_leaves_at(c, level, d)?;
            }
        }
    }
    Ok(())
}

/// Reduces a tree to one uniform grid at its coarsest level (MAXDSL).
///
/// The input tree is not modified.
pub fn hierarchical_downscale(t: &SrOctree) -> Result<Volume> {
    let max = t.max_level();
    let d = t.config().downscaler;
    let mut root = t.root().clone();
    for level in t.min_level()..max {
        merge_single_voxels(&mut root, level, true)?;
        downscale_leaves_at(&mut root, level, d)?;
    }
    let f = 1usize << max;
    let lr_dims = lr_dims(t)?;
    let mut out = Volume::zeros(lr_dims)?;
    let mut result = Ok(());
    root.visit_leaves(&mut |leaf| {
        if result.is_err() {
            return;
        }
        result = leaf
            .region
            .scaled_down(f)
            .and_then(|r| out.write_region(&r, leaf.data().expect("leaf")));
    });
    result?;
    Ok(out)
}

/// Dims of the uniform grid at MAXDSL.
pub fn lr_dims(t: &SrOctree) -> Result<Vec<usize>> {
    let f = 1usize << t.max_level();
    t.full_dims()
        .iter()
        .enumerate()
        .map(|(axis, &len)| {
            if len % f == 0 {
                Ok(len / f)
            } else {
                Err(Error::IndivisibleDimension {
                    axis,
                    len,
                    factor: f,
                })
            }
        })
        .collect()
}

// Data of `n`'s whole subtree at `level`; every leaf below must be at or finer than `level`.
fn reduce(n: &SrNode, level: u32, d: Downscaler) -> Result<Volume> {
    match &n.content {
        NodeContent::Leaf(data) => downscale_by(data, 1 << (level - n.level), d),
        NodeContent::Branch(children) => {
            let f = 1usize << level;
            if children.iter().all(|c| c.region.divisible_by(f)) {
                let parts = children
                    .iter()
                    .map(|c| Ok(SrNode::leaf(c.region.clone(), level, reduce(c, level, d)?)))
                    .collect::<Result<Vec<_>>>()?;
                assemble_children(&n.region, level, &parts)
            } else {
                // Children are smaller than one voxel here: combine one level finer.
                let parts = children
                    .iter()
                    .map(|c| {
                        Ok(SrNode::leaf(
                            c.region.clone(),
                            level - 1,
                            reduce(c, level - 1, d)?,
                        ))
                    })
                    .collect::<Result<Vec<_>>>()?;
                downscale2x(&assemble_children(&n.region, level - 1, &parts)?, d)
            }
        }
    }
}

fn collect_stale(
    n: &SrNode,
    level: u32,
    d: Downscaler,
    next_leaf: &mut usize,
    out: &mut Vec<StaleEntry>,
) -> Result<()> {
    let f = 1usize << level;
    match &n.content {
        NodeContent::Leaf(data) => {
            let leaf = *next_leaf;
            *next_leaf += 1;
            if n.level <= level {
                out.push(StaleEntry {
                    region: n.region.scaled_down(f)?,
                    data: downscale_by(data, 1 << (level - n.level), d)?,
                    leaf,
                });
            }
        }
        NodeContent::Branch(children) => {
            if children.iter().all(|c| c.region.divisible_by(f)) {
                for c in children {
                    collect_stale(c, level, d, next_leaf, out)?;
                }
            } else {
                // The whole node is one voxel at this level.
                let leaf = *next_leaf;
                *next_leaf += n.leaf_count();
                if n.max_leaf_level() <= level {
                    out.push(StaleEntry {
                        region: n.region.scaled_down(f)?,
                        data: reduce(n, level, d)?,
                        leaf,
                    });
                }
            }
        }
    }
    Ok(())
}

/// Every block of stored data available at `level` or finer, brought to `level`.
pub fn stale_set(t: &SrOctree, level: u32) -> Result<StaleSet> {
    let mut entries = Vec::new();
    let mut next_leaf = 0;
    collect_stale(
        t.root(),
        level,
        t.config().downscaler,
        &mut next_leaf,
        &mut entries,
    )?;
    Ok(StaleSet { level, entries })
}

/// Upscales the MAXDSL grid `lr` back to full resolution, one global 2x step
/// per level, overwriting stale voxels after each step.
pub fn hierarchical_upscale(
    lr: &Volume,
    t: &SrOctree,
    h: &mut UpscalerHierarchy,
) -> Result<Volume> {
    let expected = lr_dims(t)?;
    if lr.dims() != expected.as_slice() {
        return Err(Error::ShapeMismatch {
            expected,
            actual: lr.dims().to_vec(),
        });
    }
    let mut v = lr.clone();
    v.set_meta(None);
    for level in (0..t.max_level()).rev() {
        v = h.step(level, &v)?;
        for entry in stale_set(t, level)?.entries {
            v.write_region(&entry.region, &entry.data)?;
        }
    }
    Ok(v)
}

/// Baseline: upscale each leaf on its own and stitch the patches together.
pub fn blockwise_upscale(t: &SrOctree, h: &mut UpscalerHierarchy) -> Result<Volume> {
    let mut out = Volume::zeros(t.full_dims().to_vec())?;
    for leaf in t.leaves() {
        let data = leaf.data().expect("leaf");
        let up = apply_hierarchy(h, data, leaf.level, 0)?;
        out.write_region(&leaf.region, &up)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::octree::{build_sr_octree, octants, BuildConfig};
    use crate::resample::{upscale2x_nearest, Linear};
    use crate::synthetic::{gen_synthetic, SyntheticKind};

    fn single_voxel_quadtree() -> SrOctree {
        let region = Region::full(&[2, 2]);
        let children = octants(&region)
            .into_iter()
            .enumerate()
            .map(|(i, r)| SrNode::leaf(r, 0, Volume::filled(vec![1, 1], i as f32).unwrap()))
            .collect();
        SrOctree::from_parts(
            SrNode::branch(region, 0, children),
            vec![2, 2],
            BuildConfig::default(),
        )
    }

    // 16x16 tree: quadrant 0 is a level-2 leaf, the others split into
    // 4x4 level-0 leaves, one of which is further made of single voxels at level 2.
    fn mixed_tree(d: Downscaler) -> (Volume, SrOctree) {
        let v = gen_synthetic(SyntheticKind::BandLimitedNoise, &[16, 16], 11).unwrap();
        let cfg = BuildConfig {
            epsilon: 0.0,
            min_chunk: 2,
            min_level: 0,
            max_level: 2,
            downscaler: d,
        };
        let root = Region::full(&[16, 16]);
        let mut quads = Vec::new();
        for (qi, q) in octants(&root).into_iter().enumerate() {
            if qi == 0 {
                let data = downscale_by(&v.read_region(&q).unwrap(), 4, d).unwrap();
                quads.push(SrNode::leaf(q, 2, data));
                continue;
            }
            let kids = octants(&q)
                .into_iter()
                .enumerate()
                .map(|(ki, k)| {
                    let block = v.read_region(&k).unwrap();
                    if qi == 1 && ki == 0 {
                        let grand = octants(&k)
                            .into_iter()
                            .map(|g| {
                                let b = v.read_region(&g).unwrap();
                                SrNode::leaf(g, 1, downscale_by(&b, 2, d).unwrap())
                            })
                            .collect();
                        SrNode::branch(k, 0, grand)
                    } else {
                        SrNode::leaf(k, 0, block)
                    }
                })
                .collect();
            quads.push(SrNode::branch(q, 0, kids));
        }
        let t = SrOctree::from_root(SrNode::branch(root, 0, quads), vec![16, 16], cfg).unwrap();
        (v, t)
    }

    #[test]
    fn combine_examples() {
        let t = single_voxel_quadtree();
        let c = combine_single_voxel_siblings(&t, 0).unwrap();
        assert!(c.root().is_leaf());
        assert_eq!(c.root().data().unwrap().dims(), &[2, 2]);
        assert_eq!(c.flatten_nearest(), t.flatten_nearest());

        let (_, mixed) = mixed_tree(Downscaler::MeanPool);
        assert_eq!(combine_single_voxel_siblings(&mixed, 0).unwrap(), mixed);
    }

    #[test]
    fn combine_detects_orphans() {
        let region = Region::full(&[4, 4]);
        let children = octants(&region)
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                if i == 0 {
                    SrNode::leaf(r, 1, Volume::zeros(vec![1, 1]).unwrap())
                } else {
                    SrNode::leaf(r, 0, Volume::zeros(vec![2, 2]).unwrap())
                }
            })
            .collect();
        let t = SrOctree::from_parts(
            SrNode::branch(region, 0, children),
            vec![4, 4],
            BuildConfig::default(),
        );
        assert!(matches!(
            combine_single_voxel_siblings(&t, 1),
            Err(Error::OrphanSingleVoxel { .. })
        ));
    }

    #[test]
    fn downscale_single_leaf_is_identity() {
        let v = gen_synthetic(SyntheticKind::BandLimitedNoise, &[8, 8, 8], 1).unwrap();
        let t = SrOctree::from_root(
            SrNode::leaf(Region::full(&[32, 32, 32]), 2, v.clone()),
            vec![32, 32, 32],
            BuildConfig::default(),
        )
        .unwrap();
        assert_eq!(hierarchical_downscale(&t).unwrap(), v);
    }

    #[test]
    fn downscale_same_level_assembles() {
        let region = Region::full(&[8, 8]);
        let parts: Vec<Volume> = (0..4)
            .map(|i| Volume::filled(vec![2, 2], i as f32).unwrap())
            .collect();
        let children = octants(&region)
            .into_iter()
            .zip(parts)
            .map(|(r, p)| SrNode::leaf(r, 1, p))
            .collect();
        let t = SrOctree::from_parts(
            SrNode::branch(region, 0, children),
            vec![8, 8],
            BuildConfig::default(),
        );
        let lr = hierarchical_downscale(&t).unwrap();
        assert_eq!(lr.dims(), &[4, 4]);
        assert_eq!(lr.get(&[0, 0]), 0.0);
        assert_eq!(lr.get(&[0, 3]), 1.0);
        assert_eq!(lr.get(&[3, 0]), 2.0);
        assert_eq!(lr.get(&[3, 3]), 3.0);
    }

    #[test]
    fn downscale_handles_single_voxel_groups() {
        let (v, t) = mixed_tree(Downscaler::Subsample);
        let lr = hierarchical_downscale(&t).unwrap();
        assert_eq!(lr, downscale_by(&v, 4, Downscaler::Subsample).unwrap());
        let (v, t) = mixed_tree(Downscaler::MeanPool);
        let lr = hierarchical_downscale(&t).unwrap();
        let direct = downscale_by(&v, 4, Downscaler::MeanPool).unwrap();
        for (a, b) in lr.data().iter().zip(direct.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn downscale_commutes_for_built_trees() {
        for (dims, seed) in [
            (vec![16, 16], 1u64),
            (vec![16, 16, 16], 2),
            (vec![32, 32], 3),
        ] {
            let v = gen_synthetic(SyntheticKind::GaussianBlobs, &dims, seed).unwrap();
            let cfg = BuildConfig {
                epsilon: 0.05,
                min_chunk: 2,
                min_level: 0,
                max_level: 3,
                downscaler: Downscaler::Subsample,
            };
            let t = build_sr_octree(&v, &cfg).unwrap();
            let f = 1 << t.max_level();
            assert_eq!(
                hierarchical_downscale(&t).unwrap(),
                downscale_by(&v, f, Downscaler::Subsample).unwrap()
            );
        }
    }

    #[test]
    fn upscale_single_leaf_matches_direct_chain() {
        let lr = gen_synthetic(SyntheticKind::BandLimitedNoise, &[4, 4, 4], 3).unwrap();
        let t = SrOctree::from_root(
            SrNode::leaf(Region::full(&[32, 32, 32]), 3, lr.clone()),
            vec![32, 32, 32],
            BuildConfig::default(),
        )
        .unwrap();
        let mut h = UpscalerHierarchy::linear();
        let ours = hierarchical_upscale(&lr, &t, &mut h).unwrap();
        assert_eq!(ours, apply_hierarchy(&mut h, &lr, 3, 0).unwrap());
        assert_eq!(ours, blockwise_upscale(&t, &mut h).unwrap());
    }

    #[test]
    fn upscale_restores_level_zero_leaves() {
        let (v, t) = mixed_tree(Downscaler::MeanPool);
        let lr = hierarchical_downscale(&t).unwrap();
        let out = hierarchical_upscale(&lr, &t, &mut UpscalerHierarchy::linear()).unwrap();
        assert_eq!(out.dims(), v.dims());
        for leaf in t.leaves().into_iter().filter(|l| l.level == 0) {
            assert_eq!(
                out.read_region(&leaf.region).unwrap(),
                v.read_region(&leaf.region).unwrap()
            );
        }
    }

    #[test]
    fn upscale_constant_nearest_exact() {
        let v = Volume::filled(vec![16, 16], 0.3).unwrap();
        let t = build_sr_octree(&v, &BuildConfig::default()).unwrap();
        let lr = hierarchical_downscale(&t).unwrap();
        let out = hierarchical_upscale(&lr, &t, &mut UpscalerHierarchy::nearest()).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn upscale_rejects_wrong_lr() {
        let (_, t) = mixed_tree(Downscaler::MeanPool);
        let lr = Volume::zeros(vec![8, 8]).unwrap();
        assert!(matches!(
            hierarchical_upscale(&lr, &t, &mut UpscalerHierarchy::nearest()),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn stale_voxels_never_come_from_the_upscaler() {
        let (v, t) = mixed_tree(Downscaler::MeanPool);
        let lr = hierarchical_downscale(&t).unwrap();
        let poison = |x: &Volume| {
            let dims: Vec<usize> = x.dims().iter().map(|d| d * 2).collect();
            let n = dims.iter().product();
            Volume::new_unchecked(dims, vec![f32::NAN; n])
        };
        let mut h = UpscalerHierarchy::new(Box::new(poison));
        let out = hierarchical_upscale(&lr, &t, &mut h).unwrap();
        for leaf in t.leaves().into_iter().filter(|l| l.level == 0) {
            let got = out.read_region(&leaf.region).unwrap();
            assert_eq!(got.data(), v.read_region(&leaf.region).unwrap().data());
        }
        // Coarse-leaf regions only ever hold upscaler output.
        let coarse = t.leaves().into_iter().find(|l| l.level == 2).unwrap();
        assert!(out
            .read_region(&coarse.region)
            .unwrap()
            .data()
            .iter()
            .all(|x| x.is_nan()));
    }

    #[test]
    fn stale_order_does_not_matter() {
        let (_, t) = mixed_tree(Downscaler::MeanPool);
        let base = Volume::zeros(vec![8, 8]).unwrap();
        let set = stale_set(&t, 1).unwrap();
        assert!(set
            .entries
            .iter()
            .all(|e| e.region.check_within(base.dims()).is_ok()));
        let mut fwd = base.clone();
        let mut rev = base;
        for e in &set.entries {
            fwd.write_region(&e.region, &e.data).unwrap();
        }
        for e in set.entries.iter().rev() {
            rev.write_region(&e.region, &e.data).unwrap();
        }
        assert_eq!(fwd, rev);
    }

    #[test]
    fn stale_set_groups_sub_voxel_leaves() {
        let (_, t) = mixed_tree(Downscaler::MeanPool);
        // At level 2 the 2x2 block of level-1 leaves is a single voxel.
        let s2 = stale_set(&t, 2).unwrap();
        assert!(s2.entries.iter().any(|e| e.data.len() == 1));
        let covered: usize = s2.entries.iter().map(|e| e.region.voxel_count()).sum();
        assert_eq!(covered, 16);
    }

    #[test]
    fn each_step_sees_whole_domain() {
        let (_, t) = mixed_tree(Downscaler::MeanPool);
        let lr = hierarchical_downscale(&t).unwrap();
        let seen = std::sync::Arc::new(std::sync::Mutex::new(Vec::new()));
        let log = seen.clone();
        let rec = move |x: &Volume| {
            log.lock().unwrap().push(x.dims().to_vec());
            Ok(upscale2x_nearest(x))
        };
        let mut h = UpscalerHierarchy::new(Box::new(rec));
        hierarchical_upscale(&lr, &t, &mut h).unwrap();
        assert_eq!(*seen.lock().unwrap(), vec![vec![4, 4], vec![8, 8]]);
    }

    #[test]
    fn blockwise_level_zero_is_exact() {
        let v = gen_synthetic(SyntheticKind::Checker, &[8, 8], 0).unwrap();
        let t = build_sr_octree(
            &v,
            &BuildConfig {
                max_level: 2,
                ..BuildConfig::default()
            },
        )
        .unwrap();
        assert_eq!(t.max_level(), 0);
        let mut h = UpscalerHierarchy::new(Box::new(Linear));
        assert_eq!(blockwise_upscale(&t, &mut h).unwrap(), v);
    }
}
