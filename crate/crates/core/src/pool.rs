//! 2x2 stride-2 average pooling: downsample each shard, consolidate
//! sparse shards into fewer dense ones, then duplicate a part-full shard.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::emu::{Evaluator, SlotVector};
use crate::pack::{PackedImage, ShardMode};
use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    /// Average of each 2x2 window.
    Average,
    /// Top-left element of each window (plain stride-2 subsampling).
    Select,
}

/// Shards after downsampling, before they form a dense layout.
///
/// Slots are grouped into units of `unit` slots. A unit is either empty or
/// holds one piece of a pooled channel; a channel is `pieces` consecutive
/// pieces and piece `n` belongs to channel `n / pieces`.
#[derive(Clone, Debug)]
pub struct Downsampled<T> {
    shards: Vec<SlotVector<T>>,
    m: usize,
    c: usize,
    unit: usize,
    pieces: usize,
    labels: Vec<Vec<Option<usize>>>,
}

impl<T: Scalar> Downsampled<T> {
    pub fn shards(&self) -> &[SlotVector<T>] {
        &self.shards
    }

    /// Side length after pooling.
    pub fn side(&self) -> usize {
        self.m
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn unit(&self) -> usize {
        self.unit
    }

    /// Per shard, per unit: the piece stored there.
    pub fn labels(&self) -> &[Vec<Option<usize>>] {
        &self.labels
    }

    fn slots(&self) -> usize {
        self.shards[0].len()
    }

    fn units(&self) -> usize {
        self.slots() / self.unit
    }
}

fn mask<T: Scalar>(s: usize, w: T, keep: impl Fn(usize) -> bool) -> Vec<T> {
    (0..s).map(|x| if keep(x) { w } else { T::zero() }).collect()
}

/// Average of each 2x2 window, left at the window's top-left slot (other
/// slots zeroed). `next` is the following shard when a window spans two.
fn window_step<T: Scalar>(
    ev: &Evaluator,
    x: &SlotVector<T>,
    next: Option<&SlotVector<T>>,
    m: usize,
    rows: usize,
) -> Result<SlotVector<T>> {
    let s = x.len();
    let block = rows * m;
    let corners = mask(s, T::of(0.25), |i| ((i % block) / m).is_multiple_of(2) && (i % m).is_multiple_of(2));
    let mut terms = Vec::with_capacity(4);
    for a in 0..2 {
        let src = if a == 1 && rows == 1 {
            next.ok_or_else(|| Error::Layout("window needs a following shard".into()))?
        } else {
            x
        };
        for b in 0..2 {
            let y = ev.rotate(src, (a * m + b) as isize);
            terms.push(ev.mul_plain(&y, &corners)?);
        }
    }
    ev.sum(&terms)
}

/// Window step, horizontal and vertical compaction of one shard.
fn reduce_shard<T: Scalar>(
    ev: &Evaluator,
    x: &SlotVector<T>,
    next: Option<&SlotVector<T>>,
    m: usize,
    rows: usize,
    reduce: Reduce,
) -> Result<SlotVector<T>> {
    let s = x.len();
    let block = rows * m;
    let row = |i: usize| (i % block) / m;
    let col = |i: usize| i % m;
    let windowed = match reduce {
        Reduce::Select => x.clone(),
        Reduce::Average => window_step(ev, x, next, m, rows)?,
    };
    // column 2i moves to column i
    let horizontal = (0..m / 2)
        .map(|i| {
            let sel = mask(s, T::one(), |x| col(x) == 2 * i);
            Ok(ev.rotate(&ev.mul_plain(&windowed, &sel)?, i as isize))
        })
        .collect::<Result<Vec<_>>>()?;
    let h = ev.sum(&horizontal)?;
    // left half of row 2j moves to offset j m/2 of its block
    let vertical = (0..(rows / 2).max(1))
        .map(|j| {
            let sel = mask(s, T::one(), |x| row(x) == 2 * j && col(x) < m / 2);
            Ok(ev.rotate(&ev.mul_plain(&h, &sel)?, (3 * j * m / 2) as isize))
        })
        .collect::<Result<Vec<_>>>()?;
    ev.sum(&vertical)
}

fn check_poolable<T: Scalar>(p: &PackedImage<T>, need: u32) -> Result<()> {
    if p.side() < 2 {
        return Err(Error::Shape("cannot pool 1x1 channels".into()));
    }
    if p.min_level() < need {
        return Err(Error::InsufficientLevel {
            need,
            have: p.min_level(),
        });
    }
    Ok(())
}

/// The window-sum stage of pooling alone: per source shard, the 2x2
/// averages at each window's top-left slot. One level.
pub fn window_sums<T: Scalar>(ev: &Evaluator, p: &PackedImage<T>) -> Result<Vec<SlotVector<T>>> {
    check_poolable(p, 1)?;
    let m = p.side();
    let xs = p.shards();
    match p.mode() {
        ShardMode::ImageShard => xs.par_iter().map(|x| window_step(ev, x, None, m, m)).collect(),
        ShardMode::ChannelShard => {
            let rows = p.rows_per_shard();
            let step = if rows == 1 { 2 } else { 1 };
            (0..xs.len())
                .step_by(step)
                .collect::<Vec<_>>()
                .par_iter()
                .map(|&w| window_step(ev, &xs[w], xs.get(w + 1), m, rows))
                .collect()
        }
    }
}

pub fn downsample<T: Scalar>(ev: &Evaluator, p: &PackedImage<T>) -> Result<Downsampled<T>> {
    downsample_with(ev, p, Reduce::Average)
}

pub fn downsample_with<T: Scalar>(
    ev: &Evaluator,
    p: &PackedImage<T>,
    reduce: Reduce,
) -> Result<Downsampled<T>> {
    let levels = match reduce {
        Reduce::Average => 3,
        Reduce::Select => 2,
    };
    check_poolable(p, levels)?;
    let (s, m) = (p.slots(), p.side());
    let half = m / 2;
    match p.mode() {
        ShardMode::ImageShard => {
            let shards = p
                .shards()
                .par_iter()
                .map(|x| reduce_shard(ev, x, None, m, m, reduce))
                .collect::<Result<Vec<_>>>()?;
            let nb = p.units_per_shard();
            let labels = (0..p.shard_count())
                .map(|u| {
                    let mut l = vec![None; 4 * nb];
                    for q in 0..nb {
                        l[4 * q] = Some(p.logical_channel(u, q));
                    }
                    l
                })
                .collect();
            Ok(Downsampled {
                shards,
                m: half,
                c: p.channels(),
                unit: half * half,
                pieces: 1,
                labels,
            })
        }
        ShardMode::ChannelShard => {
            let rows = p.rows_per_shard();
            let step = if rows == 1 { 2 } else { 1 };
            let unit = if rows == 1 { s / 2 } else { s / 4 };
            let xs = p.shards();
            let sources: Vec<usize> = (0..xs.len()).step_by(step).collect();
            let shards = sources
                .par_iter()
                .map(|&w| reduce_shard(ev, &xs[w], xs.get(w + 1), m, rows, reduce))
                .collect::<Result<Vec<_>>>()?;
            let labels = (0..shards.len())
                .map(|n| {
                    let mut l = vec![None; s / unit];
                    l[0] = Some(n);
                    l
                })
                .collect();
            Ok(Downsampled {
                shards,
                m: half,
                c: p.channels(),
                unit,
                pieces: half * half / unit,
                labels,
            })
        }
    }
}

/// Sums groups of sparse shards, shifting the `j`-th member of a group right
/// by `j` units so the occupied units interleave without collisions.
pub fn consolidate<T: Scalar>(ev: &Evaluator, ds: &Downsampled<T>) -> Result<Downsampled<T>> {
    let t = ds.shards.len();
    if t == 1 {
        return Ok(ds.clone());
    }
    let units = ds.units();
    let occupied = ds.labels[0].iter().filter(|l| l.is_some()).count();
    let gap = units / occupied.max(1);
    let group = t.min(gap);
    if !t.is_multiple_of(group) {
        return Err(Error::Layout(format!("{t} shards do not split into groups of {group}")));
    }
    let out = (0..t / group)
        .into_par_iter()
        .map(|g| {
            let mut labels = vec![None; units];
            let mut terms = Vec::with_capacity(group);
            for j in 0..group {
                let w = g * group + j;
                for (p, label) in ds.labels[w].iter().enumerate() {
                    if let Some(label) = label {
                        let dest = &mut labels[(p + j) % units];
                        if dest.is_some() {
                            return Err(Error::Layout("consolidation collision".into()));
                        }
                        *dest = Some(*label);
                    }
                }
                terms.push(ev.rotate(&ds.shards[w], -((j * ds.unit) as isize)));
            }
            Ok((ev.sum(&terms)?, labels))
        })
        .collect::<Result<Vec<_>>>()?;
    let (shards, labels) = out.into_iter().unzip();
    Ok(Downsampled {
        shards,
        labels,
        ..ds.clone()
    })
}

/// Tiles the first `valid` slots of `v` across the whole vector by repeated
/// doubling. Returns the copy count.
pub fn duplicate<T: Scalar>(
    ev: &Evaluator,
    v: &SlotVector<T>,
    valid: usize,
) -> Result<(SlotVector<T>, usize)> {
    let s = v.len();
    if valid >= s {
        return Err(Error::NothingToDuplicate);
    }
    if valid == 0 || !s.is_multiple_of(valid) || !(s / valid).is_power_of_two() {
        return Err(Error::Layout(format!("cannot tile {valid} slots into {s}")));
    }
    let mut out = v.clone();
    let mut len = valid;
    while len < s {
        out = ev.add(&out, &ev.rotate(&out, -(len as isize)))?;
        len *= 2;
    }
    Ok((out, s / valid))
}

/// Moves the first occurrence of every channel into a dense prefix and
/// drops the rest. One masked product per distinct shift amount.
fn compact<T: Scalar>(
    ev: &Evaluator,
    v: &SlotVector<T>,
    labels: &[Option<usize>],
    unit: usize,
) -> Result<(SlotVector<T>, Vec<Option<usize>>)> {
    let mut seen = BTreeSet::new();
    let firsts: Vec<(usize, usize)> = labels
        .iter()
        .enumerate()
        .filter_map(|(p, l)| l.filter(|&l| seen.insert(l)).map(|l| (p, l)))
        .collect();
    let mut by_shift: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &(p, _)) in firsts.iter().enumerate() {
        by_shift.entry(p - i).or_default().push(p);
    }
    let s = v.len();
    let terms = by_shift
        .iter()
        .map(|(&shift, units)| {
            let sel = mask(s, T::one(), |x| units.contains(&(x / unit)));
            Ok(ev.rotate(&ev.mul_plain(v, &sel)?, (shift * unit) as isize))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out_labels = vec![None; labels.len()];
    for (i, &(_, l)) in firsts.iter().enumerate() {
        out_labels[i] = Some(l);
    }
    Ok((ev.sum(&terms)?, out_labels))
}

fn is_dense_prefix(labels: &[Option<usize>], n: usize) -> bool {
    labels.iter().enumerate().all(|(p, l)| l.is_some() == (p < n))
}

/// Channel permutation read off consecutive chunks of `pieces` labels.
fn read_channels(labels: &[Option<usize>], pieces: usize) -> Result<Vec<usize>> {
    labels
        .chunks(pieces)
        .map(|chunk| {
            let first = chunk[0].ok_or_else(|| Error::Layout("empty channel unit".into()))?;
            if first % pieces != 0 || chunk.iter().enumerate().any(|(i, &l)| l != Some(first + i)) {
                return Err(Error::Layout("channel pieces out of order".into()));
            }
            Ok(first / pieces)
        })
        .collect()
}

/// Turns consolidated shards into a dense packed image, compacting and
/// duplicating a part-full single shard.
pub fn finalize<T: Scalar>(ev: &Evaluator, ds: &Downsampled<T>) -> Result<PackedImage<T>> {
    let s = ds.slots();
    let (m, c) = (ds.m, ds.c);
    let chan = m * m;
    if chan > s {
        let per = s / ds.unit;
        for (w, labels) in ds.labels.iter().enumerate() {
            if labels.iter().enumerate().any(|(p, &l)| l != Some(w * per + p)) {
                return Err(Error::Layout("channel shards out of order".into()));
            }
        }
        return PackedImage::from_parts(
            ds.shards.clone(),
            m,
            c,
            1,
            (0..c).collect(),
            ShardMode::ChannelShard,
        );
    }
    if ds.shards.len() > 1 {
        let mut tau = Vec::with_capacity(c);
        for labels in &ds.labels {
            tau.extend(read_channels(labels, ds.pieces)?);
        }
        return PackedImage::from_parts(ds.shards.clone(), m, c, 1, tau, ShardMode::ImageShard);
    }
    let wanted = c * ds.pieces;
    let (mut v, mut labels) = (ds.shards[0].clone(), ds.labels[0].clone());
    if !is_dense_prefix(&labels, wanted) {
        if ds.pieces != 1 {
            return Err(Error::Layout("cannot compact multi-piece channels".into()));
        }
        (v, labels) = compact(ev, &v, &labels, ds.unit)?;
    }
    let tau = read_channels(&labels[..wanted], ds.pieces)?;
    let d = if wanted * ds.unit < s {
        let (dup, d) = duplicate(ev, &v, wanted * ds.unit)?;
        v = dup;
        d
    } else {
        1
    };
    PackedImage::from_parts(vec![v], m, c, d, tau, ShardMode::ImageShard)
}

/// Levels consumed by [`pool`] on this layout.
pub fn pool_depth<T: Scalar>(p: &PackedImage<T>) -> u32 {
    3 + compaction_levels(p)
}

/// Levels consumed by [`subsample`] on this layout.
pub fn subsample_depth<T: Scalar>(p: &PackedImage<T>) -> u32 {
    2 + compaction_levels(p)
}

fn compaction_levels<T: Scalar>(p: &PackedImage<T>) -> u32 {
    layout_compaction(p.mode(), p.shard_count(), p.units_per_shard())
}

/// One extra level when pooling leaves a single shard whose channels are
/// scattered: at most two image shards, each holding several channels.
pub(crate) fn layout_compaction(mode: ShardMode, shards: usize, units: usize) -> u32 {
    u32::from(mode == ShardMode::ImageShard && shards <= 2 && units > 1)
}

pub fn pool<T: Scalar>(ev: &Evaluator, p: &PackedImage<T>) -> Result<PackedImage<T>> {
    finalize(ev, &consolidate(ev, &downsample(ev, p)?)?)
}

/// Stride-2 subsampling through the same layout pipeline as [`pool`].
pub fn subsample<T: Scalar>(ev: &Evaluator, p: &PackedImage<T>) -> Result<PackedImage<T>> {
    finalize(ev, &consolidate(ev, &downsample_with(ev, p, Reduce::Select)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::oracle_avgpool2x2;
    use crate::pack::{pack, unpack, ImageTensor};

    fn ev(s: usize) -> Evaluator {
        Evaluator::new(s, 8).unwrap()
    }

    fn grid(c: usize, m: usize) -> ImageTensor<f64> {
        ImageTensor::from_fn(c, m, |ch, i, j| (ch * m * m + i * m + j + 1) as f64)
    }

    #[test]
    fn downsample_places_result_in_block_prefix() {
        let e = ev(16);
        let p = pack(&e, &grid(1, 4)).unwrap();
        let ds = downsample(&e, &p).unwrap();
        let slots = ds.shards()[0].slots();
        assert_eq!(&slots[..4], &[3.5, 5.5, 11.5, 13.5]);
        assert!(slots[4..].iter().all(|&x| x == 0.0));
        assert_eq!(ds.shards()[0].depth(), 3);
    }

    #[test]
    fn downsample_constant_and_indicator() {
        let e = ev(64);
        let constant = ImageTensor::from_fn(1, 8, |_, _, _| 2.5);
        let out = unpack(&pool(&e, &pack(&e, &constant).unwrap()).unwrap()).unwrap();
        assert!(out.data().iter().all(|&x| x == 2.5));
        let ind = ImageTensor::from_fn(1, 8, |_, i, j| if i % 2 == 0 && j % 2 == 0 { 4.0 } else { 0.0 });
        let out = unpack(&pool(&e, &pack(&e, &ind).unwrap()).unwrap()).unwrap();
        assert!(out.data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn four_shards_consolidate_with_permutation() {
        let e = ev(32);
        let t = grid(8, 4);
        let p = pack(&e, &t).unwrap();
        assert_eq!(p.shard_count(), 4);
        let out = pool(&e, &p).unwrap();
        assert_eq!(out.shard_count(), 1);
        assert_eq!(out.tau(), &[0, 2, 4, 6, 1, 3, 5, 7]);
        assert_eq!(out.duplication(), 1);
        let expect = oracle_avgpool2x2(&t).unwrap();
        assert!(unpack(&out).unwrap().max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn two_shards_halve_and_duplicate() {
        let e = ev(16);
        let t = grid(2, 4);
        let p = pack(&e, &t).unwrap();
        let out = pool(&e, &p).unwrap();
        assert_eq!(out.shard_count(), 1);
        assert_eq!(out.duplication(), 2);
        assert_eq!(out.shards()[0].depth(), pool_depth(&p));
        assert!(unpack(&out).unwrap().max_abs_diff(&oracle_avgpool2x2(&t).unwrap()) < 1e-12);
    }

    #[test]
    fn single_shard_is_not_consolidated() {
        let e = ev(16);
        let p = pack(&e, &grid(1, 4)).unwrap();
        let ds = downsample(&e, &p).unwrap();
        let before = e.snapshot();
        let same = consolidate(&e, &ds).unwrap();
        assert_eq!(e.snapshot(), before);
        assert_eq!(same.shards()[0].slots(), ds.shards()[0].slots());
    }

    #[test]
    fn duplicate_examples() {
        let e = ev(16);
        let mut xs = vec![0.0; 16];
        xs[..4].copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        let v = e.encode(xs).unwrap();
        let (dup, d) = duplicate(&e, &v, 4).unwrap();
        assert_eq!(d, 4);
        assert_eq!(dup.slots(), [1.0, 2.0, 3.0, 4.0].repeat(4).as_slice());
        let (half, d) = duplicate(&e, &v, 8).unwrap();
        assert_eq!(d, 2);
        assert_eq!(&half.slots()[8..12], &[1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(duplicate(&e, &dup, 16), Err(Error::NothingToDuplicate)));
    }

    #[test]
    fn channel_shards_pool_to_identity_tau() {
        // 1 channel over 2 shards: lands in one shard, duplicated twice
        let e = ev(32);
        let t = grid(1, 8);
        let p = pack(&e, &t).unwrap();
        assert_eq!(p.shard_count(), 2);
        let out = pool(&e, &p).unwrap();
        assert_eq!(out.mode(), ShardMode::ImageShard);
        assert_eq!(out.duplication(), 2);
        assert_eq!(out.tau(), &[0]);
        assert!(unpack(&out).unwrap().max_abs_diff(&oracle_avgpool2x2(&t).unwrap()) < 1e-12);
        // one row per shard stays channel-sharded
        let e = ev(16);
        let t = grid(2, 16);
        let p = pack(&e, &t).unwrap();
        let out = pool(&e, &p).unwrap();
        assert_eq!(out.mode(), ShardMode::ChannelShard);
        assert!(unpack(&out).unwrap().max_abs_diff(&oracle_avgpool2x2(&t).unwrap()) < 1e-12);
    }

    #[test]
    fn pool_twice() {
        let e = ev(64);
        let t = grid(1, 8);
        let once = pool(&e, &pack(&e, &t).unwrap()).unwrap();
        let twice = unpack(&pool(&e, &once).unwrap()).unwrap();
        let expect = oracle_avgpool2x2(&oracle_avgpool2x2(&t).unwrap()).unwrap();
        assert!(twice.max_abs_diff(&expect) < 1e-12);
    }
}
