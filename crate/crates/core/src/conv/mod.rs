//! Packed convolutions with same padding and stride 1.
//!
//! Every variant fuses the zero-fill mask of a shift with the kernel weight
//! into one plaintext, so a convolution costs a single level.

mod channel;
mod filter;
mod plan;

pub use channel::conv_channel_shards;
pub use filter::FilterTensor;
pub use plan::{conv_plan, ConvPlan, PlannedConv};

use rayon::prelude::*;

use crate::emu::{Evaluator, SlotVector};
use crate::pack::{PackedImage, ShardMode};
use crate::{pool, Error, Result, Scalar};

/// A shift `S_{k,l}` on image-shard layout: one rotation and one mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftPlan<T> {
    pub k: isize,
    pub l: isize,
    pub rotation: isize,
    pub mask: Vec<T>,
}

/// Whether output position `(i, j)` reads a real pixel under shift `(k, l)`.
pub(crate) fn in_window(m: usize, i: usize, j: usize, k: isize, l: isize) -> bool {
    let (si, sj) = (i as isize + k, j as isize + l);
    si >= 0 && si < m as isize && sj >= 0 && sj < m as isize
}

fn check_shift(m: usize, k: isize, l: isize) -> Result<()> {
    if k.unsigned_abs() >= m || l.unsigned_abs() >= m {
        return Err(Error::ShiftTooLarge { k, l, m });
    }
    Ok(())
}

impl<T: Scalar> ShiftPlan<T> {
    /// Plan for `s`-slot shards of side-`m` channels.
    pub fn new(m: usize, s: usize, k: isize, l: isize) -> Result<Self> {
        check_shift(m, k, l)?;
        let mm = m * m;
        if mm > s || !s.is_multiple_of(mm) {
            return Err(Error::Layout(format!("{m}x{m} channels do not tile {s} slots")));
        }
        let mask = (0..s)
            .map(|x| {
                let p = x % mm;
                if in_window(m, p / m, p % m, k, l) {
                    T::one()
                } else {
                    T::zero()
                }
            })
            .collect();
        Ok(Self {
            k,
            l,
            rotation: k * m as isize + l,
            mask,
        })
    }
}

/// Shifts every channel of an image shard rows up by `k` and columns left
/// by `l`, filling with zeros. The zero shift is free.
pub fn shift<T: Scalar>(
    ev: &Evaluator,
    v: &SlotVector<T>,
    m: usize,
    k: isize,
    l: isize,
) -> Result<SlotVector<T>> {
    let plan = ShiftPlan::new(m, v.len(), k, l)?;
    if k == 0 && l == 0 {
        return Ok(v.clone());
    }
    ev.mul_plain(&ev.rotate(v, plan.rotation), &plan.mask)
}

/// Convolves every channel block of `x` with the same `kernel`
/// (a 1-in, 1-out filter).
pub fn conv_single<T: Scalar>(
    ev: &Evaluator,
    x: &SlotVector<T>,
    m: usize,
    kernel: &FilterTensor<T>,
) -> Result<SlotVector<T>> {
    if kernel.in_channels() != 1 || kernel.out_channels() != 1 {
        return Err(Error::Shape("conv_single takes a single-channel kernel".into()));
    }
    let mut terms = Vec::new();
    for (k, l) in kernel.offsets() {
        let mut plan = ShiftPlan::new(m, x.len(), k, l)?;
        let w = kernel.at(0, 0, k, l);
        plan.mask.iter_mut().for_each(|p| *p *= w);
        terms.push(ev.mul_plain(&ev.rotate(x, plan.rotation), &plan.mask)?);
    }
    ev.sum(&terms)
}

/// Shard count and duplication of a `c`-channel output in `s` slots.
pub(crate) fn image_layout(s: usize, m: usize, c: usize) -> Result<(usize, usize)> {
    let total = c * m * m;
    if total <= s && s.is_multiple_of(total) {
        Ok((1, s / total))
    } else if total > s && total.is_multiple_of(s) {
        Ok((total / s, 1))
    } else {
        Err(Error::NotPowerOfTwo {
            what: "output channel count",
            value: c,
        })
    }
}

fn check_filter<T: Scalar>(p: &PackedImage<T>, k: &FilterTensor<T>, bias: Option<&[T]>) -> Result<()> {
    if k.in_channels() != p.channels() {
        return Err(Error::Shape(format!(
            "filter expects {} input channels, image has {}",
            k.in_channels(),
            p.channels()
        )));
    }
    if k.size() > 1 {
        check_shift(p.side(), k.half(), k.half())?;
    }
    if let Some(b) = bias {
        if b.len() != k.out_channels() {
            return Err(Error::Shape("bias length != output channels".into()));
        }
    }
    if p.min_level() == 0 {
        return Err(Error::InsufficientLevel { need: 1, have: 0 });
    }
    Ok(())
}

/// Number of channel rotations needed per input shard.
pub(crate) fn channel_rotations<T: Scalar>(p: &PackedImage<T>) -> usize {
    p.channels().min(p.units_per_shard())
}

/// Amount for channel rotation `r` composed with shift `(k, l)`.
pub(crate) fn combined_amount(m: usize, r: usize, k: isize, l: isize) -> isize {
    (r * m * m) as isize + k * m as isize + l
}

/// Sums the fused-mask products over already rotated inputs.
/// `rotated[u][r * kk + idx]` must equal `rot(M_u, r m^2 + k m + l)` for the
/// `idx`-th kernel offset.
pub(crate) fn accumulate_image<T: Scalar>(
    ev: &Evaluator,
    p: &PackedImage<T>,
    kernel: &FilterTensor<T>,
    bias: Option<&[T]>,
    rotated: &[Vec<SlotVector<T>>],
) -> Result<PackedImage<T>> {
    let (s, m) = (p.slots(), p.side());
    let mm = m * m;
    let nb = p.units_per_shard();
    let co = kernel.out_channels();
    let (t_out, d_out) = image_layout(s, m, co)?;
    let z = channel_rotations(p);
    let offsets = kernel.offsets();
    let kk = offsets.len();

    let shards = (0..t_out)
        .into_par_iter()
        .map(|v| {
            let mut terms = Vec::with_capacity(p.shard_count() * z * kk);
            for (u, rot_u) in rotated.iter().enumerate() {
                for r in 0..z {
                    for (idx, &(k, l)) in offsets.iter().enumerate() {
                        let mut plain = vec![T::zero(); s];
                        for q in 0..nb {
                            let f = p.logical_channel(u, (q + r) % nb);
                            let g = (v * nb + q) % co;
                            let w = kernel.at(f, g, k, l);
                            for i in 0..m {
                                for j in 0..m {
                                    if in_window(m, i, j, k, l) {
                                        plain[q * mm + i * m + j] = w;
                                    }
                                }
                            }
                        }
                        terms.push(ev.mul_plain(&rot_u[r * kk + idx], &plain)?);
                    }
                }
            }
            let acc = ev.sum(&terms)?;
            match bias {
                Some(b) => {
                    let plain: Vec<T> = (0..s).map(|x| b[(v * nb + x / mm) % co]).collect();
                    ev.add_plain(&acc, &plain)
                }
                None => Ok(acc),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    PackedImage::from_parts(shards, m, co, d_out, (0..co).collect(), ShardMode::ImageShard)
}

fn conv_image<T: Scalar>(
    ev: &Evaluator,
    p: &PackedImage<T>,
    kernel: &FilterTensor<T>,
    bias: Option<&[T]>,
) -> Result<PackedImage<T>> {
    check_filter(p, kernel, bias)?;
    let m = p.side();
    let z = channel_rotations(p);
    let offsets = kernel.offsets();
    let amounts: Vec<isize> = (0..z)
        .flat_map(|r| offsets.iter().map(move |&(k, l)| combined_amount(m, r, k, l)))
        .collect();
    let rotated = p
        .shards()
        .par_iter()
        .map(|x| ev.rotate_many(x, &amounts))
        .collect::<Result<Vec<_>>>()?;
    accumulate_image(ev, p, kernel, bias, &rotated)
}

/// Multichannel convolution of a one-shard image whose outputs also fit in
/// one shard. Honors the input's duplication and channel permutation.
pub fn conv_single_shard<T: Scalar>(
    ev: &Evaluator,
    p: &PackedImage<T>,
    kernel: &FilterTensor<T>,
    bias: Option<&[T]>,
) -> Result<PackedImage<T>> {
    if p.mode() != ShardMode::ImageShard || p.shard_count() != 1 {
        return Err(Error::WrongMode("conv_single_shard needs exactly one image shard"));
    }
    let capacity = p.units_per_shard();
    if kernel.out_channels() > capacity {
        return Err(Error::InsufficientCapacity {
            needed: kernel.out_channels(),
            m: p.side(),
            capacity,
        });
    }
    conv_image(ev, p, kernel, bias)
}

/// Convolution over several image shards; output shard `v` sums the
/// contributions of every input shard.
pub fn conv_image_shards<T: Scalar>(
    ev: &Evaluator,
    p: &PackedImage<T>,
    kernel: &FilterTensor<T>,
    bias: Option<&[T]>,
) -> Result<PackedImage<T>> {
    if p.mode() != ShardMode::ImageShard {
        return Err(Error::WrongMode("conv_image_shards needs image shards"));
    }
    conv_image(ev, p, kernel, bias)
}

/// Same-padding, stride-1 convolution in whichever layout `p` uses.
pub fn convolve<T: Scalar>(
    ev: &Evaluator,
    p: &PackedImage<T>,
    kernel: &FilterTensor<T>,
    bias: Option<&[T]>,
) -> Result<PackedImage<T>> {
    match p.mode() {
        ShardMode::ImageShard => conv_image(ev, p, kernel, bias),
        ShardMode::ChannelShard => conv_channel_shards(ev, p, kernel, bias),
    }
}

/// Stride-2 convolution: the stride-1 result, keeping even rows and columns.
pub fn convolve_strided<T: Scalar>(
    ev: &Evaluator,
    p: &PackedImage<T>,
    kernel: &FilterTensor<T>,
    bias: Option<&[T]>,
) -> Result<PackedImage<T>> {
    pool::subsample(ev, &convolve(ev, p, kernel, bias)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::oracle_conv;
    use crate::pack::{pack, unpack, ImageTensor};

    fn ev(s: usize) -> Evaluator {
        Evaluator::new(s, 4).unwrap()
    }

    fn shard(ev: &Evaluator, xs: &[f64]) -> SlotVector<f64> {
        ev.encode(xs.to_vec()).unwrap()
    }

    #[test]
    fn shift_examples() {
        let e = ev(4);
        let x = shard(&e, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(shift(&e, &x, 2, 1, 0).unwrap().slots(), &[3.0, 4.0, 0.0, 0.0]);
        assert_eq!(shift(&e, &x, 2, 0, 1).unwrap().slots(), &[2.0, 0.0, 4.0, 0.0]);
        assert_eq!(shift(&e, &x, 2, -1, -1).unwrap().slots(), &[0.0, 0.0, 0.0, 1.0]);
        let before = e.snapshot();
        let same = shift(&e, &x, 2, 0, 0).unwrap();
        assert_eq!(same.slots(), x.slots());
        assert_eq!(e.snapshot(), before);
        assert!(matches!(shift(&e, &x, 2, 2, 0), Err(Error::ShiftTooLarge { .. })));
    }

    #[test]
    fn shift_acts_on_every_channel() {
        let e = ev(8);
        let x = shard(&e, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let y = shift(&e, &x, 2, 1, 0).unwrap();
        assert_eq!(y.slots(), &[3.0, 4.0, 0.0, 0.0, 7.0, 8.0, 0.0, 0.0]);
    }

    #[test]
    fn conv_single_examples() {
        let e = ev(4);
        let x = shard(&e, &[1.0, 2.0, 3.0, 4.0]);
        let two = FilterTensor::new(1, 1, 1, vec![2.0]).unwrap();
        let y = conv_single(&e, &x, 2, &two).unwrap();
        assert_eq!(y.slots(), &[2.0, 4.0, 6.0, 8.0]);
        assert_eq!(y.depth(), 1);
        let ones = FilterTensor::new(1, 1, 3, vec![1.0; 9]).unwrap();
        assert_eq!(conv_single(&e, &x, 2, &ones).unwrap().slots(), &[10.0; 4]);
        let id = FilterTensor::identity(1, 3).unwrap();
        assert_eq!(conv_single(&e, &x, 2, &id).unwrap().slots(), x.slots());
        assert!(matches!(FilterTensor::<f64>::new(1, 1, 2, vec![0.0; 4]), Err(Error::EvenKernel(2))));
    }

    #[test]
    fn single_shard_identity_and_channel_sum() {
        let e = ev(8);
        let t = ImageTensor::new(2, 2, (1..=8).map(f64::from).collect()).unwrap();
        let p = pack(&e, &t).unwrap();
        let id = FilterTensor::identity(2, 1).unwrap();
        assert_eq!(unpack(&conv_single_shard(&e, &p, &id, None).unwrap()).unwrap(), t);
        let all = FilterTensor::new(2, 2, 1, vec![1.0; 4]).unwrap();
        let out = unpack(&conv_single_shard(&e, &p, &all, None).unwrap()).unwrap();
        assert_eq!(out.data(), &[6.0, 8.0, 10.0, 12.0, 6.0, 8.0, 10.0, 12.0]);
    }

    #[test]
    fn capacity_is_checked() {
        let e = ev(8);
        let t = ImageTensor::<f64>::zeros(1, 2);
        let p = pack(&e, &t).unwrap();
        let wide = FilterTensor::new(1, 4, 1, vec![1.0; 4]).unwrap();
        assert!(matches!(
            conv_single_shard(&e, &p, &wide, None),
            Err(Error::InsufficientCapacity { .. })
        ));
        // the general entry point spills into more shards instead
        let out = convolve(&e, &p, &wide, None).unwrap();
        assert_eq!(out.shard_count(), 2);
    }

    #[test]
    fn image_shard_cases_match_oracle() {
        let e = ev(16);
        let k = |ci, co| {
            FilterTensor::from_fn(ci, co, 3, |f, g, a, b| ((f * 7 + g * 3 + a * 5 + b) % 11) as f64 - 5.0)
                .unwrap()
        };
        for (ci, co) in [(4, 2), (2, 4), (4, 4)] {
            let t = ImageTensor::from_fn(ci, 4, |c, i, j| (c * 16 + i * 4 + j) as f64 * 0.25);
            let p = pack(&e, &t).unwrap();
            let kern = k(ci, co);
            let bias: Vec<f64> = (0..co).map(|g| g as f64 - 1.5).collect();
            let out = conv_image_shards(&e, &p, &kern, Some(&bias)).unwrap();
            assert_eq!(out.shard_count(), (co * 16 / 16).max(1));
            let expect = oracle_conv(&t, &kern, Some(&bias), 1).unwrap();
            assert!(unpack(&out).unwrap().max_abs_diff(&expect) < 1e-9);
            assert!(out.shards().iter().all(|v| v.depth() == 1));
        }
    }

    #[test]
    fn strided_conv_matches_oracle() {
        let e = ev(64);
        let t = ImageTensor::from_fn(2, 4, |c, i, j| ((c + 1) * (i + 2 * j)) as f64 - 4.0);
        let kern = FilterTensor::from_fn(2, 2, 3, |f, g, a, b| (f + g) as f64 * 0.5 - (a * b) as f64).unwrap();
        let p = pack(&e, &t).unwrap();
        let out = unpack(&convolve_strided(&e, &p, &kern, None).unwrap()).unwrap();
        let expect = oracle_conv(&t, &kern, None, 2).unwrap();
        assert!(out.max_abs_diff(&expect) < 1e-9);
    }
}
