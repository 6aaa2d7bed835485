//! BatchNorm folding, rotate-and-sum linear layers, and the fused
//! global-average-pool + linear layer.

use rayon::prelude::*;

use crate::conv::FilterTensor;
use crate::emu::{Evaluator, SlotVector};
use crate::pack::{PackedImage, ShardMode};
use crate::{Error, Result, Scalar};

/// Per-output-channel affine map `y = scale * x + bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineParams<T> {
    pub scale: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> AffineParams<T> {
    pub fn new(scale: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if scale.len() != bias.len() {
            return Err(Error::Shape("affine scale and bias differ in length".into()));
        }
        Ok(Self { scale, bias })
    }

    /// Inference-time batch norm: `gamma (x - mean) / sqrt(var + eps) + beta`.
    pub fn from_batch_norm(gamma: &[T], beta: &[T], mean: &[T], var: &[T], eps: T) -> Result<Self> {
        let n = gamma.len();
        if beta.len() != n || mean.len() != n || var.len() != n {
            return Err(Error::Shape("batch norm parameters differ in length".into()));
        }
        let scale: Vec<T> = (0..n).map(|i| gamma[i] / (var[i] + eps).sqrt()).collect();
        let bias = (0..n).map(|i| beta[i] - scale[i] * mean[i]).collect();
        Self::new(scale, bias)
    }

    pub fn len(&self) -> usize {
        self.scale.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scale.is_empty()
    }
}

/// Folds an affine map that follows a convolution into its weights and bias.
pub fn fold_bn<T: Scalar>(
    k: &FilterTensor<T>,
    bias: Option<&[T]>,
    bn: &AffineParams<T>,
) -> Result<(FilterTensor<T>, Vec<T>)> {
    let co = k.out_channels();
    if bn.len() != co || bias.is_some_and(|b| b.len() != co) {
        return Err(Error::Shape(format!("folding {} affine channels into {co}", bn.len())));
    }
    let kernel = FilterTensor::from_fn(k.in_channels(), co, k.size(), |f, g, a, b| {
        bn.scale[g] * k.get(f, g, a, b)
    })?;
    let b = (0..co)
        .map(|g| bn.scale[g] * bias.map_or(T::zero(), |b| b[g]) + bn.bias[g])
        .collect();
    Ok((kernel, b))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearWeights<T> {
    out: usize,
    inp: usize,
    w: Vec<T>,
    b: Vec<T>,
}

impl<T: Scalar> LinearWeights<T> {
    /// `w` is row-major `out x inp`.
    pub fn new(out: usize, inp: usize, w: Vec<T>, b: Vec<T>) -> Result<Self> {
        if w.len() != out * inp || b.len() != out || out == 0 || inp == 0 {
            return Err(Error::Shape(format!(
                "linear {out}x{inp} got {} weights and {} biases",
                w.len(),
                b.len()
            )));
        }
        Ok(Self { out, inp, w, b })
    }

    pub fn from_fn(out: usize, inp: usize, mut f: impl FnMut(usize, usize) -> T, b: Vec<T>) -> Result<Self> {
        let mut w = Vec::with_capacity(out * inp);
        for o in 0..out {
            for i in 0..inp {
                w.push(f(o, i));
            }
        }
        Self::new(out, inp, w, b)
    }

    pub fn out_features(&self) -> usize {
        self.out
    }

    pub fn in_features(&self) -> usize {
        self.inp
    }

    pub fn row(&self, o: usize) -> &[T] {
        &self.w[o * self.inp..(o + 1) * self.inp]
    }

    pub fn bias(&self) -> &[T] {
        &self.b
    }
}

/// Rotate-and-add over blocks of `block` slots: `log2(block)` rotations.
/// Slot `i` ends up holding the sum of slots `i..i + block` (cyclically),
/// so each block's first slot holds that block's sum, and with
/// `block == s` every slot holds the total.
pub fn slot_sum<T: Scalar>(ev: &Evaluator, v: &SlotVector<T>, block: usize) -> Result<SlotVector<T>> {
    if !block.is_power_of_two() || !v.len().is_multiple_of(block) {
        return Err(Error::NotPowerOfTwo {
            what: "slot_sum block",
            value: block,
        });
    }
    let mut acc = v.clone();
    let mut step = 1;
    while step < block {
        acc = ev.add(&acc, &ev.rotate(&acc, step as isize))?;
        step *= 2;
    }
    Ok(acc)
}

/// Flat logical feature index of every slot that holds a first copy.
fn feature_slots<T: Scalar>(p: &PackedImage<T>) -> Vec<Vec<Option<(usize, usize)>>> {
    let (s, m) = (p.slots(), p.side());
    let mm = m * m;
    match p.mode() {
        ShardMode::ImageShard => {
            let nb = p.units_per_shard();
            (0..p.shard_count())
                .map(|u| {
                    (0..s)
                        .map(|x| {
                            let (q, pos) = (x / mm, x % mm);
                            (u * nb + q < p.channels()).then(|| (p.logical_channel(u, q), pos))
                        })
                        .collect()
                })
                .collect()
        }
        ShardMode::ChannelShard => {
            let per = p.shards_per_channel();
            (0..p.shard_count())
                .map(|w| (0..s).map(|x| Some((w / per, (w % per) * s + x))).collect())
                .collect()
        }
    }
}

/// Shared tail of the dense layers: for each output, masked products per
/// shard, one full slot sum, then placement at slot `o`.
fn dense_core<T: Scalar>(
    ev: &Evaluator,
    shards: &[SlotVector<T>],
    weight: impl Fn(usize, usize, usize) -> T + Sync,
    w: &LinearWeights<T>,
) -> Result<SlotVector<T>> {
    let s = ev.slots();
    if w.out_features() > s {
        return Err(Error::Shape(format!("{} outputs exceed {s} slots", w.out_features())));
    }
    let min_level = shards.iter().map(SlotVector::level).min().unwrap_or(0);
    if min_level < 2 {
        return Err(Error::InsufficientLevel {
            need: 2,
            have: min_level,
        });
    }
    let outputs = (0..w.out_features())
        .into_par_iter()
        .map(|o| {
            let products = shards
                .iter()
                .enumerate()
                .map(|(u, v)| {
                    let plain: Vec<T> = (0..s).map(|x| weight(o, u, x)).collect();
                    ev.mul_plain(v, &plain)
                })
                .collect::<Result<Vec<_>>>()?;
            let total = slot_sum(ev, &ev.sum(&products)?, s)?;
            let mut e = vec![T::zero(); s];
            e[o] = T::one();
            ev.mul_plain(&total, &e)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut bias = vec![T::zero(); s];
    bias[..w.out_features()].copy_from_slice(w.bias());
    ev.add_plain(&ev.sum(&outputs)?, &bias)
}

/// `W x + b` over the logical flattening (channel, row, col) of `p`.
/// Results occupy slots `0..out`, the rest are zero.
pub fn linear<T: Scalar>(ev: &Evaluator, p: &PackedImage<T>, w: &LinearWeights<T>) -> Result<SlotVector<T>> {
    let mm = p.side() * p.side();
    if w.in_features() != p.channels() * mm {
        return Err(Error::Shape(format!(
            "linear expects {} features, image has {}",
            w.in_features(),
            p.channels() * mm
        )));
    }
    let map = feature_slots(p);
    dense_core(
        ev,
        p.shards(),
        |o, u, x| map[u][x].map_or(T::zero(), |(f, pos)| w.row(o)[f * mm + pos]),
        w,
    )
}

/// `W x + b` for features in slots `0..in` of one vector.
pub fn linear_features<T: Scalar>(
    ev: &Evaluator,
    x: &SlotVector<T>,
    w: &LinearWeights<T>,
) -> Result<SlotVector<T>> {
    if w.in_features() > x.len() {
        return Err(Error::Shape("more features than slots".into()));
    }
    let n = w.in_features();
    dense_core(
        ev,
        std::slice::from_ref(x),
        |o, _, i| if i < n { w.row(o)[i] } else { T::zero() },
        w,
    )
}

/// Linear layer on per-channel means: each weight is spread over its
/// channel's `m^2` slots and divided by `m^2`.
pub fn pool_linear<T: Scalar>(
    ev: &Evaluator,
    p: &PackedImage<T>,
    w: &LinearWeights<T>,
) -> Result<SlotVector<T>> {
    if w.in_features() != p.channels() {
        return Err(Error::Shape(format!(
            "pool-linear expects {} channels, image has {}",
            w.in_features(),
            p.channels()
        )));
    }
    let norm = T::of((p.side() * p.side()) as f64);
    let map = feature_slots(p);
    dense_core(
        ev,
        p.shards(),
        |o, u, x| map[u][x].map_or(T::zero(), |(f, _)| w.row(o)[f] / norm),
        w,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::convolve;
    use crate::oracle::{oracle_conv, oracle_global_avgpool, oracle_linear};
    use crate::pack::{pack, unpack, ImageTensor};

    #[test]
    fn slot_sum_examples() {
        let ev = Evaluator::new(4, 2).unwrap();
        let v = ev.encode(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let before = ev.snapshot();
        assert_eq!(slot_sum(&ev, &v, 4).unwrap().slots(), &[10.0; 4]);
        assert_eq!(ev.snapshot().since(&before).rotations, 2);
        let before = ev.snapshot();
        assert_eq!(slot_sum(&ev, &v, 1).unwrap().slots(), v.slots());
        assert_eq!(ev.snapshot().since(&before).rotations, 0);
        assert_eq!(slot_sum(&ev, &v, 2).unwrap().slots()[2], 7.0);
        assert!(slot_sum(&ev, &v, 3).is_err());
    }

    #[test]
    fn fold_bn_examples() {
        let k = FilterTensor::from_fn(2, 2, 3, |f, g, a, b| (f + g * 2 + a * 3 + b) as f64 - 4.0).unwrap();
        let unit = AffineParams::new(vec![1.0; 2], vec![0.0; 2]).unwrap();
        let (same, b) = fold_bn(&k, None, &unit).unwrap();
        assert_eq!(same, k);
        assert_eq!(b, vec![0.0; 2]);
        let dbl = AffineParams::new(vec![2.0, 1.0], vec![0.0; 2]).unwrap();
        let (k2, _) = fold_bn(&k, None, &dbl).unwrap();
        assert_eq!(k2.get(1, 0, 2, 2), 2.0 * k.get(1, 0, 2, 2));
        assert_eq!(k2.get(1, 1, 2, 2), k.get(1, 1, 2, 2));
        assert!(fold_bn(&k, None, &AffineParams::new(vec![1.0], vec![0.0]).unwrap()).is_err());
    }

    #[test]
    fn folded_conv_equals_conv_then_affine() {
        let ev = Evaluator::new(64, 2).unwrap();
        let t = ImageTensor::from_fn(2, 4, |c, i, j| ((c * 13 + i * 5 + j * 3) % 9) as f64 * 0.3 - 1.0);
        let k = FilterTensor::from_fn(2, 4, 3, |f, g, a, b| ((f * 3 + g + a * b) % 5) as f64 * 0.2).unwrap();
        let bias = [0.1, -0.2, 0.3, 0.0];
        let bn = AffineParams::new(vec![1.5, -0.5, 2.0, 0.75], vec![0.25, 1.0, -3.0, 0.5]).unwrap();
        let before = ev.snapshot();
        let (kf, bf) = fold_bn(&k, Some(&bias), &bn).unwrap();
        assert_eq!(ev.snapshot(), before);
        let raw = oracle_conv(&t, &k, Some(&bias), 1).unwrap();
        let expect = ImageTensor::from_fn(4, 4, |g, i, j| bn.scale[g] * raw.get(g, i, j) + bn.bias[g]);
        let got = unpack(&convolve(&ev, &pack(&ev, &t).unwrap(), &kf, Some(&bf)).unwrap()).unwrap();
        assert!(got.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn linear_identity_and_ones() {
        let ev = Evaluator::new(16, 2).unwrap();
        let t = ImageTensor::from_fn(1, 2, |_, i, j| (i * 2 + j) as f64 + 1.0);
        let p = pack(&ev, &t).unwrap();
        let id = LinearWeights::from_fn(4, 4, |o, i| if o == i { 1.0 } else { 0.0 }, vec![0.0; 4]).unwrap();
        let y = linear(&ev, &p, &id).unwrap();
        assert_eq!(&y.slots()[..4], t.data());
        assert!(y.slots()[4..].iter().all(|&x| x == 0.0));
        assert_eq!(y.depth(), 2);
        let ones = LinearWeights::new(1, 4, vec![1.0; 4], vec![0.5]).unwrap();
        assert_eq!(linear(&ev, &p, &ones).unwrap().slots()[0], 10.5);
    }

    #[test]
    fn pool_linear_matches_oracle() {
        let ev = Evaluator::new(32, 2).unwrap();
        let t = ImageTensor::from_fn(4, 4, |c, i, j| (c as f64 - 1.5) * (i + j) as f64);
        let w = LinearWeights::from_fn(3, 4, |o, i| (o * 4 + i) as f64 * 0.1 - 0.3, vec![1.0, 0.0, -1.0]).unwrap();
        let got = pool_linear(&ev, &pack(&ev, &t).unwrap(), &w).unwrap();
        let expect = oracle_linear(&oracle_global_avgpool(&t), &w).unwrap();
        for (o, e) in expect.iter().enumerate() {
            assert!((got.slots()[o] - e).abs() < 1e-12);
        }
        let c1 = ImageTensor::from_fn(1, 2, |_, _, _| 3.0f64);
        let one = LinearWeights::new(1, 1, vec![1.0], vec![0.0]).unwrap();
        let ev = Evaluator::new(4, 2).unwrap();
        assert!((pool_linear(&ev, &pack(&ev, &c1).unwrap(), &one).unwrap().slots()[0] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn linear_on_features() {
        let ev = Evaluator::new(8, 2).unwrap();
        let x = ev.encode(vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let w = LinearWeights::new(2, 3, vec![1.0, 0.0, -1.0, 0.5, 0.5, 0.5], vec![0.0, 1.0]).unwrap();
        let y = linear_features(&ev, &x, &w).unwrap();
        assert_eq!(&y.slots()[..3], &[-2.0, 4.0, 0.0]);
    }
}
