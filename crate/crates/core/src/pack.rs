//! Row-major channel packing into shards.
//!
//! Layouts:
//!
//! * `ImageShard` (`m^2 <= s`): each shard holds `s / m^2` channel units of
//!   `m^2` slots. Physical channel `g` lives in shard `g / nb`, unit `g % nb`
//!   (`nb = s / m^2`). When the whole image is smaller than a shard it is
//!   tiled `d = s / (m^2 c)` times, copy-major, so unit `q` holds physical
//!   channel `q mod c`.
//! * `ChannelShard` (`m^2 > s`): every channel is split into `m^2 / s`
//!   shards of `s / m` consecutive rows.
//!
//! Physical channel `g` holds logical channel `tau[g]`.

use crate::emu::{Evaluator, SlotVector};
use crate::{Error, Result, Scalar};

/// Plaintext `c x m x m` tensor, stored channel-major then row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor<T> {
    c: usize,
    m: usize,
    data: Vec<T>,
}

impl<T: Scalar> ImageTensor<T> {
    pub fn new(c: usize, m: usize, data: Vec<T>) -> Result<Self> {
        if c == 0 || m == 0 {
            return Err(Error::Shape(format!("empty tensor {c}x{m}x{m}")));
        }
        if data.len() != c * m * m {
            return Err(Error::Shape(format!(
                "tensor {c}x{m}x{m} needs {} values, got {}",
                c * m * m,
                data.len()
            )));
        }
        Ok(Self { c, m, data })
    }

    pub fn zeros(c: usize, m: usize) -> Self {
        Self {
            c,
            m,
            data: vec![T::zero(); c * m * m],
        }
    }

    pub fn from_fn(c: usize, m: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(c * m * m);
        for ch in 0..c {
            for i in 0..m {
                for j in 0..m {
                    data.push(f(ch, i, j));
                }
            }
        }
        Self { c, m, data }
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn side(&self) -> usize {
        self.m
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn channel(&self, ch: usize) -> &[T] {
        let n = self.m * self.m;
        &self.data[ch * n..(ch + 1) * n]
    }

    pub fn get(&self, ch: usize, i: usize, j: usize) -> T {
        self.data[(ch * self.m + i) * self.m + j]
    }

    pub fn set(&mut self, ch: usize, i: usize, j: usize, v: T) {
        self.data[(ch * self.m + i) * self.m + j] = v;
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.c, self.m), (other.c, other.m), "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs().as_f64())
            .fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            c: self.c,
            m: self.m,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShardMode {
    ImageShard,
    ChannelShard,
}

#[derive(Clone, Debug)]
pub struct PackedImage<T> {
    shards: Vec<SlotVector<T>>,
    m: usize,
    c: usize,
    d: usize,
    tau: Vec<usize>,
    mode: ShardMode,
}

impl<T: Scalar> PackedImage<T> {
    /// Assembles a packed image and checks every layout invariant.
    pub fn from_parts(
        shards: Vec<SlotVector<T>>,
        m: usize,
        c: usize,
        d: usize,
        tau: Vec<usize>,
        mode: ShardMode,
    ) -> Result<Self> {
        let image = Self {
            shards,
            m,
            c,
            d,
            tau,
            mode,
        };
        image.validate()?;
        Ok(image)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Layout(msg));
        let Some(first) = self.shards.first() else {
            return bad("no shards".into());
        };
        let s = first.len();
        if self.shards.iter().any(|v| v.len() != s) {
            return bad("shards differ in length".into());
        }
        if !s.is_power_of_two() || !self.m.is_power_of_two() || self.c == 0 || self.d == 0 {
            return bad(format!("bad dims s={s} m={} c={} d={}", self.m, self.c, self.d));
        }
        if !is_permutation(&self.tau, self.c) {
            return bad(format!("tau {:?} is not a permutation of 0..{}", self.tau, self.c));
        }
        let mm = self.m * self.m;
        let t = self.shards.len();
        match self.mode {
            ShardMode::ImageShard => {
                if mm > s {
                    return bad(format!("image shard with m^2={mm} > s={s}"));
                }
                if t * s != mm * self.c * self.d {
                    return bad(format!(
                        "{t} shards of {s} slots cannot hold {} channels of {mm} slots x{}",
                        self.c, self.d
                    ));
                }
                if t > 1 && self.d != 1 {
                    return bad("duplication across several shards".into());
                }
            }
            ShardMode::ChannelShard => {
                if mm <= s {
                    return bad(format!("channel shard with m^2={mm} <= s={s}"));
                }
                if self.d != 1 || self.tau.iter().enumerate().any(|(i, &x)| i != x) {
                    return bad("channel shards carry no duplication or permutation".into());
                }
                if t * s != self.c * mm {
                    return bad(format!("expected {} channel shards, got {t}", self.c * mm / s));
                }
            }
        }
        Ok(())
    }

    pub fn shards(&self) -> &[SlotVector<T>] {
        &self.shards
    }

    pub fn into_shards(self) -> Vec<SlotVector<T>> {
        self.shards
    }

    pub fn side(&self) -> usize {
        self.m
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn duplication(&self) -> usize {
        self.d
    }

    pub fn tau(&self) -> &[usize] {
        &self.tau
    }

    pub fn mode(&self) -> ShardMode {
        self.mode
    }

    pub fn slots(&self) -> usize {
        self.shards[0].len()
    }

    pub fn shard_count(&self) -> usize {
        self.shards.len()
    }

    /// Channel units per shard (`ImageShard` only).
    pub fn units_per_shard(&self) -> usize {
        self.slots() / (self.m * self.m)
    }

    /// Rows per shard (`ChannelShard` only).
    pub fn rows_per_shard(&self) -> usize {
        self.slots() / self.m
    }

    /// Shards per channel (`ChannelShard` only).
    pub fn shards_per_channel(&self) -> usize {
        self.m * self.m / self.slots()
    }

    /// Physical channel stored at unit `q` of shard `u`.
    pub fn physical_channel(&self, u: usize, q: usize) -> usize {
        (u * self.units_per_shard() + q) % self.c
    }

    /// Logical channel stored at unit `q` of shard `u`.
    pub fn logical_channel(&self, u: usize, q: usize) -> usize {
        self.tau[self.physical_channel(u, q)]
    }

    pub fn min_level(&self) -> u32 {
        self.shards.iter().map(SlotVector::level).min().unwrap_or(0)
    }

    /// Same metadata, new shard contents.
    pub fn with_shards(&self, shards: Vec<SlotVector<T>>) -> Result<Self> {
        Self::from_parts(shards, self.m, self.c, self.d, self.tau.clone(), self.mode)
    }
}

pub(crate) fn is_permutation(p: &[usize], n: usize) -> bool {
    if p.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &x in p {
        if x >= n || seen[x] {
            return false;
        }
        seen[x] = true;
    }
    true
}

/// Packs `t` into shards of `ev.slots()` slots at the evaluator's top level.
pub fn pack<T: Scalar>(ev: &Evaluator, t: &ImageTensor<T>) -> Result<PackedImage<T>> {
    let s = ev.slots();
    let (c, m) = (t.channels(), t.side());
    if !m.is_power_of_two() {
        return Err(Error::NotPowerOfTwo {
            what: "channel side",
            value: m,
        });
    }
    let mm = m * m;
    let total = mm * c;
    let (mode, d) = if mm > s {
        (ShardMode::ChannelShard, 1)
    } else if total <= s {
        if !s.is_multiple_of(total) {
            return Err(Error::NotPowerOfTwo {
                what: "channel count",
                value: c,
            });
        }
        (ShardMode::ImageShard, s / total)
    } else {
        if total % s != 0 {
            return Err(Error::NotPowerOfTwo {
                what: "channel count",
                value: c,
            });
        }
        (ShardMode::ImageShard, 1)
    };
    // With copy-major duplication every layout is the flat tensor, tiled d
    // times, cut into s-slot pieces.
    let flat: Vec<T> = if d > 1 {
        t.data().iter().copied().cycle().take(s).collect()
    } else {
        t.data().to_vec()
    };
    let shards = flat
        .chunks(s)
        .map(|chunk| ev.encode(chunk.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    PackedImage::from_parts(shards, m, c, d, (0..c).collect(), mode)
}

/// Like [`pack`], but physical channel `g` holds logical channel `tau[g]`.
pub fn pack_permuted<T: Scalar>(ev: &Evaluator, t: &ImageTensor<T>, tau: &[usize]) -> Result<PackedImage<T>> {
    if !is_permutation(tau, t.channels()) {
        return Err(Error::Layout(format!("tau {tau:?} is not a permutation")));
    }
    let m = t.side();
    let mut data = Vec::with_capacity(t.data().len());
    for &logical in tau {
        data.extend_from_slice(t.channel(logical));
    }
    let physical = ImageTensor::new(t.channels(), m, data)?;
    let p = pack(ev, &physical)?;
    PackedImage::from_parts(p.shards.clone(), m, p.c, p.d, tau.to_vec(), p.mode)
}

/// Decodes a packed image back to its logical tensor, reading channels
/// through `tau` and ignoring duplicate copies.
pub fn unpack<T: Scalar>(p: &PackedImage<T>) -> Result<ImageTensor<T>> {
    p.validate()?;
    let (c, m) = (p.channels(), p.side());
    let mm = m * m;
    let mut out = ImageTensor::zeros(c, m);
    match p.mode() {
        ShardMode::ImageShard => {
            let nb = p.units_per_shard();
            for g in 0..c {
                let (u, q) = (g / nb, g % nb);
                let src = &p.shards[u].slots()[q * mm..(q + 1) * mm];
                let logical = p.tau[g];
                out.data[logical * mm..(logical + 1) * mm].copy_from_slice(src);
            }
        }
        ShardMode::ChannelShard => {
            let s = p.slots();
            for (w, shard) in p.shards.iter().enumerate() {
                out.data[w * s..(w + 1) * s].copy_from_slice(shard.slots());
            }
        }
    }
    Ok(out)
}
