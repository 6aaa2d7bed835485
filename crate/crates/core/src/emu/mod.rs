//! Emulated SIMD ciphertext.
//!
//! A [`SlotVector`] is a fixed-length array of reals plus a remaining
//! multiplicative level. All arithmetic goes through an [`Evaluator`], which
//! owns the shared [`CostLedger`] and the bootstrap noise source. Levels are
//! bookkeeping only: slot values stay in full precision whatever the level.
//!
//! Depth accounting: every vector carries the number of multiplications on
//! its longest producing path since the last encode or bootstrap. A
//! plaintext-vector or ciphertext multiply adds one; multiplication by a
//! single scalar constant is folded into scale management and is free.

mod ledger;
mod noise;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use ledger::{CostLedger, LedgerSnapshot};
pub use noise::{NoiseModel, METABTS_PRECISION_GAIN};

use crate::{Error, Result, Scalar};

/// Default slot count used throughout the tests.
pub const DEFAULT_SLOTS: usize = 1 << 12;
/// Default ledger weight of a hoisted rotation relative to a plain one.
pub const DEFAULT_HOIST_WEIGHT: f64 = 0.5;

/// Emulated ciphertext. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotVector<T> {
    slots: Vec<T>,
    level: u32,
    depth: u32,
    id: u64,
}

impl<T: Scalar> SlotVector<T> {
    pub fn slots(&self) -> &[T] {
        &self.slots
    }

    pub fn into_slots(self) -> Vec<T> {
        self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Multiplications on the longest path that produced this vector.
    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Handle used to group same-source rotations.
    pub fn id(&self) -> u64 {
        self.id
    }
}

pub struct Evaluator {
    slots: usize,
    top_level: u32,
    noise: NoiseModel,
    hoist_weight: f64,
    ledger: Arc<CostLedger>,
    rng: Mutex<ChaCha8Rng>,
    next_id: AtomicU64,
}

impl std::fmt::Debug for Evaluator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Evaluator")
            .field("slots", &self.slots)
            .field("top_level", &self.top_level)
            .field("noise", &self.noise)
            .field("hoist_weight", &self.hoist_weight)
            .finish()
    }
}

impl Evaluator {
    pub fn new(slots: usize, top_level: u32) -> Result<Self> {
        if !slots.is_power_of_two() {
            return Err(Error::NotPowerOfTwo {
                what: "slot count",
                value: slots,
            });
        }
        Ok(Self {
            slots,
            top_level,
            noise: NoiseModel::off(),
            hoist_weight: DEFAULT_HOIST_WEIGHT,
            ledger: Arc::new(CostLedger::new()),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(0)),
            next_id: AtomicU64::new(0),
        })
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.rng = Mutex::new(ChaCha8Rng::seed_from_u64(noise.seed));
        self.noise = noise;
        self
    }

    pub fn with_hoist_weight(mut self, weight: f64) -> Self {
        self.hoist_weight = weight;
        self
    }

    /// Shares an existing ledger instead of starting a fresh one.
    pub fn with_ledger(mut self, ledger: Arc<CostLedger>) -> Self {
        self.ledger = ledger;
        self
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn top_level(&self) -> u32 {
        self.top_level
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn hoist_weight(&self) -> f64 {
        self.hoist_weight
    }

    pub fn ledger(&self) -> &Arc<CostLedger> {
        &self.ledger
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        self.ledger.snapshot()
    }

    fn fresh_id(&self) -> u64 {
        self.next_id.fetch_add(1, Ordering::Relaxed)
    }

    fn make<T: Scalar>(&self, slots: Vec<T>, level: u32, depth: u32) -> SlotVector<T> {
        self.ledger.record_depth(depth);
        SlotVector {
            slots,
            level,
            depth,
            id: self.fresh_id(),
        }
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got == self.slots {
            Ok(())
        } else {
            Err(Error::LengthMismatch {
                expected: self.slots,
                got,
            })
        }
    }

    /// Encodes a plaintext at the top level.
    pub fn encode<T: Scalar>(&self, slots: Vec<T>) -> Result<SlotVector<T>> {
        self.encode_at(slots, self.top_level)
    }

    pub fn encode_at<T: Scalar>(&self, slots: Vec<T>, level: u32) -> Result<SlotVector<T>> {
        self.check_len(slots.len())?;
        Ok(self.make(slots, level, 0))
    }

    /// Left cyclic rotation: output slot `i` is input slot `(i + k) mod s`.
    pub fn rotate<T: Scalar>(&self, v: &SlotVector<T>, k: isize) -> SlotVector<T> {
        self.rotate_inner(v, k, false)
    }

    fn rotate_inner<T: Scalar>(&self, v: &SlotVector<T>, k: isize, hoisted: bool) -> SlotVector<T> {
        let s = v.slots.len();
        let amount = k.rem_euclid(s as isize) as usize;
        if amount == 0 {
            return v.clone();
        }
        self.ledger.record_rotation(amount, hoisted);
        let mut out = Vec::with_capacity(s);
        out.extend_from_slice(&v.slots[amount..]);
        out.extend_from_slice(&v.slots[..amount]);
        self.make(out, v.level, v.depth)
    }

    /// Rotations of one source sharing precomputation. Values equal
    /// individual [`rotate`](Self::rotate) calls; only the ledger differs.
    pub fn rotate_many<T: Scalar>(
        &self,
        v: &SlotVector<T>,
        ks: &[isize],
    ) -> Result<Vec<SlotVector<T>>> {
        if ks.is_empty() {
            return Err(Error::EmptyRotationBatch);
        }
        self.ledger.record_hoist_group();
        Ok(ks.iter().map(|&k| self.rotate_inner(v, k, true)).collect())
    }

    pub fn mul_plain<T: Scalar>(&self, v: &SlotVector<T>, p: &[T]) -> Result<SlotVector<T>> {
        self.check_len(p.len())?;
        if v.level == 0 {
            return Err(Error::DepthExhausted);
        }
        self.ledger.record_ct_pt();
        let out = v.slots.iter().zip(p).map(|(&a, &b)| a * b).collect();
        Ok(self.make(out, v.level - 1, v.depth + 1))
    }

    pub fn mul_ct<T: Scalar>(&self, a: &SlotVector<T>, b: &SlotVector<T>) -> Result<SlotVector<T>> {
        self.check_len(a.len())?;
        self.check_len(b.len())?;
        if a.level == 0 || b.level == 0 {
            return Err(Error::DepthExhausted);
        }
        self.ledger.record_ct_ct();
        let out = a.slots.iter().zip(&b.slots).map(|(&x, &y)| x * y).collect();
        Ok(self.make(out, a.level.min(b.level) - 1, a.depth.max(b.depth) + 1))
    }

    /// Multiplication by one constant for every slot; consumes no level.
    pub fn mul_scalar<T: Scalar>(&self, v: &SlotVector<T>, c: T) -> SlotVector<T> {
        self.ledger.record_scalar();
        let out = v.slots.iter().map(|&a| a * c).collect();
        self.make(out, v.level, v.depth)
    }

    pub fn add<T: Scalar>(&self, a: &SlotVector<T>, b: &SlotVector<T>) -> Result<SlotVector<T>> {
        self.check_len(a.len())?;
        self.check_len(b.len())?;
        self.ledger.record_add();
        let out = a.slots.iter().zip(&b.slots).map(|(&x, &y)| x + y).collect();
        Ok(self.make(out, a.level.min(b.level), a.depth.max(b.depth)))
    }

    pub fn sub<T: Scalar>(&self, a: &SlotVector<T>, b: &SlotVector<T>) -> Result<SlotVector<T>> {
        self.check_len(a.len())?;
        self.check_len(b.len())?;
        self.ledger.record_add();
        let out = a.slots.iter().zip(&b.slots).map(|(&x, &y)| x - y).collect();
        Ok(self.make(out, a.level.min(b.level), a.depth.max(b.depth)))
    }

    pub fn add_plain<T: Scalar>(&self, v: &SlotVector<T>, p: &[T]) -> Result<SlotVector<T>> {
        self.check_len(p.len())?;
        self.ledger.record_add();
        let out = v.slots.iter().zip(p).map(|(&a, &b)| a + b).collect();
        Ok(self.make(out, v.level, v.depth))
    }

    pub fn add_scalar<T: Scalar>(&self, v: &SlotVector<T>, c: T) -> SlotVector<T> {
        self.ledger.record_add();
        let out = v.slots.iter().map(|&a| a + c).collect();
        self.make(out, v.level, v.depth)
    }

    /// Sums a nonempty list left to right.
    pub fn sum<'a, T: Scalar>(
        &self,
        terms: impl IntoIterator<Item = &'a SlotVector<T>>,
    ) -> Result<SlotVector<T>> {
        let mut iter = terms.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::Invalid("sum of no vectors".into()))?;
        iter.try_fold(first.clone(), |acc, v| self.add(&acc, v))
    }

    /// Restores the level to `target_level` (one less under MetaBTS) and,
    /// if noise is enabled, adds i.i.d. Gaussian noise to every slot.
    pub fn bootstrap<T: Scalar>(&self, v: &SlotVector<T>, target_level: u32) -> Result<SlotVector<T>> {
        if target_level <= v.level {
            return Err(Error::UselessBootstrap {
                level: v.level,
                target: target_level,
            });
        }
        self.ledger.record_bootstrap();
        let level = target_level - self.noise.extra_level_cost().min(target_level);
        let sigma = self.noise.effective_sigma();
        let slots = if sigma > 0.0 {
            let mut rng = self.rng.lock().expect("rng poisoned");
            v.slots
                .iter()
                .map(|&x| {
                    let z: f64 = StandardNormal.sample(&mut *rng);
                    x + T::of(sigma * z)
                })
                .collect()
        } else {
            v.slots.clone()
        };
        Ok(SlotVector {
            slots,
            level,
            depth: 0,
            id: self.fresh_id(),
        })
    }
}
