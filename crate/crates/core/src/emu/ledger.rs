use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

/// Shared operation counters. Safe to bump from many threads; totals do not
/// depend on the order in which work items finish.
#[derive(Debug, Default)]
pub struct CostLedger {
    rotations: AtomicU64,
    hoisted_rotations: AtomicU64,
    hoist_groups: AtomicU64,
    ct_pt_mults: AtomicU64,
    ct_ct_mults: AtomicU64,
    scalar_mults: AtomicU64,
    adds: AtomicU64,
    bootstraps: AtomicU64,
    max_depth_consumed: AtomicU64,
    rotation_amounts: Mutex<BTreeMap<usize, u64>>,
}

/// Point-in-time copy of a [`CostLedger`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub rotations: u64,
    pub hoisted_rotations: u64,
    pub hoist_groups: u64,
    pub ct_pt_mults: u64,
    pub ct_ct_mults: u64,
    pub scalar_mults: u64,
    pub adds: u64,
    pub bootstraps: u64,
    pub max_depth_consumed: u64,
    /// Nonzero rotation amounts (reduced mod the slot count) and how often each was used.
    pub rotation_amounts: BTreeMap<usize, u64>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn record_rotation(&self, amount: usize, hoisted: bool) {
        if hoisted {
            self.hoisted_rotations.fetch_add(1, Ordering::Relaxed);
        } else {
            self.rotations.fetch_add(1, Ordering::Relaxed);
        }
        let mut amounts = self.rotation_amounts.lock().expect("ledger poisoned");
        *amounts.entry(amount).or_default() += 1;
    }

    pub(crate) fn record_hoist_group(&self) {
        self.hoist_groups.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn record_ct_pt(&self) {
        self.ct_pt_mults.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn record_ct_ct(&self) {
        self.ct_ct_mults.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn record_scalar(&self) {
        self.scalar_mults.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn record_add(&self) {
        self.adds.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn record_bootstrap(&self) {
        self.bootstraps.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn record_depth(&self, depth: u32) {
        self.max_depth_consumed
            .fetch_max(u64::from(depth), Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            rotations: self.rotations.load(Ordering::Relaxed),
            hoisted_rotations: self.hoisted_rotations.load(Ordering::Relaxed),
            hoist_groups: self.hoist_groups.load(Ordering::Relaxed),
            ct_pt_mults: self.ct_pt_mults.load(Ordering::Relaxed),
            ct_ct_mults: self.ct_ct_mults.load(Ordering::Relaxed),
            scalar_mults: self.scalar_mults.load(Ordering::Relaxed),
            adds: self.adds.load(Ordering::Relaxed),
            bootstraps: self.bootstraps.load(Ordering::Relaxed),
            max_depth_consumed: self.max_depth_consumed.load(Ordering::Relaxed),
            rotation_amounts: self
                .rotation_amounts
                .lock()
                .expect("ledger poisoned")
                .clone(),
        }
    }
}

impl LedgerSnapshot {
    /// Counter growth since `earlier`. `max_depth_consumed` is not a counter;
    /// the later value is kept as is.
    pub fn since(&self, earlier: &LedgerSnapshot) -> LedgerSnapshot {
        let mut amounts = self.rotation_amounts.clone();
        for (amount, n) in &earlier.rotation_amounts {
            if let Some(count) = amounts.get_mut(amount) {
                *count -= (*n).min(*count);
            }
        }
        amounts.retain(|_, n| *n > 0);
        LedgerSnapshot {
            rotations: self.rotations - earlier.rotations,
            hoisted_rotations: self.hoisted_rotations - earlier.hoisted_rotations,
            hoist_groups: self.hoist_groups - earlier.hoist_groups,
            ct_pt_mults: self.ct_pt_mults - earlier.ct_pt_mults,
            ct_ct_mults: self.ct_ct_mults - earlier.ct_ct_mults,
            scalar_mults: self.scalar_mults - earlier.scalar_mults,
            adds: self.adds - earlier.adds,
            bootstraps: self.bootstraps - earlier.bootstraps,
            max_depth_consumed: self.max_depth_consumed,
            rotation_amounts: amounts,
        }
    }

    /// Accumulates counters of `other` into `self` (depth takes the max).
    pub fn absorb(&mut self, other: &LedgerSnapshot) {
        self.rotations += other.rotations;
        self.hoisted_rotations += other.hoisted_rotations;
        self.hoist_groups += other.hoist_groups;
        self.ct_pt_mults += other.ct_pt_mults;
        self.ct_ct_mults += other.ct_ct_mults;
        self.scalar_mults += other.scalar_mults;
        self.adds += other.adds;
        self.bootstraps += other.bootstraps;
        self.max_depth_consumed = self.max_depth_consumed.max(other.max_depth_consumed);
        for (amount, n) in &other.rotation_amounts {
            *self.rotation_amounts.entry(*amount).or_default() += n;
        }
    }

    /// Rotation cost with hoisted rotations discounted by `hoist_weight`.
    pub fn weighted_rotations(&self, hoist_weight: f64) -> f64 {
        self.rotations as f64 + hoist_weight * self.hoisted_rotations as f64
    }

    pub fn distinct_rotation_amounts(&self) -> usize {
        self.rotation_amounts.len()
    }
}
