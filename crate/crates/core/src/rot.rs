//! Decomposing rotation amounts into power-of-two keyed rotations, and
//! planning batches of requests onto those keys.

use std::collections::{BTreeMap, VecDeque};

use crate::emu::{Evaluator, LedgerSnapshot, SlotVector};
use crate::{Error, Result, Scalar};

/// Largest `n` accepted by the breadth-first search.
pub const BFS_CAP: usize = 1 << 14;
const BFS_RANGE: i64 = 1 << 16;

/// Binary digits of `n mod s`, largest first.
pub fn decompose_positive(n: usize, s: usize) -> Vec<i64> {
    let n = n % s.max(1);
    (0..usize::BITS)
        .rev()
        .filter(|&b| n >> b & 1 == 1)
        .map(|b| 1i64 << b)
        .collect()
}

/// Power of two nearest to `x >= 1`; ties go to the smaller one.
fn nearest_power(x: u64) -> u64 {
    let lo = 1u64 << x.ilog2();
    let hi = lo << 1;
    if x - lo <= hi - x {
        lo
    } else {
        hi
    }
}

/// Greedy signed decomposition: take the nearest power of two, then
/// decompose what is left (with its sign). Steps sum to `n` exactly; a
/// step equal to `s` is a full turn and is dropped by the planner.
pub fn decompose_signed(n: usize, _s: usize) -> Vec<i64> {
    let mut steps = Vec::new();
    let mut rest = n as i64;
    while rest != 0 {
        let p = nearest_power(rest.unsigned_abs()) as i64;
        let step = p * rest.signum();
        steps.push(step);
        rest -= step;
    }
    steps
}

/// Minimal number of signed power-of-two terms for every `n < limit`, by
/// breadth-first search from zero.
pub fn min_length_table(limit: usize) -> Result<Vec<u32>> {
    if limit > BFS_CAP {
        return Err(Error::CapExceeded {
            value: limit,
            cap: BFS_CAP,
        });
    }
    let width = (2 * BFS_RANGE + 1) as usize;
    let mut dist = vec![u32::MAX; width];
    let idx = |v: i64| (v + BFS_RANGE) as usize;
    dist[idx(0)] = 0;
    let mut queue = VecDeque::from([0i64]);
    let steps: Vec<i64> = (0..=16).map(|k| 1i64 << k).collect();
    while let Some(v) = queue.pop_front() {
        let d = dist[idx(v)];
        for &p in &steps {
            for w in [v + p, v - p] {
                if w.abs() <= BFS_RANGE && dist[idx(w)] == u32::MAX {
                    dist[idx(w)] = d + 1;
                    queue.push_back(w);
                }
            }
        }
    }
    Ok((0..limit as i64).map(|n| dist[idx(n)]).collect())
}

pub fn min_decomposition_length(n: usize) -> Result<u32> {
    if n >= BFS_CAP {
        return Err(Error::CapExceeded { value: n, cap: BFS_CAP });
    }
    Ok(min_length_table(n + 1)?[n])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Positive,
    Signed,
}

impl Strategy {
    pub fn decompose(self, n: usize, s: usize) -> Vec<i64> {
        match self {
            Strategy::Positive => decompose_positive(n, s),
            Strategy::Signed => decompose_signed(n % s, s),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KeySet {
    /// Keys for every power of two; other amounts are decomposed.
    PowersOfTwo,
    /// A key for every requested amount.
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RotationRequest {
    pub amount: usize,
    /// Requests with the same source rotate the same ciphertext.
    pub source: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlannedRotation {
    pub request: RotationRequest,
    pub steps: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schedule {
    pub slots: usize,
    pub rotations: Vec<PlannedRotation>,
    /// Indices into `rotations` whose first steps share one hoist.
    pub hoist_groups: Vec<Vec<usize>>,
}

impl Schedule {
    pub fn keyed_rotations(&self) -> usize {
        self.rotations.iter().map(|r| r.steps.len()).sum()
    }

    /// Runs the schedule. `sources[i]` is the ciphertext for source id `i`.
    pub fn execute<T: Scalar>(&self, ev: &Evaluator, sources: &[SlotVector<T>]) -> Result<Vec<SlotVector<T>>> {
        let source = |r: &PlannedRotation| {
            sources
                .get(r.request.source)
                .ok_or_else(|| Error::Invalid(format!("no source {}", r.request.source)))
        };
        let mut out: Vec<Option<SlotVector<T>>> = vec![None; self.rotations.len()];
        let mut done = vec![false; self.rotations.len()];
        for group in &self.hoist_groups {
            let firsts: Vec<isize> = group.iter().map(|&i| self.rotations[i].steps[0] as isize).collect();
            let src = source(&self.rotations[group[0]])?;
            for (&i, first) in group.iter().zip(ev.rotate_many(src, &firsts)?) {
                let rest = &self.rotations[i].steps[1..];
                out[i] = Some(rest.iter().fold(first, |v, &k| ev.rotate(&v, k as isize)));
                done[i] = true;
            }
        }
        for (i, r) in self.rotations.iter().enumerate() {
            if !done[i] {
                let v = r.steps.iter().fold(source(r)?.clone(), |v, &k| ev.rotate(&v, k as isize));
                out[i] = Some(v);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("every rotation planned")).collect())
    }
}

/// Maps requests onto keyed rotations. Requests sharing a source (and with
/// at least one step) form a hoist group when there are two or more.
pub fn plan_rotations(requests: &[RotationRequest], s: usize, strategy: Strategy, keys: KeySet) -> Schedule {
    let rotations: Vec<PlannedRotation> = requests
        .iter()
        .map(|&request| {
            let a = request.amount % s;
            let steps = match keys {
                KeySet::Exact if a != 0 => vec![a as i64],
                KeySet::Exact => vec![],
                KeySet::PowersOfTwo => strategy
                    .decompose(a, s)
                    .into_iter()
                    .filter(|k| k.rem_euclid(s as i64) != 0)
                    .collect(),
            };
            PlannedRotation { request, steps }
        })
        .collect();
    let mut by_source: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in rotations.iter().enumerate() {
        if !r.steps.is_empty() {
            by_source.entry(r.request.source).or_default().push(i);
        }
    }
    let hoist_groups = by_source.into_values().filter(|g| g.len() > 1).collect();
    Schedule {
        slots: s,
        rotations,
        hoist_groups,
    }
}

/// Keyed rotations needed to realize every rotation in a ledger.
pub fn keyed_cost(snapshot: &LedgerSnapshot, s: usize, strategy: Strategy) -> u64 {
    snapshot
        .rotation_amounts
        .iter()
        .map(|(&a, &count)| {
            let len = strategy
                .decompose(a, s)
                .into_iter()
                .filter(|k| k.rem_euclid(s as i64) != 0)
                .count();
            count * len as u64
        })
        .sum()
}
