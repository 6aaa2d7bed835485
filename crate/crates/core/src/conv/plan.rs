//! Two orderings of the single-shard convolution. Both produce the same
//! rotated copies, hence slot-identical outputs; they differ in which
//! rotations are issued and which can share hoisting.

use std::collections::BTreeSet;

use super::{accumulate_image, channel_rotations, check_filter, FilterTensor};
use crate::emu::Evaluator;
use crate::pack::{PackedImage, ShardMode};
use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvPlan {
    /// Shift rows and columns of the input once per kernel offset, then
    /// rotate each shifted copy by every channel offset `r m^2`.
    ChannelFirst,
    /// Rotate the input by every channel offset first, then take all kernel
    /// shifts of each rotated copy as one hoisted batch.
    ShiftFirst,
}

#[derive(Clone, Debug)]
pub struct PlannedConv<T> {
    pub output: PackedImage<T>,
    /// Every rotation amount the plan requested, zero included, reduced mod s.
    pub requested: Vec<usize>,
}

impl<T> PlannedConv<T> {
    pub fn distinct_amounts(&self) -> usize {
        self.requested.iter().collect::<BTreeSet<_>>().len()
    }
}

pub fn conv_plan<T: Scalar>(
    ev: &Evaluator,
    p: &PackedImage<T>,
    kernel: &FilterTensor<T>,
    bias: Option<&[T]>,
    plan: ConvPlan,
) -> Result<PlannedConv<T>> {
    if p.mode() != ShardMode::ImageShard || p.shard_count() != 1 {
        return Err(Error::WrongMode("conv plans take a single image shard"));
    }
    check_filter(p, kernel, bias)?;
    let (s, m) = (p.slots(), p.side());
    let x = &p.shards()[0];
    let z = channel_rotations(p);
    let offsets = kernel.offsets();
    let kk = offsets.len();
    let shift_amounts: Vec<isize> = offsets.iter().map(|&(k, l)| k * m as isize + l).collect();
    let mut requested = Vec::new();
    let mut note = |a: isize| requested.push(a.rem_euclid(s as isize) as usize);

    let mut rotated = Vec::with_capacity(z * kk);
    match plan {
        ConvPlan::ChannelFirst => {
            let shifted: Vec<_> = shift_amounts
                .iter()
                .map(|&a| {
                    note(a);
                    ev.rotate(x, a)
                })
                .collect();
            // slots are filled in (r, offset) order
            let mut grid = vec![None; z * kk];
            for (idx, y) in shifted.iter().enumerate() {
                for r in 0..z {
                    let a = (r * m * m) as isize;
                    note(a);
                    grid[r * kk + idx] = Some(ev.rotate(y, a));
                }
            }
            rotated.extend(grid.into_iter().map(|v| v.expect("filled above")));
        }
        ConvPlan::ShiftFirst => {
            for r in 0..z {
                let a = (r * m * m) as isize;
                note(a);
                let xr = ev.rotate(x, a);
                shift_amounts.iter().for_each(|&a| note(a));
                rotated.extend(ev.rotate_many(&xr, &shift_amounts)?);
            }
        }
    }
    let output = accumulate_image(ev, p, kernel, bias, &[rotated])?;
    Ok(PlannedConv { output, requested })
}
