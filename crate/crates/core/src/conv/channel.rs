use rayon::prelude::*;

use super::{check_filter, FilterTensor};
use crate::emu::{Evaluator, SlotVector};
use crate::pack::{PackedImage, ShardMode};
use crate::{Error, Result, Scalar};

/// Convolution when each channel spans several shards of consecutive rows.
///
/// A row shift pulls rows from the neighbouring shard; the rotated copy of
/// that neighbour is masked to the rows that actually cross over. Shards
/// beyond the image edge contribute zeros. Column shifts stay inside a shard.
pub fn conv_channel_shards<T: Scalar>(
    ev: &Evaluator,
    p: &PackedImage<T>,
    kernel: &FilterTensor<T>,
    bias: Option<&[T]>,
) -> Result<PackedImage<T>> {
    if p.mode() != ShardMode::ChannelShard {
        return Err(Error::WrongMode("conv_channel_shards needs channel shards"));
    }
    check_filter(p, kernel, bias)?;
    let (s, m) = (p.slots(), p.side());
    let rps = p.rows_per_shard() as isize;
    let per = p.shards_per_channel();
    let (ci, co) = (kernel.in_channels(), kernel.out_channels());
    let offsets = kernel.offsets();
    let kk = offsets.len();
    let amounts: Vec<isize> = offsets.iter().map(|&(k, l)| k * m as isize + l).collect();

    // rotated[w][idx] = rot(shard w, k m + l)
    let rotated: Vec<Vec<SlotVector<T>>> = p
        .shards()
        .par_iter()
        .map(|x| ev.rotate_many(x, &amounts))
        .collect::<Result<_>>()?;

    let shards = (0..co * per)
        .into_par_iter()
        .map(|w_out| {
            let (g, v) = (w_out / per, (w_out % per) as isize);
            let mut terms = Vec::with_capacity(ci * kk * 2);
            for f in 0..ci {
                for (idx, &(k, l)) in offsets.iter().enumerate() {
                    let w = kernel.at(f, g, k, l);
                    let lo = k.div_euclid(rps);
                    let hi = (rps - 1 + k).div_euclid(rps);
                    for delta in lo..=hi {
                        let src = v + delta;
                        if src < 0 || src >= per as isize {
                            continue;
                        }
                        let mut plain = vec![T::zero(); s];
                        let mut any = false;
                        for i in 0..rps {
                            if (i + k).div_euclid(rps) != delta {
                                continue;
                            }
                            for j in 0..m {
                                let sj = j as isize + l;
                                if sj >= 0 && sj < m as isize {
                                    plain[i as usize * m + j] = w;
                                    any = true;
                                }
                            }
                        }
                        if any {
                            let x = &rotated[f * per + src as usize][idx];
                            terms.push(ev.mul_plain(x, &plain)?);
                        }
                    }
                }
            }
            let acc = ev.sum(&terms)?;
            match bias {
                Some(b) => Ok(ev.add_scalar(&acc, b[g])),
                None => Ok(acc),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    PackedImage::from_parts(shards, m, co, 1, (0..co).collect(), ShardMode::ChannelShard)
}
