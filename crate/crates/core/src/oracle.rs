//! Plaintext reference layers. Every emulated operator is tested against these.

use crate::conv::FilterTensor;
use crate::dense::LinearWeights;
use crate::pack::ImageTensor;
use crate::{Error, Result, Scalar};

/// Same-padding cross-correlation (no kernel flip), summed over input
/// channels, with optional per-output-channel bias. `stride` is 1 or 2;
/// stride 2 keeps the even rows and columns of the stride-1 result.
pub fn oracle_conv<T: Scalar>(
    t: &ImageTensor<T>,
    k: &FilterTensor<T>,
    bias: Option<&[T]>,
    stride: usize,
) -> Result<ImageTensor<T>> {
    if k.in_channels() != t.channels() {
        return Err(Error::Shape(format!(
            "filter expects {} input channels, tensor has {}",
            k.in_channels(),
            t.channels()
        )));
    }
    if stride != 1 && stride != 2 {
        return Err(Error::Invalid(format!("stride {stride} not supported")));
    }
    if let Some(b) = bias {
        if b.len() != k.out_channels() {
            return Err(Error::Shape("bias length != output channels".into()));
        }
    }
    let m = t.side() as isize;
    let h = k.half();
    let mo = t.side().div_ceil(stride);
    let mut out = ImageTensor::zeros(k.out_channels(), mo);
    for g in 0..k.out_channels() {
        for oi in 0..mo {
            for oj in 0..mo {
                let (i, j) = ((oi * stride) as isize, (oj * stride) as isize);
                let mut acc = bias.map_or(T::zero(), |b| b[g]);
                for f in 0..t.channels() {
                    for dk in -h..=h {
                        for dl in -h..=h {
                            let (si, sj) = (i + dk, j + dl);
                            if si >= 0 && si < m && sj >= 0 && sj < m {
                                acc += k.at(f, g, dk, dl) * t.get(f, si as usize, sj as usize);
                            }
                        }
                    }
                }
                out.set(g, oi, oj, acc);
            }
        }
    }
    Ok(out)
}

/// 2x2 stride-2 average pooling.
pub fn oracle_avgpool2x2<T: Scalar>(t: &ImageTensor<T>) -> Result<ImageTensor<T>> {
    if t.side() < 2 || !t.side().is_multiple_of(2) {
        return Err(Error::Shape(format!("cannot pool side {}", t.side())));
    }
    let mo = t.side() / 2;
    let quarter = T::of(0.25);
    Ok(ImageTensor::from_fn(t.channels(), mo, |c, i, j| {
        (t.get(c, 2 * i, 2 * j)
            + t.get(c, 2 * i, 2 * j + 1)
            + t.get(c, 2 * i + 1, 2 * j)
            + t.get(c, 2 * i + 1, 2 * j + 1))
            * quarter
    }))
}

/// Per-channel mean.
pub fn oracle_global_avgpool<T: Scalar>(t: &ImageTensor<T>) -> Vec<T> {
    let n = T::of((t.side() * t.side()) as f64);
    (0..t.channels())
        .map(|c| t.channel(c).iter().copied().sum::<T>() / n)
        .collect()
}

pub fn oracle_linear<T: Scalar>(x: &[T], w: &LinearWeights<T>) -> Result<Vec<T>> {
    if x.len() != w.in_features() {
        return Err(Error::Shape(format!(
            "linear expects {} features, got {}",
            w.in_features(),
            x.len()
        )));
    }
    Ok((0..w.out_features())
        .map(|o| {
            w.row(o)
                .iter()
                .zip(x)
                .fold(w.bias()[o], |acc, (&a, &b)| acc + a * b)
        })
        .collect())
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// `x * Phi(x)`.
pub fn oracle_gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

pub fn oracle_relu(x: f64) -> f64 {
    x.max(0.0)
}
