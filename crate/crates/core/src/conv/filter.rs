use crate::{Error, Result, Scalar};

/// Convolution weights indexed `(input channel, output channel, row, col)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterTensor<T> {
    ci: usize,
    co: usize,
    k: usize,
    weights: Vec<T>,
}

impl<T: Scalar> FilterTensor<T> {
    pub fn new(ci: usize, co: usize, k: usize, weights: Vec<T>) -> Result<Self> {
        if k.is_multiple_of(2) {
            return Err(Error::EvenKernel(k));
        }
        if ci == 0 || co == 0 {
            return Err(Error::Shape(format!("filter {ci}x{co}x{k}x{k} has no channels")));
        }
        if weights.len() != ci * co * k * k {
            return Err(Error::Shape(format!(
                "filter {ci}x{co}x{k}x{k} needs {} weights, got {}",
                ci * co * k * k,
                weights.len()
            )));
        }
        Ok(Self { ci, co, k, weights })
    }

    pub fn from_fn(
        ci: usize,
        co: usize,
        k: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut weights = Vec::with_capacity(ci * co * k * k);
        for fi in 0..ci {
            for g in 0..co {
                for a in 0..k {
                    for b in 0..k {
                        weights.push(f(fi, g, a, b));
                    }
                }
            }
        }
        Self::new(ci, co, k, weights)
    }

    /// `K^{ff} = 1` at the kernel centre, everything else zero.
    pub fn identity(c: usize, k: usize) -> Result<Self> {
        let h = k / 2;
        Self::from_fn(c, c, k, |f, g, a, b| {
            if f == g && a == h && b == h {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    pub fn in_channels(&self) -> usize {
        self.ci
    }

    pub fn out_channels(&self) -> usize {
        self.co
    }

    pub fn size(&self) -> usize {
        self.k
    }

    /// Half-width: offsets run over `-half..=half`.
    pub fn half(&self) -> isize {
        (self.k / 2) as isize
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn get(&self, f: usize, g: usize, a: usize, b: usize) -> T {
        self.weights[((f * self.co + g) * self.k + a) * self.k + b]
    }

    /// Weight at centred offsets `(k, l)`, each in `-half..=half`.
    pub fn at(&self, f: usize, g: usize, k: isize, l: isize) -> T {
        let h = self.half();
        self.get(f, g, (k + h) as usize, (l + h) as usize)
    }

    pub fn set(&mut self, f: usize, g: usize, a: usize, b: usize, v: T) {
        self.weights[((f * self.co + g) * self.k + a) * self.k + b] = v;
    }

    /// Centred offsets in row-major kernel order.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let h = self.half();
        (-h..=h).flat_map(|k| (-h..=h).map(move |l| (k, l))).collect()
    }
}
