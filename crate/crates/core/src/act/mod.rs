//! Chebyshev-basis polynomials and their low-depth evaluation on slot vectors.

mod interp;
mod remez;
pub mod table;

pub use interp::{cheb_interpolate, max_abs_error, DEFAULT_GRID};
pub use remez::{remez, RemezResult};

use rayon::prelude::*;

use crate::emu::{Evaluator, SlotVector};
use crate::pack::PackedImage;
use crate::{Error, Result, Scalar};

pub use crate::oracle::{oracle_gelu as gelu, oracle_relu as relu};

/// `sum_k c_k T_k(x / bound)`, valid on `[-bound, bound]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChebPoly<T> {
    coeffs: Vec<T>,
    bound: T,
}

impl<T: Scalar> ChebPoly<T> {
    pub fn new(coeffs: Vec<T>, bound: T) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Invalid("polynomial needs at least one coefficient".into()));
        }
        if bound.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::Invalid(format!("bound must be positive, got {bound}")));
        }
        Ok(Self { coeffs, bound })
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn bound(&self) -> T {
        self.bound
    }

    /// Levels consumed by [`apply_activation`]: `ceil(log2(degree))`.
    pub fn depth(&self) -> u32 {
        basis_depth(self.degree())
    }

    /// Plaintext evaluation by Clenshaw's recurrence.
    pub fn eval(&self, x: T) -> T {
        let t = x / self.bound;
        let two_t = t + t;
        let (mut b1, mut b2) = (T::zero(), T::zero());
        for &c in self.coeffs.iter().skip(1).rev() {
            let b0 = c + two_t * b1 - b2;
            b2 = b1;
            b1 = b0;
        }
        self.coeffs[0] + t * b1 - b2
    }

    pub fn cast<U: Scalar>(&self) -> ChebPoly<U> {
        ChebPoly {
            coeffs: self.coeffs.iter().map(|c| U::of(c.as_f64())).collect(),
            bound: U::of(self.bound.as_f64()),
        }
    }
}

/// Depth of `T_n` in the doubling tree.
pub fn basis_depth(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        (n - 1).ilog2() + 1
    }
}

/// `T_0 .. T_n` of `x` slotwise.
///
/// `T_{2k} = 2 T_k^2 - 1` and `T_{2k+1} = 2 T_k T_{k+1} - x`, so `T_k` sits
/// at depth `ceil(log2 k)`.
pub fn cheb_basis<T: Scalar>(ev: &Evaluator, x: &SlotVector<T>, n: usize) -> Result<Vec<SlotVector<T>>> {
    let need = basis_depth(n);
    if x.level() < need {
        return Err(Error::InsufficientLevel {
            need,
            have: x.level(),
        });
    }
    let one = ev.add_scalar(&ev.mul_scalar(x, T::zero()), T::one());
    let mut ts = vec![one];
    if n >= 1 {
        ts.push(x.clone());
    }
    for k in 2..=n {
        let h = k / 2;
        let next = if k % 2 == 0 {
            let sq = ev.mul_ct(&ts[h], &ts[h])?;
            ev.add_scalar(&ev.add(&sq, &sq)?, -T::one())
        } else {
            let prod = ev.mul_ct(&ts[h], &ts[h + 1])?;
            ev.sub(&ev.add(&prod, &prod)?, x)?
        };
        ts.push(next);
    }
    Ok(ts)
}

/// Evaluates `poly` on one vector: rescale by `1/bound`, build the basis,
/// and sum the scaled basis vectors.
pub fn apply_to_vector<T: Scalar>(ev: &Evaluator, x: &SlotVector<T>, poly: &ChebPoly<T>) -> Result<SlotVector<T>> {
    if cfg!(debug_assertions) {
        let b = poly.bound();
        if let Some(&bad) = x.slots().iter().find(|v| v.abs() > b) {
            return Err(Error::OutOfDomain {
                value: bad.as_f64(),
                bound: b.as_f64(),
            });
        }
    }
    let t = ev.mul_scalar(x, T::one() / poly.bound());
    let basis = cheb_basis(ev, &t, poly.degree())?;
    let terms: Vec<_> = basis
        .iter()
        .zip(poly.coeffs())
        .map(|(tk, &c)| ev.mul_scalar(tk, c))
        .collect();
    ev.sum(&terms)
}

/// Slotwise activation on every shard; the layout metadata is unchanged.
pub fn apply_activation<T: Scalar>(
    ev: &Evaluator,
    p: &PackedImage<T>,
    poly: &ChebPoly<T>,
) -> Result<PackedImage<T>> {
    let shards = p
        .shards()
        .par_iter()
        .map(|x| apply_to_vector(ev, x, poly))
        .collect::<Result<Vec<_>>>()?;
    p.with_shards(shards)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: usize, level: u32) -> Evaluator {
        Evaluator::new(s, level).unwrap()
    }

    #[test]
    fn small_basis_values() {
        let e = ev(4, 4);
        let x = e.encode(vec![0.5, -1.0, 0.0, 1.0]).unwrap();
        let ts = cheb_basis(&e, &x, 5).unwrap();
        assert_eq!(ts[2].slots()[0], -0.5);
        assert_eq!(&ts[5].slots()[1..], &[-1.0, 0.0, 1.0]);
        assert_eq!(ts[0].slots(), &[1.0; 4]);
    }

    #[test]
    fn basis_matches_cosine_and_is_bounded() {
        let s = 256;
        let e = ev(s, 7);
        let xs: Vec<f64> = (0..s).map(|i| -1.0 + 2.0 * i as f64 / (s - 1) as f64).collect();
        let x = e.encode(xs.clone()).unwrap();
        let ts = cheb_basis(&e, &x, 64).unwrap();
        for (k, t) in ts.iter().enumerate() {
            for (&xi, &v) in xs.iter().zip(t.slots()) {
                assert!((v - (k as f64 * xi.acos()).cos()).abs() < 1e-10, "T_{k}({xi})");
                assert!(v.abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn depth_per_degree() {
        for (n, d) in [(0, 0), (1, 0), (2, 1), (3, 2), (4, 2), (5, 3), (8, 3), (9, 4), (27, 5), (59, 6), (64, 6)] {
            assert_eq!(basis_depth(n), d, "degree {n}");
            let e = ev(4, 8);
            let x = e.encode(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
            let ts = cheb_basis(&e, &x, n).unwrap();
            assert_eq!(ts.iter().map(SlotVector::depth).max().unwrap(), d, "degree {n}");
        }
    }

    #[test]
    fn identity_poly_and_level_check() {
        let e = ev(4, 3);
        let id = ChebPoly::new(vec![0.0, 3.0], 3.0).unwrap();
        let x = e.encode(vec![-2.5f64, 0.0, 1.25, 3.0]).unwrap();
        let y = apply_to_vector(&e, &x, &id).unwrap();
        for (a, b) in x.slots().iter().zip(y.slots()) {
            assert!((a - b).abs() < 1e-12);
        }
        let deep = ChebPoly::new(vec![0.0; 28], 3.0).unwrap();
        assert!(matches!(apply_to_vector(&e, &x, &deep), Err(Error::InsufficientLevel { need: 5, have: 3 })));
    }

    #[test]
    fn homomorphic_equals_clenshaw() {
        let e = ev(128, 6);
        let poly = cheb_interpolate::<f64>(gelu, 59, 10.0);
        let xs: Vec<f64> = (0..128).map(|i| -10.0 + 20.0 * i as f64 / 127.0).collect();
        let y = apply_to_vector(&e, &e.encode(xs.clone()).unwrap(), &poly).unwrap();
        assert_eq!(y.depth(), 6);
        for (&x, &v) in xs.iter().zip(y.slots()) {
            assert!((poly.eval(x) - v).abs() < 1e-9);
        }
    }

    #[test]
    fn out_of_domain_is_rejected_in_debug() {
        let e = ev(2, 2);
        let p = ChebPoly::new(vec![0.0, 1.0], 1.0).unwrap();
        let r = apply_to_vector(&e, &e.encode(vec![0.5, 2.0]).unwrap(), &p);
        assert_eq!(r.is_err(), cfg!(debug_assertions));
    }
}
