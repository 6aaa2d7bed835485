//! Plain-text fixture formats.
//!
//! Each file starts with a header line naming the kind and its dimensions,
//! followed by whitespace-separated reals. Blank lines and lines starting
//! with `#` are ignored; line breaks after the header are cosmetic.
//!
//! ```text
//! tensor <c> <m>              c*m rows of m values (channel by channel)
//! filter <ci> <co> <k>        ci*co*k rows of k values, order (f, g, row)
//! [bias]                      optional: co values
//! linear <out> <in>           out rows of `in` values
//! bias                        out values
//! poly <degree> <bound>       degree+1 Chebyshev coefficients
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::act::ChebPoly;
use crate::conv::FilterTensor;
use crate::dense::LinearWeights;
use crate::pack::ImageTensor;
use crate::{Error, Result, Scalar};

struct Reader<'a> {
    name: &'a str,
    tokens: std::vec::IntoIter<&'a str>,
}

impl<'a> Reader<'a> {
    fn new(name: &'a str, text: &'a str) -> Self {
        let tokens: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .flat_map(str::split_whitespace)
            .collect();
        Self {
            name,
            tokens: tokens.into_iter(),
        }
    }

    fn fail<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Fixture {
            path: self.name.to_string(),
            msg: msg.into(),
        })
    }

    fn word(&mut self) -> Result<&'a str> {
        match self.tokens.next() {
            Some(w) => Ok(w),
            None => self.fail("unexpected end of file"),
        }
    }

    fn expect(&mut self, kind: &str) -> Result<()> {
        let w = self.word()?;
        if w == kind {
            Ok(())
        } else {
            self.fail(format!("expected `{kind}`, found `{w}`"))
        }
    }

    fn usize(&mut self) -> Result<usize> {
        let w = self.word()?;
        w.parse().or_else(|_| self.fail(format!("bad integer `{w}`")))
    }

    fn real<T: Scalar>(&mut self) -> Result<T> {
        let w = self.word()?;
        match w.parse::<f64>() {
            Ok(v) => Ok(T::of(v)),
            Err(_) => self.fail(format!("bad number `{w}`")),
        }
    }

    fn reals<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        (0..n).map(|_| self.real()).collect()
    }

    fn peek_is(&self, word: &str) -> bool {
        self.tokens.as_slice().first() == Some(&word)
    }

    fn finish(&mut self) -> Result<()> {
        match self.tokens.next() {
            None => Ok(()),
            Some(w) => self.fail(format!("trailing data starting at `{w}`")),
        }
    }

    fn wrap<T>(&self, r: Result<T>) -> Result<T> {
        r.or_else(|e| self.fail(e.to_string()))
    }
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Fixture {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

fn fmt_row<T: Scalar>(out: &mut String, row: &[T]) {
    let cells: Vec<String> = row.iter().map(|v| format!("{:e}", v.as_f64())).collect();
    out.push_str(&cells.join(" "));
    out.push('\n');
}

pub fn parse_tensor<T: Scalar>(name: &str, text: &str) -> Result<ImageTensor<T>> {
    let mut r = Reader::new(name, text);
    r.expect("tensor")?;
    let (c, m) = (r.usize()?, r.usize()?);
    let data = r.reals(c * m * m)?;
    r.finish()?;
    r.wrap(ImageTensor::new(c, m, data))
}

pub fn format_tensor<T: Scalar>(t: &ImageTensor<T>) -> String {
    let mut out = format!("tensor {} {}\n", t.channels(), t.side());
    for row in t.data().chunks(t.side()) {
        fmt_row(&mut out, row);
    }
    out
}

/// Filter weights and the optional per-output-channel bias.
pub fn parse_filter<T: Scalar>(name: &str, text: &str) -> Result<(FilterTensor<T>, Option<Vec<T>>)> {
    let mut r = Reader::new(name, text);
    r.expect("filter")?;
    let (ci, co, k) = (r.usize()?, r.usize()?, r.usize()?);
    let weights = r.reals(ci * co * k * k)?;
    let bias = if r.peek_is("bias") {
        r.expect("bias")?;
        Some(r.reals(co)?)
    } else {
        None
    };
    r.finish()?;
    Ok((r.wrap(FilterTensor::new(ci, co, k, weights))?, bias))
}

pub fn format_filter<T: Scalar>(k: &FilterTensor<T>, bias: Option<&[T]>) -> String {
    let mut out = format!("filter {} {} {}\n", k.in_channels(), k.out_channels(), k.size());
    for row in k.weights().chunks(k.size()) {
        fmt_row(&mut out, row);
    }
    if let Some(b) = bias {
        out.push_str("bias\n");
        fmt_row(&mut out, b);
    }
    out
}

pub fn parse_linear<T: Scalar>(name: &str, text: &str) -> Result<LinearWeights<T>> {
    let mut r = Reader::new(name, text);
    r.expect("linear")?;
    let (out, inp) = (r.usize()?, r.usize()?);
    let w = r.reals(out * inp)?;
    r.expect("bias")?;
    let b = r.reals(out)?;
    r.finish()?;
    r.wrap(LinearWeights::new(out, inp, w, b))
}

pub fn format_linear<T: Scalar>(w: &LinearWeights<T>) -> String {
    let mut out = format!("linear {} {}\n", w.out_features(), w.in_features());
    for o in 0..w.out_features() {
        fmt_row(&mut out, w.row(o));
    }
    out.push_str("bias\n");
    fmt_row(&mut out, w.bias());
    out
}

pub fn parse_poly<T: Scalar>(name: &str, text: &str) -> Result<ChebPoly<T>> {
    let mut r = Reader::new(name, text);
    r.expect("poly")?;
    let degree = r.usize()?;
    let bound = r.real::<T>()?;
    let coeffs = r.reals(degree + 1)?;
    r.finish()?;
    r.wrap(ChebPoly::new(coeffs, bound))
}

pub fn format_poly<T: Scalar>(p: &ChebPoly<T>) -> String {
    let mut out = format!("poly {} {}\n", p.degree(), p.bound().as_f64());
    for c in p.coeffs() {
        let _ = writeln!(out, "{:.17e}", c.as_f64());
    }
    out
}

pub fn read_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<ImageTensor<T>> {
    let p = path.as_ref();
    parse_tensor(&p.display().to_string(), &read_file(p)?)
}

pub fn read_filter<T: Scalar>(path: impl AsRef<Path>) -> Result<(FilterTensor<T>, Option<Vec<T>>)> {
    let p = path.as_ref();
    parse_filter(&p.display().to_string(), &read_file(p)?)
}

pub fn read_linear<T: Scalar>(path: impl AsRef<Path>) -> Result<LinearWeights<T>> {
    let p = path.as_ref();
    parse_linear(&p.display().to_string(), &read_file(p)?)
}

pub fn read_poly<T: Scalar>(path: impl AsRef<Path>) -> Result<ChebPoly<T>> {
    let p = path.as_ref();
    parse_poly(&p.display().to_string(), &read_file(p)?)
}
