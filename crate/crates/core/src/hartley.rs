//! Two-dimensional discrete Hartley transform.
//!
//! Kernel convention: `cas(t) = cos(t) - sin(t)`, applied to the summed phase
//!
//! ```text
//! H(u, v) = sum_x sum_y W(x, y) * cas(2 pi u x / d1 + 2 pi v y / d2)
//! ```
//!
//! The textbook Hartley kernel is `cos + sin`; the minus sign here is
//! deliberate and every oracle in the test suite is written against it. The
//! two conventions differ only by index reversal, `H(u, v) = H_textbook(-u, -v)`.
//!
//! The forward transform is unnormalised and the inverse carries the
//! `1 / (d1 d2)` factor, so `idht2(dht2(w)) == w` and `dht2(dht2(w)) == d1 d2 w`.

use std::f64::consts::TAU;

use crate::numerics::Matrix;
use crate::{Error, Result};

/// Sign applied to the sine term of the kernel: `cos(t) + KERNEL_SINE_SIGN * sin(t)`.
pub const KERNEL_SINE_SIGN: f64 = -1.0;

/// Largest side accepted by [`dft2_oracle`].
pub const ORACLE_MAX_SIDE: usize = 64;

/// Hartley kernel, `cos(theta) - sin(theta)`.
pub fn cas(theta: f64) -> f64 {
    theta.cos() + KERNEL_SINE_SIGN * theta.sin()
}

/// Hartley-domain coefficients of a `d1 x d2` matrix, indexed `(u, v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    coeffs: Matrix,
}

impl Spectrum {
    pub fn from_matrix(coeffs: Matrix) -> Self {
        Self { coeffs }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_matrix(Matrix::zeros(rows, cols))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.coeffs.shape()
    }

    pub fn rows(&self) -> usize {
        self.coeffs.rows()
    }

    pub fn cols(&self) -> usize {
        self.coeffs.cols()
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.coeffs.get(u, v)
    }

    pub fn set(&mut self, u: usize, v: usize, value: f64) {
        self.coeffs.set(u, v, value);
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.coeffs
    }

    pub fn into_matrix(self) -> Matrix {
        self.coeffs
    }

    pub fn as_slice(&self) -> &[f64] {
        self.coeffs.as_slice()
    }
}

/// Forward 2D transform (unnormalised).
pub fn dht2(w: &Matrix) -> Spectrum {
    let (d1, d2) = w.shape();
    let mut t = w.as_slice().to_vec();

    // Separable pass: 1D transform along every row, then every column.
    let row_plan = Plan1d::new(d2);
    let mut scratch = Vec::new();
    for row in t.chunks_exact_mut(d2) {
        row_plan.run(row, &mut scratch);
    }
    let col_plan = Plan1d::new(d1);
    let mut column = vec![0.0; d1];
    for c in 0..d2 {
        for r in 0..d1 {
            column[r] = t[r * d2 + c];
        }
        col_plan.run(&mut column, &mut scratch);
        for r in 0..d1 {
            t[r * d2 + c] = column[r];
        }
    }

    // The separable product cas(a)cas(b) is not cas(a + b); recombine with
    // H(u,v) = [T(u,v) + T(-u,v) + T(u,-v) - T(-u,-v)] / 2.
    let mut out = vec![0.0; d1 * d2];
    for u in 0..d1 {
        let nu = (d1 - u) % d1;
        for v in 0..d2 {
            let nv = (d2 - v) % d2;
            out[u * d2 + v] =
                0.5 * (t[u * d2 + v] + t[nu * d2 + v] + t[u * d2 + nv] - t[nu * d2 + nv]);
        }
    }
    Spectrum::from_matrix(Matrix::new(d1, d2, out).expect("transform of finite input is finite"))
}

/// Inverse 2D transform, `dht2(h) / (d1 d2)`.
pub fn idht2(h: &Spectrum) -> Matrix {
    let (d1, d2) = h.shape();
    dht2(h.as_matrix()).into_matrix().scale(1.0 / (d1 * d2) as f64)
}

/// Direct-summation 2D DFT, returned as (real part, imaginary part).
///
/// Uses the positive-exponent kernel `exp(+i theta)`, so that
/// `Re - Im` equals the Hartley kernel `cos - sin` above. Under the
/// `exp(-i theta)` convention the same identity reads `Re + Im`.
/// O((d1 d2)^2); refuses sides above [`ORACLE_MAX_SIDE`].
pub fn dft2_oracle(w: &Matrix) -> Result<(Spectrum, Spectrum)> {
    let (d1, d2) = w.shape();
    if d1 > ORACLE_MAX_SIDE || d2 > ORACLE_MAX_SIDE {
        return Err(Error::OracleTooLarge {
            rows: d1,
            cols: d2,
            cap: ORACLE_MAX_SIDE,
        });
    }
    let mut re = Matrix::zeros(d1, d2);
    let mut im = Matrix::zeros(d1, d2);
    for u in 0..d1 {
        for v in 0..d2 {
            let (mut sr, mut si) = (0.0, 0.0);
            for x in 0..d1 {
                for y in 0..d2 {
                    let phase = TAU * (((u * x) % d1) as f64 / d1 as f64 + ((v * y) % d2) as f64 / d2 as f64);
                    let value = w.get(x, y);
                    sr += value * phase.cos();
                    si += value * phase.sin();
                }
            }
            re.set(u, v, sr);
            im.set(u, v, si);
        }
    }
    Ok((Spectrum::from_matrix(re), Spectrum::from_matrix(im)))
}

/// One-dimensional transform of a fixed length with the `cos - sin` kernel.
///
/// Even lengths are halved by the radix-2 Hartley butterfly until the length
/// is odd; odd lengths are summed directly. Powers of two therefore run in
/// O(n log n) and odd lengths in O(n^2).
struct Plan1d {
    n: usize,
    // cos/sin of 2 pi k / n for k in 0..n
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Plan1d {
    fn new(n: usize) -> Self {
        let (cos, sin) = (0..n)
            .map(|k| {
                let t = TAU * k as f64 / n as f64;
                (t.cos(), t.sin())
            })
            .unzip();
        Self { n, cos, sin }
    }

    fn run(&self, data: &mut [f64], scratch: &mut Vec<f64>) {
        debug_assert_eq!(data.len(), self.n);
        if self.n == 1 {
            return;
        }
        scratch.clear();
        scratch.extend_from_slice(data);
        self.textbook(scratch, data);
        if KERNEL_SINE_SIGN < 0.0 {
            // cas(-t) turns the cos + sin transform into cos - sin
            data[1..].reverse();
        }
    }

    /// `cos + sin` transform of `input` into `out`; `input.len()` divides `n`.
    fn textbook(&self, input: &[f64], out: &mut [f64]) {
        let len = input.len();
        let stride = self.n / len;
        if len % 2 == 1 {
            for (k, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, &x) in input.iter().enumerate() {
                    let idx = (k * j) % len * stride;
                    acc += x * (self.cos[idx] + self.sin[idx]);
                }
                *o = acc;
            }
            return;
        }

        let half = len / 2;
        let split: Vec<f64> = input.iter().step_by(2).chain(input.iter().skip(1).step_by(2)).copied().collect();
        let mut sub = vec![0.0; len];
        let (even_in, odd_in) = split.split_at(half);
        let (even, odd) = sub.split_at_mut(half);
        self.textbook(even_in, even);
        self.textbook(odd_in, odd);

        // H[k] = E[k] + cos(2 pi k/len) O[k] + sin(2 pi k/len) O[-k]
        for (k, o) in out.iter_mut().enumerate() {
            let km = k % half;
            let kr = (half - km) % half;
            let tw = k * stride;
            *o = even[km] + self.cos[tw] * odd[km] + self.sin[tw] * odd[kr];
        }
    }
}
