//! Arithmetic over the prime field `F_p`, `p = 2^31 − 1`, and the small dense
//! linear algebra needed by the retrospective decoder.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use rand::Rng;

pub const MODULUS: u64 = (1 << 31) - 1;

#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fp(u32);

impl Fp {
    pub const ZERO: Fp = Fp(0);
    pub const ONE: Fp = Fp(1);

    pub fn new(v: u64) -> Fp {
        Fp((v % MODULUS) as u32)
    }

    pub fn value(self) -> u32 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn pow(self, mut e: u64) -> Fp {
        let mut base = self;
        let mut acc = Fp::ONE;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            e >>= 1;
        }
        acc
    }

    /// Multiplicative inverse; `None` for zero.
    pub fn inverse(self) -> Option<Fp> {
        if self.is_zero() {
            None
        } else {
            Some(self.pow(MODULUS - 2))
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Fp {
        Fp(rng.gen_range(0..MODULUS as u32))
    }

    pub fn random_nonzero<R: Rng + ?Sized>(rng: &mut R) -> Fp {
        Fp(rng.gen_range(1..MODULUS as u32))
    }
}

impl fmt::Debug for Fp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Add for Fp {
    type Output = Fp;
    fn add(self, rhs: Fp) -> Fp {
        let s = self.0 as u64 + rhs.0 as u64;
        Fp(if s >= MODULUS { s - MODULUS } else { s } as u32)
    }
}

impl AddAssign for Fp {
    fn add_assign(&mut self, rhs: Fp) {
        *self = *self + rhs;
    }
}

impl Sub for Fp {
    type Output = Fp;
    fn sub(self, rhs: Fp) -> Fp {
        self + (-rhs)
    }
}

impl Neg for Fp {
    type Output = Fp;
    fn neg(self) -> Fp {
        if self.0 == 0 {
            self
        } else {
            Fp((MODULUS - self.0 as u64) as u32)
        }
    }
}

impl Mul for Fp {
    type Output = Fp;
    fn mul(self, rhs: Fp) -> Fp {
        Fp::new(self.0 as u64 * rhs.0 as u64)
    }
}

/// Dense row-major matrix over `F_p`.
pub type Matrix = Vec<Vec<Fp>>;

/// Inverse of a square matrix by Gauss–Jordan elimination; `None` if singular.
pub fn invert(m: &[Vec<Fp>]) -> Option<Matrix> {
    let n = m.len();
    if m.iter().any(|row| row.len() != n) {
        return None;
    }
    let mut a: Matrix = m.to_vec();
    let mut inv: Matrix = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { Fp::ONE } else { Fp::ZERO })
                .collect()
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).find(|&r| !a[r][col].is_zero())?;
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let scale = a[col][col].inverse()?;
        for j in 0..n {
            a[col][j] = a[col][j] * scale;
            inv[col][j] = inv[col][j] * scale;
        }
        for r in 0..n {
            if r != col && !a[r][col].is_zero() {
                let factor = a[r][col];
                for j in 0..n {
                    a[r][j] = a[r][j] - factor * a[col][j];
                    inv[r][j] = inv[r][j] - factor * inv[col][j];
                }
            }
        }
    }
    Some(inv)
}

pub fn determinant(m: &[Vec<Fp>]) -> Fp {
    let n = m.len();
    let mut a: Matrix = m.to_vec();
    let mut det = Fp::ONE;
    for col in 0..n {
        let Some(pivot) = (col..n).find(|&r| !a[r][col].is_zero()) else {
            return Fp::ZERO;
        };
        if pivot != col {
            a.swap(col, pivot);
            det = -det;
        }
        det = det * a[col][col];
        let inv = a[col][col].inverse().expect("pivot is nonzero");
        for r in col + 1..n {
            let factor = a[r][col] * inv;
            if !factor.is_zero() {
                let (top, bottom) = a.split_at_mut(r);
                for (x, &y) in bottom[0][col..].iter_mut().zip(&top[col][col..]) {
                    *x = *x - factor * y;
                }
            }
        }
    }
    det
}

pub fn rank(m: &[Vec<Fp>]) -> usize {
    let mut a: Matrix = m.to_vec();
    let rows = a.len();
    let cols = a.first().map_or(0, Vec::len);
    let mut r = 0;
    for col in 0..cols {
        let Some(pivot) = (r..rows).find(|&i| !a[i][col].is_zero()) else {
            continue;
        };
        a.swap(r, pivot);
        let inv = a[r][col].inverse().expect("pivot is nonzero");
        for i in r + 1..rows {
            let factor = a[i][col] * inv;
            if !factor.is_zero() {
                let (top, bottom) = a.split_at_mut(i);
                for (x, &y) in bottom[0][col..].iter_mut().zip(&top[r][col..]) {
                    *x = *x - factor * y;
                }
            }
        }
        r += 1;
        if r == rows {
            break;
        }
    }
    r
}

/// `matrix · streams`, where each of the `matrix.len()` outputs is the
/// symbol-wise combination of equal-length input streams.
pub fn combine_streams(matrix: &[Vec<Fp>], streams: &[Vec<Fp>]) -> Vec<Vec<Fp>> {
    let len = streams.first().map_or(0, Vec::len);
    matrix
        .iter()
        .map(|row| {
            let mut out = vec![Fp::ZERO; len];
            for (coef, stream) in row.iter().zip(streams) {
                if coef.is_zero() {
                    continue;
                }
                for (o, s) in out.iter_mut().zip(stream) {
                    *o += *coef * *s;
                }
            }
            out
        })
        .collect()
}

pub fn to_hex(values: &[Fp]) -> String {
    values.iter().map(|v| format!("{:08x}", v.0)).collect()
}
