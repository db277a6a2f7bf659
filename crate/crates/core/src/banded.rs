//! Banded LU factorisation with partial pivoting in LAPACK band storage.
//!
//! Entry `(i, j)` with `-kl <= j - i <= ku` lives at `ab[kl + ku + i - j + j * ldab]`,
//! `ldab = 2 kl + ku + 1`; the extra `kl` rows hold fill-in from row interchanges.

use crate::error::{Result, SolverError};

#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        BandedMatrix { n, kl, ku, ldab, ab: vec![0.0; ldab * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        self.kl + self.ku + i - j + j * self.ldab
    }

    fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && j + self.kl >= i && i + self.ku >= j
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.ab[self.idx(i, j)]
        } else {
            0.0
        }
    }

    /// Adds `v` to entry `(i, j)`; panics outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band kl={} ku={}", self.kl, self.ku);
        let k = self.idx(i, j);
        self.ab[k] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band kl={} ku={}", self.kl, self.ku);
        let k = self.idx(i, j);
        self.ab[k] = v;
    }

    /// `y = A x` using the original band (call before factorising).
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            let lo = j.saturating_sub(self.ku);
            let hi = (j + self.kl).min(self.n - 1);
            for (i, yi) in y.iter_mut().enumerate().take(hi + 1).skip(lo) {
                *yi += self.ab[self.idx(i, j)] * x[j];
            }
        }
        y
    }

    /// In-place LU factorisation (unblocked `gbtf2`).
    pub fn factor(mut self) -> Result<BandedLu> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let mut ipiv = vec![0usize; n];
        let max_abs = self.ab.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let tiny = max_abs * 1e-14 * (n as f64).sqrt();
        let (mut pmin, mut pmax) = (f64::INFINITY, 0.0f64);
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut jp = 0;
            let mut best = self.ab[self.idx(j, j)].abs();
            for r in 1..=km {
                let v = self.ab[self.idx(j + r, j)].abs();
                if v > best {
                    best = v;
                    jp = r;
                }
            }
            ipiv[j] = j + jp;
            if !(best > tiny) {
                return Err(SolverError::Singular { epsilon: f64::NAN, modes: 0, pivot: best / max_abs.max(f64::MIN_POSITIVE) });
            }
            pmin = pmin.min(best);
            pmax = pmax.max(best);
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    let a = self.idx(j, c);
                    let b = self.idx(j + jp, c);
                    self.ab.swap(a, b);
                }
            }
            let piv = self.ab[self.idx(j, j)];
            if km > 0 {
                let base = self.idx(j + 1, j);
                for r in 0..km {
                    self.ab[base + r] /= piv;
                }
                for c in j + 1..=ju {
                    let ujc = self.ab[self.idx(j, c)];
                    if ujc != 0.0 {
                        let cb = self.idx(j + 1, c);
                        for r in 0..km {
                            self.ab[cb + r] -= self.ab[base + r] * ujc;
                        }
                    }
                }
            }
        }
        Ok(BandedLu { m: self, ipiv, pivot_ratio: pmin / pmax })
    }
}

#[derive(Debug, Clone)]
pub struct BandedLu {
    m: BandedMatrix,
    ipiv: Vec<usize>,
    pivot_ratio: f64,
}

impl BandedLu {
    /// Smallest over largest pivot magnitude; a cheap conditioning indicator.
    pub fn pivot_ratio(&self) -> f64 {
        self.pivot_ratio
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let a = &self.m;
        let n = a.n;
        assert_eq!(b.len(), n);
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
            let km = a.kl.min(n - 1 - j);
            let bj = b[j];
            if km > 0 && bj != 0.0 {
                let base = a.idx(j + 1, j);
                for r in 0..km {
                    b[j + 1 + r] -= a.ab[base + r] * bj;
                }
            }
        }
        let kv = a.kl + a.ku;
        for j in (0..n).rev() {
            b[j] /= a.ab[a.idx(j, j)];
            let bj = b[j];
            if bj != 0.0 {
                for i in j.saturating_sub(kv)..j {
                    b[i] -= a.ab[a.idx(i, j)] * bj;
                }
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
