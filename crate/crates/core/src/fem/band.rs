//! Symmetric banded storage and an in-place Cholesky factorization.

use crate::error::{Error, Result};

/// Lower half of a symmetric matrix with half-bandwidth `bw`.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    // row i holds columns i-bw ..= i
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (j + self.bw - i)
    }

    /// Entry `(i, j)`; symmetric, zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if r - c > self.bw {
            0.0
        } else {
            self.data[self.idx(r, c)]
        }
    }

    /// Adds `v` to the symmetric pair `(i, j)`/`(j, i)`; call once per unordered pair.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        assert!(r - c <= self.bw, "entry ({r},{c}) outside bandwidth {}", self.bw);
        let k = self.idx(r, c);
        self.data[k] += v;
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..i {
                let a = self.data[self.idx(i, j)];
                y[i] += a * x[j];
                y[j] += a * x[i];
            }
            y[i] += self.data[self.idx(i, i)] * x[i];
        }
        y
    }

    /// `b − A x` accumulated with error-free transformations, so the result is
    /// accurate even when the terms cancel heavily.
    pub fn residual(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let (mut s, mut c) = (b[i], 0.0);
                let lo = i.saturating_sub(self.bw);
                let hi = (i + self.bw).min(self.n - 1);
                for j in lo..=hi {
                    let a = self.get(i, j);
                    let p = a * x[j];
                    let pe = a.mul_add(x[j], -p);
                    let t = s - p;
                    let z = t - s;
                    c += (s - (t - z)) + (-p - z) - pe;
                    s = t;
                }
                s + c
            })
            .collect()
    }

    /// Replaces row and column `i` by the identity row, keeping symmetry.
    pub fn constrain(&mut self, i: usize) {
        let lo = i.saturating_sub(self.bw);
        for j in lo..i {
            let k = self.idx(i, j);
            self.data[k] = 0.0;
        }
        let hi = (i + self.bw).min(self.n - 1);
        for r in i + 1..=hi {
            let k = self.idx(r, i);
            self.data[k] = 0.0;
        }
        let k = self.idx(i, i);
        self.data[k] = 1.0;
    }

    /// Dense copy, for tests and small problems.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.get(i, j)).collect()).collect()
    }
}

/// Cholesky factor `L` stored in the same band layout.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    factor: BandMatrix,
}

impl BandCholesky {
    /// Factorizes `a`; pivots below `64ε·max_diag` count as null-space directions.
    pub fn new(a: BandMatrix) -> Result<Self> {
        let n = a.n;
        let bw = a.bw;
        let mut l = a;
        let max_diag = (0..n).map(|i| l.data[l.idx(i, i)].abs()).fold(0.0, f64::max);
        let tol = 64.0 * f64::EPSILON * max_diag.max(f64::MIN_POSITIVE);
        let mut null_dim = 0;
        for j in 0..n {
            let lo = j.saturating_sub(bw);
            let mut d = l.data[l.idx(j, j)];
            for k in lo..j {
                let v = l.data[l.idx(j, k)];
                d -= v * v;
            }
            if !(d > tol) {
                null_dim += 1;
                d = 1.0;
            }
            let d = d.sqrt();
            let jj = l.idx(j, j);
            l.data[jj] = d;
            let hi = (j + bw).min(n.saturating_sub(1));
            for i in j + 1..=hi {
                let lo_i = i.saturating_sub(bw).max(lo);
                let mut s = l.data[l.idx(i, j)];
                for k in lo_i..j {
                    s -= l.data[l.idx(i, k)] * l.data[l.idx(j, k)];
                }
                let ij = l.idx(i, j);
                l.data[ij] = s / d;
            }
        }
        if null_dim > 0 {
            return Err(Error::SingularSystem { null_dim, size: n });
        }
        Ok(Self { factor: l })
    }

    pub fn size(&self) -> usize {
        self.factor.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let l = &self.factor;
        let n = l.n;
        for i in 0..n {
            let lo = i.saturating_sub(l.bw);
            let mut s = b[i];
            for k in lo..i {
                s -= l.data[l.idx(i, k)] * b[k];
            }
            b[i] = s / l.data[l.idx(i, i)];
        }
        for i in (0..n).rev() {
            let hi = (i + l.bw).min(n - 1);
            let mut s = b[i];
            for k in i + 1..=hi {
                s -= l.data[l.idx(k, i)] * b[k];
            }
            b[i] = s / l.data[l.idx(i, i)];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
