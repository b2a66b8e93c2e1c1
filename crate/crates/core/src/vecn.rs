//! Small stack-allocated vectors/matrices for target-manifold components.
//! Target dimensions in practice are 2..=3; capacity is fixed at 4.

pub const MAX_DIM: usize = 4;

/// A vector of dimension `n <= MAX_DIM`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VecN {
    pub n: usize,
    pub a: [f64; MAX_DIM],
}

impl VecN {
    pub fn zeros(n: usize) -> Self {
        VecN {
            n,
            a: [0.0; MAX_DIM],
        }
    }

    pub fn from_slice(s: &[f64]) -> Self {
        let mut a = [0.0; MAX_DIM];
        a[..s.len()].copy_from_slice(s);
        VecN { n: s.len(), a }
    }

    pub fn v2(x: f64, y: f64) -> Self {
        VecN {
            n: 2,
            a: [x, y, 0.0, 0.0],
        }
    }

    pub fn v3(x: f64, y: f64, z: f64) -> Self {
        VecN {
            n: 3,
            a: [x, y, z, 0.0],
        }
    }

    #[inline]
    pub fn dot(&self, o: &VecN) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            s += self.a[i] * o.a[i];
        }
        s
    }

    #[inline]
    pub fn norm2(&self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.norm2().sqrt()
    }

    #[inline]
    pub fn scale(&self, c: f64) -> VecN {
        let mut r = *self;
        for i in 0..self.n {
            r.a[i] *= c;
        }
        r
    }

    #[inline]
    pub fn add(&self, o: &VecN) -> VecN {
        let mut r = *self;
        for i in 0..self.n {
            r.a[i] += o.a[i];
        }
        r
    }

    #[inline]
    pub fn sub(&self, o: &VecN) -> VecN {
        let mut r = *self;
        for i in 0..self.n {
            r.a[i] -= o.a[i];
        }
        r
    }

    /// self + c * o
    #[inline]
    pub fn axpy(&self, c: f64, o: &VecN) -> VecN {
        let mut r = *self;
        for i in 0..self.n {
            r.a[i] += c * o.a[i];
        }
        r
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.a[..self.n].iter().copied()
    }
}

/// An `n x n` matrix acting on VecN (chart-frame linear maps).
#[derive(Clone, Copy, Debug)]
pub struct MatN {
    pub n: usize,
    pub m: [[f64; MAX_DIM]; MAX_DIM],
}

impl MatN {
    pub fn zeros(n: usize) -> Self {
        MatN {
            n,
            m: [[0.0; MAX_DIM]; MAX_DIM],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut r = Self::zeros(n);
        for i in 0..n {
            r.m[i][i] = 1.0;
        }
        r
    }

    #[inline]
    pub fn apply(&self, v: &VecN) -> VecN {
        let mut r = VecN::zeros(self.n);
        for i in 0..self.n {
            let mut s = 0.0;
            for j in 0..self.n {
                s += self.m[i][j] * v.a[j];
            }
            r.a[i] = s;
        }
        r
    }

    pub fn matmul(&self, o: &MatN) -> MatN {
        let mut r = MatN::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                let mut s = 0.0;
                for k in 0..self.n {
                    s += self.m[i][k] * o.m[k][j];
                }
                r.m[i][j] = s;
            }
        }
        r
    }

    pub fn transpose(&self) -> MatN {
        let mut r = MatN::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                r.m[i][j] = self.m[j][i];
            }
        }
        r
    }

    /// Solve self * x = b by Gaussian elimination with partial pivoting.
    pub fn solve(&self, b: &VecN) -> Option<VecN> {
        let n = self.n;
        let mut a = self.m;
        let mut x = b.a;
        for col in 0..n {
            let mut p = col;
            for r in col + 1..n {
                if a[r][col].abs() > a[p][col].abs() {
                    p = r;
                }
            }
            if a[p][col].abs() < 1e-300 {
                return None;
            }
            a.swap(col, p);
            x.swap(col, p);
            let piv = a[col][col];
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a[r][col] / piv;
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                x[r] -= f * x[col];
            }
        }
        let mut out = VecN::zeros(n);
        for i in 0..n {
            out.a[i] = x[i] / a[i][i];
        }
        Some(out)
    }

    pub fn inverse(&self) -> Option<MatN> {
        let n = self.n;
        let mut r = MatN::zeros(n);
        for j in 0..n {
            let mut e = VecN::zeros(n);
            e.a[j] = 1.0;
            let col = self.solve(&e)?;
            for i in 0..n {
                r.m[i][j] = col.a[i];
            }
        }
        Some(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_roundtrip() {
        let mut m = MatN::zeros(3);
        m.m[0] = [2.0, 1.0, 0.0, 0.0];
        m.m[1] = [1.0, 3.0, 1.0, 0.0];
        m.m[2] = [0.0, 1.0, 4.0, 0.0];
        let b = VecN::v3(1.0, -2.0, 0.5);
        let x = m.solve(&b).unwrap();
        let r = m.apply(&x).sub(&b);
        assert!(r.norm() < 1e-12);
        let inv = m.inverse().unwrap();
        let id = m.matmul(&inv);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((id.m[i][j] - want).abs() < 1e-12);
            }
        }
    }
}
