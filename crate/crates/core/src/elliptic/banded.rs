//! Symmetric banded matrices with a Cholesky solve.

/// Lower band of a symmetric `n x n` matrix; entry `(i, j)` with
/// `i - bw <= j <= i` lives at `data[i * (bw + 1) + bw - (i - j)]`.
#[derive(Debug, Clone)]
pub(crate) struct Banded {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl Banded {
    pub fn zeros(n: usize, bw: usize) -> Self {
        let bw = bw.min(n.saturating_sub(1));
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        i * (self.bw + 1) + self.bw - (i - j)
    }

    /// Adds `v` at `(i, j)`; the mirrored entry is implied.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(i - j <= self.bw, "entry outside the band");
        let k = self.at(i, j);
        self.data[k] += v;
    }

    #[cfg(test)]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.at(i, j)]
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.data[self.at(i, i)]).collect()
    }

    pub fn add_diagonal(&mut self, shift: &[f64]) {
        for (i, s) in shift.iter().enumerate() {
            let k = self.at(i, i);
            self.data[k] += s;
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    /// `y = A x`.
    #[cfg(test)]
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..i {
                let a = self.data[self.at(i, j)];
                y[i] += a * x[j];
                y[j] += a * x[i];
            }
            y[i] += self.data[self.at(i, i)] * x[i];
        }
        y
    }

    /// Cholesky factor, or `None` when a pivot is not positive.
    pub fn cholesky(&self) -> Option<Banded> {
        let mut l = Banded::zeros(self.n, self.bw);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..=i {
                let mut s = self.data[self.at(i, j)];
                let kl = lo.max(j.saturating_sub(self.bw));
                for k in kl..j {
                    s -= l.data[l.at(i, k)] * l.data[l.at(j, k)];
                }
                let idx = l.at(i, j);
                if i == j {
                    if !(s > 0.0 && s.is_finite()) {
                        return None;
                    }
                    l.data[idx] = s.sqrt();
                } else {
                    l.data[idx] = s / l.data[l.at(j, j)];
                }
            }
        }
        Some(l)
    }

    /// Solves `L L^T x = b` with `self` holding `L`.
    pub fn cholesky_solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(self.bw);
            let row = &self.data[self.at(i, lo)..self.at(i, i)];
            let s = y[i] - row.iter().zip(&y[lo..i]).map(|(a, b)| a * b).sum::<f64>();
            y[i] = s / self.data[self.at(i, i)];
        }
        for i in (0..n).rev() {
            let y_i = y[i] / self.data[self.at(i, i)];
            y[i] = y_i;
            let lo = i.saturating_sub(self.bw);
            let row = &self.data[self.at(i, lo)..self.at(i, i)];
            for (yk, a) in y[lo..i].iter_mut().zip(row) {
                *yk -= a * y_i;
            }
        }
        y
    }
}
