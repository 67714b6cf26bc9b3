//! Dense univariate polynomials with integer coefficients.
//!
//! The element-pair integrands of the band matrices are polynomials with
//! small rational coefficients; scaling by 6 makes them integral, so all
//! symbolic manipulation (substitution, re-expansion around the singular
//! point) is exact and vanishing low-order coefficients are exactly zero.

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct IntPoly(pub Vec<i64>);

impl IntPoly {
    pub fn zero() -> Self {
        IntPoly(vec![])
    }

    pub fn constant(c: i64) -> Self {
        IntPoly(vec![c]).trimmed()
    }

    /// `c0 + c1·t`.
    pub fn linear(c0: i64, c1: i64) -> Self {
        IntPoly(vec![c0, c1]).trimmed()
    }

    fn trimmed(mut self) -> Self {
        while self.0.last() == Some(&0) {
            self.0.pop();
        }
        self
    }

    pub fn coeffs(&self) -> &[i64] {
        &self.0
    }

    pub fn add(&self, other: &Self) -> Self {
        let n = self.0.len().max(other.0.len());
        let c = (0..n)
            .map(|i| self.0.get(i).copied().unwrap_or(0) + other.0.get(i).copied().unwrap_or(0))
            .collect();
        IntPoly(c).trimmed()
    }

    pub fn scale(&self, k: i64) -> Self {
        IntPoly(self.0.iter().map(|c| c * k).collect()).trimmed()
    }

    pub fn mul(&self, other: &Self) -> Self {
        if self.0.is_empty() || other.0.is_empty() {
            return Self::zero();
        }
        let mut c = vec![0; self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        IntPoly(c).trimmed()
    }

    pub fn pow(&self, k: u32) -> Self {
        (0..k).fold(Self::constant(1), |acc, _| acc.mul(self))
    }

    /// `p(q(t))`.
    pub fn compose(&self, q: &Self) -> Self {
        self.0
            .iter()
            .rev()
            .fold(Self::zero(), |acc, &c| acc.mul(q).add(&Self::constant(c)))
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * t + c as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic() {
        let p = IntPoly::linear(1, -1); // 1 - t
        assert_eq!(p.pow(3).coeffs(), &[1, -3, 3, -1]);
        let q = IntPoly::linear(2, 1); // t + 2
                                       // (1 - (t + 2)) = -1 - t
        assert_eq!(p.compose(&q).coeffs(), &[-1, -1]);
        assert_eq!(p.add(&p.scale(-1)).coeffs(), &[] as &[i64]);
        assert_eq!(p.pow(2).eval(3.0), 4.0);
    }
}
