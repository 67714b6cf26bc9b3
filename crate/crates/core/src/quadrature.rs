//! One-dimensional quadrature rules.

use crate::{Error, Result};

/// Gauss–Legendre nodes and weights on `[-1, 1]`, computed by Newton
/// iteration on the Legendre recurrence.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    /// `∫_a^b f`.
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let dp = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, dp)
}

// Published 30-digit tables, kept verbatim.
#[allow(clippy::excessive_precision)]
const GK_XK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.000_000_000_000_000_000_000_000_000_000_000,
];
#[allow(clippy::excessive_precision)]
const GK_WK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
#[allow(clippy::excessive_precision)]
const GK_WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn gk15(a: f64, b: f64, f: &mut impl FnMut(f64) -> f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let fc = f(mid);
    let mut kronrod = fc * GK_WK[7];
    let mut gauss = fc * GK_WG[3];
    for j in 0..7 {
        let dx = half * GK_XK[j];
        let s = f(mid - dx) + f(mid + dx);
        kronrod += GK_WK[j] * s;
        if j % 2 == 1 {
            gauss += GK_WG[j / 2] * s;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Which adaptive rule to use in [`adaptive`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    /// Gauss–Kronrod 7/15 with bisection.
    GaussKronrod,
    /// Adaptive Simpson with Richardson correction; much coarser.
    Simpson,
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// Adaptive integration of `f` over `[a, b]` to absolute tolerance `tol`.
///
/// Fails with [`Error::Quadrature`], carrying the current estimate and its
/// error, when the subdivision budget runs out first.
pub fn adaptive(rule: Rule, a: f64, b: f64, tol: f64, mut f: impl FnMut(f64) -> f64) -> Result<Estimate> {
    const MAX_DEPTH: u32 = 50;
    let mut value = 0.0;
    let mut error = 0.0;
    let mut ok = true;
    match rule {
        Rule::GaussKronrod => {
            // Global strategy: always bisect the interval with the largest
            // error estimate until the summed estimate meets `tol`.
            const MAX_INTERVALS: usize = 5000;
            let (v, e) = gk15(a, b, &mut f);
            let mut parts = vec![(a, b, v, e)];
            loop {
                value = parts.iter().map(|p| p.2).sum();
                error = parts.iter().map(|p| p.3).sum();
                if error <= tol || !value.is_finite() {
                    break;
                }
                if parts.len() >= MAX_INTERVALS {
                    ok = false;
                    break;
                }
                let (idx, _) =
                    parts.iter().enumerate().fold(
                        (0, f64::NEG_INFINITY),
                        |best, (i, p)| {
                            if p.3 > best.1 {
                                (i, p.3)
                            } else {
                                best
                            }
                        },
                    );
                let (lo, hi, _, _) = parts.swap_remove(idx);
                let mid = 0.5 * (lo + hi);
                if !(lo < mid && mid < hi) {
                    ok = false;
                    break;
                }
                let (vl, el) = gk15(lo, mid, &mut f);
                let (vr, er) = gk15(mid, hi, &mut f);
                parts.push((lo, mid, vl, el));
                parts.push((mid, hi, vr, er));
            }
        }
        Rule::Simpson => {
            let fa = f(a);
            let fb = f(b);
            let fm = f(0.5 * (a + b));
            let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
            let mut stack = vec![(a, b, fa, fm, fb, whole, tol, 0u32)];
            while let Some((lo, hi, flo, fmid, fhi, whole, t, depth)) = stack.pop() {
                let mid = 0.5 * (lo + hi);
                let fl = f(0.5 * (lo + mid));
                let fr = f(0.5 * (mid + hi));
                let left = (mid - lo) / 6.0 * (flo + 4.0 * fl + fmid);
                let right = (hi - mid) / 6.0 * (fmid + 4.0 * fr + fhi);
                let diff = left + right - whole;
                if diff.abs() <= 15.0 * t || depth >= MAX_DEPTH {
                    if diff.abs() > 15.0 * t {
                        ok = false;
                    }
                    value += left + right + diff / 15.0;
                    error += diff.abs() / 15.0;
                } else {
                    stack.push((mid, hi, fmid, fr, fhi, right, 0.5 * t, depth + 1));
                    stack.push((lo, mid, flo, fl, fmid, left, 0.5 * t, depth + 1));
                }
            }
        }
    }
    if ok && value.is_finite() {
        Ok(Estimate { value, error })
    } else {
        Err(Error::Quadrature {
            estimate: value,
            residual: error,
        })
    }
}
