use nalgebra::DMatrix;

use super::poly::IntPoly;
use super::{WeightGrid, WeightVector};
use crate::error::check_len;
use crate::fem::Mesh1D;
use crate::quadrature::GaussLegendre;
use crate::{par, Error, NodalVector, Result};

/// Element pairs at least this many elements apart are integrated with
/// Gauss–Legendre; closer pairs use exact antiderivatives.
const FAR_OFFSET: i64 = 2;
const FAR_GAUSS_POINTS: usize = 20;
const LOG_BRANCH_TOL: f64 = 1e-12;

/// Band matrices `A_k` of the weighted nonlocal seminorm on a P1 mesh.
#[derive(Debug, Clone)]
pub struct NonlocalTensor {
    s: f64,
    mesh: Mesh1D,
    grid: WeightGrid,
    matrices: Vec<DMatrix<f64>>,
    full: DMatrix<f64>,
}

/// Outcome of the two-sided comparison between the weighted seminorm and the
/// `H^s` seminorm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckReport {
    /// `|u|²_{σ,s}`
    pub lhs_upper: f64,
    /// `γ₂ |u|²_{H^s}`
    pub rhs_upper: f64,
    /// `|u|²_{H^s}`
    pub lhs_lower: f64,
    /// `γ₁⁻¹ |u|²_{σ,s} + 4 |Ω| δ^{−1−2s} ‖u‖²`
    pub rhs_lower: f64,
    pub pass: bool,
}

impl CheckReport {
    /// Smallest relative slack `(rhs − lhs) / max(lhs, rhs)` of the two
    /// inequalities; nonnegative iff both hold exactly.
    pub fn min_slack(&self) -> f64 {
        fn slack(lhs: f64, rhs: f64) -> f64 {
            let scale = lhs.abs().max(rhs.abs());
            if scale == 0.0 {
                0.0
            } else {
                (rhs - lhs) / scale
            }
        }
        slack(self.lhs_upper, self.rhs_upper).min(slack(self.lhs_lower, self.rhs_lower))
    }
}

impl NonlocalTensor {
    /// Assemble `A_k` for every piece of `grid`:
    ///
    /// `(A_k)_{ij} = ∬_{|x−y| ∈ (t_{k−1}, t_k)} (φ_i(x)−φ_i(y))(φ_j(x)−φ_j(y)) / |x−y|^{1+2s}`.
    pub fn assemble(mesh: &Mesh1D, grid: &WeightGrid, s: f64) -> Result<Self> {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::InvalidArgument(format!("order s must lie in (0,1), got {s}")));
        }
        let n_el = mesh.n_elements() as i64;
        let kernels: Vec<PairKernel> = (-(n_el - 1)..n_el).map(PairKernel::new).collect();
        let gl = GaussLegendre::new(FAR_GAUSS_POINTS);
        let matrices = par::map_range(grid.n_pieces(), |k| {
            assemble_band(mesh, &kernels, grid.piece(k), s, &gl)
        });
        let n = mesh.n_nodes();
        let full = matrices.iter().fold(DMatrix::zeros(n, n), |acc, a| acc + a);
        Ok(Self {
            s,
            mesh: mesh.clone(),
            grid: grid.clone(),
            matrices,
            full,
        })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn mesh(&self) -> &Mesh1D {
        &self.mesh
    }

    pub fn grid(&self) -> &WeightGrid {
        &self.grid
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn n_pieces(&self) -> usize {
        self.matrices.len()
    }

    /// `Σ_k A_k`, the `H^s(Ω)` seminorm matrix (weight `σ ≡ 1`).
    pub fn full_range(&self) -> &DMatrix<f64> {
        &self.full
    }

    fn check_weight(&self, sigma: &WeightVector) -> Result<()> {
        if sigma.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// `L(σ) = Σ_k σ_k A_k` from raw piece values.
    pub fn operator_raw(&self, sigma: &[f64]) -> Result<DMatrix<f64>> {
        check_len(self.n_pieces(), sigma.len())?;
        let n = self.mesh.n_nodes();
        let mut l = DMatrix::zeros(n, n);
        for (a, &w) in self.matrices.iter().zip(sigma) {
            if w != 0.0 {
                l.zip_apply(a, |x: &mut f64, y: f64| *x += w * y);
            }
        }
        Ok(l)
    }

    pub fn operator(&self, sigma: &WeightVector) -> Result<DMatrix<f64>> {
        self.check_weight(sigma)?;
        self.operator_raw(sigma.values())
    }

    /// `L(σ) u`.
    pub fn apply(&self, sigma: &WeightVector, u: &NodalVector) -> Result<NodalVector> {
        check_len(self.mesh.n_nodes(), u.len())?;
        Ok(self.operator(sigma)? * u)
    }

    /// `|u|²_{σ,s} = uᵀ L(σ) u`.
    pub fn seminorm_sq(&self, sigma: &WeightVector, u: &NodalVector) -> Result<f64> {
        check_len(self.mesh.n_nodes(), u.len())?;
        self.check_weight(sigma)?;
        Ok(self
            .matrices
            .iter()
            .zip(sigma.values())
            .map(|(a, &w)| w * quad_form(a, u))
            .sum())
    }

    /// `|u|²_{H^s}`.
    pub fn sobolev_seminorm_sq(&self, u: &NodalVector) -> Result<f64> {
        check_len(self.mesh.n_nodes(), u.len())?;
        Ok(quad_form(&self.full, u))
    }

    /// `uᵀ A_k v` for every band.
    pub fn band_pairings(&self, u: &NodalVector, v: &NodalVector) -> Result<Vec<f64>> {
        check_len(self.mesh.n_nodes(), u.len())?;
        check_len(self.mesh.n_nodes(), v.len())?;
        Ok(self.matrices.iter().map(|a| (a * v).dot(u)).collect())
    }

    /// Frobenius pairings `⟨A_k, W⟩ = Σ_ij (A_k)_ij W_ij` for every band.
    /// With `W = Σ_i q_i u_iᵀ` this is `Σ_i q_iᵀ A_k u_i`.
    pub fn frobenius_pairings(&self, w: &DMatrix<f64>) -> Result<Vec<f64>> {
        check_len(self.mesh.n_nodes(), w.nrows())?;
        check_len(self.mesh.n_nodes(), w.ncols())?;
        Ok(par::map(&self.matrices, |a| a.dot(w)))
    }

    /// Evaluate both sides of the two-sided bound between `|·|_{σ,s}` and
    /// `|·|_{H^s}` for the admissible weight `sigma`.
    pub fn check_norm_equivalence(&self, sigma: &WeightVector, u: &NodalVector) -> Result<CheckReport> {
        const SLACK: f64 = 1e-10;
        let adm = sigma.admissible();
        let weighted = self.seminorm_sq(sigma, u)?;
        let sobolev = self.sobolev_seminorm_sq(u)?;
        let l2 = p1_l2_norm_sq(&self.mesh, u);
        let measure = self.mesh.measure();
        let rhs_upper = adm.gamma2 * sobolev;
        let rhs_lower = weighted / adm.gamma1 + 4.0 * measure * adm.delta.powf(-1.0 - 2.0 * self.s) * l2;
        let holds = |lhs: f64, rhs: f64| lhs <= rhs + SLACK * lhs.abs().max(rhs.abs());
        Ok(CheckReport {
            lhs_upper: weighted,
            rhs_upper,
            lhs_lower: sobolev,
            rhs_lower,
            pass: holds(weighted, rhs_upper) && holds(sobolev, rhs_lower),
        })
    }

    /// Dump all band matrices as CSV rows `row,col,k,value` (zero entries
    /// skipped).
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "row,col,k,value")?;
        for (k, a) in self.matrices.iter().enumerate() {
            for i in 0..a.nrows() {
                for j in 0..a.ncols() {
                    let v = a[(i, j)];
                    if v != 0.0 {
                        writeln!(out, "{i},{j},{k},{v:.17e}")?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn quad_form(a: &DMatrix<f64>, u: &NodalVector) -> f64 {
    (a * u).dot(u)
}

/// Exact `‖u‖²_{L²}` of a P1 function given by nodal values.
pub(crate) fn p1_l2_norm_sq(mesh: &Mesh1D, u: &NodalVector) -> f64 {
    let h = mesh.h();
    u.as_slice()
        .windows(2)
        .map(|w| h / 3.0 * (w[0] * w[0] + w[0] * w[1] + w[1] * w[1]))
        .sum()
}

/// Integrands of one element pair, depending only on the element offset
/// `m = e − f` between the `x`-element `e` and the `y`-element `f`.
///
/// Local coordinates `x = x_e + hξ`, `y = x_f + hη` turn `|x − y|` into
/// `h|m + τ|` with `τ = ξ − η`; integrating the polynomial numerator over `η`
/// at fixed `τ` leaves `6·Q(τ)` with integer coefficients, one polynomial for
/// `τ ∈ [0, 1]` and one for `τ ∈ [−1, 0]`.
#[derive(Debug, Clone)]
struct PairKernel {
    m: i64,
    /// Node offsets relative to the left node of the `y`-element.
    offsets: Vec<i64>,
    /// Index pairs `(a, b)`, `a ≤ b`, into `offsets`.
    pairs: Vec<(usize, usize)>,
    plus: Vec<IntPoly>,
    minus: Vec<IntPoly>,
}

impl PairKernel {
    fn new(m: i64) -> Self {
        let mut offsets = vec![0, 1, m, m + 1];
        offsets.sort_unstable();
        offsets.dedup();
        // a_o(ξ) − b_o(η) as (constant, ξ-coefficient, η-coefficient).
        let diff = |o: i64| -> (i64, i64, i64) {
            let a = if o == m {
                (1, -1)
            } else if o == m + 1 {
                (0, 1)
            } else {
                (0, 0)
            };
            let b = if o == 0 {
                (1, -1)
            } else if o == 1 {
                (0, 1)
            } else {
                (0, 0)
            };
            (a.0 - b.0, a.1, -b.1)
        };
        let mut pairs = Vec::new();
        let mut plus = Vec::new();
        let mut minus = Vec::new();
        for a in 0..offsets.len() {
            for b in a..offsets.len() {
                let (p, q) = eta_integrated(diff(offsets[a]), diff(offsets[b]));
                pairs.push((a, b));
                plus.push(p);
                minus.push(q);
            }
        }
        Self {
            m,
            offsets,
            pairs,
            plus,
            minus,
        }
    }

    /// `∫ Q(τ) |m + τ|^{−1−2s} dτ` over `{τ : |m + τ| ∈ (lo, hi)}` for every
    /// pair, in units where `h = 1`.
    fn band_values(&self, lo: f64, hi: f64, s: f64, gl: &GaussLegendre) -> Vec<f64> {
        let m = self.m;
        let mut out = vec![0.0; self.pairs.len()];
        for (polys, t0, t1) in [(&self.plus, 0i64, 1i64), (&self.minus, -1, 0)] {
            let (r0, r1) = (m + t0, m + t1);
            let positive = r0 >= 0;
            // Range of ρ = |r| covered by the segment, clipped to the band.
            let (rho0, rho1) = if positive { (r0, r1) } else { (-r1, -r0) };
            let a = (rho0 as f64).max(lo);
            let b = (rho1 as f64).min(hi);
            if a >= b {
                continue;
            }
            if m.abs() >= FAR_OFFSET {
                // τ as a function of ρ: τ = ±ρ − m.
                let (ta, tb) = if positive {
                    (a - m as f64, b - m as f64)
                } else {
                    (-b - m as f64, -a - m as f64)
                };
                let mut acc = vec![0.0; polys.len()];
                let half = 0.5 * (tb - ta);
                let mid = 0.5 * (ta + tb);
                for (&x, &w) in gl.nodes().iter().zip(gl.weights()) {
                    let tau = mid + half * x;
                    let kern = w * half * (m as f64 + tau).abs().powf(-1.0 - 2.0 * s);
                    for (acc, p) in acc.iter_mut().zip(polys) {
                        *acc += kern * p.eval(tau);
                    }
                }
                for (o, v) in out.iter_mut().zip(acc) {
                    *o += v / 6.0;
                }
            } else {
                let sub = if positive {
                    IntPoly::linear(-m, 1)
                } else {
                    IntPoly::linear(-m, -1)
                };
                for (o, p) in out.iter_mut().zip(polys) {
                    let r = p.compose(&sub);
                    let v: f64 = r
                        .coeffs()
                        .iter()
                        .enumerate()
                        .filter(|(_, &c)| c != 0)
                        .map(|(pow, &c)| c as f64 * power_integral(pow as f64 - 2.0 * s, a, b))
                        .sum();
                    *o += v / 6.0;
                }
            }
        }
        out
    }
}

/// `∫_a^b ρ^{e−1} dρ` for `0 ≤ a < b`, stable as `e → 0`.
fn power_integral(e: f64, a: f64, b: f64) -> f64 {
    if a == 0.0 {
        assert!(
            e > LOG_BRANCH_TOL,
            "nonintegrable monomial at the diagonal; numerator must vanish there"
        );
        return b.powf(e) / e;
    }
    let log_ratio = (b / a).ln();
    if e.abs() < LOG_BRANCH_TOL {
        log_ratio
    } else {
        a.powf(e) * (e * log_ratio).exp_m1() / e
    }
}

/// Multiply two linear forms in `(ξ, η)`, substitute `ξ = η + τ`, and
/// integrate over `η`. Returns `6·Q` on `τ ∈ [0,1]` (η ∈ [0, 1−τ]) and on
/// `τ ∈ [−1,0]` (η ∈ [−τ, 1]).
fn eta_integrated(l1: (i64, i64, i64), l2: (i64, i64, i64)) -> (IntPoly, IntPoly) {
    // (c, cξ, cη) → (c, cτ, cη) after ξ = η + τ.
    let sub = |(c, cx, ce): (i64, i64, i64)| (c, cx, cx + ce);
    let (a0, at, ae) = sub(l1);
    let (b0, bt, be) = sub(l2);
    // coefficient of τ^i η^j
    let mut c = [[0i64; 3]; 3];
    let l1 = [(a0, 0, 0), (at, 1, 0), (ae, 0, 1)];
    let l2 = [(b0, 0, 0), (bt, 1, 0), (be, 0, 1)];
    for &(x, i1, j1) in &l1 {
        for &(y, i2, j2) in &l2 {
            c[i1 + i2][j1 + j2] += x * y;
        }
    }
    let one_minus_tau = IntPoly::linear(1, -1);
    let minus_tau = IntPoly::linear(0, -1);
    let mut plus = IntPoly::zero();
    let mut minus = IntPoly::zero();
    for (i, row) in c.iter().enumerate() {
        for (j, &cij) in row.iter().enumerate() {
            if cij == 0 {
                continue;
            }
            let tau_pow = IntPoly::linear(0, 1).pow(i as u32);
            let scale = cij * 6 / (j as i64 + 1);
            let upper = one_minus_tau.pow(j as u32 + 1);
            plus = plus.add(&tau_pow.mul(&upper).scale(scale));
            let span = IntPoly::constant(1).add(&minus_tau.pow(j as u32 + 1).scale(-1));
            minus = minus.add(&tau_pow.mul(&span).scale(scale));
        }
    }
    (plus, minus)
}

fn assemble_band(
    mesh: &Mesh1D,
    kernels: &[PairKernel],
    (t_lo, t_hi): (f64, f64),
    s: f64,
    gl: &GaussLegendre,
) -> DMatrix<f64> {
    let n = mesh.n_nodes();
    let n_el = mesh.n_elements() as i64;
    let h = mesh.h();
    let lo = t_lo / h;
    let hi = t_hi / h;
    let scale = h.powf(1.0 - 2.0 * s);
    let mut a = DMatrix::zeros(n, n);
    for kernel in kernels {
        let m = kernel.m;
        // Pair distances cover |m + τ| ∈ [|m| − 1, |m| + 1].
        if ((m.abs() - 1).max(0) as f64) >= hi || ((m.abs() + 1) as f64) <= lo {
            continue;
        }
        let vals = kernel.band_values(lo, hi, s, gl);
        if vals.iter().all(|&v| v == 0.0) {
            continue;
        }
        let f_start = (-m).max(0);
        let f_end = (n_el - 1).min(n_el - 1 - m);
        for f in f_start..=f_end {
            for (&(ia, ib), &v) in kernel.pairs.iter().zip(&vals) {
                let i = (f + kernel.offsets[ia]) as usize;
                let j = (f + kernel.offsets[ib]) as usize;
                let v = v * scale;
                a[(i, j)] += v;
                if i != j {
                    a[(j, i)] += v;
                }
            }
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlocal::oracle::{oracle_entry, OracleOptions};
    use crate::nonlocal::Admissible;

    fn tensor(n_nodes: usize, n_pieces: usize, s: f64) -> NonlocalTensor {
        let mesh = Mesh1D::new(n_nodes).unwrap();
        let grid = WeightGrid::uniform(n_pieces, 1.0).unwrap();
        NonlocalTensor::assemble(&mesh, &grid, s).unwrap()
    }

    #[test]
    fn eta_integration_same_element_vanishes_quadratically() {
        // Same element, same node: numerator (1−ξ − (1−η))² = τ², integrated
        // over an η-interval of length 1 − |τ|.
        let k = PairKernel::new(0);
        let idx = k.pairs.iter().position(|&(a, b)| a == 0 && b == 0).unwrap();
        assert_eq!(k.plus[idx].coeffs(), &[0, 0, 6, -6]);
        assert_eq!(k.minus[idx].coeffs(), &[0, 0, 6, 6]);
    }

    #[test]
    fn power_integral_branches() {
        assert!((power_integral(1.0, 0.0, 2.0) - 2.0).abs() < 1e-15);
        assert!((power_integral(0.0, 1.0, std::f64::consts::E) - 1.0).abs() < 1e-15);
        let e = 1e-9;
        let direct = (2f64.powf(e) - 1.0) / e;
        assert!((power_integral(e, 1.0, 2.0) - direct).abs() < 1e-6);
        assert!((power_integral(e, 1.0, 2.0) - 2f64.ln()).abs() < 1e-8);
        assert!((power_integral(-0.8, 1.0, 2.0) - (2f64.powf(-0.8) - 1.0) / -0.8).abs() < 1e-15);
    }

    #[test]
    fn constants_in_kernel_and_symmetry() {
        for s in [0.1, 0.5, 0.9] {
            let t = tensor(9, 10, s);
            let one = NodalVector::from_element(9, 1.0);
            for a in t.matrices() {
                let scale = a.amax().max(1e-300);
                assert!((a * &one).amax() <= 1e-12 * scale);
                assert!((a - a.transpose()).amax() <= 1e-14 * scale);
            }
        }
    }

    #[test]
    fn bands_sum_to_single_band_assembly() {
        for s in [0.1, 0.5, 0.9] {
            let t = tensor(17, 18, s);
            let single = tensor(17, 1, s);
            let diff = (t.full_range() - &single.matrices()[0]).amax();
            assert!(diff <= 1e-10 * single.matrices()[0].amax(), "s={s}: {diff:e}");
        }
    }

    #[test]
    fn small_mesh_entry_matches_oracle() {
        let mesh = Mesh1D::new(5).unwrap();
        let grid = WeightGrid::uniform(4, 1.0).unwrap();
        let t = NonlocalTensor::assemble(&mesh, &grid, 0.5).unwrap();
        let opts = OracleOptions::default();
        let o = oracle_entry(&mesh, grid.piece(0), 0.5, 1, 1, &opts).unwrap().value;
        let a = t.matrices()[0][(1, 1)];
        assert!((a - o).abs() <= 1e-8 * o.abs(), "assembled {a}, oracle {o}");
    }

    #[test]
    fn seminorm_basics() {
        let t = tensor(9, 10, 0.5);
        let adm = Admissible::new(0.1, 10.0, 1.0).unwrap();
        let grid = t.grid().clone();
        let sigma = WeightVector::constant(grid.clone(), 1.0, adm).unwrap();
        let one = NodalVector::from_element(9, 1.0);
        assert!(t.seminorm_sq(&sigma, &one).unwrap().abs() < 1e-12);
        assert!(t.apply(&sigma, &one).unwrap().amax() < 1e-12);
        let u = NodalVector::from_fn(9, |i, _| ((i * 7) % 5) as f64 - 2.0);
        let v = t.seminorm_sq(&sigma, &u).unwrap();
        assert!(v > 0.0);
        assert!((t.seminorm_sq(&sigma, &(&u * 2.0)).unwrap() - 4.0 * v).abs() < 1e-12 * v);
        assert!((v - t.sobolev_seminorm_sq(&u).unwrap()).abs() < 1e-12 * v);
        let other = WeightVector::constant(WeightGrid::uniform(3, 1.0).unwrap(), 1.0, adm).unwrap();
        assert!(matches!(t.seminorm_sq(&other, &u), Err(Error::GridMismatch)));
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let t = tensor(3, 2, 0.5);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("row,col,k,value"));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 4);
        let mantissa = row[3].split('e').next().unwrap();
        assert!(mantissa.trim_start_matches('-').len() >= 16);
    }
}
