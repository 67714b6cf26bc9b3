//! Box-constrained minimization of the reduced cost.
//!
//! Bounds are handled by a nonlinear primal-dual active-set strategy: at every
//! iterate the multiplier estimate `λ = ∇F` (the `L²` Riesz representative)
//! predicts which pieces sit on their lower or upper bound; those are pinned
//! and a quasi-Newton step with Armijo backtracking is taken on the remaining
//! pieces. The inverse-Hessian approximation is restarted whenever the
//! predicted active sets change.
//!
//! All inner products on the weight space are `L²((0, d))` products of
//! piecewise constants, `⟨a, b⟩ = Σ_k w_k a_k b_k`, where `w_k` are the piece
//! widths. Coordinate gradients `g` are converted to Riesz gradients `g / w`.

use nalgebra::{DMatrix, DVector};

use crate::error::check_len;
use crate::{Error, Result};

/// Componentwise bounds `lower ≤ σ ≤ upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_len(lower.len(), upper.len())?;
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidArgument("lower bound exceeds upper bound".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.len()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| v >= l && v <= u)
    }
}

/// Pointwise `L²` projection onto the box, i.e. a componentwise clamp.
pub fn project_box(sigma_raw: &[f64], bounds: &BoxBounds) -> Vec<f64> {
    sigma_raw
        .iter()
        .zip(bounds.lower.iter().zip(&bounds.upper))
        .map(|(&v, (&l, &u))| v.max(l).min(u))
        .collect()
}

/// `Φ(σ) = σ − P(σ − c ∇F(σ))`, evaluated piecewise.
pub fn phi_residual(sigma: &[f64], riesz_grad: &[f64], bounds: &BoxBounds, c: f64) -> Vec<f64> {
    sigma
        .iter()
        .zip(riesz_grad)
        .zip(bounds.lower.iter().zip(&bounds.upper))
        .map(|((&x, &g), (&l, &u))| x - (x - c * g).min(u).max(l))
        .collect()
}

/// `‖v‖_{L²((0,d))}` for a piecewise-constant `v`.
pub fn l2_norm(v: &[f64], widths: &[f64]) -> f64 {
    v.iter().zip(widths).map(|(a, w)| w * a * a).sum::<f64>().sqrt()
}

/// A smooth function of piecewise-constant weights.
pub trait Objective {
    fn dim(&self) -> usize;
    /// Piece widths defining the `L²` metric.
    fn widths(&self) -> Vec<f64>;
    /// Value and coordinate gradient `∂F/∂σ_k`.
    fn evaluate(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl<T: Objective + ?Sized> Objective for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn widths(&self) -> Vec<f64> {
        (**self).widths()
    }
    fn evaluate(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        (**self).evaluate(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingCriteria {
    /// Tolerance on `‖Φ(σ)‖_{L²}`.
    pub phi_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub armijo_c1: f64,
    pub armijo_shrink: f64,
    pub max_backtracks: usize,
    /// The constant `c` in `Φ` and in the active-set prediction.
    pub pdas_c: f64,
}

impl Default for StoppingCriteria {
    fn default() -> Self {
        Self {
            phi_tol: 1e-8,
            max_outer: 50,
            max_inner: 500,
            armijo_c1: 1e-4,
            armijo_shrink: 0.5,
            max_backtracks: 60,
            pdas_c: 1.0,
        }
    }
}

impl StoppingCriteria {
    pub fn validate(&self) -> Result<()> {
        let ok = self.phi_tol > 0.0
            && self.max_outer > 0
            && self.max_inner > 0
            && self.max_backtracks > 0
            && self.pdas_c > 0.0
            && self.armijo_c1 > 0.0
            && self.armijo_c1 < 1.0
            && self.armijo_shrink > 0.0
            && self.armijo_shrink < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid stopping criteria {self:?}")))
        }
    }
}

/// Why an optimizer run stopped without a stationarity certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flag {
    LineSearchFailed,
    MaxInnerIterations,
    MaxOuterIterations,
}

impl std::fmt::Display for Flag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Flag::LineSearchFailed => "line_search_failed",
            Flag::MaxInnerIterations => "max_inner_iterations",
            Flag::MaxOuterIterations => "max_outer_iterations",
        })
    }
}

/// One row of the optimizer trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub outer_iter: usize,
    pub inner_iter: usize,
    pub value: f64,
    pub phi_norm: f64,
    pub n_active_lower: usize,
    pub n_active_upper: usize,
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub sigma: Vec<f64>,
    pub value: f64,
    pub phi_norm: f64,
    /// `λ = ∇F` (Riesz) on the active sets, zero elsewhere.
    pub multiplier: Vec<f64>,
    pub active_lower: Vec<usize>,
    pub active_upper: Vec<usize>,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub history: Vec<TraceRow>,
    pub flag: Option<Flag>,
}

impl OptimizerState {
    pub fn converged(&self) -> bool {
        self.flag.is_none()
    }

    /// Trace as CSV with header
    /// `outer_iter,inner_iter,F,phi_norm,n_active_lower,n_active_upper`.
    pub fn write_trace<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "outer_iter,inner_iter,F,phi_norm,n_active_lower,n_active_upper")?;
        for r in &self.history {
            writeln!(
                out,
                "{},{},{:.17e},{:.17e},{},{}",
                r.outer_iter, r.inner_iter, r.value, r.phi_norm, r.n_active_lower, r.n_active_upper
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct ActiveSets {
    lower: Vec<usize>,
    upper: Vec<usize>,
}

fn predict_active(x: &[f64], lambda: &[f64], bounds: &BoxBounds, c: f64) -> ActiveSets {
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for k in 0..x.len() {
        if lambda[k] + c * (bounds.lower[k] - x[k]) > 0.0 {
            lower.push(k);
        } else if -lambda[k] + c * (x[k] - bounds.upper[k]) > 0.0 {
            upper.push(k);
        }
    }
    ActiveSets { lower, upper }
}

/// Minimize `problem` over `bounds`, starting from the feasible `init`.
///
/// Errors from the objective are propagated; convergence trouble is reported
/// through [`OptimizerState::flag`] together with the best iterate.
pub fn pdas_solve<O: Objective>(
    problem: &O,
    bounds: &BoxBounds,
    init: &[f64],
    crit: &StoppingCriteria,
) -> Result<OptimizerState> {
    crit.validate()?;
    let n = problem.dim();
    check_len(n, bounds.len())?;
    check_len(n, init.len())?;
    if !bounds.contains(init) {
        return Err(Error::Infeasible("initial point violates the bounds".into()));
    }
    let widths = problem.widths();
    check_len(n, widths.len())?;
    let c = crit.pdas_c;
    let riesz = |g: &[f64]| -> Vec<f64> { g.iter().zip(&widths).map(|(g, w)| g / w).collect() };
    let identity = || DMatrix::from_diagonal(&DVector::from_iterator(n, widths.iter().map(|w| 1.0 / w)));

    let mut x = init.to_vec();
    let (mut f, mut g) = problem.evaluate(&x)?;
    let mut rg = riesz(&g);
    let mut h_inv = identity();
    let mut fresh = true;
    let mut prev_sets: Option<ActiveSets> = None;
    let mut outer = 0usize;
    let mut inner = 0usize;
    let mut history = Vec::new();
    let mut flag = None;

    let sets = loop {
        let sets = predict_active(&x, &rg, bounds, c);
        let phi_norm = l2_norm(&phi_residual(&x, &rg, bounds, c), &widths);
        if prev_sets.as_ref() != Some(&sets) {
            outer += 1;
            h_inv = identity();
            fresh = true;
        }
        history.push(TraceRow {
            outer_iter: outer,
            inner_iter: inner,
            value: f,
            phi_norm,
            n_active_lower: sets.lower.len(),
            n_active_upper: sets.upper.len(),
        });
        if phi_norm <= crit.phi_tol {
            break sets;
        }
        if outer > crit.max_outer {
            flag = Some(Flag::MaxOuterIterations);
            break sets;
        }
        if inner >= crit.max_inner {
            flag = Some(Flag::MaxInnerIterations);
            break sets;
        }

        let mut mask = vec![true; n];
        let mut target = x.clone();
        for &k in &sets.lower {
            mask[k] = false;
            target[k] = bounds.lower[k];
        }
        for &k in &sets.upper {
            mask[k] = false;
            target[k] = bounds.upper[k];
        }

        let mut accepted = None;
        for attempt in 0..2 {
            if attempt == 1 {
                if fresh {
                    break;
                }
                h_inv = identity();
                fresh = true;
            }
            let g_free = DVector::from_iterator(n, (0..n).map(|k| if mask[k] { g[k] } else { 0.0 }));
            let mut hg = &h_inv * g_free;
            if fresh {
                // Without curvature information the Riesz gradient carries
                // no length scale; stretch short steps to the size of x.
                let len = l2_norm(hg.as_slice(), &widths);
                let scale = l2_norm(&x, &widths);
                if len > 0.0 && len < scale {
                    hg *= scale / len;
                }
            }
            let dir: Vec<f64> = (0..n)
                .map(|k| if mask[k] { -hg[k] } else { target[k] - x[k] })
                .collect();
            if let Some(step) = armijo(problem, bounds, &x, f, &g, &dir, &mask, &target, crit)? {
                accepted = Some(step);
                break;
            }
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            flag = Some(Flag::LineSearchFailed);
            break sets;
        };
        inner += 1;

        let s: Vec<f64> = (0..n).map(|k| if mask[k] { x_new[k] - x[k] } else { 0.0 }).collect();
        let y: Vec<f64> = (0..n).map(|k| if mask[k] { g_new[k] - g[k] } else { 0.0 }).collect();
        let s = DVector::from_vec(s);
        let y = DVector::from_vec(y);
        let sy = s.dot(&y);
        if sy > 1e-14 * s.norm() * y.norm() && sy > 0.0 {
            let hy = &h_inv * &y;
            if fresh {
                // Scale the restarted approximation to the observed curvature.
                let yhy = y.dot(&hy);
                if yhy > 0.0 {
                    h_inv *= sy / yhy;
                }
                fresh = false;
            }
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            let rho = 1.0 / sy;
            // H⁺ = H − ρ(H y sᵀ + s yᵀ H) + (ρ² yᵀHy + ρ) s sᵀ
            h_inv -= (&hy * s.transpose() + &s * hy.transpose()) * rho;
            h_inv += &s * s.transpose() * (rho * rho * yhy + rho);
        }

        prev_sets = Some(sets);
        x = x_new;
        f = f_new;
        g = g_new;
        rg = riesz(&g);
    };

    let mut multiplier = vec![0.0; n];
    for &k in sets.lower.iter().chain(&sets.upper) {
        multiplier[k] = rg[k];
    }
    let phi_norm = history.last().map_or(f64::NAN, |r| r.phi_norm);
    Ok(OptimizerState {
        sigma: x,
        value: f,
        phi_norm,
        multiplier,
        active_lower: sets.lower,
        active_upper: sets.upper,
        outer_iters: outer,
        inner_iters: inner,
        history,
        flag,
    })
}

/// Accepted point with its value and gradient.
type Step = (Vec<f64>, f64, Vec<f64>);

/// Projected Armijo backtracking along `dir`; `None` if no step is accepted.
#[allow(clippy::too_many_arguments)]
fn armijo<O: Objective>(
    problem: &O,
    bounds: &BoxBounds,
    x: &[f64],
    f: f64,
    g: &[f64],
    dir: &[f64],
    free: &[bool],
    target: &[f64],
    crit: &StoppingCriteria,
) -> Result<Option<Step>> {
    let mut t = 1.0;
    for _ in 0..crit.max_backtracks {
        // A full step lands pinned pieces exactly on their bound.
        let trial: Vec<f64> = (0..x.len())
            .map(|k| {
                if t == 1.0 && !free[k] {
                    target[k]
                } else {
                    x[k] + t * dir[k]
                }
            })
            .collect();
        let trial = project_box(&trial, bounds);
        let decrease: f64 = trial.iter().zip(x).zip(g).map(|((a, b), g)| g * (a - b)).sum();
        if decrease >= 0.0 {
            // Not a descent direction, or the step collapsed to nothing.
            return Ok(None);
        }
        let (f_new, g_new) = problem.evaluate(&trial)?;
        if f_new <= f + crit.armijo_c1 * decrease {
            return Ok(Some((trial, f_new, g_new)));
        }
        t *= crit.armijo_shrink;
    }
    Ok(None)
}

/// `σ ≡ ν` restriction of a weight objective: `g(ν) = F(ν·1)`,
/// `g'(ν) = Σ_k ∂F/∂σ_k`.
pub struct TiedObjective<'a, O: Objective> {
    inner: &'a O,
}

impl<'a, O: Objective> TiedObjective<'a, O> {
    pub fn new(inner: &'a O) -> Self {
        Self { inner }
    }
}

impl<O: Objective> Objective for TiedObjective<'_, O> {
    fn dim(&self) -> usize {
        1
    }

    fn widths(&self) -> Vec<f64> {
        vec![self.inner.widths().iter().sum()]
    }

    fn evaluate(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_len(1, x.len())?;
        let (f, g) = self.inner.evaluate(&vec![x[0]; self.inner.dim()])?;
        Ok((f, vec![g.iter().sum()]))
    }
}

/// Learn a scalar regularization parameter `ν` (weight `σ ≡ ν`) with the same
/// projected quasi-Newton machinery on a single tied piece.
pub fn learn_scalar_nu<O: Objective>(
    problem: &O,
    nu_bounds: (f64, f64),
    init: f64,
    crit: &StoppingCriteria,
) -> Result<(f64, OptimizerState)> {
    let (lo, hi) = nu_bounds;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid nu bounds ({lo}, {hi})")));
    }
    let tied = TiedObjective::new(problem);
    let bounds = BoxBounds::new(vec![lo], vec![hi])?;
    let state = pdas_solve(&tied, &bounds, &[init.max(lo).min(hi)], crit)?;
    Ok((state.sigma[0], state))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `F(x) = ½ (x − c)ᵀ Q (x − c) + bᵀx` with `Q` given in coordinates.
    struct Quadratic {
        q: DMatrix<f64>,
        center: DVector<f64>,
        linear: DVector<f64>,
        widths: Vec<f64>,
    }

    impl Objective for Quadratic {
        fn dim(&self) -> usize {
            self.center.len()
        }
        fn widths(&self) -> Vec<f64> {
            self.widths.clone()
        }
        fn evaluate(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
            let x = DVector::from_column_slice(x);
            let r = &x - &self.center;
            let qr = &self.q * &r;
            let f = 0.5 * r.dot(&qr) + self.linear.dot(&x);
            Ok((f, (qr + &self.linear).iter().copied().collect()))
        }
    }

    fn separable(center: Vec<f64>, linear: Vec<f64>) -> Quadratic {
        let n = center.len();
        let widths: Vec<f64> = (0..n).map(|k| 0.1 + 0.05 * k as f64).collect();
        let diag: Vec<f64> = (0..n).map(|k| widths[k] * (1.0 + k as f64)).collect();
        Quadratic {
            q: DMatrix::from_diagonal(&DVector::from_vec(diag)),
            center: DVector::from_vec(center),
            linear: DVector::from_vec(linear),
            widths,
        }
    }

    #[test]
    fn projection_clamps_and_is_idempotent() {
        let b = BoxBounds::new(vec![0.1; 3], vec![2.0; 3]).unwrap();
        assert_eq!(project_box(&[0.5, 1.0, 1.5], &b), vec![0.5, 1.0, 1.5]);
        assert_eq!(project_box(&[-1.0; 3], &b), vec![0.1; 3]);
        assert_eq!(project_box(&[4.0; 3], &b), vec![2.0; 3]);
        let once = project_box(&[-3.0, 0.7, 9.0], &b);
        assert_eq!(project_box(&once, &b), once);
        assert!(BoxBounds::new(vec![1.0], vec![0.5]).is_err());
    }

    #[test]
    fn phi_cases() {
        let b = BoxBounds::new(vec![0.1; 2], vec![2.0; 2]).unwrap();
        assert_eq!(phi_residual(&[0.5, 1.0], &[0.0, 0.0], &b, 1.0), vec![0.0, 0.0]);
        let phi = phi_residual(&[0.5, 1.0], &[0.01, -0.02], &b, 1.0);
        assert!((phi[0] - 0.01).abs() < 1e-15 && (phi[1] + 0.02).abs() < 1e-15);
        assert_eq!(phi_residual(&[0.1, 2.0], &[3.0, -3.0], &b, 1.0), vec![0.0, 0.0]);
    }

    #[test]
    fn interior_minimizer_of_separable_quadratic() {
        let p = separable(vec![0.3, 0.7, 1.1, 1.9, 0.5], vec![0.0; 5]);
        let b = BoxBounds::new(vec![0.1; 5], vec![2.0; 5]).unwrap();
        let st = pdas_solve(&p, &b, &[1.0; 5], &StoppingCriteria::default()).unwrap();
        assert!(st.converged(), "{:?}", st.flag);
        assert!(st.phi_norm <= 1e-8);
        for (x, c) in st.sigma.iter().zip(p.center.iter()) {
            assert!((x - c).abs() < 1e-7);
        }
        assert!(st.active_lower.is_empty() && st.active_upper.is_empty());
    }

    #[test]
    fn minimizer_below_lower_bounds() {
        // Unconstrained minimizer at x = −1 on every piece.
        let p = separable(vec![0.0; 4], vec![0.0; 4]);
        let p = Quadratic {
            linear: &p.q * DVector::from_element(4, 1.0),
            ..p
        };
        let b = BoxBounds::new(vec![0.2; 4], vec![5.0; 4]).unwrap();
        let st = pdas_solve(&p, &b, &[3.0; 4], &StoppingCriteria::default()).unwrap();
        assert!(st.converged());
        assert_eq!(st.sigma, vec![0.2; 4]);
        assert_eq!(st.active_lower, vec![0, 1, 2, 3]);
        assert!(st.multiplier.iter().all(|&l| l > 0.0));
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let p = separable(vec![0.3, 0.7], vec![0.0; 2]);
        let b = BoxBounds::new(vec![0.1; 2], vec![2.0; 2]).unwrap();
        let st = pdas_solve(&p, &b, &[0.3, 0.7], &StoppingCriteria::default()).unwrap();
        assert!(st.converged());
        assert_eq!(st.inner_iters, 0);
        assert_eq!(st.history.len(), 1);
    }

    #[test]
    fn rejects_infeasible_start() {
        let p = separable(vec![0.3], vec![0.0]);
        let b = BoxBounds::new(vec![0.1], vec![2.0]).unwrap();
        let err = pdas_solve(&p, &b, &[3.0], &StoppingCriteria::default()).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn scalar_restriction_sums_gradient() {
        let p = separable(vec![0.3, 0.7, 1.1], vec![0.0; 3]);
        let tied = TiedObjective::new(&p);
        let (f1, g1) = tied.evaluate(&[0.9]).unwrap();
        let (f, g) = p.evaluate(&[0.9; 3]).unwrap();
        assert_eq!(f1, f);
        assert!((g1[0] - g.iter().sum::<f64>()).abs() < 1e-15);
        assert!((tied.widths()[0] - p.widths.iter().sum::<f64>()).abs() < 1e-15);
    }

    #[test]
    fn trace_csv_header() {
        let p = separable(vec![0.3, 0.7], vec![0.0; 2]);
        let b = BoxBounds::new(vec![0.1; 2], vec![2.0; 2]).unwrap();
        let st = pdas_solve(&p, &b, &[1.0, 1.0], &StoppingCriteria::default()).unwrap();
        let mut buf = Vec::new();
        st.write_trace(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("outer_iter,inner_iter,F,phi_norm,n_active_lower,n_active_upper\n"));
        assert_eq!(text.lines().count(), st.history.len() + 1);
    }
}
