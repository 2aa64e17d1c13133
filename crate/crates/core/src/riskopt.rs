//! Risk measures, sample average approximations and a box-constrained
//! quasi-Newton optimizer.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::forward_model::SemilinearProblem;
use crate::reduction::ReducedTrackingForm;
use crate::surrogate::SurrogateModel;

/// C² smoothing of `max(x, 0)`: zero below 0, `x^3/ε^2 - x^4/(2ε^3)` on
/// `[0, ε)`, `x - ε/2` from `ε` on.
pub fn splus(x: f64, eps: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x < eps {
        x * x * x / (eps * eps) - x * x * x * x / (2.0 * eps * eps * eps)
    } else {
        x - eps / 2.0
    }
}

pub fn splus_d1(x: f64, eps: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x < eps {
        3.0 * x * x / (eps * eps) - 2.0 * x * x * x / (eps * eps * eps)
    } else {
        1.0
    }
}

pub fn splus_d2(x: f64, eps: f64) -> f64 {
    if x <= 0.0 || x >= eps {
        0.0
    } else {
        6.0 * x / (eps * eps) - 6.0 * x * x / (eps * eps * eps)
    }
}

fn sorted(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Empty("risk sample"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("beta must lie in [0, 1), got {beta}")));
    }
    Ok(())
}

/// Empirical β-quantile: the order statistic with 1-based index `⌈βN⌉`.
pub fn mc_var(values: &[f64], beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let v = sorted(values)?;
    let k = ((beta * v.len() as f64 - 1e-9).ceil() as usize).clamp(1, v.len());
    Ok(v[k - 1])
}

/// Mean of the largest `⌈(1-β)N⌉` values (unsmoothed, for reporting).
pub fn mc_cvar(values: &[f64], beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let v = sorted(values)?;
    let n = v.len();
    let k = (((1.0 - beta) * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    Ok(v[n - k..].iter().sum::<f64>() / k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RiskKind {
    Mean,
    Cvar { beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskSpec {
    pub kind: RiskKind,
    pub eps: f64,
    /// Weight of the optional `½ w ||z||^2` control penalty.
    pub penalty: f64,
}

impl RiskSpec {
    pub fn cvar(beta: f64, eps: f64) -> Self {
        Self {
            kind: RiskKind::Cvar { beta },
            eps,
            penalty: 0.0,
        }
    }

    pub fn mean() -> Self {
        Self {
            kind: RiskKind::Mean,
            eps: 1e-4,
            penalty: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let RiskKind::Cvar { beta } = self.kind {
            check_beta(beta)?;
        }
        if !(self.eps > 0.0) || !(self.penalty >= 0.0) {
            return Err(Error::InvalidArgument(
                "eps must be positive and penalty nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Full-space tracking performance `||u - u_target||^2_M` with lumped `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingTarget {
    pub target: DVector<f64>,
    pub weight: DVector<f64>,
}

impl TrackingTarget {
    pub fn q(&self, u: &DVector<f64>) -> f64 {
        (u - &self.target)
            .iter()
            .zip(self.weight.iter())
            .map(|(d, w)| d * d * w)
            .sum()
    }

    /// `Q` and `∂_u Q = 2M(u - u_target)`.
    pub fn q_and_grad(&self, u: &DVector<f64>) -> (f64, DVector<f64>) {
        let diff = u - &self.target;
        let mdiff = diff.component_mul(&self.weight);
        (diff.dot(&mdiff), mdiff * 2.0)
    }
}

/// Per-sample performance values and control gradients at one `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleEvaluation {
    pub q: Vec<f64>,
    /// `N x d_Z`, row `i` is `∂_z Q_i`.
    pub grad: DMatrix<f64>,
}

pub trait SampleEvaluator: Sync {
    fn num_samples(&self) -> usize;
    fn num_controls(&self) -> usize;
    fn evaluate(&self, z: &DVector<f64>) -> Result<SampleEvaluation>;
    /// Instrumented (state, adjoint) PDE solve counts.
    fn solve_counts(&self) -> (usize, usize) {
        (0, 0)
    }
    fn evaluations(&self) -> usize;
}

/// Surrogate-backed evaluator working entirely in the reduced frame.
pub struct SurrogateEvaluator<'a> {
    model: &'a SurrogateModel,
    m_r: DMatrix<f64>,
    form: ReducedTrackingForm,
    calls: AtomicUsize,
}

impl<'a> SurrogateEvaluator<'a> {
    /// `m_r` holds the (unwhitened) KLE coefficients of the samples as rows.
    pub fn new(model: &'a SurrogateModel, m_r: DMatrix<f64>, form: ReducedTrackingForm) -> Result<Self> {
        check_len("surrogate sample coefficients", model.spec.param_dim, m_r.ncols())?;
        check_len("tracking form", model.spec.output_dim, form.c.len())?;
        if m_r.nrows() == 0 {
            return Err(Error::Empty("SAA samples"));
        }
        Ok(Self {
            model,
            m_r,
            form,
            calls: AtomicUsize::new(0),
        })
    }

    /// Predicted reduced states at `z` for every sample.
    pub fn predict(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.model.forward_batch(&self.m_r, &broadcast(z, self.m_r.nrows()))
    }
}

fn broadcast(z: &DVector<f64>, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, z.len(), |_, k| z[k])
}

impl SampleEvaluator for SurrogateEvaluator<'_> {
    fn num_samples(&self) -> usize {
        self.m_r.nrows()
    }

    fn num_controls(&self) -> usize {
        self.model.spec.control_dim
    }

    fn evaluate(&self, z: &DVector<f64>) -> Result<SampleEvaluation> {
        check_len("control vector", self.num_controls(), z.len())?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        let zs = broadcast(z, self.m_r.nrows());
        let (phi, grad) = self
            .model
            .forward_and_vjp_z(&self.m_r, &zs, |_, p| self.form.gradient(p))?;
        let q = phi.row_iter().map(|r| self.form.value(&r.transpose())).collect();
        Ok(SampleEvaluation { q, grad })
    }

    fn evaluations(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

/// PDE-backed evaluator: one state and one adjoint solve per sample, samples
/// processed in parallel and collected in index order.
pub struct PdeEvaluator<'a> {
    problem: &'a SemilinearProblem,
    fields: Vec<DVector<f64>>,
    target: TrackingTarget,
    calls: AtomicUsize,
    state_solves: AtomicUsize,
    adjoint_solves: AtomicUsize,
}

impl<'a> PdeEvaluator<'a> {
    pub fn new(problem: &'a SemilinearProblem, fields: Vec<DVector<f64>>, target: TrackingTarget) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::Empty("SAA samples"));
        }
        let d = problem.mesh().num_nodes();
        check_len("tracking target", d, target.target.len())?;
        for f in &fields {
            check_len("parameter field", d, f.len())?;
        }
        Ok(Self {
            problem,
            fields,
            target,
            calls: AtomicUsize::new(0),
            state_solves: AtomicUsize::new(0),
            adjoint_solves: AtomicUsize::new(0),
        })
    }

    /// Performance values only (state solves, no adjoints).
    pub fn values(&self, z: &DVector<f64>) -> Result<Vec<f64>> {
        self.fields
            .par_iter()
            .enumerate()
            .map(|(i, m)| {
                let state = self.problem.solve_state(m, z).map_err(|e| sample_failure(i, e))?;
                self.state_solves.fetch_add(1, Ordering::Relaxed);
                Ok(self.target.q(&state.u))
            })
            .collect()
    }
}

fn sample_failure(index: usize, source: Error) -> Error {
    Error::SampleFailure {
        index,
        source: Box::new(source),
    }
}

impl SampleEvaluator for PdeEvaluator<'_> {
    fn num_samples(&self) -> usize {
        self.fields.len()
    }

    fn num_controls(&self) -> usize {
        self.problem.num_controls()
    }

    fn evaluate(&self, z: &DVector<f64>) -> Result<SampleEvaluation> {
        check_len("control vector", self.num_controls(), z.len())?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        let per_sample: Vec<(f64, DVector<f64>)> = self
            .fields
            .par_iter()
            .enumerate()
            .map(|(i, m)| {
                let state = self.problem.solve_state(m, z).map_err(|e| sample_failure(i, e))?;
                self.state_solves.fetch_add(1, Ordering::Relaxed);
                let (q, qgrad) = self.target.q_and_grad(&state.u);
                let g = self
                    .problem
                    .performance_gradient(&state, &qgrad)
                    .map_err(|e| sample_failure(i, e))?;
                self.adjoint_solves.fetch_add(1, Ordering::Relaxed);
                Ok((q, g))
            })
            .collect::<Result<_>>()?;
        let mut grad = DMatrix::zeros(per_sample.len(), self.num_controls());
        let mut q = Vec::with_capacity(per_sample.len());
        for (i, (qi, gi)) in per_sample.into_iter().enumerate() {
            q.push(qi);
            grad.set_row(i, &gi.transpose());
        }
        Ok(SampleEvaluation { q, grad })
    }

    fn solve_counts(&self) -> (usize, usize) {
        (
            self.state_solves.load(Ordering::Relaxed),
            self.adjoint_solves.load(Ordering::Relaxed),
        )
    }

    fn evaluations(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

/// Value and gradient of an SAA objective at `(z, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    pub grad_z: DVector<f64>,
    /// Zero for the mean.
    pub grad_t: f64,
}

pub struct SaaProblem<'a> {
    pub evaluator: &'a dyn SampleEvaluator,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub risk: RiskSpec,
}

impl SaaProblem<'_> {
    pub fn validate(&self) -> Result<()> {
        self.risk.validate()?;
        let d = self.evaluator.num_controls();
        check_len("lower bounds", d, self.lower.len())?;
        check_len("upper bounds", d, self.upper.len())?;
        if self.lower.iter().zip(self.upper.iter()).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidArgument(
                "lower bounds must not exceed upper bounds".into(),
            ));
        }
        Ok(())
    }

    fn has_t(&self) -> bool {
        matches!(self.risk.kind, RiskKind::Cvar { .. })
    }

    /// Combines per-sample values into the smoothed risk objective.
    pub fn combine(&self, s: &SampleEvaluation, z: &DVector<f64>, t: f64) -> ObjectiveValue {
        let n = s.q.len() as f64;
        let pen = self.risk.penalty;
        let (mut value, mut grad_z, grad_t) = match self.risk.kind {
            RiskKind::Mean => {
                let mut g = DVector::zeros(s.grad.ncols());
                for i in 0..s.q.len() {
                    g += s.grad.row(i).transpose();
                }
                (s.q.iter().sum::<f64>() / n, g / n, 0.0)
            }
            RiskKind::Cvar { beta } => {
                let w = 1.0 / (n * (1.0 - beta));
                let eps = self.risk.eps;
                let mut value = 0.0;
                let mut dsum = 0.0;
                let mut g = DVector::zeros(s.grad.ncols());
                for (i, &qi) in s.q.iter().enumerate() {
                    value += splus(qi - t, eps);
                    let d = splus_d1(qi - t, eps);
                    dsum += d;
                    if d != 0.0 {
                        g += s.grad.row(i).transpose() * d;
                    }
                }
                (t + w * value, g * w, 1.0 - w * dsum)
            }
        };
        if pen > 0.0 {
            value += 0.5 * pen * z.norm_squared();
            grad_z += z * pen;
        }
        ObjectiveValue { value, grad_z, grad_t }
    }

    pub fn objective(&self, z: &DVector<f64>, t: f64) -> Result<ObjectiveValue> {
        let s = self.evaluator.evaluate(z)?;
        Ok(self.combine(&s, z, t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when `||projected gradient||_∞ <= gtol * max(1, |f|)`.
    pub gtol: f64,
    pub armijo_c: f64,
    pub max_halvings: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 500,
            gtol: 1e-6,
            armijo_c: 1e-4,
            max_halvings: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    IterationCap,
    LineSearchFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptResult {
    pub z: DVector<f64>,
    /// CVaR auxiliary variable, `None` for the mean.
    pub t: Option<f64>,
    pub value: f64,
    pub history: Vec<f64>,
    pub pg_history: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    pub evaluations: usize,
    pub state_solves: usize,
    pub adjoint_solves: usize,
}

/// Projected L-BFGS over `(z, t)` with `z` boxed and `t` free. Without `t0`
/// the CVaR variable starts at the empirical β-quantile of `Q(z0)`.
pub fn minimize(prob: &SaaProblem<'_>, z0: &DVector<f64>, t0: Option<f64>) -> Result<OptResult> {
    minimize_with(prob, z0, t0, &OptimizerOptions::default())
}

pub fn minimize_with(
    prob: &SaaProblem<'_>,
    z0: &DVector<f64>,
    t0: Option<f64>,
    opts: &OptimizerOptions,
) -> Result<OptResult> {
    prob.validate()?;
    let dz = prob.evaluator.num_controls();
    check_len("initial control", dz, z0.len())?;
    let has_t = prob.has_t();
    let n = dz + has_t as usize;
    let lo = DVector::from_fn(n, |i, _| if i < dz { prob.lower[i] } else { f64::NEG_INFINITY });
    let hi = DVector::from_fn(n, |i, _| if i < dz { prob.upper[i] } else { f64::INFINITY });
    let project = |x: &DVector<f64>| DVector::from_fn(n, |i, _| x[i].clamp(lo[i], hi[i]));
    let evals0 = prob.evaluator.evaluations();
    let solves0 = prob.evaluator.solve_counts();

    let z_start = project(&z0.clone().resize_vertically(n, 0.0)).rows(0, dz).into_owned();
    let first = prob.evaluator.evaluate(&z_start)?;
    let t_start = match (prob.risk.kind, t0) {
        (RiskKind::Cvar { .. }, Some(t)) => t,
        (RiskKind::Cvar { beta }, None) => mc_var(&first.q, beta)?,
        (RiskKind::Mean, _) => 0.0,
    };
    let pack = |z: &DVector<f64>, o: &ObjectiveValue| {
        let mut g = z.clone().resize_vertically(n, 0.0);
        g.rows_mut(0, dz).copy_from(&o.grad_z);
        if has_t {
            g[dz] = o.grad_t;
        }
        g
    };
    let eval = |x: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
        let z = x.rows(0, dz).into_owned();
        let t = if has_t { x[dz] } else { 0.0 };
        let o = prob.objective(&z, t)?;
        Ok((o.value, pack(&z, &o)))
    };

    let mut x = z_start.clone().resize_vertically(n, 0.0);
    if has_t {
        x[dz] = t_start;
    }
    let o = prob.combine(&first, &z_start, t_start);
    let mut f = o.value;
    let mut g = pack(&z_start, &o);
    let mut pairs: VecDeque<(DVector<f64>, DVector<f64>)> = VecDeque::new();
    let mut history = vec![f];
    let mut pg_history = Vec::new();
    let mut iterations = 0;
    let termination = loop {
        let pg = project(&(&x - &g)) - &x;
        let pg_norm = pg.amax();
        pg_history.push(pg_norm);
        if pg_norm <= opts.gtol * f.abs().max(1.0) {
            break Termination::Converged;
        }
        if iterations == opts.max_iter {
            break Termination::IterationCap;
        }
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)))
            .collect();
        let mut d = two_loop(&g, &pairs, &free);
        if g.dot(&d) >= 0.0 {
            pairs.clear();
            d = DVector::from_fn(n, |i, _| if free[i] { -g[i] } else { 0.0 });
        }
        if pairs.is_empty() {
            // unit steepest-descent steps can be wildly off scale
            let dmax = d.amax();
            if dmax > 1.0 {
                d /= dmax;
            }
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial = project(&(&x + &d * alpha));
            let (ft, gt) = eval(&trial)?;
            if ft <= f + opts.armijo_c * g.dot(&(&trial - &x)) {
                accepted = Some((trial, ft, gt));
                break;
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            break Termination::LineSearchFailure;
        };
        let s = &x_new - &x;
        let y = &g_new - &g;
        if s.dot(&y) > 1e-12 * s.norm() * y.norm() {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y));
        }
        x = x_new;
        f = f_new;
        g = g_new;
        iterations += 1;
        history.push(f);
    };
    let solves = prob.evaluator.solve_counts();
    Ok(OptResult {
        z: x.rows(0, dz).into_owned(),
        t: has_t.then(|| x[dz]),
        value: f,
        history,
        pg_history,
        iterations,
        termination,
        evaluations: prob.evaluator.evaluations() - evals0,
        state_solves: solves.0 - solves0.0,
        adjoint_solves: solves.1 - solves0.1,
    })
}

/// L-BFGS direction `-H g` restricted to the free variables.
fn two_loop(g: &DVector<f64>, pairs: &VecDeque<(DVector<f64>, DVector<f64>)>, free: &[bool]) -> DVector<f64> {
    let mask = |v: &DVector<f64>| DVector::from_fn(v.len(), |i, _| if free[i] { v[i] } else { 0.0 });
    let masked: Vec<(DVector<f64>, DVector<f64>, f64)> = pairs
        .iter()
        .filter_map(|(s, y)| {
            let (s, y) = (mask(s), mask(y));
            let sy = s.dot(&y);
            (sy > 1e-12 * s.norm() * y.norm()).then(|| (s, y, 1.0 / sy))
        })
        .collect();
    let mut q = mask(g);
    let mut alphas = Vec::with_capacity(masked.len());
    for (s, y, rho) in masked.iter().rev() {
        let a = rho * s.dot(&q);
        q -= y * a;
        alphas.push(a);
    }
    if let Some((s, y, _)) = masked.last() {
        q *= s.dot(y) / y.dot(y);
    }
    for ((s, y, rho), a) in masked.iter().zip(alphas.iter().rev()) {
        let b = rho * y.dot(&q);
        q += s * (a - b);
    }
    -q
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splus_branch_values() {
        let eps = 1e-4;
        assert_eq!(splus(-1.0, eps), 0.0);
        assert_eq!(splus_d1(-1.0, eps), 0.0);
        assert!((splus(eps, eps) - eps / 2.0).abs() < 1e-20);
        assert_eq!(splus_d1(eps, eps), 1.0);
        assert_eq!(splus_d2(eps, eps), 0.0);
        let lim = 6.0 * eps / (eps * eps) - 6.0 * eps * eps / (eps * eps * eps);
        assert!(lim.abs() < 1e-6);
        assert!((splus(eps / 2.0, eps) - 3.0 * eps / 32.0).abs() < 1e-18);
        assert!((splus_d1(eps / 2.0, eps) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn cvar_estimator_basics() {
        assert_eq!(mc_cvar(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap(), 3.5);
        assert_eq!(mc_cvar(&[4.0, 1.0, 3.0, 2.0], 0.0).unwrap(), 2.5);
        assert_eq!(mc_var(&[4.0, 1.0, 3.0, 2.0], 0.5).unwrap(), 2.0);
        assert!(mc_cvar(&[], 0.5).is_err());
        assert!(mc_cvar(&[1.0], 1.0).is_err());
        let v: Vec<f64> = (0..37).map(|i| ((i * 17) % 37) as f64).collect();
        let mut last = f64::NEG_INFINITY;
        for k in 0..100 {
            let c = mc_cvar(&v, k as f64 / 100.0).unwrap();
            assert!(c >= last);
            last = c;
        }
    }

    struct Quadratic {
        center: DVector<f64>,
        calls: AtomicUsize,
    }

    impl SampleEvaluator for Quadratic {
        fn num_samples(&self) -> usize {
            1
        }
        fn num_controls(&self) -> usize {
            self.center.len()
        }
        fn evaluate(&self, z: &DVector<f64>) -> Result<SampleEvaluation> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            let d = z - &self.center;
            let scales = DVector::from_fn(d.len(), |i, _| 1.0 + i as f64);
            let q = 0.5 * d.component_mul(&d).dot(&scales);
            Ok(SampleEvaluation {
                q: vec![q],
                grad: DMatrix::from_row_slice(1, d.len(), d.component_mul(&scales).as_slice()),
            })
        }
        fn evaluations(&self) -> usize {
            self.calls.load(Ordering::Relaxed)
        }
    }

    fn quadratic(center: Vec<f64>) -> Quadratic {
        Quadratic {
            center: DVector::from_vec(center),
            calls: AtomicUsize::new(0),
        }
    }

    #[test]
    fn interior_quadratic_minimum() {
        let ev = quadratic(vec![0.5, -1.0, 2.0, 0.0, 1.5]);
        let prob = SaaProblem {
            evaluator: &ev,
            lower: DVector::from_element(5, -4.0),
            upper: DVector::from_element(5, 4.0),
            risk: RiskSpec::mean(),
        };
        let opts = OptimizerOptions {
            gtol: 1e-10,
            ..OptimizerOptions::default()
        };
        let res = minimize_with(&prob, &DVector::zeros(5), None, &opts).unwrap();
        assert_eq!(res.termination, Termination::Converged);
        assert!(res.iterations <= 30, "{} iterations", res.iterations);
        assert!((&res.z - &ev.center).amax() < 1e-8);
        assert!(res.t.is_none());
    }

    #[test]
    fn minimum_outside_box_is_projected() {
        let ev = quadratic(vec![6.0, -1.0, -9.0]);
        let prob = SaaProblem {
            evaluator: &ev,
            lower: DVector::from_element(3, -4.0),
            upper: DVector::from_element(3, 4.0),
            risk: RiskSpec::mean(),
        };
        let res = minimize(&prob, &DVector::zeros(3), None).unwrap();
        assert_eq!(res.termination, Termination::Converged);
        assert!((&res.z - DVector::from_vec(vec![4.0, -1.0, -4.0])).amax() < 1e-8);
    }

    #[test]
    fn constant_samples_give_cvar_of_constant() {
        struct Constant;
        impl SampleEvaluator for Constant {
            fn num_samples(&self) -> usize {
                8
            }
            fn num_controls(&self) -> usize {
                1
            }
            fn evaluate(&self, _: &DVector<f64>) -> Result<SampleEvaluation> {
                Ok(SampleEvaluation {
                    q: vec![2.0; 8],
                    grad: DMatrix::zeros(8, 1),
                })
            }
            fn evaluations(&self) -> usize {
                0
            }
        }
        let prob = SaaProblem {
            evaluator: &Constant,
            lower: DVector::from_element(1, -1.0),
            upper: DVector::from_element(1, 1.0),
            risk: RiskSpec::cvar(0.9, 1e-4),
        };
        let res = minimize(&prob, &DVector::zeros(1), Some(0.0)).unwrap();
        assert!((res.value - 2.0).abs() <= 1e-4, "{}", res.value);
        let t = res.t.unwrap();
        assert!((t - 2.0).abs() <= 2e-4);

        // β = 0 with every sample at least ε above t: grad_t vanishes exactly
        let p0 = SaaProblem {
            risk: RiskSpec::cvar(0.0, 1e-4),
            ..prob
        };
        assert_eq!(p0.objective(&DVector::zeros(1), 1.0).unwrap().grad_t, 0.0);
    }
}
