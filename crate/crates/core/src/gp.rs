//! Weighted sum-rate power control by successive geometric programming.
//!
//! Maximizing `sum_i w_i log(1 + SINR_i)` is the same as minimizing
//! `prod_i (D_i(p) / R_i(p))^{w_i}` where `R_i = sum_j G_ij p_j + n_i` is the
//! total received power at link `i`'s receiver and `D_i` is the same sum
//! without the `j = i` term. The ratio is a signomial. Each outer iteration
//! condenses `R_i` into its AM–GM monomial at the current point, which
//! upper-bounds the objective and is tight there, and solves the resulting
//! GP in `x = ln p`. In log space the GP objective is a weighted sum of
//! log-sum-exp terms minus a linear function, minimized over a box formed by
//! the power limits and a multiplicative trust region.
//!
//! Because every surrogate is tight at the current iterate and the inner
//! solver never accepts an uphill step, the true objective is non-decreasing
//! across outer iterations.
//!
//! With [`GpObjective::SmoothCapped`] each log-ratio passes through a smoothed
//! `min(., cap)` before weighting. The map is convex and non-decreasing, so
//! the surrogate stays convex, stays an upper bound and stays tight.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linkmodel::{evaluate, LinkProblem, PowerAlloc};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "powers_w")]
pub enum GpInit {
    FullPower,
    Given(Vec<f64>),
    /// Full power, plus one start per link with that link at the floor and
    /// the rest at full power; the best final point wins.
    MultiStart,
}

/// What the successive-GP loop maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GpObjective {
    /// `sum_i w_i W log2(1 + SINR_i)`.
    Uncapped,
    /// Per-link rate `c - softplus_s(c - ln(1 + SINR_i))` in nats, with
    /// `c` the spectral-efficiency cap. A smooth lower bound on the capped
    /// rate that stays within `ln(2) / sharpness` nats of it.
    SmoothCapped { sharpness: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpConfig {
    pub objective: GpObjective,
    pub outer_max_iters: usize,
    /// Stop once the relative WSR gain of an outer iteration falls below this.
    pub outer_tol: f64,
    /// Trust region: each outer step keeps `p_k / a <= p <= a * p_k`.
    pub trust_factor: f64,
    pub inner_max_iters: usize,
    pub inner_grad_tol: f64,
    /// Lower power bound as a fraction of each link's cap.
    pub p_floor_frac: f64,
    pub init: GpInit,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            objective: GpObjective::SmoothCapped { sharpness: 20.0 },
            outer_max_iters: 50,
            outer_tol: 1e-4,
            trust_factor: 2.0,
            inner_max_iters: 500,
            inner_grad_tol: 1e-9,
            p_floor_frac: 1e-8,
            init: GpInit::MultiStart,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.outer_tol > 0.0 && self.inner_grad_tol > 0.0) {
            return bad("GP tolerances must be > 0");
        }
        if !(self.trust_factor > 1.0) {
            return bad("trust_factor must be > 1");
        }
        if !(self.p_floor_frac > 0.0 && self.p_floor_frac < 1.0) {
            return bad("p_floor_frac must lie in (0, 1)");
        }
        if let GpObjective::SmoothCapped { sharpness } = self.objective {
            if !(sharpness > 0.0 && sharpness.is_finite()) {
                return bad("cap sharpness must be finite and > 0");
            }
        }
        if self.outer_max_iters == 0 || self.inner_max_iters == 0 {
            return bad("iteration limits must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpResult {
    pub alloc: PowerAlloc,
    /// Outer iterations of the winning start.
    pub outer_iters: usize,
    /// Outer iterations summed over all starts.
    pub total_outer_iters: usize,
    pub converged: bool,
    /// The maximized objective (bits/s) at the starting point and after each
    /// outer iteration.
    pub objective_trace: Vec<f64>,
}

/// AM–GM weights `theta_t = u_t / sum(u)` for posynomial term values `u_t`
/// at the expansion point.
pub fn condense_posynomial(terms: &[f64]) -> Result<Vec<f64>> {
    if terms.is_empty() {
        return Err(Error::Empty("posynomial with no terms"));
    }
    if let Some(t) = terms.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(Error::Domain(format!(
            "posynomial term value must be > 0, got {t}"
        )));
    }
    let total: f64 = terms.iter().sum();
    Ok(terms.iter().map(|t| t / total).collect())
}

/// `coef * prod_k x_k^{exps_k}` with `coef > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub coef: f64,
    pub exps: Vec<f64>,
}

impl Monomial {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.exps
            .iter()
            .zip(x)
            .fold(self.coef, |acc, (a, xi)| acc * xi.powf(*a))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Posynomial {
    pub terms: Vec<Monomial>,
}

impl Posynomial {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.eval(x)).sum()
    }

    /// Best local monomial under-estimator at `x0`, exact at `x0`.
    pub fn condense_at(&self, x0: &[f64]) -> Result<Monomial> {
        let values: Vec<f64> = self.terms.iter().map(|t| t.eval(x0)).collect();
        let theta = condense_posynomial(&values)?;
        let dim = x0.len();
        let mut exps = vec![0.0; dim];
        let mut log_coef = 0.0;
        for (t, th) in self.terms.iter().zip(&theta) {
            log_coef += th * (t.coef / th).ln();
            for (e, a) in exps.iter_mut().zip(&t.exps) {
                *e += th * a;
            }
        }
        Ok(Monomial {
            coef: log_coef.exp(),
            exps,
        })
    }
}

/// A smooth function with its gradient.
pub trait SmoothObjective {
    fn dim(&self) -> usize;
    /// Writes the gradient into `grad` and returns the value.
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
    fn value(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.value_grad(x, &mut g)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBounds {
    pub fn project(&self, x: &mut [f64]) {
        for ((xi, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *xi = xi.clamp(*lo, *hi);
        }
    }

    /// `P(x - g) - x`; zero exactly at a KKT point of the box problem.
    pub fn projected_gradient(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(g)
            .zip(self.lower.iter().zip(&self.upper))
            .map(|((xi, gi), (lo, hi))| (xi - gi).clamp(*lo, *hi) - xi)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iters: usize,
    pub converged: bool,
    pub pg_norm: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Projected gradient descent with Armijo backtracking along the projection
/// arc. Stops when the projected-gradient norm drops to `grad_tol`; on
/// running out of iterations it returns the last (and best) point with
/// `converged = false`.
pub fn inner_solve<F: SmoothObjective>(
    f: &F,
    bounds: &BoxBounds,
    x0: &[f64],
    max_iters: usize,
    grad_tol: f64,
) -> Result<InnerResult> {
    let n = f.dim();
    if x0.len() != n || bounds.lower.len() != n || bounds.upper.len() != n {
        return Err(Error::Shape {
            what: "inner solve dimensions".into(),
            expected: n,
            got: x0.len(),
        });
    }
    for (lo, hi) in bounds.lower.iter().zip(&bounds.upper) {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Domain(format!("bad box [{lo}, {hi}]")));
        }
    }

    const ARMIJO: f64 = 1e-4;
    const MIN_STEP: f64 = 1e-20;

    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let mut g = vec![0.0; n];
    let mut fx = f.value_grad(&x, &mut g);
    if !fx.is_finite() {
        return Err(Error::NonFinite(format!("objective at start: {fx}")));
    }
    let mut step = 1.0;
    let mut trial = vec![0.0; n];
    let mut g_trial = vec![0.0; n];

    let mut iters = 0;
    loop {
        let pg_norm = norm(&bounds.projected_gradient(&x, &g));
        if pg_norm <= grad_tol {
            return Ok(InnerResult {
                x,
                value: fx,
                iters,
                converged: true,
                pg_norm,
            });
        }
        if iters >= max_iters {
            return Ok(InnerResult {
                x,
                value: fx,
                iters,
                converged: false,
                pg_norm,
            });
        }
        iters += 1;

        let mut accepted = None;
        while step >= MIN_STEP {
            for k in 0..n {
                trial[k] = (x[k] - step * g[k]).clamp(bounds.lower[k], bounds.upper[k]);
            }
            let decrease: f64 = g
                .iter()
                .zip(&trial)
                .zip(&x)
                .map(|((gk, t), xk)| gk * (t - xk))
                .sum();
            let ft = f.value_grad(&trial, &mut g_trial);
            if ft.is_finite() && ft <= fx + ARMIJO * decrease {
                accepted = Some(ft);
                break;
            }
            step *= 0.5;
        }
        let Some(ft) = accepted else {
            // No descent possible at machine precision.
            return Ok(InnerResult {
                x,
                value: fx,
                iters,
                converged: false,
                pg_norm,
            });
        };
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut g, &mut g_trial);
        fx = ft;
        step *= 2.0;
    }
}

impl GpObjective {
    /// Maps `u = -ln(1 + SINR)` (or its condensed bound) to the per-link
    /// minimization term, returning value and slope. The smoothed cap is
    /// `-c + softplus_s(u + c)`, evaluated so that a huge `c` loses nothing.
    #[inline]
    fn link_term(self, u: f64, cap_nats: f64) -> (f64, f64) {
        match self {
            GpObjective::Uncapped => (u, 1.0),
            GpObjective::SmoothCapped { sharpness: s } => {
                let z = u + cap_nats;
                if z >= 0.0 {
                    let e = (-s * z).exp();
                    (u + e.ln_1p() / s, 1.0 / (1.0 + e))
                } else {
                    let e = (s * z).exp();
                    (-cap_nats + e.ln_1p() / s, e / (1.0 + e))
                }
            }
        }
    }

    /// The maximized quantity in bits/s at `powers`.
    pub fn wsr(self, problem: &LinkProblem, powers: &[f64]) -> f64 {
        let cap_nats = problem.se_cap_bps_hz * std::f64::consts::LN_2;
        problem
            .sinr(powers)
            .iter()
            .zip(&problem.weights)
            .map(|(s, w)| -w * self.link_term(-s.ln_1p(), cap_nats).0)
            .sum::<f64>()
            * problem.bandwidth_hz
            / std::f64::consts::LN_2
    }
}

/// Condensed WSR surrogate around one expansion point, in `x = ln p`.
///
/// With `u_i(x) = ln D_i(e^x) - ln Rhat_i(e^x)`, where `Rhat_i` is the AM–GM
/// monomial of `R_i` at the expansion point, the value is
/// `sum_i w_i phi(u_i(x))` for the objective's link term `phi`. Since
/// `Rhat_i <= R_i` and `phi` is non-decreasing, this bounds the true
/// objective from above and touches it at the expansion point.
struct CondensedWsr<'a> {
    problem: &'a LinkProblem,
    objective: GpObjective,
    cap_nats: f64,
    /// `theta[i * n + j]` for the `G_ij p_j` term of `R_i`.
    theta: Vec<f64>,
    /// Constant part of `ln Rhat_i`.
    log_rhat_const: Vec<f64>,
}

impl<'a> CondensedWsr<'a> {
    fn new(problem: &'a LinkProblem, objective: GpObjective, p: &[f64]) -> Result<Self> {
        let n = problem.n_links;
        let mut theta = vec![0.0; n * n];
        let mut log_rhat_const = vec![0.0; n];
        for i in 0..n {
            // Zero-gain terms are absent from the posynomial.
            let mut idx = Vec::with_capacity(n);
            let mut vals = Vec::with_capacity(n + 1);
            for (j, &pj) in p.iter().enumerate().take(n) {
                let g = problem.gain(i, j);
                if g > 0.0 {
                    idx.push(j);
                    vals.push(g * pj);
                }
            }
            vals.push(problem.noise_w[i]);
            let th = condense_posynomial(&vals)?;
            let mut c = 0.0;
            for (k, &j) in idx.iter().enumerate() {
                theta[i * n + j] = th[k];
                c += th[k] * (problem.gain(i, j) / th[k]).ln();
            }
            let th_noise = th[idx.len()];
            c += th_noise * (problem.noise_w[i] / th_noise).ln();
            log_rhat_const[i] = c;
        }
        Ok(Self {
            problem,
            objective,
            cap_nats: problem.se_cap_bps_hz * std::f64::consts::LN_2,
            theta,
            log_rhat_const,
        })
    }
}

impl SmoothObjective for CondensedWsr<'_> {
    fn dim(&self) -> usize {
        self.problem.n_links
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let prob = self.problem;
        let n = prob.n_links;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let p: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let mut du = vec![0.0; n];
        let mut value = 0.0;
        for i in 0..n {
            let row = &prob.gains[i * n..(i + 1) * n];
            let d = prob.interference_plus_noise(i, &p);
            let mut log_rhat = self.log_rhat_const[i];
            for j in 0..n {
                let th = self.theta[i * n + j];
                log_rhat += th * x[j];
                du[j] = -th;
                if j != i {
                    du[j] += row[j] * p[j] / d;
                }
            }
            let (phi, slope) = self.objective.link_term(d.ln() - log_rhat, self.cap_nats);
            let w = prob.weights[i];
            value += w * phi;
            for (g, dj) in grad.iter_mut().zip(&du) {
                *g += w * slope * dj;
            }
        }
        value
    }
}

fn to_power(x: f64, ln_lo: f64, lo: f64, ln_hi: f64, hi: f64) -> f64 {
    if x >= ln_hi {
        hi
    } else if x <= ln_lo {
        lo
    } else {
        x.exp().clamp(lo, hi)
    }
}

struct Run {
    p: Vec<f64>,
    trace: Vec<f64>,
    iters: usize,
    converged: bool,
}

struct Limits {
    floor: Vec<f64>,
    ln_floor: Vec<f64>,
    ln_max: Vec<f64>,
    ln_alpha: f64,
}

fn run_from(
    problem: &LinkProblem,
    config: &GpConfig,
    lim: &Limits,
    mut p: Vec<f64>,
) -> Result<Run> {
    let n = problem.n_links;
    let mut x: Vec<f64> = (0..n)
        .map(|k| p[k].ln().clamp(lim.ln_floor[k], lim.ln_max[k]))
        .collect();
    let mut wsr = config.objective.wsr(problem, &p);
    let mut trace = vec![wsr];
    let mut converged = false;
    let mut iters = 0;

    while iters < config.outer_max_iters {
        iters += 1;
        let surrogate = CondensedWsr::new(problem, config.objective, &p)?;
        let bounds = BoxBounds {
            lower: (0..n)
                .map(|k| (x[k] - lim.ln_alpha).max(lim.ln_floor[k]))
                .collect(),
            upper: (0..n)
                .map(|k| (x[k] + lim.ln_alpha).min(lim.ln_max[k]))
                .collect(),
        };
        let inner = inner_solve(
            &surrogate,
            &bounds,
            &x,
            config.inner_max_iters,
            config.inner_grad_tol,
        )?;
        let p_new: Vec<f64> = (0..n)
            .map(|k| {
                to_power(
                    inner.x[k],
                    lim.ln_floor[k],
                    lim.floor[k],
                    lim.ln_max[k],
                    problem.p_max_w[k],
                )
            })
            .collect();
        let wsr_new = config.objective.wsr(problem, &p_new);
        if !wsr_new.is_finite() {
            return Err(Error::NonFinite(format!(
                "WSR {wsr_new} during GP iteration"
            )));
        }
        if wsr_new < wsr {
            // Rounding-level regression: keep the previous point.
            trace.push(wsr);
            converged = true;
            break;
        }
        let rel = (wsr_new - wsr) / wsr.abs().max(f64::MIN_POSITIVE);
        p = p_new;
        x = inner.x;
        wsr = wsr_new;
        trace.push(wsr);
        if rel < config.outer_tol {
            converged = true;
            break;
        }
    }
    Ok(Run {
        p,
        trace,
        iters,
        converged,
    })
}

/// Starting points for a solve, already clamped into `[floor, p_max]`.
fn starting_points(
    problem: &LinkProblem,
    config: &GpConfig,
    floor: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let n = problem.n_links;
    let full = problem.p_max_w.clone();
    Ok(match &config.init {
        GpInit::FullPower => vec![full],
        GpInit::Given(p0) => {
            if p0.len() != n {
                return Err(Error::Shape {
                    what: "GP initial powers".into(),
                    expected: n,
                    got: p0.len(),
                });
            }
            vec![p0
                .iter()
                .zip(floor.iter().zip(&problem.p_max_w))
                .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
                .collect()]
        }
        GpInit::MultiStart => {
            let mut starts = vec![full.clone()];
            if n > 1 {
                for off in 0..n {
                    let mut p = full.clone();
                    p[off] = floor[off];
                    starts.push(p);
                }
            }
            starts
        }
    })
}

/// Near-optimal WSR power allocation for `config.objective`. The returned
/// [`PowerAlloc`] is evaluated with the hard spectral-efficiency cap.
pub fn wsr_maximize(problem: &LinkProblem, config: &GpConfig) -> Result<GpResult> {
    config.validate()?;
    problem.validate()?;

    let floor: Vec<f64> = problem
        .p_max_w
        .iter()
        .map(|m| m * config.p_floor_frac)
        .collect();
    let lim = Limits {
        ln_floor: floor.iter().map(|v| v.ln()).collect(),
        ln_max: problem.p_max_w.iter().map(|v| v.ln()).collect(),
        ln_alpha: config.trust_factor.ln(),
        floor,
    };

    let mut best: Option<(PowerAlloc, Run)> = None;
    let mut total = 0;
    for p0 in starting_points(problem, config, &lim.floor)? {
        let run = run_from(problem, config, &lim, p0)?;
        total += run.iters;
        // Starts are ranked by the capped WSR that gets reported.
        let alloc = evaluate(problem, &run.p)?;
        if best.as_ref().is_none_or(|(a, _)| alloc.wsr_bps > a.wsr_bps) {
            best = Some((alloc, run));
        }
    }
    let (alloc, best) = best.expect("at least one starting point");

    Ok(GpResult {
        alloc,
        outer_iters: best.iters,
        total_outer_iters: total,
        converged: best.converged,
        objective_trace: best.trace,
    })
}
