//! Harnack chains: a sequence of points along the optimal trajectory, each in
//! the forward cone of its predecessor, whose length bounds the exponent of
//! the global Harnack inequality.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::control::{
    default_kappa_grid, kappa_estimate, optimal_control, ConeSpec, ControlProblem, OptimalControl, KAPPA_GRID_POINTS,
};
use crate::error::{Error, Result};
use crate::model::{SpaceTimePoint, SystemMatrix};

/// Absolute time tolerance of the stopping-time search and of the snap to `T`.
pub const TIME_TOLERANCE: f64 = 1e-12;
/// Allowed excess of a step's cost over ε.
pub const COST_TOLERANCE: f64 = 1e-12;

/// Constants of the local Harnack inequality and of the chain construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarnackConfig {
    pub c_harnack: f64,
    pub beta: f64,
    pub r: f64,
    pub tau: f64,
    pub kappa: f64,
    /// Always `(r/κ)²`.
    pub epsilon: f64,
}

impl HarnackConfig {
    pub fn new(c_harnack: f64, beta: f64, r: f64, tau: f64, kappa: f64) -> Result<Self> {
        let cfg = HarnackConfig {
            c_harnack,
            beta,
            r,
            tau,
            kappa,
            epsilon: (r / kappa).powi(2),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `C = 10`, `β = 0.5`, `r = 0.25`, `τ = 1` and κ estimated for the system.
    pub fn default_for(system: &SystemMatrix) -> Result<Self> {
        let kappa = kappa_estimate(system, &default_kappa_grid(KAPPA_GRID_POINTS))?;
        Self::new(10.0, 0.5, 0.25, 1.0, kappa)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.c_harnack >= 1.0 && self.c_harnack.is_finite()) {
            return fail(format!("Harnack constant must be at least 1, got {}", self.c_harnack));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return fail(format!("beta must lie in (0, 1), got {}", self.beta));
        }
        if !(self.r > 0.0 && self.r < 1.0) {
            return fail(format!("r must lie in (0, 1), got {}", self.r));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return fail(format!("kappa must be positive, got {}", self.kappa));
        }
        let eps = (self.r / self.kappa).powi(2);
        if self.epsilon != eps {
            return fail(format!("epsilon must equal (r/kappa)^2 = {eps}, got {}", self.epsilon));
        }
        // the unit cylinders of radius r at times 0 and β must be disjoint and inside Q₁⁺
        let r2 = self.r * self.r;
        if r2 > self.beta || self.beta + r2 > 1.0 {
            return fail(format!(
                "cylinders of radius r = {} at offsets 0 and beta = {} are not disjoint inside the unit cylinder",
                self.r, self.beta
            ));
        }
        Ok(())
    }
}

/// Which rule ended a chain step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepClause {
    TimeBudget,
    CostBudget,
    Terminal,
}

impl StepClause {
    pub fn as_str(&self) -> &'static str {
        match self {
            StepClause::TimeBudget => "time-budget",
            StepClause::CostBudget => "cost-budget",
            StepClause::Terminal => "terminal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainStep {
    pub cost: f64,
    pub clause: StepClause,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnackChain {
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub steps: Vec<ChainStep>,
    /// Total cost `V` of the optimal control.
    pub cost: f64,
    pub epsilon: f64,
    pub beta: f64,
    /// `1/β + V/ε`.
    pub exponent: f64,
}

impl HarnackChain {
    /// Number of steps `J`.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn point(&self, j: usize) -> SpaceTimePoint {
        SpaceTimePoint::from_slice(self.times[j], &self.points[j])
    }
}

fn next_time(ctrl: &OptimalControl, t_j: f64, cfg: &HarnackConfig) -> Result<(f64, f64, StepClause)> {
    let big_t = ctrl.problem().big_t;
    let mut budget = (t_j + cfg.tau * cfg.beta).min(big_t);
    if big_t - budget <= TIME_TOLERANCE {
        budget = big_t;
    }
    let full = ctrl.partial_cost(t_j, budget)?;
    if full <= cfg.epsilon + COST_TOLERANCE {
        let clause = if budget == big_t {
            StepClause::Terminal
        } else {
            StepClause::TimeBudget
        };
        return Ok((budget, full, clause));
    }
    // g(s) = ∫_{t_j}^s |v̄|² − ε is nondecreasing with g' = |v̄(s)|²: Newton
    // steps, falling back to bisection when a step leaves the bracket
    let (mut lo, mut hi) = (t_j, budget);
    let mut s = 0.5 * (lo + hi);
    for _ in 0..200 {
        let g = ctrl.partial_cost(t_j, s)? - cfg.epsilon;
        if g.abs() <= 0.25 * COST_TOLERANCE {
            break;
        }
        if g < 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let slope = ctrl.control(s)?.norm_squared();
        let newton = s - g / slope;
        let next = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if next <= lo || next >= hi {
            break;
        }
        s = next;
    }
    let mut cost = ctrl.partial_cost(t_j, s)?;
    if cost > cfg.epsilon + COST_TOLERANCE {
        s = lo;
        cost = ctrl.partial_cost(t_j, s)?;
    }
    if !(s > t_j) {
        return Err(Error::Config(format!("chain step from t = {t_j} cannot advance under epsilon = {}", cfg.epsilon)));
    }
    if big_t - s <= TIME_TOLERANCE {
        s = big_t;
        cost = ctrl.partial_cost(t_j, s)?;
    }
    let clause = if s == big_t {
        StepClause::Terminal
    } else {
        StepClause::CostBudget
    };
    Ok((s, cost, clause))
}

/// Builds the chain `t_{j+1} = min(t_j + τβ, inf{s : ∫_{t_j}^s |v̄|² ≥ ε}, T)`
/// along the optimal trajectory. Requires `T − t ≤ τ`.
pub fn build_chain(problem: &ControlProblem, config: &HarnackConfig) -> Result<HarnackChain> {
    config.validate()?;
    let horizon = problem.horizon();
    if horizon > config.tau + TIME_TOLERANCE {
        return Err(Error::invalid(format!("chain horizon {horizon} exceeds tau = {}", config.tau)));
    }
    let ctrl = optimal_control(problem)?;
    let big_t = problem.big_t;
    let mut times = vec![problem.t];
    let mut points = vec![problem.x.as_slice().to_vec()];
    let mut steps = Vec::new();
    let bound = (1.0 / config.beta + ctrl.cost() / config.epsilon).ceil() as usize + 1;
    let mut t_j = problem.t;
    while t_j < big_t {
        if steps.len() > 4 * bound + 16 {
            return Err(Error::Config(format!("chain did not reach T within {} steps", steps.len())));
        }
        let (s, cost, clause) = next_time(&ctrl, t_j, config)?;
        let point = if s == big_t {
            problem.y.clone()
        } else {
            ctrl.trajectory(s)?
        };
        times.push(s);
        points.push(point.as_slice().to_vec());
        steps.push(ChainStep { cost, clause });
        t_j = s;
    }
    Ok(HarnackChain {
        times,
        points,
        steps,
        cost: ctrl.cost(),
        epsilon: config.epsilon,
        beta: config.beta,
        exponent: 1.0 / config.beta + ctrl.cost() / config.epsilon,
    })
}

/// Checks that every `(t_{j+1}, γ(t_{j+1}))` lies in `P_{β,r,√τ}(t_j, γ(t_j))`
/// and `t_{j+1} ≤ t_j + τβ`, with 1e-12 slack on times and on `√τ`.
pub fn verify_chain(chain: &HarnackChain, config: &HarnackConfig, system: &SystemMatrix) -> bool {
    if chain.times.len() != chain.points.len() || chain.times.len() != chain.steps.len() + 1 {
        return false;
    }
    if chain.points.iter().any(|p| p.len() != system.dim()) {
        return false;
    }
    (0..chain.steps.len()).all(|j| {
        let (a, b) = (chain.point(j), chain.point(j + 1));
        if b.t > a.t + config.tau * config.beta + TIME_TOLERANCE {
            return false;
        }
        let Ok(cone) = ConeSpec::new(config.beta, config.r, config.tau.sqrt(), a) else {
            return false;
        };
        cone.contains_with_slack(&b, system, TIME_TOLERANCE).unwrap_or(false)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainBound {
    pub exponent: f64,
    pub steps: usize,
    /// `J ≤ ceil(exponent) + 1`.
    pub within_bound: bool,
}

pub fn chain_bound_exponent(chain: &HarnackChain) -> ChainBound {
    ChainBound {
        exponent: chain.exponent,
        steps: chain.len(),
        within_bound: chain.len() as f64 <= chain.exponent.ceil() + 1.0,
    }
}

/// Multiplicative constants in `u(T, y) ≤ factor · u(t, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HarnackFactor {
    pub cost: f64,
    pub exponent: f64,
    /// `ln C^{1/β + V/ε}`.
    pub log_constructive: f64,
    /// `c = max(C^{1/β}, ln C / ε)`.
    pub c: f64,
    /// `ln(c e^{cV})`.
    pub log_statement: f64,
}

impl HarnackFactor {
    pub fn constructive(&self) -> f64 {
        self.log_constructive.exp()
    }

    pub fn statement(&self) -> f64 {
        self.log_statement.exp()
    }
}

pub fn harnack_factor_for_cost(cost: f64, config: &HarnackConfig) -> Result<HarnackFactor> {
    config.validate()?;
    if !(cost >= 0.0 && cost.is_finite()) {
        return Err(Error::invalid(format!("cost must be non-negative, got {cost}")));
    }
    let ln_c = config.c_harnack.ln();
    let exponent = 1.0 / config.beta + cost / config.epsilon;
    let c = config.c_harnack.powf(1.0 / config.beta).max(ln_c / config.epsilon);
    Ok(HarnackFactor {
        cost,
        exponent,
        log_constructive: exponent * ln_c,
        c,
        log_statement: c.ln() + c * cost,
    })
}

pub fn global_harnack_factor(problem: &ControlProblem, config: &HarnackConfig) -> Result<HarnackFactor> {
    if problem.horizon() > config.tau + TIME_TOLERANCE {
        return Err(Error::invalid(format!("horizon {} exceeds tau = {}", problem.horizon(), config.tau)));
    }
    harnack_factor_for_cost(crate::control::optimal_cost(problem)?, config)
}

/// Endpoints of a chain as vectors.
pub fn chain_points(chain: &HarnackChain) -> Vec<DVector<f64>> {
    chain.points.iter().map(|p| DVector::from_column_slice(p)).collect()
}
