//! Chance-constrained minimum-expected-time control on a state grid.
//!
//! The controller minimizes the expected time to reach the target window
//! while keeping the probability of overshooting into the crash region
//! below a tolerance. The constraint is handled with a Lagrangian: the
//! penalized Bellman recursion assigns cost-to-go zero on the target set,
//! `λ` on the crash set, and one unit of time per step elsewhere, and a
//! root-finding pass on the dual subgradient picks the multiplier.

mod solve;

pub use solve::{
    bellman_backward, evaluate_risk, evaluate_time, solve_fixed_lambda, solve_lambda,
    DualOptions, DualSolution, ValuePolicy,
};

use crate::gp::{GpError, GpPosterior};
use crate::process::{step_true, TrueProcessParams};
use crate::quadrature::{GaussHermite, QuadratureError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DpError {
    #[error("invalid problem spec: {0}")]
    InvalidSpec(String),
    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),
    #[error(
        "dual risk curve is non-monotone beyond tolerance; diagnostic sweep (lambda, risk): {sweep:?}"
    )]
    NonMonotoneDual { sweep: Vec<(f64, f64)> },
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Gp(#[from] GpError),
}

/// The control problem: reach `[target_lo, target_hi]` from `initial_state`
/// within `horizon` steps, keeping the crash probability below
/// `risk_tolerance`, with inputs in `[input_min, input_max]`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProblemSpec {
    pub target_lo: f64,
    pub target_hi: f64,
    pub risk_tolerance: f64,
    pub input_min: f64,
    pub input_max: f64,
    pub horizon: usize,
    pub initial_state: f64,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        Self {
            target_lo: 1.0,
            target_hi: 1.05,
            risk_tolerance: 0.25,
            input_min: -0.1,
            input_max: 0.1,
            horizon: 15,
            initial_state: 0.0,
        }
    }
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<(), DpError> {
        if !(self.target_lo < self.target_hi) {
            return Err(DpError::InvalidSpec(format!(
                "target window [{}, {}] is empty",
                self.target_lo, self.target_hi
            )));
        }
        if !(self.risk_tolerance > 0.0 && self.risk_tolerance <= 1.0) {
            return Err(DpError::InvalidSpec(format!(
                "risk tolerance must be in (0, 1], got {}",
                self.risk_tolerance
            )));
        }
        if !(self.input_min < self.input_max) {
            return Err(DpError::InvalidSpec(format!(
                "input box [{}, {}] is empty",
                self.input_min, self.input_max
            )));
        }
        if self.horizon == 0 {
            return Err(DpError::InvalidSpec("horizon must be at least 1".into()));
        }
        Ok(())
    }
}

/// Membership of a state in the terminal structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    NonTerminal,
    /// Inside the target window; absorbing with zero cost.
    Safe,
    /// Beyond the target window; absorbing with the crash penalty.
    Crash,
}

/// Set membership of a state value.
pub fn classify(x: f64, spec: &ProblemSpec) -> NodeKind {
    if x > spec.target_hi {
        NodeKind::Crash
    } else if x >= spec.target_lo {
        NodeKind::Safe
    } else {
        NodeKind::NonTerminal
    }
}

/// Discretization parameters for the solver.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub state_min: f64,
    pub state_max: f64,
    pub state_step: f64,
    pub input_count: usize,
    pub quadrature_order: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            state_min: -0.3,
            state_max: 1.2,
            state_step: 0.005,
            input_count: 21,
            quadrature_order: 10,
        }
    }
}

/// State and input nodes plus the quadrature rule for the one-step
/// Gaussian expectation.
#[derive(Debug, Clone)]
pub struct Grids {
    state_nodes: Vec<f64>,
    input_nodes: Vec<f64>,
    quad: GaussHermite,
}

impl Grids {
    /// Builds grids from explicitly chosen nodes (used for small hand-made
    /// instances). Nodes must be strictly increasing.
    pub fn from_parts(
        state_nodes: Vec<f64>,
        input_nodes: Vec<f64>,
        quad: GaussHermite,
    ) -> Result<Self, DpError> {
        if state_nodes.len() < 2 {
            return Err(DpError::DegenerateGrid("need at least two state nodes".into()));
        }
        if input_nodes.is_empty() {
            return Err(DpError::DegenerateGrid("need at least one input node".into()));
        }
        if state_nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DpError::DegenerateGrid("state nodes must be strictly increasing".into()));
        }
        if input_nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DpError::DegenerateGrid("input nodes must be strictly increasing".into()));
        }
        Ok(Self {
            state_nodes,
            input_nodes,
            quad,
        })
    }

    pub fn state_nodes(&self) -> &[f64] {
        &self.state_nodes
    }

    pub fn input_nodes(&self) -> &[f64] {
        &self.input_nodes
    }

    pub fn quad(&self) -> &GaussHermite {
        &self.quad
    }

    pub fn n_states(&self) -> usize {
        self.state_nodes.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.input_nodes.len()
    }

    /// Index of the input node with the smallest magnitude.
    pub fn zero_input_index(&self) -> usize {
        let mut best = 0;
        for (j, &u) in self.input_nodes.iter().enumerate() {
            if u.abs() < self.input_nodes[best].abs() {
                best = j;
            }
        }
        best
    }
}

/// Builds the solver grids: a uniform state grid covering
/// `[state_min, state_max]` with spacing at most `state_step` and nodes
/// exactly at the target edges, uniformly spaced input nodes over the
/// input box, and the Gauss–Hermite rule.
pub fn build_grids(spec: &ProblemSpec, res: &GridSpec) -> Result<Grids, DpError> {
    spec.validate()?;
    if !(res.state_min < res.state_max) || !(res.state_step > 0.0) {
        return Err(DpError::DegenerateGrid(format!(
            "state range [{}, {}] with step {}",
            res.state_min, res.state_max, res.state_step
        )));
    }
    if res.input_count == 0 {
        return Err(DpError::DegenerateGrid("input_count must be at least 1".into()));
    }
    if spec.target_lo < res.state_min || spec.target_hi > res.state_max {
        return Err(DpError::DegenerateGrid(format!(
            "state range [{}, {}] must contain the target window [{}, {}]",
            res.state_min, res.state_max, spec.target_lo, spec.target_hi
        )));
    }

    let span = res.state_max - res.state_min;
    let ratio = span / res.state_step;
    let intervals = if (ratio - ratio.round()).abs() < 1e-9 {
        ratio.round() as usize
    } else {
        ratio.ceil() as usize
    }
    .max(1);
    let mut state_nodes: Vec<f64> = (0..=intervals)
        .map(|i| {
            let a = (intervals - i) as f64;
            let b = i as f64;
            (res.state_min * a + res.state_max * b) / intervals as f64
        })
        .collect();

    // Nodes exactly at the target edges: snap the nearest node when it is
    // within rounding distance, otherwise insert.
    for target in [spec.target_lo, spec.target_hi] {
        let nearest = state_nodes
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (a.1 - target).abs().partial_cmp(&(b.1 - target).abs()).unwrap()
            })
            .map(|(i, _)| i)
            .unwrap();
        if (state_nodes[nearest] - target).abs() <= 1e-9 {
            state_nodes[nearest] = target;
        } else {
            let pos = state_nodes.partition_point(|&v| v < target);
            state_nodes.insert(pos, target);
        }
    }
    if state_nodes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DpError::DegenerateGrid(
            "state nodes collapsed while pinning the target edges".into(),
        ));
    }

    let n = res.input_count;
    let input_nodes: Vec<f64> = if n == 1 {
        vec![0.5 * (spec.input_min + spec.input_max)]
    } else {
        (0..n)
            .map(|j| {
                let a = (n - 1 - j) as f64;
                let b = j as f64;
                (spec.input_min * a + spec.input_max * b) / (n - 1) as f64
            })
            .collect()
    };

    let quad = GaussHermite::new(res.quadrature_order)?;
    Grids::from_parts(state_nodes, input_nodes, quad)
}

/// One-step predictive moments of the (learned or true) dynamics.
pub trait TransitionModel {
    /// Mean and variance of the next state given `(x, u)`.
    fn moments(&self, x: f64, u: f64) -> (f64, f64);
}

impl TransitionModel for GpPosterior {
    fn moments(&self, x: f64, u: f64) -> (f64, f64) {
        self.moments1(x, u)
    }
}

/// Perfect-information moments: the true map with process-noise variance.
#[derive(Debug, Clone)]
pub struct TrueProcessModel {
    pub params: TrueProcessParams,
}

impl TransitionModel for TrueProcessModel {
    fn moments(&self, x: f64, u: f64) -> (f64, f64) {
        (
            step_true(x, u, &self.params, 0.0),
            self.params.noise_std * self.params.noise_std,
        )
    }
}

/// Predictive moments tabulated on the product grid, state-major.
#[derive(Debug, Clone)]
pub struct MomentsTable {
    n_states: usize,
    n_inputs: usize,
    means: Vec<f64>,
    vars: Vec<f64>,
}

impl MomentsTable {
    pub fn from_model(model: &dyn TransitionModel, grids: &Grids) -> Self {
        let (ns, ni) = (grids.n_states(), grids.n_inputs());
        let mut means = vec![0.0; ns * ni];
        let mut vars = vec![0.0; ns * ni];
        for (i, &x) in grids.state_nodes().iter().enumerate() {
            for (j, &u) in grids.input_nodes().iter().enumerate() {
                let (m, v) = model.moments(x, u);
                means[i * ni + j] = m;
                vars[i * ni + j] = v;
            }
        }
        Self {
            n_states: ns,
            n_inputs: ni,
            means,
            vars,
        }
    }

    /// Batched build from a fitted GP; equivalent to `from_model` but uses
    /// the grid-structured query path.
    pub fn from_gp(post: &GpPosterior, grids: &Grids) -> Result<Self, GpError> {
        let (means, vars) = post.scalar_grid_moments(grids.state_nodes(), grids.input_nodes())?;
        Ok(Self {
            n_states: grids.n_states(),
            n_inputs: grids.n_inputs(),
            means,
            vars,
        })
    }

    /// Builds a table from explicit per-(state, input) moments.
    pub fn from_parts(n_states: usize, n_inputs: usize, means: Vec<f64>, vars: Vec<f64>) -> Self {
        assert_eq!(means.len(), n_states * n_inputs);
        assert_eq!(vars.len(), n_states * n_inputs);
        Self {
            n_states,
            n_inputs,
            means,
            vars,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    #[inline]
    pub fn moments_at(&self, state_idx: usize, input_idx: usize) -> (f64, f64) {
        let k = state_idx * self.n_inputs + input_idx;
        (self.means[k], self.vars[k])
    }
}

/// Value of the continuation function at an off-grid state, honoring the
/// terminal sets per point: the target window is worth zero, anything
/// beyond it is worth `crash_value`, mass below the grid clamps to the
/// leftmost node, and interior states interpolate linearly.
pub(crate) fn terminal_aware_value(
    y: f64,
    values: &[f64],
    grids: &Grids,
    spec: &ProblemSpec,
    crash_value: f64,
) -> f64 {
    match classify(y, spec) {
        NodeKind::Safe => 0.0,
        NodeKind::Crash => crash_value,
        NodeKind::NonTerminal => {
            let nodes = grids.state_nodes();
            if y <= nodes[0] {
                return values[0];
            }
            if y >= nodes[nodes.len() - 1] {
                return values[values.len() - 1];
            }
            let hi = nodes.partition_point(|&v| v <= y);
            let lo = hi - 1;
            let theta = (y - nodes[lo]) / (nodes[hi] - nodes[lo]);
            values[lo] * (1.0 - theta) + values[hi] * theta
        }
    }
}

/// Gaussian expectation of the continuation value:
/// `Σ_k w_k · Ĵ(mean + sqrt(variance) · ξ_k)` with `Ĵ` as in
/// [`terminal_aware_value`].
pub fn expected_cost_to_go(
    j_next: &[f64],
    mean: f64,
    variance: f64,
    grids: &Grids,
    spec: &ProblemSpec,
    crash_value: f64,
) -> f64 {
    debug_assert!(variance >= 0.0);
    let sd = variance.sqrt();
    grids
        .quad()
        .nodes()
        .iter()
        .zip(grids.quad().weights())
        .map(|(&xi, &w)| w * terminal_aware_value(mean + sd * xi, j_next, grids, spec, crash_value))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn default_grid_has_301_nodes_with_exact_target_edges() {
        let spec = ProblemSpec::default();
        let grids = build_grids(&spec, &GridSpec::default()).unwrap();
        assert_eq!(grids.n_states(), 301);
        assert!(grids.state_nodes().contains(&1.0));
        assert!(grids.state_nodes().contains(&1.05));
        assert_eq!(grids.state_nodes()[0], -0.3);
        assert_eq!(*grids.state_nodes().last().unwrap(), 1.2);
        // Spacing bound.
        for w in grids.state_nodes().windows(2) {
            assert!(w[1] - w[0] <= 0.005 + 1e-12);
        }
        assert_eq!(grids.n_inputs(), 21);
        assert_eq!(grids.input_nodes()[0], -0.1);
        assert_eq!(grids.input_nodes()[10], 0.0);
        assert_eq!(grids.input_nodes()[20], 0.1);
        assert_eq!(grids.zero_input_index(), 10);
    }

    #[test]
    fn off_grid_target_edges_are_inserted() {
        let spec = ProblemSpec {
            target_lo: 1.0012,
            target_hi: 1.0512,
            ..Default::default()
        };
        let grids = build_grids(&spec, &GridSpec::default()).unwrap();
        assert!(grids.state_nodes().contains(&1.0012));
        assert!(grids.state_nodes().contains(&1.0512));
    }

    #[test]
    fn degenerate_ranges_rejected() {
        let spec = ProblemSpec::default();
        let bad = GridSpec {
            state_min: 1.0,
            state_max: 0.0,
            ..Default::default()
        };
        assert!(build_grids(&spec, &bad).is_err());
        let bad = GridSpec {
            state_step: 0.0,
            ..Default::default()
        };
        assert!(build_grids(&spec, &bad).is_err());
        let bad = GridSpec {
            state_max: 0.9,
            ..Default::default()
        };
        assert!(build_grids(&spec, &bad).is_err(), "target window outside range");
    }

    #[test]
    fn classification_boundaries() {
        let spec = ProblemSpec::default();
        assert_eq!(classify(0.9999, &spec), NodeKind::NonTerminal);
        assert_eq!(classify(1.0, &spec), NodeKind::Safe);
        assert_eq!(classify(1.05, &spec), NodeKind::Safe);
        assert_eq!(classify(1.0500001, &spec), NodeKind::Crash);
        assert_eq!(classify(-5.0, &spec), NodeKind::NonTerminal);
    }

    fn far_target_spec() -> ProblemSpec {
        // Target far above the toy grid so every quadrature point stays
        // non-terminal.
        ProblemSpec {
            target_lo: 100.0,
            target_hi: 100.05,
            ..Default::default()
        }
    }

    fn toy_grids() -> Grids {
        Grids::from_parts(
            (0..41).map(|i| -2.0 + 0.1 * i as f64).collect(),
            vec![-0.1, 0.1],
            GaussHermite::new(10).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn expected_cost_of_constant_function_is_the_constant() {
        let spec = far_target_spec();
        let grids = toy_grids();
        let j = vec![3.25; grids.n_states()];
        let v = expected_cost_to_go(&j, 0.3, 0.5, &grids, &spec, 7.0);
        assert_abs_diff_eq!(v, 3.25, epsilon = 1e-12);
    }

    #[test]
    fn vanishing_variance_collapses_to_interpolation() {
        let spec = far_target_spec();
        let grids = toy_grids();
        let j: Vec<f64> = grids.state_nodes().iter().map(|x| x * x).collect();
        let mean = 0.137;
        let v = expected_cost_to_go(&j, mean, 1e-30, &grids, &spec, 7.0);
        let direct = terminal_aware_value(mean, &j, &grids, &spec, 7.0);
        assert_abs_diff_eq!(v, direct, epsilon = 1e-12);
    }

    #[test]
    fn linear_function_expectation_is_exact() {
        let spec = far_target_spec();
        let grids = toy_grids();
        let (a, b) = (0.8, -0.4);
        let j: Vec<f64> = grids.state_nodes().iter().map(|x| a * x + b).collect();
        // Keep the quadrature support well inside the grid.
        for (mean, var) in [(0.0, 0.04), (-0.5, 0.01), (0.7, 0.0025)] {
            let v = expected_cost_to_go(&j, mean, var, &grids, &spec, 7.0);
            assert_abs_diff_eq!(v, a * mean + b, epsilon = 1e-10);
        }
    }

    #[test]
    fn quadrature_mass_in_target_window_counts_zero() {
        let spec = ProblemSpec::default();
        let grids = build_grids(&spec, &GridSpec::default()).unwrap();
        let j = vec![5.0; grids.n_states()];
        // All mass lands inside the window with a tiny variance.
        let v = expected_cost_to_go(&j, 1.025, 1e-12, &grids, &spec, 9.0);
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        // All mass overshoots: crash value.
        let v = expected_cost_to_go(&j, 1.2, 1e-12, &grids, &spec, 9.0);
        assert_abs_diff_eq!(v, 9.0, epsilon = 1e-12);
    }

    #[test]
    fn below_grid_mass_clamps_to_leftmost_value(){
        let spec = far_target_spec();
        let grids = toy_grids();
        let mut j = vec![1.0; grids.n_states()];
        j[0] = 42.0;
        let v = expected_cost_to_go(&j, -10.0, 1e-12, &grids, &spec, 7.0);
        assert_abs_diff_eq!(v, 42.0, epsilon = 1e-12);
    }

    #[test]
    fn true_process_model_moments() {
        let p = TrueProcessParams::default();
        let model = TrueProcessModel { params: p.clone() };
        let (m, v) = model.moments(0.5, 0.1);
        assert_eq!(m, step_true(0.5, 0.1, &p, 0.0));
        assert_eq!(v, 1e-4);
    }
}
