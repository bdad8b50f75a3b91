//! Backward recursions and the dual root-finding pass.

use std::sync::Arc;

use super::{
    classify, DpError, Grids, MomentsTable, NodeKind, ProblemSpec,
    terminal_aware_value,
};

/// Tie window for the argmin over inputs; within it the smallest-magnitude
/// input wins.
const ARGMIN_TIE: f64 = 1e-12;

/// Time-indexed cost-to-go values and argmin inputs on the state grid.
#[derive(Debug, Clone)]
pub struct ValuePolicy {
    /// Lagrange multiplier the recursion was solved for.
    pub lambda: f64,
    horizon: usize,
    n_states: usize,
    /// Cost-to-go, `(horizon + 1) × n_states`, time-major.
    j: Vec<f64>,
    /// Argmin input indices, `horizon × n_states`, time-major.
    pi: Vec<u32>,
    /// Moments the recursion was computed from.
    moments: Arc<MomentsTable>,
}

impl ValuePolicy {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn moments(&self) -> &MomentsTable {
        &self.moments
    }

    /// Cost-to-go values at time `t` over all state nodes.
    pub fn values_at(&self, t: usize) -> &[f64] {
        &self.j[t * self.n_states..(t + 1) * self.n_states]
    }

    /// Argmin input index at `(t, state_node)`.
    pub fn input_index_at(&self, t: usize, state_idx: usize) -> usize {
        self.pi[t * self.n_states + state_idx] as usize
    }

    /// Argmin input value at `(t, state_node)`.
    pub fn input_at(&self, t: usize, state_idx: usize, grids: &Grids) -> f64 {
        grids.input_nodes()[self.input_index_at(t, state_idx)]
    }

    /// Policy lookup at an arbitrary state by nearest-node match.
    pub fn input_at_state(&self, t: usize, x: f64, grids: &Grids) -> f64 {
        let nodes = grids.state_nodes();
        let hi = nodes.partition_point(|&v| v < x);
        let idx = if hi == 0 {
            0
        } else if hi >= nodes.len() {
            nodes.len() - 1
        } else if (x - nodes[hi - 1]) <= (nodes[hi] - x) {
            hi - 1
        } else {
            hi
        };
        self.input_at(t, idx, grids)
    }

    /// Cost-to-go at time `t` evaluated at an arbitrary state with the
    /// same terminal-aware semantics as the recursion.
    pub fn value_at_state(&self, t: usize, x: f64, grids: &Grids, spec: &ProblemSpec) -> f64 {
        terminal_aware_value(x, self.values_at(t), grids, spec, self.lambda)
    }
}

/// Sparse one-step transition structure on the grid, independent of the
/// multiplier: per (non-terminal node, input), the quadrature mass that
/// overshoots into the crash region and the interpolation weights of the
/// remaining mass over grid nodes. Mass landing in the target window
/// carries value zero and needs no entries.
pub(crate) struct TransitionCoeffs {
    n_inputs: usize,
    /// Node indices of non-terminal states.
    pub(crate) nonterminal: Vec<usize>,
    crash_mass: Vec<f64>,
    offsets: Vec<u32>,
    entry_nodes: Vec<u32>,
    entry_weights: Vec<f64>,
}

impl TransitionCoeffs {
    pub(crate) fn build(table: &MomentsTable, grids: &Grids, spec: &ProblemSpec) -> Self {
        assert_eq!(table.n_states(), grids.n_states());
        assert_eq!(table.n_inputs(), grids.n_inputs());
        let nodes = grids.state_nodes();
        let nonterminal: Vec<usize> = nodes
            .iter()
            .enumerate()
            .filter(|(_, &x)| classify(x, spec) == NodeKind::NonTerminal)
            .map(|(i, _)| i)
            .collect();
        let n_inputs = grids.n_inputs();

        let mut crash_mass = Vec::with_capacity(nonterminal.len() * n_inputs);
        let mut offsets = Vec::with_capacity(nonterminal.len() * n_inputs + 1);
        let mut entry_nodes: Vec<u32> = Vec::new();
        let mut entry_weights: Vec<f64> = Vec::new();
        offsets.push(0u32);

        let mut scratch: Vec<(u32, f64)> = Vec::with_capacity(2 * grids.quad().order());
        for &node_idx in &nonterminal {
            for j in 0..n_inputs {
                let (mean, var) = table.moments_at(node_idx, j);
                let sd = var.max(0.0).sqrt();
                let mut crash = 0.0;
                scratch.clear();
                let add = |node: u32, w: f64, scratch: &mut Vec<(u32, f64)>| {
                    if let Some(e) = scratch.iter_mut().find(|e| e.0 == node) {
                        e.1 += w;
                    } else {
                        scratch.push((node, w));
                    }
                };
                for (&xi, &w) in grids.quad().nodes().iter().zip(grids.quad().weights()) {
                    let y = mean + sd * xi;
                    match classify(y, spec) {
                        NodeKind::Safe => {}
                        NodeKind::Crash => crash += w,
                        NodeKind::NonTerminal => {
                            if y <= nodes[0] {
                                add(0, w, &mut scratch);
                            } else if y >= nodes[nodes.len() - 1] {
                                add((nodes.len() - 1) as u32, w, &mut scratch);
                            } else {
                                let hi = nodes.partition_point(|&v| v <= y);
                                let lo = hi - 1;
                                let theta = (y - nodes[lo]) / (nodes[hi] - nodes[lo]);
                                add(lo as u32, w * (1.0 - theta), &mut scratch);
                                add(hi as u32, w * theta, &mut scratch);
                            }
                        }
                    }
                }
                crash_mass.push(crash);
                entry_nodes.extend(scratch.iter().map(|e| e.0));
                entry_weights.extend(scratch.iter().map(|e| e.1));
                offsets.push(entry_nodes.len() as u32);
            }
        }

        Self {
            n_inputs,
            nonterminal,
            crash_mass,
            offsets,
            entry_nodes,
            entry_weights,
        }
    }

    /// Expected continuation value for non-terminal row `row` and input `j`
    /// against `next` node values, with overshoot mass worth `crash_value`.
    #[inline]
    fn continuation(&self, row: usize, j: usize, next: &[f64], crash_value: f64) -> f64 {
        let cell = row * self.n_inputs + j;
        let lo = self.offsets[cell] as usize;
        let hi = self.offsets[cell + 1] as usize;
        let mut acc = self.crash_mass[cell] * crash_value;
        for k in lo..hi {
            acc += self.entry_weights[k] * next[self.entry_nodes[k] as usize];
        }
        acc
    }
}

fn terminal_values(lambda: f64, grids: &Grids, spec: &ProblemSpec) -> Vec<f64> {
    grids
        .state_nodes()
        .iter()
        .map(|&x| match classify(x, spec) {
            NodeKind::Safe => 0.0,
            _ => lambda,
        })
        .collect()
}

pub(crate) fn bellman_backward_with(
    coeffs: &TransitionCoeffs,
    table: &Arc<MomentsTable>,
    lambda: f64,
    spec: &ProblemSpec,
    grids: &Grids,
) -> ValuePolicy {
    let n = spec.horizon;
    let ns = grids.n_states();
    let ni = grids.n_inputs();
    let inputs = grids.input_nodes();
    let zero_input = grids.zero_input_index() as u32;

    let mut j = vec![0.0; (n + 1) * ns];
    let mut pi = vec![zero_input; n * ns];

    // Terminal stage: the multiplier is charged everywhere outside the
    // target window.
    j[n * ns..].copy_from_slice(&terminal_values(lambda, grids, spec));
    // Absorbing values at every earlier stage.
    for t in 0..n {
        for (i, &x) in grids.state_nodes().iter().enumerate() {
            j[t * ns + i] = match classify(x, spec) {
                NodeKind::Safe => 0.0,
                NodeKind::Crash => lambda,
                NodeKind::NonTerminal => 0.0, // overwritten below
            };
        }
    }

    let mut costs = vec![0.0; ni];
    for t in (0..n).rev() {
        let (head, tail) = j.split_at_mut((t + 1) * ns);
        let row_t = &mut head[t * ns..];
        let next = &tail[..ns];
        for (row, &node_idx) in coeffs.nonterminal.iter().enumerate() {
            for (jj, c) in costs.iter_mut().enumerate() {
                *c = 1.0 + coeffs.continuation(row, jj, next, lambda);
            }
            let mut best = 0usize;
            for (jj, &c) in costs.iter().enumerate().skip(1) {
                if c < costs[best] - ARGMIN_TIE {
                    best = jj;
                } else if (c - costs[best]).abs() <= ARGMIN_TIE {
                    // Tie: smallest-magnitude input, then smaller index.
                    let (cur, cand) = (inputs[best].abs(), inputs[jj].abs());
                    if cand < cur {
                        best = jj;
                    }
                }
            }
            row_t[node_idx] = costs[best];
            pi[t * ns + node_idx] = best as u32;
        }
    }

    ValuePolicy {
        lambda,
        horizon: n,
        n_states: ns,
        j,
        pi,
        moments: Arc::clone(table),
    }
}

/// Penalized Bellman recursion for a fixed multiplier: target-window nodes
/// carry zero, crash nodes carry `lambda`, non-terminal nodes take one unit
/// of time plus the expected continuation, minimized over the input grid.
pub fn bellman_backward(
    table: &Arc<MomentsTable>,
    lambda: f64,
    spec: &ProblemSpec,
    grids: &Grids,
) -> ValuePolicy {
    let coeffs = TransitionCoeffs::build(table, grids, spec);
    bellman_backward_with(&coeffs, table, lambda, spec, grids)
}

/// Backward policy evaluation under the fixed argmin policy with a custom
/// absorbing structure: overshoot mass is worth `crash_value`, crash nodes
/// hold `crash_node_value`, target absorption is worth zero, and
/// non-terminal states accrue `stage_cost` per step. `terminal` gives the
/// values at the final stage; the stage-0 vector is returned.
fn policy_values(
    coeffs: &TransitionCoeffs,
    vp: &ValuePolicy,
    spec: &ProblemSpec,
    grids: &Grids,
    stage_cost: f64,
    crash_value: f64,
    crash_node_value: f64,
    terminal: Vec<f64>,
) -> Vec<f64> {
    let ns = grids.n_states();
    let mut next = terminal;
    let mut cur = vec![0.0; ns];
    for t in (0..vp.horizon()).rev() {
        for (i, &x) in grids.state_nodes().iter().enumerate() {
            cur[i] = match classify(x, spec) {
                NodeKind::Safe => 0.0,
                NodeKind::Crash => crash_node_value,
                NodeKind::NonTerminal => 0.0,
            };
        }
        for (row, &node_idx) in coeffs.nonterminal.iter().enumerate() {
            let j = vp.input_index_at(t, node_idx);
            cur[node_idx] = stage_cost + coeffs.continuation(row, j, &next, crash_value);
        }
        std::mem::swap(&mut cur, &mut next);
    }
    next
}

/// Expected crash count under the fixed policy, evaluated at the initial
/// state: one unit at crash absorption, zero at target absorption. Always
/// in `[0, 1]`.
pub fn evaluate_risk(vp: &ValuePolicy, spec: &ProblemSpec, grids: &Grids) -> f64 {
    let coeffs = TransitionCoeffs::build(vp.moments(), grids, spec);
    evaluate_risk_with(&coeffs, vp, spec, grids)
}

pub(crate) fn evaluate_risk_with(
    coeffs: &TransitionCoeffs,
    vp: &ValuePolicy,
    spec: &ProblemSpec,
    grids: &Grids,
) -> f64 {
    let terminal: Vec<f64> = grids
        .state_nodes()
        .iter()
        .map(|&x| match classify(x, spec) {
            NodeKind::Crash => 1.0,
            _ => 0.0,
        })
        .collect();
    let rho0 = policy_values(coeffs, vp, spec, grids, 0.0, 1.0, 1.0, terminal);
    terminal_aware_value(spec.initial_state, &rho0, grids, spec, 1.0)
}

/// Expected number of steps until absorption in either terminal set under
/// the fixed policy (the horizon is charged when never absorbed),
/// evaluated at the initial state. Always in `[0, horizon]`.
pub fn evaluate_time(vp: &ValuePolicy, spec: &ProblemSpec, grids: &Grids) -> f64 {
    let coeffs = TransitionCoeffs::build(vp.moments(), grids, spec);
    evaluate_time_with(&coeffs, vp, spec, grids)
}

pub(crate) fn evaluate_time_with(
    coeffs: &TransitionCoeffs,
    vp: &ValuePolicy,
    spec: &ProblemSpec,
    grids: &Grids,
) -> f64 {
    let terminal = vec![0.0; grids.n_states()];
    let tau0 = policy_values(coeffs, vp, spec, grids, 1.0, 0.0, 0.0, terminal);
    terminal_aware_value(spec.initial_state, &tau0, grids, spec, 0.0)
}

/// Options for the dual root-finding pass.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DualOptions {
    pub lambda_max: f64,
    /// Tolerance on the dual subgradient (risk minus tolerance) and on the
    /// bisection bracket width.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for DualOptions {
    fn default() -> Self {
        Self {
            lambda_max: 1e4,
            tolerance: 1e-3,
            max_iterations: 60,
        }
    }
}

/// Outcome of the dual pass: the multiplier, the policy solved at it, and
/// its risk and expected-time evaluations at the initial state.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub lambda_star: f64,
    pub value_policy: ValuePolicy,
    pub risk: f64,
    pub expected_time: f64,
    pub feasible: bool,
}

impl DualSolution {
    /// The post-experiment control value used by the experiment-design
    /// objective: expected time when feasible, otherwise the horizon plus
    /// the multiplier-weighted residual risk.
    pub fn objective_value(&self, spec: &ProblemSpec, opts: &DualOptions) -> f64 {
        if self.feasible {
            self.expected_time
        } else {
            spec.horizon as f64 + opts.lambda_max * (self.risk - spec.risk_tolerance)
        }
    }
}

/// Solves the recursion for a fixed multiplier and evaluates the policy
/// risk; exposed for dual diagnostics and sweeps.
pub fn solve_fixed_lambda(
    table: &Arc<MomentsTable>,
    lambda: f64,
    spec: &ProblemSpec,
    grids: &Grids,
) -> (ValuePolicy, f64) {
    let coeffs = TransitionCoeffs::build(table, grids, spec);
    let vp = bellman_backward_with(&coeffs, table, lambda, spec, grids);
    let risk = evaluate_risk_with(&coeffs, &vp, spec, grids);
    (vp, risk)
}

/// Finds the multiplier by bisection on the dual subgradient
/// `risk(λ) − Δ` over `[0, lambda_max]`.
///
/// Returns the feasible-side policy: either λ* = 0 when the unpenalized
/// policy already satisfies the risk tolerance, the bisection landing
/// point, or the `lambda_max` policy flagged infeasible when even the
/// largest multiplier cannot push the risk below tolerance.
pub fn solve_lambda(
    table: &Arc<MomentsTable>,
    spec: &ProblemSpec,
    grids: &Grids,
    opts: &DualOptions,
) -> Result<DualSolution, DpError> {
    spec.validate()?;
    if !(opts.lambda_max > 0.0) || !(opts.tolerance > 0.0) {
        return Err(DpError::InvalidSpec(format!(
            "dual options need positive lambda_max and tolerance, got {opts:?}"
        )));
    }
    let delta = spec.risk_tolerance;
    let coeffs = TransitionCoeffs::build(table, grids, spec);
    let solve = |lambda: f64| {
        let vp = bellman_backward_with(&coeffs, table, lambda, spec, grids);
        let risk = evaluate_risk_with(&coeffs, &vp, spec, grids);
        (vp, risk)
    };
    let finish = |vp: ValuePolicy, risk: f64, lambda: f64, feasible: bool| DualSolution {
        lambda_star: lambda,
        expected_time: evaluate_time_with(&coeffs, &vp, spec, grids),
        value_policy: vp,
        risk,
        feasible,
    };

    let (vp0, risk0) = solve(0.0);
    if risk0 <= delta {
        return Ok(finish(vp0, risk0, 0.0, true));
    }

    let (vp_max, risk_max) = solve(opts.lambda_max);
    if risk_max > risk0 + opts.tolerance {
        // The dual subgradient should not grow with the multiplier; a
        // violation beyond tolerance means the discretization broke down.
        let sweep: Vec<(f64, f64)> = (0..20)
            .map(|k| {
                let lambda = opts.lambda_max * (k as f64 / 19.0).powi(2);
                let (_, r) = solve(lambda);
                (lambda, r)
            })
            .collect();
        return Err(DpError::NonMonotoneDual { sweep });
    }
    if risk_max > delta {
        return Ok(finish(vp_max, risk_max, opts.lambda_max, false));
    }

    let mut lo = 0.0;
    let mut hi = opts.lambda_max;
    let mut best = (vp_max, risk_max);
    for _ in 0..opts.max_iterations {
        if hi - lo <= opts.tolerance {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let (vp, risk) = solve(mid);
        if (risk - delta).abs() <= opts.tolerance {
            return Ok(finish(vp, risk, mid, true));
        }
        if risk > delta {
            lo = mid;
        } else {
            hi = mid;
            best = (vp, risk);
        }
    }
    let (vp, risk) = best;
    Ok(finish(vp, risk, hi, true))
}
