//! Open-loop experiment design by projected stochastic gradient descent.
//!
//! A candidate experiment is an input sequence rolled through the current
//! GP model with reparameterized noise: each sampled trajectory augments
//! the dataset, the controller is re-solved on the augmented model, and
//! the resulting control value is the per-sample objective. Averaging
//! finite-difference gradients of that objective over a batch of noise
//! draws gives the descent direction; inputs are projected back onto the
//! input box after every step.

mod objective;

pub use objective::ObjectiveEvaluator;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::dp::DpError;
use crate::gp::{GpError, GpPosterior};
use crate::process::Trajectory;
use crate::seeding::{stream_rng, STREAM_DESIGN};

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("experiment plan violates the input box [{lo}, {hi}]: u[{index}] = {value}")]
    PlanOutOfBox {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("noise draws have length {got}, expected the plan length {expected}")]
    NoiseLength { expected: usize, got: usize },
    #[error("invalid sgd options: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Dp(#[from] DpError),
}

/// An open-loop experiment: the initial state and the input sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub initial_state: f64,
    pub inputs: Vec<f64>,
}

impl ExperimentPlan {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn check_box(&self, lo: f64, hi: f64) -> Result<(), DesignError> {
        for (index, &value) in self.inputs.iter().enumerate() {
            if !(lo..=hi).contains(&value) {
                return Err(DesignError::PlanOutOfBox {
                    index,
                    value,
                    lo,
                    hi,
                });
            }
        }
        Ok(())
    }

    /// Clamps every input onto the box.
    pub fn project(&mut self, lo: f64, hi: f64) {
        for u in &mut self.inputs {
            *u = u.clamp(lo, hi);
        }
    }
}

/// Standard-normal noise variables, one per experiment step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraws(pub Vec<f64>);

impl NoiseDraws {
    pub fn standard(len: usize, rng: &mut impl Rng) -> Self {
        Self((0..len).map(|_| rng.sample(StandardNormal)).collect())
    }
}

/// Options for the projected SGD loop.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SgdOptions {
    pub step_count: usize,
    pub batch_size: usize,
    /// Base learning rate, decayed as `1/sqrt(step + 1)`.
    pub learning_rate: f64,
    /// Central finite-difference step, clipped at the input box.
    pub fd_step: f64,
    pub rng_seed: u64,
    /// Window of the running-average objective used for best-plan
    /// selection and the early stop.
    pub convergence_window: usize,
    /// Stop once the windowed objective estimate stops improving.
    pub early_stop: bool,
}

impl Default for SgdOptions {
    fn default() -> Self {
        Self {
            step_count: 1000,
            batch_size: 80,
            learning_rate: 0.01,
            fd_step: 0.005,
            rng_seed: 0,
            convergence_window: 10,
            early_stop: false,
        }
    }
}

impl SgdOptions {
    pub fn validate(&self) -> Result<(), DesignError> {
        if self.batch_size == 0 {
            return Err(DesignError::InvalidOptions("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(DesignError::InvalidOptions(format!(
                "learning_rate must be nonnegative, got {}",
                self.learning_rate
            )));
        }
        if !(self.fd_step > 0.0) {
            return Err(DesignError::InvalidOptions(format!(
                "fd_step must be positive, got {}",
                self.fd_step
            )));
        }
        if self.convergence_window == 0 {
            return Err(DesignError::InvalidOptions(
                "convergence_window must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Propagates the plan through the GP model with fixed noise variables:
/// `x̄_{t+1} = μ(x̄_t, ū_t) + σ(x̄_t, ū_t) · v_t`, recording the sampled
/// next states as measurements. Deterministic given `(post, plan, draws)`.
pub fn reparam_rollout(
    post: &GpPosterior,
    plan: &ExperimentPlan,
    draws: &NoiseDraws,
) -> Result<Trajectory, DesignError> {
    if draws.0.len() != plan.len() {
        return Err(DesignError::NoiseLength {
            expected: plan.len(),
            got: draws.0.len(),
        });
    }
    let mut states = Vec::with_capacity(plan.len() + 1);
    let mut measurements = Vec::with_capacity(plan.len());
    states.push(plan.initial_state);
    let mut x = plan.initial_state;
    for (t, &u) in plan.inputs.iter().enumerate() {
        let (mean, var) = post.moments1(x, u);
        let next = mean + var.sqrt() * draws.0[t];
        states.push(next);
        measurements.push(next);
        x = next;
    }
    Ok(Trajectory {
        states,
        inputs: plan.inputs.clone(),
        measurements,
    })
}

/// Central finite-difference gradient of `f` over the input coordinates,
/// with perturbations clipped to the box and divided by the realized
/// width. A coordinate whose two perturbations coincide gets gradient
/// zero.
pub fn fd_gradient(
    f: &mut dyn FnMut(&[f64]) -> f64,
    inputs: &[f64],
    lo: f64,
    hi: f64,
    fd_step: f64,
) -> Vec<f64> {
    let mut work = inputs.to_vec();
    let mut grad = vec![0.0; inputs.len()];
    for i in 0..inputs.len() {
        let up = (inputs[i] + fd_step).clamp(lo, hi);
        let down = (inputs[i] - fd_step).clamp(lo, hi);
        let width = up - down;
        if width == 0.0 {
            log::warn!("fd_gradient: both perturbations of coordinate {i} clipped away; gradient set to 0");
            continue;
        }
        work[i] = up;
        let f_up = f(&work);
        work[i] = down;
        let f_down = f(&work);
        work[i] = inputs[i];
        grad[i] = (f_up - f_down) / width;
    }
    grad
}

/// Per-step record of the SGD run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    /// Running average of the batch objective estimate over the window.
    pub objective_avg: f64,
    pub grad_norm: f64,
    pub inputs: Vec<f64>,
}

/// The designed plan plus the per-step trace.
#[derive(Debug, Clone)]
pub struct DesignOutcome {
    pub plan: ExperimentPlan,
    pub trace: Vec<TraceRow>,
}

/// Runs projected SGD on the Monte-Carlo estimate of the post-experiment
/// control cost (the batch average of per-sample finite-difference
/// gradients), starting from `plan0`. Returns the best-seen plan by the
/// windowed running-average objective. Bit-reproducible for fixed options,
/// independent of worker count.
pub fn design_experiment(
    evaluator: &ObjectiveEvaluator,
    plan0: &ExperimentPlan,
    opts: &SgdOptions,
) -> Result<DesignOutcome, DesignError> {
    opts.validate()?;
    let (lo, hi) = evaluator.input_box();
    plan0.check_box(lo, hi)?;

    let mut plan = plan0.clone();
    let mut trace = Vec::with_capacity(opts.step_count);
    let mut best_avg = f64::INFINITY;
    let mut best_plan = plan.clone();
    let mut best_step = 0usize;
    let mut window: std::collections::VecDeque<f64> =
        std::collections::VecDeque::with_capacity(opts.convergence_window);

    for step in 0..opts.step_count {
        // Independent noise across steps; common random numbers within a
        // sample's gradient coordinates.
        let samples: Vec<(Vec<f64>, f64)> = {
            use rayon::prelude::*;
            let plan_ref = &plan;
            (0..opts.batch_size)
                .into_par_iter()
                .map(|sample| {
                    let mut rng = stream_rng(
                        opts.rng_seed,
                        &[STREAM_DESIGN, step as u64, sample as u64],
                    );
                    let draws = NoiseDraws::standard(plan_ref.len(), &mut rng);
                    evaluator.sample_gradient(plan_ref, &draws, opts.fd_step)
                })
                .collect()
        };

        // Reduce in sample-index order so the aggregate is deterministic
        // regardless of execution interleaving.
        let mut grad = vec![0.0; plan.len()];
        let mut obj_sum = 0.0;
        for (g, obj) in &samples {
            for (acc, &gi) in grad.iter_mut().zip(g) {
                *acc += gi;
            }
            obj_sum += obj;
        }
        let scale = 1.0 / opts.batch_size as f64;
        for g in &mut grad {
            *g *= scale;
        }
        let objective = obj_sum * scale;

        if window.len() == opts.convergence_window {
            window.pop_front();
        }
        window.push_back(objective);
        let avg = window.iter().sum::<f64>() / window.len() as f64;
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        trace.push(TraceRow {
            step,
            objective_avg: avg,
            grad_norm,
            inputs: plan.inputs.clone(),
        });

        if avg < best_avg {
            best_avg = avg;
            best_plan = plan.clone();
            best_step = step;
        } else if opts.early_stop && step >= best_step + opts.convergence_window {
            break;
        }

        let lr = opts.learning_rate / ((step + 1) as f64).sqrt();
        for (u, g) in plan.inputs.iter_mut().zip(&grad) {
            *u -= lr * g;
        }
        plan.project(lo, hi);
    }

    Ok(DesignOutcome {
        plan: best_plan,
        trace,
    })
}
