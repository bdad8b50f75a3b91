//! Ground-truth scalar process used for data generation and out-of-model
//! policy evaluation.
//!
//! The process is `x' = x + (1 + g·Ĩ(x))·u + w` where `Ĩ` is a smooth
//! indicator of the high-gain region built from a product of arctangents,
//! and `w` is zero-mean Gaussian noise.

use rand::Rng;
use rand_distr::StandardNormal;

/// Parameters of the true process.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueProcessParams {
    /// Lower edge of the high-gain region.
    pub region_lo: f64,
    /// Upper edge of the high-gain region.
    pub region_hi: f64,
    /// Gain added on top of the unit gain inside the region.
    pub gain_boost: f64,
    /// Arctangent slope of the smooth indicator; larger is sharper.
    pub indicator_slope: f64,
    /// Standard deviation of the additive process noise.
    pub noise_std: f64,
}

impl Default for TrueProcessParams {
    fn default() -> Self {
        Self {
            region_lo: 0.75,
            region_hi: 1.4,
            gain_boost: 3.0,
            indicator_slope: 100.0,
            noise_std: 0.01,
        }
    }
}

impl TrueProcessParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.region_lo < self.region_hi) {
            return Err(format!(
                "region_lo ({}) must be below region_hi ({})",
                self.region_lo, self.region_hi
            ));
        }
        if !(self.indicator_slope > 0.0) {
            return Err(format!("indicator_slope must be positive, got {}", self.indicator_slope));
        }
        if !(self.noise_std >= 0.0) {
            return Err(format!("noise_std must be nonnegative, got {}", self.noise_std));
        }
        Ok(())
    }
}

/// A rollout of the process: `N+1` states, `N` inputs, `N` measurements,
/// where `measurements[t] == states[t + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<f64>,
    pub inputs: Vec<f64>,
    pub measurements: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// The `(x_t, u_t, y_t)` triples of the rollout.
    pub fn triples(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.inputs
            .iter()
            .enumerate()
            .map(|(t, &u)| (self.states[t], u, self.measurements[t]))
    }
}

/// How inputs are chosen during a rollout.
pub enum Controller<'a> {
    /// A fixed input sequence; must cover the horizon.
    OpenLoop(&'a [f64]),
    /// State feedback, called as `(t, x_t)`.
    Feedback(&'a dyn Fn(usize, f64) -> f64),
}

/// Smooth indicator of `[region_lo, region_hi]`, strictly inside `(0, 1)`.
pub fn smooth_indicator(x: f64, p: &TrueProcessParams) -> f64 {
    use std::f64::consts::FRAC_1_PI;
    let rise = FRAC_1_PI * (p.indicator_slope * (x - p.region_lo)).atan() + 0.5;
    let fall = FRAC_1_PI * (p.indicator_slope * (p.region_hi - x)).atan() + 0.5;
    rise * fall
}

/// One noise-parameterized step of the true dynamics.
pub fn step_true(x: f64, u: f64, p: &TrueProcessParams, noise_draw: f64) -> f64 {
    x + (1.0 + p.gain_boost * smooth_indicator(x, p)) * u + p.noise_std * noise_draw
}

/// Rolls the process forward for `horizon` steps with i.i.d. standard
/// normal noise draws from `rng`, recording the triple stream.
pub fn rollout_true(
    x0: f64,
    controller: Controller<'_>,
    horizon: usize,
    p: &TrueProcessParams,
    rng: &mut impl Rng,
) -> Trajectory {
    let mut states = Vec::with_capacity(horizon + 1);
    let mut inputs = Vec::with_capacity(horizon);
    let mut measurements = Vec::with_capacity(horizon);
    states.push(x0);
    let mut x = x0;
    for t in 0..horizon {
        let u = match &controller {
            Controller::OpenLoop(us) => us[t],
            Controller::Feedback(f) => f(t, x),
        };
        let draw: f64 = rng.sample(StandardNormal);
        let next = step_true(x, u, p, draw);
        states.push(next);
        inputs.push(u);
        measurements.push(next);
        x = next;
    }
    Trajectory {
        states,
        inputs,
        measurements,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::stream_rng;
    use approx::assert_abs_diff_eq;

    #[test]
    fn indicator_is_one_deep_inside_with_sharp_slope() {
        let p = TrueProcessParams {
            indicator_slope: 1e6,
            ..Default::default()
        };
        let mid = 0.5 * (p.region_lo + p.region_hi);
        assert_abs_diff_eq!(smooth_indicator(mid, &p), 1.0, epsilon = 1e-5);
    }

    #[test]
    fn indicator_vanishes_far_left() {
        let p = TrueProcessParams::default();
        assert!(smooth_indicator(-1e6, &p) < 1e-6);
        assert!(smooth_indicator(1e6, &p) < 1e-6);
    }

    #[test]
    fn indicator_at_lower_edge_is_half_of_second_factor() {
        let p = TrueProcessParams::default();
        let value = smooth_indicator(p.region_lo, &p);
        // atan(0) = 0 makes the rising factor exactly 1/2; the falling
        // factor is close to 1 at slope 100 over a 0.65-wide region.
        assert_abs_diff_eq!(value, 0.5, epsilon = 0.01);
        let fall =
            std::f64::consts::FRAC_1_PI * (p.indicator_slope * (p.region_hi - p.region_lo)).atan() + 0.5;
        assert_abs_diff_eq!(value, 0.5 * fall, epsilon = 1e-15);
    }

    #[test]
    fn indicator_stays_in_open_unit_interval_and_is_unimodal() {
        let p = TrueProcessParams::default();
        let mut values = Vec::new();
        let mut x = -2.0;
        while x <= 3.0 {
            let v = smooth_indicator(x, &p);
            assert!(v > 0.0 && v < 1.0, "indicator out of (0,1) at x={x}: {v}");
            values.push(v);
            x += 0.01;
        }
        // Rising then falling around a single interior maximum; ties only
        // at floating-point resolution in the saturated tails.
        let peak = values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert!(peak > 0 && peak < values.len() - 1);
        for i in 1..=peak {
            assert!(values[i] >= values[i - 1]);
        }
        for i in peak + 1..values.len() {
            assert!(values[i] <= values[i - 1]);
        }
        assert!(values[peak] > values[0] && values[peak] > *values.last().unwrap());
    }

    #[test]
    fn zero_input_is_a_fixed_point() {
        let p = TrueProcessParams::default();
        for x in [-0.5, 0.0, 0.3, 1.0, 2.0] {
            assert_eq!(step_true(x, 0.0, &p, 0.0), x);
        }
    }

    #[test]
    fn step_matches_closed_form_outside_region() {
        let p = TrueProcessParams::default();
        // Indicator at x=0 is about 0.0042 at slope 100, so the effective
        // gain stays near 1.
        assert_abs_diff_eq!(step_true(0.0, 0.1, &p, 0.0), 0.1012704, epsilon = 1e-6);
    }

    #[test]
    fn step_matches_closed_form_inside_region() {
        let p = TrueProcessParams::default();
        // Gain is close to 4 at x = 1.0, in the interior of the region.
        assert_abs_diff_eq!(step_true(1.0, 0.1, &p, 0.0), 1.3938257, epsilon = 1e-6);
    }

    #[test]
    fn zero_horizon_rollout_is_a_single_state() {
        let p = TrueProcessParams::default();
        let mut rng = stream_rng(1, &[0]);
        let traj = rollout_true(0.25, Controller::OpenLoop(&[]), 0, &p, &mut rng);
        assert_eq!(traj.states, vec![0.25]);
        assert!(traj.inputs.is_empty());
        assert!(traj.measurements.is_empty());
    }

    #[test]
    fn fixed_seed_reproduces_trajectory() {
        let p = TrueProcessParams::default();
        let us = vec![0.05; 10];
        let a = rollout_true(0.0, Controller::OpenLoop(&us), 10, &p, &mut stream_rng(9, &[1]));
        let b = rollout_true(0.0, Controller::OpenLoop(&us), 10, &p, &mut stream_rng(9, &[1]));
        assert_eq!(a, b);
    }

    #[test]
    fn measurements_equal_next_states() {
        let p = TrueProcessParams::default();
        let us = vec![0.08; 6];
        let traj = rollout_true(0.0, Controller::OpenLoop(&us), 6, &p, &mut stream_rng(3, &[7]));
        for t in 0..traj.len() {
            assert_eq!(traj.measurements[t], traj.states[t + 1]);
        }
    }

    #[test]
    fn noiseless_zero_input_rollout_is_constant_and_seed_independent() {
        let p = TrueProcessParams {
            noise_std: 0.0,
            ..Default::default()
        };
        let us = vec![0.0; 5];
        let a = rollout_true(0.4, Controller::OpenLoop(&us), 5, &p, &mut stream_rng(1, &[1]));
        let b = rollout_true(0.4, Controller::OpenLoop(&us), 5, &p, &mut stream_rng(2, &[2]));
        assert_eq!(a, b);
        assert!(a.states.iter().all(|&x| x == 0.4));
    }

    #[test]
    fn feedback_controller_sees_current_state() {
        let p = TrueProcessParams {
            noise_std: 0.0,
            ..Default::default()
        };
        let policy = |_t: usize, x: f64| if x < 0.2 { 0.1 } else { 0.0 };
        let traj = rollout_true(0.0, Controller::Feedback(&policy), 4, &p, &mut stream_rng(0, &[0]));
        assert!(traj.inputs[0] > 0.0);
        assert_eq!(traj.inputs[3], 0.0);
    }

    #[test]
    fn empirical_noise_variance_matches_parameter() {
        let p = TrueProcessParams::default();
        let mut rng = stream_rng(123, &[42]);
        let (x, u) = (0.3, 0.05);
        let f = step_true(x, u, &p, 0.0);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let draw: f64 = rng.sample(StandardNormal);
            let r = step_true(x, u, &p, draw) - f;
            sum += r;
            sumsq += r * r;
        }
        let var = (sumsq - sum * sum / n as f64) / (n as f64 - 1.0);
        let target = p.noise_std * p.noise_std;
        assert!(
            (var - target).abs() <= 0.05 * target,
            "sample variance {var} not within 5% of {target}"
        );
    }
}
