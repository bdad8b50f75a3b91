//! Multi-output Gaussian-process regression over state-input indices.
//!
//! Each output dimension is an independent GP with a squared exponential
//! kernel over the stacked index `z = (x, u)` and its own hyperparameters.
//! Observations carry additive Gaussian noise, which enters both the
//! training Gram matrix and the predictive variance.

mod dataset;

pub use dataset::{DataPoint, Dataset};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },
    #[error("trajectory length mismatch: xs {xs}, us {us}, ys {ys}")]
    LengthMismatch { xs: usize, us: usize, ys: usize },
    #[error("non-finite entry in data")]
    NonFiniteEntry,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparameters(String),
    #[error("kernel matrix for output dimension {dim} is not positive definite (after jitter retry)")]
    FactorizationFailed { dim: usize },
    #[error("csv: {0}")]
    CsvSchema(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Prior mean of the dynamics GP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanFn {
    /// m(x, u) = 0.
    Zero,
    /// m(x, u) = x; far-from-data predictions hold the state.
    StateIdentity,
}

impl MeanFn {
    fn eval(self, x: &[f64], d: usize) -> f64 {
        match self {
            MeanFn::Zero => 0.0,
            MeanFn::StateIdentity => x[d],
        }
    }
}

/// Kernel and noise hyperparameters for one output dimension.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DimHyperparams {
    pub signal_variance: f64,
    pub lengthscale: f64,
    pub noise_variance: f64,
}

/// Hyperparameters for all output dimensions plus the mean selector.
#[derive(Debug, Clone, PartialEq)]
pub struct GpHyperparams {
    pub dims: Vec<DimHyperparams>,
    pub mean_fn: MeanFn,
}

impl GpHyperparams {
    /// The same kernel settings for every output dimension.
    pub fn uniform(n_x: usize, dim: DimHyperparams, mean_fn: MeanFn) -> Self {
        Self {
            dims: vec![dim; n_x],
            mean_fn,
        }
    }

    pub fn validate(&self) -> Result<(), GpError> {
        if self.dims.is_empty() {
            return Err(GpError::InvalidHyperparameters(
                "need at least one output dimension".into(),
            ));
        }
        for (d, hp) in self.dims.iter().enumerate() {
            if !(hp.signal_variance > 0.0 && hp.lengthscale > 0.0 && hp.noise_variance > 0.0) {
                return Err(GpError::InvalidHyperparameters(format!(
                    "dimension {d}: all of signal_variance, lengthscale, noise_variance must be positive, got {hp:?}"
                )));
            }
        }
        Ok(())
    }
}

/// A state-input pair, the index of the dynamics GP.
#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

impl Index {
    pub fn new(x: Vec<f64>, u: Vec<f64>) -> Self {
        Self { x, u }
    }
}

fn sq_dist(x1: &[f64], u1: &[f64], x2: &[f64], u2: &[f64]) -> f64 {
    let xs: f64 = x1.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
    let us: f64 = u1.iter().zip(u2).map(|(a, b)| (a - b) * (a - b)).sum();
    xs + us
}

#[inline]
pub(crate) fn se_kernel(sq_dist: f64, signal_variance: f64, lengthscale: f64) -> f64 {
    signal_variance * (-sq_dist / (2.0 * lengthscale * lengthscale)).exp()
}

/// Squared exponential kernel for output dimension `d`:
/// `σ_f² · exp(−‖z1 − z2‖² / (2ℓ²))`.
pub fn kernel_eval(z1: &Index, z2: &Index, hp: &GpHyperparams, d: usize) -> Result<f64, GpError> {
    if z1.x.len() != z2.x.len() || z1.u.len() != z2.u.len() {
        return Err(GpError::DimensionMismatch {
            expected: format!("x:{} u:{}", z1.x.len(), z1.u.len()),
            got: format!("x:{} u:{}", z2.x.len(), z2.u.len()),
        });
    }
    let dim = hp.dims.get(d).ok_or_else(|| GpError::DimensionMismatch {
        expected: format!("output dim < {}", hp.dims.len()),
        got: format!("{d}"),
    })?;
    Ok(se_kernel(
        sq_dist(&z1.x, &z1.u, &z2.x, &z2.u),
        dim.signal_variance,
        dim.lengthscale,
    ))
}

/// Per-output-dimension factorization of the regularized Gram matrix.
#[derive(Debug, Clone)]
pub(crate) struct DimFactor {
    /// Lower-triangular factor of `K_ZZ + σ_w² I`.
    pub(crate) chol_l: DMatrix<f64>,
    /// Weights solving `(K_ZZ + σ_w² I) α = Y^d − m^d(Z)`.
    pub(crate) alpha: DVector<f64>,
}

/// Immutable fitted posterior; safe to query concurrently.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    pub(crate) n_x: usize,
    pub(crate) n_u: usize,
    /// Training inputs, flattened as rows `[x..., u...]`; one row per triple.
    pub(crate) z_train: Vec<f64>,
    pub(crate) n_train: usize,
    pub(crate) factors: Vec<DimFactor>,
    pub(crate) hp: GpHyperparams,
}

/// Fits the posterior: one Cholesky factorization and weight solve per
/// output dimension. The empty dataset yields the prior.
pub fn fit(data: &Dataset, hp: &GpHyperparams) -> Result<GpPosterior, GpError> {
    hp.validate()?;
    if hp.dims.len() != data.n_x() {
        return Err(GpError::DimensionMismatch {
            expected: format!("{} hyperparameter sets", data.n_x()),
            got: format!("{}", hp.dims.len()),
        });
    }
    let m = data.len();
    let nz = data.n_x() + data.n_u();
    let mut z_train = Vec::with_capacity(m * nz);
    for p in data.points() {
        z_train.extend_from_slice(&p.x);
        z_train.extend_from_slice(&p.u);
    }

    let mut factors = Vec::with_capacity(hp.dims.len());
    for (d, dim_hp) in hp.dims.iter().enumerate() {
        if m == 0 {
            factors.push(DimFactor {
                chol_l: DMatrix::zeros(0, 0),
                alpha: DVector::zeros(0),
            });
            continue;
        }
        let mut gram = DMatrix::zeros(m, m);
        for i in 0..m {
            let zi = &z_train[i * nz..(i + 1) * nz];
            for j in 0..=i {
                let zj = &z_train[j * nz..(j + 1) * nz];
                let sq: f64 = zi.iter().zip(zj).map(|(a, b)| (a - b) * (a - b)).sum();
                let k = se_kernel(sq, dim_hp.signal_variance, dim_hp.lengthscale);
                gram[(i, j)] = k;
                gram[(j, i)] = k;
            }
            gram[(i, i)] += dim_hp.noise_variance;
        }
        let chol = match nalgebra::linalg::Cholesky::new(gram.clone()) {
            Some(c) => c,
            None => {
                // One jitter retry, then fail hard.
                let jitter = 1e-10 * dim_hp.signal_variance;
                log::warn!("gp fit: factorization retry with jitter {jitter:.3e} on output dim {d}");
                let mut g = gram;
                for i in 0..m {
                    g[(i, i)] += jitter;
                }
                nalgebra::linalg::Cholesky::new(g)
                    .ok_or(GpError::FactorizationFailed { dim: d })?
            }
        };
        let residual = DVector::from_fn(m, |i, _| {
            let p = &data.points()[i];
            p.y[d] - hp.mean_fn.eval(&p.x, d)
        });
        let alpha = chol.solve(&residual);
        factors.push(DimFactor {
            chol_l: chol.unpack(),
            alpha,
        });
    }

    Ok(GpPosterior {
        n_x: data.n_x(),
        n_u: data.n_u(),
        z_train,
        n_train: m,
        factors,
        hp: hp.clone(),
    })
}

impl GpPosterior {
    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.hp
    }

    fn nz(&self) -> usize {
        self.n_x + self.n_u
    }

    /// Fills `out` with the kernel vector `k^d(z, Z)` at the query point.
    pub(crate) fn kernel_vector_into(&self, d: usize, x: &[f64], u: &[f64], out: &mut DVector<f64>) {
        let nz = self.nz();
        let hp = &self.hp.dims[d];
        for i in 0..self.n_train {
            let zi = &self.z_train[i * nz..(i + 1) * nz];
            let sq: f64 = zi[..self.n_x]
                .iter()
                .zip(x)
                .map(|(a, b)| (a - b) * (a - b))
                .chain(zi[self.n_x..].iter().zip(u).map(|(a, b)| (a - b) * (a - b)))
                .sum();
            out[i] = se_kernel(sq, hp.signal_variance, hp.lengthscale);
        }
    }

    /// Posterior mean and variance per output dimension at `(x, u)`.
    ///
    /// The variance includes the measurement noise term: it predicts the
    /// noisy next-state observation, so it is bounded below by `σ_w²`.
    pub fn posterior_moments(&self, x: &[f64], u: &[f64]) -> Result<(Vec<f64>, Vec<f64>), GpError> {
        if x.len() != self.n_x || u.len() != self.n_u {
            return Err(GpError::DimensionMismatch {
                expected: format!("x:{} u:{}", self.n_x, self.n_u),
                got: format!("x:{} u:{}", x.len(), u.len()),
            });
        }
        let mut means = Vec::with_capacity(self.n_x);
        let mut vars = Vec::with_capacity(self.n_x);
        for d in 0..self.n_x {
            let hp = self.hp.dims[d];
            let prior_mean = self.hp.mean_fn.eval(x, d);
            if self.n_train == 0 {
                means.push(prior_mean);
                vars.push(hp.signal_variance + hp.noise_variance);
                continue;
            }
            let mut k = DVector::zeros(self.n_train);
            self.kernel_vector_into(d, x, u, &mut k);
            let mean = prior_mean + k.dot(&self.factors[d].alpha);
            let solved = self.factors[d]
                .chol_l
                .solve_lower_triangular(&k)
                .expect("cholesky factor has positive diagonal");
            let var = hp.signal_variance - solved.norm_squared() + hp.noise_variance;
            means.push(mean);
            vars.push(var.max(hp.noise_variance));
        }
        Ok((means, vars))
    }

    /// Scalar-problem moments for output dimension 0.
    pub fn moments1(&self, x: f64, u: f64) -> (f64, f64) {
        debug_assert_eq!((self.n_x, self.n_u), (1, 1));
        let (m, v) = self
            .posterior_moments(&[x], &[u])
            .expect("scalar query on scalar posterior");
        (m[0], v[0])
    }

    /// Batched moments on the product grid `states × inputs` for a scalar
    /// problem, laid out state-major (`idx = i_state * inputs.len() + j`).
    ///
    /// Exploits the factorization of the squared exponential kernel over
    /// the product grid and solves all kernel vectors against the Cholesky
    /// factor in blocks.
    pub fn scalar_grid_moments(
        &self,
        states: &[f64],
        inputs: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>), GpError> {
        if self.n_x != 1 || self.n_u != 1 {
            return Err(GpError::DimensionMismatch {
                expected: "scalar state and input".into(),
                got: format!("x:{} u:{}", self.n_x, self.n_u),
            });
        }
        let hp = self.hp.dims[0];
        let total = states.len() * inputs.len();
        let mut means = vec![0.0; total];
        let mut vars = vec![0.0; total];

        if self.n_train == 0 {
            for (i, &x) in states.iter().enumerate() {
                for j in 0..inputs.len() {
                    let idx = i * inputs.len() + j;
                    means[idx] = self.hp.mean_fn.eval(&[x], 0);
                    vars[idx] = hp.signal_variance + hp.noise_variance;
                }
            }
            return Ok((means, vars));
        }

        let m = self.n_train;
        let inv_two_ell2 = 1.0 / (2.0 * hp.lengthscale * hp.lengthscale);
        // Kernel factors along each grid axis.
        let mut a = vec![0.0; states.len() * m]; // state part
        let mut b = vec![0.0; inputs.len() * m]; // input part
        for (i, &x) in states.iter().enumerate() {
            for t in 0..m {
                let dx = x - self.z_train[t * 2];
                a[i * m + t] = (-dx * dx * inv_two_ell2).exp();
            }
        }
        for (j, &u) in inputs.iter().enumerate() {
            for t in 0..m {
                let du = u - self.z_train[t * 2 + 1];
                b[j * m + t] = (-du * du * inv_two_ell2).exp();
            }
        }

        let factor = &self.factors[0];
        // Process the grid in column blocks to bound transient memory.
        const BLOCK: usize = 512;
        let mut kstar = DMatrix::zeros(m, BLOCK.min(total));
        let mut start = 0;
        while start < total {
            let cols = BLOCK.min(total - start);
            let mut block = kstar.view_mut((0, 0), (m, cols));
            for c in 0..cols {
                let idx = start + c;
                let (i, j) = (idx / inputs.len(), idx % inputs.len());
                let arow = &a[i * m..(i + 1) * m];
                let brow = &b[j * m..(j + 1) * m];
                for t in 0..m {
                    block[(t, c)] = hp.signal_variance * arow[t] * brow[t];
                }
            }
            for c in 0..cols {
                let idx = start + c;
                let i = idx / inputs.len();
                means[idx] =
                    self.hp.mean_fn.eval(&[states[i]], 0) + block.column(c).dot(&factor.alpha);
            }
            assert!(
                factor.chol_l.solve_lower_triangular_mut(&mut block),
                "cholesky factor has positive diagonal"
            );
            for c in 0..cols {
                let var = hp.signal_variance - block.column(c).norm_squared() + hp.noise_variance;
                vars[start + c] = var.max(hp.noise_variance);
            }
            start += cols;
        }
        Ok((means, vars))
    }
}
