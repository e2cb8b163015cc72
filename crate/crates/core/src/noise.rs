//! Noise covariances `Q` (state) and `R` (observation).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{shape, Error, Result};
use crate::scalar::{all_finite, lit, Real};

/// Symmetric positive-definite covariance, validated at construction.
///
/// Diagonal covariances keep O(n) solves; anything else is held densely with its
/// Cholesky factor. Weighted norms always go through solves.
#[derive(Debug, Clone)]
pub enum Covariance<T: Real> {
    Diagonal(DVector<T>),
    Dense { matrix: DMatrix<T>, chol: Cholesky<T, Dyn> },
}

impl<T: Real> Covariance<T> {
    pub fn diagonal(diag: DVector<T>) -> Result<Self> {
        if diag.is_empty() {
            return Err(shape("empty covariance"));
        }
        if !all_finite(diag.iter()) || diag.iter().any(|d| *d <= T::zero()) {
            return Err(Error::SingularCovariance(
                "diagonal entries must be finite and positive".into(),
            ));
        }
        Ok(Covariance::Diagonal(diag))
    }

    pub fn scaled_identity(n: usize, variance: T) -> Result<Self> {
        Self::diagonal(DVector::from_element(n, variance))
    }

    /// Dense SPD matrix. Input must be symmetric to 1e-10 relative; the stored
    /// matrix is exactly symmetric.
    pub fn dense(matrix: DMatrix<T>) -> Result<Self> {
        let n = matrix.nrows();
        if n == 0 || matrix.ncols() != n {
            return Err(shape(format!("covariance must be square, got {}x{}", n, matrix.ncols())));
        }
        if !all_finite(matrix.iter()) {
            return Err(Error::SingularCovariance("non-finite entries".into()));
        }
        let scale = matrix.iter().fold(T::one(), |m, v| m.max(v.abs()));
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > lit::<T>(1e-10) * scale {
            return Err(Error::SingularCovariance("matrix is not symmetric".into()));
        }
        let matrix = (&matrix + matrix.transpose()) * lit::<T>(0.5);
        let chol = matrix
            .clone()
            .cholesky()
            .ok_or_else(|| Error::SingularCovariance("matrix is not positive definite".into()))?;
        Ok(Covariance::Dense { matrix, chol })
    }

    /// Picks the diagonal representation when all off-diagonal entries are zero.
    pub fn from_matrix(matrix: DMatrix<T>) -> Result<Self> {
        let n = matrix.nrows();
        let is_diag = matrix.ncols() == n
            && (0..n).all(|c| (0..n).all(|r| r == c || matrix[(r, c)] == T::zero()));
        if is_diag && n > 0 {
            Self::diagonal(matrix.diagonal())
        } else {
            Self::dense(matrix)
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Covariance::Diagonal(d) => d.len(),
            Covariance::Dense { matrix, .. } => matrix.nrows(),
        }
    }

    pub fn to_matrix(&self) -> DMatrix<T> {
        match self {
            Covariance::Diagonal(d) => DMatrix::from_diagonal(d),
            Covariance::Dense { matrix, .. } => matrix.clone(),
        }
    }

    /// `C^{-1} v`.
    pub fn solve(&self, v: &DVector<T>) -> DVector<T> {
        match self {
            Covariance::Diagonal(d) => v.component_div(d),
            Covariance::Dense { chol, .. } => chol.solve(v),
        }
    }

    /// `C^{-1} M`.
    pub fn solve_matrix(&self, m: &DMatrix<T>) -> DMatrix<T> {
        match self {
            Covariance::Diagonal(d) => {
                DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)] / d[r])
            }
            Covariance::Dense { chol, .. } => chol.solve(m),
        }
    }

    /// `v' C^{-1} v`, evaluated as `|L^{-1} v|^2` for dense matrices.
    pub fn quad_form(&self, v: &DVector<T>) -> T {
        match self {
            Covariance::Diagonal(d) => {
                let mut acc = T::zero();
                for i in 0..v.len() {
                    acc += v[i] * v[i] / d[i];
                }
                acc
            }
            Covariance::Dense { chol, .. } => {
                let z = chol
                    .l_dirty()
                    .solve_lower_triangular(v)
                    .expect("cholesky factor has a positive diagonal");
                z.dot(&z)
            }
        }
    }

    /// Explicit precision matrix `C^{-1}` (assembly of normal equations only).
    pub fn precision(&self) -> DMatrix<T> {
        match self {
            Covariance::Diagonal(d) => DMatrix::from_diagonal(&d.map(|x| T::one() / x)),
            Covariance::Dense { chol, .. } => chol.inverse(),
        }
    }

    /// `m += C`.
    pub fn add_to(&self, m: &mut DMatrix<T>) {
        match self {
            Covariance::Diagonal(d) => {
                for i in 0..d.len() {
                    m[(i, i)] += d[i];
                }
            }
            Covariance::Dense { matrix, .. } => *m += matrix,
        }
    }
}

/// State noise, constant by default with an optional per-step schedule.
#[derive(Debug, Clone)]
pub enum StateNoise<T: Real> {
    Constant(Covariance<T>),
    /// `PerStep(v)[t]` is used at step t.
    PerStep(Vec<Covariance<T>>),
}

impl<T: Real> StateNoise<T> {
    pub fn at(&self, step: usize) -> Result<&Covariance<T>> {
        match self {
            StateNoise::Constant(c) => Ok(c),
            StateNoise::PerStep(v) => v
                .get(step)
                .ok_or_else(|| shape(format!("no state covariance scheduled for step {step}"))),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            StateNoise::Constant(c) => c.dim(),
            StateNoise::PerStep(v) => v.first().map_or(0, |c| c.dim()),
        }
    }
}

/// State (`Q`) and observation (`R`) covariances.
#[derive(Debug, Clone)]
pub struct NoiseSpec<T: Real> {
    pub state: StateNoise<T>,
    pub obs: Covariance<T>,
}

impl<T: Real> NoiseSpec<T> {
    pub fn new(q: Covariance<T>, r: Covariance<T>) -> Self {
        Self { state: StateNoise::Constant(q), obs: r }
    }

    /// `Q = q_var * I_n`, `R = r_var * I_q`.
    pub fn isotropic(n: usize, q_var: T, obs_dim: usize, r_var: T) -> Result<Self> {
        Ok(Self::new(
            Covariance::scaled_identity(n, q_var)?,
            Covariance::scaled_identity(obs_dim, r_var)?,
        ))
    }

    pub fn state_dim(&self) -> usize {
        self.state.dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs.dim()
    }
}
