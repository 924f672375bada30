//! Pilot design: the length lower bound, the reweighted log-det length
//! minimization, the single-shot energy minimization and the constructive
//! builder for unbounded energy.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::channel_model::ChannelCovariance;
use crate::error::{Error, Result};
use crate::estimator::{accuracy_ratio, error_covariance, lmi_rhs, PilotMatrix};
use crate::matrix_core::{
    eig_hermitian, eigenvalues, inverse_hpd, min_eigenvalue, singular_values, CMat, CVec,
    HermitianMatrix,
};
use crate::sdp_engine::{
    feasibility_check, solve, LmiConstraint, SdpProblem, SolveStatus, SolverOptions,
};

/// `10^{4.1}`: a 41 dB cap read in the same linear unit as the noise power.
pub const DEFAULT_E_MAX: f64 = 12_589.254_117_941_673;
pub const DEFAULT_DELTA: f64 = 1e-2;
pub const DEFAULT_EPS_S_FACTOR: f64 = 1e-5;
pub const DEFAULT_OUTER_TOL: f64 = 1e-4;
pub const DEFAULT_MAX_OUTER: usize = 30;
/// Row resampling cap of the constructive builder.
pub const MAX_ROW_RETRIES: usize = 10;

/// Slack allowed on the log-det sequence, relative to `max(1, |log det|)`,
/// to absorb the inexactness of each inner solve.
const LOG_DET_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DesignConstraints {
    pub eps_star: f64,
    /// `ε_k = ε* Tr(R_k)`.
    pub eps_k: Vec<f64>,
    pub e_max: f64,
    pub delta: f64,
    pub eps_s_factor: f64,
    pub outer_tol: f64,
    pub max_outer: usize,
}

impl DesignConstraints {
    pub fn new(covs: &[ChannelCovariance], eps_star: f64, e_max: f64) -> Result<Self> {
        if !(eps_star > 0.0) || !eps_star.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "eps_star must be positive, got {eps_star}"
            )));
        }
        if !(e_max > 0.0) || !e_max.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "E_max must be positive and finite, got {e_max}"
            )));
        }
        Ok(Self {
            eps_star,
            eps_k: covs.iter().map(|c| eps_star * c.trace()).collect(),
            e_max,
            delta: DEFAULT_DELTA,
            eps_s_factor: DEFAULT_EPS_S_FACTOR,
            outer_tol: DEFAULT_OUTER_TOL,
            max_outer: DEFAULT_MAX_OUTER,
        })
    }

    fn check(&self, covs: &[ChannelCovariance]) -> Result<usize> {
        if covs.len() != self.eps_k.len() {
            return Err(Error::DimensionMismatch {
                expected: self.eps_k.len(),
                got: covs.len(),
            });
        }
        let m = covs.first().map_or(0, |c| c.antennas());
        if let Some(c) = covs.iter().find(|c| c.antennas() != m) {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: c.antennas(),
            });
        }
        if covs.iter().any(|c| !(c.sigma_sq > 0.0)) {
            return Err(Error::SingularInput(
                "noise variance must be positive".into(),
            ));
        }
        if self.eps_k.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::InvalidConfig("eps_k must be positive".into()));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone)]
pub struct GramSolution {
    pub x_star: HermitianMatrix,
    /// Eigenvalues of `x_star`, descending.
    pub eigvals: Vec<f64>,
    pub t: usize,
    pub pilots: PilotMatrix,
    /// Energy of the thresholded pilots, `Tr(Pᴴ P)`.
    pub total_energy: f64,
    pub outer_iterations: usize,
    /// Status of the last inner solve, or the first non-optimal one.
    pub status: SolveStatus,
    /// False when the outer loop hit its iteration cap.
    pub converged: bool,
    /// `log det(X_t + δI)` for every solved iterate `t ≥ 1`.
    pub log_det_trace: Vec<f64>,
    /// Relative constraint violation of `x_star` before thresholding.
    pub max_violation: f64,
}

impl GramSolution {
    /// True when the log-det sequence never increases beyond solver slack.
    pub fn log_det_monotone(&self) -> bool {
        self.log_det_trace
            .windows(2)
            .all(|w| w[1] <= w[0] + LOG_DET_SLACK * w[0].abs().max(1.0))
    }
}

/// `max_k #{ i : λ_{i,k} ≥ ε_k }`.
pub fn lower_bound_length(covs: &[ChannelCovariance], constraints: &DesignConstraints) -> usize {
    covs.iter()
        .zip(&constraints.eps_k)
        .map(|(c, &eps)| c.lambda.iter().filter(|&&l| l >= eps).count())
        .max()
        .unwrap_or(0)
}

/// Thresholds the spectrum of `x` at `factor · max(v)` and factors the kept
/// part as `P = V^{1/2} [e_1 … e_T]ᴴ`.
pub fn extract_pilots(x: &HermitianMatrix, eps_s_factor: f64) -> (usize, PilotMatrix) {
    let (t, p, _) = extract_with_spectrum(x, eps_s_factor);
    (t, p)
}

fn extract_with_spectrum(x: &HermitianMatrix, eps_s_factor: f64) -> (usize, PilotMatrix, Vec<f64>) {
    let m = x.dim();
    let eig = eig_hermitian(x);
    let vmax = eig.values.first().copied().unwrap_or(0.0);
    if !(vmax > 0.0) {
        return (0, PilotMatrix::empty(m), eig.values);
    }
    let eps_s = eps_s_factor * vmax;
    let t = eig
        .values
        .iter()
        .take_while(|&&v| v >= eps_s && v > 0.0)
        .count();
    let mut p = CMat::zeros(t, m);
    for i in 0..t {
        let s = eig.values[i].sqrt();
        for j in 0..m {
            p[(i, j)] = eig.vectors[(j, i)].conj() * s;
        }
    }
    (t, PilotMatrix::new(p), eig.values)
}

fn build_problem(
    covs: &[ChannelCovariance],
    constraints: &DesignConstraints,
    objective: HermitianMatrix,
) -> Result<SdpProblem> {
    let lmis = covs
        .iter()
        .zip(&constraints.eps_k)
        .enumerate()
        .map(|(k, (cov, &eps))| LmiConstraint {
            u: cov.u.clone(),
            d: HermitianMatrix::from_real_diagonal(&lmi_rhs(cov, eps)),
            label: format!("user {k}"),
        })
        .collect();
    SdpProblem::new(objective, lmis, constraints.e_max)
}

fn log_det_shifted(x: &HermitianMatrix, delta: f64) -> f64 {
    eigenvalues(x)
        .iter()
        .map(|v| (v + delta).max(f64::MIN_POSITIVE).ln())
        .sum()
}

fn relative_change(new: &HermitianMatrix, old: &HermitianMatrix) -> f64 {
    let num = new.sub(old).frobenius_norm();
    let den = old.frobenius_norm();
    if den > 0.0 {
        num / den
    } else if num > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

fn infeasible(certificate: Option<String>) -> Error {
    Error::Infeasible(certificate.unwrap_or_else(|| "constraints cannot be met".into()))
}

fn finish(
    x: HermitianMatrix,
    problem: &SdpProblem,
    constraints: &DesignConstraints,
    status: SolveStatus,
    outer_iterations: usize,
    converged: bool,
    log_det_trace: Vec<f64>,
) -> Result<GramSolution> {
    let max_violation = feasibility_check(&x, problem, 0.0)?.max_violation;
    let (t, pilots, eigvals) = extract_with_spectrum(&x, constraints.eps_s_factor);
    let total_energy = pilots.total_energy();
    Ok(GramSolution {
        x_star: x,
        eigvals,
        t,
        pilots,
        total_energy,
        outer_iterations,
        status,
        converged,
        log_det_trace,
        max_violation,
    })
}

/// Minimum-length design: iterates `X_{t+1} = argmin Tr((X_t + δI)^{-1} X)`
/// under the accuracy LMIs and per-antenna caps, starting from the all-ones
/// matrix.
pub fn design_min_length(
    covs: &[ChannelCovariance],
    constraints: &DesignConstraints,
    options: &SolverOptions,
) -> Result<GramSolution> {
    let m = constraints.check(covs)?;
    let mut problem = build_problem(covs, constraints, HermitianMatrix::identity(m))?;
    let mut x = HermitianMatrix::new(CMat::from_element(m, m, Complex64::from(1.0)))?;
    let mut status = SolveStatus::Optimal;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < constraints.max_outer {
        let shifted = x.add(&HermitianMatrix::scaled_identity(m, constraints.delta));
        problem.objective = inverse_hpd(&shifted)?;
        let sol = solve(&problem, options)?;
        iterations += 1;
        match sol.status {
            SolveStatus::Infeasible => return Err(infeasible(sol.certificate)),
            SolveStatus::MaxIterations => status = SolveStatus::MaxIterations,
            SolveStatus::Optimal => {}
        }
        let change = relative_change(&sol.x, &x);
        x = sol.x;
        trace.push(log_det_shifted(&x, constraints.delta));
        debug_assert!(
            trace.len() < 2 || {
                let (a, b) = (trace[trace.len() - 2], trace[trace.len() - 1]);
                b <= a + LOG_DET_SLACK * a.abs().max(1.0)
            },
            "log det increased: {trace:?}"
        );
        if change < constraints.outer_tol {
            converged = true;
            break;
        }
    }
    finish(
        x,
        &problem,
        constraints,
        status,
        iterations,
        converged,
        trace,
    )
}

/// Minimum-energy design: a single solve of `min Tr(X)`.
pub fn design_min_energy(
    covs: &[ChannelCovariance],
    constraints: &DesignConstraints,
    options: &SolverOptions,
) -> Result<GramSolution> {
    let m = constraints.check(covs)?;
    let problem = build_problem(covs, constraints, HermitianMatrix::identity(m))?;
    let sol = solve(&problem, options)?;
    if sol.status == SolveStatus::Infeasible {
        return Err(infeasible(sol.certificate));
    }
    let trace = vec![log_det_shifted(&sol.x, constraints.delta)];
    finish(sol.x, &problem, constraints, sol.status, 1, true, trace)
}

/// Working state of the constructive builder.
#[derive(Debug, Clone)]
pub struct ConstructiveState {
    /// Orthonormal rows built so far, `ℓ × M`.
    pub rows: CMat,
    /// Kept eigenvectors per user (eigenvalues `≥ ε_k`).
    pub u: Vec<CMat>,
    /// `Z_k = P U_k`.
    pub z: Vec<CMat>,
    /// Diagonal of `D_k = ε_k^{-1} I − Λ_k^{-1}` on the kept eigenvalues.
    pub d: Vec<Vec<f64>>,
    pub sigma_sq: Vec<f64>,
    pub alpha: f64,
}

impl ConstructiveState {
    fn new(covs: &[ChannelCovariance], constraints: &DesignConstraints) -> Self {
        let m = covs.first().map_or(0, |c| c.antennas());
        let mut u = Vec::new();
        let mut d = Vec::new();
        for (cov, &eps) in covs.iter().zip(&constraints.eps_k) {
            let keep: Vec<usize> = (0..cov.rank()).filter(|&i| cov.lambda[i] >= eps).collect();
            u.push(cov.u.select_columns(&keep));
            d.push(
                keep.iter()
                    .map(|&i| 1.0 / eps - 1.0 / cov.lambda[i])
                    .collect(),
            );
        }
        Self {
            rows: CMat::zeros(0, m),
            z: u.iter().map(|uk| CMat::zeros(0, uk.ncols())).collect(),
            u,
            d,
            sigma_sq: covs.iter().map(|c| c.sigma_sq).collect(),
            alpha: 1.0,
        }
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.u.iter().map(|u| u.ncols()).collect()
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True when the first `min(ℓ, r_k)` rows already act injectively on
    /// every user's kept subspace.
    fn ranks_ok(&self) -> bool {
        let l = self.len();
        self.z.iter().all(|z| {
            let need = l.min(z.ncols());
            if need == 0 {
                return true;
            }
            let s = singular_values(&z.rows(0, need).into_owned());
            s.len() >= need && s[need - 1] > 1e-9 * s[0].max(1e-300)
        })
    }

    fn push_row<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let m = self.rows.ncols();
        let l = self.len();
        for _ in 0..MAX_ROW_RETRIES {
            let mut g = CVec::from_fn(m, |_, _| {
                Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
            });
            // Project onto the orthogonal complement of the current rows.
            for i in 0..l {
                let row = self.rows.row(i);
                let coeff: Complex64 = (0..m).map(|j| row[j] * g[j]).sum();
                for j in 0..m {
                    g[j] -= coeff * row[j].conj();
                }
            }
            let norm = g.norm();
            if !(norm > 1e-12) {
                continue;
            }
            let row = g.adjoint() / Complex64::from(norm);
            let mut rows = self.rows.clone().insert_row(l, Complex64::from(0.0));
            rows.set_row(l, &row);
            let z: Vec<CMat> = self.u.iter().map(|u| &rows * u).collect();
            let candidate = Self {
                rows,
                z,
                ..self.clone()
            };
            if candidate.ranks_ok() {
                *self = candidate;
                return Ok(());
            }
        }
        Err(Error::RankDeficient {
            retries: MAX_ROW_RETRIES,
        })
    }

    /// Smallest `α` with `α² Z_kᴴ Z_k / σ_k² ⪰ D_k` guaranteed through
    /// `α² λ_min(Z_kᴴ Z_k) ≥ σ_k² λ_max(D_k)` for every user.
    fn sufficient_alpha(&self) -> f64 {
        let mut a2 = 0.0f64;
        for k in 0..self.u.len() {
            let dmax = self.d[k].iter().copied().fold(0.0, f64::max);
            if dmax <= 0.0 {
                continue;
            }
            let gram = HermitianMatrix::from_hermitian_part(&(self.z[k].adjoint() * &self.z[k]));
            let lmin = min_eigenvalue(&gram);
            a2 = a2.max(self.sigma_sq[k] * dmax / lmin);
        }
        a2.sqrt()
    }

    pub fn pilots(&self) -> PilotMatrix {
        PilotMatrix::new(&self.rows * Complex64::from(self.alpha))
    }
}

/// Constructive design for unbounded energy: `max_k r_k` orthonormal rows,
/// each drawn from the complement of the previous ones, then scaled by the
/// smallest `α` that the sufficiency argument certifies. Eigenvalues below
/// `ε_k` are dropped from each user first.
pub fn design_unconstrained<R: Rng + ?Sized>(
    covs: &[ChannelCovariance],
    constraints: &DesignConstraints,
    rng: &mut R,
) -> Result<PilotMatrix> {
    let m = constraints.check(covs)?;
    let mut state = ConstructiveState::new(covs, constraints);
    let t = state.ranks().into_iter().max().unwrap_or(0);
    if t > m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: t,
        });
    }
    for _ in 0..t {
        state.push_row(rng)?;
    }
    state.alpha = state.sufficient_alpha();
    Ok(state.pilots())
}

/// Per-user `λ_max(C_e,k) / ε_k` for the given pilots.
pub fn accuracy_ratios(
    pilots: &PilotMatrix,
    covs: &[ChannelCovariance],
    constraints: &DesignConstraints,
) -> Result<Vec<f64>> {
    covs.iter()
        .zip(&constraints.eps_k)
        .map(|(cov, &eps)| Ok(accuracy_ratio(&error_covariance(pilots, cov)?, eps)))
        .collect()
}
