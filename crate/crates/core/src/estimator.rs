//! LMMSE estimation of downlink channels from fed-back pilot observations.
//!
//! The BTS broadcasts a `T × M` pilot block `P`, user `k` receives
//! `y = P h + w`, and the quantized feedback `ȳ = y + z` reaches the BTS,
//! which estimates `h` from `ȳ` and the known covariance.

use num_complex::Complex64;
use rand::Rng;

use crate::channel_model::{
    complex_normal_vector, sample_channel, ChannelCovariance, ChannelRealization,
};
use crate::error::{Error, Result};
use crate::matrix_core::{
    inverse_hpd, max_eigenvalue, min_eigenvalue, psd_order_leq, CMat, CVec, HermitianMatrix,
};

/// The pilot block broadcast by the BTS, one row per channel use.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotMatrix {
    p: CMat,
}

impl PilotMatrix {
    pub fn new(p: CMat) -> Self {
        Self { p }
    }

    /// `T = 0` pilot block for `antennas` antennas.
    pub fn empty(antennas: usize) -> Self {
        Self {
            p: CMat::zeros(0, antennas),
        }
    }

    pub fn len(&self) -> usize {
        self.p.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.p.nrows() == 0
    }

    pub fn antennas(&self) -> usize {
        self.p.ncols()
    }

    pub fn as_matrix(&self) -> &CMat {
        &self.p
    }

    /// `X = P^H P`.
    pub fn gram(&self) -> HermitianMatrix {
        HermitianMatrix::from_hermitian_part(&(self.p.adjoint() * &self.p))
    }

    /// Energy radiated by each antenna, i.e. the diagonal of `P^H P`.
    pub fn antenna_energies(&self) -> Vec<f64> {
        (0..self.antennas())
            .map(|m| self.p.column(m).norm_squared())
            .collect()
    }

    pub fn total_energy(&self) -> f64 {
        self.p.norm_squared()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            p: &self.p * Complex64::from(alpha),
        }
    }
}

/// Received and fed-back signals of one pilot round for one user.
#[derive(Debug, Clone)]
pub struct ObservationRound {
    pub y: CVec,
    pub y_bar: CVec,
    pub w: CVec,
    pub z: CVec,
}

/// Analytic LMMSE error covariances on `h` (`M × M`) and on `η` (`r × r`).
#[derive(Debug, Clone)]
pub struct ErrorCovariance {
    pub c_e: HermitianMatrix,
    pub c_e_eta: HermitianMatrix,
}

fn check_antennas(p: &PilotMatrix, cov: &ChannelCovariance) -> Result<()> {
    if p.antennas() != cov.antennas() {
        return Err(Error::DimensionMismatch {
            expected: cov.antennas(),
            got: p.antennas(),
        });
    }
    Ok(())
}

/// Error covariance for pilots `P`; see [`error_covariance_from_gram`].
pub fn error_covariance(p: &PilotMatrix, cov: &ChannelCovariance) -> Result<ErrorCovariance> {
    check_antennas(p, cov)?;
    error_covariance_from_gram(&p.gram(), cov)
}

/// Error covariance as a function of the Gram matrix `X = P^H P` only:
///
/// `C_η = (I + Λ^{1/2} U^H X U Λ^{1/2} / σ²)^{-1}`,
/// `C_e = U (Λ^{-1} + U^H X U / σ²)^{-1} U^H`.
pub fn error_covariance_from_gram(
    x: &HermitianMatrix,
    cov: &ChannelCovariance,
) -> Result<ErrorCovariance> {
    if x.dim() != cov.antennas() {
        return Err(Error::DimensionMismatch {
            expected: cov.antennas(),
            got: x.dim(),
        });
    }
    if !(cov.sigma_sq > 0.0) {
        return Err(Error::SingularInput(
            "noise variance must be positive".into(),
        ));
    }
    if cov.lambda.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::SingularInput(
            "covariance eigenvalues must be positive".into(),
        ));
    }
    let r = cov.rank();
    let inv_s2 = Complex64::from(1.0 / cov.sigma_sq);
    let uxu = x.congruence(&cov.u);

    let f = cov.sqrt_factor();
    let info = x.congruence(&f);
    let eta_inner =
        HermitianMatrix::from_hermitian_part(&(CMat::identity(r, r) + info.as_matrix() * inv_s2));
    let c_e_eta = inverse_hpd(&eta_inner)?;

    let mut h_inner = uxu.as_matrix() * inv_s2;
    for (i, &l) in cov.lambda.iter().enumerate() {
        h_inner[(i, i)] += Complex64::from(1.0 / l);
    }
    let inner_inv = inverse_hpd(&HermitianMatrix::from_hermitian_part(&h_inner))?;
    let c_e = inner_inv.congruence(&cov.u.adjoint());
    Ok(ErrorCovariance { c_e, c_e_eta })
}

/// `C_η` evaluated without the Woodbury step:
/// `I − Λ^{1/2}U^H P^H (P R P^H + σ² I_T)^{-1} P U Λ^{1/2}`.
pub fn error_covariance_eta_direct(
    p: &PilotMatrix,
    cov: &ChannelCovariance,
) -> Result<HermitianMatrix> {
    check_antennas(p, cov)?;
    let r = cov.rank();
    let pf = p.as_matrix() * cov.sqrt_factor();
    let t = p.len();
    let obs = HermitianMatrix::from_hermitian_part(
        &(&pf * pf.adjoint() + CMat::identity(t, t) * Complex64::from(cov.sigma_sq)),
    );
    // Gain = Wᴴ W with W = L⁻¹ P F, L the Cholesky factor of the observation covariance.
    let chol = obs.into_inner().cholesky().ok_or_else(|| {
        Error::SingularInput("observation covariance is not positive definite".into())
    })?;
    let w = chol
        .l_dirty()
        .solve_lower_triangular(&pf)
        .ok_or_else(|| Error::SingularInput("observation covariance is singular".into()))?;
    let gain = w.adjoint() * w;
    Ok(HermitianMatrix::from_hermitian_part(
        &(CMat::identity(r, r) - gain),
    ))
}

/// LMMSE channel estimate `ĥ = R^{1/2} R^{H/2} P^H (P R P^H + σ² I)^{-1} ȳ`.
pub fn lmmse_estimate(y_bar: &CVec, p: &PilotMatrix, cov: &ChannelCovariance) -> Result<CVec> {
    check_antennas(p, cov)?;
    if y_bar.len() != p.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: y_bar.len(),
        });
    }
    let f = cov.sqrt_factor();
    if p.is_empty() {
        return Ok(CVec::zeros(cov.antennas()));
    }
    let pf = p.as_matrix() * &f;
    let t = p.len();
    let obs = &pf * pf.adjoint() + CMat::identity(t, t) * Complex64::from(cov.sigma_sq);
    let solved = obs
        .lu()
        .solve(y_bar)
        .ok_or_else(|| Error::SingularInput("observation covariance is singular".into()))?;
    if solved
        .iter()
        .any(|z| !z.re.is_finite() || !z.im.is_finite())
    {
        return Err(Error::SingularInput(
            "observation covariance is singular".into(),
        ));
    }
    let eta_hat = pf.adjoint() * solved;
    Ok(f * eta_hat)
}

/// Everything produced by one simulated pilot round.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub channel: ChannelRealization,
    pub observation: ObservationRound,
    pub estimate: CVec,
    pub squared_error: f64,
}

/// Draws a channel, thermal and quantization noise, and runs the estimator.
pub fn simulate_round<R: Rng + ?Sized>(
    p: &PilotMatrix,
    cov: &ChannelCovariance,
    rng: &mut R,
) -> Result<RoundOutcome> {
    check_antennas(p, cov)?;
    let channel = sample_channel(cov, rng);
    let t = p.len();
    let w = complex_normal_vector(rng, t, cov.sigma_n_sq);
    let z = complex_normal_vector(rng, t, cov.sigma_q_sq);
    let y = p.as_matrix() * &channel.h + &w;
    let y_bar = &y + &z;
    let estimate = lmmse_estimate(&y_bar, p, cov)?;
    let squared_error = (&estimate - &channel.h).norm_squared();
    Ok(RoundOutcome {
        channel,
        observation: ObservationRound { y, y_bar, w, z },
        estimate,
        squared_error,
    })
}

/// `λ_max(C_e) / ε_k`.
pub fn accuracy_ratio(err: &ErrorCovariance, eps_k: f64) -> f64 {
    max_eigenvalue(&err.c_e).max(0.0) / eps_k
}

/// Right-hand side `(ε_k^{-1} I − Λ^{-1}) σ²` of the per-user LMI.
pub fn lmi_rhs(cov: &ChannelCovariance, eps_k: f64) -> Vec<f64> {
    cov.lambda
        .iter()
        .map(|&l| (1.0 / eps_k - 1.0 / l) * cov.sigma_sq)
        .collect()
}

/// Checks `U^H X U ⪰ (ε_k^{-1} I − Λ^{-1}) σ²` up to `tol` on the minimum eigenvalue.
/// Equivalent to `C_e(X) ⪯ ε_k I`.
pub fn check_lmi_constraint(
    x: &HermitianMatrix,
    cov: &ChannelCovariance,
    eps_k: f64,
    tol: f64,
) -> Result<bool> {
    if x.dim() != cov.antennas() {
        return Err(Error::DimensionMismatch {
            expected: cov.antennas(),
            got: x.dim(),
        });
    }
    let slack = x
        .congruence(&cov.u)
        .sub(&HermitianMatrix::from_real_diagonal(&lmi_rhs(cov, eps_k)));
    Ok(min_eigenvalue(&slack) >= -tol)
}

/// Direct Loewner check `C_e(X) ⪯ ε_k I`.
pub fn error_within_bound(
    x: &HermitianMatrix,
    cov: &ChannelCovariance,
    eps_k: f64,
    tol: f64,
) -> Result<bool> {
    let err = error_covariance_from_gram(x, cov)?;
    psd_order_leq(
        &err.c_e,
        &HermitianMatrix::scaled_identity(cov.antennas(), eps_k),
        tol,
    )
}

/// True when `C_e` is PSD and dominated by the prior `R`.
pub fn error_never_exceeds_prior(err: &ErrorCovariance, cov: &ChannelCovariance) -> bool {
    let tr = cov.trace();
    min_eigenvalue(&err.c_e) >= -1e-10 * tr
        && min_eigenvalue(&err.c_e_eta) >= -1e-10
        && psd_order_leq(&err.c_e, &cov.matrix(), 1e-8 * tr).unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel_model::synthetic_covariance;
    use crate::matrix_core::{relative_frobenius, test_support::*};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn empty_pilots_leave_prior() {
        let cov = synthetic_covariance(&mut rng(1), 6, &[4.0, 2.0, 1.0], 0.1).unwrap();
        let err = error_covariance(&PilotMatrix::empty(6), &cov).unwrap();
        assert!(relative_frobenius(err.c_e.as_matrix(), cov.matrix().as_matrix()) < 1e-12);
        assert!((err.c_e_eta.as_matrix() - CMat::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn scalar_woodbury() {
        let (lambda, sigma_sq) = (2.0, 0.5);
        let mut u = CMat::zeros(3, 1);
        u[(1, 0)] = Complex64::from(1.0);
        let cov = ChannelCovariance::new(u.clone(), vec![lambda], sigma_sq, 0.0).unwrap();
        let mut p = CMat::zeros(1, 3);
        p[(0, 0)] = Complex64::new(0.3, 0.1);
        p[(0, 1)] = Complex64::new(0.6, -0.8);
        let e = (p.clone() * &u)[(0, 0)].norm_sqr();
        let err = error_covariance(&PilotMatrix::new(p), &cov).unwrap();
        let eta = 1.0 / (1.0 + lambda * e / sigma_sq);
        assert!((err.c_e_eta.as_matrix()[(0, 0)].re - eta).abs() < 1e-14);
        let ce = lambda / (1.0 + lambda * e / sigma_sq);
        assert!((err.c_e.as_matrix()[(1, 1)].re - ce).abs() < 1e-14);
        assert!(err.c_e.as_matrix()[(0, 0)].norm() < 1e-15);
    }

    #[test]
    fn woodbury_matches_direct_form() {
        let mut r = rng(2);
        for _ in 0..20 {
            let cov = synthetic_covariance(&mut r, 8, &[3.0, 1.5, 0.2], 1.0).unwrap();
            let p = PilotMatrix::new(complex_gaussian(&mut r, 5, 8));
            let direct = error_covariance_eta_direct(&p, &cov).unwrap();
            let err = error_covariance(&p, &cov).unwrap();
            assert!(relative_frobenius(err.c_e_eta.as_matrix(), direct.as_matrix()) < 1e-8);
            // C_e = R^{1/2} C_η R^{H/2}
            let f = cov.sqrt_factor();
            let via_eta = &f * err.c_e_eta.as_matrix() * f.adjoint();
            assert!(relative_frobenius(err.c_e.as_matrix(), &via_eta) < 1e-8);
            assert!(error_never_exceeds_prior(&err, &cov));
        }
    }

    #[test]
    fn orthogonal_pilots_closed_form() {
        let mut r = rng(3);
        let cov = synthetic_covariance(&mut r, 6, &[5.0, 2.0, 1.0, 0.1], 0.3).unwrap();
        let energy: f64 = 2.5;
        let p = PilotMatrix::new(CMat::identity(6, 6) * Complex64::from(energy.sqrt()));
        let err = error_covariance(&p, &cov).unwrap();
        let diag: Vec<f64> = cov
            .lambda
            .iter()
            .map(|l| 1.0 / (1.0 / l + energy / cov.sigma_sq))
            .collect();
        let expected = scale_cols(&cov.u, &diag) * cov.u.adjoint();
        assert!(relative_frobenius(err.c_e.as_matrix(), &expected) < 1e-10);
    }

    fn scale_cols(m: &CMat, s: &[f64]) -> CMat {
        crate::matrix_core::scale_columns(m, s)
    }

    #[test]
    fn zero_observation_gives_zero_estimate() {
        let mut r = rng(4);
        let cov = synthetic_covariance(&mut r, 4, &[1.0, 0.5], 0.1).unwrap();
        let p = PilotMatrix::new(complex_gaussian(&mut r, 2, 4));
        let h = lmmse_estimate(&CVec::zeros(2), &p, &cov).unwrap();
        assert!(h.norm() == 0.0);
        assert!(lmmse_estimate(&CVec::zeros(3), &p, &cov).is_err());
    }

    #[test]
    fn noiseless_round_trip_recovers_channel() {
        let mut r = rng(5);
        let cov = synthetic_covariance(&mut r, 8, &[2.0, 1.0, 0.5], 0.0).unwrap();
        let p = PilotMatrix::new(complex_gaussian(&mut r, 3, 8));
        for _ in 0..10 {
            let ch = sample_channel(&cov, &mut r);
            let y = p.as_matrix() * &ch.h;
            let h_hat = lmmse_estimate(&y, &p, &cov).unwrap();
            assert!((&h_hat - &ch.h).norm() <= 1e-6 * ch.h.norm());
        }
    }

    #[test]
    fn scalar_estimate_hand_calculation() {
        // M = 1, r = 1: ĥ = λ p̄ ȳ / (λ|p|² + σ²)
        let cov = ChannelCovariance::new(CMat::identity(1, 1), vec![4.0], 0.5, 0.25).unwrap();
        let pv = Complex64::new(0.6, 0.8) * 1.5;
        let p = PilotMatrix::new(CMat::from_element(1, 1, pv));
        let y_bar = CVec::from_element(1, Complex64::new(0.7, -0.2));
        let got = lmmse_estimate(&y_bar, &p, &cov).unwrap()[0];
        let want = pv.conj() * y_bar[0] * 4.0 / (4.0 * pv.norm_sqr() + 0.75);
        assert!((got - want).norm() < 1e-14);
    }

    #[test]
    fn noiseless_simulated_round() {
        let mut r = rng(6);
        let cov = synthetic_covariance(&mut r, 5, &[1.0, 0.3], 0.0).unwrap();
        let p = PilotMatrix::new(complex_gaussian(&mut r, 2, 5));
        let out = simulate_round(&p, &cov, &mut r).unwrap();
        assert!(out.squared_error < 1e-20);
        let obs = &out.observation;
        assert_eq!(obs.y_bar, &obs.y + &obs.z);
        assert_eq!(obs.y, p.as_matrix() * &out.channel.h + &obs.w);
    }

    #[test]
    fn zero_pilots_estimate_prior_mean() {
        let mut r = rng(7);
        let cov = synthetic_covariance(&mut r, 4, &[1.0, 0.5], 0.2).unwrap();
        let p = PilotMatrix::new(CMat::zeros(2, 4));
        let n = 20_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let out = simulate_round(&p, &cov, &mut r).unwrap();
            assert!(out.estimate.norm() == 0.0);
            acc += out.squared_error;
        }
        assert!((acc / n as f64 / cov.trace() - 1.0).abs() < 0.03);
    }

    #[test]
    fn accuracy_ratio_cases() {
        let eps = 0.3;
        let err = ErrorCovariance {
            c_e: HermitianMatrix::scaled_identity(3, eps),
            c_e_eta: HermitianMatrix::identity(1),
        };
        assert!((accuracy_ratio(&err, eps) - 1.0).abs() < 1e-14);
        let zero = ErrorCovariance {
            c_e: HermitianMatrix::zeros(3),
            c_e_eta: HermitianMatrix::identity(1),
        };
        assert_eq!(accuracy_ratio(&zero, eps), 0.0);
    }

    #[test]
    fn lmi_scalar_and_vacuous() {
        let cov = ChannelCovariance::new(CMat::identity(2, 1), vec![1.0], 0.5, 0.5).unwrap();
        // (1/0.1 - 1/1) * 1 = 9
        let mut x = HermitianMatrix::from_real_diagonal(&[9.0, 0.0]);
        assert!(check_lmi_constraint(&x, &cov, 0.1, 1e-12).unwrap());
        x = HermitianMatrix::from_real_diagonal(&[8.99, 0.0]);
        assert!(!check_lmi_constraint(&x, &cov, 0.1, 1e-12).unwrap());
        // λ ≤ ε makes the constraint vacuous
        assert!(check_lmi_constraint(&HermitianMatrix::zeros(2), &cov, 1.5, 0.0).unwrap());
        assert!(check_lmi_constraint(&HermitianMatrix::zeros(3), &cov, 1.5, 0.0).is_err());
    }

    #[test]
    fn lmi_equivalence_on_random_instances() {
        let mut r = rng(8);
        let mut agree_true = 0;
        for _ in 0..200 {
            let m = r.random_range(2..7);
            let rank = r.random_range(1..=m);
            let mut spectrum: Vec<f64> = (0..rank)
                .map(|_| 10f64.powf(r.random_range(-1.0..1.0)))
                .collect();
            spectrum.sort_by(|a, b| b.total_cmp(a));
            let sigma_sq = 10f64.powf(r.random_range(-2.0..0.0));
            let cov = synthetic_covariance(&mut r, m, &spectrum, sigma_sq).unwrap();
            let x_rank = r.random_range(1..=m);
            let x_scale = r.random_range(0.1..20.0);
            let x = random_psd(&mut r, m, x_rank).scale(x_scale);
            let eps = spectrum[0] * r.random_range(0.05..1.2);
            let a = check_lmi_constraint(&x, &cov, eps, 0.0).unwrap();
            let b = error_within_bound(&x, &cov, eps, 0.0).unwrap();
            assert_eq!(a, b);
            agree_true += a as usize;
        }
        assert!(
            agree_true > 10 && agree_true < 190,
            "degenerate sample: {agree_true}"
        );
    }

    proptest! {
        #[test]
        fn appending_rows_never_hurts(seed in 0u64..5000, t in 0usize..5) {
            let mut r = rng(seed);
            let cov = synthetic_covariance(&mut r, 5, &[2.0, 1.0, 0.4], 0.5).unwrap();
            let base = complex_gaussian(&mut r, t, 5);
            let extra = complex_gaussian(&mut r, 1, 5);
            let grown = CMat::from_fn(t + 1, 5, |i, j| if i < t { base[(i, j)] } else { extra[(0, j)] });
            let e0 = error_covariance(&PilotMatrix::new(base), &cov).unwrap();
            let e1 = error_covariance(&PilotMatrix::new(grown), &cov).unwrap();
            prop_assert!(psd_order_leq(&e1.c_e, &e0.c_e, 1e-12).unwrap());
        }

        #[test]
        fn scaling_up_never_hurts(seed in 0u64..5000, alpha in 1.0f64..5.0) {
            let mut r = rng(seed);
            let cov = synthetic_covariance(&mut r, 5, &[2.0, 1.0], 0.5).unwrap();
            let p = PilotMatrix::new(complex_gaussian(&mut r, 2, 5));
            let e0 = error_covariance(&p, &cov).unwrap();
            let e1 = error_covariance(&p.scaled(alpha), &cov).unwrap();
            prop_assert!(psd_order_leq(&e1.c_e, &e0.c_e, 1e-12).unwrap());
            prop_assert!(error_never_exceeds_prior(&e1, &cov));
        }
    }
}
