//! Single-cell downlink scenario: a uniform circular array at the origin,
//! users dropped in an annulus, and a ring of local scatterers around each
//! user. Spatial covariances are built by summing the per-antenna responses
//! of every scatterer ray and truncating to the dominant eigenspace.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::matrix_core::{eig_hermitian, sqrt_psd_factor, CMat, CVec, HermitianMatrix};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Scenario parameters as read from a `key = value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub antennas: usize,
    pub users: usize,
    pub array_diameter_m: f64,
    pub carrier_ghz: f64,
    pub min_dist_m: f64,
    pub max_dist_m: f64,
    pub scatterers_per_user: usize,
    pub scatter_radius_m: f64,
    /// Total noise power per user (thermal plus quantization), dBm.
    pub noise_dbm: f64,
    /// Fraction of the noise power attributed to quantization.
    pub quantization_split: f64,
    pub energy_keep_fraction: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            antennas: 32,
            users: 8,
            array_diameter_m: 2.0,
            carrier_ghz: 3.5,
            min_dist_m: 250.0,
            max_dist_m: 750.0,
            scatterers_per_user: 200,
            scatter_radius_m: 50.0,
            noise_dbm: -110.0,
            quantization_split: 0.5,
            energy_keep_fraction: 0.99,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let cfg = Self::take_from(&mut kv)?;
        kv.finish()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Consumes the scenario keys from `kv`, starting from the defaults.
    pub fn take_from(kv: &mut KeyValues) -> Result<Self> {
        let mut c = Self::default();
        kv.take("antennas", &mut c.antennas)?;
        kv.take("users", &mut c.users)?;
        kv.take("array_diameter_m", &mut c.array_diameter_m)?;
        kv.take("carrier_ghz", &mut c.carrier_ghz)?;
        kv.take("min_dist_m", &mut c.min_dist_m)?;
        kv.take("max_dist_m", &mut c.max_dist_m)?;
        kv.take("scatterers_per_user", &mut c.scatterers_per_user)?;
        kv.take("scatter_radius_m", &mut c.scatter_radius_m)?;
        kv.take("noise_dbm", &mut c.noise_dbm)?;
        kv.take("quantization_split", &mut c.quantization_split)?;
        kv.take("energy_keep_fraction", &mut c.energy_keep_fraction)?;
        kv.take("seed", &mut c.seed)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.antennas == 0 || self.users == 0 || self.scatterers_per_user == 0 {
            return bad("antennas, users and scatterers_per_user must be positive");
        }
        if !(self.array_diameter_m >= 0.0 && self.carrier_ghz > 0.0) {
            return bad("array_diameter_m must be non-negative and carrier_ghz positive");
        }
        if !(self.min_dist_m > 0.0 && self.min_dist_m <= self.max_dist_m) {
            return bad("need 0 < min_dist_m <= max_dist_m");
        }
        if !(self.scatter_radius_m >= 0.0) || !self.noise_dbm.is_finite() {
            return bad("scatter_radius_m must be non-negative and noise_dbm finite");
        }
        if !(0.0..=1.0).contains(&self.quantization_split) {
            return bad("quantization_split must lie in [0, 1]");
        }
        if !(self.energy_keep_fraction > 0.0 && self.energy_keep_fraction <= 1.0) {
            return bad("energy_keep_fraction must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / (self.carrier_ghz * 1e9)
    }

    /// Noise power split into `(thermal, quantization)`, linear mW.
    pub fn noise_split(&self) -> (f64, f64) {
        let total = dbm_to_mw(self.noise_dbm);
        let q = total * self.quantization_split;
        (total - q, q)
    }
}

pub type Point = [f64; 2];

/// A drawn cell layout. All positions are in meters, BTS array centered at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub antenna_positions: Vec<Point>,
    pub ut_positions: Vec<Point>,
    /// `scatterers[k]` holds the scatterers around user `k`.
    pub scatterers: Vec<Vec<Point>>,
}

impl Scenario {
    pub fn antennas(&self) -> usize {
        self.antenna_positions.len()
    }

    pub fn users(&self) -> usize {
        self.ut_positions.len()
    }

    pub fn ut_distance(&self, k: usize) -> f64 {
        norm2(self.ut_positions[k])
    }
}

/// Antenna positions of a uniform circular array centered at the origin.
pub fn uca_positions(antennas: usize, diameter_m: f64) -> Vec<Point> {
    let radius = diameter_m / 2.0;
    (0..antennas)
        .map(|m| {
            let phi = 2.0 * PI * m as f64 / antennas as f64;
            [radius * phi.cos(), radius * phi.sin()]
        })
        .collect()
}

/// Draws users uniformly (by area) in the annulus and scatterers uniformly on a
/// disc around each user.
pub fn generate_scenario<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    rng: &mut R,
) -> Result<Scenario> {
    config.validate()?;
    let antenna_positions = uca_positions(config.antennas, config.array_diameter_m);
    let (r2_lo, r2_hi) = (config.min_dist_m.powi(2), config.max_dist_m.powi(2));
    let mut ut_positions = Vec::with_capacity(config.users);
    let mut scatterers = Vec::with_capacity(config.users);
    for _ in 0..config.users {
        let radius = if r2_hi > r2_lo {
            rng.random_range(r2_lo..r2_hi).sqrt()
        } else {
            config.min_dist_m
        };
        let phi = rng.random_range(0.0..2.0 * PI);
        let ut = [radius * phi.cos(), radius * phi.sin()];
        let ring = (0..config.scatterers_per_user)
            .map(|_| {
                let rho = config.scatter_radius_m * rng.random::<f64>().sqrt();
                let theta = rng.random_range(0.0..2.0 * PI);
                [ut[0] + rho * theta.cos(), ut[1] + rho * theta.sin()]
            })
            .collect();
        ut_positions.push(ut);
        scatterers.push(ring);
    }
    Ok(Scenario {
        config: config.clone(),
        antenna_positions,
        ut_positions,
        scatterers,
    })
}

/// Line-of-sight urban micro-cell path loss in dB, distance in meters.
pub fn path_loss_db(distance_m: f64, carrier_ghz: f64) -> f64 {
    22.0 * distance_m.log10() + 28.0 + 20.0 * carrier_ghz.log10()
}

pub fn path_loss_gain(distance_m: f64, carrier_ghz: f64) -> f64 {
    db_to_linear(-path_loss_db(distance_m, carrier_ghz))
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    db_to_linear(dbm)
}

/// Per-antenna response to a point source, using exact (spherical) distances.
pub fn array_response(antennas: &[Point], source: Point, wavelength_m: f64) -> CVec {
    let k = 2.0 * PI / wavelength_m;
    CVec::from_iterator(
        antennas.len(),
        antennas.iter().map(|&a| {
            let d = norm2([source[0] - a[0], source[1] - a[1]]);
            Complex64::from_polar(1.0, -k * d)
        }),
    )
}

/// Full-rank covariance `(g_k / S) Σ_s a(p_s) a(p_s)^H` of user `user`.
pub fn raw_covariance(scenario: &Scenario, user: usize) -> HermitianMatrix {
    let m = scenario.antennas();
    let lambda_c = scenario.config.wavelength_m();
    let rays = &scenario.scatterers[user];
    let mut steering = CMat::zeros(m, rays.len());
    for (s, &p) in rays.iter().enumerate() {
        steering.set_column(s, &array_response(&scenario.antenna_positions, p, lambda_c));
    }
    let gain = path_loss_gain(scenario.ut_distance(user), scenario.config.carrier_ghz);
    let weight = Complex64::from(gain / rays.len() as f64);
    HermitianMatrix::from_hermitian_part(&(&steering * steering.adjoint() * weight))
}

/// Statistical CSI of one user: the truncated eigendecomposition
/// `R = U diag(Λ) U^H` and the noise powers seen at the BTS after feedback.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelCovariance {
    /// `M × r`, orthonormal columns.
    pub u: CMat,
    /// Strictly positive, descending.
    pub lambda: Vec<f64>,
    pub sigma_n_sq: f64,
    pub sigma_q_sq: f64,
    pub sigma_sq: f64,
}

impl ChannelCovariance {
    pub fn new(u: CMat, lambda: Vec<f64>, sigma_n_sq: f64, sigma_q_sq: f64) -> Result<Self> {
        if u.ncols() != lambda.len() {
            return Err(Error::DimensionMismatch {
                expected: u.ncols(),
                got: lambda.len(),
            });
        }
        if lambda.len() > u.nrows() {
            return Err(Error::InvalidConfig("rank exceeds antenna count".into()));
        }
        if let Some((index, &value)) = lambda.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
            return Err(Error::NonpositiveEigenvalue { index, value });
        }
        if lambda.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig(
                "eigenvalues must be non-increasing".into(),
            ));
        }
        let gram_err = (u.adjoint() * &u - CMat::identity(u.ncols(), u.ncols())).norm();
        if gram_err > 1e-10 {
            return Err(Error::InvalidConfig(format!(
                "eigenvector columns are not orthonormal ({gram_err:e})"
            )));
        }
        if sigma_n_sq < 0.0 || sigma_q_sq < 0.0 {
            return Err(Error::InvalidConfig(
                "noise variances must be non-negative".into(),
            ));
        }
        Ok(Self {
            u,
            lambda,
            sigma_n_sq,
            sigma_q_sq,
            sigma_sq: sigma_n_sq + sigma_q_sq,
        })
    }

    /// Truncates `r_full` to the smallest rank keeping `keep_fraction` of its trace.
    pub fn from_full(
        r_full: &HermitianMatrix,
        keep_fraction: f64,
        sigma_n_sq: f64,
        sigma_q_sq: f64,
    ) -> Result<Self> {
        let eig = eig_hermitian(r_full);
        let total = r_full.trace();
        let target = keep_fraction * total;
        let mut acc = 0.0;
        let mut rank = 0;
        for &v in &eig.values {
            if acc >= target && rank > 0 {
                break;
            }
            if v <= 0.0 {
                break;
            }
            acc += v;
            rank += 1;
        }
        let u = eig.vectors.columns(0, rank).into_owned();
        Self::new(u, eig.values[..rank].to_vec(), sigma_n_sq, sigma_q_sq)
    }

    pub fn antennas(&self) -> usize {
        self.u.nrows()
    }

    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn trace(&self) -> f64 {
        self.lambda.iter().sum()
    }

    /// `R^{1/2} = U Λ^{1/2}`, `M × r`.
    pub fn sqrt_factor(&self) -> CMat {
        sqrt_psd_factor(&self.lambda, &self.u, self.rank())
            .expect("covariance eigenvalues are validated positive")
    }

    /// `U Λ U^H`.
    pub fn matrix(&self) -> HermitianMatrix {
        let f = self.sqrt_factor();
        HermitianMatrix::from_hermitian_part(&(&f * f.adjoint()))
    }
}

/// Builds the truncated covariance of `user` in `scenario`.
pub fn build_covariance(scenario: &Scenario, user: usize) -> Result<ChannelCovariance> {
    if user >= scenario.users() {
        return Err(Error::DimensionMismatch {
            expected: scenario.users(),
            got: user,
        });
    }
    let (sn, sq) = scenario.config.noise_split();
    ChannelCovariance::from_full(
        &raw_covariance(scenario, user),
        scenario.config.energy_keep_fraction,
        sn,
        sq,
    )
}

pub fn build_all_covariances(scenario: &Scenario) -> Result<Vec<ChannelCovariance>> {
    (0..scenario.users())
        .map(|k| build_covariance(scenario, k))
        .collect()
}

/// One fast-fading draw `h = U Λ^{1/2} η`.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub eta: CVec,
    pub h: CVec,
}

/// Circularly-symmetric complex Gaussian vector with per-entry variance `var`.
pub fn complex_normal_vector<R: Rng + ?Sized>(rng: &mut R, len: usize, var: f64) -> CVec {
    let s = (var / 2.0).sqrt();
    DVector::from_fn(len, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(s * re, s * im)
    })
}

pub fn sample_channel<R: Rng + ?Sized>(cov: &ChannelCovariance, rng: &mut R) -> ChannelRealization {
    let eta = complex_normal_vector(rng, cov.rank(), 1.0);
    let h = cov.sqrt_factor() * &eta;
    ChannelRealization { eta, h }
}

/// Random covariance with the given spectrum and a random `M × r` eigenbasis.
pub fn synthetic_covariance<R: Rng + ?Sized>(
    rng: &mut R,
    antennas: usize,
    spectrum: &[f64],
    sigma_sq: f64,
) -> Result<ChannelCovariance> {
    let g = CMat::from_fn(antennas, antennas, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let q = g.qr().q();
    let u = q.columns(0, spectrum.len()).into_owned();
    ChannelCovariance::new(u, spectrum.to_vec(), sigma_sq / 2.0, sigma_sq / 2.0)
}

fn norm2(p: Point) -> f64 {
    p[0].hypot(p[1])
}
