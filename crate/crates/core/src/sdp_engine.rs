//! Primal-dual interior point solver for the pilot-design program family
//!
//! ```text
//! minimize    Re Tr(C X)
//! subject to  X ⪰ 0,
//!             U_kᴴ X U_k ⪰ D_k       for every LMI k,
//!             X_mm ≤ E_max           for every antenna m.
//! ```
//!
//! The program is put in standard form with slack blocks `S_k = U_kᴴ X U_k − D_k`
//! and `s_m = E_max − X_mm`, and solved natively over complex Hermitian
//! matrices with the HKM search direction and Mehrotra's predictor-corrector.
//! The dual multipliers are one Hermitian `r_k × r_k` matrix per LMI plus one
//! scalar per antenna, so the Schur complement has `Σ r_k² + M` rows. Its
//! entries are assembled from the small projected blocks `U_kᴴ X U_l` and
//! `U_lᴴ Z⁻¹ U_k` rather than from dense `M × M` constraint matrices.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::matrix_core::{
    eigenvalues, hermitian_part, max_eigenvalue, min_eigenvalue, CMat, HermitianMatrix,
};

/// One constraint `Uᴴ X U ⪰ D`.
#[derive(Debug, Clone)]
pub struct LmiConstraint {
    /// `M × r`.
    pub u: CMat,
    /// `r × r`.
    pub d: HermitianMatrix,
    pub label: String,
}

#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub dim: usize,
    pub objective: HermitianMatrix,
    pub lmi_constraints: Vec<LmiConstraint>,
    pub diag_cap: f64,
}

impl SdpProblem {
    pub fn new(
        objective: HermitianMatrix,
        lmi_constraints: Vec<LmiConstraint>,
        diag_cap: f64,
    ) -> Result<Self> {
        let dim = objective.dim();
        for c in &lmi_constraints {
            if c.u.nrows() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.u.nrows(),
                });
            }
            if c.d.dim() != c.u.ncols() {
                return Err(Error::DimensionMismatch {
                    expected: c.u.ncols(),
                    got: c.d.dim(),
                });
            }
        }
        if !(diag_cap > 0.0) || !diag_cap.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "diagonal cap must be positive and finite, got {diag_cap}"
            )));
        }
        Ok(Self {
            dim,
            objective,
            lmi_constraints,
            diag_cap,
        })
    }

    /// Magnitude used to express LMI slacks in relative terms: the largest
    /// spectral norm among the right-hand sides, or the cap if they all vanish.
    pub fn constraint_scale(&self) -> f64 {
        let s = self
            .lmi_constraints
            .iter()
            .map(|c| spectral_norm(&c.d))
            .fold(0.0, f64::max);
        if s > 0.0 {
            s
        } else {
            self.diag_cap
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative duality gap `|p − d| / (1 + |p| + |d|)`.
    pub gap_tol: f64,
    /// Allowed LMI slack violation, relative to [`SdpProblem::constraint_scale`].
    pub slack_tol: f64,
    pub max_iter: usize,
    /// Iterations without primal-infeasibility progress before giving up.
    pub stall_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-6,
            slack_tol: 1e-7,
            max_iter: 200,
            stall_iter: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::MaxIterations => "max_iterations",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub x: HermitianMatrix,
    pub objective_value: f64,
    pub dual_objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Worst violation over all constraints, relative to the constraint scale.
    pub max_constraint_violation: f64,
    /// Why the problem was declared infeasible.
    pub certificate: Option<String>,
}

/// Per-constraint slacks of a candidate `X`.
#[derive(Debug, Clone)]
pub struct FeasibilityReport {
    /// `(label, λ_min(Uᴴ X U − D))`.
    pub lmi_slacks: Vec<(String, f64)>,
    /// `E_max − X_mm` per antenna.
    pub diag_slacks: Vec<f64>,
    pub psd_min_eigenvalue: f64,
    /// Labels of violated constraints (`antenna m` for diagonal caps, `psd` for `X ⪰ 0`).
    pub violated: Vec<String>,
    pub feasible: bool,
    /// Worst violation, relative to the constraint scale (diagonal caps relative to `E_max`).
    pub max_violation: f64,
}

/// Evaluates every constraint at `x`. Slack tolerances are relative:
/// LMIs and `X ⪰ 0` against [`SdpProblem::constraint_scale`], caps against `E_max`.
pub fn feasibility_check(
    x: &HermitianMatrix,
    problem: &SdpProblem,
    tol: f64,
) -> Result<FeasibilityReport> {
    if x.dim() != problem.dim {
        return Err(Error::DimensionMismatch {
            expected: problem.dim,
            got: x.dim(),
        });
    }
    let scale = problem.constraint_scale();
    let mut violated = Vec::new();
    let mut max_violation = 0.0f64;
    let lmi_slacks: Vec<(String, f64)> = problem
        .lmi_constraints
        .iter()
        .map(|c| {
            let slack = min_eigenvalue(&x.congruence(&c.u).sub(&c.d));
            (c.label.clone(), slack)
        })
        .collect();
    for (label, slack) in &lmi_slacks {
        let v = (-slack / scale).max(0.0);
        max_violation = max_violation.max(v);
        if v > tol {
            violated.push(label.clone());
        }
    }
    let diag_slacks: Vec<f64> = x
        .real_diagonal()
        .iter()
        .map(|xm| problem.diag_cap - xm)
        .collect();
    for (m, slack) in diag_slacks.iter().enumerate() {
        let v = (-slack / problem.diag_cap).max(0.0);
        max_violation = max_violation.max(v);
        if v > tol {
            violated.push(format!("antenna {m}"));
        }
    }
    let psd_min_eigenvalue = min_eigenvalue(x);
    let v = (-psd_min_eigenvalue / scale).max(0.0);
    max_violation = max_violation.max(v);
    if v > tol {
        violated.push("psd".to_string());
    }
    Ok(FeasibilityReport {
        lmi_slacks,
        diag_slacks,
        psd_min_eigenvalue,
        feasible: violated.is_empty(),
        violated,
        max_violation,
    })
}

/// Solves `problem`. Infeasible programs are reported through
/// [`SolveStatus::Infeasible`]; only numerical failures are errors.
pub fn solve(problem: &SdpProblem, options: &SolverOptions) -> Result<SdpSolution> {
    let n = problem.dim;
    if n == 0 {
        return Ok(SdpSolution {
            x: HermitianMatrix::zeros(0),
            objective_value: 0.0,
            dual_objective: 0.0,
            status: SolveStatus::Optimal,
            iterations: 0,
            max_constraint_violation: 0.0,
            certificate: None,
        });
    }
    // X = 0 is optimal whenever it is feasible and the objective is PSD.
    let vacuous = problem
        .lmi_constraints
        .iter()
        .all(|c| c.d.dim() == 0 || max_eigenvalue(&c.d) <= 0.0);
    if vacuous && min_eigenvalue(&problem.objective) >= 0.0 {
        return Ok(SdpSolution {
            x: HermitianMatrix::zeros(n),
            objective_value: 0.0,
            dual_objective: 0.0,
            status: SolveStatus::Optimal,
            iterations: 0,
            max_constraint_violation: 0.0,
            certificate: None,
        });
    }
    Ipm::new(problem, options).run()
}

fn spectral_norm(a: &HermitianMatrix) -> f64 {
    eigenvalues(a)
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Terms `(row, col, coef)` of one element of the real basis of `r × r`
/// Hermitian matrices: `E_aa`, `E_ab + E_ba` and `i(E_ab − E_ba)`.
type BasisElement = Vec<(usize, usize, Complex64)>;

fn hermitian_basis(r: usize) -> Vec<BasisElement> {
    let mut basis = Vec::with_capacity(r * r);
    for a in 0..r {
        basis.push(vec![(a, a, Complex64::from(1.0))]);
    }
    let one = Complex64::from(1.0);
    let i = Complex64::i();
    for a in 0..r {
        for b in a + 1..r {
            basis.push(vec![(a, b, one), (b, a, one)]);
            basis.push(vec![(a, b, i), (b, a, -i)]);
        }
    }
    basis
}

/// `Re Tr(B_i G)` for every basis element.
fn basis_coords(basis: &[BasisElement], g: &CMat, out: &mut [f64]) {
    for (o, elem) in out.iter_mut().zip(basis) {
        *o = elem.iter().map(|&(a, b, c)| (c * g[(b, a)]).re).sum();
    }
}

/// `Σ_i y_i B_i`.
fn from_coords(basis: &[BasisElement], r: usize, y: &[f64]) -> CMat {
    let mut m = CMat::zeros(r, r);
    for (elem, &yi) in basis.iter().zip(y) {
        for &(a, b, c) in elem {
            m[(a, b)] += c * yi;
        }
    }
    m
}

fn inner(a: &CMat, b: &CMat) -> f64 {
    // Re Tr(A B) for Hermitian B
    a.iter().zip(b.iter()).map(|(x, y)| (x * y.conj()).re).sum()
}

fn sym(m: &CMat) -> CMat {
    hermitian_part(m)
}

fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0f64, |acc, z| acc.max(z.norm()))
}

/// Largest `α` keeping `P + α dP ⪰ 0` (infinite if `dP ⪰ 0`).
fn max_step_psd(p: &CMat, dp: &CMat) -> f64 {
    if p.nrows() == 0 {
        return f64::INFINITY;
    }
    let Some(chol) = p.clone().cholesky() else {
        return 0.0;
    };
    let l = chol.l();
    let Some(w1) = l.solve_lower_triangular(dp) else {
        return 0.0;
    };
    let Some(w) = l.solve_lower_triangular(&w1.adjoint()) else {
        return 0.0;
    };
    let lmin = min_eigenvalue(&HermitianMatrix::from_hermitian_part(&w));
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

fn max_step_lp(p: &[f64], dp: &[f64]) -> f64 {
    p.iter()
        .zip(dp)
        .filter(|(_, &d)| d < 0.0)
        .map(|(&v, &d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

fn inverse_pd(m: &CMat) -> Option<CMat> {
    if m.nrows() == 0 {
        return Some(CMat::zeros(0, 0));
    }
    m.clone().cholesky().map(|c| sym(&c.inverse()))
}

/// Primal and dual iterate. Primal blocks `(x, s_k, sl)`, dual slacks `(z, t_k, zl)`.
#[derive(Clone)]
struct Point {
    x: CMat,
    s: Vec<CMat>,
    sl: Vec<f64>,
    y: Vec<f64>,
    z: CMat,
    t: Vec<CMat>,
    zl: Vec<f64>,
}

struct Direction {
    dx: CMat,
    ds: Vec<CMat>,
    dsl: Vec<f64>,
    dy: Vec<f64>,
    dz: CMat,
    dt: Vec<CMat>,
    dzl: Vec<f64>,
}

/// Dual-side residual blocks `C − A*(y) − Z`.
struct DualResidual {
    x: CMat,
    s: Vec<CMat>,
    l: Vec<f64>,
}

struct Ipm<'a> {
    opts: &'a SolverOptions,
    problem: &'a SdpProblem,
    n: usize,
    us: Vec<CMat>,
    ranks: Vec<usize>,
    bases: Vec<Vec<BasisElement>>,
    offsets: Vec<usize>,
    diag_offset: usize,
    m: usize,
    c: CMat,
    b: Vec<f64>,
    cap: f64,
    obj_scale: f64,
    rhs_scale: f64,
    /// Barrier normalization: sum of block orders.
    nu: f64,
}

impl<'a> Ipm<'a> {
    fn new(problem: &'a SdpProblem, opts: &'a SolverOptions) -> Self {
        let n = problem.dim;
        let rhs_scale = problem.constraint_scale();
        let obj_scale = max_abs(problem.objective.as_matrix()).max(f64::MIN_POSITIVE);
        let mut us = Vec::new();
        let mut ranks = Vec::new();
        let mut bases = Vec::new();
        let mut offsets = Vec::new();
        let mut b = Vec::new();
        let mut off = 0;
        for lmi in &problem.lmi_constraints {
            let r = lmi.u.ncols();
            let basis = hermitian_basis(r);
            let mut coords = vec![0.0; r * r];
            basis_coords(
                &basis,
                &(lmi.d.as_matrix() / Complex64::from(rhs_scale)),
                &mut coords,
            );
            b.extend(coords);
            us.push(lmi.u.clone());
            ranks.push(r);
            bases.push(basis);
            offsets.push(off);
            off += r * r;
        }
        let cap = problem.diag_cap / rhs_scale;
        b.extend(std::iter::repeat_n(cap, n));
        let nu = (2 * n + ranks.iter().sum::<usize>()) as f64;
        Self {
            opts,
            problem,
            n,
            c: problem.objective.as_matrix() / Complex64::from(obj_scale),
            us,
            ranks,
            bases,
            offsets,
            diag_offset: off,
            m: off + n,
            b,
            cap,
            obj_scale,
            rhs_scale,
            nu,
        }
    }

    fn k(&self) -> usize {
        self.us.len()
    }

    /// `A(X, S, s)`.
    fn apply_a(&self, x: &CMat, s: &[CMat], sl: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for k in 0..self.k() {
            let g = self.us[k].adjoint() * x * &self.us[k] - &s[k];
            let o = self.offsets[k];
            basis_coords(
                &self.bases[k],
                &g,
                &mut out[o..o + self.ranks[k] * self.ranks[k]],
            );
        }
        for mm in 0..self.n {
            out[self.diag_offset + mm] = x[(mm, mm)].re + sl[mm];
        }
        out
    }

    /// `A*(y)` split into the `X`, `S_k` and slack blocks.
    fn apply_at(&self, y: &[f64]) -> (CMat, Vec<CMat>, Vec<f64>) {
        let mut ax = CMat::zeros(self.n, self.n);
        let mut as_ = Vec::with_capacity(self.k());
        for k in 0..self.k() {
            let r = self.ranks[k];
            let o = self.offsets[k];
            let yk = from_coords(&self.bases[k], r, &y[o..o + r * r]);
            ax += &self.us[k] * &yk * self.us[k].adjoint();
            as_.push(-yk);
        }
        let w = y[self.diag_offset..].to_vec();
        for (mm, &wm) in w.iter().enumerate() {
            ax[(mm, mm)] += Complex64::from(wm);
        }
        (ax, as_, w)
    }

    fn dual_residual(&self, p: &Point) -> DualResidual {
        let (ax, as_, al) = self.apply_at(&p.y);
        DualResidual {
            x: &self.c - ax - &p.z,
            s: as_.iter().zip(&p.t).map(|(a, t)| -a - t).collect(),
            l: al.iter().zip(&p.zl).map(|(a, z)| -a - z).collect(),
        }
    }

    fn mu(&self, p: &Point) -> f64 {
        let mut acc = inner(&p.x, &p.z);
        for (s, t) in p.s.iter().zip(&p.t) {
            acc += inner(s, t);
        }
        acc += p.sl.iter().zip(&p.zl).map(|(a, b)| a * b).sum::<f64>();
        acc / self.nu
    }

    fn initial_point(&self) -> Point {
        let d_max = self
            .problem
            .lmi_constraints
            .iter()
            .map(|c| max_eigenvalue(&c.d) / self.rhs_scale)
            .fold(0.0f64, f64::max);
        let xi = (1.0 + 2.0 * d_max)
            .min(0.5 * self.cap)
            .max(1e-3 * self.cap.min(1.0));
        let x = CMat::identity(self.n, self.n) * Complex64::from(xi);
        let s = self
            .problem
            .lmi_constraints
            .iter()
            .map(|c| {
                let r = c.u.ncols();
                let cand = CMat::identity(r, r) * Complex64::from(xi)
                    - c.d.as_matrix() / Complex64::from(self.rhs_scale);
                let floor = 0.1 * xi;
                if r == 0 || min_eigenvalue(&HermitianMatrix::from_hermitian_part(&cand)) >= floor {
                    cand
                } else {
                    CMat::identity(r, r) * Complex64::from(xi)
                }
            })
            .collect();
        let sl = vec![(self.cap - xi).max(xi); self.n];
        let zeta = 1.0 + max_abs(&self.c);
        Point {
            x,
            s,
            sl,
            y: vec![0.0; self.m],
            z: CMat::identity(self.n, self.n) * Complex64::from(zeta),
            t: self
                .ranks
                .iter()
                .map(|&r| CMat::identity(r, r) * Complex64::from(zeta))
                .collect(),
            zl: vec![zeta; self.n],
        }
    }

    /// Schur complement `M_ij = Σ_blocks Re Tr(A_i P A_j Q⁻¹)`.
    fn schur(&self, p: &Point, zinv: &CMat, tinv: &[CMat]) -> DMatrix<f64> {
        let mut mat = DMatrix::<f64>::zeros(self.m, self.m);
        let ux: Vec<CMat> = self.us.iter().map(|u| u.adjoint() * &p.x).collect();
        let zu: Vec<CMat> = self.us.iter().map(|u| zinv * u).collect();
        for k in 0..self.k() {
            for l in k..self.k() {
                let pkl = &ux[k] * &self.us[l];
                let qlk = self.us[l].adjoint() * &zu[k];
                let (ok, ol) = (self.offsets[k], self.offsets[l]);
                for (i, bi) in self.bases[k].iter().enumerate() {
                    let j0 = if k == l { i } else { 0 };
                    for (j, bj) in self.bases[l].iter().enumerate().skip(j0) {
                        let mut v = 0.0;
                        for &(a, bb, c) in bi {
                            for &(a2, b2, c2) in bj {
                                v += (c * c2 * pkl[(bb, a2)] * qlk[(b2, a)]).re;
                                if k == l {
                                    v += (c * c2 * p.s[k][(bb, a2)] * tinv[k][(b2, a)]).re;
                                }
                            }
                        }
                        mat[(ok + i, ol + j)] = v;
                        mat[(ol + j, ok + i)] = v;
                    }
                }
            }
            let ok = self.offsets[k];
            for col in 0..self.n {
                for (i, bi) in self.bases[k].iter().enumerate() {
                    let v: f64 = bi
                        .iter()
                        .map(|&(a, bb, c)| (c * ux[k][(bb, col)] * zu[k][(col, a)]).re)
                        .sum();
                    mat[(ok + i, self.diag_offset + col)] = v;
                    mat[(self.diag_offset + col, ok + i)] = v;
                }
            }
        }
        for i in 0..self.n {
            for j in 0..self.n {
                let mut v = (p.x[(i, j)] * zinv[(j, i)]).re;
                if i == j {
                    v += p.sl[i] / p.zl[i];
                }
                mat[(self.diag_offset + i, self.diag_offset + j)] = v;
            }
        }
        mat
    }

    /// Solves for the HKM direction given the factored Schur complement.
    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        p: &Point,
        chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
        zinv: &CMat,
        tinv: &[CMat],
        rp: &[f64],
        rd: &DualResidual,
        target: f64,
        corr: Option<&Direction>,
    ) -> Result<Direction> {
        // G = σμ Q⁻¹ − P − sym(P R_d Q⁻¹) − sym(dP_a dQ_a Q⁻¹)
        let mut gx = zinv * Complex64::from(target) - &p.x - sym(&(&p.x * &rd.x * zinv));
        if let Some(a) = corr {
            gx -= sym(&(&a.dx * &a.dz * zinv));
        }
        let mut gs = Vec::with_capacity(self.k());
        for k in 0..self.k() {
            let mut g = &tinv[k] * Complex64::from(target)
                - &p.s[k]
                - sym(&(&p.s[k] * &rd.s[k] * &tinv[k]));
            if let Some(a) = corr {
                g -= sym(&(&a.ds[k] * &a.dt[k] * &tinv[k]));
            }
            gs.push(g);
        }
        let gl: Vec<f64> = (0..self.n)
            .map(|i| {
                let mut g = target / p.zl[i] - p.sl[i] - p.sl[i] * rd.l[i] / p.zl[i];
                if let Some(a) = corr {
                    g -= a.dsl[i] * a.dzl[i] / p.zl[i];
                }
                g
            })
            .collect();
        let ag = self.apply_a(&gx, &gs, &gl);
        let rhs = DVector::from_iterator(self.m, rp.iter().zip(&ag).map(|(r, g)| r - g));
        let dy = chol.solve(&rhs);
        if dy.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalBreakdown("non-finite Newton step".into()));
        }
        let dy: Vec<f64> = dy.iter().copied().collect();
        let (ax, as_, al) = self.apply_at(&dy);
        let dz = &rd.x - &ax;
        let dx = &gx + sym(&(&p.x * &ax * zinv));
        let mut ds = Vec::with_capacity(self.k());
        let mut dt = Vec::with_capacity(self.k());
        for k in 0..self.k() {
            dt.push(&rd.s[k] - &as_[k]);
            ds.push(&gs[k] + sym(&(&p.s[k] * &as_[k] * &tinv[k])));
        }
        let dzl: Vec<f64> = (0..self.n).map(|i| rd.l[i] - al[i]).collect();
        let dsl: Vec<f64> = (0..self.n)
            .map(|i| gl[i] + p.sl[i] * al[i] / p.zl[i])
            .collect();
        Ok(Direction {
            dx,
            ds,
            dsl,
            dy,
            dz,
            dt,
            dzl,
        })
    }

    fn step_lengths(&self, p: &Point, d: &Direction) -> (f64, f64) {
        let mut ap = max_step_psd(&p.x, &d.dx).min(max_step_lp(&p.sl, &d.dsl));
        let mut ad = max_step_psd(&p.z, &d.dz).min(max_step_lp(&p.zl, &d.dzl));
        for k in 0..self.k() {
            ap = ap.min(max_step_psd(&p.s[k], &d.ds[k]));
            ad = ad.min(max_step_psd(&p.t[k], &d.dt[k]));
        }
        (ap, ad)
    }

    fn take_step(p: &Point, d: &Direction, ap: f64, ad: f64) -> Point {
        let cp = Complex64::from(ap);
        let cd = Complex64::from(ad);
        Point {
            x: sym(&(&p.x + &d.dx * cp)),
            s: p.s
                .iter()
                .zip(&d.ds)
                .map(|(s, ds)| sym(&(s + ds * cp)))
                .collect(),
            sl: p.sl.iter().zip(&d.dsl).map(|(s, ds)| s + ap * ds).collect(),
            y: p.y.iter().zip(&d.dy).map(|(y, dy)| y + ad * dy).collect(),
            z: sym(&(&p.z + &d.dz * cd)),
            t: p.t
                .iter()
                .zip(&d.dt)
                .map(|(t, dt)| sym(&(t + dt * cd)))
                .collect(),
            zl: p.zl.iter().zip(&d.dzl).map(|(z, dz)| z + ad * dz).collect(),
        }
    }

    fn pobj(&self, p: &Point) -> f64 {
        inner(&self.c, &p.x)
    }

    fn dobj(&self, p: &Point) -> f64 {
        self.b.iter().zip(&p.y).map(|(b, y)| b * y).sum()
    }

    fn primal_infeasibility(&self, p: &Point) -> f64 {
        let ax = self.apply_a(&p.x, &p.s, &p.sl);
        let raw = ax
            .iter()
            .zip(&self.b)
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        // diagonal rows are measured relative to the cap
        let mut worst = 0.0f64;
        for (i, (a, b)) in ax.iter().zip(&self.b).enumerate() {
            let scale = if i >= self.diag_offset {
                1.0f64.max(self.cap)
            } else {
                1.0
            };
            worst = worst.max((a - b).abs() / scale);
        }
        worst.min(raw)
    }

    fn dual_infeasibility(&self, rd: &DualResidual) -> f64 {
        let mut worst = max_abs(&rd.x);
        for s in &rd.s {
            worst = worst.max(max_abs(s));
        }
        worst.max(rd.l.iter().fold(0.0f64, |a, v| a.max(v.abs())))
    }

    /// Farkas ray check: `A*(ŷ) ⪯ 0` with `bᵀŷ = 1`.
    fn infeasibility_certificate(&self, p: &Point) -> Option<String> {
        let dobj = self.dobj(p);
        if !(dobj > 0.0) {
            return None;
        }
        let yhat: Vec<f64> = p.y.iter().map(|v| v / dobj).collect();
        let (ax, as_, al) = self.apply_at(&yhat);
        let mut viol = max_eigenvalue(&HermitianMatrix::from_hermitian_part(&ax)).max(0.0);
        for a in &as_ {
            if a.nrows() > 0 {
                viol = viol.max(max_eigenvalue(&HermitianMatrix::from_hermitian_part(a)).max(0.0));
            }
        }
        viol = viol.max(al.iter().fold(0.0f64, |acc, v| acc.max(*v)));
        if viol < 1e-8 {
            Some(format!(
                "dual ray with b'y = 1 and A*(y) ⪯ {viol:.1e}: LMI targets cannot be met under the diagonal cap"
            ))
        } else {
            None
        }
    }

    fn finish(
        &self,
        p: &Point,
        status: SolveStatus,
        iterations: usize,
        certificate: Option<String>,
    ) -> SdpSolution {
        let x = HermitianMatrix::from_hermitian_part(&(&p.x * Complex64::from(self.rhs_scale)));
        let max_constraint_violation = feasibility_check(&x, self.problem, 0.0)
            .map(|r| r.max_violation)
            .unwrap_or(f64::INFINITY);
        SdpSolution {
            objective_value: inner(self.problem.objective.as_matrix(), x.as_matrix()),
            dual_objective: self.dobj(p) * self.obj_scale * self.rhs_scale,
            x,
            status,
            iterations,
            max_constraint_violation,
            certificate,
        }
    }

    fn run(self) -> Result<SdpSolution> {
        let feas_tol = 0.1 * self.opts.slack_tol;
        let mut p = self.initial_point();
        let mut best_pinf = f64::INFINITY;
        let mut best_pinf_iter = 0usize;
        let mut best: Option<(f64, Point)> = None;

        for iter in 0..self.opts.max_iter {
            let rp: Vec<f64> = {
                let ax = self.apply_a(&p.x, &p.s, &p.sl);
                self.b.iter().zip(&ax).map(|(b, a)| b - a).collect()
            };
            let rd = self.dual_residual(&p);
            let pinf = self.primal_infeasibility(&p);
            let dinf = self.dual_infeasibility(&rd) / (1.0 + max_abs(&self.c));
            let (po, dob) = (self.pobj(&p), self.dobj(&p));
            let gap = (po - dob).abs() / (1.0 + po.abs() + dob.abs());
            let mu = self.mu(&p);

            if pinf <= feas_tol {
                let score = gap.max(dinf);
                if best.as_ref().is_none_or(|(s, _)| score < *s) {
                    best = Some((score, p.clone()));
                }
            }
            if gap <= self.opts.gap_tol && pinf <= feas_tol && dinf <= feas_tol {
                return Ok(self.finish(&p, SolveStatus::Optimal, iter, None));
            }
            if let Some(cert) = self.infeasibility_certificate(&p) {
                if pinf > feas_tol && dob > 1e3 * (1.0 + po.abs()) {
                    return Ok(self.finish(&p, SolveStatus::Infeasible, iter, Some(cert)));
                }
            }
            if pinf < 0.5 * best_pinf {
                best_pinf = pinf;
                best_pinf_iter = iter;
            } else if pinf > feas_tol && iter - best_pinf_iter >= self.opts.stall_iter {
                return Ok(self.finish(
                    &p,
                    SolveStatus::Infeasible,
                    iter,
                    Some(format!(
                        "primal infeasibility stalled at {pinf:.3e} for {} iterations",
                        self.opts.stall_iter
                    )),
                ));
            }

            let zinv = inverse_pd(&p.z)
                .ok_or_else(|| Error::NumericalBreakdown("dual slack lost definiteness".into()))?;
            let mut tinv = Vec::with_capacity(self.k());
            for t in &p.t {
                tinv.push(inverse_pd(t).ok_or_else(|| {
                    Error::NumericalBreakdown("LMI dual block lost definiteness".into())
                })?);
            }
            let schur = self.schur(&p, &zinv, &tinv);
            let chol = factor_schur(schur)?;

            let pred = self.direction(&p, &chol, &zinv, &tinv, &rp, &rd, 0.0, None)?;
            let (ap, ad) = self.step_lengths(&p, &pred);
            let (ap, ad) = (ap.min(1.0), ad.min(1.0));
            let trial = Self::take_step(&p, &pred, ap, ad);
            let mu_aff = self.mu(&trial).max(0.0);
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

            let corr =
                self.direction(&p, &chol, &zinv, &tinv, &rp, &rd, sigma * mu, Some(&pred))?;
            let (ap, ad) = self.step_lengths(&p, &corr);
            let gamma = 0.95;
            let ap = (gamma * ap).min(1.0);
            let ad = (gamma * ad).min(1.0);
            if ap < 1e-12 && ad < 1e-12 {
                break;
            }
            p = Self::take_step(&p, &corr, ap, ad);
        }
        let iters = self.opts.max_iter;
        Ok(match best {
            Some((_, bp)) => self.finish(&bp, SolveStatus::MaxIterations, iters, None),
            None => self.finish(&p, SolveStatus::MaxIterations, iters, None),
        })
    }
}

fn factor_schur(mut schur: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let diag_max = schur.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for attempt in 0..4 {
        if let Some(c) = schur.clone().cholesky() {
            return Ok(c);
        }
        let reg = diag_max * 1e-14 * 100f64.powi(attempt);
        for i in 0..schur.nrows() {
            schur[(i, i)] += reg;
        }
    }
    Err(Error::NumericalBreakdown(
        "Schur complement is not positive definite".into(),
    ))
}
