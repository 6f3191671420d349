//! Projected gradient descent of the discrete Faddeev–Skyrme energy on nodal
//! maps, and the perturbation experiments around the Hopf map.
//!
//! The discrete energy is `Σₖ wₖ (Σᵢ |Dᵢu|² + ρ⁻² Σᵢ |Dⱼu × Dₗu|²)` with the
//! collocation frame derivatives `Dᵢ`; its gradient is assembled with the
//! transposed operators.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collocation::HarmonicFilter;
use crate::energetics::q_from_coeffs;
use crate::error::{Error, Result};
use crate::forms::{eval_monomials, exterior_derivative_0, monomials, restrict_two_form, OneFormField};
use crate::geometry::{fmt_f64, GridSpec};
use crate::maps::{hopf_map, pullback_area, AnalyticMap, MapField, V3};
use crate::spectral::{decompose, eigen_potential, project_e0, Sign, SpectralBank};

pub type Tangent = Vec<V3>;

fn cross(a: &V3, b: &V3) -> V3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: &V3, b: &V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn components(u: &[V3]) -> [Vec<f64>; 3] {
    std::array::from_fn(|c| u.iter().map(|v| v[c]).collect())
}

/// Frame derivatives `a[i][node]` of a nodal map.
fn derivatives(u: &[V3], g: &GridSpec) -> [Vec<V3>; 3] {
    let coll = g.collocation();
    let comps = components(u);
    let d: Vec<[Vec<f64>; 3]> = comps.par_iter().map(|f| coll.frame_derivatives(f)).collect();
    std::array::from_fn(|i| (0..u.len()).map(|k| [d[0][i][k], d[1][i][k], d[2][i][k]]).collect())
}

/// Discrete `ℱ𝒮_ρ` of nodal values.
pub fn discrete_energy(u: &[V3], rho: f64, g: &GridSpec) -> Result<f64> {
    if u.len() != g.len() {
        return Err(Error::GridMismatch);
    }
    let a = derivatives(u, g);
    let r2 = 1.0 / (rho * rho);
    Ok(g.weights()
        .par_iter()
        .enumerate()
        .map(|(k, w)| {
            let mut e = 0.0;
            for i in 0..3 {
                e += dot(&a[i][k], &a[i][k]);
                let c = cross(&a[(i + 1) % 3][k], &a[(i + 2) % 3][k]);
                e += r2 * dot(&c, &c);
            }
            w * e
        })
        .collect::<Vec<_>>()
        .iter()
        .sum())
}

/// Euclidean gradient of [`discrete_energy`] in the nodal values, before projection.
fn raw_gradient(u: &[V3], rho: f64, g: &GridSpec) -> Tangent {
    let a = derivatives(u, g);
    let r2 = 1.0 / (rho * rho);
    let w = g.weights();
    // G[i][node] = w ∂(density)/∂aᵢ
    let mut gi: [Vec<V3>; 3] = std::array::from_fn(|_| vec![[0.0; 3]; u.len()]);
    for k in 0..u.len() {
        for i in 0..3 {
            for c in 0..3 {
                gi[i][k][c] += 2.0 * w[k] * a[i][k][c];
            }
        }
        for i in 0..3 {
            let (j, l) = ((i + 1) % 3, (i + 2) % 3);
            let c = cross(&a[j][k], &a[l][k]);
            let dj = cross(&a[l][k], &c);
            let dl = cross(&c, &a[j][k]);
            for m in 0..3 {
                gi[j][k][m] += 2.0 * r2 * w[k] * dj[m];
                gi[l][k][m] += 2.0 * r2 * w[k] * dl[m];
            }
        }
    }
    let coll = g.collocation();
    let parts: Vec<Vec<f64>> = (0..9)
        .into_par_iter()
        .map(|q| {
            let (i, c) = (q / 3, q % 3);
            let f: Vec<f64> = gi[i].iter().map(|v| v[c]).collect();
            coll.tau_transpose(i, &f)
        })
        .collect();
    (0..u.len()).map(|k| std::array::from_fn(|c| parts[c][k] + parts[3 + c][k] + parts[6 + c][k])).collect()
}

fn project(u: &[V3], v: &mut Tangent) {
    for (x, y) in u.iter().zip(v.iter_mut()) {
        let p = dot(x, y);
        for c in 0..3 {
            y[c] -= p * x[c];
        }
    }
}

/// Gradient of the discrete energy in the nodal values, projected to each
/// tangent plane.
pub fn fs_gradient(u: &MapField, rho: f64, g: &GridSpec) -> Result<Tangent> {
    if u.len() != g.len() {
        return Err(Error::GridMismatch);
    }
    if !(rho > 0.0) {
        return Err(Error::NonPositiveCoupling(rho));
    }
    let mut grad = raw_gradient(&u.values, rho, g);
    project(&u.values, &mut grad);
    Ok(grad)
}

/// `(Σₖ |gₖ|²/wₖ)^{1/2}`, the L² norm of the gradient density.
pub fn gradient_norm(grad: &[V3], g: &GridSpec) -> f64 {
    grad.iter().zip(g.weights()).map(|(v, w)| dot(v, v) / w).sum::<f64>().sqrt()
}

fn renormalize(v: &mut [V3]) {
    for x in v.iter_mut() {
        let n = dot(x, x).sqrt();
        x.iter_mut().for_each(|c| *c /= n);
    }
}

fn retract(u: &[V3], dir: &[V3], t: f64) -> Vec<V3> {
    let mut out: Vec<V3> = u.iter().zip(dir).map(|(a, b)| std::array::from_fn(|c| a[c] + t * b[c])).collect();
    renormalize(&mut out);
    out
}

/// Band-limited retraction `Π(F(u + t·dir))`.
fn filtered_retract(u: &[V3], dir: &[V3], t: f64, filter: &HarmonicFilter) -> Vec<V3> {
    let out: Vec<V3> = u.iter().zip(dir).map(|(a, b)| std::array::from_fn(|c| a[c] + t * b[c])).collect();
    let mut comps = components(&out);
    comps.par_iter_mut().for_each(|f| filter.apply(f));
    let mut out: Vec<V3> = (0..u.len()).map(|k| [comps[0][k], comps[1][k], comps[2][k]]).collect();
    renormalize(&mut out);
    out
}

/// Finite-difference scheme for [`gradient_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Difference {
    /// `(ℱ𝒮(Π(u + εv)) − ℱ𝒮(u))/ε`.
    Forward,
    /// `(ℱ𝒮(Π(u + εv)) − ℱ𝒮(Π(u − εv)))/2ε`.
    Central,
}

/// Largest normwise relative error `|fd − ⟨∇ℱ𝒮, v⟩| / (‖∇ℱ𝒮‖_{W⁻¹}‖v‖_W)`
/// over random smooth tangent directions `v`.
pub fn gradient_check(
    u: &MapField,
    rho: f64,
    g: &GridSpec,
    n_dirs: usize,
    eps: f64,
    scheme: Difference,
    seed: u64,
) -> Result<f64> {
    let grad = fs_gradient(u, rho, g)?;
    let gn = gradient_norm(&grad, g);
    let e0 = discrete_energy(&u.values, rho, g)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n_dirs {
        let v = smooth_tangent(&u.values, g, 3, &mut rng);
        let vn = v.iter().zip(g.weights()).map(|(x, w)| w * dot(x, x)).sum::<f64>().sqrt();
        let ep = discrete_energy(&retract(&u.values, &v, eps), rho, g)?;
        let fd = match scheme {
            Difference::Forward => (ep - e0) / eps,
            Difference::Central => (ep - discrete_energy(&retract(&u.values, &v, -eps), rho, g)?) / (2.0 * eps),
        };
        let an: f64 = grad.iter().zip(&v).map(|(a, b)| dot(a, b)).sum();
        worst = worst.max((fd - an).abs() / (gn * vn).max(f64::MIN_POSITIVE));
    }
    Ok(worst)
}

/// Preconditioner applied to the gradient before the line search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preconditioner {
    /// `W⁻¹g`, the L² gradient.
    L2,
    /// `(W + κ Σᵢ DᵢᵀWDᵢ)⁻¹g` by conjugate gradients.
    Sobolev,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    pub rho: f64,
    pub step: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub q_band: [f64; 2],
    /// Truncation for the monitored `Q`.
    pub q_truncation: usize,
    pub preconditioner: Preconditioner,
    /// Finite-difference gradient check every this many iterations; 0 disables.
    pub check_every: usize,
    pub check_seed: u64,
    /// Degree of the harmonic band limit; `None` takes the largest the grid resolves.
    pub band_limit: Option<usize>,
    /// Polak–Ribière+ conjugate directions instead of plain preconditioned descent.
    pub nonlinear_cg: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            rho: 0.5,
            step: 1.0,
            max_iter: 2000,
            grad_tol: 1e-3,
            q_band: [0.9, 1.1],
            q_truncation: 2,
            preconditioner: Preconditioner::Sobolev,
            check_every: 100,
            check_seed: 0,
            band_limit: None,
            nonlinear_cg: true,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::NonPositiveCoupling(self.rho));
        }
        if !(self.step > 0.0) {
            return Err(Error::InvalidParameter("step must be positive".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::InvalidParameter("grad_tol must be positive".into()));
        }
        if !(self.q_band[0] <= 1.0 && 1.0 <= self.q_band[1]) {
            return Err(Error::InvalidParameter("q_band must contain 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowStatus {
    Converged,
    MaxIter,
    QEscaped,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FlowRecord {
    pub iteration: usize,
    pub energy: f64,
    pub grad_norm: f64,
    pub q_estimate: f64,
    pub dist_to_e01: f64,
    pub step: f64,
    /// Finite-difference gradient check, when run at this iteration.
    pub grad_check: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FlowTrace {
    pub records: Vec<FlowRecord>,
    pub terminal: MapField,
    pub status: FlowStatus,
}

impl FlowTrace {
    pub fn final_record(&self) -> &FlowRecord {
        self.records.last().expect("trace has the initial record")
    }

    /// First iteration whose energy is below `level`.
    pub fn first_below(&self, level: f64) -> Option<usize> {
        self.records.iter().find(|r| r.energy < level).map(|r| r.iteration)
    }

    pub fn min_energy(&self) -> f64 {
        self.records.iter().map(|r| r.energy).fold(f64::INFINITY, f64::min)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "energy", "grad_norm", "q_estimate", "dist_to_E01"])?;
        for r in &self.records {
            w.write_record([
                r.iteration.to_string(),
                fmt_f64(r.energy),
                fmt_f64(r.grad_norm),
                fmt_f64(r.q_estimate),
                fmt_f64(r.dist_to_e01),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `Q` of `u*ω` truncated at `k`, without the closedness gate.
pub fn monitored_q(u: &MapField, k: usize, bank: &SpectralBank, g: &GridSpec) -> Result<f64> {
    let c = decompose(&pullback_area(u, g)?, k, bank, g)?;
    Ok(*q_from_coeffs(&c).last().expect("k ≥ 0"))
}

/// `L²` distance of `u*ω` to the nearest element of `E⁺₀,₁`.
pub fn dist_to_e01(u: &MapField, g: &GridSpec) -> Result<f64> {
    Ok(project_e0(&pullback_area(u, g)?, g)?.distance.unwrap_or(f64::INFINITY))
}

struct Sobolev<'a> {
    g: &'a GridSpec,
    filter: &'a HarmonicFilter,
    kappa: f64,
}

impl Sobolev<'_> {
    fn apply(&self, f: &[f64]) -> Vec<f64> {
        let coll = self.g.collocation();
        let w = self.g.weights();
        let d = coll.frame_derivatives(f);
        let mut out: Vec<f64> = f.iter().zip(w).map(|(a, b)| a * b).collect();
        for (i, di) in d.iter().enumerate() {
            let wd: Vec<f64> = di.iter().zip(w).map(|(a, b)| a * b).collect();
            let t = coll.tau_transpose(i, &wd);
            out.iter_mut().zip(&t).for_each(|(o, v)| *o += self.kappa * v);
        }
        out
    }

    fn precondition(&self, r: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = r.iter().zip(self.g.weights()).map(|(a, b)| a / b).collect();
        self.filter.apply(&mut z);
        z
    }

    /// Conjugate gradients from zero with the band-limited mass preconditioner
    /// `FW⁻¹`; every iterate is a descent direction.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        const MAX_IT: usize = 20;
        const REL_TOL: f64 = 1e-2;
        let mut x = vec![0.0; b.len()];
        let mut r = b.to_vec();
        let mut z = self.precondition(&r);
        let mut p = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let rz0 = rz;
        if !(rz0 > 0.0) {
            return x;
        }
        for _ in 0..MAX_IT {
            let ap = self.apply(&p);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if !(pap > 0.0) {
                break;
            }
            let alpha = rz / pap;
            x.iter_mut().zip(&p).for_each(|(a, b)| *a += alpha * b);
            r.iter_mut().zip(&ap).for_each(|(a, b)| *a -= alpha * b);
            z = self.precondition(&r);
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            if rz_new <= REL_TOL * REL_TOL * rz0 {
                break;
            }
            let beta = rz_new / rz;
            rz = rz_new;
            p = z.iter().zip(&p).map(|(a, b)| a + beta * b).collect();
        }
        x
    }
}

fn search_direction(u: &[V3], grad: &[V3], cfg: &FlowConfig, filter: &HarmonicFilter, g: &GridSpec) -> Tangent {
    let comps = components(grad);
    let sol: Vec<Vec<f64>> = match cfg.preconditioner {
        Preconditioner::L2 => {
            let pre = Sobolev { g, filter, kappa: 0.0 };
            comps.par_iter().map(|b| pre.precondition(b)).collect()
        }
        Preconditioner::Sobolev => {
            let pre = Sobolev { g, filter, kappa: 1.0 + 4.0 / (cfg.rho * cfg.rho) };
            comps.par_iter().map(|b| pre.solve(b)).collect()
        }
    };
    let mut dir: Tangent = (0..u.len()).map(|k| [sol[0][k], sol[1][k], sol[2][k]]).collect();
    project(u, &mut dir);
    dir
}

/// `L²` norm of the band-limited gradient `Π_u FW⁻¹∇ℱ𝒮`, the quantity the
/// flow drives to zero.
fn filtered_gradient_norm(u: &[V3], grad: &[V3], filter: &HarmonicFilter, g: &GridSpec) -> f64 {
    let cfg = FlowConfig { preconditioner: Preconditioner::L2, ..FlowConfig::default() };
    let d = search_direction(u, grad, &cfg, filter, g);
    d.iter().zip(g.weights()).map(|(v, w)| w * dot(v, v)).sum::<f64>().sqrt()
}

/// Armijo constant of the backtracking line search.
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// Projected gradient descent from `u0`.
pub fn run_flow(u0: &MapField, cfg: &FlowConfig, bank: &SpectralBank, g: &GridSpec) -> Result<FlowTrace> {
    cfg.validate()?;
    if u0.len() != g.len() {
        return Err(Error::GridMismatch);
    }
    let filter = HarmonicFilter::new(
        g.t_nodes(),
        g.t_weights(),
        g.n_ang(),
        cfg.band_limit.unwrap_or(usize::MAX),
    );
    let mut u = u0.nodal();
    renormalize(&mut u.values);
    let mut energy = discrete_energy(&u.values, cfg.rho, g)?;
    if !energy.is_finite() {
        return Err(Error::NonFiniteEnergy { iteration: 0 });
    }
    let mut step = cfg.step;
    let mut records = Vec::new();
    let mut iteration = 0;
    // previous gradient, preconditioned gradient and search direction
    let mut prev: Option<(Tangent, Tangent, Tangent)> = None;
    let status = loop {
        let grad = fs_gradient(&u, cfg.rho, g)?;
        let gn = filtered_gradient_norm(&u.values, &grad, &filter, g);
        let q = monitored_q(&u, cfg.q_truncation, bank, g)?;
        let grad_check = if cfg.check_every > 0 && iteration % cfg.check_every == 0 && gn > cfg.grad_tol {
            Some(gradient_check(&u, cfg.rho, g, 1, 1e-4, Difference::Central, cfg.check_seed.wrapping_add(iteration as u64))?)
        } else {
            None
        };
        records.push(FlowRecord {
            iteration,
            energy,
            grad_norm: gn,
            q_estimate: q,
            dist_to_e01: dist_to_e01(&u, g)?,
            step: if iteration == 0 { 0.0 } else { step },
            grad_check,
        });
        if !(cfg.q_band[0] <= q && q <= cfg.q_band[1]) {
            break FlowStatus::QEscaped;
        }
        if gn <= cfg.grad_tol {
            break FlowStatus::Converged;
        }
        if iteration >= cfg.max_iter {
            break FlowStatus::MaxIter;
        }
        iteration += 1;
        let pg = search_direction(&u.values, &grad, cfg, &filter, g);
        let mut dir = pg.clone();
        if let (true, Some((g0, mut pg0, mut d0))) = (cfg.nonlinear_cg, prev.take()) {
            project(&u.values, &mut pg0);
            project(&u.values, &mut d0);
            let num: f64 = grad.iter().zip(pg.iter().zip(&pg0)).map(|(a, (b, c))| dot(a, b) - dot(a, c)).sum();
            let den: f64 = g0.iter().zip(&pg0).map(|(a, b)| dot(a, b)).sum();
            let beta = if den > 0.0 { (num / den).max(0.0) } else { 0.0 };
            dir.iter_mut().zip(&d0).for_each(|(a, b)| (0..3).for_each(|c| a[c] += beta * b[c]));
            if grad.iter().zip(&dir).map(|(a, b)| dot(a, b)).sum::<f64>() <= 0.0 {
                dir = pg.clone();
            }
        }
        let slope: f64 = grad.iter().zip(&dir).map(|(a, b)| dot(a, b)).sum();
        let mut t = step;
        let mut accepted = None;
        for halving in 0..=MAX_HALVINGS {
            let cand = filtered_retract(&u.values, &dir, -t, &filter);
            let e = discrete_energy(&cand, cfg.rho, g)?;
            if !e.is_finite() {
                return Err(Error::NonFiniteEnergy { iteration });
            }
            if e <= energy - ARMIJO * t * slope && e <= energy {
                accepted = Some((cand, e, halving));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, e, halvings)) => {
                prev = Some((grad, pg, dir));
                u.values = cand;
                energy = e;
                step = if halvings == 0 { (2.0 * t).min(1e3) } else { t };
            }
            None => {
                // no decrease within floating-point resolution
                break FlowStatus::Converged;
            }
        }
    };
    Ok(FlowTrace { records, terminal: u, status })
}

/// Smooth random tangent field from ambient polynomials of degree `≤ deg`,
/// scaled to unit maximum norm.
pub fn smooth_tangent<R: Rng>(u: &[V3], g: &GridSpec, deg: usize, rng: &mut R) -> Tangent {
    let mons: Vec<Vec<[u8; 4]>> = (0..=deg).map(monomials).collect();
    let coeffs: Vec<Vec<[f64; 3]>> =
        mons.iter().map(|m| m.iter().map(|_| std::array::from_fn(|_| rng.sample(StandardNormal))).collect()).collect();
    let mut v: Tangent = g
        .ambient()
        .iter()
        .map(|x| {
            let mut out = [0.0; 3];
            for (k, cs) in coeffs.iter().enumerate() {
                for (m, c) in eval_monomials(k, x).iter().zip(cs) {
                    for j in 0..3 {
                        out[j] += m * c[j];
                    }
                }
            }
            out
        })
        .collect();
    project(u, &mut v);
    let m = v.iter().map(|x| dot(x, x).sqrt()).fold(0.0, f64::max);
    if m > 0.0 {
        v.iter_mut().for_each(|x| x.iter_mut().for_each(|c| *c /= m));
    }
    v
}

/// How the Hopf map is perturbed before a flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Perturbation {
    None,
    /// Smooth random tangent field of maximum norm `amplitude`.
    Random { amplitude: f64, seed: u64 },
    /// Tangent field whose linearized pullback change matches member
    /// `member` of `E_k^±`, scaled to maximum norm `amplitude`.
    Eigen { k: usize, plus: bool, member: usize, amplitude: f64 },
}

#[derive(Debug, Clone)]
pub struct PerturbedStart {
    pub map: MapField,
    /// `‖dγ − η‖/‖η‖` for the fitted tangent field, when eigen-aligned.
    pub alignment_error: Option<f64>,
}

/// Solves `τ₁f = −ψ₁` along the discrete fibres `(i₁ + j, i₂ + j)`, which
/// requires `ψ₁` to have zero fibre mean.
fn fibre_gauge(psi1: &[f64], g: &GridSpec) -> Vec<f64> {
    let n = g.n_ang();
    let mut f = vec![0.0; psi1.len()];
    let h = 2.0 * PI / n as f64;
    for it in 0..g.n_t() {
        for start in 0..n {
            // fibre through (start, 0)
            let idx: Vec<usize> = (0..n).map(|j| g.index(it, (start + j) % n, j)).collect();
            let vals: Vec<f64> = idx.iter().map(|&k| -psi1[k]).collect();
            for (j, &k) in idx.iter().enumerate() {
                let s = j as f64 * h;
                let mut acc = 0.0;
                for m in 1..(n / 2) {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (l, v) in vals.iter().enumerate() {
                        let a = m as f64 * l as f64 * h;
                        re += v * a.cos();
                        im -= v * a.sin();
                    }
                    re /= n as f64;
                    im /= n as f64;
                    // antiderivative of 2 Re(c e^{ims}) is 2 Re(−i c e^{ims})/m
                    let (sa, ca) = (m as f64 * s).sin_cos();
                    acc += 2.0 * (re * sa + im * ca) / m as f64;
                }
                f[k] = acc;
            }
        }
    }
    f
}

/// Start map for a flow around the Hopf map.
pub fn perturbed_start(p: &Perturbation, bank: &SpectralBank, g: &GridSpec) -> Result<PerturbedStart> {
    let h = MapField::from_analytic(AnalyticMap::hopf(), g);
    match *p {
        Perturbation::None => Ok(PerturbedStart { map: h.nodal(), alignment_error: None }),
        Perturbation::Random { amplitude, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = smooth_tangent(&h.values, g, 3, &mut rng);
            Ok(PerturbedStart { map: MapField { values: retract(&h.values, &v, amplitude), analytic: None }, alignment_error: None })
        }
        Perturbation::Eigen { k, plus, member, amplitude } => {
            if k > bank.k_max {
                return Err(Error::InvalidParameter(format!("eigenspace k = {k} above the built bank")));
            }
            let sign = if plus { Sign::Plus } else { Sign::Minus };
            let basis = bank.get(k, sign);
            let m = basis
                .members
                .get(member)
                .ok_or_else(|| Error::InvalidParameter(format!("E_{k}{sign} has {} members", basis.dim())))?;
            let eta = restrict_two_form(m, g);
            let (psi, _) = eigen_potential(&eta, g)?;
            let f = fibre_gauge(&psi.c[0], g);
            let df = exterior_derivative_0(&f, g)?;
            let gamma = psi.axpy(1.0, &df)?;
            let w = fit_tangent(&h, &gamma, g)?;
            // v = w × u so that u × v = w
            let mut v: Tangent = w.iter().zip(&h.values).map(|(a, b)| cross(a, b)).collect();
            let achieved = linearized_pullback(&h, &v, g)?;
            let err = crate::forms::l2_norm(&achieved.axpy(-1.0, &eta)?, g)? / crate::forms::l2_norm(&eta, g)?;
            let mx = v.iter().map(|x| dot(x, x).sqrt()).fold(0.0, f64::max);
            if !(mx > 0.0) {
                return Err(Error::Degenerate("fitted tangent field vanishes".into()));
            }
            v.iter_mut().for_each(|x| x.iter_mut().for_each(|c| *c /= mx));
            Ok(PerturbedStart {
                map: MapField { values: retract(&h.values, &v, amplitude), analytic: None },
                alignment_error: Some(err),
            })
        }
    }
}

/// Per node, the tangent `w` minimizing `Σᵢ (w·∂ᵢu − γᵢ)²`.
fn fit_tangent(u: &MapField, gamma: &OneFormField, g: &GridSpec) -> Result<Tangent> {
    let du = u.frame_derivatives(g)?;
    Ok((0..u.len())
        .map(|k| {
            let x = u.values[k];
            let seed = if x[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
            let mut ea = cross(&x, &seed);
            let n = dot(&ea, &ea).sqrt();
            ea.iter_mut().for_each(|c| *c /= n);
            let eb = cross(&x, &ea);
            // normal equations of the 3×2 system
            let rows: [[f64; 2]; 3] = std::array::from_fn(|i| [dot(&ea, &du[i][k]), dot(&eb, &du[i][k])]);
            let mut m = [[0.0; 2]; 2];
            let mut r = [0.0; 2];
            for i in 0..3 {
                for a in 0..2 {
                    r[a] += rows[i][a] * gamma.c[i][k];
                    for b in 0..2 {
                        m[a][b] += rows[i][a] * rows[i][b];
                    }
                }
            }
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            let p = (r[0] * m[1][1] - r[1] * m[0][1]) / det;
            let q = (m[0][0] * r[1] - m[1][0] * r[0]) / det;
            std::array::from_fn(|c| p * ea[c] + q * eb[c])
        })
        .collect())
}

/// `d(u*ι_vω)`, the first-order change of `u*ω` along `v`.
pub fn linearized_pullback(u: &MapField, v: &[V3], g: &GridSpec) -> Result<crate::forms::TwoFormField> {
    let du = u.frame_derivatives(g)?;
    let mut gamma = OneFormField::zeros(u.len());
    for k in 0..u.len() {
        let w = cross(&u.values[k], &v[k]);
        for i in 0..3 {
            gamma.c[i][k] = dot(&w, &du[i][k]);
        }
    }
    crate::forms::exterior_derivative_1(&gamma, g)
}

/// Discrete `ℱ𝒮_ρ` of the Hopf map on `g`.
pub fn hopf_reference_energy(rho: f64, g: &GridSpec) -> Result<f64> {
    let values: Vec<V3> = g.ambient().iter().map(hopf_map).collect();
    discrete_energy(&values, rho, g)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub rho: f64,
    pub reference: f64,
    pub initial: f64,
    pub terminal: f64,
    pub min_energy: f64,
    pub descended: bool,
    /// First iteration below `reference − tolerance`.
    pub first_below: Option<usize>,
    pub iterations: usize,
    pub status: FlowStatus,
    pub q_terminal: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub perturbation: Perturbation,
    pub tolerance: f64,
    /// `(largest ρ without descent, smallest ρ with descent)` when both exist
    /// and are ordered.
    pub transition: Option<(f64, f64)>,
}

impl SweepReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rho", "reference", "initial", "terminal", "min_energy", "descended", "first_below", "iterations", "status", "q_terminal"])?;
        for r in &self.rows {
            w.write_record([
                fmt_f64(r.rho),
                fmt_f64(r.reference),
                fmt_f64(r.initial),
                fmt_f64(r.terminal),
                fmt_f64(r.min_energy),
                r.descended.to_string(),
                r.first_below.map(|v| v.to_string()).unwrap_or_default(),
                r.iterations.to_string(),
                format!("{:?}", r.status),
                fmt_f64(r.q_terminal),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs [`run_flow`] at each `ρ` from the same perturbed start.
pub fn stability_sweep(
    rhos: &[f64],
    p: &Perturbation,
    cfg: &FlowConfig,
    tolerance: f64,
    bank: &SpectralBank,
    g: &GridSpec,
) -> Result<SweepReport> {
    for &r in rhos {
        if !(r > 0.0 && r <= 4.0) {
            return Err(Error::InvalidParameter(format!("ρ = {r} outside (0, 4]")));
        }
    }
    let start = perturbed_start(p, bank, g)?;
    let rows: Vec<Result<SweepRow>> = rhos
        .par_iter()
        .map(|&rho| {
            let c = FlowConfig { rho, ..cfg.clone() };
            let reference = hopf_reference_energy(rho, g)?;
            let trace = run_flow(&start.map, &c, bank, g)?;
            let level = reference - tolerance * reference;
            let last = trace.final_record();
            Ok(SweepRow {
                rho,
                reference,
                initial: trace.records[0].energy,
                terminal: last.energy,
                min_energy: trace.min_energy(),
                descended: trace.min_energy() < level,
                first_below: trace.first_below(level),
                iterations: last.iteration,
                status: trace.status,
                q_terminal: last.q_estimate,
            })
        })
        .collect();
    let rows: Vec<SweepRow> = rows.into_iter().collect::<Result<_>>()?;
    let stable = rows.iter().filter(|r| !r.descended).map(|r| r.rho).fold(None, |a: Option<f64>, r| Some(a.map_or(r, |a| a.max(r))));
    let unstable = rows.iter().filter(|r| r.descended).map(|r| r.rho).fold(None, |a: Option<f64>, r| Some(a.map_or(r, |a| a.min(r))));
    let transition = match (stable, unstable) {
        (Some(s), Some(u)) if s < u => Some((s, u)),
        _ => None,
    };
    Ok(SweepReport { rows, perturbation: *p, tolerance, transition })
}
