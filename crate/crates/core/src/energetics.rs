//! Scalar functionals: `I_q`, the Hopf invariant `Q`, the Faddeev–Skyrme
//! energy `ℱ𝒮_ρ`, the relaxed energy `ℰ_ρ`, and the inequality probes built
//! on them.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forms::{
    codifferential_1, exterior_derivative_1, exterior_derivative_2, hodge_star_2to1, integrate, l2_inner, l2_norm,
    restrict_two_form, wedge_12, AmbientPolyForm, OneFormField, TwoFormField,
};
use crate::geometry::GridSpec;
use crate::maps::{dirichlet_density, pullback_area, quarter_wedge_norm_sq, MapField};
use crate::spectral::{decompose, project_e0, Sign, SpectralBank, SpectralCoeffs};

/// Forms with `Q ≤` this value are treated as inadmissible.
pub const ADMISSIBLE_Q: f64 = 1e-6;

/// Relative closedness tolerance `‖dα‖ ≤ CLOSED_TOL·(1 + ‖α‖)`.
pub const CLOSED_TOL: f64 = 1e-6;

/// Remainders above `REMAINDER_FLAG·‖α‖` are flagged.
pub const REMAINDER_FLAG: f64 = 1e-3;

/// `∫|α|^q` for `q ∈ {1, 2}`.
pub fn i_q(alpha: &TwoFormField, q: u32, g: &GridSpec) -> Result<f64> {
    let n = alpha.pointwise_norm();
    match q {
        1 => integrate(&n, g),
        2 => integrate(&n.iter().map(|v| v * v).collect::<Vec<_>>(), g),
        _ => Err(Error::InvalidParameter(format!("I_q defined for q = 1, 2, got {q}"))),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HopfInvariant {
    pub q: f64,
    pub truncation: usize,
    /// `‖α − Σ P_k^± α‖` over `k ≤ truncation`.
    pub remainder: f64,
    pub norm: f64,
    pub closed_residual: f64,
    pub remainder_flagged: bool,
    /// Partial sums `Q_K` for `K = 0..=truncation`.
    pub partial: Vec<f64>,
}

/// `Q = (1/16π²) Σ ±(k + 2)⁻¹ ‖P_k^± α‖²`, read off a spectral expansion.
pub fn q_from_coeffs(c: &SpectralCoeffs) -> Vec<f64> {
    let mut acc = 0.0;
    (0..=c.k_max)
        .map(|k| {
            let l = k as f64 + 2.0;
            acc += (c.projection_norm_sq(k, Sign::Plus) - c.projection_norm_sq(k, Sign::Minus)) / l;
            acc / (16.0 * PI * PI)
        })
        .collect()
}

fn closed_residual(alpha: &TwoFormField, g: &GridSpec) -> Result<f64> {
    let d = exterior_derivative_2(alpha, g)?;
    Ok(integrate(&d.iter().map(|v| v * v).collect::<Vec<_>>(), g)?.max(0.0).sqrt())
}

fn check_closed(alpha: &TwoFormField, g: &GridSpec) -> Result<(f64, f64)> {
    let norm = l2_norm(alpha, g)?;
    let r = closed_residual(alpha, g)?;
    let tolerance = CLOSED_TOL * (1.0 + norm);
    if !(r <= tolerance) {
        return Err(Error::NotClosed { residual: r, tolerance });
    }
    Ok((norm, r))
}

pub fn hopf_invariant_form(alpha: &TwoFormField, k: usize, bank: &SpectralBank, g: &GridSpec) -> Result<HopfInvariant> {
    let (norm, closed) = check_closed(alpha, g)?;
    let c = decompose(alpha, k, bank, g)?;
    let partial = q_from_coeffs(&c);
    Ok(HopfInvariant {
        q: *partial.last().expect("k ≥ 0"),
        truncation: k,
        remainder: c.remainder,
        norm,
        closed_residual: closed,
        remainder_flagged: c.remainder > REMAINDER_FLAG * norm,
        partial,
    })
}

pub fn hopf_invariant_map(u: &MapField, k: usize, bank: &SpectralBank, g: &GridSpec) -> Result<HopfInvariant> {
    hopf_invariant_form(&pullback_area(u, g)?, k, bank, g)
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyReport {
    pub rho: f64,
    pub dirichlet: f64,
    pub skyrme: f64,
    pub total: f64,
    pub q_hopf: Option<f64>,
    pub truncation: Option<usize>,
    pub remainder: Option<f64>,
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveCoupling(rho))
    }
}

/// `ℱ𝒮_ρ(u) = ∫|du|² + ρ⁻²∫¼|du∧du|²`.
pub fn fs_energy(u: &MapField, rho: f64, g: &GridSpec) -> Result<EnergyReport> {
    check_rho(rho)?;
    let dirichlet = integrate(&dirichlet_density(u, g)?, g)?;
    let skyrme = integrate(&quarter_wedge_norm_sq(u, g)?, g)?;
    Ok(EnergyReport {
        rho,
        dirichlet,
        skyrme,
        total: dirichlet + skyrme / (rho * rho),
        q_hopf: None,
        truncation: None,
        remainder: None,
    })
}

/// [`fs_energy`] with the spectrally computed `Q` attached.
pub fn fs_energy_with_invariant(
    u: &MapField,
    rho: f64,
    k: usize,
    bank: &SpectralBank,
    g: &GridSpec,
) -> Result<EnergyReport> {
    let mut r = fs_energy(u, rho, g)?;
    let q = hopf_invariant_map(u, k, bank, g)?;
    r.q_hopf = Some(q.q);
    r.truncation = Some(k);
    r.remainder = Some(q.remainder);
    Ok(r)
}

/// `ℰ_ρ` from precomputed `Q`, `I₁`, `I₂`.
pub fn relaxed_from_parts(q: f64, i1: f64, i2: f64, rho: f64) -> Result<f64> {
    check_rho(rho)?;
    if !(q > ADMISSIBLE_Q) {
        return Err(Error::Inadmissible { q });
    }
    Ok(2.0 * i1 / q.sqrt() + i2 / (rho * rho * q))
}

/// `ℰ_ρ(α) = 2Q^{-1/2}∫|α| + ρ⁻²Q⁻¹∫|α|²`.
pub fn relaxed_energy(alpha: &TwoFormField, rho: f64, k: usize, bank: &SpectralBank, g: &GridSpec) -> Result<f64> {
    check_rho(rho)?;
    let q = hopf_invariant_form(alpha, k, bank, g)?.q;
    relaxed_from_parts(q, i_q(alpha, 1, g)?, i_q(alpha, 2, g)?, rho)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FsRelaxed {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
}

/// `ℱ𝒮_ρ(u)` against `ℰ_ρ(u*ω)`.
pub fn fs_vs_relaxed(u: &MapField, rho: f64, k: usize, bank: &SpectralBank, g: &GridSpec) -> Result<FsRelaxed> {
    let lhs = fs_energy(u, rho, g)?.total;
    let rhs = relaxed_energy(&pullback_area(u, g)?, rho, k, bank, g)?;
    Ok(FsRelaxed { lhs, rhs, slack: lhs - rhs })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GapReport {
    /// `I₂(α) − 32π²Q(α)`.
    pub gap: f64,
    /// `¼ dist²(α, E_0^+)`.
    pub quarter_dist_sq: f64,
    pub q: f64,
    pub holds: bool,
}

/// Slack allowed on the gap inequality, relative to `I₂`.
pub const GAP_TOL: f64 = 1e-9;

pub fn faddeev_gap(alpha: &TwoFormField, k: usize, bank: &SpectralBank, g: &GridSpec) -> Result<GapReport> {
    let q = hopf_invariant_form(alpha, k, bank, g)?.q;
    let i2 = i_q(alpha, 2, g)?;
    let gap = i2 - 32.0 * PI * PI * q;
    let dist = project_e0(alpha, g)?.distance_to_span;
    let quarter_dist_sq = 0.25 * dist * dist;
    Ok(GapReport { gap, quarter_dist_sq, q, holds: gap >= quarter_dist_sq - GAP_TOL * (1.0 + i2) })
}

/// `ρ⁻²(1 − 2/λ) − 1/(2λ)`.
pub fn quad_coefficient(lambda: f64, rho: f64) -> f64 {
    (1.0 - 2.0 / lambda) / (rho * rho) - 0.5 / lambda
}

/// The two integrals the quadratic form is built from.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct QuadParts {
    /// `∫|dψ|²`.
    pub dpsi_sq: f64,
    /// `∫ψ∧dψ`.
    pub helicity: f64,
}

impl QuadParts {
    pub fn value(&self, rho: f64) -> f64 {
        (self.dpsi_sq - 2.0 * self.helicity) / (rho * rho) - 0.5 * self.helicity
    }

    pub fn ratio(&self, rho: f64) -> f64 {
        self.value(rho) / self.dpsi_sq
    }

    /// Bisection for the sign change of [`Self::ratio`] in `[lo, hi]`.
    pub fn threshold(&self, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
        let (flo, fhi) = (self.ratio(lo), self.ratio(hi));
        if flo.signum() == fhi.signum() {
            return Err(Error::InvalidParameter(format!("no sign change of the ratio on [{lo}, {hi}]")));
        }
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if self.ratio(mid).signum() == flo.signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

pub fn quad_parts(psi: &OneFormField, g: &GridSpec) -> Result<QuadParts> {
    let norm = l2_norm(psi, g)?;
    let div = codifferential_1(psi, g)?;
    let dn = integrate(&div.iter().map(|v| v * v).collect::<Vec<_>>(), g)?.max(0.0).sqrt();
    let tolerance = CLOSED_TOL * (1.0 + norm);
    if !(dn <= tolerance) {
        return Err(Error::NotCoClosed { residual: dn, tolerance });
    }
    let dpsi = exterior_derivative_1(psi, g)?;
    Ok(QuadParts { dpsi_sq: l2_inner(&dpsi, &dpsi, g)?, helicity: integrate(&wedge_12(psi, &dpsi)?, g)? })
}

/// `ρ⁻²(∫|dψ|² − 2∫ψ∧dψ) − ½∫ψ∧dψ` for co-closed `ψ`.
pub fn quad_form(psi: &OneFormField, rho: f64, g: &GridSpec) -> Result<f64> {
    check_rho(rho)?;
    Ok(quad_parts(psi, g)?.value(rho))
}

/// `∫ |α₀ + dφ| − |α₀| − ⟨α₀/|α₀|, dφ⟩`.
pub fn g1(alpha0: &TwoFormField, dphi: &TwoFormField, g: &GridSpec) -> Result<f64> {
    if alpha0.len() != g.len() || dphi.len() != g.len() {
        return Err(Error::GridMismatch);
    }
    let dens: Vec<f64> = (0..g.len())
        .map(|k| {
            let a = alpha0.at(k);
            let b = dphi.at(k);
            let na = crate::forms::norm3(&a);
            let s = [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
            crate::forms::norm3(&s) - na - (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / na
        })
        .collect();
    if alpha0.pointwise_norm().iter().any(|v| !(*v > 1e-8)) {
        return Err(Error::Degenerate("|α₀| vanishes at a node".into()));
    }
    integrate(&dens, g)
}

/// Co-closed potential `Σ λ⁻¹ *P_k^± α` of a truncated expansion.
pub fn potential_from_coeffs(c: &SpectralCoeffs, bank: &SpectralBank, g: &GridSpec) -> OneFormField {
    let mut out = OneFormField::zeros(g.len());
    for k in 0..=c.k_max {
        for sign in Sign::both() {
            let lambda = sign.value() * (k as f64 + 2.0);
            let f = hodge_star_2to1(&restrict_two_form(&c.combined_form(bank, k, sign), g));
            out = out.axpy(1.0 / lambda, &f).expect("same grid");
        }
    }
    out
}

/// Draws Gaussian coefficients on the selected eigenspaces, rescaled to unit
/// coefficient norm.
pub fn random_coeffs<R: Rng, F: Fn(usize, Sign) -> bool>(rng: &mut R, k_max: usize, bank: &SpectralBank, select: F) -> SpectralCoeffs {
    let mut draw = |sign: Sign| -> Vec<Vec<f64>> {
        (0..=k_max)
            .map(|k| {
                let on = select(k, sign);
                (0..bank.get(k, sign).dim()).map(|_| if on { rng.sample(StandardNormal) } else { 0.0 }).collect()
            })
            .collect()
    };
    let plus = draw(Sign::Plus);
    let minus = draw(Sign::Minus);
    let mut c = SpectralCoeffs { k_max, plus, minus, norm_sq: 0.0, remainder: 0.0 };
    let n = c.captured_norm_sq().sqrt();
    if n > 0.0 {
        for v in c.plus.iter_mut().chain(c.minus.iter_mut()).flatten() {
            *v /= n;
        }
    }
    c.norm_sq = c.captured_norm_sq();
    c
}

/// Restriction of `4ω⁺₀,₁`, the Hopf pullback form.
pub fn alpha_hopf(g: &GridSpec) -> TwoFormField {
    restrict_two_form(&AmbientPolyForm::omega0(true, 0).scaled(4.0), g)
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpansionReport {
    pub rho: f64,
    pub scales: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Least-squares slope of `log|residual|` against `log s`; absent when
    /// every residual vanishes.
    pub slope: Option<f64>,
}

pub const EXPANSION_SCALES: [f64; 4] = [1.0, 0.5, 0.25, 0.125];

/// Residual of the second-order expansion of `ℰ_ρ` around `α₀ ∈ E⁺₀,₁`
/// along `s·dφ`, for each `s` in `scales`.
pub fn expansion_residual(
    alpha0: &TwoFormField,
    phi: &OneFormField,
    rho: f64,
    scales: &[f64],
    k: usize,
    bank: &SpectralBank,
    g: &GridSpec,
) -> Result<ExpansionReport> {
    check_rho(rho)?;
    let parts = quad_parts(phi, g)?;
    let dphi = exterior_derivative_1(phi, g)?;
    let e0 = relaxed_energy(alpha0, rho, k, bank, g)?;
    let a_dot = l2_inner(alpha0, &dphi, g)?;
    let mut residuals = Vec::with_capacity(scales.len());
    for &s in scales {
        let ds = dphi.scaled(s);
        let alpha = alpha0.axpy(1.0, &ds)?;
        let lhs = relaxed_energy(&alpha, rho, k, bank, g)? - e0;
        let quad = QuadParts { dpsi_sq: s * s * parts.dpsi_sq, helicity: s * s * parts.helicity }.value(rho);
        let a = s * a_dot;
        let rhs = quad + a * a / (128.0 * PI * PI) + (2.0 - a / (16.0 * PI * PI)) * g1(alpha0, &ds, g)?;
        residuals.push((lhs - rhs).abs());
    }
    let slope = fit_slope(scales, &residuals);
    Ok(ExpansionReport { rho, scales: scales.to_vec(), residuals, slope })
}

fn fit_slope(s: &[f64], r: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = s.iter().zip(r).filter(|(_, r)| **r > 0.0).map(|(s, r)| (s.ln(), r.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Which eigenspaces the coercivity probe perturbs along.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ProbeDirection {
    /// Every `E_k^±` with `k ≤ K`.
    Random,
    /// A single eigenspace.
    Eigenspace(usize, Sign),
}

#[derive(Debug, Clone, Serialize)]
pub struct CoercivityReport {
    pub rho: f64,
    pub epsilon0: f64,
    pub samples: usize,
    pub min_ratio: f64,
    pub violations: usize,
    pub truncation: usize,
    pub direction: ProbeDirection,
    pub seed: u64,
    /// Per-sample `(‖dφ‖, distance, ratio)`.
    pub series: Vec<[f64; 3]>,
}

impl CoercivityReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.min_ratio > 0.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ProbeConfig {
    pub rho: f64,
    pub epsilon0: f64,
    pub samples: usize,
    pub truncation: usize,
    pub direction: ProbeDirection,
    pub seed: u64,
}

/// Samples `α = α⁺₀,₁ + dφ` with `‖dφ‖ ≤ ε₀`, rescales to `Q = 1` and
/// records `(ℰ_ρ(α) − ℰ_ρ(α̃))/‖α − α̃‖²` against the nearest `α̃ ∈ E⁺₀,₁`.
pub fn coercivity_probe(cfg: &ProbeConfig, bank: &SpectralBank, g: &GridSpec) -> Result<CoercivityReport> {
    check_rho(cfg.rho)?;
    if !(cfg.epsilon0 > 0.0) {
        return Err(Error::InvalidParameter("probe radius must be positive".into()));
    }
    if cfg.truncation > bank.k_max {
        return Err(Error::InvalidParameter(format!("truncation {} exceeds built bank {}", cfg.truncation, bank.k_max)));
    }
    if let ProbeDirection::Eigenspace(k, _) = cfg.direction {
        if k > cfg.truncation {
            return Err(Error::InvalidParameter(format!("eigenspace k = {k} above truncation")));
        }
    }
    let base = alpha_hopf(g);
    let series: Vec<Result<[f64; 3]>> = (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let select = |k: usize, s: Sign| match cfg.direction {
                ProbeDirection::Random => true,
                ProbeDirection::Eigenspace(kk, ss) => k == kk && s == ss,
            };
            let c = random_coeffs(&mut rng, cfg.truncation, bank, select);
            let radius = cfg.epsilon0 * rng.random::<f64>().max(f64::MIN_POSITIVE);
            let dphi = c.reconstruct(bank, g).scaled(radius);
            let raw = base.axpy(1.0, &dphi)?;
            let q = hopf_invariant_form(&raw, cfg.truncation, bank, g)?.q;
            if !(q > ADMISSIBLE_Q) {
                return Err(Error::Inadmissible { q });
            }
            let alpha = raw.scaled(1.0 / q.sqrt());
            let proj = project_e0(&alpha, g)?;
            let nearest = restrict_two_form(&proj.nearest_form().ok_or_else(|| Error::Degenerate("no E_0^+ component".into()))?, g);
            let dist = proj.distance.expect("nearest exists");
            if !(dist > 0.0) {
                return Err(Error::Degenerate("sample coincides with its nearest point".into()));
            }
            let e = relaxed_energy(&alpha, cfg.rho, cfg.truncation, bank, g)?;
            let e_near = relaxed_energy(&nearest, cfg.rho, cfg.truncation, bank, g)?;
            Ok([radius, dist, (e - e_near) / (dist * dist)])
        })
        .collect();
    let series: Vec<[f64; 3]> = series.into_iter().collect::<Result<_>>()?;
    let min_ratio = series.iter().map(|s| s[2]).fold(f64::INFINITY, f64::min);
    let violations = series.iter().filter(|s| !(s[2] > 0.0)).count();
    Ok(CoercivityReport {
        rho: cfg.rho,
        epsilon0: cfg.epsilon0,
        samples: cfg.samples,
        min_ratio,
        violations,
        truncation: cfg.truncation,
        direction: cfg.direction,
        seed: cfg.seed,
        series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_grid;
    use crate::maps::AnalyticMap;
    use crate::spectral::eigen_potential;
    use approx::assert_abs_diff_eq;

    const PI2: f64 = PI * PI;

    #[test]
    fn iq_values() {
        let g = build_grid(12, 12).unwrap();
        let a = alpha_hopf(&g);
        assert_abs_diff_eq!(i_q(&a, 1, &g).unwrap(), 8.0 * PI2, epsilon = 1e-9);
        assert_abs_diff_eq!(i_q(&a, 2, &g).unwrap(), 32.0 * PI2, epsilon = 1e-9);
        assert_eq!(i_q(&TwoFormField::zeros(g.len()), 1, &g).unwrap(), 0.0);
        assert!(i_q(&a, 3, &g).is_err());
    }

    #[test]
    fn invariant_signs() {
        let g = build_grid(16, 16).unwrap();
        let bank = SpectralBank::build(2).unwrap();
        let q = hopf_invariant_form(&alpha_hopf(&g), 2, &bank, &g).unwrap();
        assert_abs_diff_eq!(q.q, 1.0, epsilon = 1e-9);
        assert!(!q.remainder_flagged);
        let asd = restrict_two_form(&AmbientPolyForm::omega0(false, 1).scaled(4.0), &g);
        assert_abs_diff_eq!(hopf_invariant_form(&asd, 2, &bank, &g).unwrap().q, -1.0, epsilon = 1e-9);
        assert_eq!(hopf_invariant_form(&TwoFormField::zeros(g.len()), 2, &bank, &g).unwrap().q, 0.0);
        // a form that is not closed
        let bad = TwoFormField::new(g.sample(|x| x[0]), vec![0.0; g.len()], vec![0.0; g.len()]).unwrap();
        assert!(matches!(hopf_invariant_form(&bad, 2, &bank, &g), Err(Error::NotClosed { .. })));
    }

    #[test]
    fn energy_constants() {
        let g = build_grid(12, 12).unwrap();
        let bank = SpectralBank::build(2).unwrap();
        let h = MapField::from_analytic(AnalyticMap::hopf(), &g);
        let e = fs_energy(&h, 1.0, &g).unwrap();
        assert_abs_diff_eq!(e.dirichlet, 16.0 * PI2, epsilon = 1e-9);
        assert_abs_diff_eq!(e.total, 48.0 * PI2, epsilon = 1e-8);
        assert_abs_diff_eq!(fs_energy(&h, 2f64.sqrt(), &g).unwrap().total, 32.0 * PI2, epsilon = 1e-8);
        let c = MapField::from_analytic(AnalyticMap::Constant([1.0, 0.0, 0.0]), &g);
        assert_eq!(fs_energy(&c, 1.0, &g).unwrap().total, 0.0);
        assert!(matches!(fs_energy(&h, 0.0, &g), Err(Error::NonPositiveCoupling(_))));
        let a = alpha_hopf(&g);
        for c in [1.0, 0.3, 7.0] {
            assert_abs_diff_eq!(relaxed_energy(&a.scaled(c), 1.0, 2, &bank, &g).unwrap(), 48.0 * PI2, epsilon = 1e-8);
        }
        let asd = restrict_two_form(&AmbientPolyForm::omega0(false, 0), &g);
        assert!(matches!(relaxed_energy(&asd, 1.0, 2, &bank, &g), Err(Error::Inadmissible { .. })));
        let s = fs_vs_relaxed(&h, 1.0, 2, &bank, &g).unwrap();
        assert_abs_diff_eq!(s.slack, 0.0, epsilon = 1e-8);
    }

    #[test]
    fn quad_form_coefficients() {
        let g = build_grid(12, 12).unwrap();
        let bank = SpectralBank::build(2).unwrap();
        for k in 0..=2 {
            for sign in Sign::both() {
                let b = bank.get(k, sign);
                let (psi, lambda) = eigen_potential(&restrict_two_form(&b.members[0], &g), &g).unwrap();
                assert_eq!(lambda, b.eigenvalue());
                let p = quad_parts(&psi, &g).unwrap();
                for rho in [0.5, 1.0, 2.0] {
                    assert_abs_diff_eq!(p.ratio(rho), quad_coefficient(lambda, rho), epsilon = 1e-9);
                }
            }
        }
        assert_abs_diff_eq!(quad_coefficient(-2.0, 1.3), (8.0 / (1.3 * 1.3) + 1.0) / 4.0, epsilon = 1e-15);
        let (psi, _) = eigen_potential(&restrict_two_form(&bank.get(1, Sign::Plus).members[2], &g), &g).unwrap();
        let rho = quad_parts(&psi, &g).unwrap().threshold(1.0, 2.0, 1e-9).unwrap();
        assert_abs_diff_eq!(rho, 2f64.sqrt(), epsilon = 1e-6);
        // gradient of a function is not co-closed
        let f = g.sample(|x| x[0] * x[1]);
        let df = crate::forms::exterior_derivative_0(&f, &g).unwrap();
        assert!(matches!(quad_parts(&df, &g), Err(Error::NotCoClosed { .. })));
    }

    #[test]
    fn g1_cases() {
        let g = build_grid(8, 8).unwrap();
        let a = alpha_hopf(&g);
        assert_eq!(g1(&a, &TwoFormField::zeros(g.len()), &g).unwrap(), 0.0);
        assert_abs_diff_eq!(g1(&a, &a.scaled(0.4), &g).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g1(&a, &a.scaled(-0.6), &g).unwrap(), 0.0, epsilon = 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let f: [Vec<f64>; 3] = std::array::from_fn(|_| (0..g.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
            let d = TwoFormField { c: f };
            assert!(g1(&a, &d, &g).unwrap() >= -1e-12);
        }
    }

    #[test]
    fn gap_on_spectral_oracle() {
        let g = build_grid(12, 12).unwrap();
        let bank = SpectralBank::build(2).unwrap();
        let a = alpha_hopf(&g);
        let r = faddeev_gap(&a, 2, &bank, &g).unwrap();
        assert!(r.gap.abs() <= 1e-10 && r.quarter_dist_sq <= 1e-10, "{r:?}");
        let eps = 0.3;
        let e1m = restrict_two_form(&bank.get(1, Sign::Minus).members[0], &g);
        let r = faddeev_gap(&a.axpy(eps, &e1m).unwrap(), 2, &bank, &g).unwrap();
        // (1 + 2/3)ε² for a unit E_1^- component
        assert_abs_diff_eq!(r.gap, (1.0 + 2.0 / 3.0) * eps * eps, epsilon = 1e-10);
        assert_abs_diff_eq!(r.quarter_dist_sq, 0.25 * eps * eps, epsilon = 1e-10);
        assert!(r.holds);
    }

    #[test]
    fn expansion_is_third_order() {
        let g = build_grid(12, 12).unwrap();
        let bank = SpectralBank::build(2).unwrap();
        let a = alpha_hopf(&g);
        let (psi, _) = eigen_potential(&restrict_two_form(&bank.get(2, Sign::Plus).members[1], &g), &g).unwrap();
        let r = expansion_residual(&a, &psi.scaled(3.0), 1.0, &EXPANSION_SCALES, 2, &bank, &g).unwrap();
        assert!(r.slope.unwrap() >= 2.8, "{r:?}");
        let zero = expansion_residual(&a, &OneFormField::zeros(g.len()), 1.0, &EXPANSION_SCALES, 2, &bank, &g).unwrap();
        assert!(zero.residuals.iter().all(|v| *v == 0.0));
        assert!(zero.slope.is_none());
    }

    #[test]
    fn probe_small() {
        let g = build_grid(10, 10).unwrap();
        let bank = SpectralBank::build(2).unwrap();
        let cfg = ProbeConfig { rho: 0.5, epsilon0: 0.1, samples: 16, truncation: 2, direction: ProbeDirection::Random, seed: 4 };
        let r = coercivity_probe(&cfg, &bank, &g).unwrap();
        assert!(r.passed(), "{:?}", r.min_ratio);
        let again = coercivity_probe(&cfg, &bank, &g).unwrap();
        assert_eq!(r.min_ratio, again.min_ratio);
        assert!(coercivity_probe(&ProbeConfig { epsilon0: 0.0, ..cfg }, &bank, &g).is_err());
    }

    #[test]
    fn random_potentials_are_coclosed() {
        let g = build_grid(12, 12).unwrap();
        let bank = SpectralBank::build(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_coeffs(&mut rng, 2, &bank, |_, _| true);
        let phi = potential_from_coeffs(&c, &bank, &g);
        let dphi = exterior_derivative_1(&phi, &g).unwrap();
        let err = l2_norm(&dphi.axpy(-1.0, &c.reconstruct(&bank, &g)).unwrap(), &g).unwrap();
        assert!(err < 1e-10);
        assert!(quad_parts(&phi, &g).is_ok());
    }
}
