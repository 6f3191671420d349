//! Command-line driver: configuration, verification suites and experiment
//! commands. Every command writes `results.json`, its CSV series and a
//! `manifest.json` into the output directory.

use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::{Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energetics::{
    alpha_hopf, coercivity_probe, faddeev_gap, fs_energy, hopf_invariant_map, i_q, random_coeffs, relaxed_from_parts,
    ProbeConfig, ProbeDirection, ADMISSIBLE_Q,
};
use crate::error::{Error, Result};
use crate::flow::{
    hopf_reference_energy, perturbed_start, run_flow, stability_sweep, FlowConfig, FlowStatus, Perturbation,
};
use crate::forms::{
    exterior_derivative_0, exterior_derivative_1, exterior_derivative_2, hodge_star_1to2, hodge_star_2to1,
    integrate, l2_inner, monomials, restrict_one_form, restrict_three_form_of_d, restrict_two_form, theta_field,
    wedge_12, AmbientPolyForm, AmbientPolyOneForm,
};
use crate::geometry::{build_grid, GridSpec};
use crate::maps::{
    conformality_defect, dirichlet_density, lift_identity_check, pullback_area, AnalyticMap, MapField, S3Analytic,
    S3MapField,
};
use crate::spectral::{
    decompose, pullback_constant, so4_transport, verify_eigen, Sign, SpectralBank, SpectralCoeffs,
};

#[derive(Debug, Parser)]
#[command(name = "hopflab", version, about = "Faddeev-Skyrme and Hopf-invariant experiments on a discretized S³")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Quadrature, node and frame checks.
    VerifyGeometry,
    /// Exterior calculus identities and the Hopf-map constants.
    VerifyForms,
    /// Eigenspaces of d* on closed 2-forms, Parseval and SO(4) transport.
    VerifySpectral,
    /// Hopf invariant of a map.
    Invariant,
    /// Faddeev-Skyrme energy and its relaxed lower bound.
    Energy,
    /// Faddeev gap on the Hopf form or on random closed forms.
    Gap,
    /// Local coercivity probe of the relaxed energy around the Hopf form.
    Coercivity,
    /// Gradient flow from a perturbed Hopf map.
    Flow,
    /// Gradient flow over a list of couplings.
    Sweep,
}

/// Flags shared by all subcommands. Unset flags fall back to the config file,
/// then to the documented defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Grid size `NTxNA` (default 24x24).
    #[arg(long, global = true, value_parser = parse_grid)]
    pub grid: Option<(usize, usize)>,
    /// Spectral truncation K (default 4; for flow and sweep the monitored Q uses 2).
    #[arg(long, global = true)]
    pub trunc: Option<usize>,
    /// Couplings, comma separated.
    #[arg(long, global = true, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true)]
    pub rho: Option<Vec<f64>>,
    /// 64-bit seed for every random draw (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Built-in map spec or path to a map CSV (default `hopf`).
    #[arg(long, global = true)]
    pub map: Option<String>,
    /// Probe radius ε₀ (default 0.1).
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    /// Sample count (coercivity default 200, gap default 1000).
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Gap input: `hopf` or `random` (default `random`).
    #[arg(long, global = true)]
    pub form: Option<String>,
    /// Coercivity direction: `random` or an eigenspace such as `1+` (default `random`).
    #[arg(long, global = true)]
    pub direction: Option<String>,
    /// Flow start: `none`, `random:AMP` or `eigen:K:SIGN:MEMBER:AMP`.
    #[arg(long, global = true)]
    pub perturb: Option<String>,
    /// Flow iteration cap.
    #[arg(long, global = true)]
    pub max_iter: Option<usize>,
    /// TOML config file; flags take precedence over its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected NTxNA, got `{s}`"))?;
    let nt = a.trim().parse().map_err(|_| format!("bad n_t in `{s}`"))?;
    let na = b.trim().parse().map_err(|_| format!("bad n_ang in `{s}`"))?;
    Ok((nt, na))
}

/// Contents of the optional TOML config file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub grid: Option<String>,
    pub trunc: Option<usize>,
    pub rho: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub map: Option<String>,
    pub eps: Option<f64>,
    pub samples: Option<usize>,
    pub form: Option<String>,
    pub direction: Option<String>,
    pub perturb: Option<String>,
    pub max_iter: Option<usize>,
    /// Relative tolerance for "below ℱ𝒮_ρ(h)" in sweeps.
    pub tolerance: Option<f64>,
    pub flow: Option<FlowConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

/// Fully resolved configuration, echoed into every manifest.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub grid: (usize, usize),
    pub trunc: usize,
    pub rho: Vec<f64>,
    pub seed: u64,
    pub out: PathBuf,
    pub map: String,
    pub eps: f64,
    pub samples: usize,
    pub form: String,
    pub direction: String,
    pub perturbation: Perturbation,
    pub tolerance: f64,
    pub flow: FlowConfig,
}

impl RunConfig {
    /// Merges flags over the file over the defaults and validates the result.
    pub fn resolve(command: Command, flags: &Flags, file: &FileConfig) -> Result<Self> {
        let grid = match (flags.grid, &file.grid) {
            (Some(g), _) => g,
            (None, Some(s)) => parse_grid(s).map_err(Error::Parse)?,
            (None, None) => (24, 24),
        };
        let default_rho = match command {
            Command::Energy => vec![1.0],
            Command::Sweep => vec![0.25, 0.5, 1.0, 2.0, 3.0],
            _ => vec![0.5],
        };
        let default_samples = if command == Command::Gap { 1000 } else { 200 };
        let default_perturb = if command == Command::Sweep { "eigen:1:+:0:0.05" } else { "random:0.05" };
        let seed = flags.seed.or(file.seed).unwrap_or(0);
        let mut flow = file.flow.clone().unwrap_or_default();
        let trunc = flags.trunc.or(file.trunc);
        if let Some(k) = trunc {
            flow.q_truncation = k;
        }
        if let Some(m) = flags.max_iter.or(file.max_iter) {
            flow.max_iter = m;
        }
        flow.check_seed = seed;
        let rho = flags.rho.clone().or_else(|| file.rho.clone()).unwrap_or(default_rho);
        let perturb = flags.perturb.clone().or_else(|| file.perturb.clone()).unwrap_or_else(|| default_perturb.into());
        let cfg = Self {
            command,
            grid,
            trunc: trunc.unwrap_or(4),
            rho,
            seed,
            out: flags.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from("out")),
            map: flags.map.clone().or_else(|| file.map.clone()).unwrap_or_else(|| "hopf".into()),
            eps: flags.eps.or(file.eps).unwrap_or(0.1),
            samples: flags.samples.or(file.samples).unwrap_or(default_samples),
            form: flags.form.clone().or_else(|| file.form.clone()).unwrap_or_else(|| "random".into()),
            direction: flags.direction.clone().or_else(|| file.direction.clone()).unwrap_or_else(|| "random".into()),
            perturbation: parse_perturbation(&perturb, seed)?,
            tolerance: file.tolerance.unwrap_or(1e-6),
            flow,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let (nt, na) = self.grid;
        if nt < 2 || na < 4 || na % 2 != 0 {
            return Err(Error::InvalidGrid(format!("{nt}x{na}: need n_t ≥ 2 and even n_ang ≥ 4")));
        }
        if self.rho.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidParameter("every ρ must be positive".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidParameter("eps must be positive".into()));
        }
        if !matches!(self.form.as_str(), "hopf" | "random") {
            return Err(Error::Parse(format!("unknown form `{}`", self.form)));
        }
        parse_direction(&self.direction)?;
        if !(self.map.ends_with(".csv") || Path::new(&self.map).is_file()) {
            AnalyticMap::parse(&self.map)?;
        }
        if matches!(self.command, Command::Flow | Command::Sweep) {
            for &rho in &self.rho {
                FlowConfig { rho, ..self.flow.clone() }.validate()?;
            }
        }
        Ok(())
    }
}

/// `none`, `random:AMP` or `eigen:K:SIGN:MEMBER:AMP`.
pub fn parse_perturbation(s: &str, seed: u64) -> Result<Perturbation> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |v: &str| v.parse::<f64>().map_err(|_| Error::Parse(format!("bad number `{v}` in `{s}`")));
    let int = |v: &str| v.parse::<usize>().map_err(|_| Error::Parse(format!("bad integer `{v}` in `{s}`")));
    match parts.as_slice() {
        ["none"] => Ok(Perturbation::None),
        ["random", a] => Ok(Perturbation::Random { amplitude: num(a)?, seed }),
        ["eigen", k, sign, m, a] => Ok(Perturbation::Eigen {
            k: int(k)?,
            plus: parse_sign(sign)? == Sign::Plus,
            member: int(m)?,
            amplitude: num(a)?,
        }),
        _ => Err(Error::Parse(format!("unknown perturbation `{s}`"))),
    }
}

fn parse_sign(s: &str) -> Result<Sign> {
    match s {
        "+" | "plus" => Ok(Sign::Plus),
        "-" | "minus" => Ok(Sign::Minus),
        _ => Err(Error::Parse(format!("bad sign `{s}`"))),
    }
}

/// `random` or `K±`.
pub fn parse_direction(s: &str) -> Result<ProbeDirection> {
    if s == "random" {
        return Ok(ProbeDirection::Random);
    }
    let (k, sign) = s.split_at(s.len().saturating_sub(1));
    let k = k.parse().map_err(|_| Error::Parse(format!("bad direction `{s}`")))?;
    Ok(ProbeDirection::Eigenspace(k, parse_sign(sign)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// The grid is too coarse for the check to be meaningful.
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub status: CheckStatus,
    pub measured: Option<f64>,
    pub threshold: f64,
    pub note: Option<String>,
}

impl Check {
    pub fn measure(name: &str, measured: f64, threshold: f64) -> Self {
        let status = if measured <= threshold { CheckStatus::Pass } else { CheckStatus::Fail };
        Self { name: name.into(), status, measured: Some(measured), threshold, note: None }
    }

    pub fn skipped(name: &str, threshold: f64, reason: String) -> Self {
        Self { name: name.into(), status: CheckStatus::Skipped, measured: None, threshold, note: Some(reason) }
    }
}

/// Whether collocation on `g` is exact for ambient polynomials of degree `d`.
fn resolves(g: &GridSpec, d: usize) -> bool {
    g.n_ang() >= 2 * d + 2 && g.n_t() >= d / 2 + 2
}

fn gated(name: &str, g: &GridSpec, degree: usize, threshold: f64, f: impl FnOnce() -> Result<f64>) -> Result<Check> {
    if resolves(g, degree) {
        Ok(Check::measure(name, f()?, threshold))
    } else {
        Ok(Check::skipped(name, threshold, format!("skipped below resolution: degree {degree} on {}x{}", g.n_t(), g.n_ang())))
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn geometry_checks(g: &GridSpec) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let bad = g.weights().iter().filter(|w| !(**w > 0.0)).count();
    out.push(Check::measure("weights_positive", bad as f64, 0.0));
    out.push(Check::measure("total_volume_2pi2", (g.total_weight() - 2.0 * PI * PI).abs(), 1e-12));
    let tw: f64 = g.t_weights().iter().sum();
    out.push(Check::measure("t_weights_sum_half", (tw - 0.5).abs(), 1e-13));
    // (exponents, exact value) from the Gamma-function moment formula
    let moments: [([i32; 4], f64); 6] = [
        ([2, 0, 0, 0], PI * PI / 2.0),
        ([0, 0, 2, 2], PI * PI / 12.0),
        ([2, 2, 0, 0], PI * PI / 12.0),
        ([4, 0, 0, 0], PI * PI / 4.0),
        ([6, 0, 0, 0], 5.0 * PI * PI / 32.0),
        ([2, 2, 2, 2], PI * PI / 960.0),
    ];
    for (e, exact) in moments {
        let name = format!("moment_x{}{}{}{}", e[0], e[1], e[2], e[3]);
        let ang = (e[0] + e[1]).max(e[2] + e[3]) as usize;
        let xdeg = (e.iter().sum::<i32>() / 2) as usize;
        if g.n_ang() <= ang || 2 * g.n_t() < xdeg + 1 {
            out.push(Check::skipped(&name, 1e-10, format!("skipped below resolution: angular degree {ang} on n_ang = {}", g.n_ang())));
            continue;
        }
        let f = g.sample(|x| (0..4).map(|i| x[i].powi(e[i])).product());
        out.push(Check::measure(&name, (integrate(&f, g)? - exact).abs(), 1e-10));
    }
    let unit = g.ambient().iter().map(|x| ((x.iter().map(|v| v * v).sum::<f64>()).sqrt() - 1.0).abs()).fold(0.0, f64::max);
    out.push(Check::measure("nodes_on_sphere", unit, 1e-14));
    let h = 2.0 * PI / g.n_ang() as f64;
    let spacing = g
        .nodes()
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let (i1, i2) = ((k / g.n_ang()) % g.n_ang(), k % g.n_ang());
            (p.phi1 - i1 as f64 * h).abs().max((p.phi2 - i2 as f64 * h).abs())
        })
        .fold(0.0, f64::max);
    out.push(Check::measure("angular_nodes_uniform", spacing, 1e-13));
    let mut ortho = 0.0f64;
    let mut tangent = 0.0f64;
    let mut orient = 0.0f64;
    for (x, f) in g.ambient().iter().zip(g.frames()) {
        let gram = f.gram();
        for i in 0..3 {
            for j in 0..3 {
                ortho = ortho.max((gram[i][j] - if i == j { 1.0 } else { 0.0 }).abs());
            }
            tangent = tangent.max((0..4).map(|a| x[a] * f.tau[i][a]).sum::<f64>().abs());
        }
        let col = |v: &[f64; 4]| Vector4::from(*v);
        let m = Matrix4::from_columns(&[col(x), col(&f.tau[0]), col(&f.tau[1]), col(&f.tau[2])]);
        orient = orient.max((m.determinant() - 1.0).abs());
    }
    out.push(Check::measure("frame_orthonormal", ortho, 1e-12));
    out.push(Check::measure("frame_tangent", tangent, 1e-12));
    out.push(Check::measure("frame_positively_oriented", orient, 1e-12));
    Ok(out)
}

fn poly_one_form(degree: usize, rng: &mut ChaCha8Rng) -> AmbientPolyOneForm {
    let m = monomials(degree).len();
    AmbientPolyOneForm { degree, coeff: std::array::from_fn(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect()) }
}

fn poly_two_form(degree: usize, rng: &mut ChaCha8Rng) -> AmbientPolyForm {
    let mut p = AmbientPolyForm::zero(degree);
    p.coeff.iter_mut().flatten().for_each(|c| *c = rng.random_range(-1.0..1.0));
    p
}

fn max_field_diff(a: &[Vec<f64>; 3], b: &[Vec<f64>; 3]) -> f64 {
    (0..3).map(|i| a[i].iter().zip(&b[i]).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)).fold(0.0, f64::max)
}

pub fn forms_checks(g: &GridSpec, seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let sigma = g.sample(|x| x[0] * x[1].powi(2) * x[3] + x[2].powi(5) - 3.0 * x[0].powi(2) * x[3].powi(2) * x[1] + x[2]);
    out.push(gated("d1_d0_vanishes", g, 7, 1e-8, || {
        let dd = exterior_derivative_1(&exterior_derivative_0(&sigma, g)?, g)?;
        Ok(dd.c.iter().map(|c| max_abs(c)).fold(0.0, f64::max))
    })?);
    let b1 = poly_one_form(3, &mut rng);
    out.push(gated("d2_d1_vanishes", g, 5, 1e-8, || {
        let dd = exterior_derivative_2(&exterior_derivative_1(&restrict_one_form(&b1, g), g)?, g)?;
        Ok(max_abs(&dd))
    })?);
    out.push(gated("d_of_dx1_vanishes", g, 1, 1e-10, || {
        let mut coeff: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0]);
        coeff[0][0] = 1.0;
        let d = exterior_derivative_1(&restrict_one_form(&AmbientPolyOneForm { degree: 0, coeff }, g), g)?;
        Ok(d.c.iter().map(|c| max_abs(c)).fold(0.0, f64::max))
    })?);
    let a2 = poly_one_form(2, &mut rng);
    out.push(gated("d1_matches_ambient_d", g, 3, 1e-10, || {
        let coll = exterior_derivative_1(&restrict_one_form(&a2, g), g)?;
        Ok(max_field_diff(&coll.c, &restrict_two_form(&a2.d(), g).c))
    })?);
    let p2 = poly_two_form(2, &mut rng);
    out.push(gated("d2_matches_ambient_d", g, 3, 1e-10, || {
        let coll = exterior_derivative_2(&restrict_two_form(&p2, g), g)?;
        let exact = restrict_three_form_of_d(&p2, g);
        Ok(coll.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    })?);
    out.push(gated("stokes_exact_three_form", g, 3, 1e-10, || {
        Ok(integrate(&exterior_derivative_2(&restrict_two_form(&p2, g), g)?, g)?.abs())
    })?);
    out.push(gated("integration_by_parts", g, 3, 1e-8, || {
        let a = restrict_one_form(&a2, g);
        let b = restrict_one_form(&poly_one_form(2, &mut rng), g);
        let lhs = integrate(&wedge_12(&a, &exterior_derivative_1(&b, g)?)?, g)?;
        let rhs = integrate(&wedge_12(&b, &exterior_derivative_1(&a, g)?)?, g)?;
        Ok((lhs - rhs).abs())
    })?);
    let a = restrict_one_form(&a2, g);
    let back = hodge_star_2to1(&hodge_star_1to2(&a));
    out.push(Check::measure("star_involution", max_field_diff(&back.c, &a.c), 0.0));
    let theta = theta_field(g);
    out.push(gated("theta_wedge_dtheta_twice_volume", g, 1, 1e-8, || {
        let w = wedge_12(&theta, &exterior_derivative_1(&theta, g)?)?;
        Ok(w.iter().map(|v| (v - 2.0).abs()).fold(0.0, f64::max))
    })?);
    let h = MapField::from_analytic(AnalyticMap::hopf(), g);
    let pb = pullback_area(&h, g)?;
    out.push(gated("hopf_pullback_twice_dtheta", g, 1, 1e-8, || {
        let dt = exterior_derivative_1(&theta, g)?.scaled(2.0);
        Ok(max_field_diff(&pb.c, &dt.c))
    })?);
    let dens = dirichlet_density(&h, g)?;
    out.push(Check::measure("hopf_dirichlet_density_8", dens.iter().map(|v| (v - 8.0).abs()).fold(0.0, f64::max), 1e-8));
    let area = pb.pointwise_norm();
    out.push(Check::measure("hopf_area_density_4", area.iter().map(|v| (v - 4.0).abs()).fold(0.0, f64::max), 1e-8));
    out.push(Check::measure("hopf_conformality_defect", max_abs(&conformality_defect(&h, g)?), 1e-8));
    let id = S3MapField::from_analytic(S3Analytic::Identity, g);
    out.push(Check::measure("lift_identity_hopf", lift_identity_check(&id, &theta.scaled(2.0), &h, g)?, 1e-10));
    Ok(out)
}

fn random_self_dual(rng: &mut ChaCha8Rng, sign: Sign, norm: f64) -> [[f64; 4]; 4] {
    let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut m = [[0.0; 4]; 4];
    for (i, c) in v.iter().enumerate() {
        let b = AmbientPolyForm::omega0(sign == Sign::Plus, i).constant_matrix().expect("constant form");
        for a in 0..4 {
            for bb in 0..4 {
                m[a][bb] += norm * c / n * b[a][bb];
            }
        }
    }
    m
}

pub fn spectral_checks(g: &GridSpec, seed: u64) -> Result<Vec<Check>> {
    const K: usize = 3;
    let bank = SpectralBank::build(K)?;
    let mut out = Vec::new();
    let mut dim_err = 0usize;
    for k in 0..=K {
        for sign in Sign::both() {
            let b = bank.get(k, sign);
            dim_err += b.dim().abs_diff((k + 1) * (k + 3));
            out.push(gated(&format!("eigen_E{k}{}", sign.as_char()), g, k + 1, 1e-8, || {
                let c = verify_eigen(b, g)?;
                Ok(if c.degenerate { f64::INFINITY } else { c.eigen_residual.max(c.closed_residual) })
            })?);
        }
    }
    let k0 = bank.get(0, Sign::Plus).dim().abs_diff(3) + bank.get(0, Sign::Minus).dim().abs_diff(3);
    out.push(Check::measure("dims_k0_equal_3", k0 as f64, 0.0));
    out.push(Check::measure("dims_equal_(k+1)(k+3)", dim_err as f64, 0.0));
    out.push(gated("cross_gram_orthonormal", g, 2 * (K + 1), 1e-9, || {
        let fields: Vec<_> = bank.iter().flat_map(|b| b.restricted(g)).collect();
        let mut worst = 0.0f64;
        for (i, a) in fields.iter().enumerate() {
            for (j, b) in fields.iter().enumerate().skip(i) {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((l2_inner(a, b, g)? - target).abs());
            }
        }
        Ok(worst)
    })?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    out.push(gated("parseval_random_fields", g, 2 * (K + 1), 1e-9, || {
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let c: SpectralCoeffs = random_coeffs(&mut rng, K, &bank, |_, _| true);
            let extra = restrict_two_form(&poly_two_form(2, &mut rng), g);
            let alpha = c.reconstruct(&bank, g).axpy(0.3, &extra)?;
            let d = decompose(&alpha, K, &bank, g)?;
            let err = (d.norm_sq - d.captured_norm_sq() - d.remainder * d.remainder).abs() / d.norm_sq;
            worst = worst.max(err);
        }
        Ok(worst)
    })?);
    let mut resid = 0.0f64;
    let mut det = 0.0f64;
    for i in 0..100 {
        let sign = if i % 2 == 0 { Sign::Plus } else { Sign::Minus };
        let norm = rng.random_range(0.5..4.0);
        let w1 = random_self_dual(&mut rng, sign, norm);
        let w2 = random_self_dual(&mut rng, sign, norm);
        let r = so4_transport(&w1, &w2)?;
        let p = pullback_constant(&r, &w1);
        for a in 0..4 {
            for b in 0..4 {
                resid = resid.max((p[a][b] - w2[a][b]).abs());
            }
        }
        det = det.max((r.determinant() - 1.0).abs().max((r.transpose() * r - Matrix4::identity()).abs().max()));
    }
    out.push(Check::measure("so4_transport_residual", resid, 1e-9));
    out.push(Check::measure("so4_transport_special_orthogonal", det, 1e-12));
    out.push(gated("hopf_form_in_e0_plus", g, 2, 1e-9, || {
        let d = decompose(&alpha_hopf(g), K, &bank, g)?;
        let p = d.projection_norm_sq(0, Sign::Plus);
        Ok(((p - 32.0 * PI * PI) / (32.0 * PI * PI)).abs().max(d.remainder))
    })?);
    Ok(out)
}

#[derive(Debug, Serialize)]
struct VerifyResults<'a> {
    passed: bool,
    failed: usize,
    skipped: usize,
    checks: &'a [Check],
}

/// Built-in spec or a path to a map CSV.
pub fn load_map(spec: &str, g: &GridSpec) -> Result<(MapField, Option<f64>)> {
    let path = Path::new(spec);
    if spec.ends_with(".csv") || path.is_file() {
        let (m, correction) = MapField::read_csv(File::open(path)?)?;
        if m.len() != g.len() {
            return Err(Error::LengthMismatch { expected: g.len(), got: m.len() });
        }
        return Ok((m, Some(correction)));
    }
    Ok((MapField::from_analytic(AnalyticMap::parse(spec)?, g), None))
}

#[derive(Debug, Serialize)]
struct InvariantResults {
    map: String,
    truncation: usize,
    q_raw: f64,
    q_rounded: i64,
    remainder: f64,
    remainder_flagged: bool,
    closed_residual: f64,
    /// Set when `u*ω` vanishes and `Q` is reported as 0.
    undefined: bool,
    partial_sums: Vec<f64>,
    load_correction: Option<f64>,
}

#[derive(Debug, Serialize)]
struct EnergyRow {
    rho: f64,
    dirichlet: f64,
    skyrme: f64,
    total: f64,
    q: Option<f64>,
    relaxed: Option<f64>,
    slack: Option<f64>,
}

#[derive(Debug, Serialize)]
struct GapResults {
    form: String,
    samples: usize,
    truncation: usize,
    violations: usize,
    /// `min(gap − ¼dist²)`.
    min_margin: f64,
}

#[derive(Debug, Serialize)]
struct FlowRun {
    rho: f64,
    status: FlowStatus,
    iterations: usize,
    reference: f64,
    initial_energy: f64,
    terminal_energy: f64,
    relative_excess: f64,
    grad_norm: f64,
    q_terminal: f64,
    dist_terminal: f64,
    first_below: Option<usize>,
    alignment_error: Option<f64>,
    trace_csv: String,
    terminal_csv: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: Command,
    config: &'a RunConfig,
    crate_version: &'static str,
    threads: usize,
    wall_time_s: f64,
    outputs: Vec<String>,
}

struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.files.push(name.into());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(v)?;
        s.push('\n');
        self.files.push(name.into());
        fs::write(self.dir.join(name), s)?;
        Ok(())
    }
}

/// Runs one resolved command; returns whether it passed.
pub fn execute(cfg: &RunConfig) -> Result<bool> {
    let start = Instant::now();
    let g = build_grid(cfg.grid.0, cfg.grid.1)?;
    let mut out = Output::new(&cfg.out)?;
    let passed = match cfg.command {
        Command::VerifyGeometry | Command::VerifyForms | Command::VerifySpectral => {
            let checks = match cfg.command {
                Command::VerifyGeometry => geometry_checks(&g)?,
                Command::VerifyForms => forms_checks(&g, cfg.seed)?,
                _ => spectral_checks(&g, cfg.seed)?,
            };
            let failed = checks.iter().filter(|c| c.status == CheckStatus::Fail).count();
            let skipped = checks.iter().filter(|c| c.status == CheckStatus::Skipped).count();
            for c in &checks {
                let m = c.measured.map(|v| format!("{v:.3e}")).unwrap_or_else(|| "-".into());
                println!("{:<8} {:<36} {:>11} <= {:.1e}", format!("{:?}", c.status).to_lowercase(), c.name, m, c.threshold);
            }
            if cfg.command == Command::VerifySpectral {
                let mut w = out.create("eigenbasis.txt")?;
                for b in SpectralBank::build(3)?.iter() {
                    b.write_text(&mut w)?;
                }
            }
            out.json("results.json", &VerifyResults { passed: failed == 0, failed, skipped, checks: &checks })?;
            failed == 0
        }
        Command::Invariant => {
            let (u, correction) = load_map(&cfg.map, &g)?;
            let bank = SpectralBank::build(cfg.trunc)?;
            let pb = pullback_area(&u, &g)?;
            let res = if l2_inner(&pb, &pb, &g)?.sqrt() < 1e-12 {
                InvariantResults {
                    map: cfg.map.clone(),
                    truncation: cfg.trunc,
                    q_raw: 0.0,
                    q_rounded: 0,
                    remainder: 0.0,
                    remainder_flagged: false,
                    closed_residual: 0.0,
                    undefined: true,
                    partial_sums: vec![0.0; cfg.trunc + 1],
                    load_correction: correction,
                }
            } else {
                let q = hopf_invariant_map(&u, cfg.trunc, &bank, &g)?;
                InvariantResults {
                    map: cfg.map.clone(),
                    truncation: cfg.trunc,
                    q_raw: q.q,
                    q_rounded: q.q.round() as i64,
                    remainder: q.remainder,
                    remainder_flagged: q.remainder_flagged,
                    closed_residual: q.closed_residual,
                    undefined: false,
                    partial_sums: q.partial.clone(),
                    load_correction: correction,
                }
            };
            println!("Q = {:.12} (K = {}, remainder {:.3e})", res.q_raw, res.truncation, res.remainder);
            let mut w = csv::Writer::from_writer(out.create("q_partial.csv")?);
            w.write_record(["k", "q_partial"])?;
            for (k, v) in res.partial_sums.iter().enumerate() {
                w.write_record([k.to_string(), format!("{v:.17e}")])?;
            }
            w.flush()?;
            out.json("results.json", &res)?;
            true
        }
        Command::Energy => {
            let (u, _) = load_map(&cfg.map, &g)?;
            let bank = SpectralBank::build(cfg.trunc)?;
            let pb = pullback_area(&u, &g)?;
            let q = if l2_inner(&pb, &pb, &g)?.sqrt() < 1e-12 { None } else { Some(hopf_invariant_map(&u, cfg.trunc, &bank, &g)?.q) };
            let (i1, i2) = (i_q(&pb, 1, &g)?, i_q(&pb, 2, &g)?);
            let mut rows = Vec::new();
            for &rho in &cfg.rho {
                let e = fs_energy(&u, rho, &g)?;
                let relaxed = match q {
                    Some(q) if q > ADMISSIBLE_Q => Some(relaxed_from_parts(q, i1, i2, rho)?),
                    _ => None,
                };
                println!("rho = {rho}: FS = {:.12}", e.total);
                rows.push(EnergyRow {
                    rho,
                    dirichlet: e.dirichlet,
                    skyrme: e.skyrme,
                    total: e.total,
                    q,
                    relaxed,
                    slack: relaxed.map(|r| e.total - r),
                });
            }
            let mut w = csv::Writer::from_writer(out.create("energy.csv")?);
            w.write_record(["rho", "dirichlet", "skyrme", "total", "q", "relaxed", "slack"])?;
            let f = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
            for r in &rows {
                w.write_record([f(Some(r.rho)), f(Some(r.dirichlet)), f(Some(r.skyrme)), f(Some(r.total)), f(r.q), f(r.relaxed), f(r.slack)])?;
            }
            w.flush()?;
            out.json("results.json", &rows)?;
            true
        }
        Command::Gap => {
            let bank = SpectralBank::build(cfg.trunc)?;
            let base = alpha_hopf(&g);
            let n = if cfg.form == "hopf" { 1 } else { cfg.samples };
            let mut w = csv::Writer::from_writer(out.create("gap.csv")?);
            w.write_record(["sample", "gap", "quarter_dist_sq", "q", "holds"])?;
            let mut violations = 0;
            let mut min_margin = f64::INFINITY;
            for i in 0..n {
                let alpha = if cfg.form == "hopf" {
                    base.clone()
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    rng.set_stream(i as u64);
                    let c = random_coeffs(&mut rng, cfg.trunc, &bank, |_, _| true);
                    let (a, b) = (rng.random_range(-1.5..1.5), rng.random_range(0.0..20.0));
                    base.scaled(a).axpy(b, &c.reconstruct(&bank, &g))?
                };
                let r = faddeev_gap(&alpha, cfg.trunc, &bank, &g)?;
                violations += usize::from(!r.holds);
                min_margin = min_margin.min(r.gap - r.quarter_dist_sq);
                w.write_record([i.to_string(), format!("{:.17e}", r.gap), format!("{:.17e}", r.quarter_dist_sq), format!("{:.17e}", r.q), r.holds.to_string()])?;
            }
            w.flush()?;
            println!("gap: {violations} violations in {n} forms, min margin {min_margin:.3e}");
            out.json("results.json", &GapResults { form: cfg.form.clone(), samples: n, truncation: cfg.trunc, violations, min_margin })?;
            violations == 0
        }
        Command::Coercivity => {
            let bank = SpectralBank::build(cfg.trunc)?;
            let direction = parse_direction(&cfg.direction)?;
            let mut w = csv::Writer::from_writer(out.create("coercivity.csv")?);
            w.write_record(["rho", "sample", "radius", "distance", "ratio"])?;
            let mut reports = Vec::new();
            let mut all_passed = true;
            for &rho in &cfg.rho {
                let pc = ProbeConfig { rho, epsilon0: cfg.eps, samples: cfg.samples, truncation: cfg.trunc, direction, seed: cfg.seed };
                let mut r = coercivity_probe(&pc, &bank, &g)?;
                for (i, s) in r.series.iter().enumerate() {
                    w.write_record([format!("{rho:.17e}"), i.to_string(), format!("{:.17e}", s[0]), format!("{:.17e}", s[1]), format!("{:.17e}", s[2])])?;
                }
                println!("rho = {rho}: min ratio {:.6e}, {} violations", r.min_ratio, r.violations);
                all_passed &= r.passed();
                r.series.clear();
                reports.push(r);
            }
            w.flush()?;
            out.json("results.json", &reports)?;
            all_passed
        }
        Command::Flow => {
            let bank = SpectralBank::build(flow_bank_k(cfg))?;
            let start = perturbed_start(&cfg.perturbation, &bank, &g)?;
            let mut runs = Vec::new();
            for (i, &rho) in cfg.rho.iter().enumerate() {
                let fc = FlowConfig { rho, ..cfg.flow.clone() };
                let trace = run_flow(&start.map, &fc, &bank, &g)?;
                let reference = hopf_reference_energy(rho, &g)?;
                let (trace_csv, terminal_csv) = (format!("flow_{i}.csv"), format!("terminal_{i}.csv"));
                trace.write_csv(out.create(&trace_csv)?)?;
                trace.terminal.write_csv(out.create(&terminal_csv)?)?;
                let last = trace.final_record();
                println!("rho = {rho}: {:?} after {} iterations, energy {:.12} (reference {:.12})", trace.status, last.iteration, last.energy, reference);
                runs.push(FlowRun {
                    rho,
                    status: trace.status,
                    iterations: last.iteration,
                    reference,
                    initial_energy: trace.records[0].energy,
                    terminal_energy: last.energy,
                    relative_excess: (last.energy - reference) / reference,
                    grad_norm: last.grad_norm,
                    q_terminal: last.q_estimate,
                    dist_terminal: last.dist_to_e01,
                    first_below: trace.first_below(reference * (1.0 - cfg.tolerance)),
                    alignment_error: start.alignment_error,
                    trace_csv,
                    terminal_csv,
                });
            }
            out.json("results.json", &runs)?;
            true
        }
        Command::Sweep => {
            let bank = SpectralBank::build(flow_bank_k(cfg))?;
            let report = stability_sweep(&cfg.rho, &cfg.perturbation, &cfg.flow, cfg.tolerance, &bank, &g)?;
            report.write_csv(out.create("sweep.csv")?)?;
            for r in &report.rows {
                println!("rho = {}: descended = {}, terminal {:.12} vs reference {:.12}", r.rho, r.descended, r.terminal, r.reference);
            }
            out.json("results.json", &report)?;
            true
        }
    };
    let files = out.files.clone();
    out.json(
        "manifest.json",
        &Manifest {
            command: cfg.command,
            config: cfg,
            crate_version: env!("CARGO_PKG_VERSION"),
            threads: rayon::current_num_threads(),
            wall_time_s: start.elapsed().as_secs_f64(),
            outputs: files,
        },
    )?;
    Ok(passed)
}

fn flow_bank_k(cfg: &RunConfig) -> usize {
    let eigen_k = match cfg.perturbation {
        Perturbation::Eigen { k, .. } => k,
        _ => 0,
    };
    cfg.flow.q_truncation.max(eigen_k)
}

/// Exit codes: 0 success, 1 failed check or runtime error, 2 invalid
/// arguments or configuration.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    run(&cli)
}

pub fn run(cli: &Cli) -> i32 {
    let file = match cli.flags.config.as_deref().map(FileConfig::load).transpose() {
        Ok(f) => f.unwrap_or_default(),
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let cfg = match RunConfig::resolve(cli.command, &cli.flags, &file) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match execute(&cfg) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
