//! Maps `S³ → S²` and `S³ → S³` on the grid: the Hopf map, composites with
//! maps of S² given in the stereographic chart, pullbacks of the area form,
//! Dirichlet density, conformality defect and degrees.
//!
//! In this orientation `h(z, w) = (2z̄w, |z|² − |w|²)` equals `π(z̄/w̄)` for the
//! inverse stereographic projection `π`, so a map `ψ` of S² written in the
//! chart as `ζ ↦ f(ζ)` composes to `ψ∘h = π(f(z̄/w̄))`. Homogeneous pairs
//! `(Z, W)` with `ζ = Z/W` keep every composite smooth.

use std::f64::consts::PI;
use std::io::{Read, Write};

use nalgebra::Matrix4;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::collocation::{fourier_matrix, TDiff};
use crate::dual::{CDual, Dual};
use crate::error::{Error, Result};
use crate::forms::{OneFormField, TwoFormField};
use crate::geometry::{dot4, fmt_f64, GridSpec};

pub type V3 = [f64; 3];

fn cross(a: &V3, b: &V3) -> V3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot3(a: &V3, b: &V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Extended complex number for [`stereographic`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtComplex {
    Finite(f64, f64),
    Infinity,
}

/// Inverse stereographic projection `(2z, |z|² − 1)/(|z|² + 1)`, `∞ ↦ (0, 0, 1)`.
pub fn stereographic(z: ExtComplex) -> V3 {
    match z {
        ExtComplex::Infinity => [0.0, 0.0, 1.0],
        ExtComplex::Finite(re, im) => {
            let n = re * re + im * im;
            [2.0 * re / (n + 1.0), 2.0 * im / (n + 1.0), (n - 1.0) / (n + 1.0)]
        }
    }
}

/// `π(Z/W) = (2ZW̄, |Z|² − |W|²)/(|Z|² + |W|²)`.
fn project_pair(z: CDual, w: CDual) -> [Dual; 3] {
    let zw = z * w.conj();
    let (nz, nw) = (z.norm_sq(), w.norm_sq());
    let den = nz + nw;
    [zw.re.scale(2.0) / den, zw.im.scale(2.0) / den, (nz - nw) / den]
}

/// `h(z, w) = (2z̄w, |z|² − |w|²)` for a unit point `(Re z, Im z, Re w, Im w)`.
pub fn hopf_map(x: &[f64; 4]) -> V3 {
    let z = (x[0], x[1]);
    let w = (x[2], x[3]);
    // z̄w
    let re = z.0 * w.0 + z.1 * w.1;
    let im = z.0 * w.1 - z.1 * w.0;
    [2.0 * re, 2.0 * im, z.0 * z.0 + z.1 * z.1 - w.0 * w.0 - w.1 * w.1]
}

/// A map of S² applied after the Hopf map.
#[derive(Debug, Clone, PartialEq)]
pub enum SphereMap {
    Identity,
    /// `ζ ↦ ζⁿ` in the chart; degree `n`.
    Power(u32),
    /// `ζ ↦ (aζ + b)/(cζ + d)` with complex `[a, b, c, d]`; degree 1.
    Mobius([(f64, f64); 4]),
    /// `y ↦ (s·y₁, y₂, y₃)/|·|`, an equatorial stretch; degree 1, not conformal for `s ≠ 1`.
    Stretch(f64),
    /// `ζ ↦ ζ̄`; degree −1.
    Conjugate,
}

impl SphereMap {
    pub fn degree(&self) -> i64 {
        match self {
            SphereMap::Power(n) => *n as i64,
            SphereMap::Conjugate => -1,
            _ => 1,
        }
    }

    /// Acts on a homogeneous pair with `ζ = Z/W` and returns the image point.
    fn apply(&self, z: CDual, w: CDual) -> [Dual; 3] {
        match self {
            SphereMap::Identity => project_pair(z, w),
            SphereMap::Power(n) => project_pair(z.powu(*n), w.powu(*n)),
            SphereMap::Mobius([a, b, c, d]) => {
                let c_ = |p: &(f64, f64)| CDual::cst(p.0, p.1);
                project_pair(c_(a) * z + c_(b) * w, c_(c) * z + c_(d) * w)
            }
            SphereMap::Conjugate => project_pair(z.conj(), w.conj()),
            SphereMap::Stretch(s) => {
                let y = project_pair(z, w);
                let v = [y[0].scale(*s), y[1], y[2]];
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                [v[0] / n, v[1] / n, v[2] / n]
            }
        }
    }

    /// Evaluates on a point of S² through the chart pair `(y₁ + iy₂, 1 − y₃)`.
    pub fn eval_s2(&self, y: &V3) -> V3 {
        if (1.0 - y[2]).abs() < 1e-300 {
            let far = self.apply(CDual::cst(1.0, 0.0), CDual::cst(0.0, 0.0));
            return far.map(|d| d.v);
        }
        self.apply(CDual::cst(y[0], y[1]), CDual::cst(1.0 - y[2], 0.0)).map(|d| d.v)
    }

    fn eval_s2_dual(&self, y: [Dual; 3]) -> [Dual; 3] {
        self.apply(CDual::new(y[0], y[1]), CDual::new(Dual::cst(1.0) - y[2], Dual::cst(0.0)))
    }

    /// Jacobian of `ψ` against the area form at `y`: `ψ*ω_{S²} = J·ω_{S²}`.
    pub fn area_jacobian(&self, y: &V3) -> f64 {
        // orthonormal tangent pair (a, b) with a × b = y
        let seed = if y[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let mut a = cross(&seed, y);
        let na = dot3(&a, &a).sqrt();
        a.iter_mut().for_each(|v| *v /= na);
        let b = cross(y, &a);
        let val = self.eval_s2(y);
        let dir = |t: &V3| -> V3 {
            let yd = std::array::from_fn(|i| Dual::new(y[i], t[i]));
            self.eval_s2_dual(yd).map(|d| d.d)
        };
        dot3(&val, &cross(&dir(&a), &dir(&b)))
    }
}

/// Closed-form maps `S³ → S²` with exact differentials.
#[derive(Debug, Clone, PartialEq)]
pub enum AnalyticMap {
    Constant(V3),
    /// `ψ∘h∘R`; `R = None` is the identity.
    Hopf { rotation: Option<Matrix4<f64>>, psi: SphereMap },
}

impl AnalyticMap {
    pub fn hopf() -> Self {
        AnalyticMap::Hopf { rotation: None, psi: SphereMap::Identity }
    }

    pub fn rotated_hopf(r: Matrix4<f64>) -> Self {
        AnalyticMap::Hopf { rotation: Some(r), psi: SphereMap::Identity }
    }

    pub fn composed(psi: SphereMap) -> Self {
        AnalyticMap::Hopf { rotation: None, psi }
    }

    /// Parses a built-in map name: `hopf`, `hopf-rot:SEED`, `psiN-hopf`,
    /// `mobius-hopf`, `stretch-hopf[:S]`, `conj-hopf`, `constant`.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        if spec == "hopf" {
            return Ok(Self::hopf());
        }
        if spec == "constant" {
            return Ok(AnalyticMap::Constant([0.0, 0.0, 1.0]));
        }
        if let Some(seed) = spec.strip_prefix("hopf-rot:") {
            let seed: u64 = seed.parse().map_err(|_| Error::UnknownMap(spec.into()))?;
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            return Ok(Self::rotated_hopf(random_rotation(&mut rng)));
        }
        if spec == "mobius-hopf" {
            return Ok(Self::composed(SphereMap::Mobius([(1.0, 0.0), (0.5, 0.2), (-0.3, 0.1), (1.0, 0.0)])));
        }
        if spec == "conj-hopf" {
            return Ok(Self::composed(SphereMap::Conjugate));
        }
        if let Some(rest) = spec.strip_prefix("stretch-hopf") {
            let s = match rest.strip_prefix(':') {
                Some(v) => v.parse().map_err(|_| Error::UnknownMap(spec.into()))?,
                None if rest.is_empty() => 2.0,
                None => return Err(Error::UnknownMap(spec.into())),
            };
            return Ok(Self::composed(SphereMap::Stretch(s)));
        }
        if let Some(n) = spec.strip_prefix("psi").and_then(|r| r.strip_suffix("-hopf")) {
            let n: u32 = n.parse().map_err(|_| Error::UnknownMap(spec.into()))?;
            if n == 0 {
                return Err(Error::UnknownMap(spec.into()));
            }
            return Ok(Self::composed(SphereMap::Power(n)));
        }
        Err(Error::UnknownMap(spec.into()))
    }

    pub fn eval_dual(&self, x: [Dual; 4]) -> [Dual; 3] {
        match self {
            AnalyticMap::Constant(c) => c.map(Dual::cst),
            AnalyticMap::Hopf { rotation, psi } => {
                let y = match rotation {
                    None => x,
                    Some(r) => std::array::from_fn(|i| {
                        (0..4).fold(Dual::cst(0.0), |acc, j| acc + x[j].scale(r[(i, j)]))
                    }),
                };
                // h = π(z̄/w̄)
                let zbar = CDual::new(y[0], -y[1]);
                let wbar = CDual::new(y[2], -y[3]);
                psi.apply(zbar, wbar)
            }
        }
    }

    pub fn eval(&self, x: &[f64; 4]) -> V3 {
        self.eval_dual(x.map(Dual::cst)).map(|d| d.v)
    }

    /// Directional derivative along an ambient tangent vector.
    pub fn derivative(&self, x: &[f64; 4], v: &[f64; 4]) -> V3 {
        self.eval_dual(std::array::from_fn(|i| Dual::new(x[i], v[i]))).map(|d| d.d)
    }
}

/// Haar-random element of SO(4).
pub fn random_rotation<R: Rng>(rng: &mut R) -> Matrix4<f64> {
    let m = Matrix4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = m.qr();
    let mut q = qr.q();
    let r = qr.r();
    for i in 0..4 {
        if r[(i, i)] < 0.0 {
            for j in 0..4 {
                q[(j, i)] = -q[(j, i)];
            }
        }
    }
    if q.determinant() < 0.0 {
        for j in 0..4 {
            q[(j, 0)] = -q[(j, 0)];
        }
    }
    q
}

/// S²-valued field on the grid.
#[derive(Debug, Clone)]
pub struct MapField {
    pub values: Vec<V3>,
    pub analytic: Option<AnalyticMap>,
}

impl MapField {
    pub fn from_analytic(map: AnalyticMap, g: &GridSpec) -> Self {
        let values = g.ambient().iter().map(|x| map.eval(x)).collect();
        Self { values, analytic: Some(map) }
    }

    /// Nodal values without an evaluator; every value must be a unit vector.
    pub fn from_values(values: Vec<V3>) -> Result<Self> {
        for (k, v) in values.iter().enumerate() {
            let n = dot3(v, v).sqrt();
            if !n.is_finite() || (n - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!("value at node {k} has norm {n}")));
            }
        }
        Ok(Self { values, analytic: None })
    }

    /// Normalizes each value and returns the largest correction `||v| − 1|`.
    pub fn from_values_normalized(mut values: Vec<V3>) -> Result<(Self, f64)> {
        let mut worst = 0.0f64;
        for (k, v) in values.iter_mut().enumerate() {
            let n = dot3(v, v).sqrt();
            if !(n.is_finite() && n > 0.0) {
                return Err(Error::InvalidParameter(format!("value at node {k} cannot be normalized")));
            }
            worst = worst.max((n - 1.0).abs());
            v.iter_mut().for_each(|c| *c /= n);
        }
        Ok((Self { values, analytic: None }, worst))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Drops the evaluator so that derivatives come from collocation.
    pub fn nodal(&self) -> Self {
        Self { values: self.values.clone(), analytic: None }
    }

    /// `∂_{τᵢ}u` at every node, `i = 1, 2, 3`.
    pub fn frame_derivatives(&self, g: &GridSpec) -> Result<[Vec<V3>; 3]> {
        if self.len() != g.len() {
            return Err(Error::GridMismatch);
        }
        match &self.analytic {
            Some(map) => Ok(std::array::from_fn(|i| {
                g.ambient().iter().zip(g.frames()).map(|(x, f)| map.derivative(x, &f.tau[i])).collect()
            })),
            None => Ok(collocation_derivatives(&self.values, g)),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["node", "u1", "u2", "u3"])?;
        for (k, v) in self.values.iter().enumerate() {
            w.write_record([k.to_string(), fmt_f64(v[0]), fmt_f64(v[1]), fmt_f64(v[2])])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `(node, u1, u2, u3)` rows, re-normalizing; returns the largest correction.
    pub fn read_csv<R: Read>(input: R) -> Result<(Self, f64)> {
        let mut r = csv::Reader::from_reader(input);
        let mut values = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != 4 {
                return Err(Error::Parse(format!("row {row}: expected 4 fields")));
            }
            let node: usize = rec[0].trim().parse().map_err(|e| Error::Parse(format!("row {row}: {e}")))?;
            if node != row {
                return Err(Error::Parse(format!("row {row}: node index {node} out of order")));
            }
            let mut v = [0.0; 3];
            for i in 0..3 {
                v[i] = rec[i + 1].trim().parse().map_err(|e| Error::Parse(format!("row {row}: {e}")))?;
            }
            values.push(v);
        }
        Self::from_values_normalized(values)
    }
}

fn collocation_derivatives<const D: usize>(values: &[[f64; D]], g: &GridSpec) -> [Vec<[f64; D]>; 3] {
    let coll = g.collocation();
    let comps: Vec<[Vec<f64>; 3]> =
        (0..D).map(|c| coll.frame_derivatives(&values.iter().map(|v| v[c]).collect::<Vec<_>>())).collect();
    std::array::from_fn(|i| (0..values.len()).map(|k| std::array::from_fn(|c| comps[c][i][k])).collect())
}

/// `u*ω_{S²}` with `bᵢ = u·(∂_{τⱼ}u × ∂_{τₖ}u)`.
pub fn pullback_area(u: &MapField, g: &GridSpec) -> Result<TwoFormField> {
    let du = u.frame_derivatives(g)?;
    let mut out = TwoFormField::zeros(u.len());
    for k in 0..u.len() {
        for i in 0..3 {
            let (j, l) = ((i + 1) % 3, (i + 2) % 3);
            out.c[i][k] = dot3(&u.values[k], &cross(&du[j][k], &du[l][k]));
        }
    }
    Ok(out)
}

/// `|du|² = Σᵢ |∂_{τᵢ}u|²`.
pub fn dirichlet_density(u: &MapField, g: &GridSpec) -> Result<Vec<f64>> {
    let du = u.frame_derivatives(g)?;
    Ok((0..u.len()).map(|k| (0..3).map(|i| dot3(&du[i][k], &du[i][k])).sum()).collect())
}

/// `¼|du∧du|² = Σᵢ |∂_{τⱼ}u × ∂_{τₖ}u|²`.
pub fn quarter_wedge_norm_sq(u: &MapField, g: &GridSpec) -> Result<Vec<f64>> {
    let du = u.frame_derivatives(g)?;
    Ok((0..u.len())
        .map(|k| {
            (0..3)
                .map(|i| {
                    let c = cross(&du[(i + 1) % 3][k], &du[(i + 2) % 3][k]);
                    dot3(&c, &c)
                })
                .sum()
        })
        .collect())
}

/// `½|du|² − |u*ω|`, nonnegative up to rounding; zero where `u` is
/// horizontally weakly conformal.
pub fn conformality_defect(u: &MapField, g: &GridSpec) -> Result<Vec<f64>> {
    let e = dirichlet_density(u, g)?;
    let a = pullback_area(u, g)?.pointwise_norm();
    Ok(e.iter().zip(&a).map(|(e, a)| 0.5 * e - a).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DegreeReport {
    pub raw: f64,
    pub rounded: i64,
    /// `|raw − rounded|`.
    pub gap: f64,
}

impl DegreeReport {
    fn from_raw(raw: f64) -> Self {
        let rounded = raw.round();
        Self { raw, rounded: rounded as i64, gap: (raw - rounded).abs() }
    }
}

/// Product grid on S² parametrized by `y = (sin 2t e^{iφ}, −cos 2t)`, which
/// is the chart point `ζ = tan t · e^{iφ}`.
#[derive(Debug, Clone)]
pub struct S2Grid {
    n_t: usize,
    n_ang: usize,
    t: Vec<f64>,
    wx: Vec<f64>,
    tdiff: TDiff,
    dphi: Vec<f64>,
}

impl S2Grid {
    pub fn new(n_t: usize, n_ang: usize) -> Result<Self> {
        // same Gauss–Legendre nodes in x = cos 2t as the S³ grid
        let g = crate::geometry::build_grid(n_t, n_ang)?;
        let wx = g.t_weights().iter().map(|w| 4.0 * w).collect();
        Ok(Self {
            n_t,
            n_ang,
            t: g.t_nodes().to_vec(),
            wx,
            tdiff: TDiff::new(g.t_nodes(), g.x_nodes()),
            dphi: fourier_matrix(n_ang),
        })
    }

    pub fn len(&self) -> usize {
        self.n_t * self.n_ang
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Node points, `φ` fastest.
    pub fn points(&self) -> Vec<V3> {
        let h = 2.0 * PI / self.n_ang as f64;
        let mut out = Vec::with_capacity(self.len());
        for &t in &self.t {
            for j in 0..self.n_ang {
                let (s, c) = (2.0 * t).sin_cos();
                let (sp, cp) = (j as f64 * h).sin_cos();
                out.push([s * cp, s * sp, -c]);
            }
        }
        out
    }

    /// Samples `ψ` through the chart pair `(sin t e^{iφ}, cos t)`, which avoids
    /// the chart singularity altogether.
    pub fn sample_map(&self, psi: &SphereMap) -> Vec<V3> {
        let h = 2.0 * PI / self.n_ang as f64;
        let mut out = Vec::with_capacity(self.len());
        for &t in &self.t {
            for j in 0..self.n_ang {
                let (st, ct) = t.sin_cos();
                let (sp, cp) = (j as f64 * h).sin_cos();
                let z = CDual::cst(st * cp, st * sp);
                let w = CDual::cst(ct, 0.0);
                out.push(psi.apply(z, w).map(|d| d.v));
            }
        }
        out
    }
}

/// `(1/4π)∫ψ*ω_{S²}` from samples, with collocation derivatives in `(t, φ)`.
pub fn degree_s2(values: &[V3], s2: &S2Grid) -> Result<DegreeReport> {
    if values.len() != s2.len() {
        return Err(Error::LengthMismatch { expected: s2.len(), got: values.len() });
    }
    let (nt, n) = (s2.n_t, s2.n_ang);
    let hh = n / 2;
    let mut dt = vec![[0.0; 3]; values.len()];
    let mut dp = vec![[0.0; 3]; values.len()];
    for c in 0..3 {
        for it in 0..nt {
            for j in 0..n {
                dp[it * n + j][c] = (0..n).map(|l| s2.dphi[j * n + l] * values[it * n + l][c]).sum();
            }
        }
        // parity split under φ ↦ φ + π; class a has the form (sin t cos t)ᵃ q(x)
        for j in 0..hh {
            let even: Vec<f64> = (0..nt).map(|it| 0.5 * (values[it * n + j][c] + values[it * n + j + hh][c])).collect();
            let odd: Vec<f64> = (0..nt).map(|it| 0.5 * (values[it * n + j][c] - values[it * n + j + hh][c])).collect();
            let (m0, m1) = (s2.tdiff.matrix(0, 0), s2.tdiff.matrix(1, 1));
            for it in 0..nt {
                let de: f64 = (0..nt).map(|l| m0[it * nt + l] * even[l]).sum();
                let dd: f64 = (0..nt).map(|l| m1[it * nt + l] * odd[l]).sum();
                dt[it * n + j][c] = de + dd;
                dt[it * n + j + hh][c] = de - dd;
            }
        }
    }
    let h = 2.0 * PI / n as f64;
    let mut total = 0.0;
    for it in 0..nt {
        // dt = dx / (2 sin 2t)
        let w = s2.wx[it] * h / (2.0 * (2.0 * s2.t[it]).sin());
        for j in 0..n {
            let k = it * n + j;
            total += w * dot3(&values[k], &cross(&dt[k], &dp[k]));
        }
    }
    // (∂t, ∂φ) is negatively oriented for the outward normal
    Ok(DegreeReport::from_raw(-total / (4.0 * PI)))
}

/// Closed-form maps `S³ → S³`.
#[derive(Debug, Clone, PartialEq)]
pub enum S3Analytic {
    Identity,
    Rotation(Matrix4<f64>),
    /// `(z, w) ↦ (e^{iα}z, e^{iα}w)`, the fibre action.
    Phase(f64),
    /// `(z, w) ↦ (z², w)/|(z², w)|`.
    SquareZ,
}

impl S3Analytic {
    pub fn eval_dual(&self, x: [Dual; 4]) -> [Dual; 4] {
        match self {
            S3Analytic::Identity => x,
            S3Analytic::Rotation(r) => {
                std::array::from_fn(|i| (0..4).fold(Dual::cst(0.0), |acc, j| acc + x[j].scale(r[(i, j)])))
            }
            S3Analytic::Phase(a) => {
                let (s, c) = a.sin_cos();
                [
                    x[0].scale(c) - x[1].scale(s),
                    x[0].scale(s) + x[1].scale(c),
                    x[2].scale(c) - x[3].scale(s),
                    x[2].scale(s) + x[3].scale(c),
                ]
            }
            S3Analytic::SquareZ => {
                let z2 = CDual::new(x[0], x[1]).powu(2);
                let n = (z2.norm_sq() + x[2] * x[2] + x[3] * x[3]).sqrt();
                [z2.re / n, z2.im / n, x[2] / n, x[3] / n]
            }
        }
    }

    pub fn eval(&self, x: &[f64; 4]) -> [f64; 4] {
        self.eval_dual(x.map(Dual::cst)).map(|d| d.v)
    }

    pub fn derivative(&self, x: &[f64; 4], v: &[f64; 4]) -> [f64; 4] {
        self.eval_dual(std::array::from_fn(|i| Dual::new(x[i], v[i]))).map(|d| d.d)
    }
}

#[derive(Debug, Clone)]
pub struct S3MapField {
    pub values: Vec<[f64; 4]>,
    pub analytic: Option<S3Analytic>,
}

impl S3MapField {
    pub fn from_analytic(map: S3Analytic, g: &GridSpec) -> Self {
        Self { values: g.ambient().iter().map(|x| map.eval(x)).collect(), analytic: Some(map) }
    }

    pub fn from_values(values: Vec<[f64; 4]>) -> Result<Self> {
        for (k, v) in values.iter().enumerate() {
            let n = dot4(v, v).sqrt();
            if (n - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!("value at node {k} has norm {n}")));
            }
        }
        Ok(Self { values, analytic: None })
    }

    pub fn frame_derivatives(&self, g: &GridSpec) -> Result<[Vec<[f64; 4]>; 3]> {
        if self.values.len() != g.len() {
            return Err(Error::GridMismatch);
        }
        match &self.analytic {
            Some(map) => Ok(std::array::from_fn(|i| {
                g.ambient().iter().zip(g.frames()).map(|(x, f)| map.derivative(x, &f.tau[i])).collect()
            })),
            None => Ok(collocation_derivatives(&self.values, g)),
        }
    }
}

/// `(1/2π²)∫ v*ω_{S³}` with `v*ω_{S³}(τ₁, τ₂, τ₃) = det[v, ∂₁v, ∂₂v, ∂₃v]`.
pub fn degree_s3(v: &S3MapField, g: &GridSpec) -> Result<DegreeReport> {
    let dv = v.frame_derivatives(g)?;
    let dens: Vec<f64> = (0..g.len())
        .map(|k| Matrix4::from_columns(&[v.values[k].into(), dv[0][k].into(), dv[1][k].into(), dv[2][k].into()]).determinant())
        .collect();
    let total = crate::geometry::integrate_scalar(&dens, g)?;
    Ok(DegreeReport::from_raw(total / crate::geometry::VOLUME_S3))
}

/// Checks `|dû|² = ¼|β|² + ¼|du|²` for a lift triple with `h∘û = u` and
/// `β = 2û*θ`; returns the largest nodal residual. The triple itself is
/// validated first.
pub fn lift_identity_check(uhat: &S3MapField, beta: &OneFormField, u: &MapField, g: &GridSpec) -> Result<f64> {
    const TOL: f64 = 1e-8;
    if beta.len() != g.len() || u.len() != g.len() || uhat.values.len() != g.len() {
        return Err(Error::GridMismatch);
    }
    let duh = uhat.frame_derivatives(g)?;
    for k in 0..g.len() {
        let hu = hopf_map(&uhat.values[k]);
        let err = (0..3).map(|i| (hu[i] - u.values[k][i]).abs()).fold(0.0, f64::max);
        if err > TOL {
            return Err(Error::InconsistentTriple(format!("h∘û differs from u by {err:.3e} at node {k}")));
        }
        let y = uhat.values[k];
        let fibre = [-y[1], y[0], -y[3], y[2]];
        for i in 0..3 {
            let expect = 2.0 * dot4(&fibre, &duh[i][k]);
            if (expect - beta.c[i][k]).abs() > TOL {
                return Err(Error::InconsistentTriple(format!("β differs from 2û*θ at node {k}")));
            }
        }
    }
    let du2 = dirichlet_density(u, g)?;
    let mut worst = 0.0f64;
    for k in 0..g.len() {
        let lhs: f64 = (0..3).map(|i| dot4(&duh[i][k], &duh[i][k])).sum();
        let b = beta.at(k);
        let rhs = 0.25 * dot3(&b, &b) + 0.25 * du2[k];
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}
