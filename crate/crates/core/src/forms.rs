//! Differential forms on the grid, stored as coefficients in the orthonormal
//! coframe `(e¹, e², e³)` dual to `(τ₁, τ₂, τ₃)`.
//!
//! 1-forms use the basis `e¹, e², e³`; 2-forms use `e²∧e³, e³∧e¹, e¹∧e²`.
//! With these bases the Hodge star is the identity on coefficient arrays,
//! `a∧b` of two 1-forms is the cross product, and a 1-form wedged with a
//! 2-form is the dot product against `e¹∧e²∧e³ = ω_{S³}`.
//!
//! Frame coefficients are singular along the circles `t = 0, π/2`, so the
//! exterior derivative differentiates the ambient components of a form and
//! contracts the result with the frame again.

use std::collections::HashMap;
use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{fmt_f64, GridSpec};

/// Index pairs `(a, b)`, `a < b`, of the six independent entries of a skew 4×4 matrix.
pub const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// Index triples of the four independent entries of a 3-form on ℝ⁴.
pub const TRIPLES: [(usize, usize, usize); 4] = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)];

pub fn pair_index(a: usize, b: usize) -> (usize, f64) {
    let (lo, hi, s) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let k = PAIRS.iter().position(|&p| p == (lo, hi)).expect("distinct indices");
    (k, s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneFormField {
    /// Coefficients of `e¹, e², e³`.
    pub c: [Vec<f64>; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoFormField {
    /// Coefficients of `e²∧e³, e³∧e¹, e¹∧e²`.
    pub c: [Vec<f64>; 3],
}

macro_rules! field_common {
    ($t:ident) => {
        impl $t {
            pub fn zeros(n: usize) -> Self {
                Self { c: [vec![0.0; n], vec![0.0; n], vec![0.0; n]] }
            }

            pub fn new(c1: Vec<f64>, c2: Vec<f64>, c3: Vec<f64>) -> Result<Self> {
                if c2.len() != c1.len() {
                    return Err(Error::LengthMismatch { expected: c1.len(), got: c2.len() });
                }
                if c3.len() != c1.len() {
                    return Err(Error::LengthMismatch { expected: c1.len(), got: c3.len() });
                }
                if c1.iter().chain(&c2).chain(&c3).any(|v| !v.is_finite()) {
                    return Err(Error::InvalidParameter("non-finite coefficient".into()));
                }
                Ok(Self { c: [c1, c2, c3] })
            }

            /// Constant coefficients at every node.
            pub fn constant(n: usize, v: [f64; 3]) -> Self {
                Self { c: [vec![v[0]; n], vec![v[1]; n], vec![v[2]; n]] }
            }

            pub fn len(&self) -> usize {
                self.c[0].len()
            }

            pub fn is_empty(&self) -> bool {
                self.c[0].is_empty()
            }

            pub fn at(&self, k: usize) -> [f64; 3] {
                [self.c[0][k], self.c[1][k], self.c[2][k]]
            }

            pub fn pointwise_norm(&self) -> Vec<f64> {
                (0..self.len()).map(|k| norm3(&self.at(k))).collect()
            }

            pub fn scaled(&self, s: f64) -> Self {
                Self { c: self.c.clone().map(|v| v.into_iter().map(|x| s * x).collect()) }
            }

            /// `self + s · other`.
            pub fn axpy(&self, s: f64, other: &Self) -> Result<Self> {
                check_len(self.len(), other.len())?;
                let mut out = self.clone();
                for i in 0..3 {
                    for (a, b) in out.c[i].iter_mut().zip(&other.c[i]) {
                        *a += s * b;
                    }
                }
                Ok(out)
            }

            /// CSV with one row `(node, c1, c2, c3)` per node.
            pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
                write_coeff_csv(&self.c, out)
            }

            pub fn read_csv<R: Read>(input: R) -> Result<Self> {
                let c = read_coeff_csv(input)?;
                let [a, b, d] = c;
                Self::new(a, b, d)
            }
        }
    };
}

field_common!(OneFormField);
field_common!(TwoFormField);

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::LengthMismatch { expected, got });
    }
    Ok(())
}

fn check_grid(n: usize, g: &GridSpec) -> Result<()> {
    if n != g.len() {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

pub(crate) fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn write_coeff_csv<W: Write>(c: &[Vec<f64>; 3], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node", "c1", "c2", "c3"])?;
    for k in 0..c[0].len() {
        w.write_record([k.to_string(), fmt_f64(c[0][k]), fmt_f64(c[1][k]), fmt_f64(c[2][k])])?;
    }
    w.flush()?;
    Ok(())
}

fn read_coeff_csv<R: Read>(input: R) -> Result<[Vec<f64>; 3]> {
    let mut r = csv::Reader::from_reader(input);
    let mut c = [Vec::new(), Vec::new(), Vec::new()];
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != 4 {
            return Err(Error::Parse(format!("row {row}: expected 4 fields, got {}", rec.len())));
        }
        let node: usize = rec[0].trim().parse().map_err(|e| Error::Parse(format!("row {row}: {e}")))?;
        if node != row {
            return Err(Error::Parse(format!("row {row}: node index {node} out of order")));
        }
        for i in 0..3 {
            let v: f64 = rec[i + 1].trim().parse().map_err(|e| Error::Parse(format!("row {row}: {e}")))?;
            c[i].push(v);
        }
    }
    Ok(c)
}

// ---------------------------------------------------------------------------
// Homogeneous polynomials on ℝ⁴

/// Exponent tuples of the degree-`k` monomials in four variables, in a fixed
/// lexicographic order.
pub fn monomials(k: usize) -> Vec<[u8; 4]> {
    let mut out = Vec::new();
    for a in (0..=k).rev() {
        for b in (0..=k - a).rev() {
            for c in (0..=k - a - b).rev() {
                out.push([a as u8, b as u8, c as u8, (k - a - b - c) as u8]);
            }
        }
    }
    out
}

pub fn monomial_lookup(k: usize) -> HashMap<[u8; 4], usize> {
    monomials(k).into_iter().enumerate().map(|(i, m)| (m, i)).collect()
}

pub fn eval_monomial(m: &[u8; 4], x: &[f64; 4]) -> f64 {
    x.iter().zip(m).map(|(v, &e)| v.powi(e as i32)).product()
}

/// All degree-`k` monomials evaluated at `x`, in [`monomials`] order.
pub fn eval_monomials(k: usize, x: &[f64; 4]) -> Vec<f64> {
    let mut pw = [[1.0; 16]; 4];
    for i in 0..4 {
        for e in 1..=k.min(15) {
            pw[i][e] = pw[i][e - 1] * x[i];
        }
    }
    let mut out = Vec::with_capacity((k + 1) * (k + 2) * (k + 3) / 6);
    for a in (0..=k).rev() {
        for b in (0..=k - a).rev() {
            let ab = pw[0][a] * pw[1][b];
            for c in (0..=k - a - b).rev() {
                out.push(ab * pw[2][c] * pw[3][k - a - b - c]);
            }
        }
    }
    out
}

/// Partial derivative `∂/∂x_var` of a degree-`k` coefficient table.
pub fn poly_derivative(k: usize, coeffs: &[f64], var: usize) -> Vec<f64> {
    if k == 0 {
        return Vec::new();
    }
    let lower = monomial_lookup(k - 1);
    let mut out = vec![0.0; lower.len()];
    for (m, c) in monomials(k).iter().zip(coeffs) {
        if m[var] > 0 && *c != 0.0 {
            let mut mm = *m;
            mm[var] -= 1;
            out[lower[&mm]] += m[var] as f64 * c;
        }
    }
    out
}

/// 2-form on ℝ⁴ with homogeneous degree-`k` polynomial coefficients.
/// `coeff[p]` holds the table of the `(a, b) = PAIRS[p]` entry; the lower
/// triangle is implied by skew symmetry.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbientPolyForm {
    pub degree: usize,
    pub coeff: [Vec<f64>; 6],
}

impl AmbientPolyForm {
    pub fn zero(degree: usize) -> Self {
        let m = monomials(degree).len();
        Self { degree, coeff: std::array::from_fn(|_| vec![0.0; m]) }
    }

    /// Constant form `Σ_{a<b} m_ab dxᵃ∧dxᵇ` from a skew matrix.
    pub fn constant(m: &[[f64; 4]; 4]) -> Self {
        Self { degree: 0, coeff: std::array::from_fn(|p| vec![m[PAIRS[p].0][PAIRS[p].1]]) }
    }

    /// The constant forms `dx¹∧dx² ± dx³∧dx⁴`, `dx¹∧dx³ ∓ dx²∧dx⁴`,
    /// `dx¹∧dx⁴ ± dx²∧dx³`; `plus` selects the self-dual family.
    pub fn omega0(plus: bool, i: usize) -> Self {
        let s = if plus { 1.0 } else { -1.0 };
        let mut m = [[0.0; 4]; 4];
        let mut set = |a: usize, b: usize, v: f64| {
            m[a][b] = v;
            m[b][a] = -v;
        };
        match i {
            0 => {
                set(0, 1, 1.0);
                set(2, 3, s);
            }
            1 => {
                set(0, 2, 1.0);
                set(1, 3, -s);
            }
            2 => {
                set(0, 3, 1.0);
                set(1, 2, s);
            }
            _ => panic!("constant basis index {i} out of range"),
        }
        Self::constant(&m)
    }

    pub fn skew_at(&self, x: &[f64; 4]) -> [[f64; 4]; 4] {
        let mons = eval_monomials(self.degree, x);
        let mut m = [[0.0; 4]; 4];
        for (p, &(a, b)) in PAIRS.iter().enumerate() {
            let v: f64 = self.coeff[p].iter().zip(&mons).map(|(c, m)| c * m).sum();
            m[a][b] = v;
            m[b][a] = -v;
        }
        m
    }

    /// Constant skew matrix of a degree-0 form.
    pub fn constant_matrix(&self) -> Option<[[f64; 4]; 4]> {
        (self.degree == 0).then(|| self.skew_at(&[0.0; 4]))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { degree: self.degree, coeff: self.coeff.clone().map(|v| v.into_iter().map(|c| s * c).collect()) }
    }

    /// Hodge star on ℝ⁴ with the Euclidean orientation.
    pub fn star(&self) -> Self {
        // *dx¹²=dx³⁴, *dx¹³=−dx²⁴, *dx¹⁴=dx²³ and the converse
        let c = &self.coeff;
        Self {
            degree: self.degree,
            coeff: [c[5].clone(), neg(&c[4]), c[3].clone(), c[2].clone(), neg(&c[1]), c[0].clone()],
        }
    }

    /// Exterior derivative on ℝ⁴; entry `q` belongs to `TRIPLES[q]`.
    pub fn d(&self) -> [Vec<f64>; 4] {
        let k = self.degree;
        TRIPLES.map(|(a, b, c)| {
            let (pbc, _) = pair_index(b, c);
            let (pac, _) = pair_index(a, c);
            let (pab, _) = pair_index(a, b);
            let t1 = poly_derivative(k, &self.coeff[pbc], a);
            let t2 = poly_derivative(k, &self.coeff[pac], b);
            let t3 = poly_derivative(k, &self.coeff[pab], c);
            t1.iter().zip(&t2).zip(&t3).map(|((x, y), z)| x - y + z).collect()
        })
    }

    /// Euclidean divergence `Σ_b ∂_b P_ab` for each `a`, the co-closedness test on ℝ⁴.
    pub fn divergence(&self) -> [Vec<f64>; 4] {
        let k = self.degree;
        let m = if k == 0 { 0 } else { monomials(k - 1).len() };
        std::array::from_fn(|a| {
            let mut out = vec![0.0; m];
            for b in 0..4 {
                if a != b {
                    let (p, s) = pair_index(a, b);
                    for (o, v) in out.iter_mut().zip(poly_derivative(k, &self.coeff[p], b)) {
                        *o += s * v;
                    }
                }
            }
            out
        })
    }
}

fn neg(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| -x).collect()
}

/// `τ_jᵃτ_kᵇ − τ_jᵇτ_kᵃ` for the pair `(a, b)` and the frame pair of component `i`.
pub(crate) fn bivector(tau: &[[f64; 4]; 3], i: usize, a: usize, b: usize) -> f64 {
    let (j, k) = ((i + 1) % 3, (i + 2) % 3);
    tau[j][a] * tau[k][b] - tau[j][b] * tau[k][a]
}

/// Evaluates `P` on the frame pairs: `bᵢ = P(τⱼ, τₖ)` for cyclic `(i, j, k)`.
pub fn restrict_two_form(p: &AmbientPolyForm, g: &GridSpec) -> TwoFormField {
    let v: Vec<[f64; 3]> = (0..g.len()).into_par_iter().map(|k| restrict_at(p, &g.ambient()[k], &g.frames()[k].tau)).collect();
    TwoFormField { c: std::array::from_fn(|i| v.iter().map(|x| x[i]).collect()) }
}

/// Frame coefficients of `P` at a single point.
pub fn restrict_at(p: &AmbientPolyForm, x: &[f64; 4], tau: &[[f64; 4]; 3]) -> [f64; 3] {
    let m = p.skew_at(x);
    std::array::from_fn(|i| PAIRS.iter().map(|&(a, b)| m[a][b] * bivector(tau, i, a, b)).sum())
}

/// 1-form on ℝ⁴ with homogeneous degree-`k` polynomial coefficients of `dx¹..dx⁴`.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbientPolyOneForm {
    pub degree: usize,
    pub coeff: [Vec<f64>; 4],
}

impl AmbientPolyOneForm {
    /// `θ = −x²dx¹ + x¹dx² − x⁴dx³ + x³dx⁴`.
    pub fn theta() -> Self {
        let lk = monomial_lookup(1);
        let e = |i: usize| {
            let mut m = [0u8; 4];
            m[i] = 1;
            lk[&m]
        };
        let mut coeff = std::array::from_fn(|_| vec![0.0; 4]);
        coeff[0][e(1)] = -1.0;
        coeff[1][e(0)] = 1.0;
        coeff[2][e(3)] = -1.0;
        coeff[3][e(2)] = 1.0;
        Self { degree: 1, coeff }
    }

    /// Exact exterior derivative, a degree `k − 1` polynomial 2-form.
    pub fn d(&self) -> AmbientPolyForm {
        let k = self.degree;
        if k == 0 {
            return AmbientPolyForm::zero(0);
        }
        let coeff = PAIRS.map(|(a, b)| {
            let x = poly_derivative(k, &self.coeff[b], a);
            let y = poly_derivative(k, &self.coeff[a], b);
            x.iter().zip(&y).map(|(p, q)| p - q).collect()
        });
        AmbientPolyForm { degree: k - 1, coeff }
    }
}

pub fn restrict_one_form(a: &AmbientPolyOneForm, g: &GridSpec) -> OneFormField {
    let n = g.len();
    let mut out = OneFormField::zeros(n);
    for k in 0..n {
        let mons = eval_monomials(a.degree, &g.ambient()[k]);
        let v: [f64; 4] = std::array::from_fn(|i| a.coeff[i].iter().zip(&mons).map(|(c, m)| c * m).sum());
        for i in 0..3 {
            out.c[i][k] = crate::geometry::dot4(&v, &g.frames()[k].tau[i]);
        }
    }
    out
}

/// Restriction of the exact derivative of a 2-form, as the coefficient of `ω_{S³}`.
pub fn restrict_three_form_of_d(p: &AmbientPolyForm, g: &GridSpec) -> Vec<f64> {
    let dp = p.d();
    let deg = p.degree.saturating_sub(1);
    (0..g.len())
        .map(|k| {
            if p.degree == 0 {
                return 0.0;
            }
            let x = &g.ambient()[k];
            let mons = eval_monomials(deg, x);
            let tau = &g.frames()[k].tau;
            let mut v = 0.0;
            for (q, &(a, b, c)) in TRIPLES.iter().enumerate() {
                let coef: f64 = dp[q].iter().zip(&mons).map(|(c, m)| c * m).sum();
                if coef == 0.0 {
                    continue;
                }
                let m = nalgebra::Matrix3::new(
                    tau[0][a], tau[0][b], tau[0][c], tau[1][a], tau[1][b], tau[1][c], tau[2][a], tau[2][b], tau[2][c],
                );
                v += coef * m.determinant();
            }
            v
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Algebra

pub fn wedge_11(a: &OneFormField, b: &OneFormField) -> Result<TwoFormField> {
    if a.len() != b.len() {
        return Err(Error::GridMismatch);
    }
    let mut out = TwoFormField::zeros(a.len());
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        out.c[i] = (0..a.len()).map(|n| a.c[j][n] * b.c[k][n] - a.c[k][n] * b.c[j][n]).collect();
    }
    Ok(out)
}

/// Coefficient of `a∧b` against `ω_{S³}`.
pub fn wedge_12(a: &OneFormField, b: &TwoFormField) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::GridMismatch);
    }
    Ok((0..a.len()).map(|n| a.c[0][n] * b.c[0][n] + a.c[1][n] * b.c[1][n] + a.c[2][n] * b.c[2][n]).collect())
}

pub fn hodge_star_1to2(a: &OneFormField) -> TwoFormField {
    TwoFormField { c: a.c.clone() }
}

pub fn hodge_star_2to1(b: &TwoFormField) -> OneFormField {
    OneFormField { c: b.c.clone() }
}

pub fn exterior_derivative_0(f: &[f64], g: &GridSpec) -> Result<OneFormField> {
    check_grid(f.len(), g)?;
    Ok(OneFormField { c: g.collocation().frame_derivatives(f) })
}

/// Ambient components `Σᵢ aᵢτᵢ` of a 1-form; smooth whenever the form is.
pub fn ambient_vector(a: &OneFormField, g: &GridSpec) -> [Vec<f64>; 4] {
    std::array::from_fn(|c| {
        g.frames().iter().enumerate().map(|(k, f)| (0..3).map(|i| a.c[i][k] * f.tau[i][c]).sum()).collect()
    })
}

/// Uses `da(τⱼ, τₖ) = (D_{τⱼ}A)·τₖ − (D_{τₖ}A)·τⱼ` for the ambient field `A`
/// dual to `a`, so collocation only ever differentiates smooth functions.
pub fn exterior_derivative_1(a: &OneFormField, g: &GridSpec) -> Result<TwoFormField> {
    check_grid(a.len(), g)?;
    let coll = g.collocation();
    let amb = ambient_vector(a, g);
    let da: Vec<[Vec<f64>; 3]> = amb.iter().map(|f| coll.frame_derivatives(f)).collect();
    let mut out = TwoFormField::zeros(a.len());
    for (k, fr) in g.frames().iter().enumerate() {
        for i in 0..3 {
            let (j, l) = ((i + 1) % 3, (i + 2) % 3);
            out.c[i][k] = (0..4).map(|c| da[c][j][k] * fr.tau[l][c] - da[c][l][k] * fr.tau[j][c]).sum();
        }
    }
    Ok(out)
}

/// Coefficient of `dβ` against `ω_{S³}`, via the ambient skew field of `β`.
pub fn exterior_derivative_2(b: &TwoFormField, g: &GridSpec) -> Result<Vec<f64>> {
    check_grid(b.len(), g)?;
    let coll = g.collocation();
    let frames = g.frames();
    let amb: Vec<Vec<f64>> = PAIRS
        .iter()
        .map(|&(p, q)| {
            frames.iter().enumerate().map(|(k, f)| (0..3).map(|i| b.c[i][k] * bivector(&f.tau, i, p, q)).sum()).collect()
        })
        .collect();
    let mut out = vec![0.0; b.len()];
    for (pi, &(p, q)) in PAIRS.iter().enumerate() {
        for i in 0..3 {
            let d = coll.tau(i, &amb[pi]);
            for (k, f) in frames.iter().enumerate() {
                out[k] += d[k] * bivector(&f.tau, i, p, q);
            }
        }
    }
    Ok(out)
}

/// `d*ψ = *d*ψ` for a 1-form, as a scalar field.
pub fn codifferential_1(psi: &OneFormField, g: &GridSpec) -> Result<Vec<f64>> {
    exterior_derivative_2(&hodge_star_1to2(psi), g)
}

/// `d*α = *d*α` for a 2-form, returned as a 2-form via the star so that it
/// can be compared with `α` directly.
pub fn codifferential_2(alpha: &TwoFormField, g: &GridSpec) -> Result<TwoFormField> {
    exterior_derivative_1(&hodge_star_2to1(alpha), g)
}

pub fn integrate(f: &[f64], g: &GridSpec) -> Result<f64> {
    crate::geometry::integrate_scalar(f, g)
}

fn inner_coeffs(a: &[Vec<f64>; 3], b: &[Vec<f64>; 3], g: &GridSpec) -> Result<f64> {
    check_len(a[0].len(), b[0].len())?;
    check_grid(a[0].len(), g)?;
    let w = g.weights();
    Ok((0..w.len()).map(|k| w[k] * (a[0][k] * b[0][k] + a[1][k] * b[1][k] + a[2][k] * b[2][k])).sum())
}

/// Fields of a fixed rank that admit an L² inner product.
pub trait FormField {
    fn coefficients(&self) -> &[Vec<f64>; 3];
}

impl FormField for OneFormField {
    fn coefficients(&self) -> &[Vec<f64>; 3] {
        &self.c
    }
}

impl FormField for TwoFormField {
    fn coefficients(&self) -> &[Vec<f64>; 3] {
        &self.c
    }
}

pub fn l2_inner<F: FormField>(a: &F, b: &F, g: &GridSpec) -> Result<f64> {
    inner_coeffs(a.coefficients(), b.coefficients(), g)
}

pub fn l2_norm<F: FormField>(a: &F, g: &GridSpec) -> Result<f64> {
    Ok(l2_inner(a, a, g)?.max(0.0).sqrt())
}

/// `θ` in the coframe: the dual of `τ₁`, coefficients `(1, 0, 0)`.
pub fn theta_field(g: &GridSpec) -> OneFormField {
    OneFormField::constant(g.len(), [1.0, 0.0, 0.0])
}
