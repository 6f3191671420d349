//! Eigenspaces `E_k^±` of `d*` on closed 2-forms of S³.
//!
//! `E_k^±` is spanned by restrictions of closed, co-closed, (anti-)self-dual
//! 2-forms on ℝ⁴ whose coefficients are homogeneous polynomials of degree
//! `k`; the eigenvalue is `±(k + 2)`. Bases are computed as null spaces of
//! the linear constraint system and orthonormalized with exact sphere
//! moments, so they do not depend on any grid.
//!
//! For a (anti-)self-dual form with `P₁₂ = A`, `P₁₃ = B`, `P₁₄ = C` the
//! restriction to S³ has pointwise norm² `A² + B² + C²`, which turns L²
//! inner products into polynomial moments.

use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, Matrix4, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forms::{
    bivector, codifferential_2, eval_monomials, exterior_derivative_2, l2_norm, monomials, restrict_two_form,
    AmbientPolyForm, OneFormField, TwoFormField, PAIRS,
};
use crate::geometry::GridSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Sign::Plus => '+',
            Sign::Minus => '-',
        }
    }

    pub fn both() -> [Sign; 2] {
        [Sign::Plus, Sign::Minus]
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// `∫_{S³} x^α`, zero unless every exponent is even.
pub fn sphere_moment(e: [u32; 4]) -> f64 {
    if e.iter().any(|v| v % 2 == 1) {
        return 0.0;
    }
    // Γ(j + ½)/√π = (2j−1)!!/2^j and Γ(m + 2) = (m + 1)!
    let mut num = 1.0;
    let mut m = 0u32;
    for &v in &e {
        let j = v / 2;
        m += j;
        for i in 1..=j {
            num *= (2 * i - 1) as f64 / 2.0;
        }
    }
    let den: f64 = (1..=m + 1).map(|i| i as f64).product();
    2.0 * std::f64::consts::PI * std::f64::consts::PI * num / den
}

/// `∫_{S³} pq` for degree-`k` coefficient tables `p` and `q`.
fn moment_matrix(k: usize) -> DMatrix<f64> {
    let mons = monomials(k);
    let n = mons.len();
    DMatrix::from_fn(n, n, |i, j| {
        let e = std::array::from_fn(|c| mons[i][c] as u32 + mons[j][c] as u32);
        sphere_moment(e)
    })
}

/// Orthonormal basis of `E_k^±`.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    pub k: usize,
    pub sign: Sign,
    /// Ambient representatives, orthonormal in `L²(S³)` after restriction.
    pub members: Vec<AmbientPolyForm>,
    pub normalized: bool,
}

impl EigenBasis {
    pub fn dim(&self) -> usize {
        self.members.len()
    }

    pub fn eigenvalue(&self) -> f64 {
        self.sign.value() * (self.k as f64 + 2.0)
    }

    pub fn restricted(&self, g: &GridSpec) -> Vec<TwoFormField> {
        self.members.iter().map(|m| restrict_two_form(m, g)).collect()
    }

    /// Plain-text coefficient tables: one line per nonzero entry
    /// `k sign member a b e1 e2 e3 e4 coefficient` with 1-based `a < b`.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# k sign member a b e1 e2 e3 e4 coefficient")?;
        let mons = monomials(self.k);
        for (mi, m) in self.members.iter().enumerate() {
            for (p, &(a, b)) in PAIRS.iter().enumerate() {
                for (e, c) in mons.iter().zip(&m.coeff[p]) {
                    if *c != 0.0 {
                        writeln!(
                            out,
                            "{} {} {} {} {} {} {} {} {} {:.17e}",
                            self.k,
                            self.sign,
                            mi,
                            a + 1,
                            b + 1,
                            e[0],
                            e[1],
                            e[2],
                            e[3],
                            c
                        )?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// `(A, B, C)` coefficient tables to the six pair entries of an
/// (anti-)self-dual form: `P₁₂=A, P₃₄=sA, P₁₃=B, P₂₄=−sB, P₁₄=C, P₂₃=sC`.
fn assemble(k: usize, s: f64, abc: &[f64]) -> AmbientPolyForm {
    let m = abc.len() / 3;
    let a = &abc[..m];
    let b = &abc[m..2 * m];
    let c = &abc[2 * m..];
    let sc = |v: &[f64], f: f64| v.iter().map(|x| f * x).collect::<Vec<_>>();
    AmbientPolyForm { degree: k, coeff: [a.to_vec(), b.to_vec(), c.to_vec(), sc(c, s), sc(b, -s), sc(a, s)] }
}

/// Matrix of the closedness and co-closedness constraints acting on `(A, B, C)`.
pub fn constraint_matrix(k: usize, sign: Sign) -> DMatrix<f64> {
    let m = monomials(k).len();
    let cols = 3 * m;
    if k == 0 {
        return DMatrix::zeros(0, cols);
    }
    let mut columns = Vec::with_capacity(cols);
    for j in 0..cols {
        let mut e = vec![0.0; cols];
        e[j] = 1.0;
        let p = assemble(k, sign.value(), &e);
        let mut col: Vec<f64> = p.d().into_iter().flatten().collect();
        col.extend(p.divergence().into_iter().flatten());
        columns.push(col);
    }
    let rows = columns[0].len();
    DMatrix::from_fn(rows, cols, |r, c| columns[c][r])
}

/// Null space of `m` as orthonormal columns, from a full SVD.
pub fn null_space(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let cols = m.ncols();
    // pad to at least square so that V is complete
    let rows = m.nrows().max(cols);
    let mut padded = DMatrix::zeros(rows, cols);
    padded.view_mut((0, 0), (m.nrows(), cols)).copy_from(m);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("V requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = rel_tol * smax.max(1.0);
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] <= tol).collect();
    DMatrix::from_fn(cols, keep.len(), |r, c| vt[(keep[c], r)])
}

/// Explicit constant-coefficient basis of `E_0^±`, normalized in L².
pub fn basis_e0(sign: Sign) -> EigenBasis {
    let scale = 1.0 / (std::f64::consts::PI * 2f64.sqrt());
    EigenBasis {
        k: 0,
        sign,
        members: (0..3).map(|i| AmbientPolyForm::omega0(sign == Sign::Plus, i).scaled(scale)).collect(),
        normalized: true,
    }
}

/// Builds an L²-orthonormal basis of `E_k^±` from the constraint null space.
pub fn build_eigenbasis(k: usize, sign: Sign) -> Result<EigenBasis> {
    let cm = constraint_matrix(k, sign);
    let ns = null_space(&cm, 1e-10);
    if ns.ncols() == 0 {
        return Err(Error::EmptyNullSpace { k, sign: sign.as_char() });
    }
    let mom = moment_matrix(k);
    let m = mom.nrows();
    let inner = |x: &[f64], y: &[f64]| -> f64 {
        (0..3)
            .map(|c| {
                let xs = nalgebra::DVectorView::from_slice(&x[c * m..(c + 1) * m], m);
                let ys = nalgebra::DVectorView::from_slice(&y[c * m..(c + 1) * m], m);
                xs.dot(&(&mom * ys))
            })
            .sum()
    };
    let mut vecs: Vec<Vec<f64>> = Vec::new();
    for j in 0..ns.ncols() {
        let mut v: Vec<f64> = ns.column(j).iter().cloned().collect();
        // modified Gram–Schmidt with one re-orthogonalization pass
        for _ in 0..2 {
            for u in &vecs {
                let c = inner(&v, u);
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= c * b);
            }
        }
        let n = inner(&v, &v).sqrt();
        if n < 1e-10 {
            return Err(Error::Degenerate(format!("dependent null-space vector in E_{k}{sign}")));
        }
        v.iter_mut().for_each(|a| *a /= n);
        vecs.push(v);
    }
    let s = sign.value();
    Ok(EigenBasis { k, sign, members: vecs.iter().map(|v| assemble(k, s, v)).collect(), normalized: true })
}

/// Eigenbases for all `k ≤ k_max` and both signs.
#[derive(Debug, Clone)]
pub struct SpectralBank {
    pub k_max: usize,
    plus: Vec<EigenBasis>,
    minus: Vec<EigenBasis>,
}

impl SpectralBank {
    pub fn build(k_max: usize) -> Result<Self> {
        let mut plus = vec![basis_e0(Sign::Plus)];
        let mut minus = vec![basis_e0(Sign::Minus)];
        for k in 1..=k_max {
            plus.push(build_eigenbasis(k, Sign::Plus)?);
            minus.push(build_eigenbasis(k, Sign::Minus)?);
        }
        Ok(Self { k_max, plus, minus })
    }

    pub fn get(&self, k: usize, sign: Sign) -> &EigenBasis {
        match sign {
            Sign::Plus => &self.plus[k],
            Sign::Minus => &self.minus[k],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &EigenBasis> {
        self.plus.iter().zip(&self.minus).flat_map(|(p, m)| [p, m])
    }
}

/// Residuals of the eigen-equation measured with the collocation operators.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EigenCheck {
    pub eigen_residual: f64,
    pub closed_residual: f64,
    pub degenerate: bool,
}

/// `‖d*α − λα‖_{L²}` and `‖dα‖_{L²}` for one field.
pub fn eigen_residual(alpha: &TwoFormField, lambda: f64, g: &GridSpec) -> Result<(f64, f64)> {
    let dstar = codifferential_2(alpha, g)?;
    let r = dstar.axpy(-lambda, alpha)?;
    let d = exterior_derivative_2(alpha, g)?;
    let dn = crate::forms::integrate(&d.iter().map(|v| v * v).collect::<Vec<_>>(), g)?.max(0.0).sqrt();
    Ok((l2_norm(&r, g)?, dn))
}

/// Maximum residuals over the members of `b`, recomputed on `g`.
pub fn verify_eigen(b: &EigenBasis, g: &GridSpec) -> Result<EigenCheck> {
    let mut out = EigenCheck { eigen_residual: 0.0, closed_residual: 0.0, degenerate: b.members.is_empty() };
    for m in &b.members {
        let alpha = restrict_two_form(m, g);
        if l2_norm(&alpha, g)? < 1e-12 {
            out.degenerate = true;
        }
        let (r, d) = eigen_residual(&alpha, b.eigenvalue(), g)?;
        out.eigen_residual = out.eigen_residual.max(r);
        out.closed_residual = out.closed_residual.max(d);
    }
    Ok(out)
}

/// Truncated expansion over `E_k^±`, `k ≤ k_max`.
#[derive(Debug, Clone, Serialize)]
pub struct SpectralCoeffs {
    pub k_max: usize,
    /// `plus[k][i]` is the coefficient against member `i` of `E_k^+`.
    pub plus: Vec<Vec<f64>>,
    pub minus: Vec<Vec<f64>>,
    pub norm_sq: f64,
    pub remainder: f64,
}

impl SpectralCoeffs {
    pub fn get(&self, k: usize, sign: Sign) -> &[f64] {
        match sign {
            Sign::Plus => &self.plus[k],
            Sign::Minus => &self.minus[k],
        }
    }

    /// `‖P_k^± α‖²`.
    pub fn projection_norm_sq(&self, k: usize, sign: Sign) -> f64 {
        self.get(k, sign).iter().map(|c| c * c).sum()
    }

    pub fn captured_norm_sq(&self) -> f64 {
        (0..=self.k_max).map(|k| self.projection_norm_sq(k, Sign::Plus) + self.projection_norm_sq(k, Sign::Minus)).sum()
    }

    /// `P_k^± α` as a single ambient form.
    pub fn combined_form(&self, bank: &SpectralBank, k: usize, sign: Sign) -> AmbientPolyForm {
        let mut f = AmbientPolyForm::zero(k);
        for (m, c) in bank.get(k, sign).members.iter().zip(self.get(k, sign)) {
            for p in 0..6 {
                f.coeff[p].iter_mut().zip(&m.coeff[p]).for_each(|(a, b)| *a += c * b);
            }
        }
        f
    }

    /// `Σ c_m η_m` on the grid.
    pub fn reconstruct(&self, bank: &SpectralBank, g: &GridSpec) -> TwoFormField {
        let mut out = TwoFormField::zeros(g.len());
        for k in 0..=self.k_max {
            let mut p = self.combined_form(bank, k, Sign::Plus);
            let m = self.combined_form(bank, k, Sign::Minus);
            p.coeff.iter_mut().zip(&m.coeff).for_each(|(a, b)| a.iter_mut().zip(b).for_each(|(x, y)| *x += y));
            out = out.axpy(1.0, &restrict_two_form(&p, g)).expect("same grid");
        }
        out
    }
}

const CHUNK: usize = 2048;

/// Integrals `μ[k][p][mono] = ∫ mono(x) · Σᵢ αᵢ(τⱼᵖτₖᵠ − τⱼᵠτₖᵖ)`; every
/// member coefficient is then a dot product with `μ`.
fn ambient_moments(alpha: &TwoFormField, k_max: usize, g: &GridSpec) -> Vec<[Vec<f64>; 6]> {
    let sizes: Vec<usize> = (0..=k_max).map(|k| monomials(k).len()).collect();
    let empty = || -> Vec<[Vec<f64>; 6]> { sizes.iter().map(|&m| std::array::from_fn(|_| vec![0.0; m])).collect() };
    let n = g.len();
    let partials: Vec<Vec<[Vec<f64>; 6]>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|ch| {
            let mut acc = empty();
            for node in ch * CHUNK..((ch + 1) * CHUNK).min(n) {
                let tau = &g.frames()[node].tau;
                let w = g.weights()[node];
                let s: [f64; 6] = std::array::from_fn(|p| {
                    let (a, b) = PAIRS[p];
                    w * (0..3).map(|i| alpha.c[i][node] * bivector(tau, i, a, b)).sum::<f64>()
                });
                if s.iter().all(|v| *v == 0.0) {
                    continue;
                }
                for (k, acc_k) in acc.iter_mut().enumerate() {
                    let mons = eval_monomials(k, &g.ambient()[node]);
                    for p in 0..6 {
                        for (a, m) in acc_k[p].iter_mut().zip(&mons) {
                            *a += s[p] * m;
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = empty();
    for part in partials {
        for (t, p) in total.iter_mut().zip(part) {
            for q in 0..6 {
                t[q].iter_mut().zip(&p[q]).for_each(|(a, b)| *a += b);
            }
        }
    }
    total
}

/// L² coefficients of `α` against every basis member up to `k_max`, and the
/// norm of what the truncated expansion leaves over.
pub fn decompose(alpha: &TwoFormField, k_max: usize, bank: &SpectralBank, g: &GridSpec) -> Result<SpectralCoeffs> {
    if k_max > bank.k_max {
        return Err(Error::InvalidParameter(format!("truncation {k_max} exceeds built bank {}", bank.k_max)));
    }
    if alpha.len() != g.len() {
        return Err(Error::GridMismatch);
    }
    let mu = ambient_moments(alpha, k_max, g);
    let coeffs = |sign: Sign| -> Vec<Vec<f64>> {
        (0..=k_max)
            .map(|k| {
                bank.get(k, sign)
                    .members
                    .iter()
                    .map(|m| (0..6).map(|p| m.coeff[p].iter().zip(&mu[k][p]).map(|(a, b)| a * b).sum::<f64>()).sum())
                    .collect()
            })
            .collect()
    };
    let plus = coeffs(Sign::Plus);
    let minus = coeffs(Sign::Minus);
    let norm_sq = crate::forms::l2_inner(alpha, alpha, g)?;
    let mut out = SpectralCoeffs { k_max, plus, minus, norm_sq, remainder: 0.0 };
    let rest = alpha.axpy(-1.0, &out.reconstruct(bank, g))?;
    out.remainder = l2_norm(&rest, g)?;
    Ok(out)
}

/// `ψ = λ⁻¹ *α` for an eigenfield `α`; the eigenvalue is read off from the
/// Rayleigh quotient and must round to `±(k + 2)`.
pub fn eigen_potential(alpha: &TwoFormField, g: &GridSpec) -> Result<(OneFormField, f64)> {
    let norm = l2_norm(alpha, g)?;
    if norm < 1e-12 {
        return Err(Error::Degenerate("zero form has no eigenvalue".into()));
    }
    let dstar = codifferential_2(alpha, g)?;
    let rayleigh = crate::forms::l2_inner(&dstar, alpha, g)? / (norm * norm);
    let lambda = rayleigh.round();
    let (r, _) = eigen_residual(alpha, lambda, g)?;
    if lambda.abs() < 2.0 || r > 1e-6 * norm * lambda.abs() {
        return Err(Error::NotEigen { residual: r / norm });
    }
    let psi = crate::forms::hodge_star_2to1(alpha).scaled(1.0 / lambda);
    let dpsi = crate::forms::exterior_derivative_1(&psi, g)?;
    let err = l2_norm(&dpsi.axpy(-1.0, alpha)?, g)?;
    if err > 1e-6 * norm {
        return Err(Error::NotEigen { residual: err / norm });
    }
    Ok((psi, lambda))
}

/// Norm `(Σ_{a<b} m_ab²)^{1/2}` of a constant 2-form; `4` on `E⁺₀,₁` elements
/// restricted to unit pointwise norm `|·|/√2`.
fn skew_norm(m: &[[f64; 4]; 4]) -> f64 {
    PAIRS.iter().map(|&(a, b)| m[a][b] * m[a][b]).sum::<f64>().sqrt()
}

/// Duality sign of a constant skew matrix, if it is (anti-)self-dual.
pub fn duality(m: &[[f64; 4]; 4], tol: f64) -> Option<Sign> {
    let sd = (m[0][1] - m[2][3]).abs() + (m[0][2] + m[1][3]).abs() + (m[0][3] - m[1][2]).abs();
    let asd = (m[0][1] + m[2][3]).abs() + (m[0][2] - m[1][3]).abs() + (m[0][3] + m[1][2]).abs();
    let scale = skew_norm(m).max(1e-300);
    if sd <= tol * scale {
        Some(Sign::Plus)
    } else if asd <= tol * scale {
        Some(Sign::Minus)
    } else {
        None
    }
}

/// Orthogonal `Q` with `QᵀAQ = μ(E₁₂ + sE₃₄)` for (anti-)self-dual `A`.
fn canonical_frame(a: &Matrix4<f64>, sign: Sign) -> Matrix4<f64> {
    // A² = −μ²I for (anti-)self-dual A
    let mu = (-(a * a).trace() / 4.0).sqrt();
    let v1 = Vector4::new(1.0, 0.0, 0.0, 0.0);
    let v2 = -(a * v1) / mu;
    let mut best = Vector4::zeros();
    for i in 1..4 {
        let mut e = Vector4::zeros();
        e[i] = 1.0;
        let r = e - v1 * v1.dot(&e) - v2 * v2.dot(&e);
        if r.norm() > best.norm() {
            best = r;
        }
    }
    let v3 = best.normalize();
    let v4 = -(a * v3) * (sign.value() / mu);
    Matrix4::from_columns(&[v1, v2, v3, v4])
}

/// Rotation `R ∈ SO(4)` with `RᵀΩ₁R = Ω₂`, i.e. `R*ω₁ = ω₂`.
pub fn so4_transport(w1: &[[f64; 4]; 4], w2: &[[f64; 4]; 4]) -> Result<Matrix4<f64>> {
    let (n1, n2) = (skew_norm(w1), skew_norm(w2));
    if n1 < 1e-14 || n2 < 1e-14 {
        return Err(Error::Degenerate("zero form cannot be transported".into()));
    }
    if (n1 - n2).abs() > 1e-10 * n1.max(1.0) {
        return Err(Error::NormMismatch(n1, n2));
    }
    let s1 = duality(w1, 1e-10).ok_or(Error::MixedDuality)?;
    let s2 = duality(w2, 1e-10).ok_or(Error::MixedDuality)?;
    if s1 != s2 {
        return Err(Error::MixedDuality);
    }
    let a1 = Matrix4::from_fn(|i, j| w1[i][j]);
    let a2 = Matrix4::from_fn(|i, j| w2[i][j]);
    let q1 = canonical_frame(&a1, s1);
    let q2 = canonical_frame(&a2, s2);
    Ok(q1 * q2.transpose())
}

/// Pullback of a constant form by a linear map: `RᵀΩR`.
pub fn pullback_constant(r: &Matrix4<f64>, w: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let a = Matrix4::from_fn(|i, j| w[i][j]);
    let p = r.transpose() * a * r;
    std::array::from_fn(|i| std::array::from_fn(|j| p[(i, j)]))
}

/// Projection onto `E_0^+` and the nearest element of
/// `E⁺₀,₁ = {Σ cᵢ ω⁺₀,ᵢ : Σ cᵢ² = 16}`.
#[derive(Debug, Clone, Serialize)]
pub struct E0Projection {
    /// Coefficients against the L²-orthonormal basis of `E_0^+`.
    pub coeffs: [f64; 3],
    /// Coefficients of the nearest element in the unnormalized basis
    /// `ω⁺₀,ᵢ`; absent when the projection vanishes.
    pub nearest: Option<[f64; 3]>,
    pub distance: Option<f64>,
    /// `‖α − P_{E_0^+}α‖`.
    pub distance_to_span: f64,
}

impl E0Projection {
    pub fn nearest_form(&self) -> Option<AmbientPolyForm> {
        self.nearest.map(|c| {
            let mut f = AmbientPolyForm::zero(0);
            for (i, ci) in c.iter().enumerate() {
                let b = AmbientPolyForm::omega0(true, i);
                for p in 0..6 {
                    f.coeff[p][0] += ci * b.coeff[p][0];
                }
            }
            f
        })
    }
}

pub fn project_e0(alpha: &TwoFormField, g: &GridSpec) -> Result<E0Projection> {
    let basis = basis_e0(Sign::Plus);
    let mut coeffs = [0.0; 3];
    for (i, m) in basis.members.iter().enumerate() {
        coeffs[i] = crate::forms::l2_inner(alpha, &restrict_two_form(m, g), g)?;
    }
    let unit = std::f64::consts::PI * 2f64.sqrt();
    let gamma = coeffs.map(|c| c / unit);
    let constant = |c: [f64; 3]| {
        let mut m = [[0.0; 4]; 4];
        for (i, ci) in c.iter().enumerate() {
            let b = AmbientPolyForm::omega0(true, i).constant_matrix().expect("constant form");
            for a in 0..4 {
                for bb in 0..4 {
                    m[a][bb] += ci * b[a][bb];
                }
            }
        }
        restrict_two_form(&AmbientPolyForm::constant(&m), g)
    };
    let dist = |c: [f64; 3]| -> Result<f64> { l2_norm(&alpha.axpy(-1.0, &constant(c))?, g) };
    let distance_to_span = dist(gamma)?;
    let gn = gamma.iter().map(|c| c * c).sum::<f64>().sqrt();
    let (nearest, distance) = if gn < 1e-12 {
        (None, None)
    } else {
        let near = gamma.map(|c| 4.0 * c / gn);
        (Some(near), Some(dist(near)?))
    };
    Ok(E0Projection { coeffs, nearest, distance, distance_to_span })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::{l2_inner, restrict_two_form};
    use crate::geometry::build_grid;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn moments_match_quadrature() {
        let g = build_grid(12, 12).unwrap();
        for e in [[0, 0, 0, 0], [2, 0, 0, 0], [2, 2, 0, 0], [4, 0, 2, 0], [1, 1, 0, 0], [2, 2, 2, 2], [6, 0, 0, 0]] {
            let f = g.sample(|x| (0..4).map(|i| x[i].powi(e[i] as i32)).product());
            let q = crate::geometry::integrate_scalar(&f, &g).unwrap();
            assert_abs_diff_eq!(q, sphere_moment(e), epsilon = 1e-12);
        }
        assert_abs_diff_eq!(sphere_moment([0; 4]), 2.0 * PI * PI, epsilon = 1e-14);
    }

    #[test]
    fn e0_basis_properties() {
        let g = build_grid(24, 24).unwrap();
        for sign in Sign::both() {
            let b = basis_e0(sign);
            assert_eq!(b.dim(), 3);
            let chk = verify_eigen(&b, &g).unwrap();
            assert!(chk.eigen_residual <= 1e-8, "{chk:?}");
            assert!(!chk.degenerate);
            let r = b.restricted(&g);
            for i in 0..3 {
                for j in 0..3 {
                    let v = l2_inner(&r[i], &r[j], &g).unwrap();
                    assert_abs_diff_eq!(v, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-10);
                }
            }
        }
    }

    /// Independent rank computation of the constraint system in two
    /// precisions, using column-pivoted elimination instead of the SVD.
    fn rank_by_elimination<T>(m: &DMatrix<f64>, conv: impl Fn(f64) -> T, tol: T) -> usize
    where
        T: Copy + PartialOrd + std::ops::Sub<Output = T> + std::ops::Mul<Output = T> + std::ops::Div<Output = T> + Default,
        T: std::ops::Neg<Output = T>,
    {
        let (r, c) = m.shape();
        let mut a: Vec<Vec<T>> = (0..r).map(|i| (0..c).map(|j| conv(m[(i, j)])).collect()).collect();
        let abs = |x: T| if x < T::default() { -x } else { x };
        let mut rank = 0;
        for col in 0..c {
            let piv = (rank..r).max_by(|&i, &j| abs(a[i][col]).partial_cmp(&abs(a[j][col])).unwrap());
            let Some(p) = piv else { break };
            if abs(a[p][col]) <= tol {
                continue;
            }
            a.swap(rank, p);
            for i in rank + 1..r {
                let f = a[i][col] / a[rank][col];
                for j in col..c {
                    let v = a[rank][j];
                    a[i][j] = a[i][j] - f * v;
                }
            }
            rank += 1;
        }
        rank
    }

    #[test]
    fn dimensions_by_independent_rank() {
        for k in 1..=3 {
            for sign in Sign::both() {
                let cm = constraint_matrix(k, sign);
                let r64 = rank_by_elimination(&cm, |x| x, 1e-9);
                let r32 = rank_by_elimination(&cm, |x| x as f32, 1e-4f32);
                assert_eq!(r64, r32);
                let b = build_eigenbasis(k, sign).unwrap();
                assert_eq!(b.dim(), cm.ncols() - r64, "k={k} {sign}");
            }
        }
    }

    #[test]
    fn k0_construction_recovers_explicit_basis() {
        for sign in Sign::both() {
            let b = build_eigenbasis(0, sign).unwrap();
            assert_eq!(b.dim(), 3);
            // every member lies in the span of the explicit constant forms
            for m in &b.members {
                let mat = m.constant_matrix().unwrap();
                assert_eq!(duality(&mat, 1e-12), Some(sign));
            }
        }
    }

    #[test]
    fn higher_bases_are_eigen_and_orthonormal() {
        let g = build_grid(24, 24).unwrap();
        for k in 1..=2 {
            for sign in Sign::both() {
                let b = build_eigenbasis(k, sign).unwrap();
                let chk = verify_eigen(&b, &g).unwrap();
                assert!(chk.eigen_residual <= 1e-8 && chk.closed_residual <= 1e-8, "k={k} {sign} {chk:?}");
                let r = b.restricted(&g);
                for i in 0..r.len() {
                    for j in 0..r.len() {
                        let v = l2_inner(&r[i], &r[j], &g).unwrap();
                        assert_abs_diff_eq!(v, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn perturbed_and_zero_members_are_flagged() {
        let g = build_grid(16, 16).unwrap();
        let b = basis_e0(Sign::Plus);
        let mut alpha = restrict_two_form(&b.members[0], &g);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for c in alpha.c.iter_mut() {
            c.iter_mut().for_each(|v| *v += 1e-3 * rng.random_range(-1.0..1.0));
        }
        let (r, _) = eigen_residual(&alpha, 2.0, &g).unwrap();
        assert!(r >= 1e-4, "{r}");
        let zero = EigenBasis { k: 0, sign: Sign::Plus, members: vec![AmbientPolyForm::zero(0)], normalized: false };
        let chk = verify_eigen(&zero, &g).unwrap();
        assert_eq!(chk.eigen_residual, 0.0);
        assert!(chk.degenerate);
    }

    #[test]
    fn decomposition_of_basis_elements() {
        let g = build_grid(16, 16).unwrap();
        let bank = SpectralBank::build(2).unwrap();
        let h = restrict_two_form(&AmbientPolyForm::omega0(true, 0).scaled(4.0), &g);
        let c = decompose(&h, 2, &bank, &g).unwrap();
        assert_abs_diff_eq!(c.projection_norm_sq(0, Sign::Plus), 32.0 * PI * PI, epsilon = 1e-9);
        assert!(c.remainder <= 1e-10 * 32.0 * PI * PI);
        let m = restrict_two_form(&bank.get(1, Sign::Minus).members[2], &g);
        let c = decompose(&m, 2, &bank, &g).unwrap();
        for k in 0..=2 {
            for sign in Sign::both() {
                for (i, v) in c.get(k, sign).iter().enumerate() {
                    let expect = if (k, sign, i) == (1, Sign::Minus, 2) { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(*v, expect, epsilon = 1e-10);
                }
            }
        }
        let z = decompose(&TwoFormField::zeros(g.len()), 2, &bank, &g).unwrap();
        assert_eq!(z.captured_norm_sq(), 0.0);
        assert!(decompose(&h, 3, &bank, &g).is_err());
    }

    #[test]
    fn eigen_potentials() {
        let g = build_grid(20, 20).unwrap();
        let h = restrict_two_form(&AmbientPolyForm::omega0(true, 0).scaled(4.0), &g);
        let (psi, lambda) = eigen_potential(&h, &g).unwrap();
        assert_eq!(lambda, 2.0);
        for k in 0..g.len() {
            assert_abs_diff_eq!(psi.c[0][k], 2.0, epsilon = 1e-12);
        }
        let b = build_eigenbasis(1, Sign::Plus).unwrap();
        let a = restrict_two_form(&b.members[0], &g);
        let (psi, lambda) = eigen_potential(&a, &g).unwrap();
        assert_eq!(lambda, 3.0);
        let dpsi = crate::forms::exterior_derivative_1(&psi, &g).unwrap();
        assert!(l2_norm(&dpsi.axpy(-1.0, &a).unwrap(), &g).unwrap() <= 1e-8);
        let w = crate::forms::wedge_12(&psi, &dpsi).unwrap();
        let lhs = crate::forms::integrate(&w, &g).unwrap();
        assert_abs_diff_eq!(lhs, l2_inner(&dpsi, &dpsi, &g).unwrap() / 3.0, epsilon = 1e-9);
        assert!(lhs.abs() <= 0.5 * l2_inner(&dpsi, &dpsi, &g).unwrap());
        assert!(eigen_potential(&TwoFormField::zeros(g.len()), &g).is_err());
        let mixed = a.axpy(1.0, &h).unwrap();
        assert!(eigen_potential(&mixed, &g).is_err());
    }

    fn random_sd(rng: &mut ChaCha8Rng, sign: Sign, norm: f64) -> [[f64; 4]; 4] {
        let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = (v.iter().map(|x| x * x).sum::<f64>()).sqrt();
        let mut m = [[0.0; 4]; 4];
        for (i, c) in v.iter().enumerate() {
            let b = AmbientPolyForm::omega0(sign == Sign::Plus, i).constant_matrix().unwrap();
            for a in 0..4 {
                for bb in 0..4 {
                    m[a][bb] += norm * c / n * b[a][bb] / 2f64.sqrt();
                }
            }
        }
        m
    }

    #[test]
    fn transport_between_basis_forms() {
        let w1 = AmbientPolyForm::omega0(true, 0).constant_matrix().unwrap();
        let w2 = AmbientPolyForm::omega0(true, 1).constant_matrix().unwrap();
        let r = so4_transport(&w1, &w2).unwrap();
        let p = pullback_constant(&r, &w1);
        for a in 0..4 {
            for b in 0..4 {
                assert_abs_diff_eq!(p[a][b], w2[a][b], epsilon = 1e-10);
            }
        }
        assert_abs_diff_eq!(r.determinant(), 1.0, epsilon = 1e-12);
        let same = so4_transport(&w1, &w1).unwrap();
        let p = pullback_constant(&same, &w1);
        assert_abs_diff_eq!(p[0][1], w1[0][1], epsilon = 1e-12);
        let minus = AmbientPolyForm::omega0(false, 0).constant_matrix().unwrap();
        assert!(matches!(so4_transport(&w1, &minus), Err(Error::MixedDuality)));
        assert!(matches!(so4_transport(&w1, &[[0.0; 4]; 4]), Err(Error::Degenerate(_))));
        let double = AmbientPolyForm::omega0(true, 1).scaled(2.0).constant_matrix().unwrap();
        assert!(matches!(so4_transport(&w1, &double), Err(Error::NormMismatch(..))));
    }

    #[test]
    fn project_e0_cases() {
        let g = build_grid(16, 16).unwrap();
        let h = restrict_two_form(&AmbientPolyForm::omega0(true, 0).scaled(4.0), &g);
        let p = project_e0(&h, &g).unwrap();
        assert_abs_diff_eq!(p.coeffs[0], 4.0 * PI * 2f64.sqrt(), epsilon = 1e-10);
        assert_abs_diff_eq!(p.distance.unwrap(), 0.0, epsilon = 1e-6);
        let e1 = build_eigenbasis(1, Sign::Plus).unwrap();
        let a = restrict_two_form(&e1.members[1], &g);
        let p = project_e0(&a, &g).unwrap();
        assert!(p.nearest.is_none() && p.distance.is_none());
        let em = build_eigenbasis(1, Sign::Minus).unwrap();
        let m = restrict_two_form(&em.members[0], &g);
        let mixed = h.axpy(0.1, &m).unwrap();
        let p = project_e0(&mixed, &g).unwrap();
        assert_abs_diff_eq!(p.distance.unwrap(), 0.1, epsilon = 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn transport_random_pairs(seed in any::<u64>(), plus in any::<bool>(), norm in 0.1f64..10.0) {
            let sign = if plus { Sign::Plus } else { Sign::Minus };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w1 = random_sd(&mut rng, sign, norm);
            let w2 = random_sd(&mut rng, sign, norm);
            let r = so4_transport(&w1, &w2).unwrap();
            let p = pullback_constant(&r, &w1);
            for a in 0..4 {
                for b in 0..4 {
                    prop_assert!((p[a][b] - w2[a][b]).abs() <= 1e-9 * norm.max(1.0));
                }
            }
            prop_assert!((r.determinant() - 1.0).abs() <= 1e-12);
            prop_assert!((r.transpose() * r - Matrix4::identity()).abs().max() <= 1e-10);
        }
    }
}
