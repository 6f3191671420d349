//! Hopf-coordinate parametrization of S³, the adapted orthonormal frame, and
//! the product quadrature used for every integral over the sphere.
//!
//! A point is written `(t, φ₁, φ₂)` with `t ∈ (0, π/2)` and embedded as
//! `(e^{iφ₁} sin t, e^{iφ₂} cos t) ∈ ℂ² ≅ ℝ⁴`. The round metric reads
//! `dt² + sin²t dφ₁² + cos²t dφ₂²`, so the volume element is
//! `sin t cos t dt dφ₁ dφ₂` and the total volume is `2π²`.
//!
//! The `t` direction uses Gauss–Legendre nodes in `x = cos 2t`, which turns
//! `sin t cos t dt` into `dx / 4`; the angles use the periodic trapezoidal rule.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{Read, Write};
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::collocation::Collocation;
use crate::error::{Error, Result};

/// Volume of the unit 3-sphere.
pub const VOLUME_S3: f64 = 2.0 * PI * PI;

const GRID_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopfPoint {
    pub t: f64,
    pub phi1: f64,
    pub phi2: f64,
}

impl HopfPoint {
    pub fn new(t: f64, phi1: f64, phi2: f64) -> Result<Self> {
        if !(t > 0.0 && t < FRAC_PI_2) {
            return Err(Error::InvalidPoint(format!("t = {t} must lie in (0, π/2)")));
        }
        if !phi1.is_finite() || !phi2.is_finite() {
            return Err(Error::InvalidPoint("angles must be finite".into()));
        }
        Ok(Self { t, phi1: phi1.rem_euclid(2.0 * PI), phi2: phi2.rem_euclid(2.0 * PI) })
    }
}

/// Unit vector of ℝ⁴, `x = (Re z, Im z, Re w, Im w)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmbientPoint(pub [f64; 4]);

impl AmbientPoint {
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Orthonormal frame `τ₁ = ∂φ₁ + ∂φ₂`, `τ₂ = ∂t`, `τ₃ = cot t ∂φ₁ − tan t ∂φ₂`
/// pushed forward to ℝ⁴. `τ₁` generates the Hopf fibres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub tau: [[f64; 4]; 3],
}

impl Frame {
    pub fn gram(&self) -> [[f64; 3]; 3] {
        let mut g = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                g[i][j] = dot4(&self.tau[i], &self.tau[j]);
            }
        }
        g
    }
}

pub fn to_ambient(p: &HopfPoint) -> AmbientPoint {
    let (st, ct) = p.t.sin_cos();
    let (s1, c1) = p.phi1.sin_cos();
    let (s2, c2) = p.phi2.sin_cos();
    AmbientPoint([st * c1, st * s1, ct * c2, ct * s2])
}

pub fn frame_at(p: &HopfPoint) -> Frame {
    let (st, ct) = p.t.sin_cos();
    let (s1, c1) = p.phi1.sin_cos();
    let (s2, c2) = p.phi2.sin_cos();
    let x = [st * c1, st * s1, ct * c2, ct * s2];
    Frame {
        tau: [
            [-x[1], x[0], -x[3], x[2]],
            [ct * c1, ct * s1, -st * c2, -st * s2],
            [-ct * s1, ct * c1, st * s2, -st * c2],
        ],
    }
}

pub(crate) fn dot4(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

/// Collocation grid on S³.
///
/// Nodes are stored with `φ₂` fastest, then `φ₁`, then `t`:
/// `index = (it · n_ang + i1) · n_ang + i2`.
#[derive(Debug, Clone)]
pub struct GridSpec {
    n_t: usize,
    n_ang: usize,
    /// `t` nodes, increasing.
    t_nodes: Vec<f64>,
    /// `x = cos 2t` at each `t` node (Gauss–Legendre abscissae).
    x_nodes: Vec<f64>,
    /// Weights of `∫₀^{π/2} f sin t cos t dt` at each `t` node.
    t_weights: Vec<f64>,
    nodes: Vec<HopfPoint>,
    weights: Vec<f64>,
    ambient: Vec<[f64; 4]>,
    frames: Vec<Frame>,
    coll: Collocation,
}

impl PartialEq for GridSpec {
    fn eq(&self, other: &Self) -> bool {
        self.n_t == other.n_t && self.n_ang == other.n_ang
    }
}

/// Builds the product grid. `n_ang` must be even so that the half-period
/// shift `φ ↦ φ + π` maps nodes onto nodes.
pub fn build_grid(n_t: usize, n_ang: usize) -> Result<GridSpec> {
    if n_t < 2 {
        return Err(Error::InvalidGrid(format!("n_t = {n_t} is below the minimum of 2")));
    }
    if n_ang < 4 {
        return Err(Error::InvalidGrid(format!("n_ang = {n_ang} is below the minimum of 4")));
    }
    if n_ang % 2 != 0 {
        return Err(Error::InvalidGrid(format!("n_ang = {n_ang} must be even")));
    }
    let rule = GaussLegendre::new(NonZeroUsize::new(n_t).expect("n_t >= 2"));
    let mut pairs: Vec<(f64, f64)> = rule.as_node_weight_pairs().to_vec();
    // x = cos 2t decreases with t
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let x_nodes: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let t_nodes: Vec<f64> = x_nodes.iter().map(|x| 0.5 * x.acos()).collect();
    let t_weights: Vec<f64> = pairs.iter().map(|p| 0.25 * p.1).collect();
    from_parts(n_t, n_ang, t_nodes, x_nodes, t_weights)
}

fn from_parts(
    n_t: usize,
    n_ang: usize,
    t_nodes: Vec<f64>,
    x_nodes: Vec<f64>,
    t_weights: Vec<f64>,
) -> Result<GridSpec> {
    let h = 2.0 * PI / n_ang as f64;
    let n = n_t * n_ang * n_ang;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for (it, &t) in t_nodes.iter().enumerate() {
        for i1 in 0..n_ang {
            for i2 in 0..n_ang {
                nodes.push(HopfPoint::new(t, i1 as f64 * h, i2 as f64 * h)?);
                weights.push(t_weights[it] * h * h);
            }
        }
    }
    let ambient = nodes.iter().map(|p| to_ambient(p).0).collect();
    let frames = nodes.iter().map(frame_at).collect();
    let coll = Collocation::new(&t_nodes, &x_nodes, n_ang);
    Ok(GridSpec { n_t, n_ang, t_nodes, x_nodes, t_weights, nodes, weights, ambient, frames, coll })
}

impl GridSpec {
    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_ang(&self) -> usize {
        self.n_ang
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[HopfPoint] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn ambient(&self) -> &[[f64; 4]] {
        &self.ambient
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn t_nodes(&self) -> &[f64] {
        &self.t_nodes
    }

    pub fn x_nodes(&self) -> &[f64] {
        &self.x_nodes
    }

    pub fn t_weights(&self) -> &[f64] {
        &self.t_weights
    }

    /// Differentiation operators bound to this grid.
    pub fn collocation(&self) -> &Collocation {
        &self.coll
    }

    pub fn index(&self, it: usize, i1: usize, i2: usize) -> usize {
        (it * self.n_ang + i1) * self.n_ang + i2
    }

    pub fn total_weight(&self) -> f64 {
        compensated_sum(self.weights.iter().copied())
    }

    /// Samples a scalar function of the ambient point.
    pub fn sample<F: Fn(&[f64; 4]) -> f64>(&self, f: F) -> Vec<f64> {
        self.ambient.iter().map(f).collect()
    }

    /// Writes the grid as CSV: a header record `(version, n_t, n_ang)` followed
    /// by one `(t, φ₁, φ₂, weight)` row per node.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        w.write_record(["version", "n_t", "n_ang"])?;
        w.write_record([
            GRID_FORMAT_VERSION.to_string(),
            self.n_t.to_string(),
            self.n_ang.to_string(),
        ])?;
        w.write_record(["t", "phi1", "phi2", "weight"])?;
        for (p, wt) in self.nodes.iter().zip(&self.weights) {
            w.write_record([fmt_f64(p.t), fmt_f64(p.phi1), fmt_f64(p.phi2), fmt_f64(*wt)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a grid written by [`GridSpec::write_csv`]. The stored `t` nodes and
    /// weights are used verbatim.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(input);
        let mut records = r.records();
        let mut next = || -> Result<csv::StringRecord> {
            records
                .next()
                .ok_or_else(|| Error::Parse("unexpected end of grid file".into()))?
                .map_err(Error::from)
        };
        let _ = next()?;
        let head = next()?;
        let parse_usize = |s: &str| s.trim().parse::<usize>().map_err(|e| Error::Parse(e.to_string()));
        let version = parse_usize(&head[0])?;
        if version != GRID_FORMAT_VERSION as usize {
            return Err(Error::Parse(format!("unsupported grid format version {version}")));
        }
        let n_t = parse_usize(&head[1])?;
        let n_ang = parse_usize(&head[2])?;
        let _ = next()?;
        let mut t_nodes = Vec::with_capacity(n_t);
        let mut t_weights = Vec::with_capacity(n_t);
        let h = 2.0 * PI / n_ang as f64;
        let mut count = 0;
        for rec in records {
            let rec = rec?;
            if rec.len() != 4 {
                return Err(Error::Parse(format!("grid row has {} fields", rec.len())));
            }
            let val = |i: usize| rec[i].trim().parse::<f64>().map_err(|e| Error::Parse(e.to_string()));
            if count % (n_ang * n_ang) == 0 {
                t_nodes.push(val(0)?);
                t_weights.push(val(3)? / (h * h));
            }
            count += 1;
        }
        if count != n_t * n_ang * n_ang || t_nodes.len() != n_t {
            return Err(Error::LengthMismatch { expected: n_t * n_ang * n_ang, got: count });
        }
        if n_t < 2 || n_ang < 4 || n_ang % 2 != 0 {
            return Err(Error::InvalidGrid(format!("{n_t}x{n_ang}")));
        }
        let x_nodes = t_nodes.iter().map(|t| (2.0 * t).cos()).collect();
        from_parts(n_t, n_ang, t_nodes, x_nodes, t_weights)
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.17e}")
}

/// `Σ fᵢ wᵢ` over the grid.
pub fn integrate_scalar(f: &[f64], g: &GridSpec) -> Result<f64> {
    if f.len() != g.len() {
        return Err(Error::LengthMismatch { expected: g.len(), got: f.len() });
    }
    Ok(compensated_sum(f.iter().zip(&g.weights).map(|(a, w)| a * w)))
}

/// Neumaier summation; keeps grid integrals at rounding level for large grids.
pub fn compensated_sum(it: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for v in it {
        let t = s + v;
        c += if s.abs() >= v.abs() { (s - t) + v } else { (v - t) + s };
        s = t;
    }
    s + c
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_small_grids() {
        assert!(build_grid(1, 4).is_err());
        assert!(build_grid(2, 3).is_err());
        assert!(build_grid(4, 6).is_ok());
        assert!(build_grid(4, 7).is_err());
    }

    #[test]
    fn constant_and_quadratic_integrals() {
        let g = build_grid(16, 16).unwrap();
        let one = vec![1.0; g.len()];
        assert_abs_diff_eq!(integrate_scalar(&one, &g).unwrap(), VOLUME_S3, epsilon = 1e-12);
        for i in 0..4 {
            let f = g.sample(|x| x[i] * x[i]);
            assert_abs_diff_eq!(integrate_scalar(&f, &g).unwrap(), PI * PI / 2.0, epsilon = 1e-12);
        }
        assert!(g.weights().iter().all(|w| *w > 0.0));
        assert_eq!(integrate_scalar(&vec![0.0; g.len()], &g).unwrap(), 0.0);
        assert!(integrate_scalar(&[1.0], &g).is_err());
    }

    #[test]
    fn ambient_substitution() {
        let p = HopfPoint::new(PI / 4.0, 0.0, 0.0).unwrap();
        let x = to_ambient(&p).0;
        let r = 0.5f64.sqrt();
        for (a, b) in x.iter().zip([r, 0.0, r, 0.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        let p = HopfPoint::new(PI / 3.0, PI / 2.0, 0.0).unwrap();
        let x = to_ambient(&p).0;
        for (a, b) in x.iter().zip([0.0, 3f64.sqrt() / 2.0, 0.5, 0.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert!(HopfPoint::new(0.0, 0.0, 0.0).is_err());
        assert!(HopfPoint::new(FRAC_PI_2, 0.0, 0.0).is_err());
    }

    /// The frame is checked against the coordinate metric
    /// `dt² + sin²t dφ₁² + cos²t dφ₂²`.
    #[test]
    fn frame_is_orthonormal_and_tangent() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let p = HopfPoint::new(
                rng.random_range(1e-3..FRAC_PI_2 - 1e-3),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.0..2.0 * PI),
            )
            .unwrap();
            let f = frame_at(&p);
            let x = to_ambient(&p);
            assert_abs_diff_eq!(x.norm(), 1.0, epsilon = 1e-12);
            // coordinate components (dt, dφ₁, dφ₂) of each frame vector
            let (st, ct) = p.t.sin_cos();
            let comps = [[0.0, 1.0, 1.0], [1.0, 0.0, 0.0], [0.0, ct / st, -st / ct]];
            let metric = [1.0, st * st, ct * ct];
            for i in 0..3 {
                for j in 0..3 {
                    let expect: f64 = (0..3).map(|a| metric[a] * comps[i][a] * comps[j][a]).sum();
                    assert_abs_diff_eq!(f.gram()[i][j], expect, epsilon = 1e-12);
                    assert_abs_diff_eq!(expect, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-12);
                }
                assert_abs_diff_eq!(dot4(&f.tau[i], &x.0), 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn tau3_at_quarter_turn() {
        let p = HopfPoint::new(PI / 4.0, 0.3, 1.1).unwrap();
        let f = frame_at(&p);
        let x = to_ambient(&p).0;
        // ∂φ₁ − ∂φ₂ in ambient coordinates
        let expect = [-x[1], x[0], x[3], -x[2]];
        for k in 0..4 {
            assert_abs_diff_eq!(f.tau[2][k], expect[k], epsilon = 1e-15);
        }
    }

    #[test]
    fn orientation_is_positive() {
        let g = build_grid(4, 4).unwrap();
        for (x, f) in g.ambient().iter().zip(g.frames()) {
            let m = nalgebra::Matrix4::from_rows(&[
                nalgebra::RowVector4::from_row_slice(x),
                nalgebra::RowVector4::from_row_slice(&f.tau[0]),
                nalgebra::RowVector4::from_row_slice(&f.tau[1]),
                nalgebra::RowVector4::from_row_slice(&f.tau[2]),
            ]);
            assert_abs_diff_eq!(m.determinant(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn csv_round_trip() {
        let g = build_grid(5, 6).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let back = GridSpec::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), g.len());
        for (a, b) in back.weights().iter().zip(g.weights()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        assert!(GridSpec::read_csv("version,n_t\n9,2,4\n".as_bytes()).is_err());
    }
}
