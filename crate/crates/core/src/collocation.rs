//! Spectral collocation derivatives on the Hopf grid.
//!
//! Angles use the periodic Fourier differentiation matrix. In `t` a smooth
//! function on S³ is split into four classes by the parity of its angular
//! wave numbers; a class of parity `(a, b)` has the form
//! `sinᵃt cosᵇt · q(cos 2t)` with `q` smooth, and `q` is differentiated with
//! the Legendre barycentric matrix in `x = cos 2t`. The split is exact on the
//! grid because `n_ang` is even, so `φ ↦ φ + π` is a node permutation.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Dense `n × n` Fourier differentiation matrix for even `n` on uniform nodes
/// `2πj/n`, row-major. Antisymmetric.
pub fn fourier_matrix(n: usize) -> Vec<f64> {
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let k = i as isize - j as isize;
                let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                let arg = k as f64 * std::f64::consts::PI / n as f64;
                d[i * n + j] = 0.5 * sign / arg.tan();
            }
        }
    }
    d
}

/// Polynomial differentiation matrix on arbitrary distinct nodes, row-major.
pub fn barycentric_matrix(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    // barycentric weights, rescaled to avoid overflow for larger n
    let mut w = vec![1.0; n];
    for j in 0..n {
        for k in 0..n {
            if k != j {
                w[j] *= 2.0 * (x[j] - x[k]);
            }
        }
        w[j] = 1.0 / w[j];
    }
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i != j {
                let v = (w[j] / w[i]) / (x[i] - x[j]);
                d[i * n + j] = v;
                diag -= v;
            }
        }
        d[i * n + i] = diag;
    }
    d
}

/// The four parity-class `t`-derivative matrices and their transposes.
#[derive(Debug, Clone)]
pub struct TDiff {
    mats: [Vec<f64>; 4],
    mats_t: [Vec<f64>; 4],
}

impl TDiff {
    pub fn new(t: &[f64], x: &[f64]) -> Self {
        let n = t.len();
        let dx = barycentric_matrix(x);
        let build = |a: i32, b: i32| {
            let mut m = vec![0.0; n * n];
            for i in 0..n {
                let (si, ci) = t[i].sin_cos();
                let scale_i = si.powi(a) * ci.powi(b) * (-2.0 * (2.0 * t[i]).sin());
                for j in 0..n {
                    let (sj, cj) = t[j].sin_cos();
                    m[i * n + j] = scale_i * dx[i * n + j] / (sj.powi(a) * cj.powi(b));
                }
                m[i * n + i] += a as f64 * ci / si - b as f64 * si / ci;
            }
            m
        };
        let mats = [build(0, 0), build(0, 1), build(1, 0), build(1, 1)];
        let mats_t = mats.clone().map(|m| transpose(&m, n));
        Self { mats, mats_t }
    }

    /// Matrix for the class with angular parities `(a, b)`.
    pub fn matrix(&self, a: usize, b: usize) -> &[f64] {
        &self.mats[2 * a + b]
    }

    fn get(&self, p: usize, transposed: bool) -> &[f64] {
        if transposed {
            &self.mats_t[p]
        } else {
            &self.mats[p]
        }
    }
}

fn transpose(m: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[j * n + i] = m[i * n + j];
        }
    }
    out
}

fn matvec(m: &[f64], v: &[f64], out: &mut [f64]) {
    let n = v.len();
    for i in 0..n {
        let row = &m[i * n..(i + 1) * n];
        out[i] = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

/// Differentiation operators for fields stored in the S³ grid layout.
#[derive(Debug, Clone)]
pub struct Collocation {
    n_t: usize,
    n_ang: usize,
    dphi: Vec<f64>,
    tdiff: TDiff,
    cot: Vec<f64>,
    tan: Vec<f64>,
}

impl Collocation {
    pub fn new(t: &[f64], x: &[f64], n_ang: usize) -> Self {
        Self {
            n_t: t.len(),
            n_ang,
            dphi: fourier_matrix(n_ang),
            tdiff: TDiff::new(t, x),
            cot: t.iter().map(|t| 1.0 / t.tan()).collect(),
            tan: t.iter().map(|t| t.tan()).collect(),
        }
    }

    fn len(&self) -> usize {
        self.n_t * self.n_ang * self.n_ang
    }

    pub fn d_phi2(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.len());
        let n = self.n_ang;
        let mut out = vec![0.0; f.len()];
        out.par_chunks_mut(n).zip(f.par_chunks(n)).for_each(|(o, line)| matvec(&self.dphi, line, o));
        out
    }

    pub fn d_phi1(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.len());
        let n = self.n_ang;
        let mut out = vec![0.0; f.len()];
        out.par_chunks_mut(n * n).zip(f.par_chunks(n * n)).for_each(|(o, slab)| {
            for i1 in 0..n {
                let row = &self.dphi[i1 * n..(i1 + 1) * n];
                let dst = &mut o[i1 * n..(i1 + 1) * n];
                for (j1, &c) in row.iter().enumerate() {
                    if c != 0.0 {
                        let src = &slab[j1 * n..(j1 + 1) * n];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += c * s;
                        }
                    }
                }
            }
        });
        out
    }

    pub fn d_t(&self, f: &[f64]) -> Vec<f64> {
        self.apply_t(f, false)
    }

    /// Transpose of [`Collocation::d_t`] as a matrix on nodal values.
    pub fn d_t_transpose(&self, f: &[f64]) -> Vec<f64> {
        self.apply_t(f, true)
    }

    fn apply_t(&self, f: &[f64], transposed: bool) -> Vec<f64> {
        assert_eq!(f.len(), self.len());
        let (nt, n) = (self.n_t, self.n_ang);
        let h = n / 2;
        let idx = |it: usize, i1: usize, i2: usize| (it * n + i1) * n + i2;
        let mut out = vec![0.0; f.len()];
        let results: Vec<[Vec<f64>; 4]> = (0..h * h)
            .into_par_iter()
            .map(|q| {
                let (i1, i2) = (q / h, q % h);
                let mut lines = [vec![0.0; nt], vec![0.0; nt], vec![0.0; nt], vec![0.0; nt]];
                for it in 0..nt {
                    let f00 = f[idx(it, i1, i2)];
                    let f01 = f[idx(it, i1, i2 + h)];
                    let f10 = f[idx(it, i1 + h, i2)];
                    let f11 = f[idx(it, i1 + h, i2 + h)];
                    // classes indexed by 2a + b
                    lines[0][it] = 0.25 * (f00 + f10 + f01 + f11);
                    lines[1][it] = 0.25 * (f00 + f10 - f01 - f11);
                    lines[2][it] = 0.25 * (f00 - f10 + f01 - f11);
                    lines[3][it] = 0.25 * (f00 - f10 - f01 + f11);
                }
                let mut d = [vec![0.0; nt], vec![0.0; nt], vec![0.0; nt], vec![0.0; nt]];
                for p in 0..4 {
                    matvec(self.tdiff.get(p, transposed), &lines[p], &mut d[p]);
                }
                let mut res = [vec![0.0; nt], vec![0.0; nt], vec![0.0; nt], vec![0.0; nt]];
                for it in 0..nt {
                    let (d0, d1, d2, d3) = (d[0][it], d[1][it], d[2][it], d[3][it]);
                    res[0][it] = d0 + d1 + d2 + d3;
                    res[1][it] = d0 - d1 + d2 - d3;
                    res[2][it] = d0 + d1 - d2 - d3;
                    res[3][it] = d0 - d1 - d2 + d3;
                }
                res
            })
            .collect();
        for (q, res) in results.iter().enumerate() {
            let (i1, i2) = (q / h, q % h);
            for it in 0..nt {
                out[idx(it, i1, i2)] = res[0][it];
                out[idx(it, i1, i2 + h)] = res[1][it];
                out[idx(it, i1 + h, i2)] = res[2][it];
                out[idx(it, i1 + h, i2 + h)] = res[3][it];
            }
        }
        out
    }

    /// Derivative along frame vector `τ_{i+1}`.
    pub fn tau(&self, i: usize, f: &[f64]) -> Vec<f64> {
        match i {
            0 => {
                let mut a = self.d_phi1(f);
                let b = self.d_phi2(f);
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                a
            }
            1 => self.d_t(f),
            2 => {
                let a = self.d_phi1(f);
                let b = self.d_phi2(f);
                self.combine_tau3(&a, &b)
            }
            _ => panic!("frame index {i} out of range"),
        }
    }

    /// Transpose of [`Collocation::tau`]. `τ₁` and `τ₃` are antisymmetric
    /// because the Fourier matrix is and the `t`-dependent factors commute
    /// with angular differentiation.
    pub fn tau_transpose(&self, i: usize, f: &[f64]) -> Vec<f64> {
        match i {
            0 | 2 => {
                let mut v = self.tau(i, f);
                v.iter_mut().for_each(|x| *x = -*x);
                v
            }
            1 => self.d_t_transpose(f),
            _ => panic!("frame index {i} out of range"),
        }
    }

    /// All three frame derivatives of `f`.
    pub fn frame_derivatives(&self, f: &[f64]) -> [Vec<f64>; 3] {
        let a = self.d_phi1(f);
        let b = self.d_phi2(f);
        let t3 = self.combine_tau3(&a, &b);
        let t1: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        [t1, self.d_t(f), t3]
    }

    fn combine_tau3(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let per_t = self.n_ang * self.n_ang;
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(k, (x, y))| {
                let it = k / per_t;
                self.cot[it] * x - self.tan[it] * y
            })
            .collect()
    }
}

/// `L²` projection of grid functions onto restrictions of ambient
/// polynomials of degree `≤ L`.
///
/// An angular mode `e^{i(m₁φ₁ + m₂φ₂)}` of such a polynomial has `t`-profile
/// `sin^{|m₁|}t cos^{|m₂|}t · p(cos 2t)` with `deg p ≤ (L − |m₁| − |m₂|)/2`,
/// and the volume form is uniform in `x = cos 2t`, so the projection splits
/// into one small weighted least-squares problem per `(|m₁|, |m₂|)`.
#[derive(Clone)]
pub struct HarmonicFilter {
    n_t: usize,
    n_ang: usize,
    degree: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    // indexed by a * (degree + 1) + b, empty when a + b > degree
    proj: Vec<Vec<f64>>,
}

impl std::fmt::Debug for HarmonicFilter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HarmonicFilter").field("n_t", &self.n_t).field("n_ang", &self.n_ang).field("degree", &self.degree).finish()
    }
}

impl HarmonicFilter {
    /// Largest degree the grid resolves: below the angular Nyquist number and
    /// with the projection Gram matrix integrated exactly.
    pub fn max_degree(n_t: usize, n_ang: usize) -> usize {
        (n_ang / 2 - 1).min(2 * n_t - 2)
    }

    pub fn new(t: &[f64], t_weights: &[f64], n_ang: usize, degree: usize) -> Self {
        let n_t = t.len();
        let degree = degree.min(Self::max_degree(n_t, n_ang));
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n_ang);
        let ifft = planner.plan_fft_inverse(n_ang);
        let sw: Vec<f64> = t_weights.iter().map(|w| w.sqrt()).collect();
        let mut proj = vec![Vec::new(); (degree + 1) * (degree + 1)];
        for a in 0..=degree {
            for b in 0..=degree - a {
                let cols = (degree - a - b) / 2 + 1;
                let basis = nalgebra::DMatrix::from_fn(n_t, cols, |i, j| {
                    let (s, c) = t[i].sin_cos();
                    sw[i] * s.powi(a as i32) * c.powi(b as i32) * legendre(j, (2.0 * t[i]).cos())
                });
                let q = basis.qr().q();
                let qqt = &q * q.transpose();
                let mut m = vec![0.0; n_t * n_t];
                for i in 0..n_t {
                    for j in 0..n_t {
                        m[i * n_t + j] = qqt[(i, j)] * sw[j] / sw[i];
                    }
                }
                proj[a * (degree + 1) + b] = m;
            }
        }
        Self { n_t, n_ang, degree, fft, ifft, proj }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Projects `f` in place.
    pub fn apply(&self, f: &mut [f64]) {
        let (nt, n) = (self.n_t, self.n_ang);
        let per = n * n;
        assert_eq!(f.len(), nt * per);
        let mut buf: Vec<Complex<f64>> = f.iter().map(|&v| Complex::new(v, 0.0)).collect();
        let transpose_layers = |buf: &mut [Complex<f64>]| {
            for layer in buf.chunks_mut(per) {
                for i in 0..n {
                    for j in i + 1..n {
                        layer.swap(i * n + j, j * n + i);
                    }
                }
            }
        };
        // layer layout [i1][i2] -> [m2][m1]
        self.fft.process(&mut buf);
        transpose_layers(&mut buf);
        self.fft.process(&mut buf);
        let signed = |m: usize| if m <= n / 2 { m } else { n - m };
        let mut line = vec![Complex::new(0.0, 0.0); nt];
        for m2 in 0..n {
            for m1 in 0..n {
                let (a, b) = (signed(m1), signed(m2));
                let at = |it: usize| it * per + m2 * n + m1;
                if a + b > self.degree || 2 * a == n || 2 * b == n {
                    (0..nt).for_each(|it| buf[at(it)] = Complex::new(0.0, 0.0));
                    continue;
                }
                let p = &self.proj[a * (self.degree + 1) + b];
                for (i, l) in line.iter_mut().enumerate() {
                    let row = &p[i * nt..(i + 1) * nt];
                    *l = row.iter().enumerate().map(|(j, c)| buf[at(j)] * *c).sum();
                }
                (0..nt).for_each(|it| buf[at(it)] = line[it]);
            }
        }
        self.ifft.process(&mut buf);
        transpose_layers(&mut buf);
        self.ifft.process(&mut buf);
        let scale = 1.0 / per as f64;
        f.iter_mut().zip(&buf).for_each(|(v, c)| *v = c.re * scale);
    }
}

fn legendre(n: usize, x: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return p0;
    }
    for k in 1..n {
        let p2 = ((2 * k + 1) as f64 * x * p1 - k as f64 * p0) / (k + 1) as f64;
        p0 = p1;
        p1 = p2;
    }
    p1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fourier_matrix_differentiates_trig_polynomials() {
        let n = 16;
        let d = fourier_matrix(n);
        let h = 2.0 * std::f64::consts::PI / n as f64;
        let f: Vec<f64> = (0..n).map(|j| (3.0 * j as f64 * h).sin() + (5.0 * j as f64 * h).cos()).collect();
        let mut df = vec![0.0; n];
        matvec(&d, &f, &mut df);
        for j in 0..n {
            let x = j as f64 * h;
            let exact = 3.0 * (3.0 * x).cos() - 5.0 * (5.0 * x).sin();
            assert!((df[j] - exact).abs() < 1e-12);
        }
        for i in 0..n {
            for j in 0..n {
                assert_eq!(d[i * n + j], -d[j * n + i]);
            }
        }
    }

    #[test]
    fn barycentric_matrix_is_exact_on_polynomials() {
        let x: Vec<f64> = (0..7).map(|k| (k as f64 * 0.4 - 1.2).tanh()).collect();
        let d = barycentric_matrix(&x);
        let f: Vec<f64> = x.iter().map(|v| v.powi(6) - 2.0 * v.powi(3) + v).collect();
        let mut df = vec![0.0; x.len()];
        matvec(&d, &f, &mut df);
        for (i, v) in x.iter().enumerate() {
            let exact = 6.0 * v.powi(5) - 6.0 * v.powi(2) + 1.0;
            assert!((df[i] - exact).abs() < 1e-10, "{} vs {}", df[i], exact);
        }
    }

    /// Frame derivatives of ambient polynomials against their exact gradients.
    #[test]
    fn frame_derivatives_of_ambient_monomials() {
        let g = build_grid(12, 12).unwrap();
        let coll = g.collocation();
        let polys: Vec<(Box<dyn Fn(&[f64; 4]) -> f64>, Box<dyn Fn(&[f64; 4]) -> [f64; 4]>)> = vec![
            (Box::new(|x| x[0]), Box::new(|_| [1.0, 0.0, 0.0, 0.0])),
            (Box::new(|x| x[2] * x[3]), Box::new(|x| [0.0, 0.0, x[3], x[2]])),
            (
                Box::new(|x| x[0].powi(3) * x[2] - x[1] * x[3].powi(2)),
                Box::new(|x| [3.0 * x[0].powi(2) * x[2], -x[3].powi(2), x[0].powi(3), -2.0 * x[1] * x[3]]),
            ),
            (Box::new(|x| x[0] * x[1] * x[2] * x[3]), Box::new(|x| [x[1] * x[2] * x[3], x[0] * x[2] * x[3], x[0] * x[1] * x[3], x[0] * x[1] * x[2]])),
        ];
        for (f, grad) in &polys {
            let vals = g.sample(f);
            let d = coll.frame_derivatives(&vals);
            for k in 0..g.len() {
                let gr = grad(&g.ambient()[k]);
                for i in 0..3 {
                    let exact = crate::geometry::dot4(&gr, &g.frames()[k].tau[i]);
                    assert!((d[i][k] - exact).abs() < 1e-10, "dir {i} node {k}: {} vs {exact}", d[i][k]);
                }
            }
        }
    }

    #[test]
    fn transposes_match_dense_adjoint() {
        let g = build_grid(5, 6).unwrap();
        let coll = g.collocation();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = g.len();
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        for i in 0..3 {
            let du = coll.tau(i, &u);
            let dtv = coll.tau_transpose(i, &v);
            let lhs: f64 = du.iter().zip(&v).map(|(a, b)| a * b).sum();
            let rhs: f64 = u.iter().zip(&dtv).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()), "τ{}: {lhs} vs {rhs}", i + 1);
        }
    }

    #[test]
    fn harmonic_filter_is_a_weighted_projection() {
        let g = build_grid(9, 12).unwrap();
        let filt = HarmonicFilter::new(g.t_nodes(), g.t_weights(), 12, 5);
        assert_eq!(filt.degree(), 5);
        // degree-5 polynomial is kept, degree-6 part is removed
        let keep = g.sample(|x| x[0].powi(3) * x[2] * x[3] - x[1] + 0.5 * x[2] * x[2]);
        let mut v = keep.clone();
        filt.apply(&mut v);
        for (a, b) in v.iter().zip(&keep) {
            assert!((a - b).abs() < 1e-11);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (mut pf, mut ph) = (f.clone(), h.clone());
        filt.apply(&mut pf);
        filt.apply(&mut ph);
        let mut ppf = pf.clone();
        filt.apply(&mut ppf);
        for (a, b) in ppf.iter().zip(&pf) {
            assert!((a - b).abs() < 1e-11);
        }
        let w = g.weights();
        let lhs: f64 = (0..g.len()).map(|k| w[k] * pf[k] * h[k]).sum();
        let rhs: f64 = (0..g.len()).map(|k| w[k] * f[k] * ph[k]).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        // x₁⁶ has a nonzero degree-6 harmonic component
        let mut hi = g.sample(|x| x[0].powi(6));
        let orig = hi.clone();
        filt.apply(&mut hi);
        assert!(hi.iter().zip(&orig).any(|(a, b)| (a - b).abs() > 1e-3));
    }
}
