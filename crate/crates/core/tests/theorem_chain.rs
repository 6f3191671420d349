//! The chain `ℱ𝒮_ρ(u) ≥ ℰ_ρ(u*ω) ≥ ℰ_ρ(h*ω) = ℱ𝒮_ρ(h)` on degree-one maps near
//! the Hopf map, with equality exactly on rotations of `h`.

use std::f64::consts::PI;

use hopflab::energetics::{fs_energy, i_q, relaxed_from_parts};
use hopflab::flow::{monitored_q, perturbed_start, Perturbation};
use hopflab::geometry::build_grid;
use hopflab::maps::{pullback_area, AnalyticMap, MapField};
use hopflab::spectral::SpectralBank;

const RHO: f64 = 0.5;

#[test]
fn chain_holds_and_is_tight_only_on_rotations() {
    let g = build_grid(16, 16).unwrap();
    let bank = SpectralBank::build(3).unwrap();
    let fs_h = 16.0 * PI * PI + 32.0 * PI * PI / (RHO * RHO);
    let mut maps: Vec<(String, MapField, bool)> = ["hopf", "hopf-rot:1", "hopf-rot:2", "stretch-hopf:1.2", "stretch-hopf:0.8"]
        .iter()
        .map(|s| (s.to_string(), MapField::from_analytic(AnalyticMap::parse(s).unwrap(), &g), s.starts_with("hopf")))
        .collect();
    for seed in 0..3 {
        let p = perturbed_start(&Perturbation::Random { amplitude: 0.05, seed }, &bank, &g).unwrap();
        maps.push((format!("perturbed:{seed}"), p.map, false));
    }
    for (name, u, rigid) in &maps {
        let a = pullback_area(u, &g).unwrap();
        let q = monitored_q(u, 3, &bank, &g).unwrap();
        assert!((q - 1.0).abs() < 1e-2, "{name}: Q = {q}");
        // Q = 1 exactly on the homotopy class; the truncated series is only a check
        let relaxed = relaxed_from_parts(1.0, i_q(&a, 1, &g).unwrap(), i_q(&a, 2, &g).unwrap(), RHO).unwrap();
        let fs = fs_energy(u, RHO, &g).unwrap().total;
        assert!(fs >= relaxed - 1e-8, "{name}: ℱ𝒮 = {fs} below ℰ = {relaxed}");
        assert!(relaxed >= fs_h - 1e-6, "{name}: ℰ = {relaxed} below ℱ𝒮(h) = {fs_h}");
        if *rigid {
            assert!((fs - fs_h).abs() < 1e-8, "{name}: {fs}");
        } else {
            assert!(fs > fs_h + 1e-6, "{name}: {fs} not above {fs_h}");
        }
    }
}
