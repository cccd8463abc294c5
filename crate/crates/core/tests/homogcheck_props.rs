use cgflow::cellsolve::coarse_matrix;
use cgflow::fields::{
    sample_checkerboard, sample_laminate, sample_lognormal, sample_poisson_inclusions, sample_stream_field, FgfParams, FieldMeta, OverlapMode,
    PoissonParams, Region,
};
use cgflow::homogcheck::{
    bridge_middle, concentric, dirichlet_error, error_profile, harmonic_approx_forward, harmonic_approx_reverse, lipschitz_diagnostic,
    profile_subadditivity_gap, reference_defect, Calibration, HarmonicPoly, Reference, CALIBRATION_VERSION,
};
use cgflow::matalg::{assemble_block, Mat, SkewMatrix, SymMatrix};
use cgflow::{CoefficientField, TriadicCube};
use proptest::prelude::*;

fn spd(d: usize, v: &[f64]) -> SymMatrix {
    let b = Mat::from_fn(d, d, |i, j| v[i * d + j]);
    SymMatrix::new(&b * b.transpose() + Mat::identity(d, d) * 0.2)
}

fn block_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
    (
        prop::collection::vec(-1.5..1.5f64, 4),
        prop::collection::vec(-1.0..1.0f64, 4),
        prop::collection::vec(-1.5..1.5f64, 4),
        prop::collection::vec(-1.0..1.0f64, 2),
        -2.0..2.0f64,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn bridge_sandwich((ss, gap, s0v, kk, k0) in block_strategy()) {
        let d = 2;
        let s_star = spd(d, &ss);
        let g = Mat::from_fn(d, d, |i, j| gap[i * d + j]);
        let s = SymMatrix::new(s_star.mat() + &g * g.transpose());
        let k = SkewMatrix::from_coords(d, &kk[..1]).to_mat() + Mat::from_fn(d, d, |i, j| if i == j { kk[1] * (1.0 + i as f64) } else { 0.0 });
        let a = assemble_block(&s, &s_star, &k).unwrap();
        let r = Reference::new(spd(d, &s0v), SkewMatrix::from_coords(d, &[k0])).unwrap();
        let sup = reference_defect(&a, &r).unwrap();
        let mid = bridge_middle(&a, &r).unwrap();
        prop_assert!(sup <= mid * (1.0 + 1e-9) + 1e-12, "sup {} mid {}", sup, mid);
        prop_assert!(mid <= 3.0 * sup * (1.0 + 1e-9) + 1e-12, "sup {} mid {}", sup, mid);
    }
}

fn stream(seed: u64, region: Region) -> CoefficientField {
    sample_stream_field(1.0, &FgfParams::new(0.5, 0, 2), &region, seed).unwrap()
}

#[test]
fn bridge_sandwich_on_sampled_coarse_matrices() {
    let region = Region::new(vec![0, 0], vec![27, 27]);
    for seed in 0..3 {
        let fields = [stream(seed, region.clone()), sample_lognormal(0.5, &FgfParams::new(0.5, 0, 2), &region, seed).unwrap()];
        for f in &fields {
            for r in [Reference::isotropic(2, 1.3).unwrap(), Reference::new(SymMatrix::diag(&[0.7, 2.0]), SkewMatrix::from_coords(2, &[0.4])).unwrap()] {
                for k in 0..=3 {
                    for sub in cgflow::grids::partition(&TriadicCube::origin(2, 3), k).unwrap().into_iter().step_by(5) {
                        let a = coarse_matrix(f, &sub).unwrap();
                        let (sup, mid) = (reference_defect(&a, &r).unwrap(), bridge_middle(&a, &r).unwrap());
                        assert!(sup <= mid * (1.0 + 1e-9) + 1e-12 && mid <= 3.0 * sup * (1.0 + 1e-9) + 1e-12, "{sup} {mid}");
                    }
                }
            }
        }
    }
}

#[test]
fn constant_field_has_zero_errors() {
    let m = Mat::from_row_slice(2, 2, &[1.5, 0.4, -0.4, 0.8]);
    let r = Reference::from_mat(&m).unwrap();
    let cube = TriadicCube::new(2, vec![9, 9]);
    let outer = TriadicCube::origin(2, 3);
    let f = CoefficientField::constant(Region::from_cube(&outer), &m).unwrap();
    let p = error_profile(&f, &r, &cube, 0.5).unwrap();
    assert!(p.e_s < 1e-6 && p.e_1 < 1e-6, "{p:?}");
    assert!(p.block_dev_max.iter().all(|v| *v < 1e-9));
    let src: Vec<f64> = (0..81).map(|i| (i as f64 * 0.37).sin()).collect();
    let e = dirichlet_error(&f, &r, &cube, &|x| x[0] * x[1] * 0.1 + x[1], Some(&src)).unwrap();
    assert!(e < 1e-10, "{e}");
    let fw = harmonic_approx_forward(&f, &r, &cube, 3).unwrap();
    assert!(fw.error_ratio < 1e-10, "{fw:?}");
    let u0 = HarmonicPoly::affine(vec![13.5, 13.5], vec![0.3, -1.0]);
    let rev = harmonic_approx_reverse(&f, &r, &cube, &u0).unwrap();
    assert!(rev < 1e-9, "{rev}");
}

#[test]
fn wrong_reference_is_detected() {
    let m = Mat::identity(2, 2);
    let cube = TriadicCube::origin(2, 2);
    let f = CoefficientField::constant(Region::from_cube(&cube), &m).unwrap();
    for c in [0.25, 4.0] {
        let r = Reference::isotropic(2, c).unwrap();
        let p = error_profile(&f, &r, &cube, 0.5).unwrap();
        assert!(p.e_s > 0.3, "{c}: {p:?}");
        let src = vec![1.0; 81];
        let e = dirichlet_error(&f, &r, &cube, &|_| 0.0, Some(&src)).unwrap();
        assert!(e > 0.01, "{c}: {e}");
    }
    let r = Reference::new(SymMatrix::identity(2), SkewMatrix::from_coords(2, &[2.0])).unwrap();
    assert!(error_profile(&f, &r, &cube, 1.0).unwrap().e_1 > 0.3);
}

#[test]
fn profile_is_invariant_under_common_centering() {
    let region = Region::new(vec![0, 0], vec![27, 27]);
    let f = stream(5, region.clone());
    let h = SkewMatrix::from_coords(2, &[0.7]);
    let hm = h.to_mat();
    let meta = FieldMeta::new("shifted", serde_json::Value::Null, 0);
    let fc = f.clone();
    let g = CoefficientField::from_fn(region, meta, move |c| fc.at(c).unwrap() + &hm).unwrap();
    let cube = TriadicCube::origin(2, 3);
    let a = coarse_matrix(&f, &cube).unwrap();
    let r = Reference::from_block(&a).unwrap();
    let p1 = error_profile(&f, &r, &cube, 0.5).unwrap();
    let p2 = error_profile(&g, &r.shifted(&h), &cube, 0.5).unwrap();
    for (x, y) in p1.level_max.iter().zip(&p2.level_max) {
        assert!((x - y).abs() < 1e-7 * (1.0 + x), "{x} {y}");
    }
    assert!((p1.e_s - p2.e_s).abs() < 1e-7 * (1.0 + p1.e_s));
}

#[test]
fn profile_sums_match_definition() {
    let region = Region::new(vec![0, 0], vec![27, 27]);
    let f = sample_lognormal(0.5, &FgfParams::new(0.5, 0, 2), &region, 2).unwrap();
    let cube = TriadicCube::origin(2, 3);
    let r = Reference::from_block(&coarse_matrix(&f, &cube).unwrap()).unwrap();
    let p = error_profile(&f, &r, &cube, 0.5).unwrap();
    assert_eq!(p.level_max.len(), 4);
    let mut direct = 0.0;
    for k in 0..=3u32 {
        let mut m = 0f64;
        for sub in cgflow::grids::partition(&cube, k).unwrap() {
            m = m.max(reference_defect(&coarse_matrix(&f, &sub).unwrap(), &r).unwrap().sqrt());
        }
        assert_eq!(m, p.level_max[k as usize]);
        direct += 0.5 * 3f64.powf(0.5 * (k as f64 - 3.0)) * m;
    }
    assert!((direct - p.e_s).abs() < 1e-12);
    assert!(p.e_1 <= p.e_s * 2.0 + 1e-12);
}

#[test]
fn profile_subadditivity_is_reported() {
    let region = Region::new(vec![0, 0], vec![27, 27]);
    let cube = TriadicCube::origin(2, 3);
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..4 {
        let f = stream(seed, region.clone());
        let r = Reference::isotropic(2, 1.2).unwrap();
        for k in 1..3 {
            worst = worst.max(profile_subadditivity_gap(&f, &r, &cube, k, 0.5).unwrap());
        }
    }
    eprintln!("largest E_s(whole) - mean E_s(children): {worst:.4}");
    assert!(worst.is_finite());
}

#[test]
fn quadratic_harmonic_lipschitz_ratio() {
    for (m, d) in [(Mat::identity(2, 2), 2), (Mat::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]), 2), (Mat::identity(3, 3), 3)] {
        let cube = TriadicCube::origin(d, if d == 2 { 3 } else { 2 });
        let f = CoefficientField::constant(Region::from_cube(&cube), &m).unwrap();
        let c = cube.side() as f64 / 2.0;
        let (a0, a1) = (m[(0, 0)], m[(1, 1)]);
        let g = move |x: &[f64]| a1 * (x[0] - c).powi(2) - a0 * (x[1] - c).powi(2) + (x[0] - c);
        let levels: Vec<u32> = (0..cube.level).collect();
        let rep = lipschitz_diagnostic(&f, &cube, &levels, &g).unwrap();
        assert!(rep.max_ratio <= d as f64, "{rep:?}");
        assert!(rep.ratios.iter().all(|(_, v)| *v > 0.0));
    }
    assert_eq!(concentric(&TriadicCube::origin(2, 2), 0).unwrap().base, vec![4, 4]);
}

#[test]
fn checkerboard_dirichlet_error_is_small() {
    let cube = TriadicCube::origin(2, 4);
    let f = sample_checkerboard(1.0, 4.0, 3, &Region::from_cube(&cube), 0).unwrap();
    let r = Reference::isotropic(2, 2.0967).unwrap();
    let c = 40.5;
    let g = move |x: &[f64]| ((x[0] - c) / 27.0).sin() * 20.0 + (x[1] - c) * 0.5;
    let e = dirichlet_error(&f, &r, &cube, &g, None).unwrap();
    assert!(e < 0.1, "{e}");
    let wrong = Reference::isotropic(2, 1.0).unwrap();
    let src = vec![0.01; cube.volume()];
    let e1 = dirichlet_error(&f, &r, &cube, &g, Some(&src)).unwrap();
    let e2 = dirichlet_error(&f, &wrong, &cube, &g, Some(&src)).unwrap();
    assert!(e1 < e2, "{e1} {e2}");
}

#[test]
fn forward_and_reverse_on_random_fields() {
    let cube = TriadicCube::new(2, vec![9, 9]);
    let f = stream(1, Region::new(vec![0, 0], vec![27, 27]));
    let r = Reference::from_block(&coarse_matrix(&f, &TriadicCube::origin(2, 3)).unwrap()).unwrap();
    let fw = harmonic_approx_forward(&f, &r, &cube, 0).unwrap();
    assert!(fw.error_ratio.is_finite() && fw.error_ratio > 0.0 && fw.e1_max > 0.0, "{fw:?}");
    assert_eq!(fw.inner_level, 0);
    let mut u0 = HarmonicPoly::affine(vec![13.5, 13.5], vec![1.0, 0.5]);
    u0.h = SymMatrix::new(Mat::zeros(2, 2));
    let rev = harmonic_approx_reverse(&f, &r, &cube, &u0).unwrap();
    assert!(rev.is_finite() && rev > 0.0);
    let mut bad = u0.clone();
    bad.h = SymMatrix::identity(2);
    assert!(harmonic_approx_reverse(&f, &r, &cube, &bad).is_err());
}

#[test]
fn calibration_json_is_versioned() {
    let c = Calibration {
        version: CALIBRATION_VERSION,
        sampler: "stream".into(),
        level: 2,
        samples: 3,
        seed: 9,
        forward_c: 0.25,
        lipschitz_c: 1.5,
    };
    let s = serde_json::to_string(&c).unwrap();
    assert_eq!(Calibration::from_json(&s).unwrap(), c);
    let old = s.replace(&format!("\"version\":{CALIBRATION_VERSION}"), "\"version\":0");
    assert!(Calibration::from_json(&old).is_err());
}

#[test]
fn lipschitz_ratio_of_affine_data_is_one() {
    let cube = TriadicCube::origin(2, 3);
    let m = Mat::from_row_slice(2, 2, &[1.0, 0.3, -0.3, 2.0]);
    let f = CoefficientField::constant(Region::from_cube(&cube), &m).unwrap();
    let rep = lipschitz_diagnostic(&f, &cube, &[0, 1, 2], &|x| 0.4 * x[0] - x[1]).unwrap();
    for (_, v) in &rep.ratios {
        assert!((v - 1.0).abs() < 1e-9, "{rep:?}");
    }
}

#[test]
fn poisson_lipschitz_ratios_are_recorded() {
    let cube = TriadicCube::origin(2, 3);
    let p = PoissonParams { rho1: 0.005, rho2: 0.005, lambda: 0.01, big_lambda: 100.0, radius: 1.0, mode: OverlapMode::Indicator };
    let c = cube.side() as f64 / 2.0;
    let mut worst = 0f64;
    for seed in 0..20 {
        let f = sample_poisson_inclusions(&p, &Region::from_cube(&cube), seed).unwrap();
        let rep = lipschitz_diagnostic(&f, &cube, &[1, 2], &|x| (x[0] - c) + 0.5 * (x[1] - c)).unwrap();
        worst = worst.max(rep.max_ratio);
    }
    eprintln!("largest Poisson Lipschitz ratio over 20 seeds: {worst:.3}");
    assert!(worst.is_finite() && worst > 0.0);
}

#[test]
fn laminate_reverse_ratio_with_quadratic_data() {
    let cube = TriadicCube::origin(2, 3);
    let f = sample_laminate([1.0, 4.0], 1, &Region::from_cube(&cube), 0).unwrap();
    let r = Reference::new(SymMatrix::diag(&[1.6, 2.5]), SkewMatrix::zero(2)).unwrap();
    let mut u0 = HarmonicPoly::affine(vec![13.5, 13.5], vec![1.0, 0.5]);
    u0.h = SymMatrix::diag(&[2.5 / 27.0, -1.6 / 27.0]);
    let quad = harmonic_approx_reverse(&f, &r, &cube, &u0).unwrap();
    let swapped = Reference::new(SymMatrix::diag(&[2.5, 1.6]), SkewMatrix::zero(2)).unwrap();
    let mut v0 = u0.clone();
    v0.h = SymMatrix::diag(&[1.6 / 27.0, -2.5 / 27.0]);
    let bad = harmonic_approx_reverse(&f, &swapped, &cube, &v0).unwrap();
    eprintln!("laminate reverse ratio {quad:.4} (swapped reference {bad:.4})");
    assert!(quad.is_finite() && quad < bad);
}
