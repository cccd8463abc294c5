use cgflow::matalg::{
    assemble_block, center, ellipticity_ratio, extract_components, metric_geomean, spec_norm, spectral_geomean, star_dual, BlockMatrix, Mat,
    SkewMatrix, SymMatrix,
};
use proptest::prelude::*;

fn spd(d: usize, v: &[f64], floor: f64) -> SymMatrix {
    let m = Mat::from_fn(d, d, |i, j| v[i * d + j]);
    SymMatrix::new(&m * m.transpose() + Mat::identity(d, d) * floor)
}

fn parts() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..=3).prop_flat_map(|d| {
        let v = || proptest::collection::vec(-2.0f64..2.0, d * d);
        (Just(d), v(), v(), v(), proptest::collection::vec(-2.0f64..2.0, 3))
    })
}

fn sorted_eigs(m: &Mat) -> Vec<f64> {
    let mut e: Vec<f64> = m.clone().complex_eigenvalues().iter().map(|z| z.re).collect();
    e.sort_by(f64::total_cmp);
    e
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn assemble_extract_round_trip((d, a, b, k, _) in parts()) {
        let s = spd(d, &a, 0.2);
        let ss = spd(d, &b, 0.2);
        let k = Mat::from_fn(d, d, |i, j| k[i * d + j]);
        let blk = assemble_block(&s, &ss, &k).unwrap();
        let c = extract_components(&blk).unwrap();
        let scale = 1.0 + spec_norm(blk.mat());
        prop_assert!(spec_norm(&(c.s.mat() - s.mat())) < 1e-12 * scale);
        prop_assert!(spec_norm(&(c.s_star.mat() - ss.mat())) < 1e-12 * scale * spec_norm(ss.mat()));
        prop_assert!(spec_norm(&(&c.k - &k)) < 1e-12 * scale * (1.0 + spec_norm(ss.mat())));
        let again = assemble_block(&c.s, &c.s_star, &c.k).unwrap();
        prop_assert!(spec_norm(&(again.mat() - blk.mat())) < 1e-12 * scale * scale);
    }

    #[test]
    fn centering_keeps_s_and_s_star((d, a, b, k, h) in parts()) {
        let ss = spd(d, &b, 0.2);
        let s = SymMatrix::new(ss.mat() + spd(d, &a, 0.0).mat());
        let k = Mat::from_fn(d, d, |i, j| k[i * d + j]);
        let h = SkewMatrix::from_coords(d, &h[..d * (d - 1) / 2]);
        let blk = assemble_block(&s, &ss, &k).unwrap();
        let c0 = extract_components(&blk).unwrap();
        let cen = center(&blk, &h);
        let c1 = extract_components(&cen).unwrap();
        let scale = 1.0 + spec_norm(blk.mat()).powi(2);
        prop_assert!(spec_norm(&(c1.s.mat() - c0.s.mat())) < 1e-12 * scale);
        prop_assert!(spec_norm(&(c1.s_star.mat() - c0.s_star.mat())) < 1e-12 * scale);
        prop_assert!(spec_norm(&(&c1.k - (&c0.k - h.to_mat()))) < 1e-12 * scale);
        let t0 = ellipticity_ratio(&blk).unwrap().theta;
        let t1 = ellipticity_ratio(&cen).unwrap().theta;
        prop_assert!(t0 >= 1.0 - 1e-9);
        prop_assert!((t0 - t1).abs() < 1e-8 * t0, "{} vs {}", t0, t1);
    }

    #[test]
    fn star_dual_is_an_involution((d, a, b, k, _) in parts()) {
        let blk = assemble_block(&spd(d, &a, 0.2), &spd(d, &b, 0.2), &Mat::from_fn(d, d, |i, j| k[i * d + j])).unwrap();
        let back = star_dual(&star_dual(&blk));
        prop_assert_eq!(back.mat(), blk.mat());
    }

    #[test]
    fn metric_mean_solves_riccati((d, a, b, _, _) in parts()) {
        let a = spd(d, &a, 0.1);
        let b = spd(d, &b, 0.1);
        let x = metric_geomean(&a, &b).unwrap();
        let res = x.mat() * a.inverse().unwrap().mat() * x.mat() - b.mat();
        prop_assert!(spec_norm(&res) < 1e-10 * spec_norm(b.mat()).max(1.0));
        let y = metric_geomean(&b, &a).unwrap();
        prop_assert!(spec_norm(&(x.mat() - y.mat())) < 1e-9 * spec_norm(x.mat()));
    }

    #[test]
    fn spectral_mean_squares_to_product_spectrum((d, a, b, _, _) in parts()) {
        let a = spd(d, &a, 0.1);
        let b = spd(d, &b, 0.1);
        let f = spectral_geomean(&a, &b).unwrap();
        let mut got: Vec<f64> = f.eigenvalues().iter().map(|l| l * l).collect();
        got.sort_by(f64::total_cmp);
        let want = sorted_eigs(&(a.mat() * b.mat()));
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w).abs() < 1e-9 * w.abs().max(1e-3), "{:?} vs {:?}", got, want);
        }
    }

    #[test]
    fn block_flat_round_trip((d, a, b, k, _) in parts()) {
        let blk = assemble_block(&spd(d, &a, 0.2), &spd(d, &b, 0.2), &Mat::from_fn(d, d, |i, j| k[i * d + j])).unwrap();
        let back = BlockMatrix::from_flat(d, &blk.flat());
        prop_assert_eq!(back.mat(), blk.mat());
    }
}
