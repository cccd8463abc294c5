use cgflow::fields::{FgfParams, OverlapMode, PoissonParams};
use cgflow::matalg::{assemble_block, ellipticity_ratio};
use cgflow::renorm::*;
use cgflow::SamplerSpec;

fn laminate() -> SamplerSpec {
    SamplerSpec::Laminate { values: [1.0, 4.0], width: 1 }
}

fn poisson() -> SamplerSpec {
    SamplerSpec::Poisson(PoissonParams {
        rho1: 0.02,
        rho2: 0.02,
        lambda: 0.1,
        big_lambda: 10.0,
        radius: 1.0,
        mode: OverlapMode::Indicator,
    })
}

#[test]
fn laminate_flow_approaches_layered_means() {
    let flow = mc_flow(&laminate(), 2, &[1, 2, 3], 40, 11).unwrap();
    let last = flow.last().unwrap();
    let c = last.a_bar.components().unwrap();
    // across the layers s* tends to the harmonic mean, along them s to the arithmetic mean
    assert!((c.s_star.mat()[(0, 0)] - 1.6).abs() < 0.05, "{}", c.s_star.mat());
    assert!((c.s.mat()[(1, 1)] - 2.5).abs() < 0.05, "{}", c.s.mat());
    let mono = flow_monotonicity(&flow).unwrap();
    assert!(mono.holds(3.0), "{mono:?}");
    assert!(flow.windows(2).all(|w| w[1].theta_n < w[0].theta_n));
    let fit = theta_convergence_fit(&flow).unwrap();
    assert!(fit.kappa_hat > 0.0, "{fit:?}");
}

#[test]
fn theta_is_consistent_with_reassembly() {
    for r in mc_flow(&poisson(), 2, &[1, 2], 10, 3).unwrap() {
        let c = r.a_bar.components().unwrap();
        let back = assemble_block(&c.s, &c.s_star, &c.k).unwrap();
        let t = ellipticity_ratio(&back).unwrap().theta;
        assert!((t - r.theta_n).abs() < 1e-9 * r.theta_n, "{t} vs {}", r.theta_n);
        assert!(r.theta_hat >= 1.0 - 3.0 * r.theta_hat_stderr - 1e-12);
        assert!(r.theta_n >= r.theta_hat - 1e-9);
        assert!(r.a_bar.mat().symmetric_eigenvalues().min() > 0.0);
    }
}

#[test]
fn flow_is_independent_of_pool_size() {
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| mc_flow(&poisson(), 2, &[1, 2], 12, 99).unwrap())
    };
    let a = serde_json::to_string(&run(1)).unwrap();
    let b = serde_json::to_string(&run(3)).unwrap();
    assert_eq!(a, b);
    let back: Vec<FlowRecord> = serde_json::from_str(&a).unwrap();
    assert_eq!(serde_json::to_string(&back).unwrap(), a);
}

#[test]
fn additivity_defect_matches_mean_formula() {
    let p = [0.4, -0.2];
    let q = [0.1, 0.7];
    let mut last = f64::INFINITY;
    for k in 0..2 {
        let est = additivity_defect(&laminate(), 2, 2, k, &p, &q, 30, 5).unwrap();
        // J is quadratic in A, so the mean defect is exactly the formula on the means
        assert!((est.mean - est.formula).abs() < 1e-9 * (1.0 + est.mean.abs()), "{est:?}");
        assert!(est.mean >= -3.0 * est.stderr);
        assert!(est.mean < last);
        last = est.mean;
    }
}

#[test]
fn stream_limit_has_antisymmetric_k() {
    let s = SamplerSpec::Stream { lambda: 1.0, fgf: FgfParams::new(0.5, 0, 2) };
    let flow = mc_flow(&s, 2, &[1, 2], 16, 8).unwrap();
    let lim = homogenized_limit(&flow).unwrap();
    let last = flow.last().unwrap();
    assert!(lim.k_sym_norm < 3.0 * last.a_bar_stderr_norm() + 1e-9, "{lim:?}");
    assert!(lim.theta_gap >= 0.0);
    let prev = &flow[0];
    assert!(4.0 * (last.theta_n - 1.0) <= 4.0 * (prev.theta_n - 1.0) + 12.0 * prev.theta_n_stderr.hypot(last.theta_n_stderr));
}

#[test]
fn poisson_pigeonhole_is_recorded() {
    let flow = mc_flow(&poisson(), 2, &[0, 1, 2, 3], 20, 2).unwrap();
    let mono = flow_monotonicity(&flow).unwrap();
    assert!(mono.theta_worst <= 3.0, "{mono:?}");
    // the first level is always a candidate when the gap tolerance is loose
    assert_eq!(pigeonhole_scan(&flow, 1, f64::INFINITY), Some(1));
    let hit = pigeonhole_scan(&flow, 1, 0.1);
    println!("pigeonhole hit for delta1 = 0.1: {hit:?}");
}
