#![allow(dead_code)]

use cgflow::Mat;

/// Effective matrix of a 2-d periodic scalar coefficient, by Q1 elements on the
/// torus with each unit cell split `refine × refine`. `coef` is read at integer cells.
pub fn periodic_q1_homogenized(coef: &dyn Fn(usize, usize) -> f64, period: usize, refine: usize) -> [[f64; 2]; 2] {
    let n = period * refine;
    let h = 1.0 / refine as f64;
    let node = |i: usize, j: usize| (i % n) * n + (j % n);
    let g = 0.5 / 3f64.sqrt();
    let gauss = [0.5 - g, 0.5 + g];
    // gradients of the four local bilinear functions at a reference point
    let grads = |x: f64, y: f64| -> [[f64; 2]; 4] {
        [[-(1.0 - y), -(1.0 - x)], [1.0 - y, -x], [-y, 1.0 - x], [y, x]].map(|v| [v[0] / h, v[1] / h])
    };
    let corners = [(0, 0), (1, 0), (0, 1), (1, 1)];
    let mut k = Mat::zeros(n * n, n * n);
    let mut rhs = Mat::zeros(n * n, 2);
    for i in 0..n {
        for j in 0..n {
            let c = coef(i / refine, j / refine);
            let ids: Vec<usize> = corners.iter().map(|(a, b)| node(i + a, j + b)).collect();
            for &x in &gauss {
                for &y in &gauss {
                    let gr = grads(x, y);
                    let w = 0.25 * h * h * c;
                    for a in 0..4 {
                        for b in 0..4 {
                            k[(ids[a], ids[b])] += w * (gr[a][0] * gr[b][0] + gr[a][1] * gr[b][1]);
                        }
                        for e in 0..2 {
                            rhs[(ids[a], e)] -= w * gr[a][e];
                        }
                    }
                }
            }
        }
    }
    // pin one node
    for r in 0..n * n {
        k[(0, r)] = 0.0;
        k[(r, 0)] = 0.0;
    }
    k[(0, 0)] = 1.0;
    rhs[(0, 0)] = 0.0;
    rhs[(0, 1)] = 0.0;
    let phi = k.lu().solve(&rhs).expect("periodic system");
    let mut out = [[0.0; 2]; 2];
    let area = (period * period) as f64;
    for i in 0..n {
        for j in 0..n {
            let c = coef(i / refine, j / refine);
            let ids: Vec<usize> = corners.iter().map(|(a, b)| node(i + a, j + b)).collect();
            for &x in &gauss {
                for &y in &gauss {
                    let gr = grads(x, y);
                    let w = 0.25 * h * h * c / area;
                    for e in 0..2 {
                        let mut grad = [0.0; 2];
                        grad[e] = 1.0;
                        for a in 0..4 {
                            grad[0] += phi[(ids[a], e)] * gr[a][0];
                            grad[1] += phi[(ids[a], e)] * gr[a][1];
                        }
                        out[0][e] += w * grad[0];
                        out[1][e] += w * grad[1];
                    }
                }
            }
        }
    }
    out
}

/// Checkerboard of squares of side `square` taking `alpha` on even squares.
pub fn checker(alpha: f64, beta: f64, square: usize) -> impl Fn(usize, usize) -> f64 {
    move |i, j| if (i / square + j / square).is_multiple_of(2) { alpha } else { beta }
}
