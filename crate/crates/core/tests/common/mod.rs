#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use ruv3::MappingMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Cyclic Jacobi eigensolver. Returns eigenvalues in decreasing order and
/// the matching eigenvectors as columns.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut a = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = a.norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (values, vectors)
}

/// Brute-force RUV-III: explicit projections, Jacobi eigenvectors and an
/// explicit inverse. Returns `W_hat alpha_hat`.
pub fn dense_oracle_removed(
    y: &DMatrix<f64>,
    mapping: &MappingMatrix,
    controls: &[usize],
    k: usize,
) -> DMatrix<f64> {
    let m = y.nrows();
    let big_m = mapping.indicator();
    let mtm_inv = (big_m.transpose() * &big_m).try_inverse().expect("M'M invertible");
    let p_m = &big_m * mtm_inv * big_m.transpose();
    let p_perp = DMatrix::<f64>::identity(m, m) - p_m;
    let s = &p_perp * y * y.transpose() * &p_perp;
    let s = (&s + s.transpose()) * 0.5;
    let (_, vecs) = jacobi_eigen(&s);
    let u = vecs.columns(0, k).into_owned();
    let alpha = u.transpose() * y;
    let yc = DMatrix::from_fn(m, controls.len(), |i, j| y[(i, controls[j])]);
    let alpha_c = DMatrix::from_fn(k, controls.len(), |i, j| alpha[(i, controls[j])]);
    let ones = DMatrix::from_element(m, m, 1.0 / m as f64);
    let p1_perp = DMatrix::<f64>::identity(m, m) - ones;
    let c_inv = (&alpha_c * alpha_c.transpose()).try_inverse().expect("control system invertible");
    let w = p1_perp * yc * alpha_c.transpose() * c_inv;
    w * alpha
}

pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}
