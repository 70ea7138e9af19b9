//! Min-pooling and IP gradients against brute force and finite differences.

use ipnav_core::lidar_prep::{ip_forward, ip_param_grad, min_pool_values, IpFamily, IpParams, PooledScan, Sharing};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ensure, Check};

pub fn brute_min_pool(v: &[f64], k: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < v.len() {
        let mut m = v[i];
        for j in i..i + k {
            if v[j] < m {
                m = v[j];
            }
        }
        out.push(m);
        i += k;
    }
    out
}

pub fn min_pool_sweep(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let k = rng.random_range(1..10);
        let m = rng.random_range(1..40);
        let v: Vec<f64> = (0..k * m).map(|_| rng.random_range(0.0..30.0)).collect();
        let got = min_pool_values(&v, k).map_err(|e| e.to_string())?;
        ensure!(
            got == brute_min_pool(&v, k),
            "case {case}: window {k}, {m} outputs differ"
        );
    }
    Ok(format!("{cases} scans exact"))
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Per-beam parameter gradients of every trainable family against central
/// differences, `draws` random scans per family with `z` in `[-3, 3]`.
pub fn param_grad_sweep(draws: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for family in IpFamily::PARAMETRIC {
        for _ in 0..draws {
            let m = 6;
            let y_min: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
            let y_max: Vec<f64> = y_min.iter().map(|lo| lo + rng.random_range(0.5..29.0)).collect();
            let values: Vec<f64> = (0..m).map(|i| rng.random_range(y_min[i]..=y_max[i])).collect();
            let scan = PooledScan {
                values,
                y_min,
                y_max,
                window: 1,
            };
            let mut params = IpParams::zeros(family, Sharing::PerBeam, m);
            for r in &mut params.raw {
                *r = rng.random_range(-3.0..3.0);
            }
            let analytic = ip_param_grad(&scan, &params).map_err(|e| e.to_string())?;
            for i in 0..m {
                let mut plus = params.clone();
                let mut minus = params.clone();
                plus.raw[i] += h;
                minus.raw[i] -= h;
                let fd = (ip_forward(&scan, &plus)[i] - ip_forward(&scan, &minus)[i]) / (2.0 * h);
                let e = rel_err(analytic[i], fd);
                ensure!(e < 1e-5, "{family}: analytic {} vs difference {fd}", analytic[i]);
                worst = worst.max(e);
            }
        }
    }
    Ok(format!("{draws} scans per family, worst relative error {worst:.1e}"))
}

/// Input derivatives of every family against central differences.
pub fn input_grad_sweep(draws: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for family in IpFamily::ALL {
        for _ in 0..draws {
            let lo = rng.random_range(0.05..1.0);
            let hi = lo + rng.random_range(0.5..29.0);
            let y = rng.random_range(lo + h..hi);
            let z = rng.random_range(-3.0..3.0);
            let fd = (family.apply(y + h, lo, hi, z) - family.apply(y - h, lo, hi, z)) / (2.0 * h);
            let a = family.d_input(y, lo, hi, z);
            let e = rel_err(a, fd);
            ensure!(e < 1e-5, "{family}: {a} vs {fd}");
            worst = worst.max(e);
        }
    }
    Ok(format!("{draws} points per family, worst relative error {worst:.1e}"))
}
