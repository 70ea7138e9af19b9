//! Central finite-difference checks of graph gradients.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::ParamSet;
use super::GradError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub step: f64,
    /// Lower bound on the relative-error denominator, so coordinates with a
    /// near-zero gradient are compared on an absolute scale.
    pub floor: f64,
    /// Coordinates checked per tensor; `None` checks all of them.
    pub max_coords_per_tensor: Option<usize>,
    /// Extra random directions checked through all parameters at once.
    pub directions: usize,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-4,
            max_coords_per_tensor: Some(48),
            directions: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    /// Parameter name and coordinate (or direction) of the worst error.
    pub worst: String,
    pub n_checked: usize,
    /// Probes skipped because the step crossed a ReLU or min kink.
    pub n_skipped: usize,
}

impl GradcheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol && self.n_checked > 0
    }

    fn record(&mut self, err: f64, at: impl FnOnce() -> String) {
        self.n_checked += 1;
        if err > self.max_rel_err || err.is_nan() {
            self.max_rel_err = if err.is_nan() { f64::INFINITY } else { err };
            self.worst = at();
        }
    }
}

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares the gradient of `loss` with respect to every tensor in `params`
/// against central differences.
///
/// `loss` receives a fresh graph and the bound parameter variables (in
/// `params` order) and must return a scalar. It must be deterministic:
/// noise and dropout masks are the caller's to fix.
pub fn gradcheck<F>(params: &ParamSet<f64>, cfg: &GradcheckConfig, mut loss: F) -> Result<GradcheckReport, GradError>
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var, GradError>,
{
    let mut g = Graph::new();
    let vars = params.bind(&mut g, true);
    let out = loss(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .zip(&vars)
        .map(|(p, &v)| g.grad(v).map_or_else(|| vec![0.0; p.value.len()], <[f64]>::to_vec))
        .collect();
    let base_sig = g.kink_signature();
    drop(g);

    let mut eval = |ps: &ParamSet<f64>| -> Result<(f64, Vec<bool>), GradError> {
        let mut g = Graph::new();
        let vars = ps.bind(&mut g, false);
        let out = loss(&mut g, &vars)?;
        Ok((g.value(out).item(), g.kink_signature()))
    };

    let h = cfg.step;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work = params.clone();
    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        worst: String::new(),
        n_checked: 0,
        n_skipped: 0,
    };

    for (pi, grads) in analytic.iter().enumerate() {
        let n = grads.len();
        let coords: Vec<usize> = match cfg.max_coords_per_tensor {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for c in coords {
            let orig = work.get(pi).value.data[c];
            work.get_mut(pi).value.data[c] = orig + h;
            let (fp, sp) = eval(&work)?;
            work.get_mut(pi).value.data[c] = orig - h;
            let (fm, sm) = eval(&work)?;
            work.get_mut(pi).value.data[c] = orig;
            if sp != base_sig || sm != base_sig {
                report.n_skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            let err = rel_err(grads[c], numeric, cfg.floor);
            report.record(err, || format!("{}[{c}]", params.get(pi).name));
        }
    }

    for d in 0..cfg.directions {
        let dirs: Vec<Vec<f64>> = analytic
            .iter()
            .map(|g| (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let norm = dirs.iter().flatten().map(|u| u * u).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let directional: f64 = analytic
            .iter()
            .zip(&dirs)
            .flat_map(|(g, u)| g.iter().zip(u).map(|(a, b)| a * b / norm))
            .sum();
        let shifted = |sign: f64| {
            let mut ps = params.clone();
            for (p, u) in ps.iter_mut().zip(&dirs) {
                for (x, du) in p.value.data.iter_mut().zip(u) {
                    *x += sign * h * du / norm;
                }
            }
            ps
        };
        let (fp, sp) = eval(&shifted(1.0))?;
        let (fm, sm) = eval(&shifted(-1.0))?;
        if sp != base_sig || sm != base_sig {
            report.n_skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        report.record(rel_err(directional, numeric, cfg.floor), || format!("direction {d}"));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinygrad::tensor::Tensor;

    #[test]
    fn linear_model_is_exact() {
        let mut ps = ParamSet::<f64>::new();
        ps.add("w", Tensor::from_rows(&[vec![0.3, -0.2], vec![1.1, 0.4]]));
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![-0.5, 0.25]]);
        let report = gradcheck(&ps, &GradcheckConfig::default(), |g, v| {
            let xv = g.constant(x.clone());
            let y = g.matmul(xv, v[0])?;
            Ok(g.sum(y))
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-9, "{report:?}");
        assert_eq!(report.n_checked, 4 + 4);
    }

    #[test]
    fn kink_crossings_are_skipped() {
        // the first coordinate sits next to the ReLU kink
        let mut ps = ParamSet::<f64>::new();
        ps.add("w", Tensor::new(vec![2], vec![1e-7, 0.7]));
        let report = gradcheck(&ps, &GradcheckConfig::default(), |g, v| {
            let r = g.relu(v[0]);
            let s = g.square(r);
            Ok(g.sum(s))
        })
        .unwrap();
        assert!(report.n_skipped >= 1);
        assert!(report.max_rel_err < 1e-6);
    }
}
