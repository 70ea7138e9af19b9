//! Tanh-squashed Gaussian actions rescaled to box bounds.

use serde::{Deserialize, Serialize};

use crate::tinygrad::{GradError, Graph, Scalar, Tensor, Var};

const LN_2: f64 = std::f64::consts::LN_2;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl ActionBounds {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Self {
        assert_eq!(low.len(), high.len(), "action bound lengths");
        assert!(low.iter().zip(&high).all(|(l, h)| l < h), "empty action interval");
        Self { low, high }
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.low.iter().zip(&self.high).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn half_range(&self) -> Vec<f64> {
        self.low.iter().zip(&self.high).map(|(l, h)| 0.5 * (h - l)).collect()
    }

    /// Maps a squashed value in `(-1, 1)` into the box.
    pub fn scale(&self, t: &[f64]) -> Vec<f64> {
        t.iter()
            .zip(self.center().iter().zip(self.half_range()))
            .map(|(&t, (&c, h))| c + h * t)
            .collect()
    }

    pub fn contains(&self, a: &[f64]) -> bool {
        a.len() == self.dim()
            && a.iter()
                .zip(self.low.iter().zip(&self.high))
                .all(|(&x, (&l, &h))| x >= l && x <= h)
    }

    /// `sum_i ln(half_range_i)`, the log-Jacobian of [`scale`](Self::scale).
    pub fn log_scale(&self) -> f64 {
        self.half_range().iter().map(|h| h.ln()).sum()
    }
}

/// `ln(1 - tanh(u)^2)`, stable for large `|u|`.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (LN_2 - u - crate::lidar_prep::softplus(-2.0 * u))
}

/// Maps the raw network output to a log standard deviation in
/// `[lo, hi]` through a tanh.
pub fn bounded_log_std(raw: f64, lo: f64, hi: f64) -> f64 {
    lo + 0.5 * (hi - lo) * (raw.tanh() + 1.0)
}

/// Log density of the bounded action produced from pre-squash value
/// `u = mean + std * eps`, per dimension summed.
pub fn squashed_log_prob(mean: &[f64], log_std: &[f64], u: &[f64], bounds: &ActionBounds) -> f64 {
    let mut lp = 0.0;
    for i in 0..u.len() {
        let z = (u[i] - mean[i]) / log_std[i].exp();
        lp += -0.5 * z * z - log_std[i] - HALF_LN_2PI - log_one_minus_tanh_sq(u[i]);
    }
    lp - bounds.log_scale()
}

/// Graph nodes of a reparameterized sample.
#[derive(Debug, Clone, Copy)]
pub struct SquashedSample {
    /// Bounded actions, `[B, A]`.
    pub action: Var,
    /// Log densities, `[B, 1]`.
    pub log_prob: Var,
    pub mean: Var,
    pub log_std: Var,
}

/// Builds `a = center + half * tanh(mean + exp(log_std) * eps)` and its
/// log density from a policy head `out: [B, 2A]` (means then raw log-stds).
/// `eps: [B, A]` is the fixed noise; zeros give the deterministic action.
pub fn sample_in_graph<T: Scalar>(
    g: &mut Graph<T>,
    out: Var,
    eps: &[f64],
    bounds: &ActionBounds,
    log_std_range: (f64, f64),
) -> Result<SquashedSample, GradError> {
    let a_dim = bounds.dim();
    let batch = g.shape(out)[0];
    if g.value(out).cols() != 2 * a_dim || eps.len() != batch * a_dim {
        return Err(GradError::Shape {
            op: "sample_in_graph",
            detail: format!(
                "head {:?}, {} noise values, {} action dims",
                g.shape(out),
                eps.len(),
                a_dim
            ),
        });
    }
    let (lo, hi) = log_std_range;
    let mean = g.slice_cols(out, 0, a_dim)?;
    let raw = g.slice_cols(out, a_dim, 2 * a_dim)?;
    let t = g.tanh(raw);
    let half_span = g.scale(t, T::lit(0.5 * (hi - lo)));
    let log_std = g.add_scalar(half_span, T::lit(lo + 0.5 * (hi - lo)));
    let std = g.exp(log_std);
    let noise = g.constant(Tensor::from_f64(vec![batch, a_dim], eps));
    let spread = g.mul(std, noise)?;
    let u = g.add(mean, spread)?;
    let squashed = g.tanh(u);
    let scaled = g.scale_cols(squashed, bounds.half_range().iter().map(|&h| T::lit(h)).collect())?;
    let center = g.constant(Tensor::from_f64(vec![a_dim], &bounds.center()));
    let action = g.add_bias(scaled, center)?;

    // ln N(u; mean, std) - ln(1 - tanh(u)^2) - ln(half), with (u - mean)/std = eps
    // and ln(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u)).
    let neg_two_u = g.scale(u, T::lit(-2.0));
    let sp = g.softplus(neg_two_u);
    let sp2 = g.scale(sp, T::lit(2.0));
    let u2 = g.scale(u, T::lit(2.0));
    let corr = g.add(u2, sp2)?;
    let per_dim = g.sub(corr, log_std)?;
    let consts: Vec<f64> = (0..batch * a_dim)
        .map(|i| -0.5 * eps[i] * eps[i] - HALF_LN_2PI - 2.0 * LN_2)
        .collect();
    let c = g.constant(Tensor::from_f64(vec![batch, a_dim], &consts));
    let per_dim = g.add(per_dim, c)?;
    let summed = g.sum_rows(per_dim);
    let log_prob = g.add_scalar(summed, T::lit(-bounds.log_scale()));
    Ok(SquashedSample {
        action,
        log_prob,
        mean,
        log_std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_correction_matches_direct_formula() {
        for u in [-3.0, -0.5, 0.0, 0.2, 1.7] {
            let direct = (1.0 - f64::tanh(u).powi(2)).ln();
            assert!((log_one_minus_tanh_sq(u) - direct).abs() < 1e-12);
        }
        assert!(log_one_minus_tanh_sq(40.0).is_finite());
    }

    #[test]
    fn graph_sample_matches_scalar_formula() {
        let bounds = ActionBounds::new(vec![0.0, -1.5], vec![0.5, 1.5]);
        let mut g = Graph::<f64>::new();
        let head = g.constant(Tensor::from_rows(&[vec![0.3, -0.2, 0.1, -1.0]]));
        let eps = [0.7, -1.2];
        let s = sample_in_graph(&mut g, head, &eps, &bounds, (-5.0, 2.0)).unwrap();
        let ls: Vec<f64> = [0.1, -1.0].iter().map(|&r| bounded_log_std(r, -5.0, 2.0)).collect();
        let mean = [0.3, -0.2];
        let u: Vec<f64> = (0..2).map(|i| mean[i] + ls[i].exp() * eps[i]).collect();
        let a = bounds.scale(&u.iter().map(|x| x.tanh()).collect::<Vec<_>>());
        let lp = squashed_log_prob(&mean, &ls, &u, &bounds);
        let av = g.value(s.action).to_f64();
        assert!((av[0] - a[0]).abs() < 1e-12 && (av[1] - a[1]).abs() < 1e-12);
        assert!((g.value(s.log_prob).item() - lp).abs() < 1e-10);
        assert!(bounds.contains(&av));
    }
}
