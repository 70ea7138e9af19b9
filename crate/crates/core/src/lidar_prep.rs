//! Min-pooling and the element-wise input preprocessing (IP) functions
//! applied to pooled LiDAR distances, together with their analytic
//! derivatives and the PoS (proportion of short-distance range) diagnostic.
//!
//! Trainable families keep their constrained parameter inside its domain
//! through a smooth reparameterisation of an unconstrained raw value `z`:
//!
//! | family   | output                        | constrained parameter                 |
//! |----------|-------------------------------|---------------------------------------|
//! | Raw      | `y`                           | -                                     |
//! | LNorm    | `y / Y_max`                   | -                                     |
//! | IPAPExp  | `lambda^y`                    | `lambda = sigmoid(z)`                 |
//! | IPAPLog  | `ln(y - eta)`                 | `eta  = Y_min - softplus(z + c)`      |
//! | IPAPRec  | `1 / (y - beta)`              | `beta = Y_min - softplus(z + c)`      |
//! | IPAPRecN | `(Y_min - beta) / (y - beta)` | `beta = Y_min - softplus(z + c)`      |
//!
//! with `c = ln(e^0.2 - 1)`, so `z = 0` gives `beta = 0` for `Y_min = 0.2`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::LidarFrame;

#[derive(Debug, Error, PartialEq)]
pub enum PrepError {
    #[error("pool window mismatch: {n_beams} beams cannot be split into windows of {window}")]
    PoolWindowMismatch { n_beams: usize, window: usize },
    #[error("no trainable parameter for family {0}")]
    NoTrainableParameter(IpFamily),
    #[error("degenerate mapping: P(Y_max) == P(Y_min)")]
    DegenerateMapping,
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("unknown IP family '{0}'")]
    UnknownFamily(String),
}

pub type Result<T> = std::result::Result<T, PrepError>;

/// Offset making `softplus(0 + SHIFT) == 0.2`.
pub const SOFTPLUS_SHIFT: f64 = -1.507_771_800_970_519_9;

/// Default short-distance threshold above `Y_min` used by diagnostics.
pub const DEFAULT_THRESHOLD_OFFSET: f64 = 0.8;

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn softplus_inv(y: f64) -> f64 {
    debug_assert!(y > 0.0);
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledScan {
    pub values: Vec<f64>,
    pub y_min: Vec<f64>,
    pub y_max: Vec<f64>,
    pub window: usize,
}

impl PooledScan {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_invariants(&self) -> Result<()> {
        let m = self.values.len();
        if self.y_min.len() != m || self.y_max.len() != m {
            return Err(PrepError::InvalidBounds("bound length mismatch".into()));
        }
        for i in 0..m {
            let (lo, hi, y) = (self.y_min[i], self.y_max[i], self.values[i]);
            if !(lo < hi) || y < lo || y > hi {
                return Err(PrepError::InvalidBounds(format!(
                    "element {i}: need Y_min < Y_max and Y_min <= y <= Y_max, got {lo} / {y} / {hi}"
                )));
            }
        }
        Ok(())
    }
}

/// Windowed minimum over consecutive, non-overlapping windows of `k`.
pub fn min_pool_values(values: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 || !values.len().is_multiple_of(k) {
        return Err(PrepError::PoolWindowMismatch {
            n_beams: values.len(),
            window: k,
        });
    }
    Ok(values
        .chunks_exact(k)
        .map(|w| w.iter().copied().fold(f64::INFINITY, f64::min))
        .collect())
}

/// Min-pools the ranges and both bound vectors with the same window.
pub fn min_pool(raw: &LidarFrame, k: usize) -> Result<PooledScan> {
    Ok(PooledScan {
        values: min_pool_values(&raw.ranges, k)?,
        y_min: min_pool_values(&raw.d_min, k)?,
        y_max: min_pool_values(&raw.d_max, k)?,
        window: k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IpFamily {
    Raw,
    LNorm,
    IPAPExp,
    IPAPLog,
    IPAPRec,
    IPAPRecN,
}

impl IpFamily {
    pub const ALL: [IpFamily; 6] = [
        IpFamily::Raw,
        IpFamily::LNorm,
        IpFamily::IPAPExp,
        IpFamily::IPAPLog,
        IpFamily::IPAPRec,
        IpFamily::IPAPRecN,
    ];

    pub const PARAMETRIC: [IpFamily; 4] = [
        IpFamily::IPAPExp,
        IpFamily::IPAPLog,
        IpFamily::IPAPRec,
        IpFamily::IPAPRecN,
    ];

    pub fn is_trainable(self) -> bool {
        !matches!(self, IpFamily::Raw | IpFamily::LNorm)
    }

    pub fn name(self) -> &'static str {
        match self {
            IpFamily::Raw => "Raw",
            IpFamily::LNorm => "LNorm",
            IpFamily::IPAPExp => "IPAPExp",
            IpFamily::IPAPLog => "IPAPLog",
            IpFamily::IPAPRec => "IPAPRec",
            IpFamily::IPAPRecN => "IPAPRecN",
        }
    }

    /// Constrained parameter for raw value `z` on a beam with lower bound `y_min`.
    pub fn constrained(self, z: f64, y_min: f64) -> Option<f64> {
        match self {
            IpFamily::Raw | IpFamily::LNorm => None,
            IpFamily::IPAPExp => Some(sigmoid(z)),
            IpFamily::IPAPLog | IpFamily::IPAPRec | IpFamily::IPAPRecN => Some(y_min - softplus(z + SOFTPLUS_SHIFT)),
        }
    }

    /// Raw value producing the constrained parameter `value`.
    pub fn raw_for(self, value: f64, y_min: f64) -> Option<f64> {
        match self {
            IpFamily::Raw | IpFamily::LNorm => None,
            IpFamily::IPAPExp => {
                assert!(value > 0.0 && value < 1.0, "lambda must lie in (0, 1)");
                Some((value / (1.0 - value)).ln())
            }
            _ => {
                assert!(value < y_min, "offset must lie below Y_min");
                Some(softplus_inv(y_min - value) - SOFTPLUS_SHIFT)
            }
        }
    }

    /// Maps one pooled distance.
    #[inline]
    pub fn apply(self, y: f64, y_min: f64, y_max: f64, z: f64) -> f64 {
        match self {
            IpFamily::Raw => y,
            IpFamily::LNorm => y / y_max,
            IpFamily::IPAPExp => (y * log_sigmoid(z)).exp(),
            IpFamily::IPAPLog => (y - y_min + softplus(z + SOFTPLUS_SHIFT)).ln(),
            IpFamily::IPAPRec => 1.0 / (y - y_min + softplus(z + SOFTPLUS_SHIFT)),
            IpFamily::IPAPRecN => {
                let s = softplus(z + SOFTPLUS_SHIFT);
                s / (y - y_min + s)
            }
        }
    }

    /// Derivative of [`apply`](Self::apply) with respect to the raw value `z`.
    #[inline]
    pub fn d_raw(self, y: f64, y_min: f64, _y_max: f64, z: f64) -> f64 {
        match self {
            IpFamily::Raw | IpFamily::LNorm => 0.0,
            IpFamily::IPAPExp => {
                // d/dz sigmoid(z)^y = y * lambda^y * (1 - lambda)
                let lam_y = (y * log_sigmoid(z)).exp();
                y * lam_y * sigmoid(-z)
            }
            IpFamily::IPAPLog => {
                let ds = sigmoid(z + SOFTPLUS_SHIFT);
                ds / (y - y_min + softplus(z + SOFTPLUS_SHIFT))
            }
            IpFamily::IPAPRec => {
                let ds = sigmoid(z + SOFTPLUS_SHIFT);
                let g = y - y_min + softplus(z + SOFTPLUS_SHIFT);
                -ds / (g * g)
            }
            IpFamily::IPAPRecN => {
                let s = softplus(z + SOFTPLUS_SHIFT);
                let ds = sigmoid(z + SOFTPLUS_SHIFT);
                let g = y - y_min + s;
                ds * (y - y_min) / (g * g)
            }
        }
    }

    /// Derivative of [`apply`](Self::apply) with respect to the distance `y`.
    #[inline]
    pub fn d_input(self, y: f64, y_min: f64, y_max: f64, z: f64) -> f64 {
        match self {
            IpFamily::Raw => 1.0,
            IpFamily::LNorm => 1.0 / y_max,
            IpFamily::IPAPExp => {
                let ln_lam = log_sigmoid(z);
                ln_lam * (y * ln_lam).exp()
            }
            IpFamily::IPAPLog => 1.0 / (y - y_min + softplus(z + SOFTPLUS_SHIFT)),
            IpFamily::IPAPRec => {
                let g = y - y_min + softplus(z + SOFTPLUS_SHIFT);
                -1.0 / (g * g)
            }
            IpFamily::IPAPRecN => {
                let s = softplus(z + SOFTPLUS_SHIFT);
                let g = y - y_min + s;
                -s / (g * g)
            }
        }
    }
}

#[inline]
fn log_sigmoid(z: f64) -> f64 {
    -softplus(-z)
}

impl fmt::Display for IpFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IpFamily {
    type Err = PrepError;

    fn from_str(s: &str) -> Result<Self> {
        IpFamily::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| PrepError::UnknownFamily(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sharing {
    /// One raw parameter for every beam.
    Shared,
    /// One raw parameter per pooled beam.
    PerBeam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpParams {
    pub family: IpFamily,
    pub sharing: Sharing,
    /// Unconstrained values; empty for families without a parameter.
    pub raw: Vec<f64>,
}

impl IpParams {
    /// Raw values all zero.
    pub fn zeros(family: IpFamily, sharing: Sharing, m: usize) -> Self {
        let n = match (family.is_trainable(), sharing) {
            (false, _) => 0,
            (true, Sharing::Shared) => 1,
            (true, Sharing::PerBeam) => m,
        };
        Self {
            family,
            sharing,
            raw: vec![0.0; n],
        }
    }

    /// Starts offsets at zero (`beta = 0`, `eta = 0`) where `Y_min > 0`, and
    /// `lambda = 0.5`. A shared parameter is fitted to the smallest `Y_min`.
    pub fn initial(family: IpFamily, sharing: Sharing, y_min: &[f64]) -> Self {
        let mut p = Self::zeros(family, sharing, y_min.len());
        if matches!(family, IpFamily::IPAPLog | IpFamily::IPAPRec | IpFamily::IPAPRecN) {
            match sharing {
                Sharing::Shared => {
                    let lo = y_min.iter().copied().fold(f64::INFINITY, f64::min);
                    if lo > 0.0 && lo.is_finite() {
                        p.raw[0] = family.raw_for(0.0, lo).unwrap();
                    }
                }
                Sharing::PerBeam => {
                    for (r, &lo) in p.raw.iter_mut().zip(y_min) {
                        if lo > 0.0 {
                            *r = family.raw_for(0.0, lo).unwrap();
                        }
                    }
                }
            }
        }
        p
    }

    #[inline]
    pub fn raw_index(&self, beam: usize) -> usize {
        match self.sharing {
            Sharing::Shared => 0,
            Sharing::PerBeam => beam,
        }
    }

    #[inline]
    pub fn raw_at(&self, beam: usize) -> f64 {
        if self.raw.is_empty() {
            0.0
        } else {
            self.raw[self.raw_index(beam)]
        }
    }

    /// Number of raw values expected for `m` pooled beams.
    pub fn expected_len(&self, m: usize) -> usize {
        Self::zeros(self.family, self.sharing, m).raw.len()
    }

    pub fn constrained(&self, y_min: &[f64]) -> Vec<f64> {
        if !self.family.is_trainable() {
            return Vec::new();
        }
        y_min
            .iter()
            .enumerate()
            .map(|(i, &lo)| self.family.constrained(self.raw_at(i), lo).unwrap())
            .collect()
    }

    fn assert_fits(&self, m: usize) {
        assert_eq!(
            self.raw.len(),
            self.expected_len(m),
            "IP parameter count does not match scan length {m}"
        );
    }
}

/// Applies the family element-wise. Raw returns the pooled distances.
pub fn ip_forward(scan: &PooledScan, params: &IpParams) -> Vec<f64> {
    params.assert_fits(scan.len());
    (0..scan.len())
        .map(|i| {
            params
                .family
                .apply(scan.values[i], scan.y_min[i], scan.y_max[i], params.raw_at(i))
        })
        .collect()
}

/// `d p_i / d z_{r(i)}` where `r(i)` is the raw parameter beam `i` uses.
pub fn ip_param_grad(scan: &PooledScan, params: &IpParams) -> Result<Vec<f64>> {
    if !params.family.is_trainable() {
        return Err(PrepError::NoTrainableParameter(params.family));
    }
    params.assert_fits(scan.len());
    Ok((0..scan.len())
        .map(|i| {
            params
                .family
                .d_raw(scan.values[i], scan.y_min[i], scan.y_max[i], params.raw_at(i))
        })
        .collect())
}

/// PoS ratio `|(P(Y_T) - P(Y_min)) / (P(Y_max) - P(Y_min))|`.
pub fn pos_ratio(map_fn: impl Fn(f64) -> f64, y_min: f64, y_t: f64, y_max: f64) -> Result<f64> {
    if !(y_min < y_t && y_t < y_max) {
        return Err(PrepError::InvalidBounds(format!(
            "need Y_min < Y_T < Y_max, got {y_min} / {y_t} / {y_max}"
        )));
    }
    let p_lo = map_fn(y_min);
    let den = map_fn(y_max) - p_lo;
    if den == 0.0 || !den.is_finite() {
        return Err(PrepError::DegenerateMapping);
    }
    Ok(((map_fn(y_t) - p_lo) / den).abs())
}

/// Numerically checks `|P'| > 0` and `P' * P'' < 0` at `n_samples` points
/// spread over `[y_min, y_max]`.
///
/// Derivatives come from central differences; a derivative whose magnitude is
/// within the rounding-noise floor of the difference quotient counts as zero.
pub fn check_conditions(map_fn: impl Fn(f64) -> f64, y_min: f64, y_max: f64, n_samples: usize) -> bool {
    if !(y_min < y_max) || n_samples == 0 {
        return false;
    }
    let span = y_max - y_min;
    let h = span / (4.0 * n_samples as f64);
    const NOISE: f64 = 1e3 * f64::EPSILON;
    (0..n_samples).all(|j| {
        let y = y_min + span * (j as f64 + 0.5) / n_samples as f64;
        let (fm, f0, fp) = (map_fn(y - h), map_fn(y), map_fn(y + h));
        if !(fm.is_finite() && f0.is_finite() && fp.is_finite()) {
            return false;
        }
        let d1 = (fp - fm) / (2.0 * h);
        let d2 = (fp - 2.0 * f0 + fm) / (h * h);
        let floor1 = NOISE * (fp.abs() + fm.abs()) / (2.0 * h);
        let floor2 = NOISE * (fp.abs() + 2.0 * f0.abs() + fm.abs()) / (h * h);
        d1.abs() > floor1 && d2.abs() > floor2 && d1 * d2 < 0.0
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosBeam {
    pub index: usize,
    pub y_min: f64,
    pub y_t: f64,
    pub y_max: f64,
    pub rho_linear: f64,
    pub rho_mapped: f64,
    pub conditions_hold: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosReport {
    pub family: IpFamily,
    pub beams: Vec<PosBeam>,
}

impl PosReport {
    /// Per-beam PoS of the identity vs. the configured mapping, with the
    /// threshold at `Y_min + threshold_offset`.
    pub fn build(y_min: &[f64], y_max: &[f64], params: &IpParams, threshold_offset: f64) -> Result<Self> {
        assert_eq!(y_min.len(), y_max.len());
        params.assert_fits(y_min.len());
        let mut beams = Vec::with_capacity(y_min.len());
        for i in 0..y_min.len() {
            let (lo, hi) = (y_min[i], y_max[i]);
            let y_t = lo + threshold_offset;
            let z = params.raw_at(i);
            let map = |y: f64| params.family.apply(y, lo, hi, z);
            beams.push(PosBeam {
                index: i,
                y_min: lo,
                y_t,
                y_max: hi,
                rho_linear: pos_ratio(|y| y, lo, y_t, hi)?,
                rho_mapped: pos_ratio(map, lo, y_t, hi)?,
                conditions_hold: check_conditions(map, lo, hi, 100),
            });
        }
        Ok(Self {
            family: params.family,
            beams,
        })
    }

    /// CSV with header `beam,rho_linear,rho_mapped,y_min,y_t,y_max,conditions_hold`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("beam,rho_linear,rho_mapped,y_min,y_t,y_max,conditions_hold\n");
        for b in &self.beams {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                b.index, b.rho_linear, b.rho_mapped, b.y_min, b.y_t, b.y_max, b.conditions_hold
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scan1(y: f64, lo: f64, hi: f64) -> PooledScan {
        PooledScan {
            values: vec![y],
            y_min: vec![lo],
            y_max: vec![hi],
            window: 1,
        }
    }

    fn params_with(family: IpFamily, value: f64, y_min: f64) -> IpParams {
        let mut p = IpParams::zeros(family, Sharing::Shared, 1);
        p.raw[0] = family.raw_for(value, y_min).unwrap();
        p
    }

    #[test]
    fn shift_gives_zero_offset_at_default_bound() {
        assert!((softplus(SOFTPLUS_SHIFT) - 0.2).abs() < 1e-15);
        let beta = IpFamily::IPAPRec.constrained(0.0, 0.2).unwrap();
        assert!(beta.abs() < 1e-15);
    }

    #[test]
    fn pool_examples() {
        assert_eq!(
            min_pool_values(&[3.0, 1.0, 4.0, 1.0, 5.0, 9.0], 2).unwrap(),
            vec![1.0, 1.0, 5.0]
        );
        let v = vec![2.0, 7.0, 1.5];
        assert_eq!(min_pool_values(&v, 1).unwrap(), v);
        assert_eq!(
            min_pool_values(&[1.0; 5], 2),
            Err(PrepError::PoolWindowMismatch { n_beams: 5, window: 2 })
        );
        assert!(PrepError::PoolWindowMismatch { n_beams: 5, window: 2 }
            .to_string()
            .contains("pool window mismatch"));
    }

    #[test]
    fn forward_examples() {
        let rec = params_with(IpFamily::IPAPRec, 0.0, 0.2);
        assert!((ip_forward(&scan1(2.0, 0.2, 30.0), &rec)[0] - 0.5).abs() < 1e-15);

        let recn = params_with(IpFamily::IPAPRecN, 0.0, 0.2);
        assert!((ip_forward(&scan1(0.2, 0.2, 30.0), &recn)[0] - 1.0).abs() < 1e-15);

        let ln = IpParams::zeros(IpFamily::LNorm, Sharing::Shared, 1);
        assert_eq!(ip_forward(&scan1(15.0, 0.2, 30.0), &ln)[0], 0.5);

        let exp = params_with(IpFamily::IPAPExp, 0.5, 0.2);
        assert!((ip_forward(&scan1(3.0, 0.2, 30.0), &exp)[0] - 0.125).abs() < 1e-15);

        let raw = IpParams::zeros(IpFamily::Raw, Sharing::Shared, 1);
        assert_eq!(ip_forward(&scan1(7.25, 0.2, 30.0), &raw)[0], 7.25);

        let log = params_with(IpFamily::IPAPLog, 0.0, 0.2);
        assert!((ip_forward(&scan1(1.0, 0.2, 30.0), &log)[0]).abs() < 1e-15);
    }

    #[test]
    fn reciprocal_gradient_example() {
        let p = params_with(IpFamily::IPAPRec, 0.0, 0.2);
        let g = ip_param_grad(&scan1(2.0, 0.2, 30.0), &p).unwrap()[0];
        // dp/dbeta = 1/(y-beta)^2 = 0.25 and dbeta/dz = -sigmoid(z + c)
        let dbeta_dz = -sigmoid(p.raw[0] + SOFTPLUS_SHIFT);
        assert!((g - 0.25 * dbeta_dz).abs() < 1e-15);
    }

    #[test]
    fn untrainable_families_have_no_gradient() {
        for fam in [IpFamily::Raw, IpFamily::LNorm] {
            let p = IpParams::zeros(fam, Sharing::PerBeam, 1);
            assert_eq!(
                ip_param_grad(&scan1(1.0, 0.2, 30.0), &p),
                Err(PrepError::NoTrainableParameter(fam))
            );
            assert!(PrepError::NoTrainableParameter(fam)
                .to_string()
                .contains("no trainable parameter"));
        }
    }

    #[test]
    fn exp_gradient_finite_near_one() {
        let mut p = IpParams::zeros(IpFamily::IPAPExp, Sharing::Shared, 1);
        for z in [20.0, 40.0, 700.0, 1e6] {
            p.raw[0] = z;
            let g = ip_param_grad(&scan1(29.0, 0.2, 30.0), &p).unwrap()[0];
            assert!(g.is_finite() && g >= 0.0, "z={z} g={g}");
        }
    }

    #[test]
    fn constrained_domains_hold_for_extreme_raw_values() {
        for z in [-1e6, -50.0, -1.0, 0.0, 1.0, 50.0, 1e6] {
            let lam = IpFamily::IPAPExp.constrained(z, 0.2).unwrap();
            assert!((0.0..=1.0).contains(&lam));
            for fam in [IpFamily::IPAPLog, IpFamily::IPAPRec, IpFamily::IPAPRecN] {
                assert!(fam.constrained(z, 0.2).unwrap() <= 0.2);
            }
        }
        // strict inside the range where f64 can resolve it
        for z in [-20.0, 0.0, 20.0] {
            let lam = IpFamily::IPAPExp.constrained(z, 0.2).unwrap();
            assert!(lam > 0.0 && lam < 1.0);
            assert!(IpFamily::IPAPRec.constrained(z, 0.2).unwrap() < 0.2);
        }
    }

    #[test]
    fn pos_examples() {
        let lin = pos_ratio(|y| y, 0.2, 1.0, 30.0).unwrap();
        assert!((lin - 0.8 / 29.8).abs() < 1e-15);
        let rec = pos_ratio(|y| 1.0 / y, 0.2, 1.0, 30.0).unwrap();
        // |1 - 5| / |1/30 - 5| = 4 / (149/30)
        assert!((rec - 120.0 / 149.0).abs() < 1e-12);
        let lnorm = pos_ratio(|y| y / 30.0, 0.2, 1.0, 30.0).unwrap();
        assert!((lnorm - lin).abs() < 1e-15);
        assert_eq!(pos_ratio(|_| 1.0, 0.2, 1.0, 30.0), Err(PrepError::DegenerateMapping));
        assert!(pos_ratio(|y| y, 1.0, 0.5, 30.0).is_err());
    }

    #[test]
    fn condition_examples() {
        assert!(check_conditions(|y| 1.0 / y, 0.2, 30.0, 200));
        assert!(check_conditions(|y| 1.0 / (y + 0.3), 0.2, 30.0, 200));
        assert!(!check_conditions(|y| y, 0.2, 30.0, 200));
        assert!(!check_conditions(|y| 3.0 * y - 1.0, 0.2, 30.0, 200));
        assert!(check_conditions(|y| (y + 0.1).ln(), 0.2, 30.0, 200));
        assert!(check_conditions(|y| 0.7f64.powf(y), 0.2, 30.0, 200));
        // convex increasing fails P'P'' < 0
        assert!(!check_conditions(|y| y * y, 0.2, 30.0, 200));
    }

    #[test]
    fn per_beam_sharing_uses_own_parameter() {
        let scan = PooledScan {
            values: vec![1.0, 1.0],
            y_min: vec![0.2, 0.2],
            y_max: vec![30.0, 30.0],
            window: 1,
        };
        let mut p = IpParams::zeros(IpFamily::IPAPRec, Sharing::PerBeam, 2);
        p.raw[1] = 1.0;
        let out = ip_forward(&scan, &p);
        assert!(out[0] != out[1]);
    }

    #[test]
    fn initial_params_start_offsets_at_zero() {
        let y_min = [0.2, 0.31, 0.45];
        let p = IpParams::initial(IpFamily::IPAPRec, Sharing::PerBeam, &y_min);
        for b in p.constrained(&y_min) {
            assert!(b.abs() < 1e-12);
        }
        let p = IpParams::initial(IpFamily::IPAPExp, Sharing::Shared, &y_min);
        assert_eq!(p.constrained(&y_min), vec![0.5; 3]);
    }

    #[test]
    fn report_csv_has_one_row_per_beam() {
        let p = IpParams::initial(IpFamily::IPAPRec, Sharing::Shared, &[0.2; 4]);
        let r = PosReport::build(&[0.2; 4], &[30.0; 4], &p, 0.8).unwrap();
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("beam,rho_linear,rho_mapped"));
        assert!(r.beams.iter().all(|b| b.conditions_hold && b.rho_mapped > b.rho_linear));
    }

    #[test]
    fn family_names_parse() {
        for f in IpFamily::ALL {
            assert_eq!(f.name().parse::<IpFamily>().unwrap(), f);
        }
        assert!("ipaprecn".parse::<IpFamily>().is_ok());
        assert!("nope".parse::<IpFamily>().is_err());
    }
}
