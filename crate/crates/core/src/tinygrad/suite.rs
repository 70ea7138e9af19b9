//! Gradient checks of every graph operation and of the full model graphs
//! with IP preprocessing attached.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::gradcheck::{gradcheck, GradcheckConfig, GradcheckReport};
use super::graph::{Graph, IpLayer, Var};
use super::network::{preprocess_input, InputLayout, ModelId, NetworkSpec};
use super::params::ParamSet;
use super::tensor::Tensor;
use super::GradError;
use crate::lidar_prep::{IpFamily, IpParams, Sharing};

type Result<T> = std::result::Result<T, GradError>;

/// Named gradient-check outcome.
pub type Case = (String, GradcheckReport);

fn normal(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect())
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect())
}

/// `sum(y * r)` for a fixed random `r`, so every output entry contributes
/// with its own weight.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = normal(&mut rng, g.shape(y).to_vec());
    let rv = g.constant(r);
    let prod = g.mul(y, rv)?;
    Ok(g.sum(prod))
}

fn check<F>(name: &str, inputs: Vec<Tensor<f64>>, cfg: &GradcheckConfig, seed: u64, mut f: F) -> Result<Case>
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut ps = ParamSet::new();
    for (i, t) in inputs.into_iter().enumerate() {
        ps.add(format!("{name}.in{i}"), t);
    }
    let report = gradcheck(&ps, cfg, |g, v| {
        let y = f(g, v)?;
        if g.shape(y).iter().product::<usize>() == 1 && g.shape(y).len() <= 1 {
            Ok(y)
        } else {
            project(g, y, seed)
        }
    })?;
    Ok((name.to_string(), report))
}

/// One check per operation kind, including each IP family with shared and
/// per-beam parameters.
pub fn op_suite(cfg: &GradcheckConfig, seed: u64) -> Result<Vec<Case>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |shape: Vec<usize>| normal(&mut rng, shape);
    let mut out = Vec::new();
    let (a, b) = (r(vec![3, 4]), r(vec![3, 4]));
    out.push(check(
        "matmul",
        vec![r(vec![3, 5]), r(vec![5, 4])],
        cfg,
        seed,
        |g, v| g.matmul(v[0], v[1]),
    )?);
    out.push(check("add_bias", vec![a.clone(), r(vec![4])], cfg, seed, |g, v| {
        g.add_bias(v[0], v[1])
    })?);
    out.push(check("add", vec![a.clone(), b.clone()], cfg, seed, |g, v| {
        g.add(v[0], v[1])
    })?);
    out.push(check("sub", vec![a.clone(), b.clone()], cfg, seed, |g, v| {
        g.sub(v[0], v[1])
    })?);
    out.push(check("mul", vec![a.clone(), b.clone()], cfg, seed, |g, v| {
        g.mul(v[0], v[1])
    })?);
    out.push(check("min", vec![a.clone(), b.clone()], cfg, seed, |g, v| {
        g.min(v[0], v[1])
    })?);
    out.push(check("scale", vec![a.clone()], cfg, seed, |g, v| {
        Ok(g.scale(v[0], -1.7))
    })?);
    out.push(check("add_scalar", vec![a.clone()], cfg, seed, |g, v| {
        Ok(g.add_scalar(v[0], 0.3))
    })?);
    out.push(check("scale_cols", vec![a.clone()], cfg, seed, |g, v| {
        g.scale_cols(v[0], vec![0.5, -2.0, 1.5, 3.0])
    })?);
    out.push(check("mask", vec![a.clone()], cfg, seed, |g, v| {
        g.mask(v[0], (0..12).map(|i| (i % 3) as f64).collect())
    })?);
    out.push(check("dropout", vec![a.clone()], cfg, seed, |g, v| {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd0);
        g.dropout(v[0], 0.3, &mut mask_rng)
    })?);
    out.push(check("tanh", vec![a.clone()], cfg, seed, |g, v| Ok(g.tanh(v[0])))?);
    out.push(check("relu", vec![a.clone()], cfg, seed, |g, v| Ok(g.relu(v[0])))?);
    out.push(check("leaky_relu", vec![a.clone()], cfg, seed, |g, v| {
        Ok(g.leaky_relu(v[0], 0.01))
    })?);
    out.push(check("exp", vec![a.clone()], cfg, seed, |g, v| Ok(g.exp(v[0])))?);
    let mut rng2 = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let pos = uniform(&mut rng2, vec![3, 4], 0.2, 3.0);
    out.push(check("log", vec![pos], cfg, seed, |g, v| Ok(g.log(v[0])))?);
    out.push(check("square", vec![a.clone()], cfg, seed, |g, v| Ok(g.square(v[0])))?);
    out.push(check("softplus", vec![a.clone()], cfg, seed, |g, v| {
        Ok(g.softplus(v[0]))
    })?);
    out.push(check(
        "concat_cols",
        vec![a.clone(), normal(&mut rng2, vec![3, 2])],
        cfg,
        seed,
        |g, v| g.concat_cols(&[v[0], v[1]]),
    )?);
    out.push(check("slice_cols", vec![a.clone()], cfg, seed, |g, v| {
        g.slice_cols(v[0], 1, 3)
    })?);
    out.push(check("reshape", vec![a.clone()], cfg, seed, |g, v| {
        g.reshape(v[0], vec![2, 6])
    })?);
    out.push(check("sum_rows", vec![a.clone()], cfg, seed, |g, v| {
        Ok(g.sum_rows(v[0]))
    })?);
    out.push(check("sum", vec![a.clone()], cfg, seed, |g, v| {
        let s = g.sum(v[0]);
        let s2 = g.square(s);
        Ok(g.sum(s2))
    })?);
    out.push(check("mean", vec![a.clone()], cfg, seed, |g, v| {
        let m = g.mean(v[0]);
        let m2 = g.tanh(m);
        Ok(g.sum(m2))
    })?);
    for stride in [1, 2] {
        let inputs = vec![
            normal(&mut rng2, vec![2, 3, 11]),
            normal(&mut rng2, vec![4, 3, 3]),
            normal(&mut rng2, vec![4]),
        ];
        out.push(check(&format!("conv1d_s{stride}"), inputs, cfg, seed, |g, v| {
            g.conv1d(v[0], v[1], v[2], stride)
        })?);
    }
    for family in IpFamily::ALL {
        for sharing in [Sharing::Shared, Sharing::PerBeam] {
            if !family.is_trainable() && sharing == Sharing::PerBeam {
                continue;
            }
            let m = 5;
            let y_min: Vec<f64> = (0..m).map(|_| rng2.random_range(0.1..0.5)).collect();
            let y_max = vec![30.0; m];
            let mut params = IpParams::zeros(family, sharing, m);
            for z in &mut params.raw {
                *z = rng2.random_range(-2.0..2.0);
            }
            let layer = Arc::new(IpLayer::new(&params, y_min.clone(), y_max.clone()));
            // two stacked scans per row
            let x: Vec<f64> = (0..3 * 2 * m).map(|j| rng2.random_range(y_min[j % m]..8.0)).collect();
            let mut inputs = vec![Tensor::new(vec![3, 2 * m], x)];
            if family.is_trainable() {
                inputs.push(Tensor::new(vec![params.raw.len()], params.raw.clone()));
            }
            let name = format!("ip_{}_{:?}", family.name(), sharing).to_lowercase();
            out.push(check(&name, inputs, cfg, seed, |g, v| {
                g.ip_transform(v[0], v.get(1).copied(), layer.clone())
            })?);
        }
    }
    Ok(out)
}

/// Full forward graph of each default model on a 30-beam scan with four
/// extra features, with the IP layer and its parameters in front. Dropout
/// is off.
pub fn model_suite(family: IpFamily, sharing: Sharing, cfg: &GradcheckConfig, seed: u64) -> Result<Vec<Case>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = 30;
    let y_min: Vec<f64> = (0..m).map(|_| rng.random_range(0.15..0.3)).collect();
    let y_max = vec![30.0; m];
    let mut ip = IpParams::initial(family, sharing, &y_min);
    for z in &mut ip.raw {
        *z += rng.random_range(-0.5..0.5);
    }
    let layer = Arc::new(IpLayer::new(&ip, y_min.clone(), y_max));
    let mut out = Vec::new();
    for id in [ModelId::Model0, ModelId::Model1, ModelId::Model2, ModelId::Model3] {
        let layout = InputLayout {
            scan_len: m,
            stack: id.default_stack(),
            extra: 4,
        };
        let spec = NetworkSpec::model(id, layout, 4)?;
        let mut ps: ParamSet<f64> = spec.init_params(&mut rng);
        let n_net = ps.len();
        if family.is_trainable() {
            ps.add("ip.zeta", Tensor::new(vec![ip.raw.len()], ip.raw.clone()));
        }
        let batch = 3;
        let mut x = Vec::new();
        for _ in 0..batch {
            x.extend((0..layout.scan_width()).map(|j| rng.random_range(y_min[j % m]..10.0)));
            x.extend((0..layout.extra).map(|_| rng.random_range(-1.0..1.0)));
        }
        let x = Tensor::new(vec![batch, layout.width()], x);
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let report = gradcheck(&ps, cfg, |g, v| {
            let xv = g.constant(x.clone());
            let zeta = v.get(n_net).copied();
            let input = preprocess_input(g, xv, &layout, zeta, &layer)?;
            let y = spec.forward(g, &v[..n_net], input, false, &mut unused)?;
            project(g, y, seed)
        })?;
        out.push((format!("{}_{}", id.name(), family.name()), report));
    }
    Ok(out)
}
