//! Raycasting and collision checks against ray marching and dense sampling.

use ipnav_core::gridworld::{collision_check, raycast, Footprint, OccupancyGrid, Pose, RobotBody};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ensure, Check};

/// Random map with a solid border and scattered blocks.
pub fn random_grid(rng: &mut ChaCha8Rng, res: f64) -> OccupancyGrid {
    let (w, h) = (rng.random_range(20..60), rng.random_range(20..60));
    let mut g = OccupancyGrid::new(w, h, res, [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).unwrap();
    for ix in 0..w {
        g.set(ix, 0, true);
        g.set(ix, h - 1, true);
    }
    for iy in 0..h {
        g.set(0, iy, true);
        g.set(w - 1, iy, true);
    }
    for _ in 0..rng.random_range(0..12) {
        let (x0, y0) = (rng.random_range(0..w), rng.random_range(0..h));
        let (bw, bh) = (rng.random_range(1..6), rng.random_range(1..6));
        for iy in y0..(y0 + bh).min(h) {
            for ix in x0..(x0 + bw).min(w) {
                g.set(ix, iy, true);
            }
        }
    }
    g
}

pub fn random_free_point(g: &OccupancyGrid, rng: &mut ChaCha8Rng) -> [f64; 2] {
    let (w, h) = g.extent();
    let [ox, oy] = g.origin();
    loop {
        let p = [ox + rng.random_range(0.0..w), oy + rng.random_range(0.0..h)];
        if g.is_free_point(p[0], p[1]) {
            return p;
        }
    }
}

/// Marches along the ray in steps of `res / 200` until the sample lands in
/// an occupied cell.
pub fn march(g: &OccupancyGrid, o: [f64; 2], angle: f64, max_range: f64) -> f64 {
    let step = g.resolution() / 200.0;
    let (s, c) = angle.sin_cos();
    let mut t = 0.0;
    while t < max_range {
        let (ix, iy) = g.cell_of(o[0] + t * c, o[1] + t * s);
        if g.is_occupied(ix, iy) {
            return t;
        }
        t += step;
    }
    max_range
}

/// `cases` rays at resolutions 0.05, 0.1 and 0.25, each within half a cell
/// of the marched distance.
pub fn raycast_sweep(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let res = [0.05, 0.1, 0.25][case % 3];
        let g = random_grid(&mut rng, res);
        let o = random_free_point(&g, &mut rng);
        let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let max_range = rng.random_range(0.5..20.0);
        let d = raycast(&g, o, angle, max_range).map_err(|e| e.to_string())?;
        let m = march(&g, o, angle, max_range);
        let err = (d - m).abs();
        worst = worst.max(err / res);
        ensure!(err <= res / 2.0, "case {case}: raycast {d}, marching {m}, res {res}");
    }
    Ok(format!("{cases} rays, worst error {worst:.3} cells"))
}

/// Dense point sampling of the footprint. Returns `None` when the verdict
/// changes between a slightly shrunk and a slightly grown footprint, i.e.
/// the contact is too close to call by sampling.
pub fn sampled_collision(g: &OccupancyGrid, pose: &Pose, shape: Footprint) -> Option<bool> {
    let n = 120;
    let extent = match shape {
        Footprint::Circle { radius } => 2.0 * radius,
        Footprint::Rectangle { length, width } => length.max(width),
    };
    // a cell corner can cut in by less than the sample spacing
    let margin = (g.resolution() * 0.02).max(2.0 * extent / n as f64);
    let hit = |grow: f64| -> bool {
        let (hx, hy) = match shape {
            Footprint::Circle { radius } => (radius + grow, radius + grow),
            Footprint::Rectangle { length, width } => (length / 2.0 + grow, width / 2.0 + grow),
        };
        for i in 0..=n {
            for j in 0..=n {
                let lx = -hx + 2.0 * hx * i as f64 / n as f64;
                let ly = -hy + 2.0 * hy * j as f64 / n as f64;
                if let Footprint::Circle { .. } = shape {
                    if lx.hypot(ly) > hx {
                        continue;
                    }
                }
                let [x, y] = pose.transform_point([lx, ly]);
                let (ix, iy) = g.cell_of(x, y);
                if g.is_occupied(ix, iy) {
                    return true;
                }
            }
        }
        false
    };
    let (inner, outer) = (hit(-margin), hit(margin));
    (inner == outer).then_some(inner)
}

/// `cases` unambiguous poses with circle and rectangle footprints, each
/// with the same verdict as dense sampling.
pub fn collision_sweep(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checked, mut ambiguous, mut hits) = (0, 0, 0);
    while checked < cases {
        let g = random_grid(&mut rng, 0.1);
        let [x, y] = random_free_point(&g, &mut rng);
        let pose = Pose::new(x, y, rng.random_range(-3.2..3.2));
        let shape = if rng.random_bool(0.5) {
            Footprint::Circle {
                radius: rng.random_range(0.05..0.6),
            }
        } else {
            Footprint::Rectangle {
                length: rng.random_range(0.1..1.0),
                width: rng.random_range(0.1..0.8),
            }
        };
        let body = RobotBody::new(shape, [0.0, 0.0]).map_err(|e| e.to_string())?;
        match sampled_collision(&g, &pose, shape) {
            Some(expected) => {
                let got = collision_check(&g, &pose, &body);
                ensure!(
                    got == expected,
                    "pose {pose:?}, shape {shape:?}: {got} vs sampled {expected}"
                );
                checked += 1;
                hits += expected as usize;
            }
            None => ambiguous += 1,
        }
    }
    ensure!(ambiguous * 20 < cases, "{ambiguous} ambiguous cases");
    ensure!(
        hits * 10 > cases && hits * 10 < 9 * cases,
        "unbalanced fixture: {hits} collisions"
    );
    Ok(format!(
        "{checked} poses exact ({hits} collisions, {ambiguous} skipped as too close to call)"
    ))
}
