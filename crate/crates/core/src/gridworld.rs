//! Deterministic 2D world: occupancy raster, unicycle kinematics, grid-exact
//! beam raycasting and footprint collision checks.
//!
//! World coordinates are metres. Cell `(ix, iy)` covers
//! `[ox + ix*res, ox + (ix+1)*res) x [oy + iy*res, oy + (iy+1)*res)` where
//! `(ox, oy)` is the grid origin. Everything outside the raster counts as
//! occupied, so rays always terminate and robots cannot leave the map.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid ray origin ({x:.4}, {y:.4})")]
    InvalidRayOrigin { x: f64, y: f64 },
    #[error("map line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("map line {line}: ragged row, expected {expected} cells but found {found}")]
    RaggedRow { line: usize, expected: usize, found: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid robot body: {0}")]
    InvalidBody(String),
    #[error("invalid lidar spec: {0}")]
    InvalidLidar(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GridError>;

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    resolution: f64,
    origin: [f64; 2],
    cells: Vec<bool>,
}

impl OccupancyGrid {
    /// An all-free grid.
    pub fn new(width: usize, height: usize, resolution: f64, origin: [f64; 2]) -> Result<Self> {
        Self::from_cells(width, height, resolution, origin, vec![false; width * height])
    }

    /// `cells` is row-major with row 0 at the bottom (lowest y).
    pub fn from_cells(
        width: usize,
        height: usize,
        resolution: f64,
        origin: [f64; 2],
        cells: Vec<bool>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(GridError::InvalidGrid("grid must have at least one cell".into()));
        }
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(GridError::InvalidGrid(format!(
                "resolution must be positive, got {resolution}"
            )));
        }
        if cells.len() != width * height {
            return Err(GridError::InvalidGrid(format!(
                "expected {} cells, got {}",
                width * height,
                cells.len()
            )));
        }
        Ok(Self {
            width,
            height,
            resolution,
            origin,
            cells,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    /// Metric size `(width, height)`.
    pub fn extent(&self) -> (f64, f64) {
        (
            self.width as f64 * self.resolution,
            self.height as f64 * self.resolution,
        )
    }

    pub fn diagonal(&self) -> f64 {
        let (w, h) = self.extent();
        w.hypot(h)
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Occupancy of a cell; anything outside the raster is occupied.
    #[inline]
    pub fn is_occupied(&self, ix: i64, iy: i64) -> bool {
        if ix < 0 || iy < 0 || ix >= self.width as i64 || iy >= self.height as i64 {
            return true;
        }
        self.cells[iy as usize * self.width + ix as usize]
    }

    pub fn set(&mut self, ix: usize, iy: usize, occupied: bool) {
        assert!(ix < self.width && iy < self.height, "cell out of range");
        self.cells[iy * self.width + ix] = occupied;
    }

    /// Marks every cell whose centre lies in the given world rectangle.
    pub fn fill_rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64) {
        for iy in 0..self.height {
            for ix in 0..self.width {
                let (cx, cy) = self.cell_center(ix as i64, iy as i64);
                if cx >= x0.min(x1) && cx <= x0.max(x1) && cy >= y0.min(y1) && cy <= y0.max(y1) {
                    self.cells[iy * self.width + ix] = true;
                }
            }
        }
    }

    #[inline]
    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        (
            ((x - self.origin[0]) / self.resolution).floor() as i64,
            ((y - self.origin[1]) / self.resolution).floor() as i64,
        )
    }

    pub fn cell_center(&self, ix: i64, iy: i64) -> (f64, f64) {
        (
            self.origin[0] + (ix as f64 + 0.5) * self.resolution,
            self.origin[1] + (iy as f64 + 0.5) * self.resolution,
        )
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (w, h) = self.extent();
        let (lx, ly) = (x - self.origin[0], y - self.origin[1]);
        lx >= 0.0 && ly >= 0.0 && lx < w && ly < h
    }

    /// True when the point is inside the raster and its cell is free.
    pub fn is_free_point(&self, x: f64, y: f64) -> bool {
        if !self.contains(x, y) {
            return false;
        }
        let (ix, iy) = self.cell_of(x, y);
        !self.is_occupied(ix, iy)
    }

    /// Parses the plain-text map format:
    ///
    /// ```text
    /// resolution 0.1
    /// width 4
    /// height 2
    /// origin 0.0 0.0      (optional)
    /// ..#.
    /// ....
    /// ```
    ///
    /// The first raster row is the top of the map (largest y). Blank lines
    /// and lines starting with `;` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut resolution = None;
        let mut width = None;
        let mut height = None;
        let mut origin = [0.0, 0.0];
        let mut rows: Vec<(usize, &str)> = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end();
            if line.trim().is_empty() || line.trim_start().starts_with(';') {
                continue;
            }
            let first = line.chars().next().unwrap();
            if first == '.' || first == '#' {
                rows.push((line_no, line));
                continue;
            }
            if !rows.is_empty() {
                return Err(GridError::Parse {
                    line: line_no,
                    msg: "header line after raster rows".into(),
                });
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let vals: Vec<&str> = parts.collect();
            let parse_f = |s: &str| {
                s.parse::<f64>().map_err(|_| GridError::Parse {
                    line: line_no,
                    msg: format!("bad number '{s}'"),
                })
            };
            let parse_u = |s: &str| {
                s.parse::<usize>().map_err(|_| GridError::Parse {
                    line: line_no,
                    msg: format!("bad integer '{s}'"),
                })
            };
            match (key, vals.as_slice()) {
                ("resolution", [v]) => resolution = Some(parse_f(v)?),
                ("width", [v]) => width = Some(parse_u(v)?),
                ("height", [v]) => height = Some(parse_u(v)?),
                ("origin", [x, y]) => origin = [parse_f(x)?, parse_f(y)?],
                _ => {
                    return Err(GridError::Parse {
                        line: line_no,
                        msg: format!("unrecognised header '{line}'"),
                    })
                }
            }
        }

        let missing = |name: &str| GridError::Parse {
            line: 0,
            msg: format!("missing '{name}' header"),
        };
        let resolution = resolution.ok_or_else(|| missing("resolution"))?;
        let width = width.ok_or_else(|| missing("width"))?;
        let height = height.ok_or_else(|| missing("height"))?;

        if rows.len() != height {
            return Err(GridError::Parse {
                line: rows.last().map(|r| r.0).unwrap_or(0),
                msg: format!("expected {height} raster rows, found {}", rows.len()),
            });
        }
        let mut cells = vec![false; width * height];
        for (r, (line_no, row)) in rows.iter().enumerate() {
            let found = row.chars().count();
            if found != width {
                return Err(GridError::RaggedRow {
                    line: *line_no,
                    expected: width,
                    found,
                });
            }
            let iy = height - 1 - r;
            for (ix, ch) in row.chars().enumerate() {
                cells[iy * width + ix] = match ch {
                    '.' => false,
                    '#' => true,
                    other => {
                        return Err(GridError::Parse {
                            line: *line_no,
                            msg: format!("unexpected cell character '{other}'"),
                        })
                    }
                };
            }
        }
        Self::from_cells(width, height, resolution, origin, cells)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "resolution {}\nwidth {}\nheight {}\norigin {} {}\n",
            self.resolution, self.width, self.height, self.origin[0], self.origin[1]
        );
        for iy in (0..self.height).rev() {
            for ix in 0..self.width {
                out.push(if self.cells[iy * self.width + ix] { '#' } else { '.' });
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    /// Maps a point from the robot frame (x forward, y left) to the world.
    pub fn transform_point(&self, local: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [
            self.x + c * local[0] - s * local[1],
            self.y + s * local[0] + c * local[1],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Footprint {
    Circle {
        radius: f64,
    },
    /// `length` runs along the robot's heading, `width` across it.
    Rectangle {
        length: f64,
        width: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotBody {
    pub shape: Footprint,
    /// LiDAR mount point in the robot frame (x forward, y left).
    pub lidar_offset: [f64; 2],
}

impl RobotBody {
    pub fn new(shape: Footprint, lidar_offset: [f64; 2]) -> Result<Self> {
        let body = Self { shape, lidar_offset };
        body.validate()?;
        Ok(body)
    }

    pub fn circle(radius: f64) -> Result<Self> {
        Self::new(Footprint::Circle { radius }, [0.0, 0.0])
    }

    pub fn validate(&self) -> Result<()> {
        let [lx, ly] = self.lidar_offset;
        match self.shape {
            Footprint::Circle { radius } => {
                if !(radius > 0.0) {
                    return Err(GridError::InvalidBody(format!("radius must be > 0, got {radius}")));
                }
                if lx.hypot(ly) >= radius {
                    return Err(GridError::InvalidBody("lidar mount outside footprint".into()));
                }
            }
            Footprint::Rectangle { length, width } => {
                if !(length > 0.0 && width > 0.0) {
                    return Err(GridError::InvalidBody(format!(
                        "rectangle dimensions must be > 0, got {length} x {width}"
                    )));
                }
                if lx.abs() >= length / 2.0 || ly.abs() >= width / 2.0 {
                    return Err(GridError::InvalidBody("lidar mount outside footprint".into()));
                }
            }
        }
        Ok(())
    }

    /// Radius of the smallest robot-centred disk containing the footprint.
    pub fn bounding_radius(&self) -> f64 {
        match self.shape {
            Footprint::Circle { radius } => radius,
            Footprint::Rectangle { length, width } => (length / 2.0).hypot(width / 2.0),
        }
    }

    /// Distance from the LiDAR mount to the robot's own outline along a beam
    /// at `beam_angle` (robot frame). This is the smallest range the beam can
    /// ever report.
    pub fn footprint_min_range(&self, beam_angle: f64) -> f64 {
        let (uy, ux) = beam_angle.sin_cos();
        let [px, py] = self.lidar_offset;
        match self.shape {
            Footprint::Circle { radius } => {
                let b = px * ux + py * uy;
                let c = px * px + py * py - radius * radius;
                -b + (b * b - c).sqrt()
            }
            Footprint::Rectangle { length, width } => {
                let exit = |p: f64, u: f64, half: f64| {
                    if u > 0.0 {
                        (half - p) / u
                    } else if u < 0.0 {
                        (-half - p) / u
                    } else {
                        f64::INFINITY
                    }
                };
                exit(px, ux, length / 2.0).min(exit(py, uy, width / 2.0))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarSpec {
    /// Field of view in radians.
    pub fov: f64,
    pub n_beams: usize,
    /// Maximum measuring range (metres).
    pub max_range: f64,
}

impl LidarSpec {
    pub fn new(fov: f64, n_beams: usize, max_range: f64) -> Result<Self> {
        let spec = Self {
            fov,
            n_beams,
            max_range,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_beams < 2 {
            return Err(GridError::InvalidLidar(format!(
                "need at least 2 beams, got {}",
                self.n_beams
            )));
        }
        if !(self.max_range > 0.0) {
            return Err(GridError::InvalidLidar("max_range must be > 0".into()));
        }
        if !(self.fov > 0.0 && self.fov <= 2.0 * PI) {
            return Err(GridError::InvalidLidar("fov must be in (0, 2pi]".into()));
        }
        Ok(())
    }

    /// Beam directions in the robot frame, evenly spaced over the field of
    /// view and symmetric about the heading.
    pub fn beam_angles(&self) -> Vec<f64> {
        let n = self.n_beams;
        (0..n)
            .map(|i| -self.fov / 2.0 + self.fov * i as f64 / (n - 1) as f64)
            .collect()
    }
}

/// One sweep with per-beam measuring bounds `[d_min[i], d_max[i]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarFrame {
    pub ranges: Vec<f64>,
    pub d_min: Vec<f64>,
    pub d_max: Vec<f64>,
}

impl LidarFrame {
    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }
}

/// Grid-exact ray traversal (Amanatides–Woo). Returns the distance to the
/// first occupied cell boundary, capped at `max_range`.
pub fn raycast(grid: &OccupancyGrid, origin: [f64; 2], angle: f64, max_range: f64) -> Result<f64> {
    let [x, y] = origin;
    if !x.is_finite() || !y.is_finite() || !grid.is_free_point(x, y) {
        return Err(GridError::InvalidRayOrigin { x, y });
    }
    let res = grid.resolution;
    let gx = (x - grid.origin[0]) / res;
    let gy = (y - grid.origin[1]) / res;
    let (dy, dx) = angle.sin_cos();
    let mut ix = gx.floor() as i64;
    let mut iy = gy.floor() as i64;

    let axis = |g: f64, cell: i64, d: f64| -> (i64, f64, f64) {
        if d > 0.0 {
            (1, ((cell + 1) as f64 - g) / d, 1.0 / d)
        } else if d < 0.0 {
            (-1, (g - cell as f64) / -d, -1.0 / d)
        } else {
            (0, f64::INFINITY, f64::INFINITY)
        }
    };
    let (step_x, mut t_max_x, t_delta_x) = axis(gx, ix, dx);
    let (step_y, mut t_max_y, t_delta_y) = axis(gy, iy, dy);
    let limit = max_range / res;

    loop {
        let t;
        if t_max_x < t_max_y {
            t = t_max_x;
            ix += step_x;
            t_max_x += t_delta_x;
        } else {
            t = t_max_y;
            iy += step_y;
            t_max_y += t_delta_y;
        }
        if t >= limit {
            return Ok(max_range);
        }
        if grid.is_occupied(ix, iy) {
            return Ok(t * res);
        }
    }
}

/// World position of the LiDAR for a robot at `pose`.
pub fn lidar_position(pose: &Pose, body: &RobotBody) -> [f64; 2] {
    pose.transform_point(body.lidar_offset)
}

/// One raycast per beam from the mount point, each clamped to the beam's
/// `[D_min, D_max]`.
pub fn scan(grid: &OccupancyGrid, pose: &Pose, body: &RobotBody, spec: &LidarSpec) -> Result<LidarFrame> {
    let origin = lidar_position(pose, body);
    let angles = spec.beam_angles();
    let mut frame = LidarFrame {
        ranges: Vec::with_capacity(angles.len()),
        d_min: Vec::with_capacity(angles.len()),
        d_max: vec![spec.max_range; angles.len()],
    };
    for a in angles {
        let d_min = body.footprint_min_range(a);
        let d = raycast(grid, origin, pose.theta + a, spec.max_range)?;
        frame.ranges.push(d.clamp(d_min.min(spec.max_range), spec.max_range));
        frame.d_min.push(d_min);
    }
    Ok(frame)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityLimits {
    pub v_max: f64,
    pub omega_max: f64,
}

impl Default for VelocityLimits {
    fn default() -> Self {
        Self {
            v_max: 0.5,
            omega_max: PI / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffDriveState {
    pub pose: Pose,
    pub v: f64,
    pub omega: f64,
    pub limits: VelocityLimits,
}

impl DiffDriveState {
    pub fn at_rest(pose: Pose, limits: VelocityLimits) -> Self {
        Self {
            pose,
            v: 0.0,
            omega: 0.0,
            limits,
        }
    }
}

/// Clamps the command to the velocity limits, then integrates one unicycle
/// step using the heading at the start of the step.
pub fn step_kinematics(state: &DiffDriveState, cmd: (f64, f64), dt: f64) -> DiffDriveState {
    debug_assert!(dt > 0.0);
    let lim = state.limits;
    let v = cmd.0.clamp(-lim.v_max, lim.v_max);
    let omega = cmd.1.clamp(-lim.omega_max, lim.omega_max);
    let p = state.pose;
    let (s, c) = p.theta.sin_cos();
    DiffDriveState {
        pose: Pose {
            x: p.x + v * c * dt,
            y: p.y + v * s * dt,
            theta: normalize_angle(p.theta + omega * dt),
        },
        v,
        omega,
        limits: lim,
    }
}

/// True iff some occupied cell (or the outside of the map) overlaps the
/// footprint with positive area.
pub fn collision_check(grid: &OccupancyGrid, pose: &Pose, body: &RobotBody) -> bool {
    let res = grid.resolution;
    let reach = body.bounding_radius();
    let (ix0, iy0) = grid.cell_of(pose.x - reach, pose.y - reach);
    let (ix1, iy1) = grid.cell_of(pose.x + reach, pose.y + reach);
    let [ox, oy] = grid.origin;

    for iy in iy0..=iy1 {
        for ix in ix0..=ix1 {
            if !grid.is_occupied(ix, iy) {
                continue;
            }
            let x0 = ox + ix as f64 * res;
            let y0 = oy + iy as f64 * res;
            let hit = match body.shape {
                Footprint::Circle { radius } => {
                    let qx = pose.x.clamp(x0, x0 + res);
                    let qy = pose.y.clamp(y0, y0 + res);
                    (pose.x - qx).powi(2) + (pose.y - qy).powi(2) < radius * radius
                }
                Footprint::Rectangle { length, width } => {
                    obb_overlaps_cell(pose, length / 2.0, width / 2.0, x0, y0, res)
                }
            };
            if hit {
                return true;
            }
        }
    }
    false
}

/// Separating-axis test between an oriented box and an axis-aligned square.
fn obb_overlaps_cell(pose: &Pose, hx: f64, hy: f64, x0: f64, y0: f64, res: f64) -> bool {
    let (s, c) = pose.theta.sin_cos();
    let u = [c, s];
    let v = [-s, c];
    let half = res / 2.0;
    let cell_c = [x0 + half, y0 + half];
    let d = [cell_c[0] - pose.x, cell_c[1] - pose.y];

    // world axes
    let ex = hx * u[0].abs() + hy * v[0].abs();
    let ey = hx * u[1].abs() + hy * v[1].abs();
    if d[0].abs() >= ex + half || d[1].abs() >= ey + half {
        return false;
    }
    // box axes
    for (axis, box_half) in [(u, hx), (v, hy)] {
        let dist = (d[0] * axis[0] + d[1] * axis[1]).abs();
        let cell_half = half * (axis[0].abs() + axis[1].abs());
        if dist >= box_half + cell_half {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    macro_rules! assert_close {
        ($a:expr, $b:expr, $tol:expr) => {{
            let (a, b): (f64, f64) = ($a, $b);
            assert!((a - b).abs() <= $tol, "{} vs {} (tol {})", a, b, $tol);
        }};
    }

    fn empty(w_m: f64, h_m: f64, res: f64) -> OccupancyGrid {
        OccupancyGrid::new(
            (w_m / res).round() as usize,
            (h_m / res).round() as usize,
            res,
            [0.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn angle_normalization_range() {
        assert_close!(normalize_angle(PI), PI, 0.0);
        assert_close!(normalize_angle(-PI), PI, 1e-12);
        assert_close!(normalize_angle(3.0 * PI / 2.0), -PI / 2.0, 1e-12);
        assert_close!(normalize_angle(0.0), 0.0, 0.0);
    }

    #[test]
    fn raycast_to_boundary_in_empty_map() {
        let g = empty(10.0, 10.0, 0.1);
        assert_close!(raycast(&g, [5.0, 5.0], 0.0, 30.0).unwrap(), 5.0, 1e-9);
        assert_close!(raycast(&g, [5.0, 5.0], PI, 30.0).unwrap(), 5.0, 1e-9);
        assert_close!(raycast(&g, [5.0, 5.0], PI / 2.0, 30.0).unwrap(), 5.0, 1e-9);
        assert_close!(
            raycast(&g, [5.0, 5.0], PI / 4.0, 30.0).unwrap(),
            5.0 * 2f64.sqrt(),
            1e-9
        );
        assert_close!(raycast(&g, [5.0, 5.0], 0.0, 2.5).unwrap(), 2.5, 0.0);
    }

    #[test]
    fn raycast_hits_wall_column() {
        let mut g = empty(10.0, 10.0, 0.1);
        g.fill_rect(3.0, 0.0, 3.09, 10.0);
        assert_close!(raycast(&g, [1.0, 1.0], 0.0, 30.0).unwrap(), 2.0, 1e-9);
    }

    #[test]
    fn raycast_rejects_bad_origin() {
        let mut g = empty(2.0, 2.0, 0.5);
        g.set(0, 0, true);
        let err = raycast(&g, [0.2, 0.2], 0.0, 5.0).unwrap_err();
        assert!(err.to_string().contains("invalid ray origin"));
        assert!(raycast(&g, [-1.0, 0.2], 0.0, 5.0).is_err());
        assert!(raycast(&g, [2.0, 1.0], 0.0, 5.0).is_err());
    }

    #[test]
    fn circle_min_range_is_radius() {
        let body = RobotBody::circle(0.2).unwrap();
        for k in 0..50 {
            let a = -PI + k as f64 * 0.13;
            assert_eq!(body.footprint_min_range(a), 0.2);
        }
    }

    #[test]
    fn rectangle_min_range_perpendicular() {
        let body = RobotBody::new(
            Footprint::Rectangle {
                length: 0.455,
                width: 0.381,
            },
            [0.0, 0.1],
        )
        .unwrap();
        assert_close!(body.footprint_min_range(0.0), 0.2275, 1e-12);
        assert_close!(body.footprint_min_range(PI / 2.0), 0.1905 - 0.1, 1e-12);
        assert_close!(body.footprint_min_range(-PI / 2.0), 0.1905 + 0.1, 1e-12);
        assert_close!(body.footprint_min_range(PI), 0.2275, 1e-12);
    }

    #[test]
    fn body_validation() {
        assert!(RobotBody::circle(0.0).is_err());
        assert!(RobotBody::new(Footprint::Circle { radius: 0.2 }, [0.3, 0.0]).is_err());
        assert!(RobotBody::new(
            Footprint::Rectangle {
                length: 0.4,
                width: 0.2
            },
            [0.0, 0.1]
        )
        .is_err());
    }

    #[test]
    fn kinematics_examples() {
        let lim = VelocityLimits::default();
        let s0 = DiffDriveState::at_rest(Pose::default(), lim);
        let s1 = step_kinematics(&s0, (0.5, 0.0), 0.2);
        assert_close!(s1.pose.x, 0.1, 1e-12);
        assert_close!(s1.pose.y, 0.0, 0.0);
        let s2 = step_kinematics(&s0, (0.0, PI / 2.0), 0.2);
        assert_close!(s2.pose.theta, PI / 10.0, 1e-12);
        assert_eq!((s2.pose.x, s2.pose.y), (0.0, 0.0));
        let s3 = step_kinematics(&s0, (1.0, 0.0), 0.2);
        assert_eq!(s3.v, 0.5);
        assert_close!(s3.pose.x, 0.1, 1e-12);
        let s4 = step_kinematics(&s0, (0.0, -10.0), 0.2);
        assert_eq!(s4.omega, -PI / 2.0);
    }

    #[test]
    fn zero_command_is_identity() {
        let s = DiffDriveState::at_rest(Pose::new(1.3, -0.4, 2.0), VelocityLimits::default());
        let s1 = step_kinematics(&s, (0.0, 0.0), 0.2);
        assert_eq!(s1.pose, s.pose);
    }

    #[test]
    fn scan_forward_obstacle() {
        let mut g = empty(6.0, 6.0, 0.05);
        // block whose near face sits at x = 4.0
        g.fill_rect(4.01, 2.5, 4.5, 3.5);
        let body = RobotBody::circle(0.2).unwrap();
        let spec = LidarSpec::new(1.5 * PI, 181, 30.0).unwrap();
        let f = scan(&g, &Pose::new(3.0, 3.0, 0.0), &body, &spec).unwrap();
        let mid = spec.n_beams / 2;
        assert_close!(f.ranges[mid], 1.0, 1e-9);
        // rearmost beams look towards the west wall, 3 m away at +-135 deg
        assert_close!(f.ranges[0], 3.0 * 2f64.sqrt(), 1e-9);
        assert!(f.d_min.iter().all(|&d| d == 0.2));
        assert!(f.d_max.iter().all(|&d| d == 30.0));
    }

    #[test]
    fn collision_basic() {
        let mut g = empty(5.0, 5.0, 0.1);
        g.fill_rect(3.0, 0.0, 3.09, 5.0);
        let body = RobotBody::circle(0.2).unwrap();
        assert!(!collision_check(&g, &Pose::new(2.0, 2.5, 0.0), &body));
        assert!(collision_check(&g, &Pose::new(2.85, 2.5, 0.0), &body));
        // near the map boundary
        assert!(collision_check(&g, &Pose::new(0.1, 2.5, 0.0), &body));
        assert!(!collision_check(&g, &Pose::new(0.25, 2.5, 0.0), &body));
    }

    #[test]
    fn rectangle_collision_respects_orientation() {
        let mut g = empty(4.0, 4.0, 0.1);
        g.fill_rect(2.5, 0.0, 2.59, 4.0);
        let body = RobotBody::new(
            Footprint::Rectangle {
                length: 0.8,
                width: 0.2,
            },
            [0.0, 0.0],
        )
        .unwrap();
        // wall starts at x = 2.5; box centre at 2.2
        assert!(collision_check(&g, &Pose::new(2.2, 2.0, 0.0), &body));
        assert!(!collision_check(&g, &Pose::new(2.2, 2.0, PI / 2.0), &body));
    }

    #[test]
    fn map_text_round_trip_and_orientation() {
        let text = "resolution 0.5\nwidth 3\nheight 2\n#..\n..#\n";
        let g = OccupancyGrid::parse(text).unwrap();
        assert!(g.is_occupied(0, 1));
        assert!(g.is_occupied(2, 0));
        assert!(!g.is_occupied(0, 0));
        let again = OccupancyGrid::parse(&g.to_text()).unwrap();
        assert_eq!(g, again);
    }

    #[test]
    fn map_rejects_ragged_rows() {
        let text = "resolution 0.5\nwidth 3\nheight 2\n#..\n.#\n";
        assert!(matches!(
            OccupancyGrid::parse(text),
            Err(GridError::RaggedRow {
                expected: 3,
                found: 2,
                ..
            })
        ));
        assert!(OccupancyGrid::parse("width 3\nheight 1\n...\n").is_err());
        assert!(OccupancyGrid::parse("resolution 0\nwidth 1\nheight 1\n.\n").is_err());
    }
}
