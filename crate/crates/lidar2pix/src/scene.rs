//! Deterministic synthetic world generation, ray-cast LiDAR simulation, and
//! flat-shaded camera rendering. The camera and the LiDAR share the same
//! origin and angular parameterization, so a return at grid cell (i,j) and
//! the rendered pixel (i,j) see the same surface.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lidar::{LidarPoint, PointCloud, SensorConfig};
use crate::raster::RasterImage;

pub const DEFAULT_SENSOR_HEIGHT: f64 = 1.5;

/// Car body paint palette. Reflectance uniquely identifies the color, so the
/// reflectance channel carries enough signal to recover paint except for the
/// black entry, which is nearly invisible to the LiDAR. Because the returned
/// intensity is material reflectance times the incidence cosine, adjacent
/// entries keep a ratio of at least ~1.4: a surface tilted up to 45 degrees
/// then still reads below the next-brighter material seen head on.
pub const CAR_PALETTE: [([f64; 3], f64); 5] = [
    ([0.03, 0.03, 0.03], 0.02), // black
    ([0.95, 0.95, 0.95], 0.92), // white
    ([0.90, 0.80, 0.10], 0.64), // yellow
    ([0.85, 0.10, 0.10], 0.44), // red
    ([0.10, 0.20, 0.85], 0.30), // blue
];

#[derive(Debug, Clone, PartialEq)]
pub struct CarSpec {
    /// Ground-plane position of the footprint center, meters.
    pub center: (f64, f64),
    /// Heading, degrees.
    pub yaw: f64,
    /// Length, width, height of the axis-aligned cuboid before yaw, meters.
    pub dimensions: (f64, f64, f64),
    pub body_color: [f64; 3],
    pub body_reflectance: f64,
}

impl CarSpec {
    pub fn is_black(&self) -> bool {
        self.body_reflectance <= 0.05
            && self.body_color.iter().cloned().fold(0.0, f64::max) <= 0.1
    }

    fn footprint_radius(&self) -> f64 {
        let (l, w, _) = self.dimensions;
        0.5 * (l * l + w * w).sqrt()
    }

    fn validate(&self) -> Result<()> {
        let (l, w, h) = self.dimensions;
        if l <= 0.0 || w <= 0.0 || h <= 0.0 {
            return Err(Error::invalid("CarSpec", "dimensions must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.body_reflectance) {
            return Err(Error::invalid("CarSpec", "reflectance outside [0,1]"));
        }
        Ok(())
    }
}

/// A static non-car obstacle (wall).
#[derive(Debug, Clone, PartialEq)]
pub struct WallSpec {
    pub center: (f64, f64),
    pub yaw: f64,
    pub dimensions: (f64, f64, f64),
    pub color: [f64; 3],
    pub reflectance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub sensor_height: f64,
    pub cars: Vec<CarSpec>,
    pub walls: Vec<WallSpec>,
    pub ground_reflectance: f64,
    pub ground_color: [f64; 3],
    pub background_color: [f64; 3],
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
            sensor_height: DEFAULT_SENSOR_HEIGHT,
            cars: Vec::new(),
            walls: Vec::new(),
            ground_reflectance: 0.25,
            ground_color: [0.35, 0.33, 0.30],
            background_color: [0.55, 0.75, 0.95],
        }
    }
}

/// Ground-truth annotation for one rendered frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneMeta {
    pub boxes: Vec<CarBox>,
}

/// Inclusive pixel bounding box of one visible car in the target image.
#[derive(Debug, Clone, PartialEq)]
pub struct CarBox {
    pub car_index: usize,
    pub u0: usize,
    pub v0: usize,
    pub u1: usize,
    pub v1: usize,
    pub is_black: bool,
    pub body_color: [f64; 3],
}

impl SceneMeta {
    pub fn n_g(&self) -> usize {
        self.boxes.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub car_count_range: (usize, usize),
    pub black_car_probability: f64,
    /// Radial placement band, meters from the sensor.
    pub range_min: f64,
    pub range_max: f64,
    /// Cars are placed with |azimuth| below this bound, degrees.
    pub az_limit: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            car_count_range: (1, 4),
            black_car_probability: 0.3,
            range_min: 8.0,
            range_max: 32.0,
            az_limit: 40.0,
        }
    }
}

const PLACEMENT_RETRIES: usize = 1000;
const SCENE_RETRIES: usize = 64;

/// Deterministic scene synthesis: car placements by rejection sampling so
/// footprints never overlap.
pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<SceneSpec> {
    let (lo, hi) = params.car_count_range;
    if lo > hi {
        return Err(Error::invalid("SceneParams", "car_count_range min > max"));
    }
    if !(0.0..=1.0).contains(&params.black_car_probability) {
        return Err(Error::invalid("SceneParams", "black_car_probability outside [0,1]"));
    }
    if !(0.0 < params.range_min && params.range_min < params.range_max) {
        return Err(Error::invalid("SceneParams", "require 0 < range_min < range_max"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(lo..=hi);
    let mut scene = SceneSpec { seed, ..SceneSpec::default() };
    // Sequential placement can paint itself into a corner (earlier cars
    // blocking every remaining azimuth), so restart the whole layout when a
    // car cannot be placed.
    'attempt: for attempt in 0..SCENE_RETRIES {
        scene.cars.clear();
        for _ in 0..count {
            let mut placed = false;
            for _retry in 0..PLACEMENT_RETRIES {
                let range = rng.gen_range(params.range_min..params.range_max);
                let az = rng.gen_range(-params.az_limit..params.az_limit).to_radians();
                let yaw = rng.gen_range(0.0..360.0);
                let dims = (
                    rng.gen_range(4.0..5.0),
                    rng.gen_range(1.8..2.1),
                    rng.gen_range(1.4..1.7),
                );
                let (color, reflectance) = if rng.gen_bool(params.black_car_probability) {
                    CAR_PALETTE[0]
                } else {
                    CAR_PALETTE[1 + rng.gen_range(0..CAR_PALETTE.len() - 1)]
                };
                let car = CarSpec {
                    center: (range * az.cos(), range * az.sin()),
                    yaw,
                    dimensions: dims,
                    body_color: color,
                    body_reflectance: reflectance,
                };
                // Cars must occupy disjoint azimuth intervals as seen from
                // the sensor, so none is occluded by another and every
                // ground-truth car stays visible. Disjoint intervals also
                // rule out footprint overlap.
                let interval = |c: &CarSpec| {
                    let d = (c.center.0 * c.center.0 + c.center.1 * c.center.1).sqrt();
                    let half = (c.footprint_radius() / d).min(1.0).asin();
                    let mid = c.center.1.atan2(c.center.0);
                    (mid - half, mid + half)
                };
                let (a0, a1) = interval(&car);
                let overlaps = scene.cars.iter().any(|c| {
                    let (b0, b1) = interval(c);
                    a0 < b1 && b0 < a1
                });
                if !overlaps {
                    car.validate()?;
                    scene.cars.push(car);
                    placed = true;
                    break;
                }
            }
            if !placed {
                if attempt + 1 == SCENE_RETRIES {
                    return Err(Error::PlacementFailed { retries: PLACEMENT_RETRIES });
                }
                continue 'attempt;
            }
        }
        return Ok(scene);
    }
    unreachable!()
}

// ---------------------------------------------------------------------------
// Ray casting

#[derive(Debug, Clone, Copy)]
struct Vec3 {
    x: f64,
    y: f64,
    z: f64,
}

impl Vec3 {
    fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }
}

fn ray_direction(az_deg: f64, el_deg: f64) -> Vec3 {
    let az = az_deg.to_radians();
    let el = el_deg.to_radians();
    Vec3 {
        x: el.cos() * az.cos(),
        y: el.cos() * az.sin(),
        z: el.sin(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surface {
    Ground,
    Car(usize),
    Wall(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct RayHit {
    pub t: f64,
    pub surface: Surface,
    /// Outward unit normal at the hit, world frame.
    normal: Vec3,
}

/// Slab intersection with a yawed, ground-standing cuboid. Returns the entry
/// distance and outward normal in the world frame.
fn ray_cuboid(
    origin: Vec3,
    dir: Vec3,
    center: (f64, f64),
    yaw_deg: f64,
    dims: (f64, f64, f64),
) -> Option<(f64, Vec3)> {
    let (l, w, h) = dims;
    let yaw = yaw_deg.to_radians();
    let (s, c) = (yaw.sin(), yaw.cos());
    // into box frame: translate to box center (at half height), rotate by -yaw
    let px = origin.x - center.0;
    let py = origin.y - center.1;
    let pz = origin.z - h / 2.0;
    let o = Vec3 { x: c * px + s * py, y: -s * px + c * py, z: pz };
    let d = Vec3 {
        x: c * dir.x + s * dir.y,
        y: -s * dir.x + c * dir.y,
        z: dir.z,
    };
    let half = [l / 2.0, w / 2.0, h / 2.0];
    let o_ax = [o.x, o.y, o.z];
    let d_ax = [d.x, d.y, d.z];
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    let mut enter_axis = 0usize;
    let mut enter_sign = 1.0f64;
    for ax in 0..3 {
        if d_ax[ax].abs() < 1e-15 {
            if o_ax[ax].abs() > half[ax] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d_ax[ax];
        let mut t0 = (-half[ax] - o_ax[ax]) * inv;
        let mut t1 = (half[ax] - o_ax[ax]) * inv;
        let mut sign = -1.0;
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
            sign = 1.0;
        }
        if t0 > t_enter {
            t_enter = t0;
            enter_axis = ax;
            enter_sign = sign;
        }
        t_exit = t_exit.min(t1);
        if t_enter > t_exit {
            return None;
        }
    }
    if t_enter <= 1e-9 {
        return None; // origin inside or box behind
    }
    let mut n_box = [0.0; 3];
    n_box[enter_axis] = enter_sign;
    // back to world frame (+yaw)
    let normal = Vec3 {
        x: c * n_box[0] - s * n_box[1],
        y: s * n_box[0] + c * n_box[1],
        z: n_box[2],
    };
    Some((t_enter, normal))
}

/// Nearest intersection of a sensor-origin ray with the scene.
pub fn cast_ray(scene: &SceneSpec, az_deg: f64, el_deg: f64) -> Option<RayHit> {
    let origin = Vec3 { x: 0.0, y: 0.0, z: scene.sensor_height };
    let dir = ray_direction(az_deg, el_deg);
    let mut best: Option<RayHit> = None;
    let mut consider = |t: f64, surface: Surface, normal: Vec3| {
        if best.map_or(true, |b| t < b.t) {
            best = Some(RayHit { t, surface, normal });
        }
    };
    if dir.z < -1e-15 {
        let t = -origin.z / dir.z;
        if t > 1e-9 {
            consider(t, Surface::Ground, Vec3 { x: 0.0, y: 0.0, z: 1.0 });
        }
    }
    for (i, car) in scene.cars.iter().enumerate() {
        if let Some((t, n)) = ray_cuboid(origin, dir, car.center, car.yaw, car.dimensions) {
            consider(t, Surface::Car(i), n);
        }
    }
    for (i, wall) in scene.walls.iter().enumerate() {
        if let Some((t, n)) = ray_cuboid(origin, dir, wall.center, wall.yaw, wall.dimensions) {
            consider(t, Surface::Wall(i), n);
        }
    }
    best
}

/// Ray-cast LiDAR simulation over the sensor's angular grid, one ray per
/// retained grid cell (every `subsample`-th azimuth/elevation step). Return
/// reflectance is material reflectance times the Lambertian cosine factor.
pub fn simulate_lidar(
    scene: &SceneSpec,
    cfg: &SensorConfig,
    subsample: usize,
) -> Result<PointCloud> {
    cfg.validate()?;
    let cols = cfg.grid_cols();
    let rows = cfg.grid_rows();
    if subsample == 0 || subsample > cols || subsample > rows {
        return Err(Error::invalid(
            "subsample",
            format!("{subsample} leaves no rays on the {cols}x{rows} grid"),
        ));
    }
    // floor division: a non-dividing subsample drops the trailing partial step
    let (sub_cols, sub_rows) = (cols / subsample, rows / subsample);
    let az_step = cfg.az_res * subsample as f64;
    let el_step = cfg.el_res * subsample as f64;
    let mut points = Vec::new();
    for j in 0..sub_rows {
        let el = cfg.v_fov / 2.0 - (j as f64 + 0.5) * el_step;
        for i in 0..sub_cols {
            let az = cfg.h_fov / 2.0 - (i as f64 + 0.5) * az_step;
            let Some(hit) = cast_ray(scene, az, el) else {
                continue;
            };
            if hit.t < cfg.min_range || hit.t > cfg.max_range {
                continue;
            }
            let material = match hit.surface {
                Surface::Ground => scene.ground_reflectance,
                Surface::Car(k) => scene.cars[k].body_reflectance,
                Surface::Wall(k) => scene.walls[k].reflectance,
            };
            let dir = ray_direction(az, el);
            let cos_incidence = (-dir.dot(hit.normal)).max(0.0);
            let reflectance = (material * cos_incidence).clamp(0.0, 1.0);
            let p = Vec3 {
                x: dir.x * hit.t,
                y: dir.y * hit.t,
                z: dir.z * hit.t,
            };
            points.push(LidarPoint::new(p.x, p.y, p.z, reflectance)?);
        }
    }
    Ok(PointCloud { points, frame_id: scene.seed })
}

/// Flat-shaded render from the sensor origin with the projector's angular
/// mapping: pixel (u,v) covers the same azimuth/elevation bin. Also returns
/// the ground-truth car boxes for cars with at least one visible pixel.
pub fn render_camera(
    scene: &SceneSpec,
    cfg: &SensorConfig,
    width: usize,
    height: usize,
) -> Result<(RasterImage, SceneMeta)> {
    if width < 16 || height < 16 {
        return Err(Error::invalid("image size", "dimensions must be >= 16"));
    }
    let mut img = RasterImage::zeros(3, height, width);
    let mut visible: Vec<Option<(usize, usize, usize, usize)>> = vec![None; scene.cars.len()];
    for v in 0..height {
        let el = cfg.v_fov / 2.0 - (v as f64 + 0.5) * cfg.v_fov / height as f64;
        for u in 0..width {
            let az = cfg.h_fov / 2.0 - (u as f64 + 0.5) * cfg.h_fov / width as f64;
            let hit = cast_ray(scene, az, el).filter(|h| h.t <= cfg.max_range);
            let color = match hit.map(|h| h.surface) {
                None => scene.background_color,
                Some(Surface::Ground) => scene.ground_color,
                Some(Surface::Wall(k)) => scene.walls[k].color,
                Some(Surface::Car(k)) => {
                    let b = visible[k].get_or_insert((u, v, u, v));
                    b.0 = b.0.min(u);
                    b.1 = b.1.min(v);
                    b.2 = b.2.max(u);
                    b.3 = b.3.max(v);
                    scene.cars[k].body_color
                }
            };
            for ch in 0..3 {
                img.data[[ch, v, u]] = color[ch] as f32;
            }
        }
    }
    let boxes = visible
        .iter()
        .enumerate()
        .filter_map(|(k, b)| {
            b.map(|(u0, v0, u1, v1)| CarBox {
                car_index: k,
                u0,
                v0,
                u1,
                v1,
                is_black: scene.cars[k].is_black(),
                body_color: scene.cars[k].body_color,
            })
        })
        .collect();
    Ok((img, SceneMeta { boxes }))
}

// ---------------------------------------------------------------------------
// Text serialization (fixtures and dataset sidecars)

fn fmt_rgb(c: [f64; 3]) -> String {
    format!("{},{},{}", c[0], c[1], c[2])
}

fn parse_rgb(s: &str, path: &Path) -> Result<[f64; 3]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e: std::num::ParseFloatError| Error::parse(path, e.to_string()))?;
    if v.len() != 3 {
        return Err(Error::parse(path, "expected 3 color components"));
    }
    Ok([v[0], v[1], v[2]])
}

impl SceneSpec {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "version=1").unwrap();
        writeln!(s, "seed={}", self.seed).unwrap();
        writeln!(s, "sensor_height={}", self.sensor_height).unwrap();
        writeln!(s, "ground_reflectance={}", self.ground_reflectance).unwrap();
        writeln!(s, "ground_color={}", fmt_rgb(self.ground_color)).unwrap();
        writeln!(s, "background_color={}", fmt_rgb(self.background_color)).unwrap();
        for c in &self.cars {
            writeln!(
                s,
                "car={},{},{},{},{},{},{},{}",
                c.center.0,
                c.center.1,
                c.yaw,
                c.dimensions.0,
                c.dimensions.1,
                c.dimensions.2,
                fmt_rgb(c.body_color),
                c.body_reflectance
            )
            .unwrap();
        }
        for w in &self.walls {
            writeln!(
                s,
                "wall={},{},{},{},{},{},{},{}",
                w.center.0,
                w.center.1,
                w.yaw,
                w.dimensions.0,
                w.dimensions.1,
                w.dimensions.2,
                fmt_rgb(w.color),
                w.reflectance
            )
            .unwrap();
        }
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut spec = SceneSpec::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, val) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, format!("missing '=' in '{line}'")))?;
            let numf = |v: &str| -> Result<f64> {
                v.trim().parse().map_err(|e: std::num::ParseFloatError| {
                    Error::parse(path, format!("{key}: {e}"))
                })
            };
            match key {
                "version" => {}
                "seed" => {
                    spec.seed = val.trim().parse().map_err(|_| Error::parse(path, "bad seed"))?
                }
                "sensor_height" => spec.sensor_height = numf(val)?,
                "ground_reflectance" => spec.ground_reflectance = numf(val)?,
                "ground_color" => spec.ground_color = parse_rgb(val, path)?,
                "background_color" => spec.background_color = parse_rgb(val, path)?,
                "car" | "wall" => {
                    let f: Vec<f64> = val
                        .split(',')
                        .map(|t| numf(t))
                        .collect::<Result<_>>()?;
                    if f.len() != 10 {
                        return Err(Error::parse(path, format!("{key}: expected 10 fields")));
                    }
                    if key == "car" {
                        spec.cars.push(CarSpec {
                            center: (f[0], f[1]),
                            yaw: f[2],
                            dimensions: (f[3], f[4], f[5]),
                            body_color: [f[6], f[7], f[8]],
                            body_reflectance: f[9],
                        });
                    } else {
                        spec.walls.push(WallSpec {
                            center: (f[0], f[1]),
                            yaw: f[2],
                            dimensions: (f[3], f[4], f[5]),
                            color: [f[6], f[7], f[8]],
                            reflectance: f[9],
                        });
                    }
                }
                other => return Err(Error::parse(path, format!("unknown key '{other}'"))),
            }
        }
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

impl SceneMeta {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "n_g={}", self.boxes.len()).unwrap();
        for b in &self.boxes {
            writeln!(
                s,
                "car={},{},{},{},{},{},{}",
                b.car_index,
                b.u0,
                b.v0,
                b.u1,
                b.v1,
                b.is_black as u8,
                fmt_rgb(b.body_color)
            )
            .unwrap();
        }
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut boxes = Vec::new();
        let mut declared = None;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, val) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, format!("missing '=' in '{line}'")))?;
            match key {
                "n_g" => {
                    declared =
                        Some(val.trim().parse::<usize>().map_err(|_| {
                            Error::parse(path, "bad n_g")
                        })?)
                }
                "car" => {
                    let parts: Vec<&str> = val.split(',').collect();
                    if parts.len() != 9 {
                        return Err(Error::parse(path, "car: expected 9 fields"));
                    }
                    let pu = |i: usize| -> Result<usize> {
                        parts[i]
                            .trim()
                            .parse()
                            .map_err(|_| Error::parse(path, format!("car field {i}")))
                    };
                    let pf = |i: usize| -> Result<f64> {
                        parts[i]
                            .trim()
                            .parse()
                            .map_err(|_| Error::parse(path, format!("car field {i}")))
                    };
                    boxes.push(CarBox {
                        car_index: pu(0)?,
                        u0: pu(1)?,
                        v0: pu(2)?,
                        u1: pu(3)?,
                        v1: pu(4)?,
                        is_black: pu(5)? != 0,
                        body_color: [pf(6)?, pf(7)?, pf(8)?],
                    });
                }
                other => return Err(Error::parse(path, format!("unknown key '{other}'"))),
            }
        }
        if let Some(n) = declared {
            if n != boxes.len() {
                return Err(Error::parse(path, "n_g does not match box count"));
            }
        }
        Ok(SceneMeta { boxes })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lidar::cartesian_to_spherical;
    use crate::raster::pixel_of;

    fn small_cfg() -> SensorConfig {
        SensorConfig::default()
    }

    #[test]
    fn generate_is_deterministic() {
        let params = SceneParams::default();
        let a = generate_scene(42, &params).unwrap();
        let b = generate_scene(42, &params).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_text(), b.to_text());
    }

    #[test]
    fn zero_cars() {
        let params = SceneParams { car_count_range: (0, 0), ..SceneParams::default() };
        let scene = generate_scene(1, &params).unwrap();
        assert!(scene.cars.is_empty());
    }

    #[test]
    fn black_probability_one() {
        let params = SceneParams { black_car_probability: 1.0, ..SceneParams::default() };
        for seed in 0..1000 {
            let scene = generate_scene(seed, &params).unwrap();
            for car in &scene.cars {
                assert!(car.is_black(), "seed {seed} produced non-black car");
            }
        }
    }

    #[test]
    fn overdense_placement_fails() {
        let params = SceneParams {
            car_count_range: (40, 40),
            range_min: 8.0,
            range_max: 9.0,
            az_limit: 5.0,
            ..SceneParams::default()
        };
        assert!(matches!(
            generate_scene(0, &params),
            Err(Error::PlacementFailed { .. })
        ));
    }

    #[test]
    fn ground_ray_analytic_range() {
        // el = -5 degrees from 1.5 m height: range = 1.5 / sin(5 deg)
        let scene = SceneSpec::default();
        let hit = cast_ray(&scene, 0.0, -5.0).unwrap();
        assert_eq!(hit.surface, Surface::Ground);
        let expected = 1.5 / 5.0f64.to_radians().sin();
        assert!((hit.t - expected).abs() < 1e-9, "{} vs {expected}", hit.t);
        assert!((expected - 17.21).abs() < 1e-2);
    }

    #[test]
    fn horizontal_ray_misses_empty_scene_ground() {
        let scene = SceneSpec::default();
        assert!(cast_ray(&scene, 0.0, 0.0).is_none());
        assert!(cast_ray(&scene, 0.0, 5.0).is_none());
    }

    #[test]
    fn cuboid_front_face_analytic() {
        // unit-ish cuboid straddling the x-axis at 10 m: central ray hits the
        // front face at center_x - length/2
        let mut scene = SceneSpec::default();
        scene.cars.push(CarSpec {
            center: (10.0, 0.0),
            yaw: 0.0,
            dimensions: (1.0, 1.0, 3.0),
            body_color: [0.5; 3],
            body_reflectance: 0.5,
        });
        let hit = cast_ray(&scene, 0.0, 0.0).unwrap();
        assert_eq!(hit.surface, Surface::Car(0));
        assert!((hit.t - 9.5).abs() < 1e-9);
    }

    #[test]
    fn yawed_cuboid_analytic() {
        // 90-degree yaw swaps length and width
        let mut scene = SceneSpec::default();
        scene.cars.push(CarSpec {
            center: (10.0, 0.0),
            yaw: 90.0,
            dimensions: (4.0, 2.0, 3.0),
            body_color: [0.5; 3],
            body_reflectance: 0.5,
        });
        let hit = cast_ray(&scene, 0.0, 0.0).unwrap();
        assert!((hit.t - 9.0).abs() < 1e-9);
    }

    #[test]
    fn black_car_returns_low_reflectance() {
        let mut scene = SceneSpec::default();
        scene.cars.push(CarSpec {
            center: (12.0, 0.0),
            yaw: 0.0,
            dimensions: (4.5, 2.0, 1.6),
            body_color: CAR_PALETTE[0].0,
            body_reflectance: 0.02,
        });
        let cloud = simulate_lidar(&scene, &small_cfg(), 2).unwrap();
        let car_points: Vec<_> = cloud
            .points
            .iter()
            .filter(|p| {
                let s = cartesian_to_spherical(p).unwrap();
                cast_ray(&scene, s.azimuth, s.elevation)
                    .map(|h| h.surface == Surface::Car(0))
                    .unwrap_or(false)
            })
            .collect();
        assert!(!car_points.is_empty());
        assert!(car_points.iter().all(|p| p.reflectance <= 0.02 + 1e-12));
    }

    #[test]
    fn empty_scene_render_is_ground_and_sky() {
        let scene = SceneSpec::default();
        let (img, meta) = render_camera(&scene, &small_cfg(), 64, 64).unwrap();
        assert_eq!(meta.n_g(), 0);
        // top row above horizon is sky, bottom row is ground
        for ch in 0..3 {
            assert_eq!(img.data[[ch, 0, 0]], scene.background_color[ch] as f32);
            assert_eq!(img.data[[ch, 63, 0]], scene.ground_color[ch] as f32);
        }
    }

    #[test]
    fn single_car_visible() {
        let params = SceneParams { car_count_range: (1, 1), ..SceneParams::default() };
        let scene = generate_scene(5, &params).unwrap();
        let (_, meta) = render_camera(&scene, &small_cfg(), 64, 64).unwrap();
        assert_eq!(meta.n_g(), 1);
        let b = &meta.boxes[0];
        assert!(b.u1 >= b.u0 && b.v1 >= b.v0);
    }

    #[test]
    fn occluded_car_excluded() {
        let mut scene = SceneSpec::default();
        scene.cars.push(CarSpec {
            center: (20.0, 0.0),
            yaw: 0.0,
            dimensions: (4.5, 2.0, 1.6),
            body_color: [0.85, 0.1, 0.1],
            body_reflectance: 0.45,
        });
        // wall fully between sensor and car, taller and wider than the car
        scene.walls.push(WallSpec {
            center: (10.0, 0.0),
            yaw: 0.0,
            dimensions: (0.5, 30.0, 8.0),
            color: [0.6, 0.5, 0.4],
            reflectance: 0.4,
        });
        let (img, meta) = render_camera(&scene, &small_cfg(), 64, 64).unwrap();
        assert_eq!(meta.n_g(), 0);
        // depth comparison oracle: every pixel shows wall, ground, or sky
        let car = scene.cars[0].body_color.map(|c| c as f32);
        for v in 0..64 {
            for u in 0..64 {
                let px = [0, 1, 2].map(|k| img.data[[k, v, u]]);
                assert_ne!(px, car);
            }
        }
    }

    #[test]
    fn lidar_and_camera_agree_on_car_pixels() {
        // Geometric consistency: every LiDAR return on a car surface maps to
        // a rendered pixel showing that car's color.
        let params = SceneParams { car_count_range: (2, 3), ..SceneParams::default() };
        let scene = generate_scene(17, &params).unwrap();
        let cfg = small_cfg();
        let (w, h) = (cfg.grid_cols() / 2, cfg.grid_rows() / 2);
        let cloud = simulate_lidar(&scene, &cfg, 2).unwrap();
        let (img, _) = render_camera(&scene, &cfg, w, h).unwrap();
        let mut car_returns = 0;
        for p in &cloud.points {
            let s = cartesian_to_spherical(p).unwrap();
            let hit = cast_ray(&scene, s.azimuth, s.elevation).unwrap();
            if let Surface::Car(k) = hit.surface {
                let (u, v) = pixel_of(&s, &cfg, w, h).unwrap();
                let expect = scene.cars[k].body_color.map(|c| c as f32);
                let got = [0, 1, 2].map(|ch| img.data[[ch, v, u]]);
                assert_eq!(got, expect);
                car_returns += 1;
            }
        }
        assert!(car_returns > 0);
    }

    #[test]
    fn simulator_grid_aligns_with_projector() {
        // A ray cast for subsampled cell (i,j) projects back onto pixel (i,j).
        let cfg = small_cfg();
        let sub = 5;
        let (w, h) = (cfg.grid_cols() / sub, cfg.grid_rows() / sub);
        let mut scene = SceneSpec::default();
        scene.cars.push(CarSpec {
            center: (15.0, 0.0),
            yaw: 30.0,
            dimensions: (4.5, 2.0, 1.6),
            body_color: [0.7, 0.7, 0.75],
            body_reflectance: 0.72,
        });
        let cloud = simulate_lidar(&scene, &cfg, sub).unwrap();
        assert!(!cloud.points.is_empty());
        let img = crate::raster::project_frame(
            &cloud,
            &cfg,
            crate::raster::ChannelMode::ReflectanceOnly,
            w,
            h,
        )
        .unwrap();
        // every return lands in a unique pixel (one ray per subsampled cell)
        let occupied = img.data.iter().filter(|&&v| v > 0.0).count();
        let zero_refl = cloud.points.iter().filter(|p| p.reflectance == 0.0).count();
        assert_eq!(occupied + zero_refl, cloud.points.len());
    }

    #[test]
    fn bad_subsample_rejected() {
        let scene = SceneSpec::default();
        let cfg = small_cfg();
        assert!(simulate_lidar(&scene, &cfg, 0).is_err());
        assert!(simulate_lidar(&scene, &cfg, cfg.grid_rows() + 1).is_err());
        // a non-dividing subsample floors the grid instead of erroring
        let cloud = simulate_lidar(&scene, &cfg, 7).unwrap();
        let expect = (cfg.grid_cols() / 7) * (cfg.grid_rows() / 7);
        assert!(cloud.points.len() <= expect);
        assert!(!cloud.points.is_empty());
    }

    #[test]
    fn scene_text_roundtrip() {
        let params = SceneParams::default();
        let scene = generate_scene(99, &params).unwrap();
        let text = scene.to_text();
        let back = SceneSpec::from_text(&text, Path::new("mem")).unwrap();
        assert_eq!(scene, back);
    }

    #[test]
    fn meta_text_roundtrip() {
        let meta = SceneMeta {
            boxes: vec![CarBox {
                car_index: 2,
                u0: 1,
                v0: 2,
                u1: 10,
                v1: 8,
                is_black: true,
                body_color: [0.03, 0.03, 0.03],
            }],
        };
        let back = SceneMeta::from_text(&meta.to_text(), Path::new("mem")).unwrap();
        assert_eq!(meta, back);
    }

    #[test]
    fn simulate_is_deterministic() {
        let params = SceneParams::default();
        let scene = generate_scene(7, &params).unwrap();
        let a = simulate_lidar(&scene, &small_cfg(), 5).unwrap();
        let b = simulate_lidar(&scene, &small_cfg(), 5).unwrap();
        assert_eq!(a, b);
    }
}
