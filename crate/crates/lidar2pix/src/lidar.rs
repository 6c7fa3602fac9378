//! Core geometric types: points, clouds, the sensor's angular/range envelope,
//! and the coordinate conversions shared by the simulator and projector.
//!
//! Convention: x forward, y left, z up. Azimuth 0 is straight ahead and
//! positive to the left; elevation 0 is horizontal and positive up. Angles
//! are stored in degrees.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const POINTCLOUD_MAGIC: &[u8; 4] = b"L2PC";
pub const POINTCLOUD_VERSION: u16 = 1;

/// A single LiDAR return, sensor-centered, with reflectance in [0,1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub reflectance: f64,
}

impl LidarPoint {
    pub fn new(x: f64, y: f64, z: f64, reflectance: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(Error::invalid("LidarPoint", "non-finite coordinate"));
        }
        if !(0.0..=1.0).contains(&reflectance) {
            return Err(Error::invalid(
                "LidarPoint",
                format!("reflectance {reflectance} outside [0,1]"),
            ));
        }
        let p = LidarPoint { x, y, z, reflectance };
        if p.range() <= 0.0 || !p.range().is_finite() {
            return Err(Error::DegeneratePoint);
        }
        Ok(p)
    }

    pub fn range(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

/// Front-view angular parameterization of a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalCoord {
    /// Degrees, 0 straight ahead, positive left, in (-180, 180].
    pub azimuth: f64,
    /// Degrees, 0 horizontal, positive up, in (-90, 90).
    pub elevation: f64,
    /// Meters, > 0.
    pub range: f64,
}

/// Angular grid, field of view, and range limits of the sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorConfig {
    pub h_fov: f64,
    pub v_fov: f64,
    pub az_res: f64,
    pub el_res: f64,
    pub min_range: f64,
    pub max_range: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            h_fov: 115.0,
            v_fov: 25.0,
            az_res: 0.1,
            el_res: 0.1,
            min_range: 0.1,
            max_range: 250.0,
        }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_range > 0.0 && self.min_range < self.max_range) {
            return Err(Error::invalid(
                "SensorConfig",
                "require 0 < min_range < max_range",
            ));
        }
        for (fov, res, axis) in [
            (self.h_fov, self.az_res, "horizontal"),
            (self.v_fov, self.el_res, "vertical"),
        ] {
            if fov <= 0.0 || res <= 0.0 {
                return Err(Error::invalid("SensorConfig", "fov and resolution must be > 0"));
            }
            let cells = fov / res;
            if (cells - cells.round()).abs() > 1e-6 || cells.round() < 1.0 {
                return Err(Error::invalid(
                    "SensorConfig",
                    format!("{axis} fov/resolution {cells} is not a positive integer"),
                ));
            }
        }
        Ok(())
    }

    /// Number of azimuth steps across the horizontal FOV (columns).
    pub fn grid_cols(&self) -> usize {
        (self.h_fov / self.az_res).round() as usize
    }

    /// Number of elevation steps across the vertical FOV (rows).
    pub fn grid_rows(&self) -> usize {
        (self.v_fov / self.el_res).round() as usize
    }
}

/// One frame of LiDAR returns.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<LidarPoint>,
    pub frame_id: u64,
}

pub fn cartesian_to_spherical(p: &LidarPoint) -> Result<SphericalCoord> {
    let range = p.range();
    if range <= 0.0 || !range.is_finite() {
        return Err(Error::DegeneratePoint);
    }
    Ok(SphericalCoord {
        azimuth: p.y.atan2(p.x).to_degrees(),
        elevation: (p.z / range).asin().to_degrees(),
        range,
    })
}

pub fn spherical_to_cartesian(s: &SphericalCoord, reflectance: f64) -> Result<LidarPoint> {
    if s.range <= 0.0 || !s.range.is_finite() {
        return Err(Error::DegeneratePoint);
    }
    let az = s.azimuth.to_radians();
    let el = s.elevation.to_radians();
    LidarPoint::new(
        s.range * el.cos() * az.cos(),
        s.range * el.cos() * az.sin(),
        s.range * el.sin(),
        reflectance,
    )
}

/// FOV membership: strict at the angular edges so a point maps to at most
/// one grid cell; range bounds inclusive.
pub fn in_fov(s: &SphericalCoord, cfg: &SensorConfig) -> bool {
    s.azimuth.abs() < cfg.h_fov / 2.0
        && s.elevation.abs() < cfg.v_fov / 2.0
        && s.range >= cfg.min_range
        && s.range <= cfg.max_range
}

impl PointCloud {
    pub fn write_binary<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(POINTCLOUD_MAGIC)?;
        w.write_all(&POINTCLOUD_VERSION.to_le_bytes())?;
        w.write_all(&(self.points.len() as u64).to_le_bytes())?;
        for p in &self.points {
            for v in [p.x, p.y, p.z, p.reflectance] {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(
            std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
        );
        self.write_binary(&mut f).map_err(|e| Error::io(path, e))
    }

    pub fn read_binary<R: Read>(r: &mut R, path: &Path) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::parse(path, "truncated header"))?;
        if &magic != POINTCLOUD_MAGIC {
            return Err(Error::parse(path, "bad magic, expected L2PC"));
        }
        let mut buf2 = [0u8; 2];
        r.read_exact(&mut buf2)
            .map_err(|_| Error::parse(path, "truncated version"))?;
        let version = u16::from_le_bytes(buf2);
        if version != POINTCLOUD_VERSION {
            return Err(Error::parse(path, format!("unsupported version {version}")));
        }
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf8)
            .map_err(|_| Error::parse(path, "truncated point count"))?;
        let count = u64::from_le_bytes(buf8) as usize;
        let mut points = Vec::with_capacity(count);
        let mut rec = [0u8; 16];
        for i in 0..count {
            r.read_exact(&mut rec)
                .map_err(|_| Error::parse(path, format!("truncated at point {i}")))?;
            let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap()) as f64;
            points.push(
                LidarPoint::new(f(0), f(1), f(2), f(3))
                    .map_err(|e| Error::parse(path, format!("point {i}: {e}")))?,
            );
        }
        Ok(PointCloud { points, frame_id: 0 })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(
            std::fs::File::open(path).map_err(|e| Error::io(path, e))?,
        );
        Self::read_binary(&mut f, path)
    }

    /// Plain-text reader for hand-made fixtures: `x,y,z,reflectance` per line.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut points = Vec::new();
        for (lineno, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(path, format!("line {}: {e}", lineno + 1)))?;
            if vals.len() != 4 {
                return Err(Error::parse(
                    path,
                    format!("line {}: expected 4 fields, got {}", lineno + 1, vals.len()),
                ));
            }
            points.push(
                LidarPoint::new(vals[0], vals[1], vals[2], vals[3])
                    .map_err(|e| Error::parse(path, format!("line {}: {e}", lineno + 1)))?,
            );
        }
        Ok(PointCloud { points, frame_id: 0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn forward_axis() {
        let p = LidarPoint::new(10.0, 0.0, 0.0, 0.5).unwrap();
        let s = cartesian_to_spherical(&p).unwrap();
        assert_eq!(s.azimuth, 0.0);
        assert_eq!(s.elevation, 0.0);
        assert_eq!(s.range, 10.0);
    }

    #[test]
    fn left_axis() {
        let p = LidarPoint::new(0.0, 10.0, 0.0, 0.5).unwrap();
        let s = cartesian_to_spherical(&p).unwrap();
        assert!((s.azimuth - 90.0).abs() < 1e-12);
        assert_eq!(s.range, 10.0);
    }

    #[test]
    fn scalar_trig_oracle() {
        // az = atan2(4, 3) for the 3-4-5 triangle
        let p = LidarPoint::new(3.0, 4.0, 0.0, 0.5).unwrap();
        let s = cartesian_to_spherical(&p).unwrap();
        assert!((s.azimuth - 4f64.atan2(3.0).to_degrees()).abs() < 1e-12);
        assert!((s.azimuth - 53.1301).abs() < 1e-4);
        assert!((s.range - 5.0).abs() < 1e-12);
    }

    #[test]
    fn spherical_to_cartesian_axes() {
        let p = spherical_to_cartesian(
            &SphericalCoord { azimuth: 0.0, elevation: 0.0, range: 7.0 },
            0.5,
        )
        .unwrap();
        assert!((p.x - 7.0).abs() < 1e-12 && p.y.abs() < 1e-12 && p.z.abs() < 1e-12);

        let p = spherical_to_cartesian(
            &SphericalCoord { azimuth: 180.0, elevation: 0.0, range: 1.0 },
            0.5,
        )
        .unwrap();
        assert!((p.x + 1.0).abs() < 1e-12 && p.y.abs() < 1e-12);
    }

    #[test]
    fn degenerate_point_rejected() {
        assert!(LidarPoint::new(0.0, 0.0, 0.0, 0.5).is_err());
        assert!(spherical_to_cartesian(
            &SphericalCoord { azimuth: 0.0, elevation: 0.0, range: 0.0 },
            0.5
        )
        .is_err());
    }

    #[test]
    fn fov_examples() {
        let cfg = SensorConfig::default();
        let s = |az, el, range| SphericalCoord { azimuth: az, elevation: el, range };
        assert!(in_fov(&s(0.0, 0.0, 50.0), &cfg));
        assert!(!in_fov(&s(57.6, 0.0, 50.0), &cfg));
        assert!(!in_fov(&s(0.0, 0.0, 260.0), &cfg));
    }

    #[test]
    fn fov_monotone_in_fov_size() {
        let mut rng_state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (rng_state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..1000 {
            let s = SphericalCoord {
                azimuth: (next() - 0.5) * 180.0,
                elevation: (next() - 0.5) * 60.0,
                range: next() * 300.0 + 0.01,
            };
            let big = SensorConfig::default();
            let small = SensorConfig { h_fov: 60.0, v_fov: 12.0, ..big };
            if in_fov(&s, &small) {
                assert!(in_fov(&s, &big));
            }
        }
    }

    #[test]
    fn default_grid_dimensions() {
        let cfg = SensorConfig::default();
        assert_eq!(cfg.grid_cols(), 1150);
        assert_eq!(cfg.grid_rows(), 250);
        assert!(cfg.grid_cols() * cfg.grid_rows() >= 200_000);
    }

    #[test]
    fn cloud_binary_roundtrip() {
        let cloud = PointCloud {
            points: vec![
                LidarPoint::new(1.0, 2.0, 3.0, 0.25).unwrap(),
                LidarPoint::new(-4.5, 0.5, 1.0, 1.0).unwrap(),
            ],
            frame_id: 0,
        };
        let mut buf = Vec::new();
        cloud.write_binary(&mut buf).unwrap();
        let back = PointCloud::read_binary(&mut buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back.points.len(), 2);
        for (a, b) in cloud.points.iter().zip(&back.points) {
            assert!((a.x - b.x).abs() < 1e-6);
            assert!((a.reflectance - b.reflectance).abs() < 1e-6);
        }
    }

    #[test]
    fn truncated_cloud_is_parse_error() {
        let cloud = PointCloud {
            points: vec![LidarPoint::new(1.0, 2.0, 3.0, 0.25).unwrap()],
            frame_id: 0,
        };
        let mut buf = Vec::new();
        cloud.write_binary(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        let err = PointCloud::read_binary(&mut buf.as_slice(), Path::new("mem"));
        assert!(matches!(err, Err(Error::Parse { .. })));
    }

    #[test]
    fn csv_reader() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixture.csv");
        std::fs::write(&path, "# comment\n1.0, 2.0, 3.0, 0.5\n-1,0.5,0.2,0\n").unwrap();
        let cloud = PointCloud::load_csv(&path).unwrap();
        assert_eq!(cloud.points.len(), 2);
        assert_eq!(cloud.points[0].reflectance, 0.5);
    }

    proptest! {
        // Round-trip within 1e-9 m over random valid points.
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn roundtrip_identity(
            x in -200.0f64..200.0,
            y in -200.0f64..200.0,
            z in -50.0f64..50.0,
            r in 0.0f64..1.0,
        ) {
            prop_assume!(x * x + y * y + z * z > 1e-6);
            let p = LidarPoint::new(x, y, z, r).unwrap();
            let s = cartesian_to_spherical(&p).unwrap();
            let q = spherical_to_cartesian(&s, r).unwrap();
            prop_assert!((p.x - q.x).abs() < 1e-9);
            prop_assert!((p.y - q.y).abs() < 1e-9);
            prop_assert!((p.z - q.z).abs() < 1e-9);
        }
    }
}
