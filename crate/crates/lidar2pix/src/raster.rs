//! Front-view rasterization: turn a point cloud into the 1- or 2-channel
//! conditioning image, plus the raster file format and model-range scaling.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::lidar::{cartesian_to_spherical, in_fov, PointCloud, SensorConfig, SphericalCoord};

pub const RASTER_MAGIC: &[u8; 4] = b"L2RI";
pub const RASTER_VERSION: u16 = 1;

/// Which channels the conditioning raster carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelMode {
    /// Experiment 1: a single reflectance channel.
    ReflectanceOnly,
    /// Experiment 2: reflectance plus normalized distance.
    ReflectanceAndDistance,
}

impl ChannelMode {
    pub fn channels(&self) -> usize {
        match self {
            ChannelMode::ReflectanceOnly => 1,
            ChannelMode::ReflectanceAndDistance => 2,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "refl" | "reflectance" => Ok(ChannelMode::ReflectanceOnly),
            "refl-dist" | "reflectance-distance" => Ok(ChannelMode::ReflectanceAndDistance),
            other => Err(Error::invalid(
                "ChannelMode",
                format!("unknown mode '{other}', expected refl or refl-dist"),
            )),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ChannelMode::ReflectanceOnly => "refl",
            ChannelMode::ReflectanceAndDistance => "refl-dist",
        }
    }
}

/// Channel-planar image with values in [0,1]; shape (channels, height, width).
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    pub data: Array3<f32>,
}

impl RasterImage {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        RasterImage {
            data: Array3::zeros((channels, height, width)),
        }
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }
    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }
    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.data.dim();
        if !(c == 1 || c == 2 || c == 3) {
            return Err(Error::invalid("RasterImage", format!("{c} channels")));
        }
        if h < 16 || w < 16 {
            return Err(Error::invalid(
                "RasterImage",
                format!("dimensions {w}x{h} below minimum 16"),
            ));
        }
        if self.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("RasterImage", "value outside [0,1]"));
        }
        Ok(())
    }

    pub fn write_binary<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let (c, h, wd) = self.data.dim();
        w.write_all(RASTER_MAGIC)?;
        w.write_all(&RASTER_VERSION.to_le_bytes())?;
        w.write_all(&(wd as u32).to_le_bytes())?;
        w.write_all(&(h as u32).to_le_bytes())?;
        w.write_all(&(c as u32).to_le_bytes())?;
        for v in self.data.iter() {
            w.write_all(&v.to_le_bytes())?;
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
        if &magic != RASTER_MAGIC {
            return Err(Error::parse(path, "bad magic, expected L2RI"));
        }
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2)
            .map_err(|_| Error::parse(path, "truncated version"))?;
        if u16::from_le_bytes(b2) != RASTER_VERSION {
            return Err(Error::parse(path, "unsupported raster version"));
        }
        let mut b4 = [0u8; 4];
        let mut dim = |name: &str| -> Result<usize> {
            r.read_exact(&mut b4)
                .map_err(|_| Error::parse(path, format!("truncated {name}")))?;
            Ok(u32::from_le_bytes(b4) as usize)
        };
        let w = dim("width")?;
        let h = dim("height")?;
        let c = dim("channels")?;
        if c == 0 || c > 3 || w == 0 || h == 0 || w * h * c > 1 << 28 {
            return Err(Error::parse(path, format!("implausible dims {w}x{h}x{c}")));
        }
        let mut vals = vec![0f32; c * h * w];
        let mut rec = [0u8; 4];
        for (i, slot) in vals.iter_mut().enumerate() {
            r.read_exact(&mut rec)
                .map_err(|_| Error::parse(path, format!("truncated at value {i}")))?;
            *slot = f32::from_le_bytes(rec);
        }
        let data = Array3::from_shape_vec((c, h, w), vals)
            .map_err(|e| Error::parse(path, e.to_string()))?;
        Ok(RasterImage { data })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(
            std::fs::File::open(path).map_err(|e| Error::io(path, e))?,
        );
        Self::read_binary(&mut f, path)
    }

    /// 8-bit grayscale PNG of one channel, for human inspection.
    pub fn save_channel_png(&self, channel: usize, path: &Path) -> Result<()> {
        let (c, h, w) = self.data.dim();
        if channel >= c {
            return Err(Error::invalid("channel", format!("{channel} >= {c}")));
        }
        let mut img = image::GrayImage::new(w as u32, h as u32);
        for (y, row) in self.data.index_axis(ndarray::Axis(0), channel).outer_iter().enumerate() {
            for (x, v) in row.iter().enumerate() {
                img.put_pixel(x as u32, y as u32, image::Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8]));
            }
        }
        img.save(path).map_err(|e| Error::parse(path, e.to_string()))
    }

    /// 8-bit RGB PNG of a 3-channel raster.
    pub fn save_rgb_png(&self, path: &Path) -> Result<()> {
        let (c, h, w) = self.data.dim();
        if c != 3 {
            return Err(Error::invalid("RasterImage", format!("expected 3 channels, got {c}")));
        }
        let mut img = image::RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let px = [0, 1, 2].map(|k| {
                    (self.data[[k, y, x]].clamp(0.0, 1.0) * 255.0).round() as u8
                });
                img.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        img.save(path).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn load_rgb_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::parse(path, e.to_string()))?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = Array3::zeros((3, h, w));
        for (x, y, px) in img.enumerate_pixels() {
            for k in 0..3 {
                data[[k, y as usize, x as usize]] = px.0[k] as f32 / 255.0;
            }
        }
        Ok(RasterImage { data })
    }
}

/// Map a spherical coordinate to a pixel of a W x H raster covering the
/// sensor FOV. Returns None when the point is out of view.
pub fn pixel_of(
    s: &SphericalCoord,
    cfg: &SensorConfig,
    width: usize,
    height: usize,
) -> Option<(usize, usize)> {
    if !in_fov(s, cfg) {
        return None;
    }
    let u = ((cfg.h_fov / 2.0 - s.azimuth) / cfg.h_fov * width as f64).floor() as usize;
    let v = ((cfg.v_fov / 2.0 - s.elevation) / cfg.v_fov * height as f64).floor() as usize;
    // Strict FOV bounds keep u,v inside, but guard against float edge cases.
    Some((u.min(width - 1), v.min(height - 1)))
}

/// Linear range normalization onto [0,1], clamped.
pub fn normalize_distance(range: f64, cfg: &SensorConfig) -> f64 {
    ((range - cfg.min_range) / (cfg.max_range - cfg.min_range)).clamp(0.0, 1.0)
}

/// Scatter a point cloud into the front-view raster. Nearest range wins on
/// pixel collision; exact-range ties go to the lower point index. Channel 0
/// is reflectance; channel 1, when present, normalized distance. Pixels with
/// no return stay 0.
pub fn project_frame(
    cloud: &PointCloud,
    cfg: &SensorConfig,
    mode: ChannelMode,
    width: usize,
    height: usize,
) -> Result<RasterImage> {
    cfg.validate()?;
    if width < 16 || height < 16 {
        return Err(Error::invalid("raster size", format!("{width}x{height} below minimum 16")));
    }
    let mut img = RasterImage::zeros(mode.channels(), height, width);
    let mut depth = vec![f64::INFINITY; width * height];
    for p in &cloud.points {
        let s = cartesian_to_spherical(p)?;
        let Some((u, v)) = pixel_of(&s, cfg, width, height) else {
            continue;
        };
        let idx = v * width + u;
        if s.range < depth[idx] {
            depth[idx] = s.range;
            img.data[[0, v, u]] = p.reflectance as f32;
            if mode == ChannelMode::ReflectanceAndDistance {
                img.data[[1, v, u]] = normalize_distance(s.range, cfg) as f32;
            }
        }
    }
    Ok(img)
}

/// Affine map [0,1] -> [-1,1] for network input.
pub fn to_model_range(img: &RasterImage) -> Array3<f32> {
    img.data.mapv(|v| 2.0 * v - 1.0)
}

/// Inverse of `to_model_range`, clamped back onto [0,1].
pub fn from_model_range(t: &Array3<f32>) -> RasterImage {
    RasterImage {
        data: t.mapv(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lidar::LidarPoint;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn sc(az: f64, el: f64, range: f64) -> SphericalCoord {
        SphericalCoord { azimuth: az, elevation: el, range }
    }

    #[test]
    fn center_pixel() {
        let cfg = SensorConfig::default();
        assert_eq!(pixel_of(&sc(0.0, 0.0, 50.0), &cfg, 1150, 250), Some((575, 125)));
    }

    #[test]
    fn leftmost_column_at_fov_edge() {
        let cfg = SensorConfig::default();
        let az = cfg.h_fov / 2.0 - 1e-9;
        let (u, _) = pixel_of(&sc(az, 0.0, 50.0), &cfg, 1150, 250).unwrap();
        assert_eq!(u, 0);
    }

    #[test]
    fn out_of_view_is_none() {
        let cfg = SensorConfig::default();
        assert_eq!(pixel_of(&sc(60.0, 0.0, 50.0), &cfg, 1150, 250), None);
        assert_eq!(pixel_of(&sc(0.0, 0.0, 300.0), &cfg, 1150, 250), None);
    }

    /// Independent scalar reimplementation of the pixel mapping.
    pub(crate) fn pixel_oracle(
        az: f64,
        el: f64,
        range: f64,
        cfg: &SensorConfig,
        w: usize,
        h: usize,
    ) -> Option<(usize, usize)> {
        if az.abs() >= cfg.h_fov / 2.0
            || el.abs() >= cfg.v_fov / 2.0
            || range < cfg.min_range
            || range > cfg.max_range
        {
            return None;
        }
        let fx = (cfg.h_fov / 2.0 - az) / cfg.h_fov;
        let fy = (cfg.v_fov / 2.0 - el) / cfg.v_fov;
        let u = (fx * w as f64).floor() as usize;
        let v = (fy * h as f64).floor() as usize;
        Some((u.min(w - 1), v.min(h - 1)))
    }

    #[test]
    fn pixel_of_matches_scalar_oracle() {
        let cfg = SensorConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let az = rng.gen_range(-90.0..90.0);
            let el = rng.gen_range(-20.0..20.0);
            let range = rng.gen_range(0.01..300.0);
            assert_eq!(
                pixel_of(&sc(az, el, range), &cfg, 256, 256),
                pixel_oracle(az, el, range, &cfg, 256, 256),
            );
        }
    }

    #[test]
    fn distance_normalization_examples() {
        let cfg = SensorConfig::default();
        assert_eq!(normalize_distance(250.0, &cfg), 1.0);
        assert_eq!(normalize_distance(0.1, &cfg), 0.0);
        assert!((normalize_distance(125.05, &cfg) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_cloud_all_zero() {
        let cfg = SensorConfig::default();
        let cloud = PointCloud { points: vec![], frame_id: 0 };
        let img =
            project_frame(&cloud, &cfg, ChannelMode::ReflectanceAndDistance, 64, 64).unwrap();
        assert!(img.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nearest_point_wins() {
        let cfg = SensorConfig::default();
        let cloud = PointCloud {
            points: vec![
                LidarPoint::new(50.0, 0.0, 0.0, 0.9).unwrap(),
                LidarPoint::new(10.0, 0.0, 0.0, 0.3).unwrap(),
            ],
            frame_id: 0,
        };
        let img =
            project_frame(&cloud, &cfg, ChannelMode::ReflectanceAndDistance, 64, 64).unwrap();
        let (u, v) = pixel_of(&sc(0.0, 0.0, 10.0), &cfg, 64, 64).unwrap();
        assert_eq!(img.data[[0, v, u]], 0.3);
        assert!((img.data[[1, v, u]] as f64 - normalize_distance(10.0, &cfg)).abs() < 1e-6);
    }

    /// Naive per-point reference loop with explicit tie-breaking.
    pub(crate) fn project_oracle(
        cloud: &PointCloud,
        cfg: &SensorConfig,
        mode: ChannelMode,
        w: usize,
        h: usize,
    ) -> RasterImage {
        let mut img = RasterImage::zeros(mode.channels(), h, w);
        for (vv, uu) in (0..h).flat_map(|v| (0..w).map(move |u| (v, u))) {
            let mut best: Option<(f64, usize)> = None;
            for (i, p) in cloud.points.iter().enumerate() {
                let s = cartesian_to_spherical(p).unwrap();
                if pixel_oracle(s.azimuth, s.elevation, s.range, cfg, w, h) == Some((uu, vv)) {
                    let better = match best {
                        None => true,
                        Some((r, _)) => s.range < r,
                    };
                    if better {
                        best = Some((s.range, i));
                    }
                }
            }
            if let Some((range, i)) = best {
                img.data[[0, vv, uu]] = cloud.points[i].reflectance as f32;
                if mode == ChannelMode::ReflectanceAndDistance {
                    img.data[[1, vv, uu]] = normalize_distance(range, cfg) as f32;
                }
            }
        }
        img
    }

    pub(crate) fn random_cloud(seed: u64, n: usize) -> PointCloud {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let points = (0..n)
            .map(|_| {
                LidarPoint::new(
                    rng.gen_range(1.0..100.0),
                    rng.gen_range(-60.0..60.0),
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(0.0..1.0),
                )
                .unwrap()
            })
            .collect();
        PointCloud { points, frame_id: 0 }
    }

    #[test]
    fn project_matches_naive_oracle() {
        let cfg = SensorConfig::default();
        let cloud = random_cloud(3, 1000);
        let fast =
            project_frame(&cloud, &cfg, ChannelMode::ReflectanceAndDistance, 64, 64).unwrap();
        let slow = project_oracle(&cloud, &cfg, ChannelMode::ReflectanceAndDistance, 64, 64);
        assert_eq!(fast.data, slow.data);
    }

    #[test]
    fn permutation_invariant() {
        let cfg = SensorConfig::default();
        let cloud = random_cloud(7, 500);
        let mut reversed = cloud.clone();
        reversed.points.reverse();
        let a = project_frame(&cloud, &cfg, ChannelMode::ReflectanceOnly, 64, 64).unwrap();
        let b = project_frame(&reversed, &cfg, ChannelMode::ReflectanceOnly, 64, 64).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn model_range_examples() {
        let img = RasterImage::zeros(1, 16, 16);
        let t = to_model_range(&img);
        assert!(t.iter().all(|&v| v == -1.0));
        let mut img = RasterImage::zeros(1, 16, 16);
        img.data.fill(0.5);
        assert!(to_model_range(&img).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn raster_roundtrip_binary() {
        let img = project_frame(
            &random_cloud(9, 200),
            &SensorConfig::default(),
            ChannelMode::ReflectanceAndDistance,
            32,
            24,
        )
        .unwrap();
        let mut buf = Vec::new();
        img.write_binary(&mut buf).unwrap();
        let back = RasterImage::read_binary(&mut buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(img.data, back.data);
    }

    proptest! {
        #[test]
        fn model_range_roundtrip(vals in proptest::collection::vec(0.0f32..=1.0, 16 * 16)) {
            let data = Array3::from_shape_vec((1, 16, 16), vals).unwrap();
            let img = RasterImage { data };
            let back = from_model_range(&to_model_range(&img));
            for (a, b) in img.data.iter().zip(back.data.iter()) {
                prop_assert!((a - b).abs() < 1e-7);
            }
        }
    }
}
