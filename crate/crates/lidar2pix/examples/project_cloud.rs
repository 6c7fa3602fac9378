//! Simulate a LiDAR frame over a random scene and project it into the
//! two-channel front-view raster, saving each channel as a PNG.
//!
//!   cargo run --example project_cloud -- [seed]

use std::path::Path;

use lidar2pix::lidar::SensorConfig;
use lidar2pix::raster::{project_frame, ChannelMode};
use lidar2pix::scene::{generate_scene, simulate_lidar, SceneParams};

fn main() -> lidar2pix::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let cfg = SensorConfig::default();
    let scene = generate_scene(seed, &SceneParams::default())?;
    let cloud = simulate_lidar(&scene, &cfg, 2)?;
    println!("seed {seed}: {} returns", cloud.points.len());

    let raster = project_frame(&cloud, &cfg, ChannelMode::ReflectanceAndDistance, 575, 125)?;
    raster.save_channel_png(0, Path::new("reflectance.png"))?;
    raster.save_channel_png(1, Path::new("distance.png"))?;
    raster.save(Path::new("frame.l2ri"))?;
    println!("wrote reflectance.png, distance.png, frame.l2ri");
    Ok(())
}
