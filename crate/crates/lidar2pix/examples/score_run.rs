//! Score the car-presence metric over rendered scenes, using the ground
//! truth as its own prediction (the detector's upper bound).
//!
//!   cargo run --example score_run

use lidar2pix::eval::{detect_cars, score, DetectorConfig, PairCounts};
use lidar2pix::lidar::SensorConfig;
use lidar2pix::scene::{generate_scene, render_camera, SceneParams};

fn main() -> lidar2pix::Result<()> {
    let det = DetectorConfig::default();
    let cfg = SensorConfig::default();
    let mut pairs = Vec::new();
    for seed in 0..20 {
        let scene = generate_scene(seed, &SceneParams::default())?;
        let (img, meta) = render_camera(&scene, &cfg, 64, 64)?;
        let n_p = detect_cars(&img, &meta, &det)?;
        println!("seed {seed:2}: {} of {} cars found", n_p, meta.n_g());
        pairs.push(PairCounts { n_p, n_g: meta.n_g() });
    }
    let report = score(&pairs)?;
    println!("{}", report.summary());
    Ok(())
}
