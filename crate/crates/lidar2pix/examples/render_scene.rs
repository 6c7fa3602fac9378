//! Generate a random scene and render the camera view with its car boxes.
//!
//!   cargo run --example render_scene -- [seed]

use std::path::Path;

use lidar2pix::lidar::SensorConfig;
use lidar2pix::scene::{generate_scene, render_camera, SceneParams};

fn main() -> lidar2pix::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let scene = generate_scene(seed, &SceneParams::default())?;
    println!("seed {seed}: {} cars", scene.cars.len());
    for car in &scene.cars {
        println!(
            "  at ({:+6.1}, {:+6.1}) m, yaw {:5.1} deg, color {:?}",
            car.center.0, car.center.1, car.yaw, car.body_color
        );
    }
    let (img, meta) = render_camera(&scene, &SensorConfig::default(), 256, 256)?;
    for b in &meta.boxes {
        println!(
            "  box for car {}: ({},{})-({},{}){}",
            b.car_index,
            b.u0,
            b.v0,
            b.u1,
            b.v1,
            if b.is_black { " [black]" } else { "" }
        );
    }
    let out = Path::new("scene.png");
    img.save_rgb_png(out)?;
    println!("wrote {}", out.display());
    Ok(())
}
