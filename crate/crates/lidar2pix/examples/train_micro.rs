//! Overfit the model on a single pair at reduced width, printing the loss
//! trajectory. A quick way to watch the adversarial loop converge.
//!
//!   cargo run --release --example train_micro

use lidar2pix::lidar::SensorConfig;
use lidar2pix::pix2pix::{train, TrainConfig, TrainPair};
use lidar2pix::raster::{project_frame, to_model_range, ChannelMode};
use lidar2pix::scene::{generate_scene, render_camera, simulate_lidar, SceneParams};

fn main() -> lidar2pix::Result<()> {
    let cfg = SensorConfig::default();
    let scene = generate_scene(5, &SceneParams::default())?;
    let cloud = simulate_lidar(&scene, &cfg, 4)?;
    let input = project_frame(&cloud, &cfg, ChannelMode::ReflectanceAndDistance, 64, 64)?;
    let (target, _) = render_camera(&scene, &cfg, 64, 64)?;
    let pair = TrainPair {
        input: to_model_range(&input),
        target: to_model_range(&target),
    };

    let mut tc = TrainConfig::exp2(0);
    tc.epochs = 100;
    tc.val_fraction = 0.0;
    let outcome = train(&[pair], &tc, 8)?;
    for s in outcome.history.iter().step_by(10) {
        println!(
            "epoch {:3}  d_loss {:.4}  g_loss {:.4}  l1 {:.4}",
            s.epoch, s.d_loss, s.g_loss, s.g_l1
        );
    }
    println!("best epoch {}, val L1 {:.4}", outcome.best.epoch, outcome.best.val_l1);
    Ok(())
}
