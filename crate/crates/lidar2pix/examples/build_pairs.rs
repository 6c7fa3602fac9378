//! Build a small paired dataset and split it into train/test by scene seed.
//!
//!   cargo run --example build_pairs -- [dir]

use std::path::PathBuf;

use lidar2pix::dataset::{build_dataset, split, Split};
use lidar2pix::lidar::SensorConfig;
use lidar2pix::raster::ChannelMode;
use lidar2pix::scene::SceneParams;

fn main() -> lidar2pix::Result<()> {
    let dir = std::env::args().nth(1).map_or_else(|| PathBuf::from("pairs_demo"), PathBuf::from);
    let manifest = build_dataset(
        10,
        0,
        &SceneParams::default(),
        &SensorConfig::default(),
        ChannelMode::ReflectanceAndDistance,
        64,
        64,
        4,
        &dir,
    )?;
    let manifest = split(&manifest, 0.2, 0)?;
    let path = manifest.save()?;
    println!(
        "{} train / {} test pairs, manifest {}",
        manifest.entries_in(Split::Train).len(),
        manifest.entries_in(Split::Test).len(),
        path.display()
    );
    Ok(())
}
