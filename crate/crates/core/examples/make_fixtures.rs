//! Regenerates the bundled fixture images and detections.
//!
//! Usage: `cargo run -p pqi-core --example make_fixtures -- <out-dir>`

use std::collections::BTreeMap;

use pqi_core::detection::{write_detections, DetectionFile, DetectionSet};
use pqi_core::synth::road_scene;

const N: u64 = 20;
const WIDTH: usize = 160;
const HEIGHT: usize = 120;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "fixtures".into());
    let out = std::path::Path::new(&out);
    std::fs::create_dir_all(out.join("images"))?;
    let mut sets = BTreeMap::new();
    for seed in 1..=N {
        let id = format!("scene_{seed:02}");
        let scene = road_scene(seed, WIDTH, HEIGHT);
        scene
            .image
            .save_png(out.join("images").join(format!("{id}.png")))?;
        sets.insert(id.clone(), DetectionSet::new(id, scene.detections));
    }
    let file = DetectionFile {
        sets,
        ..DetectionFile::default()
    };
    let f = std::fs::File::create(out.join("detections.jsonl"))?;
    write_detections(&file, std::io::BufWriter::new(f))?;
    Ok(())
}
