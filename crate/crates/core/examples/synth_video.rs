// Write a small synthetic video with moving class regions and inspect the
// manifest the rest of the engine consumes.

use vss::synth::{synth_generate, SynthSpec};
use vss::VideoManifest;

pub fn run_example() -> VideoManifest {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut spec = SynthSpec::new(6, (16, 24), 3, 2.0, 0.1, 1);
    spec.motion = (0, 2);
    let manifest = synth_generate(&spec, dir.path()).expect("generate");

    let reloaded = vss::load_manifest(dir.path().join("manifest.json")).expect("manifest validates");
    println!(
        "{}: {} frames, image {:?}, coarse {:?}, blocks {:?}",
        reloaded.video_id, reloaded.frame_count, reloaded.image_size, reloaded.coarse_size, reloaded.block_ids
    );
    let first = reloaded.gt(0).unwrap().unwrap();
    let last = reloaded.gt(5).unwrap().unwrap();
    // Regions move 2 coarse cells (8 pixels) right per frame.
    assert_eq!(first.get(0, 0), last.get(0, 40 % first.width()));
    manifest
}

#[allow(dead_code)]
fn main() {
    run_example();
}
