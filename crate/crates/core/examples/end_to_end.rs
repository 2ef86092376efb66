// Generate a synthetic video, segment it with the toy backbone and print
// the metrics against its ground truth.

use vss::pipeline::{run_manifest, PipelineConfig};
use vss::synth::{synth_generate, SynthSpec};

pub fn run_example() -> vss::metrics::MetricsReport {
    let dir = tempfile::tempdir().expect("temp dir");
    let spec = SynthSpec::new(14, (32, 32), 4, 2.0, 0.2, 7);
    synth_generate(&spec, dir.path().join("video")).expect("synthetic video");

    let config = PipelineConfig::default();
    let out = dir.path().join("out");
    let result = run_manifest(dir.path().join("video/manifest.json"), &config, Some(&out)).expect("pipeline run");
    let report = result.report.expect("synthetic videos carry ground truth");
    println!("mIoU {:.4}  mVC8 {:.4}", report.miou, report.mvc8.unwrap_or(f64::NAN));
    println!("outputs: {:?}", std::fs::read_dir(&out).unwrap().count());
    report
}

#[allow(dead_code)]
fn main() {
    run_example();
}
