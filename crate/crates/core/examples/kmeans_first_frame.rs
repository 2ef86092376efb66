// Cluster the block-averaged features of a first frame with K-Means.

use vss::clustering::{kmeans_fit_grid, KMeansParams};
use vss::context::aggregate_features;
use vss::synth::{synth_generate, SynthSpec};
use vss::CoarseMask;

pub fn run_example() -> (CoarseMask, Vec<f64>) {
    let dir = tempfile::tempdir().expect("temp dir");
    let manifest = synth_generate(&SynthSpec::new(1, (24, 24), 4, 2.0, 0.2, 3), dir.path()).unwrap();

    let blocks = [6, 7, 8];
    let features = aggregate_features(&manifest.block_features(0, &blocks).unwrap(), &blocks).unwrap();
    let (fit, mask) = kmeans_fit_grid(&features, &KMeansParams::new(4, 0)).unwrap();
    println!("{} iterations, inertia {:?}", fit.iterations, fit.inertia_history);
    for l in 0..4 {
        println!("cluster {l}: {} cells", mask.binary(l).count());
    }
    (mask, fit.inertia_history)
}

#[allow(dead_code)]
fn main() {
    run_example();
}
