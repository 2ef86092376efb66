// Fit the KNN context model on a clustered first frame and propagate the
// clusters to later frames of a moving scene.

use vss::clustering::{kmeans_fit_grid, KMeansParams};
use vss::context::{aggregate_features, ContextModel, UpdateMode};
use vss::synth::{synth_generate, SynthSpec};
use vss::CoarseMask;

pub fn run_example() -> Vec<CoarseMask> {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut spec = SynthSpec::new(5, (20, 20), 3, 2.0, 0.2, 8);
    spec.motion = (1, 0);
    let manifest = synth_generate(&spec, dir.path()).unwrap();

    let blocks = [6, 7, 8];
    let features: Vec<_> = (0..5)
        .map(|j| aggregate_features(&manifest.block_features(j, &blocks).unwrap(), &blocks).unwrap())
        .collect();
    let (_, first) = kmeans_fit_grid(&features[0], &KMeansParams::new(3, 0)).unwrap();
    let model = ContextModel::fit_initial(&features[0], &first, 5, 3, UpdateMode::Replace).unwrap();
    println!("store holds {} samples", model.len());

    let predicted: Vec<CoarseMask> = features.iter().map(|f| model.predict(f).unwrap()).collect();
    for (j, mask) in predicted.iter().enumerate() {
        // The scene moves one row down per frame, so the prediction shifted
        // back by j rows should equal the first frame's clusters.
        let h = mask.height();
        let agree = (0..mask.labels().len())
            .filter(|&i| {
                let (y, x) = (i / mask.width(), i % mask.width());
                mask.get((y + j) % h, x) == first.get(y, x)
            })
            .count();
        println!("frame {j}: {agree}/{} cells follow the motion", mask.labels().len());
    }
    predicted
}

#[allow(dead_code)]
fn main() {
    run_example();
}
