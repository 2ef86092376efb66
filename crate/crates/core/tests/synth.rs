use std::collections::HashMap;

use vss::clustering::{kmeans_fit_grid, KMeansParams};
use vss::context::aggregate_features;
use vss::synth::{synth_generate, SynthSpec};

#[test]
fn ground_truth_translates_with_wraparound() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = SynthSpec::new(5, (6, 9), 3, 2.0, 0.1, 21);
    spec.motion = (1, 0);
    spec.scale = 2;
    let m = synth_generate(&spec, tmp.path()).unwrap();
    let first = m.gt(0).unwrap().unwrap();
    let (h, w) = first.dims();
    for j in 0..5 {
        let gt = m.gt(j).unwrap().unwrap();
        for y in 0..h {
            for x in 0..w {
                // One coarse row is `scale` pixels.
                assert_eq!(gt.get((y + 2 * j) % h, x), first.get(y, x), "frame {j} ({y}, {x})");
            }
        }
    }
}

#[test]
fn noiseless_features_cluster_into_the_ground_truth_partition() {
    let tmp = tempfile::tempdir().unwrap();
    for seed in 0..5 {
        let spec = SynthSpec::new(1, (16, 16), 6, 2.0, 0.0, seed);
        let dir = tmp.path().join(seed.to_string());
        let m = synth_generate(&spec, &dir).unwrap();
        let blocks = [6, 7, 8];
        let features = aggregate_features(&m.block_features(0, &blocks).unwrap(), &blocks).unwrap();
        let (_, mask) = kmeans_fit_grid(&features, &KMeansParams::new(6, seed)).unwrap();
        let truth = spec.base_layout();
        let mut bijection: HashMap<u32, u32> = HashMap::new();
        for (&cluster, &class) in mask.labels().iter().zip(&truth) {
            assert_eq!(*bijection.entry(cluster).or_insert(class), class, "seed {seed}");
        }
        assert_eq!(bijection.len(), 6);
    }
}

#[test]
fn features_are_prototype_plus_noise() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = SynthSpec::new(2, (30, 30), 2, 4.0, 0.5, 3);
    let m = synth_generate(&spec, tmp.path()).unwrap();
    let protos = spec.prototypes();
    let truth = spec.base_layout();
    let mut residuals = Vec::new();
    for block in [6, 7, 8] {
        let f = m.features(1, block).unwrap();
        for (cell, &k) in f.cells().zip(&truth) {
            residuals.extend(cell.iter().zip(&protos[k as usize]).map(|(&v, &p)| (v - p) as f64));
        }
    }
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let var = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 0.02, "{mean}");
    assert!((var.sqrt() - 0.5).abs() < 0.02, "{}", var.sqrt());
}
