// Clean up flickering coarse masks with feature correspondence and a
// temporal majority vote.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vss::refine::{refine_batch, CbrMode};
use vss::{CoarseMask, FeatureGrid};

pub fn run_example() -> (usize, usize) {
    let (h, w, c, b) = (12, 12, 6, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let truth: Vec<u32> = (0..h * w).map(|i| ((i % w) * 3 / w) as u32).collect();
    // Static scene: the same distinctive feature per cell in every frame.
    let features: Vec<FeatureGrid> = (0..b)
        .map(|_| {
            let mut r = ChaCha8Rng::seed_from_u64(99);
            FeatureGrid::new(h, w, c, (0..h * w * c).map(|_| r.random_range(0.1..1.0)).collect()).unwrap()
        })
        .collect();
    let masks: Vec<CoarseMask> = (0..b)
        .map(|_| {
            let noisy = truth
                .iter()
                .map(|&t| if rng.random_bool(0.15) { rng.random_range(0..3) } else { t })
                .collect();
            CoarseMask::new(h, w, 3, noisy).unwrap()
        })
        .collect();

    let wrong = |m: &CoarseMask| m.labels().iter().zip(&truth).filter(|(a, b)| a != b).count();
    let before: usize = masks.iter().map(wrong).sum();
    let refined = refine_batch(&features, &masks, 1.0, CbrMode::BatchVoted).unwrap();
    let after: usize = refined.iter().map(wrong).sum();
    println!("wrong cells across the batch: {before} before, {after} after");
    (before, after)
}

#[allow(dead_code)]
fn main() {
    run_example();
}
