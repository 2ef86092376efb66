// Lift coarse cluster masks to full resolution: modulate a toy diffusion
// rollout inside each mask, take the difference between the positively and
// negatively modulated images, filter it and pick the strongest cluster per
// pixel.

use vss::modulate::{
    difference_map, filter_difference, label_from_differences, modulated_rollout, FrameContext, LatentState, Schedule,
    ToyBackbone,
};
use vss::grid::upsample_fullres;
use vss::{CoarseMask, SegmentationMap};

pub fn run_example() -> SegmentationMap {
    let (h, w, scale) = (4, 4, 8);
    let latent = LatentState::new(h, w, 4, (0..h * w * 4).map(|i| (i % 7) as f32 / 7.0).collect(), 0).unwrap();
    let frame = FrameContext {
        index: 0,
        latent,
        image_size: (h * scale, w * scale),
    };
    let coarse = CoarseMask::new(h, w, 2, vec![0, 0, 1, 1, 0, 0, 1, 1, 0, 1, 1, 1, 0, 0, 0, 1]).unwrap();
    let schedule = Schedule::new(20, 25, 25).unwrap();
    let backbone = ToyBackbone::default();

    let maps: Vec<_> = coarse
        .present_labels()
        .into_iter()
        .map(|l| {
            let mask = coarse.binary(l);
            let (plus, minus) = modulated_rollout(&backbone, &frame, &mask, 50.0, 7, &schedule).unwrap();
            let d = difference_map(&plus, &minus, l).unwrap();
            println!("cluster {l}: peak activation {}", d.values().iter().cloned().fold(0.0, f32::max));
            let full = upsample_fullres(&mask, h * scale, w * scale).unwrap();
            filter_difference(&d, &full, 0.7).unwrap()
        })
        .collect();
    let segmentation = label_from_differences(&maps).unwrap();
    assert_eq!(segmentation, upsample_fullres(&coarse.to_segmentation(), h * scale, w * scale).unwrap());
    println!("full-resolution map {:?}", segmentation.dims());
    segmentation
}

#[allow(dead_code)]
fn main() {
    run_example();
}
