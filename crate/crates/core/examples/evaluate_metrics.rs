// Map class-agnostic clusters onto ground-truth classes from the first frame
// and score a short video with mIoU and video consistency.

use vss::metrics::{assign_gt_labels, evaluate, MetricsReport, VideoEval};
use vss::SegmentationMap;

pub fn run_example() -> MetricsReport {
    let gt = SegmentationMap::new(2, 4, vec![0, 0, 1, 1, 0, 0, 1, 1]).unwrap();
    // Cluster 3 covers class 0, clusters 5 and 7 split class 1.
    let clusters = |flip: bool| {
        let last = if flip { 3 } else { 7 };
        SegmentationMap::new(2, 4, vec![3, 3, 5, 5, 3, 3, 7, last]).unwrap()
    };
    let preds: Vec<_> = (0..10).map(|j| clusters(j == 4)).collect();
    let assignment = assign_gt_labels(&preds[0], &gt, 8).unwrap();
    println!("cluster -> class: {:?}", assignment.classes());

    let video = VideoEval {
        video_id: "toy".into(),
        preds: preds.iter().map(|p| assignment.apply(p)).collect(),
        gts: vec![gt; 10],
    };
    let report = evaluate(&[video], 2).unwrap();
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    report
}

#[allow(dead_code)]
fn main() {
    run_example();
}
