//! Every runnable example doubles as a test.

macro_rules! example {
    ($name:ident) => {
        #[allow(dead_code)]
        mod $name {
            include!(concat!("../examples/", stringify!($name), ".rs"));
        }
    };
}

example!(synth_video);
example!(npy_roundtrip);
example!(kmeans_first_frame);
example!(context_propagation);
example!(correspondence_refine);
example!(masked_modulation);
example!(evaluate_metrics);
example!(end_to_end);
example!(external_backbone);

#[test]
fn synth_video_manifest() {
    let m = synth_video::run_example();
    assert_eq!(m.frame_count, 6);
    assert_eq!(m.image_size, (64, 96));
}

#[test]
fn npy_roundtrip_preserves_values() {
    let a = npy_roundtrip::run_example();
    assert_eq!(a.shape(), &[2, 3, 4]);
}

#[test]
fn kmeans_first_frame_finds_four_clusters() {
    let (mask, inertia) = kmeans_first_frame::run_example();
    assert_eq!(mask.present_labels().len(), 4);
    assert!(inertia.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn context_propagation_tracks_motion() {
    let masks = context_propagation::run_example();
    let first = &masks[0];
    let (h, w) = first.dims();
    for (j, m) in masks.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                assert_eq!(m.get((y + j) % h, x), first.get(y, x));
            }
        }
    }
}

#[test]
fn correspondence_refine_reduces_errors() {
    let (before, after) = correspondence_refine::run_example();
    assert!(after < before / 4, "{before} -> {after}");
}

#[test]
fn masked_modulation_recovers_coarse_layout() {
    let map = masked_modulation::run_example();
    assert_eq!(map.dims(), (32, 32));
}

#[test]
fn evaluate_metrics_report() {
    let r = evaluate_metrics::run_example();
    // One class-1 pixel is predicted as class 0 in one of ten frames.
    assert!((r.miou - (40.0 / 41.0 + 39.0 / 40.0) / 2.0).abs() < 1e-12);
    // All three 8-frame windows contain that frame: 7 of 8 pixels stay right.
    assert_eq!(r.mvc8, Some(0.875));
}

#[test]
fn end_to_end_is_accurate() {
    let r = end_to_end::run_example();
    assert!(r.miou >= 0.95);
}

#[test]
fn external_backbone_serves_every_request() {
    let (maps, served) = external_backbone::run_example();
    assert_eq!(maps.len(), 3);
    assert!(served >= 3);
}
