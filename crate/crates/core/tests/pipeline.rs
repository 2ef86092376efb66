use std::path::Path;

use vss::context::UpdateMode;
use vss::error::Error;
use vss::grid::upsample_fullres;
use vss::metrics::assign_gt_labels;
use vss::pipeline::{evaluate_dirs, run_manifest, run_video, write_outputs, BackboneChoice, PipelineConfig};
use vss::refine::CbrMode;
use vss::synth::{synth_generate, SynthSpec};
use vss::VideoManifest;

fn synth(dir: &Path, spec: &SynthSpec) -> VideoManifest {
    synth_generate(spec, dir).expect("synthetic video")
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn single_frame_video_uses_the_clustering_directly() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), &SynthSpec::new(1, (16, 16), 3, 2.0, 0.1, 4));
    let config = PipelineConfig { num_clusters: 3, ..Default::default() };
    let r = run_video(&manifest, &config).unwrap();
    assert_eq!(r.maps.len(), 1);
    let upsampled = upsample_fullres(&r.coarse[0].to_segmentation(), 64, 64).unwrap();
    assert_eq!(r.maps[0], upsampled);
    assert_eq!(r.report.unwrap().miou, 1.0);
    assert!(r.assignment.is_some());
}

#[test]
fn zero_noise_clusters_recover_the_classes() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = SynthSpec::new(3, (20, 20), 5, 2.0, 0.0, 12);
    let manifest = synth(tmp.path(), &spec);
    let config = PipelineConfig { num_clusters: 5, coarse_only: true, ..Default::default() };
    let r = run_video(&manifest, &config).unwrap();
    let gt = manifest.gt(0).unwrap().unwrap();
    let assignment = assign_gt_labels(&r.maps[0], &gt, 5).unwrap();
    let mut classes = assignment.classes().to_vec();
    classes.sort();
    assert_eq!(classes, vec![0, 1, 2, 3, 4], "clusters map one-to-one onto classes");
    assert_eq!(r.report.unwrap().miou, 1.0);
}

#[test]
fn missing_block_fails_before_any_output() {
    let tmp = tempfile::tempdir().unwrap();
    synth(&tmp.path().join("video"), &SynthSpec::new(2, (8, 8), 2, 2.0, 0.1, 0));
    let out = tmp.path().join("out");
    let config = PipelineConfig { blocks_aggregate: vec![6, 9], ..Default::default() };
    let err = run_manifest(tmp.path().join("video/manifest.json"), &config, Some(&out)).unwrap_err();
    assert!(matches!(err, Error::MissingBlock(9)), "{err:?}");
    assert!(!out.exists());

    let config = PipelineConfig { block_correspond: 3, ..Default::default() };
    let err = run_manifest(tmp.path().join("video/manifest.json"), &config, Some(&out)).unwrap_err();
    assert!(matches!(err, Error::MissingBlock(3)));
}

#[test]
fn runs_are_deterministic_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = SynthSpec::new(9, (16, 16), 4, 2.0, 0.25, 31);
    spec.motion = (1, -1);
    let manifest = synth(tmp.path(), &spec);
    let base = PipelineConfig { batch_size: 4, num_clusters: 6, label_noise: 0.05, ..Default::default() };
    let one = run_video(&manifest, &PipelineConfig { workers: 1, ..base.clone() }).unwrap();
    let four = run_video(&manifest, &PipelineConfig { workers: 4, ..base.clone() }).unwrap();
    let again = run_video(&manifest, &PipelineConfig { workers: 4, ..base }).unwrap();
    assert_eq!(one, four);
    assert_eq!(four, again);
}

#[test]
fn synthetic_generation_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = SynthSpec::new(3, (8, 12), 3, 2.0, 0.2, 6);
    spec.motion = (2, 1);
    synth(&tmp.path().join("a"), &spec);
    synth(&tmp.path().join("b"), &spec);
    assert_eq!(dir_bytes(&tmp.path().join("a")), dir_bytes(&tmp.path().join("b")));
    spec.seed = 7;
    synth(&tmp.path().join("c"), &spec);
    assert_ne!(dir_bytes(&tmp.path().join("a")), dir_bytes(&tmp.path().join("c")));
}

#[test]
fn every_refinement_and_update_mode_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), &SynthSpec::new(12, (16, 16), 3, 2.0, 0.2, 2));
    for cbr_mode in [CbrMode::BatchVoted, CbrMode::PerFrame] {
        for update_mode in [UpdateMode::Replace, UpdateMode::AppendWindow(2)] {
            let config = PipelineConfig {
                batch_size: 3,
                num_clusters: 4,
                threshold: 2.0,
                cbr_mode,
                update_mode,
                ..Default::default()
            };
            let r = run_video(&manifest, &config).unwrap();
            assert_eq!(r.maps.len(), 12);
            let miou = r.report.unwrap().miou;
            assert!(miou > 0.95, "{cbr_mode:?}/{update_mode:?}: {miou}");
        }
    }
}

#[test]
fn propagation_follows_moving_regions() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = SynthSpec::new(12, (16, 16), 3, 2.0, 0.2, 2);
    spec.motion = (0, 1);
    let manifest = synth(tmp.path(), &spec);
    let config = PipelineConfig { batch_size: 3, num_clusters: 4, cbr_enabled: false, ..Default::default() };
    let miou = run_video(&manifest, &config).unwrap().report.unwrap().miou;
    assert!(miou > 0.95, "{miou}");
}

#[test]
fn written_outputs_evaluate_to_the_same_report() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("video"), &SynthSpec::new(10, (12, 12), 3, 2.0, 0.2, 9));
    let out = tmp.path().join("out");
    let config = PipelineConfig { num_clusters: 5, label_noise: 0.1, cbr_enabled: false, ..Default::default() };
    let r = run_manifest(tmp.path().join("video/manifest.json"), &config, Some(&out)).unwrap();
    for name in ["frame_000000.png", "overlays/frame_000009.png", "classes/frame_000004.png", "metrics.json", "assignment.json"] {
        assert!(out.join(name).exists(), "{name}");
    }
    assert!(!out.join(".partial").exists());
    let report = evaluate_dirs(&out, &tmp.path().join("video/gt"), true, Some(3)).unwrap();
    let expected = r.report.unwrap();
    assert_eq!(report.miou, expected.miou);
    assert_eq!(report.mvc8, expected.mvc8);
    let classes = evaluate_dirs(&out.join("classes"), &tmp.path().join("video/gt"), false, Some(3)).unwrap();
    assert_eq!(classes.per_class_iou, expected.per_class_iou);

    // Rewriting into the same directory replaces files in place.
    write_outputs(&r_again(&manifest, &config), &manifest, &out, 0.5).unwrap();
}

fn r_again(manifest: &VideoManifest, config: &PipelineConfig) -> vss::VideoResult {
    run_video(manifest, config).unwrap()
}

#[test]
fn external_backbone_without_a_server_times_out() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("video"), &SynthSpec::new(1, (4, 4), 2, 2.0, 0.1, 0));
    let config = PipelineConfig {
        num_clusters: 2,
        backbone: BackboneChoice::External(tmp.path().join("exchange")),
        external_timeout_secs: Some(0.05),
        ..Default::default()
    };
    let err = run_video(&manifest, &config).unwrap_err();
    assert!(matches!(err, Error::ResponseTimeout(_)), "{err:?}");
    assert!(tmp.path().join("exchange/synthetic").read_dir().unwrap().count() >= 1);
}

#[test]
fn too_many_clusters_for_the_first_frame() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), &SynthSpec::new(1, (2, 2), 2, 2.0, 0.0, 0));
    let err = run_video(&manifest, &PipelineConfig::default()).unwrap_err();
    assert!(matches!(err, Error::TooFewPoints { k: 20, distinct: 2 }), "{err:?}");
}
