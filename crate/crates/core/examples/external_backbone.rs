// Drive Stage 3 through the request/response directory protocol. A thread
// stands in for the external extractor process and answers each request
// with the toy backbone.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use vss::external::serve_pending;
use vss::modulate::{modulated_rollout, FrameContext, LatentState, Schedule, ToyBackbone};
use vss::pipeline::{run_video, BackboneChoice, PipelineConfig};
use vss::synth::{synth_generate, SynthSpec};
use vss::{SegmentationMap, VideoManifest};

fn serve(root: std::path::PathBuf, manifest: VideoManifest, stop: Arc<AtomicBool>) -> usize {
    let backbone = ToyBackbone::default();
    let mut served = 0;
    loop {
        let finished = stop.load(Ordering::SeqCst);
        served += serve_pending(&root, |request, mask| {
            let (values, [h, w, c]) = manifest.latent(request.frame_index)?;
            let frame = FrameContext {
                index: request.frame_index,
                latent: LatentState::new(h, w, c, values, 0)?,
                image_size: request.image_size,
            };
            let schedule = Schedule::new(request.t_m, request.t_f, request.t_inv)?;
            modulated_rollout(&backbone, &frame, mask, request.lambda * request.sign as f32, request.b_m, &schedule)
        })
        .expect("serve requests");
        if finished {
            return served;
        }
        std::thread::sleep(Duration::from_millis(5));
    }
}

pub fn run_example() -> (Vec<SegmentationMap>, usize) {
    let dir = tempfile::tempdir().expect("temp dir");
    let manifest = synth_generate(&SynthSpec::new(3, (8, 8), 3, 2.0, 0.2, 5), dir.path().join("video")).unwrap();
    let exchange = dir.path().join("exchange");

    let stop = Arc::new(AtomicBool::new(false));
    let server = {
        let (root, manifest, stop) = (exchange.clone(), manifest.clone(), stop.clone());
        std::thread::spawn(move || serve(root, manifest, stop))
    };
    let config = PipelineConfig {
        num_clusters: 3,
        backbone: BackboneChoice::External(exchange),
        external_timeout_secs: Some(60.0),
        ..PipelineConfig::default()
    };
    let result = run_video(&manifest, &config).expect("pipeline");
    stop.store(true, Ordering::SeqCst);
    let served = server.join().unwrap();

    // The toy backbone run in-process yields the same maps.
    let local = run_video(&manifest, &PipelineConfig { num_clusters: 3, ..PipelineConfig::default() }).unwrap();
    assert_eq!(local.maps, result.maps);
    println!("{served} requests answered; maps match the in-process run");
    (result.maps, served)
}

#[allow(dead_code)]
fn main() {
    run_example();
}
