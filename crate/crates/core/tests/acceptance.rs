//! Acceptance suite: runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion. Exits non-zero if any criterion fails.

use std::path::Path;
use std::time::{Duration, Instant};

use gazezone::heuristic::{angle_quad, classify_gaze, smooth_labels, ZoneLabel};
use gazezone::imaging::{hough_circles, otsu_threshold, BitMask, GrayImage, HoughParams};
use gazezone::landmarks::{CornerMode, FaceSample, LandmarkSet};
use gazezone::nnet::gradcheck::{grad_check_layer, grad_check_network, NetLoss};
use gazezone::nnet::layers::{BatchNorm2d, Conv2d, Dense};
use gazezone::nnet::{
    adapt_fine_tune, adapt_linear_probe, angular_error_deg, build_izenet, cosine_gaze_loss,
    cross_entropy, load_checkpoint, squash, AdaptConfig, Dataset, GazeVector, IzeNetConfig, Layer,
    Mode, Network, Targets, Task, Tensor, TrainConfig,
};
use gazezone::pipeline::annotate::read_label_rows;
use gazezone::pipeline::config::PipelineConfig;
use gazezone::pipeline::manifest::{ingest, subsample_frames};
use gazezone::pipeline::runs::{network_input, PRETEXT_CHECKPOINT};
use gazezone::pipeline::synth::read_ground_truth;
use gazezone::pipeline::{annotate, gen_synthetic_corpus, render_face, run_pretext, SynthConfig};
use gazezone::pupil::{
    jesorsky_error, locate_pupils, JesorskyForm, JesorskyInputs, PupilConfig, PupilEstimate,
    PupilPair,
};
use gazezone::Point;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 1. Otsu

/// Textbook Otsu: exhaustive argmax of `w0 * w1 * (mu0 - mu1)^2` in exact
/// rational arithmetic, first maximum wins.
fn otsu_oracle(hist: &[u64; 256]) -> Option<u8> {
    let total: u64 = hist.iter().sum();
    let mut best: Option<(u8, BigRational)> = None;
    for t in 0..256usize {
        let n0: u64 = hist[..=t].iter().sum();
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let s0: u64 = hist[..=t]
            .iter()
            .enumerate()
            .map(|(v, &c)| v as u64 * c)
            .sum();
        let s1: u64 = hist[t + 1..]
            .iter()
            .enumerate()
            .map(|(v, &c)| (v + t + 1) as u64 * c)
            .sum();
        let r = |a: u64, b: u64| BigRational::new(a.into(), b.into());
        let (w0, w1) = (r(n0, total), r(n1, total));
        let diff = r(s0, n0) - r(s1, n1);
        let var = w0 * w1 * diff.clone() * diff;
        if best.as_ref().is_none_or(|(_, b)| var > *b) {
            best = Some((t as u8, var));
        }
    }
    best.map(|b| b.0)
}

fn criterion_otsu() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut agree = 0;
    for case in 0..200 {
        let (w, h) = (rng.random_range(4..64), rng.random_range(4..64));
        // mixtures of a few modes, some with few levels to force ties
        let modes: Vec<(u8, u8)> = (0..rng.random_range(1..4))
            .map(|_| {
                let c = rng.random_range(0..=255u8);
                (c, rng.random_range(0..=if case % 5 == 0 { 2 } else { 40 }))
            })
            .collect();
        let data: Vec<u8> = (0..w * h)
            .map(|_| {
                let (c, s) = modes[rng.random_range(0..modes.len())];
                (c as i32 + rng.random_range(-(s as i32)..=s as i32)).clamp(0, 255) as u8
            })
            .collect();
        let img = GrayImage::new(w, h, data).unwrap();
        let expected = otsu_oracle(&img.histogram());
        let got = otsu_threshold(&img).ok();
        if expected == got {
            agree += 1;
        }
    }
    check(
        agree == 200,
        format!("{agree}/200 thresholds equal the exhaustive oracle"),
    )
}

// ---------------------------------------------------------------- 2. Hough

fn midpoint_circle(w: usize, h: usize, cx: i64, cy: i64, r: i64) -> BitMask {
    let mut m = BitMask::new(w, h);
    let (mut x, mut y, mut d) = (r, 0i64, 1 - r);
    while x >= y {
        for (dx, dy) in [
            (x, y),
            (y, x),
            (-y, x),
            (-x, y),
            (-x, -y),
            (-y, -x),
            (y, -x),
            (x, -y),
        ] {
            let (px, py) = (cx + dx, cy + dy);
            if px >= 0 && py >= 0 && (px as usize) < w && (py as usize) < h {
                m.set(px as usize, py as usize, true);
            }
        }
        y += 1;
        if d < 0 {
            d += 2 * y + 1;
        } else {
            x -= 1;
            d += 2 * (y - x) + 1;
        }
    }
    m
}

fn criterion_hough() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (w, h) = (96, 96);
    let mut hits = 0;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let r = rng.random_range(10..=30i64);
        let cx = rng.random_range(r + 2..w as i64 - r - 2);
        let cy = rng.random_range(r + 2..h as i64 - r - 2);
        let edges = midpoint_circle(w, h, cx, cy, r);
        let top = hough_circles(&edges, &HoughParams::new(10, 30))
            .unwrap()
            .into_iter()
            .next();
        if let Some(c) = top {
            let err = (c.cx - cx as f64)
                .abs()
                .max((c.cy - cy as f64).abs())
                .max((c.r as f64 - r as f64).abs());
            worst = worst.max(err);
            if err <= 1.0 {
                hits += 1;
            }
        } else {
            worst = f64::INFINITY;
        }
    }
    check(
        hits == 100,
        format!("{hits}/100 circles recovered within 1 px (worst error {worst})"),
    )
}

// ---------------------------------------------------------------- 3. pupils

fn criterion_pupils() -> Outcome {
    let synth = SynthConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let cfg = PupilConfig::default();
    let mut errors = Vec::with_capacity(500);
    let mut failures = 0;
    for _ in 0..500 {
        let zone = ZoneLabel::ALL[rng.random_range(0..3)];
        let look = gazezone::pipeline::SubjectLook::random(&mut rng);
        let spec = synth.random_spec(&mut rng, zone);
        assert!(spec.noise_sigma <= 8.0);
        let face = render_face(&spec, &look, synth.image_size);
        let sample = FaceSample::new(face.image, face.landmarks);
        match locate_pupils(&sample, &cfg) {
            Ok(pair) => {
                let e = jesorsky_error(
                    &JesorskyInputs::new(pair.centers(), face.pupils),
                    JesorskyForm::WorstEye,
                )
                .unwrap();
                errors.push(e);
            }
            Err(_) => {
                failures += 1;
                errors.push(f64::INFINITY);
            }
        }
    }
    let frac = |t: f64| errors.iter().filter(|&&e| e <= t).count() as f64 / errors.len() as f64;
    let (a05, a10, a25) = (frac(0.05), frac(0.10), frac(0.25));
    check(
        a05 >= 0.95 && a10 == 1.0,
        format!(
            "e<=0.05: {:.1}%, e<=0.10: {:.1}%, e<=0.25: {:.1}% ({failures} localization failures)",
            100.0 * a05,
            100.0 * a10,
            100.0 * a25
        ),
    )
}

// ---------------------------------------------------------------- 4. heuristic

/// Angle from vertical via the arccosine of the normalized vertical
/// component, independent of the library's atan2 form.
fn oracle_angle(a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    (dy.abs() / (dx * dx + dy * dy).sqrt()).acos().to_degrees()
}

fn criterion_heuristic() -> Outcome {
    let tau = 2.0;
    let width = 200;
    let blank = gazezone::RgbImage::new(width, 160, vec![128; width * 160 * 3]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut sampled, mut agree, mut mirror_ok) = (0, 0, 0);
    while sampled < 1000 {
        let nose = Point::new(rng.random_range(80.0..120.0), rng.random_range(95.0..125.0));
        let eye_y = rng.random_range(40.0..70.0);
        let lp = Point::new(
            nose.x - rng.random_range(10.0..40.0),
            eye_y + rng.random_range(-5.0..5.0),
        );
        let rp = Point::new(
            nose.x + rng.random_range(10.0..40.0),
            eye_y + rng.random_range(-5.0..5.0),
        );
        let (t1, t2) = (oracle_angle(lp, nose), oracle_angle(rp, nose));
        if (t1 - t2).abs() <= tau {
            continue;
        }
        sampled += 1;
        let mut pts = vec![Point::new(100.0, 150.0); 68];
        pts[30] = nose;
        pts[36] = Point::new(lp.x - 12.0, eye_y);
        pts[39] = Point::new(lp.x + 12.0, eye_y);
        pts[42] = Point::new(rp.x - 12.0, eye_y);
        pts[45] = Point::new(rp.x + 12.0, eye_y);
        let sample = FaceSample::new(blank.clone(), LandmarkSet::new(pts).unwrap());
        let pupils = PupilPair {
            left: PupilEstimate::combine(lp, None),
            right: PupilEstimate::combine(rp, None),
        };
        let label = classify_gaze(
            &angle_quad(&sample, &pupils, CornerMode::Outer).unwrap(),
            tau,
        );
        let expected = if t1 > t2 {
            ZoneLabel::Left
        } else {
            ZoneLabel::Right
        };
        agree += usize::from(label == expected);

        let xmax = (width - 1) as f64;
        let flip = |p: Point| Point::new(xmax - p.x, p.y);
        let mirrored = sample.mirrored();
        let mpupils = PupilPair {
            left: PupilEstimate::combine(flip(rp), None),
            right: PupilEstimate::combine(flip(lp), None),
        };
        let mlabel = classify_gaze(
            &angle_quad(&mirrored, &mpupils, CornerMode::Outer).unwrap(),
            tau,
        );
        mirror_ok += usize::from(mlabel == label.mirrored());
    }
    check(
        agree == 1000 && mirror_ok == 1000,
        format!("sign oracle {agree}/1000, mirror antisymmetry {mirror_ok}/1000"),
    )
}

// ---------------------------------------------------------------- 5. smoothing

fn brute_force_smooth(stream: &[u8], window: usize) -> Vec<u8> {
    let half = window / 2;
    (0..stream.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(stream.len() - 1);
            let mut counts = [0usize; 3];
            for &l in &stream[lo..=hi] {
                counts[l as usize] += 1;
            }
            let max = *counts.iter().max().unwrap();
            let winners: Vec<usize> = (0..3).filter(|&l| counts[l] == max).collect();
            if winners.len() == 1 {
                winners[0] as u8
            } else {
                stream[i]
            }
        })
        .collect()
}

fn criterion_smoothing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut agree = 0;
    for _ in 0..1000 {
        let len = rng.random_range(0..=200);
        let labels = rng.random_range(2..=3u8);
        let stream: Vec<u8> = (0..len).map(|_| rng.random_range(0..labels)).collect();
        if smooth_labels(&stream, 5).unwrap() == brute_force_smooth(&stream, 5) {
            agree += 1;
        }
    }
    check(
        agree == 1000,
        format!("{agree}/1000 streams equal brute-force window counting"),
    )
}

// ---------------------------------------------------------------- 6. gradients

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn criterion_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut bn = BatchNorm2d::new(3, 0.99);
    bn.gamma.value = vec![0.7, 1.3, -0.4];
    bn.beta.value = vec![0.1, -0.2, 0.3];
    bn.running_mean.value = vec![0.05, -0.1, 0.2];
    bn.running_var.value = vec![0.8, 1.5, 0.4];
    let x4 = random_tensor(&mut rng, vec![2, 4, 4, 6]);
    let x2 = random_tensor(&mut rng, vec![3, 8]);
    let cases: Vec<(Layer, Tensor, Mode)> = vec![
        (
            Layer::Conv2d(Conv2d::new(&mut rng, 4, 3, 3)),
            x4.clone(),
            Mode::Train,
        ),
        (
            Layer::BatchNorm2d(bn.clone()),
            random_tensor(&mut rng, vec![4, 3, 3, 3]),
            Mode::Eval,
        ),
        (
            Layer::BatchNorm2d(bn),
            random_tensor(&mut rng, vec![4, 3, 3, 3]),
            Mode::Train,
        ),
        (Layer::Relu, x4.clone(), Mode::Train),
        (Layer::MaxPool2d, x4.clone(), Mode::Train),
        (Layer::Squash { capsule_dim: 2 }, x4.clone(), Mode::Train),
        (Layer::Flatten, x4, Mode::Train),
        (
            Layer::Dense(Dense::new(&mut rng, 8, 5)),
            x2.clone(),
            Mode::Train,
        ),
        (Layer::Softmax, x2, Mode::Train),
    ];
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (i, (layer, x, mode)) in cases.iter().enumerate() {
        let r = grad_check_layer(layer, x, *mode, 700 + i as u64).map_err(|e| e.to_string())?;
        worst = worst.max(r.max_rel_error);
        parts.push(format!("{}={:.1e}", layer.kind(), r.max_rel_error));
    }
    let mut net = build_izenet(&IzeNetConfig::toy().with_seed(607)).unwrap();
    for layer in net.layers_mut() {
        if let Layer::BatchNorm2d(bn) = layer {
            bn.running_mean
                .value
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-0.1..0.1));
            bn.running_var
                .value
                .iter_mut()
                .for_each(|v| *v = rng.random_range(0.3..2.0));
            bn.gamma
                .value
                .iter_mut()
                .for_each(|v| *v = rng.random_range(0.5..1.5));
        }
    }
    let x = random_tensor(&mut rng, net.input_shape(2));
    let r = grad_check_network(&net, &x, &NetLoss::CrossEntropy(vec![0, 2]), 708)
        .map_err(|e| e.to_string())?;
    worst = worst.max(r.max_rel_error);
    parts.push(format!(
        "network({} params)={:.1e}",
        net.param_count(),
        r.max_rel_error
    ));
    check(
        worst <= 1e-4,
        format!("max relative error {worst:.2e}: {}", parts.join(", ")),
    )
}

// ---------------------------------------------------------------- 7. pretext

fn pretext_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.ingest.stride = 1;
    cfg.pretext.train = TrainConfig {
        epochs: 20,
        target_metric: Some(0.9),
        ..pretext_train()
    };
    cfg
}

fn pretext_train() -> TrainConfig {
    TrainConfig::default()
}

fn corpus(
    dir: &Path,
    subjects: usize,
    videos: usize,
    frames: usize,
    seed: u64,
) -> std::path::PathBuf {
    let cfg = SynthConfig {
        subjects,
        videos_per_subject: videos,
        frames_per_video: frames,
        seed,
        ..SynthConfig::default()
    };
    gen_synthetic_corpus(&cfg, dir).unwrap().manifest_path
}

fn criterion_pretext(work: &Path) -> Outcome {
    let data = work.join("pretext_corpus");
    let run = work.join("pretext_run");
    let manifest_path = corpus(&data, 10, 3, 100, 7);
    let cfg = pretext_config();
    let (manifest, _) = ingest(&manifest_path).map_err(|e| e.to_string())?;
    let annotation = annotate(&subsample_frames(&manifest, 1).unwrap(), &cfg, &run)
        .map_err(|e| e.to_string())?;
    let t = Instant::now();
    let summary = run_pretext(&manifest_path, &run, &cfg, &run).map_err(|e| e.to_string())?;
    let n = summary.train_samples + summary.val_samples;
    let truth: std::collections::HashMap<String, String> =
        read_ground_truth(&data.join("ground_truth.csv"))
            .unwrap()
            .into_iter()
            .map(|t| (t.image_path, t.zone))
            .collect();
    let rows = read_label_rows(&run).map_err(|e| e.to_string())?;
    let agree = rows
        .iter()
        .filter(|r| truth.get(&r.image_path) == Some(&r.zone_smoothed))
        .count();
    check(
        n + summary.excluded == 3000
            && summary.best_val_accuracy >= 0.9
            && summary.epochs_run <= 20,
        format!(
            "{} images ({} labeled, {} rejected, pseudo-labels agree with truth on {:.1}%); \
             best val accuracy {:.4} after {} epochs (training {:.0}s)",
            manifest.len(),
            annotation.labeled,
            annotation.rejected,
            100.0 * agree as f64 / rows.len().max(1) as f64,
            summary.best_val_accuracy,
            summary.epochs_run,
            t.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 8. adaptation

fn downstream_dataset(dir: &Path, cfg: &PipelineConfig) -> (Dataset, Dataset) {
    let manifest_path = corpus(dir, 6, 2, 60, 99);
    let (manifest, _) = ingest(&manifest_path).unwrap();
    let truth = read_ground_truth(&dir.join("ground_truth.csv")).unwrap();
    let size = cfg.network.resolve().input_size;
    let mut parts: [(Vec<gazezone::RgbImage>, Vec<usize>); 2] = Default::default();
    for (e, t) in manifest.entries.iter().zip(&truth) {
        assert_eq!(e.image_path, t.image_path);
        let img =
            network_input(&manifest.load_sample(e).unwrap(), cfg.pretext.input_region).unwrap();
        let part = usize::from(e.subject_id.as_str() >= "s04");
        parts[part].0.push(img);
        parts[part]
            .1
            .push(t.zone.parse::<ZoneLabel>().unwrap().index());
    }
    let make = |(imgs, labels): &(Vec<gazezone::RgbImage>, Vec<usize>)| {
        Dataset::new(
            imgs,
            Targets::Classes {
                labels: labels.clone(),
                classes: 3,
            },
            size,
        )
        .unwrap()
    };
    (make(&parts[0]), make(&parts[1]))
}

fn criterion_adaptation(work: &Path) -> Outcome {
    let cfg = pretext_config();
    let (pretext, _) = load_checkpoint(work.join("pretext_run").join(PRETEXT_CHECKPOINT))
        .map_err(|e| e.to_string())?;
    let (train, val) = downstream_dataset(&work.join("downstream"), &cfg);

    let lp_cfg = AdaptConfig::linear_probe();
    let before = pretext.backbone_snapshot();
    let probe: Vec<usize> = (0..8).collect();
    let latents_before = pretext.latents(&val.batch(&probe).unwrap().0).unwrap();
    let (lp, lp_log) = adapt_linear_probe(&pretext, &train, &val, Task::Zone, &lp_cfg)
        .map_err(|e| e.to_string())?;
    let blocks_same = lp.backbone_snapshot() == before;
    let latents_same = lp.latents(&val.batch(&probe).unwrap().0).unwrap() == latents_before;
    let lp_acc = lp_log.best().map_or(0.0, |r| r.metric);

    let target = 0.9;
    let epochs_to_target = |net: &Network, seed: u64| -> Result<usize, String> {
        let mut ft = AdaptConfig::fine_tune();
        ft.train = TrainConfig {
            seed,
            target_metric: Some(target),
            ..ft.train
        };
        ft.head_seed = seed;
        let (_, log) =
            adapt_fine_tune(net, &train, &val, Task::Zone, &ft).map_err(|e| e.to_string())?;
        Ok(log.target_epoch.unwrap_or(ft.train.epochs + 1))
    };
    let mut pairs = Vec::new();
    for seed in 0..3 {
        let random = build_izenet(&cfg.network.resolve().with_seed(1000 + seed)).unwrap();
        pairs.push((
            epochs_to_target(&pretext, seed)?,
            epochs_to_target(&random, seed)?,
        ));
    }
    let ft_ok = pairs.iter().all(|(p, r)| p <= r);
    check(
        blocks_same && latents_same && ft_ok,
        format!(
            "LP backbone bit-identical: {blocks_same}, latents identical: {latents_same}, LP val acc {lp_acc:.3}; \
             FT epochs to {target} (pretext, random) per seed: {pairs:?} (21 = not reached)"
        ),
    )
}

// ---------------------------------------------------------------- 9. unit cases

fn criterion_units() -> Outcome {
    let tol = 1e-9;
    let close = |a: f64, b: f64| (a - b).abs() <= tol;
    let probs = |row: &[f64]| Tensor::new(vec![1, row.len()], row.to_vec()).unwrap();
    let ce = |row: &[f64], t: usize| cross_entropy(&probs(row), &[t]).unwrap().0;
    let third = 1.0 / 3.0;
    let g = GazeVector::new(0.3, -0.2, 0.93);
    let norm = |v: Vec<f64>| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let worst_eye = jesorsky_error(
        &JesorskyInputs::new(
            (Point::new(13.0, 10.0), Point::new(50.0, 14.0)),
            (Point::new(10.0, 10.0), Point::new(50.0, 10.0)),
        ),
        JesorskyForm::WorstEye,
    )
    .unwrap();
    let cases = [
        ("CE p=1", close(ce(&[0.0, 1.0, 0.0], 1), 0.0)),
        (
            "CE uniform",
            close(ce(&[third, third, third], 0), 3f64.ln()),
        ),
        (
            "CE clamp",
            close(ce(&[1e-20, 1.0 - 1e-20, 0.0], 0), -(1e-12f64.ln())),
        ),
        (
            "cos same",
            close(cosine_gaze_loss(g, g).unwrap(), 0.0)
                && close(angular_error_deg(g, g).unwrap(), 0.0),
        ),
        (
            "cos orthogonal",
            close(
                cosine_gaze_loss(
                    GazeVector::new(1.0, 0.0, 0.0),
                    GazeVector::new(0.0, 1.0, 0.0),
                )
                .unwrap(),
                1.0,
            ) && close(
                angular_error_deg(
                    GazeVector::new(1.0, 0.0, 0.0),
                    GazeVector::new(0.0, 0.0, 1.0),
                )
                .unwrap(),
                90.0,
            ),
        ),
        (
            "cos scale",
            close(
                cosine_gaze_loss(g, GazeVector::new(0.6, -0.4, 1.86)).unwrap(),
                0.0,
            ),
        ),
        ("squash 0", squash(&[0.0, 0.0, 0.0]) == vec![0.0; 3]),
        ("squash |s|=1", close(norm(squash(&[0.6, 0.0, 0.8])), 0.5)),
        (
            "squash |s|=100",
            (norm(squash(&[0.0, 100.0])) - 0.9999).abs() <= 1e-4,
        ),
        ("jesorsky worst-eye", close(worst_eye, 4.0 / 40.0)),
        (
            "jesorsky zero",
            close(
                jesorsky_error(
                    &JesorskyInputs::new(
                        (Point::new(10.0, 10.0), Point::new(50.0, 10.0)),
                        (Point::new(10.0, 10.0), Point::new(50.0, 10.0)),
                    ),
                    JesorskyForm::WorstEye,
                )
                .unwrap(),
                0.0,
            ),
        ),
    ];
    let failed: Vec<&str> = cases.iter().filter(|c| !c.1).map(|c| c.0).collect();
    check(
        failed.is_empty(),
        format!("{} cases, failed: {failed:?}", cases.len()),
    )
}

// ---------------------------------------------------------------- 10. determinism

fn run_pipeline_once(dir: &Path, manifest_path: &Path) -> Result<(), String> {
    let mut cfg = pretext_config();
    cfg.pretext.train = TrainConfig {
        epochs: 3,
        target_metric: None,
        ..pretext_train()
    };
    let (manifest, _) = ingest(manifest_path).map_err(|e| e.to_string())?;
    annotate(
        &subsample_frames(&manifest, cfg.ingest.stride).unwrap(),
        &cfg,
        dir,
    )
    .map_err(|e| e.to_string())?;
    run_pretext(manifest_path, dir, &cfg, dir).map_err(|e| e.to_string())?;
    Ok(())
}

fn tree_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn criterion_determinism(work: &Path) -> Outcome {
    let data = work.join("determinism_corpus");
    let manifest_path = corpus(&data, 4, 2, 40, 17);
    let (a, b) = (work.join("det_a"), work.join("det_b"));
    run_pipeline_once(&a, &manifest_path)?;
    run_pipeline_once(&b, &manifest_path)?;
    let (fa, fb) = (tree_files(&a), tree_files(&b));
    let names: Vec<&str> = fa.iter().map(|f| f.0.as_str()).collect();
    let csvs = names.iter().filter(|n| n.ends_with(".csv")).count();
    let ckpts = names.iter().filter(|n| n.ends_with(".ckpt")).count();
    check(
        fa == fb && csvs > 0 && ckpts > 0,
        format!(
            "{} files compared ({csvs} CSVs, {ckpts} checkpoints), identical: {}",
            fa.len(),
            fa == fb
        ),
    )
}

// ---------------------------------------------------------------- driver

fn main() {
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let tmp = tempfile::tempdir().expect("temp dir");
    let work = tmp.path().to_path_buf();
    let w = work.clone();
    let w2 = work.clone();
    let w3 = work.clone();
    type Criterion = (u32, &'static str, u64, Box<dyn Fn() -> Outcome>);
    let criteria: Vec<Criterion> = vec![
        (1, "otsu oracle equivalence", 10, Box::new(criterion_otsu)),
        (2, "hough circle recovery", 60, Box::new(criterion_hough)),
        (
            3,
            "synthetic pupil localization",
            300,
            Box::new(criterion_pupils),
        ),
        (
            4,
            "heuristic oracle agreement",
            10,
            Box::new(criterion_heuristic),
        ),
        (5, "smoothing oracle", 5, Box::new(criterion_smoothing)),
        (6, "gradient checks", 120, Box::new(criterion_gradients)),
        (
            7,
            "pretext training at toy scale",
            300,
            Box::new(move || criterion_pretext(&w)),
        ),
        (
            8,
            "adaptation contracts",
            600,
            Box::new(move || criterion_adaptation(&w2)),
        ),
        (
            9,
            "loss and metric unit cases",
            1,
            Box::new(criterion_units),
        ),
        (
            10,
            "determinism",
            720,
            Box::new(move || criterion_determinism(&w3)),
        ),
    ];
    let mut failed = 0;
    for (id, name, limit, run) in criteria {
        if !filter.is_empty()
            && !filter
                .iter()
                .any(|f| f == &id.to_string() || name.contains(f.as_str()))
        {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(limit);
        let (status, detail) = match (&outcome, in_time) {
            (Ok(d), true) => ("PASS", d.clone()),
            (Ok(d), false) => ("FAIL", format!("{d}; exceeded {limit}s")),
            (Err(d), _) => ("FAIL", d.clone()),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!(
            "criterion {id:>2} [{status}] {name} ({:.1}s): {detail}",
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
