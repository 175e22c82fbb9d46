//! Pinned behavioral contract for the whole pipeline, one test per
//! criterion. Each test prints a `criterion N PASS|FAIL` scoreboard line to
//! stderr (bypassing libtest capture where the OS allows) and then asserts,
//! so a full run reads as a nine-line report and any regression fails the
//! suite.

use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use evsep_core::audio::{
    apply_mask_and_reconstruct, compress, compute_iam, istft, load_wav_mono, stft, SpecNorm,
    StftConfig, Waveform,
};
use evsep_core::event::{read_events, read_events_from, write_events_to, Event, EventStream, Polarity};
use evsep_core::features::{read_features_from, write_features_to, FeatureConfig, FeatureFrame, FeatureNorm};
use evsep_core::flow::{compute_event_flow, fit_local_plane, FlowConfig, TimeSurface};
use evsep_core::metrics::si_sdr;
use evsep_core::net::{
    backward, forward, init_params, load_model_from, save_model_to, ForwardMode, NetConfig,
    NetTensors, SavedModel,
};
use evsep_core::pipeline::separate;
use evsep_core::synth::{
    generate_dataset, simulate_events, synth_audio_pair, AudioSceneConfig, SceneConfig,
    ScenePattern,
};
use evsep_core::train::{prepare_dataset, train_prepared, Split, TrainConfig};

/// Scoreboard line, visible even under libtest's output capture.
fn report(line: &str) {
    if let Ok(mut f) = std::fs::File::options().write(true).open("/dev/stderr") {
        let _ = writeln!(f, "{line}");
    } else {
        eprintln!("{line}");
    }
}

fn noise(n: usize, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Waveform {
        samples: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        sample_rate: 16_000,
    }
}

#[test]
fn c1_stft_istft_roundtrip() {
    let cfg = StftConfig::default();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let w = noise(48_000, seed);
        let spec = stft(&w, &cfg).unwrap();
        let back = istft(&spec, &cfg, w.samples.len());
        // The first and last window never reach full overlap; the interior
        // must come back exactly.
        let lo = cfg.win_length;
        let hi = w.samples.len() - cfg.win_length;
        let (mut err, mut ref_e) = (0.0, 0.0);
        for j in lo..hi {
            err += (back.samples[j] - w.samples[j]).powi(2);
            ref_e += w.samples[j].powi(2);
        }
        worst = worst.max((err / ref_e).sqrt());
    }
    let pass = worst <= 1e-6;
    report(&format!(
        "criterion 1 {}: stft/istft interior round trip, worst rel L2 {worst:.2e} (<= 1e-6) over 20 signals",
        if pass { "PASS" } else { "FAIL" }
    ));
    assert!(pass, "worst interior relative L2 error {worst}");
}

#[test]
fn c2_gradient_keystone() {
    let cfg = NetConfig {
        num_layers: 2,
        hidden: 8,
        input_dim: 6,
        output_dim: 5,
        dropout_rate: 0.2,
        bidirectional: true,
        seed: 11,
    };
    let t_len = 5;
    let params = init_params(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let x = Array2::from_shape_fn((t_len, cfg.input_dim), |_| rng.random_range(-1.0..1.0));
    let r = Array2::from_shape_fn((t_len, cfg.output_dim), |_| rng.random_range(0.5..1.5));

    // Loss L = sum(mask * r), so dL/dmask = r. A fixed dropout step keeps
    // the +h and -h evaluations on the same subnetwork.
    let step = 3;
    let loss = |t: &NetTensors| -> f64 {
        let p = evsep_core::net::ModelParams { cfg, tensors: t.clone() };
        let (mask, _) = forward(&p, &x, ForwardMode::Train { dropout_step: step }).unwrap();
        (&mask * &r).sum()
    };
    let (_, cache) = forward(&params, &x, ForwardMode::Train { dropout_step: step }).unwrap();
    let (grads, _) = backward(&params, &cache.unwrap(), &r).unwrap();

    let h = 1e-5;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-4);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let n_tensors = grads.flat().len();
    for ti in 0..n_tensors {
        for k in 0..grads.flat()[ti].len() {
            let mut tp = params.tensors.clone();
            tp.flat_mut()[ti][k] += h;
            let lp = loss(&tp);
            let mut tm = params.tensors.clone();
            tm.flat_mut()[ti][k] -= h;
            let lm = loss(&tm);
            let fd = (lp - lm) / (2.0 * h);
            worst = worst.max(rel(grads.flat()[ti][k], fd));
            checked += 1;
        }
    }
    // A dead net would pass vacuously.
    assert!(grads.flat().iter().flat_map(|s| s.iter()).any(|&v| v.abs() > 1e-6));
    let pass = worst <= 1e-4;
    report(&format!(
        "criterion 2 {}: exact gradients, worst rel err {worst:.2e} (<= 1e-4) across {checked} parameters",
        if pass { "PASS" } else { "FAIL" }
    ));
    assert!(pass, "worst parameter gradient error {worst}");
}

#[test]
fn c3_flow_on_translating_bar() {
    let scene = SceneConfig { pattern: ScenePattern::default_bar(200.0), ..Default::default() };
    let env = vec![1.0; 3000];
    let stream = simulate_events(&scene, &env, 3.0);
    assert!(stream.len() > 1000, "bar scene produced only {} events", stream.len());

    let cfg = FlowConfig::default();
    let mut surface = TimeSurface::new(stream.width(), stream.height());
    let mut speeds = Vec::new();
    let mut angles = Vec::new();
    let mut worst_identity = 0.0f64;
    for e in stream.events() {
        surface.update(e);
        if let Some(fit) = fit_local_plane(&surface, e, &cfg) {
            let v = compute_event_flow(&fit, &cfg);
            if v.valid {
                // v is the inverse gradient of the fitted plane, so
                // v . (a, b) = 1 identically.
                worst_identity = worst_identity.max((v.vx * fit.a + v.vy * fit.b - 1.0).abs());
                speeds.push(v.speed());
                angles.push(v.vy.atan2(v.vx).abs().to_degrees());
            }
        }
    }
    assert!(speeds.len() > 1000, "only {} valid flows", speeds.len());
    speeds.sort_by(f64::total_cmp);
    angles.sort_by(f64::total_cmp);
    let med_speed = speeds[speeds.len() / 2];
    let med_angle = angles[angles.len() / 2];

    let pass = (170.0..=230.0).contains(&med_speed) && med_angle <= 10.0 && worst_identity <= 1e-12;
    report(&format!(
        "criterion 3 {}: bar at 200 px/s, median speed {med_speed:.1} px/s (170..230), median direction {med_angle:.2} deg (<= 10), inverse-gradient identity {worst_identity:.2e} (<= 1e-12) on {} valid flows",
        if pass { "PASS" } else { "FAIL" },
        speeds.len()
    ));
    assert!(pass, "median speed {med_speed}, median angle {med_angle}, identity {worst_identity}");
}

#[test]
fn c4_oracle_mask_separation() {
    let cfg = StftConfig::default();
    let mut sum = 0.0;
    let mut min = f64::INFINITY;
    for seed in 0..20 {
        let s = synth_audio_pair(&AudioSceneConfig { seed, ..Default::default() });
        let noisy = stft(&s.mixture, &cfg).unwrap();
        let noisy_cmag = compress(&noisy, &cfg);
        let clean_cmag = compress(&stft(&s.clean, &cfg).unwrap(), &cfg);
        let iam = compute_iam(&clean_cmag, &noisy_cmag).unwrap();
        let est = apply_mask_and_reconstruct(&iam, &noisy, &cfg, s.mixture.samples.len()).unwrap();
        let si = si_sdr(&s.clean, &est).unwrap();
        sum += si;
        min = min.min(si);
    }
    let mean = sum / 20.0;
    let pass = mean >= 15.0;
    report(&format!(
        "criterion 4 {}: oracle mask on 20 mixtures at 0 dB, mean SI-SDR {mean:.1} dB (>= 15), min {min:.1} dB",
        if pass { "PASS" } else { "FAIL" }
    ));
    assert!(pass, "oracle mean SI-SDR {mean} dB");
}

/// Mean test-split SI-SDR improvements of the three trend variants, trained
/// once and shared between the two trend criteria.
struct Trend {
    audio_visual: f64,
    audio_only: f64,
    unidirectional: f64,
}

fn trend() -> &'static Trend {
    static TREND: OnceLock<Trend> = OnceLock::new();
    TREND.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_dataset(280, dir.path(), 42).unwrap();

        let base = TrainConfig {
            max_epochs: 15,
            patience: 10,
            seed: 7,
            net: NetConfig {
                num_layers: 2,
                hidden: 64,
                input_dim: 257 + 150,
                output_dim: 257,
                dropout_rate: 0.2,
                bidirectional: true,
                seed: 7,
            },
            ..Default::default()
        };
        // One prepared dataset serves all three variants: the audio-only
        // net reads the leading spectral block of the same inputs.
        let data = prepare_dataset(&manifest, &base).unwrap();

        let audio_only_cfg =
            TrainConfig { net: NetConfig { input_dim: 257, ..base.net }, ..base.clone() };
        let uni_cfg =
            TrainConfig { net: NetConfig { bidirectional: false, ..base.net }, ..base.clone() };

        let av = train_prepared(&data, &base).unwrap().model;
        let ao = train_prepared(&data, &audio_only_cfg).unwrap().model;
        let uni = train_prepared(&data, &uni_cfg).unwrap().model;

        let mean_improvement = |model: &SavedModel, with_events: bool| -> f64 {
            let test = manifest.split(Split::Test);
            let mut sum = 0.0;
            for entry in &test {
                let mix = load_wav_mono(manifest.resolve(&entry.mix_wav)).unwrap();
                let clean = load_wav_mono(manifest.resolve(&entry.clean_wav)).unwrap();
                let events;
                let stream = if with_events {
                    events = read_events(manifest.resolve(&entry.events)).unwrap();
                    Some(&events)
                } else {
                    None
                };
                let est = separate(model, &mix, stream).unwrap();
                sum += si_sdr(&clean, &est).unwrap() - si_sdr(&clean, &mix).unwrap();
            }
            sum / test.len() as f64
        };

        Trend {
            audio_visual: mean_improvement(&av, true),
            audio_only: mean_improvement(&ao, false),
            unidirectional: mean_improvement(&uni, true),
        }
    })
}

#[test]
fn c5_visual_features_help() {
    let t = trend();
    let margin = t.audio_visual - t.audio_only;
    let pass = t.audio_visual >= 3.0 && margin >= 0.5;
    report(&format!(
        "criterion 5 {}: audio+visual improves {:.2} dB (>= 3), beats audio-only by {margin:.2} dB (>= 0.5)",
        if pass { "PASS" } else { "FAIL" },
        t.audio_visual
    ));
    assert!(
        pass,
        "audio+visual {:.2} dB, audio-only {:.2} dB",
        t.audio_visual, t.audio_only
    );
}

#[test]
fn c6_bidirectional_beats_unidirectional() {
    let t = trend();
    let pass = t.unidirectional < t.audio_visual;
    report(&format!(
        "criterion 6 {}: unidirectional {:.2} dB < bidirectional {:.2} dB",
        if pass { "PASS" } else { "FAIL" },
        t.unidirectional,
        t.audio_visual
    ));
    assert!(pass, "unidirectional {:.2} dB, bidirectional {:.2} dB", t.unidirectional, t.audio_visual);
}

#[test]
fn c7_feature_dimensions() {
    let coarse = FeatureConfig {
        width: 100,
        height: 50,
        region_size: 10,
        include_rate: true,
        slice_ms: 10,
    };
    let fine = FeatureConfig { region_size: 5, include_rate: false, ..coarse };
    let pass = coarse.dim() == 150 && fine.dim() == 400;
    report(&format!(
        "criterion 7 {}: feature dims {} (g=10 with rate, want 150) and {} (g=5 without, want 400)",
        if pass { "PASS" } else { "FAIL" },
        coarse.dim(),
        fine.dim()
    ));
    assert!(pass, "dims {} and {}", coarse.dim(), fine.dim());
}

fn evsep(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_evsep")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "evsep {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn same_bytes(a: &Path, b: &Path) -> bool {
    std::fs::read(a).unwrap() == std::fs::read(b).unwrap()
}

#[test]
fn c8_cli_reruns_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let s = |path: std::path::PathBuf| path.into_os_string().into_string().unwrap();

    // synth: same seed, two directories, identical sample bytes.
    evsep(&["synth", "--n", "7", "--out", &s(p("a")), "--seed", "5"]);
    evsep(&["synth", "--n", "7", "--out", &s(p("b")), "--seed", "5"]);
    let mut names: Vec<String> = std::fs::read_dir(p("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".wav") || n.ends_with(".evt"))
        .collect();
    names.sort();
    assert_eq!(names.len(), 21, "7 samples produce 21 wav/evt files");
    let synth_ok = names.iter().all(|n| same_bytes(&p("a").join(n), &p("b").join(n)));

    // train: same manifest and config, identical model bytes.
    std::fs::write(
        p("train.json"),
        r#"{"max_epochs": 2, "patience": 10, "seed": 3,
            "net": {"num_layers": 1, "hidden": 8, "input_dim": 407,
                    "output_dim": 257, "dropout_rate": 0.2,
                    "bidirectional": true, "seed": 3}}"#,
    )
    .unwrap();
    let manifest = s(p("a").join("manifest.json"));
    let cfg = s(p("train.json"));
    evsep(&["train", "--manifest", &manifest, "--config", &cfg, "--out", &s(p("m1.mdl"))]);
    evsep(&["train", "--manifest", &manifest, "--config", &cfg, "--out", &s(p("m2.mdl"))]);
    let train_ok = same_bytes(&p("m1.mdl"), &p("m2.mdl"));

    // separate: same model and inputs, identical waveform bytes.
    let mix = s(p("a").join("s0005_mix.wav"));
    let evts = s(p("a").join("s0005.evt"));
    evsep(&["separate", "--model", &s(p("m1.mdl")), "--mix", &mix, "--events", &evts, "--out", &s(p("o1.wav"))]);
    evsep(&["separate", "--model", &s(p("m1.mdl")), "--mix", &mix, "--events", &evts, "--out", &s(p("o2.wav"))]);
    let sep_ok = same_bytes(&p("o1.wav"), &p("o2.wav"));

    let pass = synth_ok && train_ok && sep_ok;
    report(&format!(
        "criterion 8 {}: rerun byte-identity synth {synth_ok}, train {train_ok}, separate {sep_ok}",
        if pass { "PASS" } else { "FAIL" }
    ));
    assert!(pass);
}

fn random_events(rng: &mut ChaCha8Rng) -> EventStream {
    let w = rng.random_range(1..=320u16);
    let h = rng.random_range(1..=240u16);
    let n = rng.random_range(0..50usize);
    let mut t = 0u64;
    let events: Vec<Event> = (0..n)
        .map(|_| {
            t += rng.random_range(0..10_000u64);
            Event {
                t_us: t,
                x: rng.random_range(0..w),
                y: rng.random_range(0..h),
                polarity: if rng.random_bool(0.5) { Polarity::Pos } else { Polarity::Neg },
            }
        })
        .collect();
    EventStream::new(w, h, events).unwrap()
}

fn random_feature_file(rng: &mut ChaCha8Rng) -> (Vec<FeatureFrame>, FeatureConfig) {
    let region = rng.random_range(1..=4u16);
    let cfg = FeatureConfig {
        width: region * rng.random_range(1..=5u16),
        height: region * rng.random_range(1..=5u16),
        region_size: region,
        include_rate: rng.random_bool(0.5),
        slice_ms: rng.random_range(1..=20),
    };
    // The payload is float32 on disk; identity holds over its value domain.
    let frames = (0..rng.random_range(0..6usize))
        .map(|i| FeatureFrame {
            slice_index: i,
            values: (0..cfg.dim()).map(|_| rng.random_range(-1e3f32..1e3) as f64).collect(),
        })
        .collect();
    (frames, cfg)
}

fn random_model(rng: &mut ChaCha8Rng) -> SavedModel {
    let net = NetConfig {
        num_layers: rng.random_range(1..=2),
        hidden: rng.random_range(1..=4),
        input_dim: rng.random_range(1..=6),
        output_dim: rng.random_range(1..=4),
        dropout_rate: rng.random_range(0.0..0.5),
        bidirectional: rng.random_bool(0.5),
        seed: rng.random(),
    };
    // Tensor payloads are float32 on disk; draw from that domain.
    let mut params = init_params(&net);
    for slice in params.tensors.flat_mut() {
        for v in slice {
            *v = *v as f32 as f64;
        }
    }
    let d = rng.random_range(1..=5usize);
    let bins = rng.random_range(1..=6usize);
    SavedModel {
        params,
        feature_norm: FeatureNorm {
            mean: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            std: (0..d).map(|_| rng.random_range(0.1..2.0)).collect(),
        },
        spec_norm: SpecNorm {
            mean: (0..bins).map(|_| rng.random_range(-1.0..1.0)).collect(),
            std: (0..bins).map(|_| rng.random_range(0.1..2.0)).collect(),
            speaker_id: format!("sp{}", rng.random_range(0..100)),
        },
        stft: StftConfig::default(),
        flow: FlowConfig::default(),
        feature: FeatureConfig::default(),
    }
}

#[test]
fn c9_format_roundtrips() {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    for _ in 0..1000 {
        let stream = random_events(&mut rng);
        let mut buf = Vec::new();
        write_events_to(&stream, &mut buf).unwrap();
        assert_eq!(read_events_from(&buf[..]).unwrap(), stream);
    }
    for _ in 0..1000 {
        let (frames, cfg) = random_feature_file(&mut rng);
        let mut buf = Vec::new();
        write_features_to(&frames, &cfg, &mut buf).unwrap();
        let (back_frames, back_cfg) = read_features_from(&mut &buf[..]).unwrap();
        assert_eq!(back_frames, frames);
        assert_eq!(back_cfg, cfg);
    }
    for _ in 0..1000 {
        let model = random_model(&mut rng);
        let mut buf = Vec::new();
        save_model_to(&model, &mut buf).unwrap();
        assert_eq!(load_model_from(&mut &buf[..]).unwrap(), model);
    }
    report("criterion 9 PASS: EVT1, FEA1, MDL1 read-write identity over 1000 randomized instances each");
}
