use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use reencoder_core::audio::{read_wav, write_wav, WavFormat};
use reencoder_core::evaluation::load_report;
use reencoder_core::latent::{read_latent_file, LatentFile};
use reencoder_core::synth::{mono_corpus, panned_corpus, SynthConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_reencoder"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A barely trained tiny autoencoder shared by the tests.
fn tiny_vae() -> &'static (tempfile::TempDir, PathBuf) {
    static VAE: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    VAE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vae.ckpt");
        ok(&[
            "train-vae",
            "--preset",
            "tiny",
            "--set",
            "train.steps=3",
            "--set",
            "train.batch_size=2",
            "--set",
            "corpus.clips=4",
            "--out",
            s(&path),
        ]);
        (dir, path)
    })
}

const TINY_MODEL: [&str; 8] = [
    "--set",
    "model.hidden_dim=16",
    "--set",
    "model.num_blocks=1",
    "--set",
    "corpus.synth.clips=6",
    "--set",
    "training.batch_size=2",
];

#[test]
fn unknown_flag_and_config_key_exit_2() {
    let o = run(&["train-bwe", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["show-config", "train", "--preset", "desk-bwe", "--set", "training.learning_rate=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
    let o = run(&["show-config", "train", "--preset", "desk-bwe", "--set", "nosuch.table=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nosuch"));
    let o = run(&["show-config", "train", "--preset", "no-such-preset"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn full_preset_resolves_recipe() {
    let o = ok(&["show-config", "train", "--preset", "full-bwe"]);
    let t = stdout(&o);
    for needle in ["batch_size = 256", "chunk_seconds = 1.4", "total_steps = 250000", "w_rec = 10.0"] {
        assert!(t.contains(needle), "missing `{needle}` in\n{t}");
    }
    let desk: toml::Value = toml::from_str(&stdout(&ok(&["show-config", "train", "--preset", "desk-bwe"]))).unwrap();
    assert!(desk["training"]["total_steps"].as_integer().unwrap() <= 2000);
    assert_eq!(desk["model"]["latent_channels_in"].as_integer(), Some(16));
}

#[test]
fn flops_matches_reference_costs() {
    let parse = |o: &Output| -> f64 {
        let t = stdout(o);
        let line = t.lines().find(|l| l.starts_with("gflops_per_second=")).unwrap();
        line["gflops_per_second=".len()..].split_whitespace().next().unwrap().parse().unwrap()
    };
    let m = parse(&ok(&["flops", "--model", "m"]));
    assert!((m - 1.6).abs() <= 0.15 * 1.6, "{m}");
    let small = parse(&ok(&["flops", "--model", "s"]));
    assert!((small - 0.4).abs() <= 0.15 * 0.4, "{small}");
    assert_eq!(run(&["flops", "--model", "xl"]).status.code(), Some(2));
}

#[test]
fn missing_autoencoder_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "train-bwe",
        "--preset",
        "desk-bwe",
        "--vae",
        s(&dir.path().join("absent.ckpt")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn tiny_encode_decode_shapes() {
    let (_d, vae) = tiny_vae();
    let dir = tempfile::tempdir().unwrap();
    let x = mono_corpus(&SynthConfig::tiny(1, 3)).unwrap().remove(0);
    let wav = dir.path().join("x.wav");
    write_wav(&wav, &x, WavFormat::Float32).unwrap();
    let relt = dir.path().join("x.relt");
    ok(&["encode", "--vae", s(vae), "--input", s(&wav), "--output", s(&relt)]);
    let LatentFile::Single(z) = read_latent_file(&relt).unwrap() else {
        panic!("mono input gives a single latent")
    };
    assert_eq!((z.channels(), z.frames()), (16, 125));
    let back = dir.path().join("y.wav");
    ok(&["decode", "--vae", s(vae), "--input", s(&relt), "--output", s(&back)]);
    assert_eq!(read_wav(&back).unwrap().len(), 125 * 64);
    let o = ok(&["inspect", s(&relt)]);
    assert!(stdout(&o).contains("channels=16 frames=125"));
    let o = ok(&["inspect", s(vae)]);
    assert!(stdout(&o).contains("kind: toy-vae"));
}

#[test]
fn full_scale_encode_shape() {
    let dir = tempfile::tempdir().unwrap();
    let vae = dir.path().join("vae.ckpt");
    ok(&[
        "train-vae",
        "--preset",
        "full-scale",
        "--set",
        "train.steps=1",
        "--set",
        "train.batch_size=1",
        "--set",
        "corpus.clips=1",
        "--out",
        s(&vae),
    ]);
    let x = mono_corpus(&SynthConfig {
        sample_rate_hz: 44100,
        ..SynthConfig::tiny(1, 3)
    })
    .unwrap()
    .remove(0);
    let wav = dir.path().join("x.wav");
    write_wav(&wav, &x, WavFormat::Float32).unwrap();
    let relt = dir.path().join("x.relt");
    let o = ok(&["encode", "--vae", s(&vae), "--input", s(&wav), "--output", s(&relt)]);
    assert!(stdout(&o).contains("channels=64 frames=44"));
    let back = dir.path().join("y.wav");
    ok(&["decode", "--vae", s(&vae), "--input", s(&relt), "--output", s(&back)]);
    assert_eq!(read_wav(&back).unwrap().len(), 44 * 1024);
}

fn train_bwe(vae: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec![
        "train-bwe",
        "--preset",
        "desk-bwe",
        "--vae",
        s(vae),
        "--out",
        s(out),
        "--set",
        "training.total_steps=4",
        "--set",
        "training.warmup_main=2",
        "--set",
        "training.warmup_disc=2",
        "--set",
        "checkpoint_every=2",
        "--set",
        "discriminator.internal_channels=4",
        "--set",
        "training.adversarial_start=1",
    ];
    args.extend_from_slice(&TINY_MODEL);
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn bwe_training_resume_and_inference() {
    let (_d, vae) = tiny_vae();
    let dir = tempfile::tempdir().unwrap();
    let straight = dir.path().join("straight");
    train_bwe(vae, &straight, &[]);
    assert!(straight.join("step_0000002.ckpt").is_file());
    let trace = std::fs::read_to_string(straight.join("trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 4);

    let resumed = dir.path().join("resumed");
    let ckpt = straight.join("step_0000002.ckpt");
    train_bwe(vae, &resumed, &["--resume", s(&ckpt)]);
    assert_eq!(
        std::fs::read(straight.join("final.ckpt")).unwrap(),
        std::fs::read(resumed.join("final.ckpt")).unwrap(),
        "resumed run must end in the same state"
    );
    let resumed_trace = std::fs::read_to_string(resumed.join("trace.jsonl")).unwrap();
    assert_eq!(resumed_trace.lines().collect::<Vec<_>>(), trace.lines().skip(2).collect::<Vec<_>>());

    // waveform and latent inputs
    let ck = straight.join("final.ckpt");
    let x = mono_corpus(&SynthConfig {
        sample_rate_hz: 4000,
        ..SynthConfig::tiny(1, 5)
    })
    .unwrap()
    .remove(0);
    let wav = dir.path().join("low.wav");
    write_wav(&wav, &x, WavFormat::Float32).unwrap();
    let out = dir.path().join("full.wav");
    let relt_out = dir.path().join("full.relt");
    let o = ok(&[
        "infer", "--task", "bwe", "--checkpoint", s(&ck), "--vae", s(vae), "--input", s(&wav), "--output",
        s(&out), "--latent-out", s(&relt_out),
    ]);
    assert!(stderr(&o).contains("encoder -> predictor"));
    let y = read_wav(&out).unwrap();
    assert_eq!((y.sample_rate_hz(), y.len()), (8000, 8000));

    let x8 = mono_corpus(&SynthConfig::tiny(1, 5)).unwrap().remove(0);
    let wav8 = dir.path().join("x8.wav");
    write_wav(&wav8, &x8, WavFormat::Float32).unwrap();
    let relt_in = dir.path().join("x8.relt");
    ok(&["encode", "--vae", s(vae), "--input", s(&wav8), "--output", s(&relt_in)]);
    let o = ok(&[
        "infer", "--task", "bwe", "--checkpoint", s(&ck), "--vae", s(vae), "--input", s(&relt_in), "--output",
        s(&out),
    ]);
    let log = stderr(&o);
    assert!(log.contains("encoder skipped") && !log.contains("encoder -> predictor"), "{log}");

    // a bandwidth-extension checkpoint is not an upmixer
    let o = run(&[
        "infer", "--task", "m2s", "--checkpoint", s(&ck), "--vae", s(vae), "--input", s(&wav8), "--output",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn m2s_conditions_and_sweep() {
    let (_d, vae) = tiny_vae();
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("m2s");
    let mut args = vec![
        "train-m2s",
        "--preset",
        "desk-m2s",
        "--vae",
        s(vae),
        "--out",
        s(&run_dir),
        "--set",
        "training.total_steps=2",
        "--set",
        "training.warmup_main=1",
        "--set",
        "training.warmup_disc=1",
        "--set",
        "model.condition_dim=8",
        "--set",
        "encoder.output_dim=8",
        "--set",
        "encoder.hidden_dim=16",
        "--set",
        "encoder.num_blocks=1",
    ];
    args.extend_from_slice(&TINY_MODEL);
    ok(&args);
    let ck = run_dir.join("final.ckpt");
    let x = panned_corpus(&SynthConfig::tiny(1, 9)).unwrap().remove(0).audio;
    let stereo = dir.path().join("ref.wav");
    write_wav(&stereo, &x, WavFormat::Float32).unwrap();
    let mono = dir.path().join("mono.wav");
    write_wav(&mono, &reencoder_core::signal::downmix(&x).unwrap(), WavFormat::Float32).unwrap();

    let infer = |out: &Path, extra: &[&str]| {
        let mut a = vec![
            "infer", "--task", "m2s", "--checkpoint", s(&ck), "--vae", s(vae), "--input", s(&mono), "--output",
            s(out),
        ];
        a.extend_from_slice(extra);
        ok(&a);
        std::fs::read(out).unwrap()
    };
    let p = |n: &str| dir.path().join(n);
    let a = infer(&p("a.wav"), &["--condition", "prior", "--seed", "7"]);
    let b = infer(&p("b.wav"), &["--condition", "prior", "--seed", "7"]);
    let c = infer(&p("c.wav"), &["--condition", "prior", "--seed", "8"]);
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(read_wav(p("a.wav")).unwrap().channels(), 2);
    // a stored condition reproduces the run that saved it
    let saved = p("cond.json");
    let d = infer(&p("d.wav"), &["--condition", "seed", "--seed", "7", "--save-condition", s(&saved)]);
    assert_eq!(d, a);
    let e = infer(&p("e.wav"), &["--condition", "file", "--condition-file", s(&saved)]);
    assert_eq!(e, a);
    infer(&p("f.wav"), &["--condition", "reference", "--reference", s(&stereo)]);
    let o = run(&[
        "infer", "--task", "m2s", "--checkpoint", s(&ck), "--vae", s(vae), "--input", s(&mono), "--output",
        s(&p("g.wav")), "--condition", "seed",
    ]);
    assert_eq!(o.status.code(), Some(2));

    let sweep_dir = p("sweep");
    let o = ok(&[
        "sweep", "--checkpoint", s(&ck), "--vae", s(vae), "--clips", "4", "--lambdas", "0,1", "--out",
        s(&sweep_dir),
    ]);
    assert!(stdout(&o).contains("lambda=1.00"));
    let csv = std::fs::read_to_string(sweep_dir.join("sweep.csv")).unwrap();
    assert!(csv.starts_with("clip_id,lambda,gt_ratio,out_ratio"));
    assert_eq!(csv.lines().count(), 1 + 4 * 2);
    let o = run(&[
        "sweep", "--checkpoint", s(&ck), "--vae", s(vae), "--clips", "0", "--out", s(&sweep_dir),
    ]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn eval_of_identical_corpora_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let refs = dir.path().join("ref");
    std::fs::create_dir_all(&refs).unwrap();
    for (i, x) in mono_corpus(&SynthConfig::tiny(3, 4)).unwrap().iter().enumerate() {
        write_wav(refs.join(format!("clip_{i:04}.wav")), x, WavFormat::Float32).unwrap();
    }
    let out = dir.path().join("report");
    ok(&["eval", "--task", "bwe", "--reference", s(&refs), "--candidate", s(&refs), "--out", s(&out)]);
    let r = load_report(out.join("eval.json")).unwrap();
    let m = r.rows[0].banded.unwrap();
    for v in [m.full, m.low, m.high] {
        assert_eq!((v.stft_d, v.mel_d), (0.0, 0.0));
    }
    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let o = run(&["eval", "--task", "bwe", "--reference", s(&empty), "--candidate", s(&refs), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(4));
}
