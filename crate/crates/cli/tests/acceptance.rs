//! Acceptance suite: prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero if any criterion fails.
//!
//! The full desk-scale sweeps take hours and only run with
//! `GCN_ACCEPTANCE_SLOW=1`. `GCN_ACCEPTANCE_ONLY=3,8` restricts the run to
//! the listed criteria.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use gcn_core::config::{load_splits, ExperimentConfig};
use gcn_core::experiment::{sweep, train_run, SweepAxis, SweepRow};
use gcn_core::gradcheck::{run_gradcheck, Corruption, GradcheckConfig};
use gcn_core::verify::{max_relative_error, oracle_gabor};
use gcn_core::{build_bank, correlate2d, correlate2d_backward, Filter4, GaborBank, GaborParams, GofLayer, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Criterion = (usize, &'static str, fn() -> Verdict);

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(name: &str) -> PathBuf {
    root().join("configs").join(name)
}

fn gcn(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gcn"))
        .args(args)
        .env("GCN_THREADS", "1")
        .output()
        .expect("spawn gcn")
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor4 {
    let data = (0..shape.iter().product())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Tensor4::from_vec(shape, data).unwrap()
}

fn bank_oracle() -> Verdict {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut points = 0usize;
    for u_count in 2..=7 {
        for v_count in 1..=4 {
            for w in [3, 5, 7] {
                let params = GaborParams::new(u_count, v_count, w);
                let bank = build_bank(params).unwrap();
                let r = (w / 2) as i64;
                for u in 0..u_count {
                    for v in 1..=v_count {
                        for y in -r..=r {
                            for x in -r..=r {
                                let want = oracle_gabor(u_count, params.sigma, u, v, x, y);
                                worst = worst.max((bank.value(u, v, x, y) - want).abs());
                                points += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-12 && secs < 1.0,
        format!("{points} points, max |bank - oracle| = {worst:.2e} (<= 1e-12), {secs:.3}s (< 1s)"),
    )
}

fn worked_example_shapes() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let bank = build_bank(GaborParams::new(4, 4, 3)).unwrap();
    let x = random_tensor(&mut rng, [1, 4, 32, 32])
        .with_orient_groups(Some(4))
        .unwrap();
    let one = GofLayer::new(4, 4, 1, bank.clone(), 1, 0, 1, &mut rng)
        .unwrap()
        .forward(&x)
        .unwrap();
    let twenty = GofLayer::new(4, 4, 20, bank, 1, 0, 1, &mut rng)
        .unwrap()
        .forward(&x)
        .unwrap();
    check(
        one.shape() == [1, 4, 30, 30] && twenty.shape() == [1, 80, 30, 30] && twenty.orient_groups() == Some(4),
        format!(
            "1 GoF -> {:?}, 20 GoFs -> {:?} in {:?} orientation groups",
            one.shape(),
            twenty.shape(),
            twenty.orient_groups()
        ),
    )
}

fn gradient_fidelity() -> Verdict {
    let start = Instant::now();
    let text = fs::read_to_string(config("gradcheck.toml")).unwrap();
    let cfg: GradcheckConfig = toml::from_str(&text).unwrap();
    let report = run_gradcheck(&cfg, Corruption::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let layers = report.cases.iter().filter(|c| c.kind == "layer").count();
    let nets = report.cases.iter().filter(|c| c.kind == "network").count();
    check(
        report.passed && report.max_rel_error <= 1e-5 && cfg.cases >= 20 && secs < 120.0,
        format!(
            "{} configurations ({layers} layer, {nets} two-layer network checks), max relative error {:.2e} (<= 1e-5), {secs:.1}s (< 120s)",
            cfg.cases, report.max_rel_error
        ),
    )
}

fn parameter_compression() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut notes = Vec::new();
    let mut ok = true;
    for name in [
        "desk_gcn.toml",
        "desk_cnn.toml",
        "desk_gcn_rot.toml",
        "desk_cnn_rot.toml",
    ] {
        let out_path = dir.path().join("params.json");
        let out = gcn(&[
            "params",
            "--config",
            config(name).to_str().unwrap(),
            "--out",
            out_path.to_str().unwrap(),
        ]);
        let report: Value = serde_json::from_slice(&fs::read(&out_path).unwrap_or_default()).unwrap_or(Value::Null);
        let persisted = report["model"]["conv_persisted"].as_u64().unwrap_or(0);
        let effective = report["model"]["conv_effective"].as_u64().unwrap_or(0);
        let u = if report["kind"] == "gcn" {
            report["orientations"].as_u64().unwrap_or(0)
        } else {
            1
        };
        let holds = out.status.success() && report["compression_holds"] == true && persisted * u == effective;
        ok &= holds;
        notes.push(format!("{name}: {persisted} x {u} = {effective}"));
    }
    check(ok, notes.join("; "))
}

fn desk_learning() -> Verdict {
    let start = Instant::now();
    let run = |name: &str, seed: u64| {
        let mut cfg = ExperimentConfig::load(&config(name)).unwrap();
        cfg.run.seed = seed;
        let splits = load_splits(&cfg.data).unwrap();
        train_run(&cfg, &splits, false, |_| {}).unwrap().summary.test_error
    };
    let mnist = run("desk_gcn.toml", 0);
    let gcn_rot: Vec<f64> = (0..3).map(|s| run("desk_gcn_rot.toml", s)).collect();
    let cnn_rot: Vec<f64> = (0..3).map(|s| run("desk_cnn_rot.toml", s)).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (g, c) = (mean(&gcn_rot), mean(&cnn_rot));
    let secs = start.elapsed().as_secs_f64();
    check(
        mnist <= 0.06 && g < c && secs <= 1800.0,
        format!(
            "GCN MNIST test error {mnist:.4} (<= 0.06); rotated mean over seeds 0-2: GCN {g:.4} {gcn_rot:?} vs matched CNN {c:.4} {cnn_rot:?}; {:.1} min (<= 30)",
            secs / 60.0
        ),
    )
}

fn sweep_shape(axis: SweepAxis, rows: &[SweepRow]) -> bool {
    let keys: Vec<(usize, usize)> = rows.iter().map(|r| (r.u, r.v)).collect();
    let repeats_ok = rows.iter().all(|r| {
        let m = r.test_errors.iter().sum::<f64>() / r.test_errors.len() as f64;
        (m - r.mean_test_error).abs() < 1e-15
    });
    let grid_ok = match axis {
        SweepAxis::Orientation => keys.iter().map(|k| k.0).eq(2..=7),
        SweepAxis::Scale => keys.iter().map(|k| k.1).eq([1, 4]),
    };
    repeats_ok && grid_ok
}

fn sweep_machinery() -> Verdict {
    let slow = std::env::var("GCN_ACCEPTANCE_SLOW").is_ok_and(|v| v == "1");
    let mut cfg = ExperimentConfig::load(&config("desk_gcn_rot.toml")).unwrap();
    let repeats = if slow { 3 } else { 2 };
    if !slow {
        cfg.schedule.epochs = 1;
        cfg.data.train_size = 128;
        cfg.data.val_size = 32;
        cfg.data.test_size = 64;
    }
    let splits = load_splits(&cfg.data).unwrap();
    let start = Instant::now();
    let mut ok = true;
    for axis in [SweepAxis::Orientation, SweepAxis::Scale] {
        let first = sweep(&cfg, &splits, axis, repeats, |_, _, _| {}).unwrap();
        ok &= sweep_shape(axis, &first);
        if !slow && axis == SweepAxis::Scale {
            let again = sweep(&cfg, &splits, axis, repeats, |_, _, _| {}).unwrap();
            ok &= first == again;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if slow {
        check(
            ok && secs <= 3.0 * 3600.0,
            format!(
                "desk-scale U=2..7 and V={{1,4}} sweeps, {repeats} repeats, {:.1} min (<= 180)",
                secs / 60.0
            ),
        )
    } else if ok {
        Verdict::Skip(format!(
            "reduced sweeps (1 epoch, 128 samples, {repeats} repeats) give the right rows and rerun identically in {secs:.0}s; \
             desk-scale sweeps need GCN_ACCEPTANCE_SLOW=1"
        ))
    } else {
        Verdict::Fail("reduced sweeps produced wrong rows or differed between reruns".into())
    }
}

fn tiny_config(dir: &Path) -> PathBuf {
    let data = root().join("data");
    let text = format!(
        "[model]\nkind = \"gcn\"\nwidths = [4, 8]\nscales = 2\nfc_hidden = 32\n\
         [schedule]\nbatch_size = 32\ninitial_lr = 1.0\nepochs = 2\n\
         [data]\ntrain_images = {:?}\ntrain_labels = {:?}\ntrain_size = 300\nval_size = 100\ntest_size = 200\nrotate = true\n",
        data.join("mnist5k-images-idx3-ubyte"),
        data.join("mnist5k-labels-idx1-ubyte"),
    );
    let path = dir.join("tiny.toml");
    fs::write(&path, text).unwrap();
    path
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let images = root().join("data/mnist5k-images-idx3-ubyte");
    let labels = root().join("data/mnist5k-labels-idx1-ubyte");
    let mut mismatches = Vec::new();
    let mut runs = 0;
    let mut twice = |name: &str, files: &[&str], args: &dyn Fn(&Path) -> Vec<String>| {
        let outs: Vec<(Vec<u8>, Vec<Vec<u8>>)> = ["a", "b"]
            .iter()
            .map(|tag| {
                let d = dir.path().join(format!("{name}-{tag}"));
                fs::create_dir_all(&d).unwrap();
                let a = args(&d);
                let out = gcn(&a.iter().map(String::as_str).collect::<Vec<_>>());
                assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
                (out.stdout, files.iter().map(|f| fs::read(d.join(f)).unwrap()).collect())
            })
            .collect();
        runs += 1;
        if outs[0] != outs[1] {
            mismatches.push(name.to_string());
        }
    };
    let p = |d: &Path, f: &str| d.join(f).to_str().unwrap().to_string();
    twice("gen-filters", &["bank.csv", "gabor_u0_v1.png"], &|d| {
        [
            "gen-filters",
            "--u",
            "4",
            "--v",
            "4",
            "--kernel",
            "5",
            "--out",
            d.to_str().unwrap(),
        ]
        .map(String::from)
        .to_vec()
    });
    twice("gradcheck", &["report.json"], &|d| {
        vec![
            "gradcheck".into(),
            "--config".into(),
            config("gradcheck_u1.toml").to_str().unwrap().into(),
            "--out".into(),
            p(d, "report.json"),
        ]
    });
    twice("train", &["epochs.csv", "summary.json", "model.ckpt"], &|d| {
        [
            "train",
            "--config",
            cfg,
            "--seed",
            "4",
            "--no-timing",
            "--out",
            d.to_str().unwrap(),
        ]
        .map(String::from)
        .to_vec()
    });
    twice("make-rot", &["img", "lab"], &|d| {
        vec![
            "make-rot".into(),
            "--images".into(),
            images.to_str().unwrap().into(),
            "--labels".into(),
            labels.to_str().unwrap().into(),
            "--seed".into(),
            "5".into(),
            "--out-images".into(),
            p(d, "img"),
            "--out-labels".into(),
            p(d, "lab"),
        ]
    });
    twice("sweep", &["sweep.csv"], &|d| {
        [
            "sweep",
            "--axis",
            "scale",
            "--config",
            cfg,
            "--repeats",
            "1",
            "--epochs",
            "1",
            "--seed",
            "2",
            "--out",
        ]
        .map(String::from)
        .into_iter()
        .chain([p(d, "sweep.csv")])
        .collect()
    });
    check(
        mismatches.is_empty(),
        if mismatches.is_empty() {
            format!("{runs} seeded commands rerun at 1 thread: outputs bit-identical")
        } else {
            format!("outputs differ for {}", mismatches.join(", "))
        },
    )
}

fn identity_modulation() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for (u_count, w, pad) in [(1, 3, 0), (4, 3, 1), (4, 5, 2)] {
        let bank = GaborBank::constant(GaborParams::new(u_count, 1, w), 1.0).unwrap();
        let shape = [3, 2, w, w];
        let learned = Filter4::from_vec(
            shape,
            (0..shape.iter().product())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap();
        let gof = GofLayer::from_parts(learned.clone(), bank, 1, 1, pad, 1).unwrap();
        let x = random_tensor(&mut rng, [2, 2, 9, 9]);
        let plain = correlate2d(&x, &learned, pad, 1).unwrap();
        let out = gof.forward(&x).unwrap();
        let [n, m, h, wd] = plain.shape();
        let g = random_tensor(&mut rng, out.shape());
        let mut summed = Tensor4::zeros(plain.shape());
        for s in 0..n {
            for i in 0..m {
                for u in 0..u_count {
                    for y in 0..h {
                        for xx in 0..wd {
                            worst = worst.max((out.get(s, i * u_count + u, y, xx) - plain.get(s, i, y, xx)).abs());
                            let acc = summed.get(s, i, y, xx) + g.get(s, i * u_count + u, y, xx);
                            summed.set(s, i, y, xx, acc);
                        }
                    }
                }
            }
        }
        let grads = gof.backward(&x, &g).unwrap();
        let (gx, gw) = correlate2d_backward(&x, &learned, &summed, pad, 1, true).unwrap();
        worst = worst.max(max_relative_error(grads.learned.data(), gw.data()));
        worst = worst.max(max_relative_error(grads.input.unwrap().data(), gx.unwrap().data()));
    }
    check(
        worst <= 1e-10,
        format!("all-ones bank vs plain convolution, forward and backward: max deviation {worst:.2e} (<= 1e-10)"),
    )
}

fn main() -> ExitCode {
    let only: Option<Vec<usize>> = std::env::var("GCN_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [Criterion; 8] = [
        (1, "gabor bank vs oracle", bank_oracle),
        (2, "worked-example shapes", worked_example_shapes),
        (3, "gradient fidelity", gradient_fidelity),
        (4, "parameter compression", parameter_compression),
        (5, "desk-scale learning", desk_learning),
        (6, "sweep machinery", sweep_machinery),
        (7, "determinism", determinism),
        (8, "identity modulation", identity_modulation),
    ];
    let mut failed = 0;
    for (n, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let (tag, detail) = match f() {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::Skip(d) => ("SKIP", d),
        };
        println!("criterion {n} {tag}  {name}: {detail}");
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
