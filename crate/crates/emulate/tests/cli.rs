//! The `emulate` binary: outputs, determinism and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use emulate::config::{DatasetSpec, EmulatorSpec, RunConfig, SplitSpec};
use emulate::io::{read_json, read_table, write_dataset, write_times};
use emulate_core::dataset::TimeSeriesDataset;
use emulate_core::factorization::FactorMethod;
use emulate_core::gp::HyperSharing;
use nalgebra::DMatrix;

fn emulate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emulate")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small DS-II configuration written to `<dir>/run.toml`.
fn small_config(dir: &Path) -> PathBuf {
    let mut cfg = RunConfig::preset("ds2").unwrap();
    if let DatasetSpec::NonlinearDs { config } = &mut cfg.dataset {
        config.n_runs = 30;
    }
    cfg.timing.enabled = false;
    cfg.out = Some(dir.join("out"));
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path
}

fn files_in(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn whole_pipeline_is_deterministic_without_timing() {
    let runs: Vec<Vec<(PathBuf, Vec<u8>)>> = (0..2)
        .map(|_| {
            let tmp = tempfile::tempdir().unwrap();
            let cfg = small_config(tmp.path());
            for cmd in ["generate", "train", "evaluate"] {
                ok(emulate(&["--config", s(&cfg), cmd]));
            }
            // config.toml records the (per-run) output directory
            files_in(&tmp.path().join("out")).into_iter().filter(|(p, _)| p != Path::new("config.toml")).collect()
        })
        .collect();
    let names: Vec<&PathBuf> = runs[0].iter().map(|(p, _)| p).collect();
    for want in ["dataset/outputs.csv", "emulators/svd/basis.csv", "reports/mem-fit/report.json", "compare.md", "training_log.json"] {
        assert!(names.contains(&&PathBuf::from(want)), "missing {want}");
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn seed_changes_the_split() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(emulate(&["--config", s(&cfg), "--out", s(&a), "generate"]));
    ok(emulate(&["--config", s(&cfg), "--out", s(&b), "--seed", "5", "generate"]));
    let split = |d: &Path| std::fs::read(d.join("dataset/split.json")).unwrap();
    assert_ne!(split(&a), split(&b));
    assert_eq!(std::fs::read(a.join("dataset/outputs.csv")).unwrap(), std::fs::read(b.join("dataset/outputs.csv")).unwrap());
}

#[test]
fn negative_smoothing_width_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = emulate(&["--config", s(&cfg), "--set", "dataset.config.smoothing_sigma=-0.5", "generate"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("smoothing_sigma"));
}

#[test]
fn missing_inputs_are_input_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("files.toml");
    std::fs::write(
        &cfg,
        "experiment = \"files\"\n[dataset]\ngenerator = \"files\"\ndir = \"/nonexistent/dataset\"\n[split]\nn_train = 3\n\
         [[emulators]]\nkind = \"data_driven\"\nname = \"svd\"\nmethod = \"svd\"\nq = 1\n",
    )
    .unwrap();
    assert_eq!(code(&emulate(&["--config", s(&cfg), "train"])), 2);
    assert_eq!(code(&emulate(&["--config", "/nonexistent/run.toml", "train"])), 2);
    let times = tmp.path().join("t.csv");
    write_times(&times, &[0.0]).unwrap();
    assert_eq!(code(&emulate(&["predict", "--bundle", s(tmp.path()), "--theta", "0.1", "--times", s(&times)])), 2);
}

fn trained(tmp: &Path) -> PathBuf {
    let cfg = small_config(tmp);
    ok(emulate(&["--config", s(&cfg), "train"]));
    tmp.join("out/emulators")
}

#[test]
fn predictions_outside_the_time_grid_are_domain_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let bundles = trained(tmp.path());
    let times = tmp.path().join("times.csv");
    write_times(&times, &[0.5, 1.5]).unwrap();
    let out = emulate(&["predict", "--bundle", s(&bundles.join("svd")), "--theta", "0.1", "--times", s(&times)]);
    assert_eq!(code(&out), 3, "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn batch_prediction_equals_single_predictions() {
    let tmp = tempfile::tempdir().unwrap();
    let bundles = trained(tmp.path());
    let times = tmp.path().join("times.csv");
    write_times(&times, &[0.0, 0.13, 0.5, 0.77, 1.0]).unwrap();
    let thetas = ["-0.8", "0.05", "0.6"];
    for name in ["svd", "mem-exact", "mem-fit"] {
        let bundle = bundles.join(name);
        let batch = tmp.path().join(format!("{name}-batch.csv"));
        let joined = thetas.join(";");
        ok(emulate(&["--out", s(&batch), "predict", "--bundle", s(&bundle), "--theta", &joined, "--times", s(&times)]));
        let (header, rows) = read_table(&batch).unwrap();
        assert_eq!(header, ["t", "series_0001", "series_0002", "series_0003"]);
        for (k, th) in thetas.iter().enumerate() {
            let out = ok(emulate(&["predict", "--bundle", s(&bundle), "--theta", th, "--times", s(&times)]));
            let text = String::from_utf8(out.stdout).unwrap();
            let single: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
            let column: Vec<f64> = rows.iter().map(|r| r[k + 1]).collect();
            assert_eq!(single.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), column.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), "{name} θ={th}");
        }
    }
}

#[test]
fn rank_one_data_is_fit_exactly_by_one_component() {
    let tmp = tempfile::tempdir().unwrap();
    let times: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
    let thetas: Vec<Vec<f64>> = (0..8).map(|j| vec![0.5 + j as f64 * 0.25]).collect();
    let y = DMatrix::from_fn(times.len(), thetas.len(), |i, j| thetas[j][0] * (1.0 + times[i] * times[i]));
    let ds = TimeSeriesDataset::new(times, y.clone(), thetas, vec!["a".into()]).unwrap();
    let data = tmp.path().join("data");
    write_dataset(&data, &ds, None).unwrap();
    let cfg = RunConfig {
        experiment: "rank1".into(),
        seed: 1,
        out: Some(tmp.path().join("out")),
        dataset: DatasetSpec::Files { dir: data },
        split: SplitSpec { n_train: 6, train_time_indices: None },
        emulators: vec![EmulatorSpec::DataDriven {
            name: "svd".into(),
            method: FactorMethod::Svd,
            q: 1,
            nmf_a: 0.0,
            nmf_b: 0.0,
            clip_negative: false,
            sharing: HyperSharing::PerOutput,
        }],
        timing: Default::default(),
    };
    let path = tmp.path().join("run.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    ok(emulate(&["--config", s(&path), "train"]));
    let log: serde_json::Value = read_json(&tmp.path().join("out/training_log.json")).unwrap();
    let err = log[0]["train_max_abs_error"].as_f64().unwrap();
    assert!(err <= 1e-8 * y.amax(), "{err}");
}

#[test]
fn repro_rejects_unknown_experiments() {
    let out = emulate(&["repro", "ds9"]);
    assert_eq!(code(&out), 2);
}
