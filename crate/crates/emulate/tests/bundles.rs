//! Emulators written to disk and read back predict exactly what they predicted
//! before; datasets survive a write/read cycle bit for bit.

use emulate::bundle::{read_bundle, write_bundle, EmulatorMeta};
use emulate::config::{CouplingSpec, DatasetSpec, EmulatorSpec, Mapping, RunConfig};
use emulate::io::{read_dataset, write_dataset};
use emulate::pipeline::{prepare, train, Prepared};
use emulate_core::factorization::FactorMethod;
use emulate_core::gp::HyperSharing;
use emulate_core::Emulator;

fn small_catchment() -> RunConfig {
    let mut cfg = RunConfig::preset("catchment").unwrap();
    if let DatasetSpec::Catchment { design, .. } = &mut cfg.dataset {
        design.n_intensities = 6;
        design.n_durations = 5;
    }
    cfg.split.n_train = 20;
    cfg.timing.enabled = false;
    cfg
}

fn mem(name: &str, mapping: Mapping, warp: bool) -> EmulatorSpec {
    EmulatorSpec::Mem {
        name: name.into(),
        mapping,
        coupling: CouplingSpec::Matern { nu: 1.5, lengthscale: 0.5, optimize_runs: 0, restarts: 1 },
        warp,
        time_stride: 4,
        sigma0: 0.0,
    }
}

fn round_trip(spec: &EmulatorSpec, prep: &Prepared) -> EmulatorMeta {
    let (trained, log) = train(spec, prep).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_bundle(dir.path(), spec.name(), &trained, &log.proxies, 7).unwrap();
    let (meta, loaded) = read_bundle(dir.path()).unwrap();
    let times = prep.ds.times();
    for &j in prep.test_runs() {
        let theta = &prep.ds.params()[j];
        let before = trained.predict(theta, times).unwrap();
        let after = loaded.predict(theta, times).unwrap();
        assert_eq!(before, after, "{} run {j}", spec.name());
    }
    meta
}

#[test]
fn catchment_bundles_reload_identically() {
    let prep = prepare(&small_catchment()).unwrap();
    let specs = [
        EmulatorSpec::DataDriven {
            name: "nmf".into(),
            method: FactorMethod::Nmf,
            q: 4,
            nmf_a: 0.0,
            nmf_b: 0.0,
            clip_negative: true,
            sharing: HyperSharing::Shared,
        },
        mem("mem-exact", Mapping::Exact, false),
        mem("mem-fit", Mapping::Fitted, false),
        mem("mem-warp", Mapping::Fitted, true),
    ];
    for spec in &specs {
        let meta = round_trip(spec, &prep);
        match (spec, meta) {
            (EmulatorSpec::DataDriven { .. }, EmulatorMeta::DataDriven { q, clip_negative, .. }) => {
                assert_eq!(q, 4);
                assert!(clip_negative);
            }
            (EmulatorSpec::Mem { warp, .. }, EmulatorMeta::Mem { warped, .. }) => assert_eq!(*warp, warped),
            (s, m) => panic!("{} came back as {m:?}", s.name()),
        }
    }
}

#[test]
fn svd_bundle_on_the_nonlinear_system_reloads_identically() {
    let mut cfg = RunConfig::preset("ds2").unwrap();
    if let DatasetSpec::NonlinearDs { config } = &mut cfg.dataset {
        config.n_runs = 30;
    }
    let prep = prepare(&cfg).unwrap();
    for spec in &cfg.emulators {
        round_trip(spec, &prep);
    }
}

#[test]
fn dataset_round_trips_bit_for_bit() {
    let cfg = small_catchment();
    let prep = prepare(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &prep.ds, Some(&cfg.dataset)).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.times(), prep.ds.times());
    assert_eq!(back.params(), prep.ds.params());
    assert_eq!(back.param_names(), prep.ds.param_names());
    assert_eq!(back.split(), prep.ds.split());
    assert!(back.outputs().iter().zip(prep.ds.outputs().iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn bundle_for_a_different_grid_is_rejected() {
    let prep = prepare(&small_catchment()).unwrap();
    let spec = EmulatorSpec::DataDriven {
        name: "svd".into(),
        method: FactorMethod::Svd,
        q: 3,
        nmf_a: 0.0,
        nmf_b: 0.0,
        clip_negative: false,
        sharing: HyperSharing::Shared,
    };
    let (trained, log) = train(&spec, &prep).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_bundle(dir.path(), "svd", &trained, &log.proxies, 0).unwrap();
    let times = dir.path().join("times.csv");
    let text = std::fs::read_to_string(&times).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let last = lines.len() - 1;
    let shifted: f64 = lines[last].parse::<f64>().unwrap() + 1.0;
    lines[last] = format!("{shifted:.16e}");
    std::fs::write(&times, lines.join("\n") + "\n").unwrap();
    assert!(read_bundle(dir.path()).is_err());
}
