//! Run configuration: a TOML file describing the dataset, the split, and the
//! emulators to train, with `key.path=value` overrides from the command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use emulate_core::dataset::{CatchmentDesign, NonlinearDsConfig, ToyCatchmentConfig};
use emulate_core::factorization::FactorMethod;
use emulate_core::gp::{HyperSharing, MaternNu};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub dataset: DatasetSpec,
    pub split: SplitSpec,
    pub emulators: Vec<EmulatorSpec>,
    #[serde(default)]
    pub timing: TimingSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    NonlinearDs { config: NonlinearDsConfig },
    Catchment {
        simulator: ToyCatchmentConfig,
        design: CatchmentDesign,
        /// Number of output times kept from the simulator grid.
        output_times: usize,
        /// Exponent of the time subsampling `t_k ∝ (k/(n−1))^power`.
        spacing_power: f64,
    },
    /// A dataset directory written by `generate`.
    Files { dir: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub n_train: usize,
    /// Dataset time indices used for training (all when absent).
    #[serde(default)]
    pub train_time_indices: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSpec {
    /// Wall-clock timings are the only non-reproducible outputs.
    #[serde(default = "yes")]
    pub enabled: bool,
    pub repetitions: usize,
    /// Test runs timed per repetition (all when 0).
    pub runs: usize,
}

impl Default for TimingSpec {
    fn default() -> Self {
        Self { enabled: true, repetitions: 5, runs: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mapping {
    /// Analytic θ → ψ of the generator.
    Exact,
    /// Least-squares proxy fits interpolated by GPs.
    Fitted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CouplingSpec {
    Uncoupled {
        #[serde(default = "one")]
        variance: f64,
    },
    Matern {
        nu: f64,
        /// Initial lengthscale per parameter, as a fraction of the parameter range.
        #[serde(default = "half")]
        lengthscale: f64,
        /// Runs used for the marginal-likelihood search (all when 0).
        #[serde(default)]
        optimize_runs: usize,
        #[serde(default = "default_restarts")]
        restarts: usize,
    },
}

fn yes() -> bool {
    true
}
fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn default_restarts() -> usize {
    3
}
fn default_stride() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmulatorSpec {
    DataDriven {
        name: String,
        method: FactorMethod,
        q: usize,
        #[serde(default)]
        nmf_a: f64,
        #[serde(default)]
        nmf_b: f64,
        #[serde(default)]
        clip_negative: bool,
        #[serde(default = "per_output")]
        sharing: HyperSharing,
    },
    Mem {
        name: String,
        mapping: Mapping,
        coupling: CouplingSpec,
        #[serde(default)]
        warp: bool,
        /// Condition on every `time_stride`-th training time.
        #[serde(default = "default_stride")]
        time_stride: usize,
        #[serde(default)]
        sigma0: f64,
    },
}

fn per_output() -> HyperSharing {
    HyperSharing::PerOutput
}

impl EmulatorSpec {
    pub fn name(&self) -> &str {
        match self {
            EmulatorSpec::DataDriven { name, .. } | EmulatorSpec::Mem { name, .. } => name,
        }
    }
}

impl CouplingSpec {
    pub fn nu(&self) -> Result<MaternNu> {
        match self {
            CouplingSpec::Matern { nu, .. } => Ok(MaternNu::from_value(*nu)?),
            CouplingSpec::Uncoupled { .. } => bail!("uncoupled noise has no Matérn order"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).context("parsing run configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut value: toml::Value = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: RunConfig = value.try_into().context("invalid run configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut value = toml::Value::try_from(self)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: RunConfig = value.try_into().context("invalid run configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.emulators.is_empty() {
            bail!("at least one emulator must be configured");
        }
        let mut names: Vec<&str> = self.emulators.iter().map(EmulatorSpec::name).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            bail!("emulator names must be unique");
        }
        if self.timing.repetitions == 0 {
            bail!("timing.repetitions must be at least 1");
        }
        for e in &self.emulators {
            if let EmulatorSpec::Mem { time_stride: 0, .. } = e {
                bail!("time_stride must be at least 1");
            }
        }
        match &self.dataset {
            DatasetSpec::NonlinearDs { config } if !(config.smoothing_sigma >= 0.0) => {
                bail!("smoothing_sigma must be >= 0 (got {})", config.smoothing_sigma)
            }
            DatasetSpec::Catchment { output_times, spacing_power, .. } if *output_times < 2 || !(*spacing_power >= 1.0) => {
                bail!("catchment needs output_times >= 2 and spacing_power >= 1")
            }
            DatasetSpec::Files { dir } if !dir.is_dir() => bail!("dataset directory {} does not exist", dir.display()),
            _ => Ok(()),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(&self.experiment))
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "ds1" => Ok(ds_preset("ds1", 0.0)),
            "ds2" => Ok(ds_preset("ds2", 0.5)),
            "catchment" => Ok(catchment_preset()),
            other => bail!("unknown experiment {other:?} (expected ds1, ds2 or catchment)"),
        }
    }
}

/// `a.b.c=value`; the value is parsed as TOML and falls back to a string.
pub fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec.split_once('=').with_context(|| format!("override {spec:?} is not key=value"))?;
    let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .map(|mut t| t.remove("v").expect("parsed key"))
        .unwrap_or_else(|_| toml::Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    let mut cur = root;
    for (i, key) in keys.iter().enumerate() {
        let last = i + 1 == keys.len();
        cur = match cur {
            toml::Value::Table(t) => {
                if last {
                    t.insert((*key).to_string(), value);
                    return Ok(());
                }
                t.entry((*key).to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()))
            }
            toml::Value::Array(a) => {
                let idx: usize = key.parse().with_context(|| format!("{key:?} is not an array index in {path:?}"))?;
                let len = a.len();
                let slot = a.get_mut(idx).with_context(|| format!("index {idx} out of range ({len}) in {path:?}"))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => bail!("{path:?}: {key:?} is not inside a table"),
        };
    }
    bail!("empty override key")
}

fn ds_preset(name: &str, sigma: f64) -> RunConfig {
    let config = NonlinearDsConfig { smoothing_sigma: sigma, ..Default::default() };
    let mut emulators = vec![EmulatorSpec::DataDriven {
        name: "svd".into(),
        method: FactorMethod::Svd,
        q: 6,
        nmf_a: 0.0,
        nmf_b: 0.0,
        clip_negative: false,
        sharing: HyperSharing::PerOutput,
    }];
    let matern = CouplingSpec::Matern { nu: 1.5, lengthscale: 0.5, optimize_runs: 0, restarts: 3 };
    if sigma == 0.0 {
        emulators.push(EmulatorSpec::Mem {
            name: "mem-exact".into(),
            mapping: Mapping::Exact,
            coupling: CouplingSpec::Uncoupled { variance: 1.0 },
            warp: false,
            time_stride: 1,
            sigma0: 0.0,
        });
    } else {
        for (n, mapping) in [("mem-exact", Mapping::Exact), ("mem-fit", Mapping::Fitted)] {
            emulators.push(EmulatorSpec::Mem {
                name: n.into(),
                mapping,
                coupling: matern.clone(),
                warp: false,
                time_stride: 1,
                sigma0: 0.0,
            });
        }
    }
    RunConfig {
        experiment: name.into(),
        seed: 0,
        out: None,
        dataset: DatasetSpec::NonlinearDs { config },
        split: SplitSpec { n_train: 10, train_time_indices: Some(emulate_core::dataset::evenly_spaced_indices(40, 6)) },
        emulators,
        timing: TimingSpec::default(),
    }
}

fn catchment_preset() -> RunConfig {
    let dd = |name: &str, method, q| EmulatorSpec::DataDriven {
        name: name.into(),
        method,
        q,
        nmf_a: 0.0,
        nmf_b: 0.0,
        clip_negative: false,
        sharing: HyperSharing::Shared,
    };
    let coupling = CouplingSpec::Matern { nu: 1.5, lengthscale: 0.5, optimize_runs: 40, restarts: 2 };
    let mem = |name: &str, mapping| EmulatorSpec::Mem {
        name: name.into(),
        mapping,
        coupling: coupling.clone(),
        warp: false,
        time_stride: 4,
        sigma0: 0.0,
    };
    RunConfig {
        experiment: "catchment".into(),
        seed: 0,
        out: None,
        dataset: DatasetSpec::Catchment {
            simulator: ToyCatchmentConfig::default(),
            design: CatchmentDesign::default(),
            output_times: 52,
            spacing_power: 2.0,
        },
        split: SplitSpec { n_train: 200, train_time_indices: None },
        emulators: vec![
            dd("nmf", FactorMethod::Nmf, 7),
            dd("svd", FactorMethod::Svd, 6),
            mem("mem-fit", Mapping::Fitted),
            mem("mem-exact", Mapping::Exact),
        ],
        timing: TimingSpec { enabled: true, repetitions: 5, runs: 50 },
    }
}
