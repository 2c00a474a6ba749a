//! Experiment orchestration: configuration, batch generation and replay,
//! aggregate statistics and CSV artifacts.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use pbpf_core::baselines::CvpfConfig;
use pbpf_core::filter::{FilterConfig, InitNoise, Sequential, WeightOutcome};
use pbpf_core::physics::{Gaussian, ParamPrior};
use pbpf_core::rng::derive_seed;
use pbpf_core::NoiseSpec;

use crate::replay::{replay, Method, Replay, ReplayConfig, ReplayError, UnknownMethod};
use crate::runlog::{LogError, RunLog};
use crate::scenario::{generate_run, Scenario, ScenarioError};

/// z-value of the two-sided 95% normal interval.
pub const Z95: f64 = 1.96;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("malformed config: {0}")]
    Config(String),
    #[error(transparent)]
    UnknownMethod(#[from] UnknownMethod),
    #[error("output directory {path} is not writable: {source}")]
    OutputDir { path: PathBuf, source: std::io::Error },
    #[error("writing {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("run {run}: {source}")]
    Generate { run: usize, source: ScenarioError },
    #[error("run {run}: {source}")]
    Replay { run: usize, source: ReplayError },
    #[error("run {run}: {source}")]
    Log { run: usize, source: LogError },
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Preset name or scenario file path.
    pub scene: String,
    pub runs: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub out: PathBuf,
    pub replay: ReplayConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: "scene1".into(),
            runs: 10,
            seed: 1,
            methods: Method::ALL.to_vec(),
            out: PathBuf::from("results"),
            replay: ReplayConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.runs == 0 {
            return Err(HarnessError::Config("run count must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(HarnessError::Config("method set is empty".into()));
        }
        self.replay.pbpf.validate().map_err(|e| HarnessError::Config(format!("[pbpf] {e}")))?;
        self.replay.cvpf.validate().map_err(|e| HarnessError::Config(format!("[cvpf] {e}")))?;
        if !(self.replay.dt_sub > 0.0) || !self.replay.dt_sub.is_finite() {
            return Err(HarnessError::Config("[pbpf] dt_sub must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let f: ConfigFile = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let cfg = f.into_config()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&ConfigFile::from(self)).expect("config serializes")
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        derive_seed(self.seed, run as u64)
    }
}

/// Parses a comma-separated method list.
pub fn parse_methods(list: &str) -> Result<Vec<Method>, UnknownMethod> {
    let mut out = Vec::new();
    for name in list.split(',').filter(|s| !s.trim().is_empty()) {
        let m: Method = name.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ConfigFile {
    experiment: ExperimentSection,
    pbpf: PbpfSection,
    cvpf: CvpfSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ExperimentSection {
    scene: String,
    runs: usize,
    seed: u64,
    methods: Vec<String>,
    out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PbpfSection {
    particles: usize,
    dt: f64,
    dt_sub: f64,
    motion_noise: [f64; 2],
    obs_noise: [f64; 2],
    init_pos_std: [f64; 3],
    init_rot_std: f64,
    /// `[mean, std]` pairs of the parameter prior.
    contact_friction: [f64; 2],
    support_friction: [f64; 2],
    restitution: [f64; 2],
    mass: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct CvpfSection {
    particles: usize,
    dt: f64,
    motion_noise: [f64; 2],
    obs_noise: [f64; 2],
    init_pos_std: [f64; 3],
    init_rot_std: f64,
}

impl Default for ConfigFile {
    fn default() -> Self {
        ConfigFile::from(&ExperimentConfig::default())
    }
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ConfigFile::default().experiment
    }
}

impl Default for PbpfSection {
    fn default() -> Self {
        ConfigFile::default().pbpf
    }
}

impl Default for CvpfSection {
    fn default() -> Self {
        ConfigFile::default().cvpf
    }
}

fn pair(n: &NoiseSpec) -> [f64; 2] {
    [n.sigma_pos, n.sigma_rot]
}

fn noise(p: [f64; 2]) -> NoiseSpec {
    NoiseSpec { sigma_pos: p[0], sigma_rot: p[1] }
}

fn gauss(g: &Gaussian) -> [f64; 2] {
    [g.mean, g.std]
}

impl From<&ExperimentConfig> for ConfigFile {
    fn from(c: &ExperimentConfig) -> Self {
        let p = &c.replay.pbpf;
        let v = &c.replay.cvpf;
        ConfigFile {
            experiment: ExperimentSection {
                scene: c.scene.clone(),
                runs: c.runs,
                seed: c.seed,
                methods: c.methods.iter().map(|m| m.name().to_string()).collect(),
                out: c.out.clone(),
            },
            pbpf: PbpfSection {
                particles: p.particles,
                dt: p.dt,
                dt_sub: c.replay.dt_sub,
                motion_noise: pair(&p.motion_noise),
                obs_noise: pair(&p.obs_noise),
                init_pos_std: p.init_noise.pos_std,
                init_rot_std: p.init_noise.rot_std,
                contact_friction: gauss(&p.param_prior.contact_friction),
                support_friction: gauss(&p.param_prior.support_friction),
                restitution: gauss(&p.param_prior.restitution),
                mass: gauss(&p.param_prior.mass),
            },
            cvpf: CvpfSection {
                particles: v.particles,
                dt: v.dt,
                motion_noise: pair(&v.motion_noise),
                obs_noise: pair(&v.obs_noise),
                init_pos_std: v.init_noise.pos_std,
                init_rot_std: v.init_noise.rot_std,
            },
        }
    }
}

impl ConfigFile {
    fn into_config(self) -> Result<ExperimentConfig, HarnessError> {
        let methods = self.experiment.methods.iter().map(|m| m.parse()).collect::<Result<Vec<Method>, _>>()?;
        let p = self.pbpf;
        let v = self.cvpf;
        let g = |a: [f64; 2]| Gaussian::new(a[0], a[1]);
        Ok(ExperimentConfig {
            scene: self.experiment.scene,
            runs: self.experiment.runs,
            seed: self.experiment.seed,
            methods,
            out: self.experiment.out,
            replay: ReplayConfig {
                pbpf: FilterConfig {
                    particles: p.particles,
                    dt: p.dt,
                    param_prior: ParamPrior {
                        contact_friction: g(p.contact_friction),
                        support_friction: g(p.support_friction),
                        restitution: g(p.restitution),
                        mass: g(p.mass),
                    },
                    motion_noise: noise(p.motion_noise),
                    obs_noise: noise(p.obs_noise),
                    init_noise: InitNoise { pos_std: p.init_pos_std, rot_std: p.init_rot_std },
                },
                dt_sub: p.dt_sub,
                cvpf: CvpfConfig {
                    particles: v.particles,
                    dt: v.dt,
                    motion_noise: noise(v.motion_noise),
                    obs_noise: noise(v.obs_noise),
                    init_noise: InitNoise { pos_std: v.init_pos_std, rot_std: v.init_rot_std },
                },
            },
        })
    }
}

// ---------------------------------------------------------------------------
// Aggregation

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSample {
    pub t: f64,
    pub pos: f64,
    pub rot: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimePoint {
    pub t: f64,
    pub pos_mean: f64,
    /// Half-width of the 95% band.
    pub pos_ci: f64,
    pub rot_mean: f64,
    pub rot_ci: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodAggregate {
    pub pos_mean: f64,
    pub pos_std: f64,
    pub rot_mean: f64,
    pub rot_std: f64,
    pub timeline: Vec<TimePoint>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AggregateError {
    #[error("no error sequences to aggregate")]
    Empty,
    #[error("run {run} is not aligned with run 0 on the time grid")]
    Misaligned { run: usize },
}

/// Mean and sample standard deviation (0 for a single value). Values are
/// summed in sorted order so the result does not depend on input order.
fn mean_std(values: &mut [f64]) -> (f64, f64) {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Pooled statistics over runs × timesteps, plus per-timestep means with a
/// normal-approximation 95% band (`1.96 · s / √runs`).
pub fn aggregate(runs: &[Vec<ErrorSample>]) -> Result<MethodAggregate, AggregateError> {
    let first = runs.first().ok_or(AggregateError::Empty)?;
    if first.is_empty() {
        return Err(AggregateError::Empty);
    }
    for (i, r) in runs.iter().enumerate().skip(1) {
        let aligned = r.len() == first.len() && r.iter().zip(first).all(|(a, b)| (a.t - b.t).abs() <= 1e-9);
        if !aligned {
            return Err(AggregateError::Misaligned { run: i });
        }
    }
    let sqrt_runs = (runs.len() as f64).sqrt();
    let mut timeline = Vec::with_capacity(first.len());
    let (mut all_pos, mut all_rot) = (Vec::new(), Vec::new());
    for (k, s) in first.iter().enumerate() {
        let mut pos: Vec<f64> = runs.iter().map(|r| r[k].pos).collect();
        let mut rot: Vec<f64> = runs.iter().map(|r| r[k].rot).collect();
        all_pos.extend_from_slice(&pos);
        all_rot.extend_from_slice(&rot);
        let (pm, ps) = mean_std(&mut pos);
        let (rm, rs) = mean_std(&mut rot);
        timeline.push(TimePoint { t: s.t, pos_mean: pm, pos_ci: Z95 * ps / sqrt_runs, rot_mean: rm, rot_ci: Z95 * rs / sqrt_runs });
    }
    let (pos_mean, pos_std) = mean_std(&mut all_pos);
    let (rot_mean, rot_std) = mean_std(&mut all_rot);
    Ok(MethodAggregate { pos_mean, pos_std, rot_mean, rot_std, timeline })
}

pub fn samples(r: &Replay) -> Vec<ErrorSample> {
    r.frames.iter().map(|f| ErrorSample { t: f.t, pos: f.error.positional, rot: f.error.rotational }).collect()
}

// ---------------------------------------------------------------------------
// Experiments

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    pub log: RunLog,
    pub replays: Vec<Replay>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub scenario: Scenario,
    pub methods: BTreeMap<Method, MethodAggregate>,
    pub runs: Vec<RunResult>,
    /// Artifact paths relative to the output directory.
    pub artifacts: Vec<PathBuf>,
}

/// Generates and replays a single run.
pub fn run_one(scenario: &Scenario, cfg: &ExperimentConfig, run: usize) -> Result<RunResult, HarnessError> {
    let seed = cfg.run_seed(run);
    let log = generate_run(&scenario.clone().with_seed(seed)).map_err(|source| HarnessError::Generate { run, source })?;
    let replays = cfg
        .methods
        .iter()
        .map(|m| replay(&log, *m, &cfg.replay, &Sequential).map_err(|source| HarnessError::Replay { run, source }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RunResult { seed, log, replays })
}

/// Runs every seed in parallel, aggregates per method and writes the
/// artifacts to `cfg.out`. The manifest is written last.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    cfg.validate()?;
    let scenario = Scenario::resolve(&cfg.scene)?;
    prepare_dir(&cfg.out)?;
    prepare_dir(&cfg.out.join("runs"))?;
    prepare_dir(&cfg.out.join("errors"))?;

    let results: Vec<Result<RunResult, HarnessError>> = (0..cfg.runs).into_par_iter().map(|i| run_one(&scenario, cfg, i)).collect();
    let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut methods = BTreeMap::new();
    for (j, m) in cfg.methods.iter().enumerate() {
        let seqs: Vec<Vec<ErrorSample>> = runs.iter().map(|r| samples(&r.replays[j])).collect();
        methods.insert(*m, aggregate(&seqs)?);
    }

    let mut artifacts = Vec::new();
    let out = &cfg.out;
    let mut put = |rel: PathBuf, body: String| -> Result<(), HarnessError> {
        write_file(&out.join(&rel), body.as_bytes())?;
        artifacts.push(rel);
        Ok(())
    };
    put(PathBuf::from("scenario.toml"), scenario.to_toml())?;
    put(PathBuf::from("config.toml"), cfg.to_toml())?;
    for (i, r) in runs.iter().enumerate() {
        put(PathBuf::from(format!("runs/run_{i:02}.csv")), r.log.to_string())?;
        put(PathBuf::from(format!("errors/run_{i:02}.csv")), errors_csv(&r.replays))?;
    }
    put(PathBuf::from("aggregate.csv"), aggregate_csv(&cfg.methods, &methods))?;
    put(PathBuf::from("timeseries.csv"), timeseries_csv(&cfg.methods, &methods))?;
    put(PathBuf::from("timing.csv"), timing_csv(&runs))?;

    let mut manifest = String::new();
    for a in &artifacts {
        manifest.push_str(&a.display().to_string());
        manifest.push('\n');
    }
    write_file(&out.join("manifest.txt"), manifest.as_bytes())?;
    artifacts.push(PathBuf::from("manifest.txt"));

    Ok(ExperimentReport { scenario, methods, runs, artifacts })
}

/// Writes run logs for `cfg.runs` seeds without replaying them.
pub fn generate_logs(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, HarnessError> {
    if cfg.runs == 0 {
        return Err(HarnessError::Config("run count must be at least 1".into()));
    }
    let scenario = Scenario::resolve(&cfg.scene)?;
    prepare_dir(&cfg.out)?;
    let logs: Vec<Result<RunLog, HarnessError>> = (0..cfg.runs)
        .into_par_iter()
        .map(|i| generate_run(&scenario.clone().with_seed(cfg.run_seed(i))).map_err(|source| HarnessError::Generate { run: i, source }))
        .collect();
    let mut paths = Vec::new();
    for (i, log) in logs.into_iter().enumerate() {
        let path = cfg.out.join(format!("run_{i:02}.csv"));
        write_file(&path, log?.to_string().as_bytes())?;
        paths.push(path);
    }
    Ok(paths)
}

fn prepare_dir(path: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(path).map_err(|source| HarnessError::OutputDir { path: path.to_path_buf(), source })?;
    let probe = path.join(".write_probe");
    std::fs::write(&probe, b"")
        .and_then(|_| std::fs::remove_file(&probe))
        .map_err(|source| HarnessError::OutputDir { path: path.to_path_buf(), source })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let mut f = std::fs::File::create(path).map_err(|source| HarnessError::Write { path: path.to_path_buf(), source })?;
    f.write_all(bytes).map_err(|source| HarnessError::Write { path: path.to_path_buf(), source })
}

pub fn errors_csv(replays: &[Replay]) -> String {
    let mut s = String::from("t,method,pos_err_m,rot_err_rad\n");
    for r in replays {
        for f in &r.frames {
            s.push_str(&format!("{},{},{},{}\n", f.t, r.method, f.error.positional, f.error.rotational));
        }
    }
    s
}

pub fn aggregate_csv(order: &[Method], methods: &BTreeMap<Method, MethodAggregate>) -> String {
    let mut s = String::from("method,pos_mean,pos_std,rot_mean,rot_std\n");
    for m in order {
        let a = &methods[m];
        s.push_str(&format!("{m},{},{},{},{}\n", a.pos_mean, a.pos_std, a.rot_mean, a.rot_std));
    }
    s
}

pub fn timeseries_csv(order: &[Method], methods: &BTreeMap<Method, MethodAggregate>) -> String {
    let mut s = String::from(
        "# per-timestep mean over runs; ci95 is the half-width 1.96 * sample std / sqrt(runs) (normal approximation)\n\
         t,method,pos_mean,pos_ci95,rot_mean,rot_ci95\n",
    );
    for m in order {
        for p in &methods[m].timeline {
            s.push_str(&format!("{},{m},{},{},{},{}\n", p.t, p.pos_mean, p.pos_ci, p.rot_mean, p.rot_ci));
        }
    }
    s
}

fn timing_csv(runs: &[RunResult]) -> String {
    let mut s = String::from("run,method,t,seconds,outcome\n");
    for (i, r) in runs.iter().enumerate() {
        for rep in &r.replays {
            for st in &rep.steps {
                let outcome = match st.outcome {
                    WeightOutcome::Skipped => "skipped",
                    WeightOutcome::Weighted => "weighted",
                    WeightOutcome::Degenerate => "degenerate",
                };
                s.push_str(&format!("{i},{},{},{},{outcome}\n", rep.method, st.t, st.seconds));
            }
        }
    }
    s
}
