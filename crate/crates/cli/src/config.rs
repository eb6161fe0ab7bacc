//! JSON experiment configuration.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use conflow::cpd::MixingMeasure;
use conflow::datagen::{Gp1dParams, Gp1dVariant, Gp2dParams};
use conflow::metrics::MetricConfig;
use conflow::repulsion::RepulsionOptions;
use conflow::{FlowOptions, ScoreFamily};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Convergence,
    Repulsion,
    Bands,
    CpdAudit,
    Sample,
}

/// Where `(x, y)` pairs come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum DataSpec {
    LinearGaussian { p: usize, n: usize },
    LinearStudentT { p: usize, n: usize },
    Gp1d(Gp1dParams),
    Gp2d(Gp2dParams),
    Gp2dDownscale {
        #[serde(flatten)]
        params: Gp2dParams,
        q: usize,
    },
    Trajectories { n: usize, t: usize, noise: f64 },
    /// Externally produced predictions: banks stacked along the leading axis.
    External {
        cal_predictions: PathBuf,
        cal_targets: PathBuf,
        #[serde(default)]
        predictions: Option<PathBuf>,
        #[serde(default)]
        targets: Option<PathBuf>,
    },
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec::LinearGaussian { p: 10, n: 500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceTask {
    IsotropicGaussian,
    AnisotropicStudentT,
    Gp2d,
    Gp2dDownscale,
}

impl ConvergenceTask {
    pub fn name(self) -> &'static str {
        match self {
            ConvergenceTask::IsotropicGaussian => "isotropic_gaussian",
            ConvergenceTask::AnisotropicStudentT => "anisotropic_student_t",
            ConvergenceTask::Gp2d => "gp2d",
            ConvergenceTask::Gp2dDownscale => "gp2d_downscale",
        }
    }

    pub fn is_field(self) -> bool {
        matches!(self, ConvergenceTask::Gp2d | ConvergenceTask::Gp2dDownscale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceConfig {
    pub tasks: Vec<ConvergenceTask>,
    pub dims: Vec<usize>,
    pub ells: Vec<f64>,
    pub vector_families: Vec<ScoreFamily>,
    pub field_families: Vec<ScoreFamily>,
    pub alphas: Vec<f64>,
    /// Rows per split.
    pub n: usize,
    /// Test inputs flowed per cell and level.
    pub test_points: usize,
    pub gp_size: usize,
    pub downscale_q: usize,
    pub ridge: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            tasks: vec![
                ConvergenceTask::IsotropicGaussian,
                ConvergenceTask::AnisotropicStudentT,
                ConvergenceTask::Gp2d,
                ConvergenceTask::Gp2dDownscale,
            ],
            dims: vec![5, 10, 25, 50, 100],
            ells: vec![0.01, 0.05, 0.1, 0.2],
            vector_families: vec![
                ScoreFamily::L2,
                ScoreFamily::L1,
                ScoreFamily::Huber { delta: 1.0 },
                ScoreFamily::knn(5),
                ScoreFamily::gauss_nll(),
                ScoreFamily::student_t_nll(3.0),
            ],
            field_families: vec![
                ScoreFamily::FieldL2,
                ScoreFamily::Sobolev { lambda: 1.0 },
                ScoreFamily::Psd,
                ScoreFamily::Wavelet { depth: 2 },
                ScoreFamily::local_combined(),
            ],
            alphas: vec![0.05, 0.1, 0.2],
            n: 500,
            test_points: 50,
            gp_size: 32,
            downscale_q: 8,
            ridge: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RepulsionBenchConfig {
    pub dims: Vec<usize>,
    pub points: usize,
    pub sims: usize,
    pub alpha: f64,
    /// Rows per split of the regression task that supplies `y_hat` and `tau`.
    pub n: usize,
    pub ridge: f64,
}

impl Default for RepulsionBenchConfig {
    fn default() -> Self {
        Self { dims: vec![10, 25, 50, 100], points: 200, sims: 5, alpha: 0.1, n: 500, ridge: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BandsConfig {
    pub variants: Vec<Gp1dVariant>,
    pub reps: usize,
    /// Rows per split; the calibration split is halved between the score
    /// threshold and the band inflation.
    pub n: usize,
    pub p: usize,
    pub samples_per_input: usize,
    pub alpha: f64,
    pub delta: f64,
    pub ridge: f64,
    pub score: ScoreFamily,
}

impl Default for BandsConfig {
    fn default() -> Self {
        Self {
            variants: Gp1dVariant::ALL.to_vec(),
            reps: 10,
            n: 500,
            p: 256,
            samples_per_input: 40,
            alpha: 0.1,
            delta: 0.0,
            ridge: 1.0,
            score: ScoreFamily::L2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConfig {
    pub p: usize,
    pub n_cal: usize,
    pub samples: usize,
    pub betas: Vec<f64>,
    pub mixings: Vec<MixingMeasure>,
    pub ridge: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            p: 10,
            n_cal: 999,
            samples: 20_000,
            betas: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            mixings: vec![
                MixingMeasure::Uniform01,
                MixingMeasure::UniformRange { a: 0.0, b: 0.1 },
                MixingMeasure::UniformRange { a: 0.9, b: 1.0 },
            ],
            ridge: 1.0,
        }
    }
}

/// Settings of the single-input subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    pub alpha: f64,
    pub samples: usize,
    pub mixing: MixingMeasure,
    /// Gaussian base-measure scale; calibration residuals are used when absent.
    pub base_scale: Option<f64>,
    /// Tolerated fraction of grid points outside a band.
    pub delta: f64,
    pub asymmetric: bool,
    pub ridge: f64,
    /// Row of the prediction bank used as `y_hat`.
    pub index: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            samples: 100,
            mixing: MixingMeasure::Uniform01,
            base_scale: None,
            delta: 0.0,
            asymmetric: false,
            ridge: 1.0,
            index: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub full_scale: bool,
    pub score: ScoreFamily,
    pub data: DataSpec,
    pub flow: FlowOptions,
    pub repulsion: RepulsionOptions,
    pub metrics: MetricConfig,
    pub convergence: ConvergenceConfig,
    pub repulsion_bench: RepulsionBenchConfig,
    pub bands: BandsConfig,
    pub audit: AuditConfig,
    pub sample: SampleConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::Sample,
            seed: 0,
            full_scale: false,
            score: ScoreFamily::L2,
            data: DataSpec::default(),
            flow: FlowOptions::default(),
            repulsion: RepulsionOptions::default(),
            metrics: MetricConfig::default(),
            convergence: ConvergenceConfig::default(),
            repulsion_bench: RepulsionBenchConfig::default(),
            bands: BandsConfig::default(),
            audit: AuditConfig::default(),
            sample: SampleConfig::default(),
        }
    }
}

fn check_level(what: &str, a: f64) -> Result<()> {
    if !(a > 0.0 && a < 1.0) {
        bail!("{what} {a} is outside (0, 1)");
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    /// Applies command-line overrides, scales up when requested and validates.
    pub fn resolve(mut self, seed: Option<u64>, full_scale: bool) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if full_scale && !self.full_scale {
            self.full_scale = true;
            self.apply_full_scale();
        }
        self.validate()?;
        Ok(self)
    }

    /// Grids of the original experiments.
    fn apply_full_scale(&mut self) {
        let c = &mut self.convergence;
        c.dims = (1..=10).map(|k| 10 * k).collect();
        c.n = 1000;
        c.test_points = 100;
        c.gp_size = 64;
        let r = &mut self.repulsion_bench;
        r.points = 1000;
        r.sims = 25;
        r.n = 1000;
        self.bands.samples_per_input = 100;
        self.bands.reps = 25;
    }

    pub fn validate(&self) -> Result<()> {
        for &a in &self.convergence.alphas {
            check_level("convergence alpha", a)?;
        }
        check_level("repulsion alpha", self.repulsion_bench.alpha)?;
        check_level("band alpha", self.bands.alpha)?;
        check_level("sample alpha", self.sample.alpha)?;
        for &b in &self.audit.betas {
            check_level("audit beta", b)?;
        }
        if !(0.0..1.0).contains(&self.bands.delta) || !(0.0..1.0).contains(&self.sample.delta) {
            bail!("band delta must lie in [0, 1)");
        }
        for m in &self.audit.mixings {
            m.validate()?;
        }
        self.sample.mixing.validate()?;
        self.flow.validate()?;
        if let DataSpec::External { cal_predictions, cal_targets, predictions, targets } = &self.data {
            for p in [Some(cal_predictions), Some(cal_targets), predictions.as_ref(), targets.as_ref()]
                .into_iter()
                .flatten()
            {
                if !p.exists() {
                    bail!("referenced file {} does not exist", p.display());
                }
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
