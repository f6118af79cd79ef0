//! Run configuration (TOML). Every field has a default; the effective config
//! is echoed next to the outputs and its hash is stamped into every CSV.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use qlpv_core::ccpoly::PolytopeTemplate;
use qlpv_core::plant::DuffingPlant;
use qlpv_core::qlpv::{Activation, ModelDims};
use qlpv_core::rci::{InputConstraints, OutputConstraints, RciProblem};
use qlpv_core::synthesis::{RegularizerKind, TrainConfig};
use qlpv_core::Mat;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory; relative paths below resolve against it.
    pub out: PathBuf,
    pub data: DataConfig,
    pub plant: PlantConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub sets: SetsConfig,
    pub rci: RciSection,
    pub sweep: SweepConfig,
    pub simulate: SimulateConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_points: usize,
    pub disturbance_points: usize,
    pub test_points: usize,
    pub dt: f64,
    pub u_lo: f64,
    pub u_hi: f64,
    pub hold: usize,
    pub train_file: PathBuf,
    pub disturbance_file: PathBuf,
    pub test_file: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub m: f64,
    pub c: f64,
    pub k: f64,
    pub k3: f64,
    pub substeps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub nx: usize,
    pub np: usize,
    pub hidden: Vec<usize>,
    pub activation: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub tau: f64,
    pub kappa: f64,
    pub zeta: f64,
    pub k_hat: usize,
    pub l_hat: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub horizon: usize,
    pub pretrain_iters: usize,
    pub pretrain_lr: f64,
    /// `bound_propagation` or `baseline`.
    pub regularizer: String,
}

/// A polytope given either as box bounds or as halfspaces (plus vertices for
/// output sets).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SetSpec {
    pub lo: Option<Vec<f64>>,
    pub hi: Option<Vec<f64>>,
    pub a: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<f64>>,
    pub vertices: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SetsConfig {
    /// `box` or `polygon` (planar, `facets` sides).
    pub template: String,
    pub facets: usize,
    pub y: SetSpec,
    pub u: SetSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RciSection {
    /// Iterations of the post-training re-solve.
    pub k_hat: usize,
    pub verify_samples: usize,
    pub verify_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub zetas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub steps: usize,
    /// Reference levels, each held for `segment` samples, cycled.
    pub levels: Vec<f64>,
    pub segment: usize,
    /// Optional reference CSV (`t,r` or `t,r1..`), overrides `levels`.
    pub reference_file: Option<PathBuf>,
    pub input_weight: f64,
    pub state_weight: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("out"),
            data: DataConfig::default(),
            plant: PlantConfig::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            sets: SetsConfig::default(),
            rci: RciSection::default(),
            sweep: SweepConfig::default(),
            simulate: SimulateConfig::default(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_points: 10000,
            disturbance_points: 2000,
            test_points: 10000,
            dt: 0.1,
            u_lo: -0.5,
            u_hi: 0.5,
            hold: 1,
            train_file: PathBuf::from("data/train.csv"),
            disturbance_file: PathBuf::from("data/disturbance.csv"),
            test_file: PathBuf::from("data/test.csv"),
        }
    }
}

impl Default for PlantConfig {
    fn default() -> Self {
        let p = DuffingPlant::default();
        PlantConfig { m: p.m, c: p.c, k: p.k, k3: p.k3, substeps: p.substeps }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { nx: 2, np: 6, hidden: vec![3], activation: String::from("elu_plus_one") }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            tau: t.tau,
            kappa: t.kappa,
            zeta: t.zeta,
            k_hat: t.k_hat,
            l_hat: t.l_hat,
            lr: t.lr,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            horizon: t.horizon,
            pretrain_iters: t.pretrain_iters,
            pretrain_lr: t.pretrain_lr,
            regularizer: t.regularizer.name().to_string(),
        }
    }
}

impl Default for SetsConfig {
    fn default() -> Self {
        SetsConfig {
            template: String::from("box"),
            facets: 4,
            y: SetSpec { lo: Some(vec![-0.1]), hi: Some(vec![0.1]), ..Default::default() },
            u: SetSpec { lo: Some(vec![-0.5]), hi: Some(vec![0.5]), ..Default::default() },
        }
    }
}

impl Default for RciSection {
    fn default() -> Self {
        RciSection { k_hat: 200, verify_samples: 10000, verify_seed: 1 }
    }
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { zetas: (0..4).map(|i| 0.01 + 0.03 * i as f64).collect() }
    }
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            steps: 500,
            levels: vec![0.0, 0.02, -0.02, 0.01, -0.03],
            segment: 100,
            reference_file: None,
            input_weight: 0.0,
            state_weight: 0.0,
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl SetSpec {
    fn halfspaces(&self, what: &str) -> Result<(Mat<f64>, Vec<f64>)> {
        match (&self.lo, &self.hi, &self.a, &self.b) {
            (Some(lo), Some(hi), None, None) => {
                if lo.len() != hi.len() || lo.is_empty() {
                    return Err(cfg_err(format!("{what}: lo and hi must be nonempty and the same length")));
                }
                if lo.iter().zip(hi).any(|(l, h)| !(l <= h)) {
                    return Err(cfg_err(format!("{what}: lo must not exceed hi")));
                }
                let n = lo.len();
                let a = Mat::from_fn(2 * n, n, |r, c| if r == c { 1.0 } else if r == c + n { -1.0 } else { 0.0 });
                let b = hi.iter().copied().chain(lo.iter().map(|v| -v)).collect();
                Ok((a, b))
            }
            (None, None, Some(a), Some(b)) => {
                if a.is_empty() || a.len() != b.len() || a.iter().any(|r| r.len() != a[0].len() || r.is_empty()) {
                    return Err(cfg_err(format!("{what}: a must be a nonempty matrix with one row per entry of b")));
                }
                let rows: Vec<&[f64]> = a.iter().map(Vec::as_slice).collect();
                Ok((Mat::from_rows(&rows), b.clone()))
            }
            _ => Err(cfg_err(format!("{what}: give either lo/hi or a/b"))),
        }
    }

    pub fn output_set(&self) -> Result<OutputConstraints> {
        if let (Some(lo), Some(hi)) = (&self.lo, &self.hi) {
            if self.vertices.is_none() && self.a.is_none() {
                self.halfspaces("sets.y")?;
                return OutputConstraints::boxed(lo, hi).map_err(|e| cfg_err(format!("sets.y: {e}")));
            }
        }
        let (a, b) = self.halfspaces("sets.y")?;
        let v = self.vertices.clone().ok_or_else(|| cfg_err("sets.y: halfspace form needs `vertices`"))?;
        OutputConstraints::new(a, b, v).map_err(|e| cfg_err(format!("sets.y: {e}")))
    }

    pub fn input_set(&self) -> Result<InputConstraints> {
        if self.vertices.is_some() {
            return Err(cfg_err("sets.u: vertices are not used for the input set"));
        }
        let (a, b) = self.halfspaces("sets.u")?;
        InputConstraints::new(a, b).map_err(|e| cfg_err(format!("sets.u: {e}")))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.train_points == 0 || d.disturbance_points == 0 || d.test_points == 0 {
            return Err(cfg_err("data: point counts must be positive"));
        }
        if !(d.dt > 0.0) || !(d.u_lo <= d.u_hi) || d.hold == 0 {
            return Err(cfg_err("data: need dt > 0, u_lo <= u_hi and hold >= 1"));
        }
        self.plant()?;
        self.dims()?;
        self.train_config()?;
        self.problem()?;
        if self.rci.k_hat == 0 {
            return Err(cfg_err("rci.k_hat must be at least 1"));
        }
        if self.sweep.zetas.iter().any(|z| !(*z > 0.0)) {
            return Err(cfg_err("sweep.zetas must be positive"));
        }
        let s = &self.simulate;
        if s.segment == 0 || (s.levels.is_empty() && s.reference_file.is_none()) {
            return Err(cfg_err("simulate: need segment >= 1 and a reference"));
        }
        if !(s.input_weight >= 0.0 && s.state_weight >= 0.0) {
            return Err(cfg_err("simulate: weights must be nonnegative"));
        }
        Ok(())
    }

    pub fn plant(&self) -> Result<DuffingPlant> {
        let p = &self.plant;
        DuffingPlant::new(p.m, p.c, p.k, p.k3, p.substeps).map_err(|e| cfg_err(format!("plant: {e}")))
    }

    pub fn dims(&self) -> Result<ModelDims> {
        let m = &self.model;
        let activation = Activation::from_name(&m.activation)
            .ok_or_else(|| cfg_err(format!("model.activation `{}` is not elu_plus_one or tanh", m.activation)))?;
        if m.nx == 0 || m.np == 0 || m.hidden.contains(&0) {
            return Err(cfg_err("model: nx, np and hidden widths must be positive"));
        }
        Ok(ModelDims { nx: m.nx, nu: 1, ny: 1, np: m.np, hidden: m.hidden.clone(), activation })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let regularizer = RegularizerKind::from_name(&t.regularizer)
            .ok_or_else(|| cfg_err(format!("train.regularizer `{}` is not bound_propagation or baseline", t.regularizer)))?;
        let tc = TrainConfig {
            tau: t.tau,
            kappa: t.kappa,
            zeta: t.zeta,
            k_hat: t.k_hat,
            l_hat: t.l_hat,
            lr: t.lr,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            seed: self.seed,
            horizon: t.horizon,
            pretrain_iters: t.pretrain_iters,
            pretrain_lr: t.pretrain_lr,
            regularizer,
        };
        tc.validate().map_err(|e| cfg_err(e.to_string()))?;
        Ok(tc)
    }

    pub fn template(&self) -> Result<PolytopeTemplate> {
        let t = match self.sets.template.as_str() {
            "box" => PolytopeTemplate::boxed(self.model.nx),
            "polygon" if self.model.nx == 2 => PolytopeTemplate::polygon(self.sets.facets),
            other => return Err(cfg_err(format!("sets.template `{other}` is not box or (for nx = 2) polygon"))),
        };
        t.map_err(|e| cfg_err(format!("sets.template: {e}")))
    }

    pub fn problem(&self) -> Result<RciProblem> {
        let y = self.sets.y.output_set()?;
        let u = self.sets.u.input_set()?;
        if y.ny() != 1 || u.nu() != 1 {
            return Err(cfg_err("sets: the Duffing pipeline has one input and one output"));
        }
        RciProblem::new(self.template()?, y, u, self.train.horizon).map_err(|e| cfg_err(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 16);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c: RunConfig = toml::from_str("seed = 4\n[train]\ntau = 0.0\n").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.train.tau, 0.0);
        assert_eq!(c.model, ModelConfig::default());
        assert_ne!(c.hash(), RunConfig::default().hash());
    }

    #[test]
    fn bad_values_are_config_errors() {
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
        let mut c = RunConfig::default();
        c.train.kappa = 0.0;
        assert_eq!(c.validate().unwrap_err().exit_code(), 4);
        let mut c = RunConfig::default();
        c.sets.u = SetSpec { lo: Some(vec![1.0]), hi: Some(vec![-1.0]), ..Default::default() };
        assert_eq!(c.validate().unwrap_err().exit_code(), 4);
        let mut c = RunConfig::default();
        c.model.activation = String::from("relu");
        assert!(c.validate().is_err());
    }

    #[test]
    fn halfspace_sets() {
        let mut c = RunConfig::default();
        c.sets.y = SetSpec {
            a: Some(vec![vec![1.0], vec![-1.0]]),
            b: Some(vec![0.2, 0.1]),
            vertices: Some(vec![vec![-0.1], vec![0.2]]),
            ..Default::default()
        };
        let y = c.sets.y.output_set().unwrap();
        assert!(y.contains(&[0.15], 0.0) && !y.contains(&[-0.15], 1e-9));
        c.sets.y.vertices = Some(vec![vec![0.0], vec![0.2]]);
        assert!(c.sets.y.output_set().is_err());
    }
}
