//! JSON files for models, checkpoints and RCI solutions. Each file carries a
//! `schema` tag; non-finite numbers are stored as `null`.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use qlpv_core::qlpv::{Activation, Layer, Mlp, QlpvModel, SchedulingNet};
use qlpv_core::rci::{DisturbanceBox, RciSolution, RciStatus, VerifyReport};
use qlpv_core::synthesis::{AdamState, Checkpoint, LossRecord};
use qlpv_core::Mat;

use crate::error::{CliError, Result};

pub const CHECKPOINT_SCHEMA: &str = "qlpv-checkpoint/1";
pub const RCI_SCHEMA: &str = "qlpv-rci/1";

fn fin(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn unfin(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

fn rows(m: &Mat<f64>) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn mat(rows: &[Vec<f64>], what: &str) -> Result<Mat<f64>, String> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(format!("{what}: ragged matrix"));
    }
    Ok(Mat::from_vec(rows.len(), cols, rows.concat()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerFile {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub activation: String,
    pub a: Vec<Vec<Vec<f64>>>,
    pub b: Vec<Vec<Vec<f64>>>,
    pub c: Vec<Vec<f64>>,
    pub l: Vec<Vec<Vec<f64>>>,
    pub nets: Vec<Vec<LayerFile>>,
}

impl ModelFile {
    pub fn from_model(m: &QlpvModel) -> Self {
        ModelFile {
            activation: m.net.activation.name().to_string(),
            a: m.a.iter().map(rows).collect(),
            b: m.b.iter().map(rows).collect(),
            c: rows(&m.c),
            l: m.l.iter().map(rows).collect(),
            nets: m
                .net
                .nets
                .iter()
                .map(|n| n.layers.iter().map(|l| LayerFile { w: rows(&l.w), b: l.b.clone() }).collect())
                .collect(),
        }
    }

    pub fn to_model(&self) -> Result<QlpvModel, String> {
        let activation =
            Activation::from_name(&self.activation).ok_or_else(|| format!("unknown activation `{}`", self.activation))?;
        let list = |v: &[Vec<Vec<f64>>], what: &str| v.iter().map(|m| mat(m, what)).collect::<Result<Vec<_>, _>>();
        let nets = self
            .nets
            .iter()
            .map(|layers| {
                Ok(Mlp {
                    layers: layers
                        .iter()
                        .map(|l| Ok(Layer { w: mat(&l.w, "net weight")?, b: l.b.clone() }))
                        .collect::<Result<Vec<_>, String>>()?,
                })
            })
            .collect::<Result<Vec<_>, String>>()?;
        QlpvModel::new(list(&self.a, "A")?, list(&self.b, "B")?, mat(&self.c, "C")?, list(&self.l, "L")?, SchedulingNet {
            nets,
            activation,
        })
        .map_err(|e| e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub outer_iter: usize,
    pub fit: f64,
    pub r: Option<f64>,
    pub total: f64,
    pub max_kkt: f64,
    pub degenerate: bool,
    pub observer_held: bool,
}

impl From<&LossRecord> for LogRow {
    fn from(r: &LossRecord) -> Self {
        LogRow {
            outer_iter: r.outer_iter,
            fit: r.fit,
            r: fin(r.r),
            total: r.total,
            max_kkt: r.max_kkt,
            degenerate: r.degenerate,
            observer_held: r.observer_held,
        }
    }
}

impl LogRow {
    fn record(&self) -> LossRecord {
        LossRecord {
            outer_iter: self.outer_iter,
            fit: self.fit,
            r: unfin(self.r),
            total: self.total,
            max_kkt: self.max_kkt,
            degenerate: self.degenerate,
            observer_held: self.observer_held,
        }
    }
}

/// Scores of a finished training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    /// `pretrained`, `sequential`, `baseline` or `concurrent`.
    pub variant: String,
    pub zeta: Option<f64>,
    pub bfr_train: f64,
    pub bfr_disturbance: f64,
    pub bfr_test: f64,
    /// Baseline program value on the final model; `None` if infeasible.
    pub d_baseline_program: Option<f64>,
    /// Iterative value after the post-training re-solve, if it was run.
    pub d_iterative: Option<f64>,
    /// The size used to compare variants.
    pub d: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub schema: String,
    pub config_hash: String,
    pub zeta: f64,
    pub model: ModelFile,
    pub x0: Vec<f64>,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub a: Vec<f64>,
    pub r: Option<f64>,
    pub warm: Vec<f64>,
    pub outer_iter: usize,
    pub loss_history: Vec<LogRow>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub adam_t: u64,
    pub summary: Option<RunSummary>,
}

impl CheckpointFile {
    pub fn new(ck: &Checkpoint, config_hash: &str, zeta: f64, summary: Option<RunSummary>) -> Self {
        CheckpointFile {
            schema: CHECKPOINT_SCHEMA.to_string(),
            config_hash: config_hash.to_string(),
            zeta,
            model: ModelFile::from_model(&ck.model),
            x0: ck.x0.clone(),
            q: ck.q.clone(),
            v: ck.v.clone(),
            a: ck.a.clone(),
            r: fin(ck.r),
            warm: ck.warm.clone(),
            outer_iter: ck.outer_iter,
            loss_history: ck.loss_history.iter().map(LogRow::from).collect(),
            adam_m: ck.adam.m.clone(),
            adam_v: ck.adam.v.clone(),
            adam_t: ck.adam.t,
            summary,
        }
    }

    pub fn checkpoint(&self) -> Result<Checkpoint, String> {
        Ok(Checkpoint {
            model: self.model.to_model()?,
            x0: self.x0.clone(),
            q: self.q.clone(),
            v: self.v.clone(),
            a: self.a.clone(),
            r: unfin(self.r),
            warm: self.warm.clone(),
            outer_iter: self.outer_iter,
            loss_history: self.loss_history.iter().map(LogRow::record).collect(),
            adam: AdamState { m: self.adam_m.clone(), v: self.adam_v.clone(), t: self.adam_t },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyFile {
    pub passed: bool,
    pub rci_rows: Option<f64>,
    pub output_rows: Option<f64>,
    pub input_rows: Option<f64>,
    pub cone_rows: Option<f64>,
    pub containment_rows: Option<f64>,
    pub samples: usize,
    pub max_state_violation: Option<f64>,
    pub state_violations: usize,
    pub max_output_violation: Option<f64>,
    pub output_violations: usize,
    pub input_violations: usize,
    pub max_schedule_violation: Option<f64>,
    pub schedule_violations: usize,
}

impl From<&VerifyReport> for VerifyFile {
    fn from(r: &VerifyReport) -> Self {
        VerifyFile {
            passed: r.passed(),
            rci_rows: fin(r.rci_rows),
            output_rows: fin(r.output_rows),
            input_rows: fin(r.input_rows),
            cone_rows: fin(r.cone_rows),
            containment_rows: fin(r.containment_rows),
            samples: r.samples,
            max_state_violation: fin(r.max_state_violation),
            state_violations: r.state_violations,
            max_output_violation: fin(r.max_output_violation),
            output_violations: r.output_violations,
            input_violations: r.input_violations,
            max_schedule_violation: fin(r.max_schedule_violation),
            schedule_violations: r.schedule_violations,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RciFile {
    pub schema: String,
    pub config_hash: String,
    /// `baseline_program` or `checkpoint`.
    pub q0_source: String,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub a: Vec<f64>,
    pub r: Option<f64>,
    pub trace: Vec<f64>,
    /// `optimal` or `step_failed:<iteration>:<qp status>`.
    pub status: String,
    pub q_tilde: Vec<f64>,
    pub zeta: f64,
    pub c_w: Vec<f64>,
    pub eps_w: Vec<f64>,
    pub kappa: f64,
    /// Steps `k` with `r_{k+1} > r_k + 1e-6`.
    pub trace_increases: Vec<usize>,
    pub verify: Option<VerifyFile>,
}

pub fn status_name(s: &RciStatus) -> String {
    match s {
        RciStatus::Optimal => String::from("optimal"),
        RciStatus::StepFailed { iteration, status } => format!("step_failed:{iteration}:{status:?}"),
    }
}

impl RciFile {
    pub fn new(
        sol: &RciSolution,
        w: &DisturbanceBox,
        config_hash: &str,
        q0_source: &str,
        trace_increases: Vec<usize>,
        verify: Option<&VerifyReport>,
    ) -> Self {
        RciFile {
            schema: RCI_SCHEMA.to_string(),
            config_hash: config_hash.to_string(),
            q0_source: q0_source.to_string(),
            q: sol.q.clone(),
            v: sol.v.clone(),
            a: sol.a.clone(),
            r: fin(sol.r),
            trace: sol.trace.clone(),
            status: status_name(&sol.status),
            q_tilde: sol.q_tilde.clone(),
            zeta: sol.zeta,
            c_w: w.c_w.clone(),
            eps_w: w.eps_w.clone(),
            kappa: w.kappa,
            trace_increases,
            verify: verify.map(VerifyFile::from),
        }
    }

    pub fn solution(&self) -> RciSolution {
        RciSolution {
            q: self.q.clone(),
            v: self.v.clone(),
            a: self.a.clone(),
            r: unfin(self.r),
            trace: self.trace.clone(),
            status: RciStatus::Optimal,
            q_tilde: self.q_tilde.clone(),
            zeta: self.zeta,
            x: Vec::new(),
            max_kkt: 0.0,
            degenerate: Vec::new(),
        }
    }

    pub fn disturbance(&self) -> Result<DisturbanceBox, String> {
        DisturbanceBox::new(self.c_w.clone(), self.eps_w.clone(), self.kappa).map_err(|e| e.to_string())
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::format(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse { path: path.into(), line: e.line() as u64, msg: e.to_string() })
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointFile, Checkpoint)> {
    let f: CheckpointFile = read_json(path)?;
    if f.schema != CHECKPOINT_SCHEMA {
        return Err(CliError::format(path, format!("schema `{}`, expected `{CHECKPOINT_SCHEMA}`", f.schema)));
    }
    let ck = f.checkpoint().map_err(|e| CliError::format(path, e))?;
    Ok((f, ck))
}

pub fn read_rci(path: &Path) -> Result<RciFile> {
    let f: RciFile = read_json(path)?;
    if f.schema != RCI_SCHEMA {
        return Err(CliError::format(path, format!("schema `{}`, expected `{RCI_SCHEMA}`", f.schema)));
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use qlpv_core::qlpv::ModelDims;
    use rand::SeedableRng;

    fn model() -> QlpvModel {
        let dims = ModelDims { nx: 2, nu: 1, ny: 1, np: 3, hidden: vec![3], activation: Activation::EluPlusOne };
        QlpvModel::random(&dims, &mut rand_chacha::ChaCha8Rng::seed_from_u64(5)).unwrap()
    }

    #[test]
    fn model_round_trip_is_exact() {
        let m = model();
        let text = serde_json::to_string(&ModelFile::from_model(&m)).unwrap();
        let back: ModelFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_model().unwrap(), m);
    }

    #[test]
    fn checkpoint_round_trip_keeps_nan_as_null() {
        let m = model();
        let ck = Checkpoint {
            x0: vec![0.1, -0.2],
            q: vec![1.0; 4],
            v: vec![0.0; 4],
            a: vec![0.1, 0.2, 0.3],
            r: 0.5,
            warm: vec![1.0 / 3.0],
            outer_iter: 2,
            loss_history: vec![LossRecord {
                outer_iter: 0,
                fit: 1e-3,
                r: f64::NAN,
                total: 1e-3,
                max_kkt: 0.0,
                degenerate: false,
                observer_held: true,
            }],
            adam: AdamState { m: vec![1e-300; m.num_params() + 2], v: vec![0.0; m.num_params() + 2], t: 7 },
            model: m,
        };
        let f = CheckpointFile::new(&ck, "abc", 0.05, None);
        let text = serde_json::to_string(&f).unwrap();
        assert!(text.contains("\"r\":null"));
        let back: CheckpointFile = serde_json::from_str(&text).unwrap();
        let ck2 = back.checkpoint().unwrap();
        assert!(ck2.loss_history[0].r.is_nan());
        assert_eq!(ck2.model, ck.model);
        assert_eq!(ck2.adam, ck.adam);
        assert_eq!(ck2.warm, ck.warm);
    }
}
