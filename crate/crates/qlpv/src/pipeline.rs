//! The commands behind the CLI verbs. Every function takes the effective
//! [`RunConfig`] and writes below `config.out`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use qlpv_core::control::{closed_loop, ClosedLoopTrace, ControlWeights, STATE_TOL};
use qlpv_core::plant::gen_dataset;
use qlpv_core::qlpv::{bfr, IoDataset, QlpvModel};
use qlpv_core::rci::{
    algorithm1, characterize_w, solve_baseline_r, verify_rci, DisturbanceBox, RciProblem, RciSolution, VerifyReport,
};
use qlpv_core::synthesis::{
    pretrain, AdamState, Checkpoint, LossRecord, Pretrained, RciContext, RegularizerKind, TrainConfig, Trainer,
};
use qlpv_core::{Error, Mat};

use crate::config::RunConfig;
use crate::dataset::{fmt_f64, load_dataset, save_dataset, write_table};
use crate::error::{CliError, Result};
use crate::formats::{read_checkpoint, read_rci, write_json, CheckpointFile, RciFile, RunSummary};
use crate::svg::{self, Panel, Series};

/// Per-step increase of the `r_k` trace above which a step is flagged.
pub const TRACE_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default)]
pub struct Options {
    pub force: bool,
    /// Wall-clock columns are written as zero so reruns are bitwise equal.
    pub strict: bool,
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(())
}

fn claim(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(CliError::Exists(path.to_path_buf()));
    }
    create_parent(path)
}

fn hash_comment(cfg: &RunConfig) -> String {
    format!("config_hash={}", cfg.hash())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| String::from("NaN"), fmt_f64)
}

/// Writes the effective configuration to `out/config.toml`.
pub fn echo_config(cfg: &RunConfig) -> Result<PathBuf> {
    let path = cfg.out.join("config.toml");
    create_parent(&path)?;
    let text = format!("# {}\n{}", hash_comment(cfg), cfg.to_toml());
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

pub struct Datasets {
    pub train: IoDataset,
    pub disturbance: IoDataset,
    pub test: IoDataset,
}

/// Train, disturbance and test sets from seeds `seed + 1`, `+ 2`, `+ 3`.
pub fn gen_data(cfg: &RunConfig, opts: Options) -> Result<Vec<PathBuf>> {
    let d = &cfg.data;
    let plant = cfg.plant()?;
    let files = [
        (&d.train_file, d.train_points, 1, "train"),
        (&d.disturbance_file, d.disturbance_points, 2, "disturbance"),
        (&d.test_file, d.test_points, 3, "test"),
    ];
    let paths: Vec<PathBuf> = files.iter().map(|f| cfg.path(f.0)).collect();
    for p in &paths {
        claim(p, opts.force)?;
    }
    for ((_, n, offset, role), path) in files.iter().zip(&paths) {
        let seed = cfg.seed.wrapping_add(*offset);
        let data = gen_dataset(&plant, seed, *n, d.u_lo, d.u_hi, d.dt, d.hold)?;
        save_dataset(&data, path, &[hash_comment(cfg), format!("role={role} seed={seed}")])?;
        log::info!("wrote {} ({n} samples)", path.display());
    }
    Ok(paths)
}

pub fn load_data(cfg: &RunConfig) -> Result<Datasets> {
    let d = &cfg.data;
    let load = |p: &PathBuf| load_dataset(&cfg.path(p));
    let ds = Datasets { train: load(&d.train_file)?, disturbance: load(&d.disturbance_file)?, test: load(&d.test_file)? };
    for (name, set) in [("train", &ds.train), ("disturbance", &ds.disturbance), ("test", &ds.test)] {
        if set.nu() != 1 || set.ny() != 1 {
            return Err(CliError::Config(format!("{name} data has {} inputs and {} outputs, expected 1 and 1", set.nu(), set.ny())));
        }
    }
    Ok(ds)
}

/// Free-run BFR of `model` from `x0` on `data`.
pub fn free_run_bfr(model: &QlpvModel, x0: &[f64], data: &IoDataset) -> Result<f64> {
    let tr = model.simulate(x0, &data.u)?;
    let pred: Vec<f64> = tr.y.iter().map(|y| y[0]).collect();
    Ok(bfr(data.y.as_slice(), &pred)?)
}

/// BFR on train (from the fitted `x0`), disturbance and test (from rest).
pub fn scores(model: &QlpvModel, x0: &[f64], ds: &Datasets) -> Result<[f64; 3]> {
    let zero = vec![0.0; model.nx()];
    Ok([free_run_bfr(model, x0, &ds.train)?, free_run_bfr(model, &zero, &ds.disturbance)?, free_run_bfr(model, &zero, &ds.test)?])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Variant {
    /// `τ = 0`: identification alone, set computed afterwards.
    Sequential,
    /// Concurrent with the baseline regularizer.
    Baseline,
    /// Concurrent with bound propagation at the given `ζ`.
    Concurrent(f64),
}

impl Variant {
    pub fn of(config: &TrainConfig) -> Self {
        if config.tau == 0.0 {
            Variant::Sequential
        } else if config.regularizer == RegularizerKind::Baseline {
            Variant::Baseline
        } else {
            Variant::Concurrent(config.zeta)
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Variant::Sequential => "sequential",
            Variant::Baseline => "baseline",
            Variant::Concurrent(_) => "concurrent",
        }
    }

    pub fn name(&self) -> String {
        match self {
            Variant::Concurrent(z) => format!("concurrent_zeta_{z:.4}"),
            v => v.kind().to_string(),
        }
    }

    pub fn zeta(&self) -> Option<f64> {
        match self {
            Variant::Concurrent(z) => Some(*z),
            _ => None,
        }
    }

    /// `base` adjusted to this variant.
    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        match self {
            Variant::Sequential => c.tau = 0.0,
            Variant::Baseline => c.regularizer = RegularizerKind::Baseline,
            Variant::Concurrent(z) => {
                c.regularizer = RegularizerKind::BoundPropagation;
                c.zeta = *z;
            }
        }
        c
    }
}

pub fn context(cfg: &RunConfig, ds: &Datasets) -> Result<RciContext> {
    Ok(RciContext { dw: ds.disturbance.clone(), prob: cfg.problem()? })
}

/// Pretrained model, with the optimizer state reset for the outer loop.
pub fn pretrain_stage(cfg: &RunConfig, ds: &Datasets) -> Result<Pretrained> {
    let t0 = Instant::now();
    let mut p = pretrain(&ds.train, &cfg.dims()?, &cfg.train_config()?)?;
    log::info!("pretraining: {} iterations in {:.1} s", p.history.len(), t0.elapsed().as_secs_f64());
    p.adam = AdamState::new(p.adam.m.len());
    Ok(p)
}

/// Sizes of the set for a trained model.
#[derive(Clone, Debug)]
pub struct FinalSizes {
    pub w: DisturbanceBox,
    /// Baseline program on the final model.
    pub baseline: Option<RciSolution>,
    /// Iterative re-solve, for the concurrent variant.
    pub iterative: Option<(RciSolution, &'static str)>,
}

impl FinalSizes {
    pub fn d_baseline(&self) -> Option<f64> {
        self.baseline.as_ref().map(|s| s.r)
    }

    pub fn d_iterative(&self) -> Option<f64> {
        self.iterative.as_ref().map(|s| s.0.r).filter(|r| r.is_finite())
    }
}

/// `k_hat` iterations of the bound-propagation program from the baseline
/// optimizer, or from `fallback` when the baseline program is infeasible.
pub fn resolve(
    model: &QlpvModel,
    w: &DisturbanceBox,
    prob: &RciProblem,
    baseline: Option<&RciSolution>,
    fallback: &[f64],
    k_hat: usize,
    zeta: f64,
) -> Result<(RciSolution, &'static str)> {
    let (q0, source) = match baseline {
        Some(b) => (b.q.as_slice(), "baseline_program"),
        None if fallback.len() == prob.template.num_facets() => (fallback, "checkpoint"),
        None => {
            return Err(Error::Infeasible(String::from(
                "the baseline program is infeasible for this model and the checkpoint holds no set to start from",
            ))
            .into())
        }
    };
    Ok((algorithm1(model, w, prob, q0, k_hat, zeta)?, source))
}

fn baseline_or_none(model: &QlpvModel, w: &DisturbanceBox, prob: &RciProblem) -> Result<Option<RciSolution>> {
    match solve_baseline_r(model, w, prob) {
        Ok(s) => Ok(Some(s)),
        Err(Error::Infeasible(msg)) => {
            log::warn!("baseline program infeasible: {msg}");
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

pub fn final_sizes(cfg: &RunConfig, ctx: &RciContext, ck: &Checkpoint, variant: Variant) -> Result<FinalSizes> {
    let w = characterize_w(&ck.model, &ctx.dw, cfg.train.kappa)?;
    let baseline = baseline_or_none(&ck.model, &w, &ctx.prob)?;
    let iterative = match variant {
        Variant::Concurrent(z) => Some(resolve(&ck.model, &w, &ctx.prob, baseline.as_ref(), &ck.q, cfg.rci.k_hat, z)?),
        _ => None,
    };
    Ok(FinalSizes { w, baseline, iterative })
}

pub struct RunResult {
    pub variant: Variant,
    pub checkpoint: Checkpoint,
    /// Wall time of each logged outer iteration.
    pub wall: Vec<f64>,
    pub summary: RunSummary,
}

fn summarize(name: String, variant: &str, zeta: Option<f64>, bfr: [f64; 3], sizes: Option<&FinalSizes>) -> RunSummary {
    let d_baseline_program = sizes.and_then(FinalSizes::d_baseline);
    let d_iterative = sizes.and_then(FinalSizes::d_iterative);
    RunSummary {
        name,
        variant: variant.to_string(),
        zeta,
        bfr_train: bfr[0],
        bfr_disturbance: bfr[1],
        bfr_test: bfr[2],
        d_baseline_program,
        d_iterative,
        d: if zeta.is_some() { d_iterative } else { d_baseline_program },
    }
}

/// `l_hat` outer iterations of one variant from `init` (or from a
/// checkpoint), then the final scores and sizes.
pub fn train_variant(
    cfg: &RunConfig,
    ds: &Datasets,
    ctx: &RciContext,
    start: Start<'_>,
    variant: Variant,
    opts: Options,
) -> Result<RunResult> {
    let tc = variant.train_config(&cfg.train_config()?);
    let mut trainer = match start {
        Start::Pretrained(p) => Trainer::new(&ds.train, ctx, tc.clone(), p.clone())?,
        Start::Checkpoint(c) => Trainer::resume(&ds.train, ctx, tc.clone(), c.clone())?,
    };
    let mut wall = Vec::with_capacity(tc.l_hat);
    let t0 = Instant::now();
    for _ in 0..tc.l_hat {
        let rec = trainer.step()?;
        wall.push(if opts.strict { 0.0 } else { t0.elapsed().as_secs_f64() });
        log::debug!("{} iter {} fit {:.4e} r {:.5}", variant.name(), rec.outer_iter, rec.fit, rec.r);
    }
    let checkpoint = trainer.checkpoint();
    let sizes = final_sizes(cfg, ctx, &checkpoint, variant)?;
    let bfr = scores(&checkpoint.model, &checkpoint.x0, ds)?;
    let summary = summarize(variant.name(), variant.kind(), variant.zeta(), bfr, Some(&sizes));
    log::info!("{}: test BFR {:.2}, d {:?} ({:.1} s)", summary.name, bfr[2], summary.d, t0.elapsed().as_secs_f64());
    Ok(RunResult { variant, checkpoint, wall, summary })
}

#[derive(Clone, Copy)]
pub enum Start<'a> {
    Pretrained(&'a Pretrained),
    Checkpoint(&'a Checkpoint),
}

pub fn pretrained_checkpoint(p: &Pretrained) -> Checkpoint {
    Checkpoint {
        model: p.model.clone(),
        x0: p.x0.clone(),
        q: Vec::new(),
        v: Vec::new(),
        a: Vec::new(),
        r: f64::NAN,
        warm: Vec::new(),
        outer_iter: 0,
        loss_history: Vec::new(),
        adam: p.adam.clone(),
    }
}

fn log_rows(history: &[LossRecord], wall: &[f64]) -> Vec<Vec<String>> {
    let skip = history.len() - wall.len().min(history.len());
    history
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let t = if i >= skip { wall[i - skip] } else { 0.0 };
            vec![
                r.outer_iter.to_string(),
                fmt_f64(r.fit),
                fmt_f64(r.r),
                fmt_f64(r.total),
                fmt_f64(r.max_kkt),
                u8::from(r.degenerate).to_string(),
                u8::from(r.observer_held).to_string(),
                fmt_f64(t),
            ]
        })
        .collect()
}

/// Writes `<stem>.json` and `<stem>_log.csv`.
pub fn write_run(cfg: &RunConfig, stem: &Path, run: &RunResult, opts: Options) -> Result<(PathBuf, PathBuf)> {
    let json = PathBuf::from(format!("{}.json", stem.display()));
    let csv = PathBuf::from(format!("{}_log.csv", stem.display()));
    claim(&json, opts.force)?;
    claim(&csv, opts.force)?;
    let zeta = run.variant.zeta().unwrap_or(cfg.train.zeta);
    write_json(&CheckpointFile::new(&run.checkpoint, &cfg.hash(), zeta, Some(run.summary.clone())), &json)?;
    let header: Vec<String> = ["outer_iter", "fit_loss", "r", "J", "max_kkt_residual", "degenerate", "observer_held", "wall_time_s"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let comments = [hash_comment(cfg), format!("run={}", run.summary.name)];
    write_table(&csv, &comments, &header, &log_rows(&run.checkpoint.loss_history, &run.wall))?;
    Ok((json, csv))
}

/// Single run of the configured variant, from pretraining or a checkpoint.
pub fn identify(cfg: &RunConfig, opts: Options, resume: Option<&Path>) -> Result<RunResult> {
    let ds = load_data(cfg)?;
    let ctx = context(cfg, &ds)?;
    let variant = Variant::of(&cfg.train_config()?);
    let run = match resume {
        Some(path) => {
            let (_, ck) = read_checkpoint(path)?;
            train_variant(cfg, &ds, &ctx, Start::Checkpoint(&ck), variant, opts)?
        }
        None => {
            let p = pretrain_stage(cfg, &ds)?;
            train_variant(cfg, &ds, &ctx, Start::Pretrained(&p), variant, opts)?
        }
    };
    write_run(cfg, &cfg.out.join("checkpoint"), &run, opts)?;
    Ok(run)
}

pub struct SweepResult {
    pub pretrained: RunSummary,
    pub runs: Vec<RunResult>,
}

impl SweepResult {
    pub fn summaries(&self) -> Vec<RunSummary> {
        std::iter::once(self.pretrained.clone()).chain(self.runs.iter().map(|r| r.summary.clone())).collect()
    }
}

/// Sequential, baseline and every `ζ` of the sweep from one pretrained
/// model. The runs are independent and execute on separate threads.
pub fn run_sweep(cfg: &RunConfig, ds: &Datasets, opts: Options) -> Result<SweepResult> {
    let ctx = context(cfg, ds)?;
    let p = pretrain_stage(cfg, ds)?;
    let pre_ck = pretrained_checkpoint(&p);
    let pre_sizes = final_sizes(cfg, &ctx, &pre_ck, Variant::Sequential)?;
    let pretrained = summarize(String::from("pretrained"), "pretrained", None, scores(&p.model, &p.x0, ds)?, Some(&pre_sizes));
    let variants: Vec<Variant> = [Variant::Sequential, Variant::Baseline]
        .into_iter()
        .chain(cfg.sweep.zetas.iter().map(|&z| Variant::Concurrent(z)))
        .collect();
    let (ctx, p) = (&ctx, &p);
    let runs = std::thread::scope(|s| {
        let handles: Vec<_> =
            variants.iter().map(|&v| s.spawn(move || train_variant(cfg, ds, ctx, Start::Pretrained(p), v, opts))).collect();
        handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect::<Result<Vec<_>>>()
    })?;
    Ok(SweepResult { pretrained, runs })
}

/// [`run_sweep`] plus `runs/*.json`, the size-vs-`ζ` table and figure, and
/// `report.md`.
pub fn sweep(cfg: &RunConfig, opts: Options) -> Result<SweepResult> {
    let ds = load_data(cfg)?;
    let res = run_sweep(cfg, &ds, opts)?;
    let runs_dir = cfg.out.join("runs");
    for run in &res.runs {
        write_run(cfg, &runs_dir.join(run.variant.name()), run, opts)?;
    }
    write_sweep_figure(cfg, &res, opts)?;
    let report = cfg.out.join("report.md");
    claim(&report, opts.force)?;
    let text = format!("<!-- {} -->\n\n{}", hash_comment(cfg), summary_table(&res.summaries()));
    std::fs::write(&report, text).map_err(|e| CliError::io(&report, e))?;
    Ok(res)
}

fn find<'a>(res: &'a SweepResult, kind: &str) -> Option<&'a RunSummary> {
    res.runs.iter().map(|r| &r.summary).find(|s| s.variant == kind)
}

fn write_sweep_figure(cfg: &RunConfig, res: &SweepResult, opts: Options) -> Result<()> {
    let d_seq = find(res, "sequential").and_then(|s| s.d);
    let d_base = find(res, "baseline").and_then(|s| s.d);
    let conc: Vec<&RunSummary> = res.runs.iter().map(|r| &r.summary).filter(|s| s.variant == "concurrent").collect();
    let csv = cfg.out.join("size_vs_zeta.csv");
    claim(&csv, opts.force)?;
    let header: Vec<String> =
        ["zeta", "d_concurrent", "d_baseline", "d_sequential", "bfr_test"].iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> = conc
        .iter()
        .map(|s| vec![fmt_opt(s.zeta), fmt_opt(s.d), fmt_opt(d_base), fmt_opt(d_seq), fmt_f64(s.bfr_test)])
        .collect();
    write_table(&csv, &[hash_comment(cfg)], &header, &rows)?;
    let mut hlines = Vec::new();
    if let Some(d) = d_seq {
        hlines.push((String::from("sequential"), d));
    }
    if let Some(d) = d_base {
        hlines.push((String::from("concurrent, baseline"), d));
    }
    let panel = Panel {
        title: String::from("Set size against the box inflation"),
        xlabel: String::from("zeta"),
        ylabel: String::from("d"),
        series: vec![Series {
            name: String::from("concurrent, bound propagation"),
            xs: conc.iter().map(|s| s.zeta.unwrap_or(f64::NAN)).collect(),
            ys: conc.iter().map(|s| s.d.unwrap_or(f64::NAN)).collect(),
            points: true,
            ..Default::default()
        }],
        hlines,
        ..Default::default()
    };
    let path = cfg.out.join("size_vs_zeta.svg");
    std::fs::write(&path, svg::render(&[panel], 640.0, 400.0)).map_err(|e| CliError::io(&path, e))
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| String::from("-"), |v| format!("{v:.digits$}"))
}

fn order(s: &RunSummary) -> (u8, f64) {
    let rank = match s.variant.as_str() {
        "pretrained" => 0,
        "sequential" => 1,
        "baseline" => 2,
        "concurrent" => 3,
        _ => 4,
    };
    (rank, s.zeta.unwrap_or(0.0))
}

/// Markdown table, ordered pretrained, sequential, baseline, then
/// concurrent by `ζ`.
pub fn summary_table(rows: &[RunSummary]) -> String {
    let mut rows: Vec<&RunSummary> = rows.iter().collect();
    rows.sort_by(|a, b| order(a).partial_cmp(&order(b)).unwrap_or(std::cmp::Ordering::Equal));
    let mut out = String::from(
        "| run | variant | zeta | BFR train | BFR disturbance | BFR test | d (baseline program) | d (iterative) | d |\n\
         |---|---|---|---|---|---|---|---|---|\n",
    );
    for s in rows {
        out.push_str(&format!(
            "| {} | {} | {} | {:.2} | {:.2} | {:.2} | {} | {} | {} |\n",
            s.name,
            s.variant,
            cell(s.zeta, 4),
            s.bfr_train,
            s.bfr_disturbance,
            s.bfr_test,
            cell(s.d_baseline_program, 6),
            cell(s.d_iterative, 6),
            cell(s.d, 6),
        ));
    }
    out
}

/// Table over checkpoint files that carry a run summary.
pub fn report(paths: &[PathBuf]) -> Result<String> {
    let mut rows = Vec::with_capacity(paths.len());
    for p in paths {
        let (f, _) = read_checkpoint(p)?;
        rows.push(f.summary.ok_or_else(|| CliError::format(p, "checkpoint has no run summary"))?);
    }
    Ok(summary_table(&rows))
}

/// Steps `k` (0-based into the trace) with `r_{k+1} > r_k + tol`.
pub fn trace_increases(trace: &[f64], tol: f64) -> Vec<usize> {
    trace.windows(2).enumerate().filter(|(_, w)| w[1] > w[0] + tol).map(|(k, _)| k).collect()
}

pub struct RciOutcome {
    pub solution: RciSolution,
    pub w: DisturbanceBox,
    pub baseline_r: Option<f64>,
    pub q0_source: &'static str,
    pub verify: VerifyReport,
    pub increases: Vec<usize>,
}

/// Re-solve and verification on a trained model.
pub fn rci_on_model(cfg: &RunConfig, ctx: &RciContext, ck: &Checkpoint, zeta: f64) -> Result<RciOutcome> {
    let w = characterize_w(&ck.model, &ctx.dw, cfg.train.kappa)?;
    let baseline = baseline_or_none(&ck.model, &w, &ctx.prob)?;
    let (solution, q0_source) = resolve(&ck.model, &w, &ctx.prob, baseline.as_ref(), &ck.q, cfg.rci.k_hat, zeta)?;
    if !solution.is_optimal() {
        log::warn!("iterative re-solve stopped early ({:?}); keeping the last feasible iterate", solution.status);
    }
    let verify = verify_rci(&ck.model, &w, &ctx.prob, &solution, cfg.rci.verify_samples, cfg.rci.verify_seed)?;
    let increases = trace_increases(&solution.trace, TRACE_TOL);
    Ok(RciOutcome { baseline_r: baseline.map(|b| b.r), solution, w, q0_source, verify, increases })
}

/// `rci` verb: writes `rci.json`, `rci_trace.csv` and `rci_trace.svg`.
pub fn rci(cfg: &RunConfig, opts: Options, checkpoint: &Path) -> Result<RciOutcome> {
    let (file, ck) = read_checkpoint(checkpoint)?;
    let ds = load_data(cfg)?;
    let ctx = context(cfg, &ds)?;
    let out = rci_on_model(cfg, &ctx, &ck, file.zeta)?;
    let json = cfg.out.join("rci.json");
    let csv = cfg.out.join("rci_trace.csv");
    claim(&json, opts.force)?;
    claim(&csv, opts.force)?;
    write_json(&RciFile::new(&out.solution, &out.w, &cfg.hash(), out.q0_source, out.increases.clone(), Some(&out.verify)), &json)?;
    let rows: Vec<Vec<String>> = out
        .solution
        .trace
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let flagged = k > 0 && out.increases.contains(&(k - 1));
            vec![(k + 1).to_string(), fmt_f64(*r), u8::from(flagged).to_string()]
        })
        .collect();
    let header = vec![String::from("k"), String::from("r"), String::from("increase")];
    let comments = [hash_comment(cfg), format!("r0={} q0_source={}", fmt_opt(out.baseline_r), out.q0_source)];
    write_table(&csv, &comments, &header, &rows)?;
    let panel = Panel {
        title: String::from("Iterative re-solve"),
        xlabel: String::from("k"),
        ylabel: String::from("r_k"),
        series: vec![Series {
            name: String::from("r_k"),
            xs: (1..=out.solution.trace.len()).map(|k| k as f64).collect(),
            ys: out.solution.trace.clone(),
            ..Default::default()
        }],
        hlines: out.baseline_r.map(|r| vec![(String::from("baseline program"), r)]).unwrap_or_default(),
        ..Default::default()
    };
    let svg_path = cfg.out.join("rci_trace.svg");
    std::fs::write(&svg_path, svg::render(&[panel], 640.0, 400.0)).map_err(|e| CliError::io(&svg_path, e))?;
    Ok(out)
}

/// Piecewise-constant references from `simulate.levels`, or the reference
/// file when one is configured.
pub fn references(cfg: &RunConfig) -> Result<Mat<f64>> {
    let s = &cfg.simulate;
    if let Some(p) = &s.reference_file {
        let path = cfg.path(p);
        let f = std::fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(f);
        let mut vals = Vec::new();
        let mut cols = 0;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| CliError::format(&path, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            let row: Vec<f64> = rec
                .iter()
                .skip(1)
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| CliError::Parse { path: path.clone(), line, msg: format!("bad number: {e}") })?;
            cols = row.len();
            vals.extend(row);
        }
        if cols != 1 || vals.is_empty() {
            return Err(CliError::format(&path, "expected columns t,r and at least one row"));
        }
        return Ok(Mat::from_vec(vals.len(), 1, vals));
    }
    Ok(Mat::from_fn(s.steps.max(1), 1, |t, _| s.levels[(t / s.segment) % s.levels.len()]))
}

pub struct SimOutcome {
    pub trace: ClosedLoopTrace,
    pub q: Vec<f64>,
    /// Samples with `y ∉ 𝕐`, `F z > q + tol` and `u ∉ 𝕌`.
    pub output_violations: usize,
    pub state_violations: usize,
    pub input_violations: usize,
    pub mean_abs_error: f64,
}

pub fn simulate_model(cfg: &RunConfig, model: &QlpvModel, q: &[f64]) -> Result<SimOutcome> {
    let prob = cfg.problem()?;
    let refs = references(cfg)?;
    let z0 = vec![0.0; model.nx()];
    let weights = ControlWeights { input: cfg.simulate.input_weight, state: cfg.simulate.state_weight };
    let plant = cfg.plant()?;
    let trace =
        closed_loop(&plant, model, q, &prob.template, &prob.u, &refs, &z0, &[0.0, 0.0], cfg.simulate.steps, cfg.data.dt, weights)?;
    let output_violations = trace.y.iter().filter(|y| !prob.y.contains(y, 0.0)).count();
    let state_violations = trace.z.iter().filter(|z| !prob.template.contains(z, q, STATE_TOL)).count();
    let input_violations = trace.u.iter().filter(|u| !prob.u.contains(u, 0.0)).count();
    let n = trace.y.len().max(1) as f64;
    let mean_abs_error = trace.y.iter().zip(&trace.r).map(|(y, r)| (y[0] - r[0]).abs()).sum::<f64>() / n;
    Ok(SimOutcome { trace, q: q.to_vec(), output_violations, state_violations, input_violations, mean_abs_error })
}

/// Vertices of `X(q)` in angular order around their mean.
fn polygon(cfg: &RunConfig, q: &[f64]) -> Result<Vec<(f64, f64)>> {
    let verts = cfg.template()?.vertices(q)?;
    let n = verts.len() as f64;
    let (cx, cy) = (verts.iter().map(|v| v[0]).sum::<f64>() / n, verts.iter().map(|v| v[1]).sum::<f64>() / n);
    let mut pts: Vec<(f64, f64)> = verts.iter().map(|v| (v[0], v[1])).collect();
    pts.sort_by(|a, b| (a.1 - cy).atan2(a.0 - cx).total_cmp(&(b.1 - cy).atan2(b.0 - cx)));
    Ok(pts)
}

/// `simulate` verb: writes `closed_loop.csv` and `closed_loop.svg`; a
/// controller failure is reported after the partial trace is written.
pub fn simulate(cfg: &RunConfig, opts: Options, checkpoint: &Path, rci_file: &Path) -> Result<SimOutcome> {
    let (_, ck) = read_checkpoint(checkpoint)?;
    let sol = read_rci(rci_file)?;
    let out = simulate_model(cfg, &ck.model, &sol.q)?;
    let tr = &out.trace;
    let nx = ck.model.nx();
    let csv = cfg.out.join("closed_loop.csv");
    claim(&csv, opts.force)?;
    let mut header = vec![String::from("t"), String::from("r"), String::from("y"), String::from("u")];
    header.extend((1..=nx).map(|i| format!("z{i}")));
    header.push(String::from("status"));
    let rows: Vec<Vec<String>> = (0..tr.len())
        .map(|t| {
            let mut row = vec![fmt_f64(t as f64 * cfg.data.dt), fmt_f64(tr.r[t][0]), fmt_f64(tr.y[t][0]), fmt_f64(tr.u[t][0])];
            row.extend(tr.z[t].iter().map(|&v| fmt_f64(v)));
            row.push(format!("{:?}", tr.status[t]));
            row
        })
        .collect();
    write_table(&csv, &[hash_comment(cfg)], &header, &rows)?;
    let ts: Vec<f64> = (0..tr.len()).map(|t| t as f64 * cfg.data.dt).collect();
    let prob = cfg.problem()?;
    let top = Panel {
        title: String::from("Output tracking"),
        xlabel: String::from("time [s]"),
        ylabel: String::from("y"),
        series: vec![
            Series { name: String::from("y"), xs: ts.clone(), ys: tr.y.iter().map(|y| y[0]).collect(), ..Default::default() },
            Series {
                name: String::from("reference"),
                xs: ts.clone(),
                ys: tr.r.iter().map(|r| r[0]).collect(),
                dashed: true,
                ..Default::default()
            },
        ],
        hlines: prob.y.vertices.iter().map(|v| (String::from("output bound"), v[0])).collect(),
        ..Default::default()
    };
    let bottom = if nx == 2 {
        Panel {
            title: String::from("Observer state in X(q)"),
            xlabel: String::from("z1"),
            ylabel: String::from("z2"),
            series: vec![Series {
                name: String::from("z"),
                xs: tr.z.iter().map(|z| z[0]).collect(),
                ys: tr.z.iter().map(|z| z[1]).collect(),
                ..Default::default()
            }],
            polygons: vec![polygon(cfg, &sol.q)?],
            equal_axes: true,
            ..Default::default()
        }
    } else {
        Panel {
            title: String::from("Observer state"),
            xlabel: String::from("time [s]"),
            ylabel: String::from("z"),
            series: (0..nx)
                .map(|i| Series {
                    name: format!("z{}", i + 1),
                    xs: ts.clone(),
                    ys: tr.z.iter().take(tr.len()).map(|z| z[i]).collect(),
                    ..Default::default()
                })
                .collect(),
            ..Default::default()
        }
    };
    let svg_path = cfg.out.join("closed_loop.svg");
    std::fs::write(&svg_path, svg::render(&[top, bottom], 720.0, 380.0)).map_err(|e| CliError::io(&svg_path, e))?;
    if let Some(step) = tr.failed_step {
        return Err(CliError::ControllerFailed { step, status: format!("{:?}", tr.status[step]) });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(name: &str, variant: &str, zeta: Option<f64>, d: f64) -> RunSummary {
        RunSummary {
            name: name.to_string(),
            variant: variant.to_string(),
            zeta,
            bfr_train: 90.0,
            bfr_disturbance: 91.0,
            bfr_test: 92.0,
            d_baseline_program: Some(d),
            d_iterative: None,
            d: Some(d),
        }
    }

    #[test]
    fn table_orders_variants() {
        let t = summary_table(&[
            summary("c2", "concurrent", Some(0.07), 1.0),
            summary("b", "baseline", None, 2.0),
            summary("c1", "concurrent", Some(0.01), 1.5),
            summary("s", "sequential", None, 3.0),
        ]);
        let names: Vec<&str> = t.lines().skip(2).map(|l| l.split('|').nth(1).unwrap().trim()).collect();
        assert_eq!(names, ["s", "b", "c1", "c2"]);
    }

    #[test]
    fn empty_table_is_header_only() {
        assert_eq!(summary_table(&[]).lines().count(), 2);
    }

    #[test]
    fn increases_are_flagged() {
        assert_eq!(trace_increases(&[3.0, 2.0, 2.0 + 5e-7, 2.1, 1.0], 1e-6), vec![2]);
        assert!(trace_increases(&[1.0], 1e-6).is_empty());
    }

    #[test]
    fn variants_map_to_configs() {
        let base = TrainConfig::default();
        assert_eq!(Variant::Sequential.train_config(&base).tau, 0.0);
        assert_eq!(Variant::of(&Variant::Baseline.train_config(&base)), Variant::Baseline);
        let c = Variant::Concurrent(0.04).train_config(&base);
        assert_eq!(Variant::of(&c), Variant::Concurrent(0.04));
        assert_eq!(Variant::Concurrent(0.04).name(), "concurrent_zeta_0.0400");
    }

    #[test]
    fn existing_files_need_force() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.csv");
        claim(&p, false).unwrap();
        std::fs::write(&p, "x").unwrap();
        assert!(matches!(claim(&p, false), Err(CliError::Exists(_))));
        claim(&p, true).unwrap();
    }
}
