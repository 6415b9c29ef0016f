use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    edit_success_rate, mean, row_distances, trajectory_offsets, MetricsReport, RunLabel, RunOutputs,
    TrajectoryOffsets,
};
use crate::dataset::{points_matrix, read_points_csv, Condition, ConditionMode};
use crate::error::{Error, Result};
use crate::inversion::{edit_conditions, expand_conditions, tighten_all};
use crate::model::Objective;
use crate::network::{save_checkpoint, train, Checkpoint};
use crate::numerics::RngStream;
use crate::trajectory::Trajectory;

use super::svg::{emit_svg_curve, emit_svg_scatter, Point, ScatterLayers, Style};
use super::{
    held_out_points, write_json, write_matrix_csv, Engine, ExperimentConfig, ExperimentKind, Inverted, MethodConfig,
    MethodName, RoundTrip, RunContext,
};

/// Stream ids for per-run randomness, offset from the held-out stream.
const PRIOR_STREAM: u64 = 0x5052_494f_5200;
const METHOD_STREAM: u64 = 0x4d45_5448_4f44;

/// Scale of the tight rows in `table1.csv`.
pub const TABLE1_TIGHT_SCALE: f64 = 0.7;

/// Runs `kind` with `config`, writing into `config.output_dir`.
pub fn run(kind: ExperimentKind, config: ExperimentConfig) -> Result<PathBuf> {
    let mut ctx = RunContext::new(config, kind)?;
    match kind {
        ExperimentKind::Train => run_train(&mut ctx),
        ExperimentKind::Invert => run_invert(&mut ctx),
        ExperimentKind::Reconstruct => run_reconstruct(&mut ctx),
        ExperimentKind::Edit => run_edit(&mut ctx),
        ExperimentKind::SweepScale => run_scale_sweep(&mut ctx),
        ExperimentKind::Fig3 => run_fig3(&mut ctx),
        ExperimentKind::Table1 => run_table1_analog(&mut ctx),
        ExperimentKind::BaselineRandom => run_baseline_random(&mut ctx),
        ExperimentKind::Report => run_report(&mut ctx),
    }?;
    ctx.finish()?;
    Ok(ctx.out.clone())
}

/// Conditions for the rows of `x0` under `mode`.
pub fn build_conditions(mode: ConditionMode, x0: ArrayView2<'_, f64>, class_id: usize, scale: f64) -> Result<Vec<Condition>> {
    Ok(match mode {
        ConditionMode::Null => vec![Condition::Null],
        ConditionMode::Class => vec![Condition::class(class_id)],
        ConditionMode::Tight => tighten_all(x0, scale)?,
        ConditionMode::ClassTight => tighten_all(x0, scale)?
            .into_iter()
            .map(|c| match c {
                Condition::Tight { anchor, scale } => Condition::ClassTight { id: class_id, anchor, scale },
                other => other,
            })
            .collect(),
    })
}

fn input_points(ctx: &RunContext, seed: u64) -> Result<Array2<f64>> {
    let cfg = &ctx.config;
    match &cfg.inputs {
        Some(path) => {
            let file = fs::File::open(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            points_matrix(&read_points_csv(file)?)
        }
        None => held_out_points(&cfg.dataset, cfg.source_class, seed, cfg.held_out),
    }
}

fn method_rng(seed: u64) -> RngStream {
    RngStream::with_stream(seed, METHOD_STREAM)
}

fn engine_for<'a>(ckpt: &'a Checkpoint, method: &MethodConfig) -> Result<Engine<'a>> {
    Engine::from_checkpoint(ckpt, method.clone())
}

fn method_label(method: &MethodConfig) -> String {
    match method.name {
        MethodName::Renoise => format!("renoise_k{}", method.iterations),
        MethodName::Ddim => "ddim".into(),
        MethodName::EditFriendly => "edit_friendly".into(),
        MethodName::Euler => "euler".into(),
    }
}

fn label(method: &MethodConfig, mode: ConditionMode, scale: f64, seed: u64) -> RunLabel {
    let scale = match mode {
        ConditionMode::Tight | ConditionMode::ClassTight => scale,
        _ => 0.0,
    };
    RunLabel {
        method: method_label(method),
        condition: mode.as_str().to_string(),
        scale,
        seed,
    }
}

fn report_for(
    ctx: &RunContext,
    label: RunLabel,
    x0: &Array2<f64>,
    rt: &RoundTrip,
    edits: Option<(&Array2<f64>, usize)>,
) -> Result<(MetricsReport, TrajectoryOffsets)> {
    let offsets = trajectory_offsets(rt.inverted.trajectory(), &rt.denoise)?;
    let report = MetricsReport::build(
        label,
        RunOutputs {
            inputs: x0.view(),
            reconstructions: rt.reconstruction.view(),
            latents: rt.inverted.latents().view(),
            edits: edits.map(|(e, t)| (e.view(), t)),
            offsets: Some(&offsets),
        },
        &ctx.config.dataset,
        ctx.config.radius,
    )?;
    Ok((report, offsets))
}

fn first_points(ctx: &RunContext, n: usize) -> Vec<usize> {
    (0..ctx.config.trajectory_points.min(n)).collect()
}

fn write_trajectory(path: &Path, tr: &Trajectory, points: &[usize]) -> Result<()> {
    tr.select(points).write_csv(fs::File::create(path)?)
}

pub fn run_train(ctx: &mut RunContext) -> Result<()> {
    let cfg = ctx.config.train.clone();
    let mut losses = Vec::with_capacity(cfg.steps);
    let outcome = train(&cfg, &ctx.config.dataset, |_, l| losses.push(l))?;
    let path = ctx
        .config
        .checkpoint
        .clone()
        .unwrap_or_else(|| ctx.path(&format!("model-{}.ckpt", cfg.objective)));
    let ckpt = Checkpoint {
        params: outcome.params,
        optimizer: Some(outcome.optimizer),
        dataset: ctx.config.dataset.clone(),
        train: Some(cfg.clone()),
    };
    save_checkpoint(&ckpt, &path)?;
    ctx.record_checkpoint(cfg.objective, &path)?;
    let mut w = csv::Writer::from_path(ctx.path("losses.csv"))?;
    w.write_record(["step", "loss"])?;
    for (i, l) in losses.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct InversionSidecar {
    method: String,
    condition: String,
    scale: f64,
    seed: u64,
    /// Median fixed-point residual over points, `[step][iteration]`.
    residual_medians: Option<Vec<Vec<f64>>>,
}

pub fn run_invert(ctx: &mut RunContext) -> Result<()> {
    let method = ctx.config.method.clone();
    let ckpt = ctx.model(method.name.objective())?;
    let engine = engine_for(&ckpt, &method)?;
    let seed = ctx.config.seed;
    let x0 = input_points(ctx, seed)?;
    let conds = build_conditions(ctx.config.condition, x0.view(), ctx.config.source_class, ctx.config.scale)?;
    let inv = engine.invert(x0.view(), &conds, &mut method_rng(seed))?;
    write_matrix_csv(&ctx.path("latents.csv"), inv.latents())?;
    write_trajectory(&ctx.path("trajectory.csv"), inv.trajectory(), &first_points(ctx, x0.nrows()))?;
    let residual_medians = match &inv {
        Inverted::Latents(r) => r.residuals.as_ref().map(|res| {
            res.outer_iter()
                .map(|step| step.outer_iter().map(|k| crate::analysis::median(&k.to_vec())).collect())
                .collect()
        }),
        Inverted::NoiseMaps(_) => None,
    };
    let l = label(&method, ctx.config.condition, ctx.config.scale, seed);
    write_json(
        &ctx.path("inversion.json"),
        &InversionSidecar {
            method: l.method,
            condition: l.condition,
            scale: l.scale,
            seed,
            residual_medians,
        },
    )
}

pub fn run_reconstruct(ctx: &mut RunContext) -> Result<()> {
    let method = ctx.config.method.clone();
    let ckpt = ctx.model(method.name.objective())?;
    let engine = engine_for(&ckpt, &method)?;
    let seed = ctx.config.seed;
    let x0 = input_points(ctx, seed)?;
    let mode = ctx.config.condition;
    let conds = build_conditions(mode, x0.view(), ctx.config.source_class, ctx.config.scale)?;
    let rt = engine.round_trip(x0.view(), &conds, &mut method_rng(seed))?;
    write_matrix_csv(&ctx.path("latents.csv"), rt.inverted.latents())?;
    write_matrix_csv(&ctx.path("reconstructions.csv"), &rt.reconstruction)?;
    let pts = first_points(ctx, x0.nrows());
    write_trajectory(&ctx.path("inversion_trajectory.csv"), rt.inverted.trajectory(), &pts)?;
    write_trajectory(&ctx.path("denoise_trajectory.csv"), &rt.denoise, &pts)?;
    let (report, _) = report_for(ctx, label(&method, mode, ctx.config.scale, seed), &x0, &rt, None)?;
    write_reports(ctx, &[report])
}

pub fn run_edit(ctx: &mut RunContext) -> Result<()> {
    let method = ctx.config.method.clone();
    let ckpt = ctx.model(method.name.objective())?;
    let engine = engine_for(&ckpt, &method)?;
    let seed = ctx.config.seed;
    let x0 = input_points(ctx, seed)?;
    let mode = ctx.config.condition;
    let conds = build_conditions(mode, x0.view(), ctx.config.source_class, ctx.config.scale)?;
    let rt = engine.round_trip(x0.view(), &conds, &mut method_rng(seed))?;
    let target = ctx.config.target_class;
    let edit_conds = edit_conditions(&expand_conditions(&conds, x0.nrows()), target, ctx.config.edit_policy);
    let (edited, _) = engine.denoise(&rt.inverted, &edit_conds)?;
    write_matrix_csv(&ctx.path("edited.csv"), &edited)?;
    let (report, _) = report_for(ctx, label(&method, mode, ctx.config.scale, seed), &x0, &rt, Some((&edited, target)))?;
    write_reports(ctx, &[report])
}

fn write_reports(ctx: &RunContext, reports: &[MetricsReport]) -> Result<()> {
    write_json(&ctx.path("reports.json"), &reports)
}

fn points_of(m: &Array2<f64>) -> Vec<Point> {
    m.rows().into_iter().map(|r| (r[0], r.get(1).copied().unwrap_or(0.0))).collect()
}

fn panel_layers(x0: &Array2<f64>, rt: &RoundTrip, pts: &[usize]) -> ScatterLayers {
    let inv = rt.inverted.trajectory().select(pts);
    let den = rt.denoise.select(pts);
    let trajectories = (0..pts.len())
        .map(|i| inv.states.iter().map(|s| (s[[i, 0]], s[[i, 1]])).collect())
        .collect();
    // One offset segment per tenth of the path, paired by time stamp.
    let mut offsets = Vec::new();
    let stride = (inv.len() / 10).max(1);
    for (k, t) in inv.times.iter().enumerate().step_by(stride) {
        if let Some(j) = den.times.iter().position(|u| (u - t).abs() < 1e-9) {
            for i in 0..pts.len() {
                offsets.push(((inv.states[k][[i, 0]], inv.states[k][[i, 1]]), (den.states[j][[i, 0]], den.states[j][[i, 1]])));
            }
        }
    }
    ScatterLayers {
        posterior: points_of(x0),
        latents: points_of(rt.inverted.latents()),
        reconstructions: points_of(&rt.reconstruction),
        trajectories,
        offsets,
    }
}

/// One row of `fig3_summary.csv`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PanelSummary {
    pub panel: String,
    pub condition: String,
    pub mean_l2: f64,
    pub mean_latent_nll: f64,
    pub latent_trace: f64,
    pub latent_cov_deviation: f64,
    pub max_offset: f64,
}

pub fn run_fig3(ctx: &mut RunContext) -> Result<()> {
    let method = MethodConfig { name: MethodName::Euler, ..ctx.config.method.clone() };
    let ckpt = ctx.model(Objective::FlowMatching)?;
    let engine = engine_for(&ckpt, &method)?;
    let seed = ctx.config.seed;
    let n = ctx.config.held_out;
    let d = ctx.config.dataset.dim();
    let pts = first_points(ctx, n);

    // (a) prior samples denoised without a condition.
    let z = RngStream::with_stream(seed, PRIOR_STREAM).normal_matrix(n, d);
    let (samples, traj) = engine.sample(z.view(), &[Condition::Null], &mut method_rng(seed))?;
    write_matrix_csv(&ctx.path("panel_a_samples.csv"), &samples)?;
    write_trajectory(&ctx.path("panel_a_trajectories.csv"), &traj, &pts)?;
    let sel = traj.select(&pts);
    let layers = ScatterLayers {
        latents: points_of(&z),
        reconstructions: points_of(&samples),
        trajectories: (0..pts.len()).map(|i| sel.states.iter().map(|s| (s[[i, 0]], s[[i, 1]])).collect()).collect(),
        ..ScatterLayers::default()
    };
    emit_svg_scatter(&layers, &Style { title: "(a) prior samples, null condition".into(), ..Style::default() }, &ctx.path("panel_a.svg"))?;

    let x0 = held_out_points(&ctx.config.dataset, ctx.config.source_class, seed, n)?;
    let panels = [
        ("b", Condition::Null, ConditionMode::Null),
        ("c", Condition::class(ctx.config.source_class), ConditionMode::Class),
        ("d", Condition::class(ctx.config.target_class), ConditionMode::Class),
    ];
    let mut reports = Vec::new();
    let mut summary = csv::Writer::from_path(ctx.path("fig3_summary.csv"))?;
    for (name, cond, mode) in panels {
        let rt = engine.round_trip(x0.view(), std::slice::from_ref(&cond), &mut method_rng(seed))?;
        write_trajectory(&ctx.path(&format!("panel_{name}_inversion.csv")), rt.inverted.trajectory(), &pts)?;
        write_trajectory(&ctx.path(&format!("panel_{name}_denoise.csv")), &rt.denoise, &pts)?;
        let (report, offsets) = report_for(ctx, label(&method, mode, 0.0, seed), &x0, &rt, None)?;
        let condition = match &cond {
            Condition::Class { id } => format!("class_{id}"),
            _ => "null".to_string(),
        };
        summary.serialize(PanelSummary {
            panel: name.to_string(),
            condition: condition.clone(),
            mean_l2: report.aggregates.mean_l2,
            mean_latent_nll: report.aggregates.mean_latent_nll,
            latent_trace: report.aggregates.latent_trace,
            latent_cov_deviation: report.aggregates.latent_cov_deviation,
            max_offset: offsets.max(),
        })?;
        emit_svg_scatter(
            &panel_layers(&x0, &rt, &pts),
            &Style { title: format!("({name}) invert and reconstruct, {condition}"), ..Style::default() },
            &ctx.path(&format!("panel_{name}.svg")),
        )?;
        reports.push(report);
    }
    summary.flush()?;
    write_reports(ctx, &reports)
}

/// One row of `table1.csv`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Table1Row {
    pub condition: String,
    pub scale: f64,
    pub seed: String,
    pub mean_l2: f64,
    pub mean_latent_nll: f64,
}

fn diffusion_method(ctx: &RunContext) -> Result<MethodConfig> {
    let method = ctx.config.method.clone();
    if method.name == MethodName::Euler {
        return Err(Error::Config(format!("`{}` needs a diffusion method", ctx.kind.as_str())));
    }
    Ok(method)
}

pub fn run_table1_analog(ctx: &mut RunContext) -> Result<()> {
    let method = diffusion_method(ctx)?;
    let ckpt = ctx.model(Objective::EpsilonPrediction)?;
    let engine = engine_for(&ckpt, &method)?;
    let class = ctx.config.source_class;
    let rows = [
        (ConditionMode::Null, 0.0),
        (ConditionMode::Class, 0.0),
        (ConditionMode::Tight, TABLE1_TIGHT_SCALE),
    ];
    let seeds = ctx.config.resolved_seeds();
    let mut reports = Vec::new();
    let mut table = csv::Writer::from_path(ctx.path("table1.csv"))?;
    let mut sums = [(0.0, 0.0); 3];
    for &seed in &seeds {
        let x0 = held_out_points(&ctx.config.dataset, class, seed, ctx.config.held_out)?;
        for (r, &(mode, scale)) in rows.iter().enumerate() {
            let conds = build_conditions(mode, x0.view(), class, scale)?;
            let rt = engine.round_trip(x0.view(), &conds, &mut method_rng(seed))?;
            let (report, _) = report_for(ctx, label(&method, mode, scale, seed), &x0, &rt, None)?;
            let a = &report.aggregates;
            sums[r].0 += a.mean_l2;
            sums[r].1 += a.mean_latent_nll;
            table.serialize(Table1Row {
                condition: mode.as_str().into(),
                scale,
                seed: seed.to_string(),
                mean_l2: a.mean_l2,
                mean_latent_nll: a.mean_latent_nll,
            })?;
            reports.push(report);
        }
    }
    let k = seeds.len() as f64;
    for (r, &(mode, scale)) in rows.iter().enumerate() {
        table.serialize(Table1Row {
            condition: mode.as_str().into(),
            scale,
            seed: "mean".into(),
            mean_l2: sums[r].0 / k,
            mean_latent_nll: sums[r].1 / k,
        })?;
    }
    table.flush()?;
    write_reports(ctx, &reports)
}

/// Seed-averaged point of the reconstruction/editability curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub scale: f64,
    pub mean_l2: f64,
    pub edit_success: f64,
}

pub fn run_scale_sweep(ctx: &mut RunContext) -> Result<()> {
    let method = ctx.config.method.clone();
    let ckpt = ctx.model(method.name.objective())?;
    let engine = engine_for(&ckpt, &method)?;
    let (source, target) = (ctx.config.source_class, ctx.config.target_class);
    let seeds = ctx.config.resolved_seeds();
    let scales = ctx.config.scales.clone();
    let mut reports = Vec::new();
    let mut rows = csv::Writer::from_path(ctx.path("sweep.csv"))?;
    rows.write_record(["scale", "seed", "mean_l2", "edit_success"])?;
    let mut curve = Vec::new();
    for &s in &scales {
        let (mut l2, mut hit) = (0.0, 0.0);
        for &seed in &seeds {
            let x0 = held_out_points(&ctx.config.dataset, source, seed, ctx.config.held_out)?;
            let conds = tighten_all(x0.view(), s)?;
            let rt = engine.round_trip(x0.view(), &conds, &mut method_rng(seed))?;
            let edit_conds = edit_conditions(&conds, target, ctx.config.edit_policy);
            let (edited, _) = engine.denoise(&rt.inverted, &edit_conds)?;
            let (report, _) = report_for(ctx, label(&method, ConditionMode::Tight, s, seed), &x0, &rt, Some((&edited, target)))?;
            let success = report.aggregates.edit_success_rate.unwrap_or(0.0);
            rows.write_record([s.to_string(), seed.to_string(), report.aggregates.mean_l2.to_string(), success.to_string()])?;
            l2 += report.aggregates.mean_l2;
            hit += success;
            reports.push(report);
        }
        let k = seeds.len() as f64;
        curve.push(SweepPoint { scale: s, mean_l2: l2 / k, edit_success: hit / k });
    }
    rows.flush()?;

    let mut summary = csv::Writer::from_path(ctx.path("sweep_summary.csv"))?;
    let mut header = vec!["metric".to_string()];
    header.extend(scales.iter().map(|s| format!("s={s}")));
    summary.write_record(&header)?;
    let mut l2_row = vec!["mean_l2".to_string()];
    l2_row.extend(curve.iter().map(|p| p.mean_l2.to_string()));
    summary.write_record(&l2_row)?;
    let mut hit_row = vec!["edit_success".to_string()];
    hit_row.extend(curve.iter().map(|p| p.edit_success.to_string()));
    summary.write_record(&hit_row)?;
    summary.flush()?;

    let pts: Vec<Point> = curve.iter().map(|p| (p.mean_l2, p.edit_success)).collect();
    let labels: Vec<String> = curve.iter().map(|p| format!("s={}", p.scale)).collect();
    emit_svg_curve(
        &pts,
        &labels,
        &Style { title: "round-trip L2 (x) vs edit success (y)".into(), ..Style::default() },
        &ctx.path("tradeoff.svg"),
    )?;
    write_reports(ctx, &reports)
}

/// One row of `baseline.csv`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BaselineRow {
    pub pipeline: String,
    pub scale: f64,
    pub seed: u64,
    pub mean_l2: f64,
}

pub fn run_baseline_random(ctx: &mut RunContext) -> Result<()> {
    let method = ctx.config.method.clone();
    let ckpt = ctx.model(method.name.objective())?;
    let engine = engine_for(&ckpt, &method)?;
    let s = ctx.config.scale;
    let seed = ctx.config.seed;
    let x0 = input_points(ctx, seed)?;
    let conds = tighten_all(x0.view(), s)?;

    let rt = engine.round_trip(x0.view(), &conds, &mut method_rng(seed))?;
    let (inv_report, _) = report_for(ctx, label(&method, ConditionMode::Tight, s, seed), &x0, &rt, None)?;

    let z = RngStream::with_stream(seed, PRIOR_STREAM).normal_matrix(x0.nrows(), x0.ncols());
    let (random, _) = engine.sample(z.view(), &conds, &mut method_rng(seed).split(1))?;
    write_matrix_csv(&ctx.path("random_reconstructions.csv"), &random)?;
    let mut random_label = label(&method, ConditionMode::Tight, s, seed);
    random_label.method = "random_noise".into();
    let random_report = MetricsReport::build(
        random_label,
        RunOutputs {
            inputs: x0.view(),
            reconstructions: random.view(),
            latents: z.view(),
            edits: None,
            offsets: None,
        },
        &ctx.config.dataset,
        ctx.config.radius,
    )?;

    let mut w = csv::Writer::from_path(ctx.path("baseline.csv"))?;
    for (name, report) in [("tight_inversion", &inv_report), ("random_noise", &random_report)] {
        w.serialize(BaselineRow {
            pipeline: name.into(),
            scale: s,
            seed,
            mean_l2: report.aggregates.mean_l2,
        })?;
    }
    w.flush()?;
    write_reports(ctx, &[inv_report, random_report])
}

/// One row of `summary.csv`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub condition: String,
    pub scale: f64,
    pub seed: u64,
    pub count: usize,
    pub mean_l2: f64,
    pub median_l2: f64,
    pub mean_latent_nll: f64,
    pub latent_trace: f64,
    pub latent_cov_deviation: f64,
    pub edit_success_rate: Option<f64>,
}

pub fn run_report(ctx: &mut RunContext) -> Result<()> {
    let mut sources = ctx.config.reports.clone();
    if sources.is_empty() {
        return Err(Error::Config("`report` needs at least one entry in `reports`".into()));
    }
    sources.sort();
    let mut w = csv::Writer::from_path(ctx.path("summary.csv"))?;
    for src in sources {
        let file = if src.is_dir() { src.join("reports.json") } else { src };
        let text = fs::read_to_string(&file).map_err(|e| Error::Config(format!("{}: {e}", file.display())))?;
        let reports: Vec<MetricsReport> = serde_json::from_str(&text)?;
        for r in reports {
            r.verify()?;
            let a = &r.aggregates;
            w.serialize(SummaryRow {
                method: r.label.method.clone(),
                condition: r.label.condition.clone(),
                scale: r.label.scale,
                seed: r.label.seed,
                count: a.count,
                mean_l2: a.mean_l2,
                median_l2: a.median_l2,
                mean_latent_nll: a.mean_latent_nll,
                latent_trace: a.latent_trace,
                latent_cov_deviation: a.latent_cov_deviation,
                edit_success_rate: a.edit_success_rate,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Mean round-trip L2 of `x0` under `conds`; used by the sweep and tests.
pub fn mean_round_trip_l2(engine: &Engine<'_>, x0: ArrayView2<'_, f64>, conds: &[Condition], seed: u64) -> Result<f64> {
    let rt = engine.round_trip(x0, conds, &mut method_rng(seed))?;
    Ok(mean(&row_distances(x0, rt.reconstruction.view())?))
}

/// Edit success of `x0` inverted under `conds` and regenerated toward `target`.
pub fn edit_success(
    engine: &Engine<'_>,
    ctx_cfg: &ExperimentConfig,
    x0: ArrayView2<'_, f64>,
    conds: &[Condition],
    seed: u64,
) -> Result<f64> {
    let inv = engine.invert(x0, conds, &mut method_rng(seed))?;
    let edit_conds = edit_conditions(&expand_conditions(conds, x0.nrows()), ctx_cfg.target_class, ctx_cfg.edit_policy);
    let (edited, _) = engine.denoise(&inv, &edit_conds)?;
    edit_success_rate(edited.view(), ctx_cfg.target_class, &ctx_cfg.dataset, ctx_cfg.radius)
}
