//! One function per subcommand. Each returns the JSON summary it also writes
//! to `<out>/<stage>/summary.json`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use cardiotwin_core::cohort::{generate_cohort, place_root_nodes, Cohort, CohortMesh, Split};
use cardiotwin_core::eikonal::ActivationTimeMap;
use cardiotwin_core::forward::{ActivationParams, ForwardModel};
use cardiotwin_core::geometry::{
    build_phantom, phantom_family, ConductionVelocities, MeshFile, TetMesh,
};
use cardiotwin_core::inverse::coordinate_descent;
use cardiotwin_core::losses::{
    midpoint_baseline, midpoint_cv, rn_error, root_positions, table_csv, MeanStd, TableRow,
};
use cardiotwin_core::pseudo_ecg::EcgRecord;
use cardiotwin_psdcm::checkpoint::Checkpoint;
use cardiotwin_psdcm::data::Dataset;
use cardiotwin_psdcm::eval::{baseline_row, correlation_study, evaluate, Report, REFERENCE_LINES};
use cardiotwin_psdcm::train::{infer, losses_csv, train, Prediction};

use crate::artifact::{
    csv_hash, csv_with_hash, expect_hash, input_error, jsonl_with_hash, read_bytes, read_json,
    read_text, split_jsonl, stage_dir, write, write_json, Stamped,
};
use crate::config::RunConfig;
use crate::svg;

pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

impl Ctx {
    fn dir(&self, stage: &str) -> PathBuf {
        stage_dir(&self.out, stage)
    }

    fn finish(&self, stage: &str, hash: &str, summary: Value) -> anyhow::Result<Value> {
        write_json(&self.dir(stage).join("summary.json"), hash, &summary)?;
        Ok(json!({ "stage": stage, "config_hash": hash, "summary": summary }))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MeshEntry {
    id: usize,
    file: String,
    nodes: usize,
    tets: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PhantomManifest {
    meshes: Vec<MeshEntry>,
}

fn mesh_file_name(id: usize) -> String {
    format!("mesh_{id:03}.json")
}

pub fn phantom(ctx: &Ctx) -> anyhow::Result<Value> {
    let hash = ctx.cfg.phantom_hash();
    let p = &ctx.cfg.phantom;
    if p.n_meshes == 0 {
        return Err(input_error("phantom.n_meshes must be positive"));
    }
    let dir = ctx.dir("phantom");
    let mut meshes = Vec::new();
    for (id, c) in phantom_family(&p.base, p.n_meshes, p.spread, ctx.cfg.seed)
        .iter()
        .enumerate()
    {
        let (mesh, frame) =
            build_phantom(c).map_err(|e| input_error(format!("phantom {id}: {e}")))?;
        let file = mesh_file_name(id);
        write_json(
            &dir.join(&file),
            &hash,
            &MeshFile::from_parts(&mesh, &frame),
        )?;
        meshes.push(MeshEntry {
            id,
            file,
            nodes: mesh.n_nodes(),
            tets: mesh.n_tets(),
        });
    }
    let manifest = PhantomManifest { meshes };
    write_json(&dir.join("manifest.json"), &hash, &manifest)?;
    ctx.finish(
        "phantom",
        &hash,
        json!({
            "meshes": manifest.meshes.len(),
            "nodes": manifest.meshes.iter().map(|m| m.nodes).collect::<Vec<_>>(),
            "tets": manifest.meshes.iter().map(|m| m.tets).collect::<Vec<_>>(),
        }),
    )
}

/// Reads a mesh written by `phantom`, or a bare mesh document.
/// Returns the carried hash when there is one.
pub fn read_mesh(path: &Path) -> anyhow::Result<(MeshFile, Option<String>)> {
    let text = read_text(path)?;
    if let Ok(stamped) = serde_json::from_str::<Stamped<MeshFile>>(&text) {
        return Ok((stamped.body, Some(stamped.config_hash)));
    }
    let file: MeshFile =
        serde_json::from_str(&text).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    Ok((file, None))
}

fn import_mesh(path: &Path, file: MeshFile, ctx: &Ctx) -> anyhow::Result<ForwardModel> {
    let (mesh, frame) = file
        .into_parts()
        .map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    ForwardModel::new(mesh, frame, ctx.cfg.simulation.clone())
        .with_context(|| format!("preparing forward model for {}", path.display()))
}

fn load_meshes(ctx: &Ctx) -> anyhow::Result<Vec<CohortMesh>> {
    let dir = ctx.dir("phantom");
    let manifest_path = dir.join("manifest.json");
    let manifest: Stamped<PhantomManifest> = read_json(&manifest_path)?;
    let expected = ctx.cfg.phantom_hash();
    expect_hash(
        "phantom manifest",
        &manifest_path,
        &manifest.config_hash,
        &expected,
    )?;
    manifest
        .body
        .meshes
        .iter()
        .map(|entry| {
            let path = dir.join(&entry.file);
            let (file, hash) = read_mesh(&path)?;
            expect_hash("mesh", &path, hash.as_deref().unwrap_or("none"), &expected)?;
            Ok(CohortMesh {
                id: entry.id,
                model: import_mesh(&path, file, ctx)?,
            })
        })
        .collect()
}

pub fn simulate(ctx: &Ctx, mesh_path: Option<&Path>) -> anyhow::Result<Value> {
    let hash = ctx.cfg.simulate_hash();
    let model = match mesh_path {
        Some(path) => {
            let (file, _) = read_mesh(path)?;
            import_mesh(path, file, ctx)?
        }
        None => {
            let id = ctx.cfg.simulate.mesh;
            load_meshes(ctx)?
                .into_iter()
                .find(|m| m.id == id)
                .ok_or_else(|| input_error(format!("no phantom mesh with id {id}")))?
                .model
        }
    };
    let cv = match ctx.cfg.simulate.cv {
        Some([f, s, n, e]) => ConductionVelocities::new(f, s, n, e).ok_or_else(|| {
            input_error("simulate.cv must satisfy fiber > sheet > normal > 0 and endo > 0")
        })?,
        None => midpoint_cv(),
    };
    let roots = place_root_nodes(model.mesh()).map_err(|e| input_error(e.to_string()))?;
    let params = ActivationParams { cv, roots };
    let (atm, ecg) = model.simulate(&params)?;
    let dir = ctx.dir("simulate");
    write(&dir.join("atm.csv"), csv_with_hash(&hash, &atm.to_csv()))?;
    write(&dir.join("ecg.csv"), csv_with_hash(&hash, &ecg.to_csv()))?;
    write_json(&dir.join("params.json"), &hash, &params)?;
    ctx.finish(
        "simulate",
        &hash,
        json!({
            "nodes": model.mesh().n_nodes(),
            "cv": cv.as_array(),
            "roots": params.roots.nodes(),
            "qrs_ms": atm.max_time * 1e3,
            "valid_samples": ecg.valid_len(),
        }),
    )
}

pub fn cohort(ctx: &Ctx) -> anyhow::Result<Value> {
    if ctx.cfg.cohort.per_mesh == 0 {
        return Err(input_error("cohort.per_mesh must be positive"));
    }
    let hash = ctx.cfg.cohort_hash();
    let meshes = load_meshes(ctx)?;
    let cohort = generate_cohort(&meshes, ctx.cfg.cohort.per_mesh, ctx.cfg.seed)?;
    let dir = ctx.dir("cohort");
    write(
        &dir.join("cohort.jsonl"),
        jsonl_with_hash(&hash, &cohort.to_jsonl()),
    )?;
    let (train, val, test) = cohort.split_sizes();
    let mesh_split = |s: Split| {
        let mut ids: Vec<usize> = cohort.split(s).map(|v| v.mesh_id).collect();
        ids.dedup();
        ids
    };
    ctx.finish(
        "cohort",
        &hash,
        json!({
            "subjects": cohort.subjects.len(),
            "per_mesh": ctx.cfg.cohort.per_mesh,
            "split_sizes": { "train": train, "val": val, "test": test },
            "split_meshes": {
                "train": mesh_split(Split::Train),
                "val": mesh_split(Split::Val),
                "test": mesh_split(Split::Test),
            },
        }),
    )
}

fn load_cohort(ctx: &Ctx) -> anyhow::Result<Cohort> {
    let path = ctx.dir("cohort").join("cohort.jsonl");
    let text = read_text(&path)?;
    let (hash, body) = split_jsonl(&path, &text)?;
    expect_hash("cohort", &path, &hash, &ctx.cfg.cohort_hash())?;
    Cohort::from_jsonl(&body).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

fn build_dataset(
    meshes: &[CohortMesh],
    cohort: &Cohort,
    model: &cardiotwin_psdcm::model::ModelConfig,
) -> anyhow::Result<Dataset> {
    let pairs: Vec<(usize, &TetMesh)> = meshes.iter().map(|m| (m.id, m.model.mesh())).collect();
    Ok(Dataset::build(&pairs, &cohort.subjects, model)?)
}

pub fn train_cmd(ctx: &Ctx) -> anyhow::Result<Value> {
    let hash = ctx.cfg.train_hash();
    let tc = ctx.cfg.train_config();
    let meshes = load_meshes(ctx)?;
    let cohort = load_cohort(ctx)?;
    let ds = build_dataset(&meshes, &cohort, &tc.model)?;
    let out = train(&ds, &tc)?;
    let ckpt = Checkpoint {
        config_hash: hash.clone(),
        preprocessing_hash: ds.preprocessing.clone(),
        config: json!({ "cohort_hash": ctx.cfg.cohort_hash(), "run": ctx.cfg }),
        model: out.best.clone(),
        state: out.state.clone(),
    };
    let dir = ctx.dir("train");
    write(&dir.join("checkpoint.bin"), ckpt.to_bytes()?)?;
    write(
        &dir.join("losses.csv"),
        csv_with_hash(&hash, &losses_csv(&out.curves)),
    )?;
    let first = &out.curves[0];
    let best = &out.curves[out.best_epoch];
    ctx.finish(
        "train",
        &hash,
        json!({
            "parameters": out.best.n_parameters(),
            "epochs_run": out.curves.len() - 1,
            "best_epoch": out.best_epoch,
            "iterations": out.state.step,
            "epoch0_val_total": first.val_total,
            "best_val_total": best.val_total,
            "epoch0_train_total": first.train_total,
            "last_train_total": out.curves.last().map(|c| c.train_total),
            "preprocessing_hash": ds.preprocessing,
            "ablation": tc.ablation,
        }),
    )
}

fn load_checkpoint(ctx: &Ctx) -> anyhow::Result<Checkpoint> {
    let path = ctx.dir("train").join("checkpoint.bin");
    let ckpt = Checkpoint::from_bytes(&read_bytes(&path)?)
        .map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    expect_hash(
        "checkpoint",
        &path,
        &ckpt.config_hash,
        &ctx.cfg.train_hash(),
    )?;
    let cohort_hash = ckpt
        .config
        .get("cohort_hash")
        .and_then(Value::as_str)
        .unwrap_or("none");
    expect_hash(
        "checkpoint cohort",
        &path,
        cohort_hash,
        &ctx.cfg.cohort_hash(),
    )?;
    Ok(ckpt)
}

struct Loaded {
    ckpt: Checkpoint,
    meshes: Vec<CohortMesh>,
    dataset: Dataset,
}

fn load_for_inference(ctx: &Ctx) -> anyhow::Result<Loaded> {
    let ckpt = load_checkpoint(ctx)?;
    let meshes = load_meshes(ctx)?;
    let cohort = load_cohort(ctx)?;
    let dataset = build_dataset(&meshes, &cohort, &ckpt.model.config)?;
    ckpt.check_preprocessing(&dataset.preprocessing)
        .map_err(|e| input_error(e.to_string()))?;
    Ok(Loaded {
        ckpt,
        meshes,
        dataset,
    })
}

fn predict_test(ctx: &Ctx, loaded: &Loaded) -> anyhow::Result<Vec<Prediction>> {
    let ablation = ctx.cfg.train.ablation;
    let start = Instant::now();
    let preds = loaded
        .dataset
        .split(Split::Test)
        .into_iter()
        .map(|s| infer(&loaded.ckpt.model, s, ablation))
        .collect::<Result<Vec<_>, _>>()?;
    let elapsed = start.elapsed();
    eprintln!(
        "inference: {} subjects in {:.1} ms ({:.2} ms per subject)",
        preds.len(),
        elapsed.as_secs_f64() * 1e3,
        elapsed.as_secs_f64() * 1e3 / preds.len().max(1) as f64
    );
    Ok(preds)
}

pub fn infer_cmd(ctx: &Ctx) -> anyhow::Result<Value> {
    let hash = ctx.cfg.train_hash();
    let loaded = load_for_inference(ctx)?;
    let preds = predict_test(ctx, &loaded)?;
    let dir = ctx.dir("infer");
    let mut lines = String::new();
    for p in &preds {
        lines.push_str(&serde_json::to_string(p)?);
        lines.push('\n');
    }
    write(
        &dir.join("predictions.jsonl"),
        jsonl_with_hash(&hash, &lines),
    )?;
    for (p, s) in preds.iter().zip(loaded.dataset.split(Split::Test)) {
        let id = p.subject_id;
        write(
            &dir.join(format!("ecg/pred_{id:04}.csv")),
            csv_with_hash(&hash, &p.ecg.to_csv()),
        )?;
        write(
            &dir.join(format!("ecg/gt_{id:04}.csv")),
            csv_with_hash(&hash, &s.ecg.to_csv()),
        )?;
    }
    ctx.finish(
        "infer",
        &hash,
        json!({
            "subjects": preds.iter().map(|p| p.subject_id).collect::<Vec<_>>(),
            "cv": preds.iter().map(|p| p.cv).collect::<Vec<_>>(),
        }),
    )
}

fn load_predictions(ctx: &Ctx, path: &Path) -> anyhow::Result<Vec<Prediction>> {
    let text = read_text(path)?;
    let (hash, body) = split_jsonl(path, &text)?;
    expect_hash("predictions", path, &hash, &ctx.cfg.train_hash())?;
    body.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| input_error(format!("{} line {}: {e}", path.display(), i + 2)))
        })
        .collect()
}

fn metrics_csv(report: &Report) -> String {
    let mut out = String::from(
        "subject_id,mesh_id,rn_lv_cm,rn_rv_cm,cv_fiber_pct,cv_sheet_pct,cv_normal_pct,cv_endo_pct,pc_coarse_cm,pc_dense_cm,ecg_mae\n",
    );
    for s in &report.subjects {
        out.push_str(&format!(
            "{},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}\n",
            s.subject_id,
            s.mesh_id,
            s.rn_lv,
            s.rn_rv,
            s.cv[0],
            s.cv[1],
            s.cv[2],
            s.cv[3],
            s.pc_coarse,
            s.pc_dense,
            s.ecg
        ));
    }
    out
}

fn mean_std_json(m: &MeanStd) -> Value {
    json!({ "mean": m.mean, "std": m.std })
}

fn row_json(r: &TableRow) -> Value {
    json!({
        "method": r.method,
        "rn_lv_cm": mean_std_json(&r.rn_lv),
        "rn_rv_cm": mean_std_json(&r.rn_rv),
        "cv_pct": r.cv.iter().map(mean_std_json).collect::<Vec<_>>(),
    })
}

pub fn eval_cmd(ctx: &Ctx, live: bool) -> anyhow::Result<Value> {
    let hash = ctx.cfg.train_hash();
    let loaded = load_for_inference(ctx)?;
    let stored = ctx.dir("infer").join("predictions.jsonl");
    let (preds, source) = if !live && stored.exists() {
        (load_predictions(ctx, &stored)?, "stored")
    } else {
        (predict_test(ctx, &loaded)?, "live")
    };
    let test = loaded.dataset.split(Split::Test);
    let report = evaluate("PS-DCM", &preds, &test, &loaded.dataset)?;
    let pairs: Vec<(usize, &TetMesh)> = loaded
        .meshes
        .iter()
        .map(|m| (m.id, m.model.mesh()))
        .collect();
    let baseline = baseline_row(&test, &pairs)?;
    let model_row = report.summary.table_row("PS-DCM");
    let dir = ctx.dir("eval");
    let mut table = table_csv(&[model_row.clone(), baseline.clone()]);
    for line in REFERENCE_LINES {
        table.push_str(line);
        table.push('\n');
    }
    write(&dir.join("report.csv"), csv_with_hash(&hash, &table))?;
    let s = &report.summary;
    let recon = format!(
        "method,pc_coarse_cm_mean,pc_coarse_cm_std,pc_dense_cm_mean,pc_dense_cm_std,ecg_mae_mean,ecg_mae_std\nPS-DCM,{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
        s.pc_coarse.mean, s.pc_coarse.std, s.pc_dense.mean, s.pc_dense.std, s.ecg.mean, s.ecg.std
    );
    write(
        &dir.join("reconstruction.csv"),
        csv_with_hash(&hash, &recon),
    )?;
    write(
        &dir.join("metrics.csv"),
        csv_with_hash(&hash, &metrics_csv(&report)),
    )?;
    let mut r2 = serde_json::Map::new();
    let study = correlation_study(&report.subjects)
        .map_err(|e| input_error(format!("correlation study on TEST: {e}")))?;
    for c in study {
        let name = c.pair.name();
        write(
            &dir.join(format!("scatter_{name}.csv")),
            csv_with_hash(&hash, &c.scatter_csv()),
        )?;
        let fit = svg::ScatterFit {
            slope: c.fit.slope,
            intercept: c.fit.intercept,
            r2: c.fit.r2,
        };
        let figure = svg::scatter(&c.x, &c.y, &fit, c.pair.axis_labels(), Some(&hash));
        write(&dir.join(format!("scatter_{name}.svg")), figure)?;
        r2.insert(name.to_string(), json!(c.fit.r2));
    }
    let analytic = midpoint_baseline();
    ctx.finish(
        "eval",
        &hash,
        json!({
            "predictions": source,
            "test_subjects": report.subjects.len(),
            "model": row_json(&model_row),
            "baseline": row_json(&baseline),
            "cv_mean_pct": mean_std_json(&s.cv_mean),
            "midpoint_baseline_pct": analytic,
            "midpoint_baseline_mean_pct": analytic.iter().sum::<f64>() / 4.0,
            "pc_coarse_cm": mean_std_json(&s.pc_coarse),
            "pc_dense_cm": mean_std_json(&s.pc_dense),
            "ecg_mae": mean_std_json(&s.ecg),
            "r2": r2,
        }),
    )
}

pub fn baseline_cmd(ctx: &Ctx) -> anyhow::Result<Value> {
    let hash = ctx.cfg.baseline_hash();
    let meshes = load_meshes(ctx)?;
    let cohort = load_cohort(ctx)?;
    let spec = &ctx.cfg.baseline.search;
    spec.check().map_err(|e| input_error(e.to_string()))?;
    let dir = ctx.dir("baseline");
    let mut lv = Vec::new();
    let mut rv = Vec::new();
    let mut cv: [Vec<f64>; 4] = Default::default();
    let mut cases = Vec::new();
    for subject in cohort.split(Split::Test).take(ctx.cfg.baseline.subjects) {
        let model = &meshes
            .iter()
            .find(|m| m.id == subject.mesh_id)
            .ok_or_else(|| {
                input_error(format!(
                    "subject {}: mesh {} missing",
                    subject.id, subject.mesh_id
                ))
            })?
            .model;
        let result = coordinate_descent(model, &subject.ecg, &subject.params.roots, spec)?;
        write(
            &dir.join(format!("trace_{:04}.csv", subject.id)),
            csv_with_hash(&hash, &result.trace_csv()),
        )?;
        let (a, b) = rn_error(
            &root_positions(model.mesh(), &result.params.roots),
            &root_positions(model.mesh(), &subject.params.roots),
        );
        lv.push(a);
        rv.push(b);
        let est = result.params.cv.as_array();
        let truth = subject.params.cv.as_array();
        for k in 0..4 {
            cv[k].push(100.0 * (est[k] - truth[k]).abs() / truth[k]);
        }
        cases.push(json!({
            "subject": subject.id,
            "truth": truth,
            "estimate": est,
            "objective": result.objective,
            "evaluations": result.evaluations,
            "status": result.status,
        }));
    }
    if cases.is_empty() {
        return Err(input_error("no TEST subjects to invert"));
    }
    let row = TableRow {
        method: "coordinate descent".into(),
        rn_lv: MeanStd::of(&lv),
        rn_rv: MeanStd::of(&rv),
        cv: cv.map(|v| MeanStd::of(&v)),
    };
    write(
        &dir.join("report.csv"),
        csv_with_hash(&hash, &table_csv(std::slice::from_ref(&row))),
    )?;
    ctx.finish(
        "baseline",
        &hash,
        json!({ "row": row_json(&row), "cases": cases }),
    )
}

#[derive(Debug, Clone)]
pub enum PlotRequest {
    Ecg { pred: PathBuf, gt: Option<PathBuf> },
    Scatter { csv: PathBuf },
    Atm { atm: PathBuf, mesh: PathBuf },
}

fn parse_ecg(path: &Path) -> anyhow::Result<(EcgRecord, Option<String>)> {
    let text = read_text(path)?;
    let rec =
        EcgRecord::from_csv(&text).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    Ok((rec, csv_hash(&text)))
}

/// Points, fit and labels from a scatter CSV.
pub fn parse_scatter(
    path: &Path,
) -> anyhow::Result<(
    Vec<f64>,
    Vec<f64>,
    svg::ScatterFit,
    (String, String),
    Option<String>,
)> {
    let text = read_text(path)?;
    let bad = |m: String| input_error(format!("{}: {m}", path.display()));
    let mut fit = (None, None, None);
    let mut lines = text.lines().peekable();
    while let Some(l) = lines.next_if(|l| l.starts_with('#')) {
        for token in l.trim_start_matches('#').split_whitespace() {
            if let Some((k, v)) = token.split_once('=') {
                let v = v.parse::<f64>().ok();
                match k {
                    "slope" => fit.0 = v,
                    "intercept" => fit.1 = v,
                    "r2" => fit.2 = v,
                    _ => {}
                }
            }
        }
    }
    let (Some(slope), Some(intercept), Some(r2)) = fit else {
        return Err(bad("missing fit line".into()));
    };
    let header = lines.next().ok_or_else(|| bad("missing header".into()))?;
    let (xl, yl) = header
        .split_once(',')
        .ok_or_else(|| bad("header needs two columns".into()))?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, l) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let (a, b) = l
            .split_once(',')
            .ok_or_else(|| bad(format!("row {i}: expected two columns")))?;
        x.push(
            a.trim()
                .parse::<f64>()
                .map_err(|e| bad(format!("row {i}: {e}")))?,
        );
        y.push(
            b.trim()
                .parse::<f64>()
                .map_err(|e| bad(format!("row {i}: {e}")))?,
        );
    }
    Ok((
        x,
        y,
        svg::ScatterFit {
            slope,
            intercept,
            r2,
        },
        (xl.to_string(), yl.to_string()),
        csv_hash(&text),
    ))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("plot")
        .to_string()
}

pub fn plot_one(req: &PlotRequest, dir: &Path) -> anyhow::Result<PathBuf> {
    let (name, figure) = match req {
        PlotRequest::Ecg { pred, gt } => {
            let (p, hash) = parse_ecg(pred)?;
            let g = gt.as_deref().map(parse_ecg).transpose()?;
            let title = match gt {
                Some(g) => format!("{} vs {}", stem(pred), stem(g)),
                None => stem(pred),
            };
            let figure = svg::ecg_overlay(&p, g.as_ref().map(|(r, _)| r), &title, hash.as_deref());
            (format!("ecg_{}.svg", stem(pred)), figure)
        }
        PlotRequest::Scatter { csv } => {
            let (x, y, fit, (xl, yl), hash) = parse_scatter(csv)?;
            (
                format!("{}.svg", stem(csv)),
                svg::scatter(&x, &y, &fit, (&xl, &yl), hash.as_deref()),
            )
        }
        PlotRequest::Atm { atm, mesh } => {
            let text = read_text(atm)?;
            let map = ActivationTimeMap::from_csv(&text)
                .map_err(|e| input_error(format!("{}: {e}", atm.display())))?;
            let (file, _) = read_mesh(mesh)?;
            let (m, _) = file
                .into_parts()
                .map_err(|e| input_error(format!("{}: {e}", mesh.display())))?;
            if map.times.len() != m.n_nodes() {
                return Err(input_error(format!(
                    "{} has {} times for {} mesh nodes",
                    atm.display(),
                    map.times.len(),
                    m.n_nodes()
                )));
            }
            (
                format!("atm_{}.svg", stem(atm)),
                svg::activation_map(&m, &map, csv_hash(&text).as_deref()),
            )
        }
    };
    let path = dir.join(name);
    write(&path, figure)?;
    Ok(path)
}

/// Explicit requests, or every figure the earlier stages make possible.
pub fn plot(ctx: &Ctx, requests: &[PlotRequest]) -> anyhow::Result<Value> {
    let dir = ctx.dir("plot");
    let mut jobs = requests.to_vec();
    if jobs.is_empty() {
        let sim = ctx.dir("simulate");
        if sim.join("atm.csv").exists() {
            let mesh = ctx
                .dir("phantom")
                .join(mesh_file_name(ctx.cfg.simulate.mesh));
            jobs.push(PlotRequest::Atm {
                atm: sim.join("atm.csv"),
                mesh,
            });
            jobs.push(PlotRequest::Ecg {
                pred: sim.join("ecg.csv"),
                gt: None,
            });
        }
        let ecg_dir = ctx.dir("infer").join("ecg");
        if let Ok(entries) = std::fs::read_dir(&ecg_dir) {
            let mut preds: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| stem(p).starts_with("pred_"))
                .collect();
            preds.sort();
            if let Some(pred) = preds.into_iter().next() {
                let gt = ecg_dir.join(format!("{}.csv", stem(&pred).replacen("pred_", "gt_", 1)));
                jobs.push(PlotRequest::Ecg { pred, gt: Some(gt) });
            }
        }
        let eval = ctx.dir("eval");
        if let Ok(entries) = std::fs::read_dir(&eval) {
            let mut csvs: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    stem(p).starts_with("scatter_") && p.extension().is_some_and(|e| e == "csv")
                })
                .collect();
            csvs.sort();
            jobs.extend(csvs.into_iter().map(|csv| PlotRequest::Scatter { csv }));
        }
        if jobs.is_empty() {
            return Err(input_error(format!(
                "nothing to plot under {}",
                ctx.out.display()
            )));
        }
    }
    let files = jobs
        .iter()
        .map(|j| plot_one(j, &dir))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let names: Vec<String> = files
        .iter()
        .map(|p| {
            p.file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
        .collect();
    ctx.finish("plot", &ctx.cfg.run_hash(), json!({ "figures": names }))
}
