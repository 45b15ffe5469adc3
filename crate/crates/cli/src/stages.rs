//! Pipeline stages. Each one pulls its inputs through the manifest (so a
//! missing or modified upstream file is reported against the stage that
//! should have produced it), skips itself when nothing changed and records
//! the digests of what it wrote.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use invabc::abc::{self, Prior, StopReason};
use invabc::forming_sim::{self, StrainField, ZoneLabelGrid};
use invabc::imaging::{self, Mask, RgbImage, MASK_KEEP};
use invabc::lssvr::{self, HyperGrid, LvLssvrModel};
use invabc::nn::checkpoint::Checkpoint;
use invabc::nn::Tensor;
use invabc::params::ParameterSpace;
use invabc::vae::{self, VaeModel};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::config::{EpsilonStop, ObjectiveMode, RunConfig};
use crate::design::{lhd_sample, DesignTable};
use crate::error::PipelineError;
use crate::manifest::{sha256_hex, RunManifest, Stage, TOOL_VERSION};
use crate::svg;

pub const DESIGN_TRAIN: &str = "design_train.csv";
pub const DESIGN_TEST: &str = "design_test.csv";
pub const DESIGN_AUGMENT: &str = "design_augment.csv";
pub const SIMULATOR_CONFIG: &str = "simulator_config.json";
pub const PUNCH: &str = "punch.png";
pub const MASK: &str = "mask.png";
pub const SIMULATE_FAILURES: &str = "simulate_failures.csv";
pub const OBJECTIVE: &str = "objective.png";
pub const OBJECTIVE_REPORT: &str = "objective_report.csv";
pub const CHECKPOINT: &str = "vae.ckpt";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const ZS: &str = "zs.csv";
pub const ZO: &str = "zo.csv";
pub const SURROGATE_DIR: &str = "surrogate";
pub const SURROGATE_CV: &str = "surrogate_cv.csv";
pub const SSIM_TABLE: &str = "ssim.csv";
pub const VALIDATION: &str = "validation.csv";
pub const POSTERIOR: &str = "posterior.csv";
pub const TRACE: &str = "trace.csv";
pub const SUMMARY: &str = "summary.csv";
pub const INFER_REPORT: &str = "infer_report.csv";
pub const REPORT_SUMMARY: &str = "report_summary.csv";
pub const REPORT_METRICS: &str = "report_metrics.csv";
pub const DEFECTS: &str = "defects.csv";
pub const POSTERIOR_HIST_SVG: &str = "posterior_hist.svg";
pub const EPSILON_TRACE_SVG: &str = "epsilon_trace.svg";
pub const DEFECTS_SVG: &str = "defects.svg";
pub const SSIM_SVG: &str = "ssim.svg";

pub const STATUS_OK: &str = "ok";
pub const STATUS_PASS: &str = "pass";
/// Validation failed and new design rows were appended.
pub const STATUS_AUGMENTED: &str = "augmented";
/// Validation failed with the augmentation budget spent.
pub const STATUS_FAIL: &str = "fail";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum StageKind {
    Design,
    Simulate,
    BuildObjective,
    TrainVae,
    FitSurrogate,
    Validate,
    Infer,
    Report,
}

impl StageKind {
    pub const ALL: [StageKind; 8] = [
        StageKind::Design,
        StageKind::Simulate,
        StageKind::BuildObjective,
        StageKind::TrainVae,
        StageKind::FitSurrogate,
        StageKind::Validate,
        StageKind::Infer,
        StageKind::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StageKind::Design => "design",
            StageKind::Simulate => "simulate",
            StageKind::BuildObjective => "build-objective",
            StageKind::TrainVae => "train-vae",
            StageKind::FitSurrogate => "fit-surrogate",
            StageKind::Validate => "validate",
            StageKind::Infer => "infer",
            StageKind::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOutcome {
    pub stage: &'static str,
    pub skipped: bool,
    pub status: String,
}

impl StageOutcome {
    pub fn validation_failed(&self) -> bool {
        self.status == STATUS_AUGMENTED || self.status == STATUS_FAIL
    }
}

pub struct Pipeline {
    pub cfg: RunConfig,
    pub dir: PathBuf,
    manifest: RunManifest,
}

impl Pipeline {
    pub fn open(cfg: RunConfig, dir: &Path) -> Result<Self, PipelineError> {
        fs::create_dir_all(dir)?;
        let mut manifest = RunManifest::load_or_default(dir)?;
        manifest.tool_version = TOOL_VERSION.to_string();
        manifest.config_hash = sha256_hex(cfg.canonical_json().as_bytes());
        manifest.simulator_config_hash = sha256_hex(serde_json::to_string(&cfg.simulator)?.as_bytes());
        Ok(Self {
            cfg,
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn run(&mut self, kind: StageKind) -> Result<StageOutcome, PipelineError> {
        let (cfg, dir, m) = (&self.cfg, self.dir.as_path(), &mut self.manifest);
        let out = match kind {
            StageKind::Design => design(cfg, dir, m),
            StageKind::Simulate => simulate(cfg, dir, m),
            StageKind::BuildObjective => build_objective(cfg, dir, m),
            StageKind::TrainVae => train_vae(cfg, dir, m),
            StageKind::FitSurrogate => fit_surrogate(cfg, dir, m),
            StageKind::Validate => validate(cfg, dir, m),
            StageKind::Infer => infer(cfg, dir, m),
            StageKind::Report => report(cfg, dir, m),
        }?;
        if out.skipped {
            log::info!("{}: up to date", out.stage);
        } else {
            log::info!("{}: {}", out.stage, out.status);
        }
        Ok(out)
    }

    /// Every stage in order, looping back to simulation while validation
    /// keeps adding samples. Stops at the first validation failure that
    /// could not augment the design.
    pub fn run_all(&mut self) -> Result<StageOutcome, PipelineError> {
        self.run(StageKind::Design)?;
        loop {
            for k in [
                StageKind::Simulate,
                StageKind::BuildObjective,
                StageKind::TrainVae,
                StageKind::FitSurrogate,
            ] {
                self.run(k)?;
            }
            let v = self.run(StageKind::Validate)?;
            match v.status.as_str() {
                STATUS_AUGMENTED => continue,
                STATUS_FAIL => return Ok(v),
                _ => break,
            }
        }
        self.run(StageKind::Infer)?;
        self.run(StageKind::Report)
    }
}

fn done(stage: Stage, status: &str) -> Result<StageOutcome, PipelineError> {
    let name = stage.name();
    stage.commit(status)?;
    Ok(StageOutcome {
        stage: name,
        skipped: false,
        status: status.to_string(),
    })
}

fn skipped(name: &'static str, status: String) -> StageOutcome {
    StageOutcome {
        stage: name,
        skipped: true,
        status,
    }
}

fn check_names(table: &DesignTable, space: &ParameterSpace, path: &Path) -> Result<(), PipelineError> {
    if table.names.iter().map(String::as_str).ne(space.names()) {
        return Err(PipelineError::malformed(
            path,
            format!("columns {:?} do not match the configured parameters", table.names),
        ));
    }
    Ok(())
}

fn read_design(stage: &mut Stage, upstream: &str, rel: &str, space: &ParameterSpace) -> Result<DesignTable, PipelineError> {
    let p = stage.input(upstream, rel)?;
    let t = DesignTable::read_csv(&p)?;
    check_names(&t, space, &p)?;
    Ok(t)
}

/// Training design: the initial rows followed by every augmentation round.
fn training_design(stage: &mut Stage, space: &ParameterSpace) -> Result<DesignTable, PipelineError> {
    let mut t = read_design(stage, "design", DESIGN_TRAIN, space)?;
    if let Some(p) = stage.optional_input("validate", DESIGN_AUGMENT)? {
        let aug = DesignTable::read_csv(&p)?;
        check_names(&aug, space, &p)?;
        t.extend(&aug);
    }
    Ok(t)
}

fn image_rel(id: &str) -> String {
    format!("images/{id}.png")
}

fn load_images(stage: &mut Stage, table: &DesignTable, side: usize) -> Result<Vec<RgbImage>, PipelineError> {
    table
        .rows
        .iter()
        .map(|r| {
            let p = stage.input("simulate", &image_rel(&r.id))?;
            let img = imaging::load_png(&p)?;
            if img.width() != side || img.height() != side {
                return Err(PipelineError::malformed(p, format!("expected {side}×{side} pixels")));
            }
            Ok(img)
        })
        .collect()
}

/// `metric,value` table.
fn write_metrics(path: &Path, rows: &[(&str, String)]) -> Result<(), PipelineError> {
    let mut s = String::from("metric,value\n");
    for (k, v) in rows {
        let _ = writeln!(s, "{k},{v}");
    }
    fs::write(path, s)?;
    Ok(())
}

fn read_metrics(path: &Path) -> Result<BTreeMap<String, String>, PipelineError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(PipelineError::malformed(path, "expected metric,value rows"));
        }
        out.insert(rec[0].to_string(), rec[1].to_string());
    }
    Ok(out)
}

fn metric_f64(m: &BTreeMap<String, String>, key: &str, path: &Path) -> Result<f64, PipelineError> {
    m.get(key)
        .ok_or_else(|| PipelineError::malformed(path, format!("no `{key}` row")))?
        .parse()
        .map_err(|e| PipelineError::malformed(path, e))
}

fn parse_f64(s: &str, path: &Path) -> Result<f64, PipelineError> {
    s.parse().map_err(|e| PipelineError::malformed(path, e))
}

/// `sample_id,<prefix>1..` rows.
fn write_id_matrix(path: &Path, prefix: &str, ids: &[&str], rows: &[Vec<f64>]) -> Result<(), PipelineError> {
    let m = rows.first().map_or(0, Vec::len);
    let mut s = String::from("sample_id");
    for j in 1..=m {
        let _ = write!(s, ",{prefix}{j}");
    }
    s.push('\n');
    for (id, row) in ids.iter().zip(rows) {
        s.push_str(id);
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

fn read_id_matrix(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), PipelineError> {
    let mut r = csv::Reader::from_path(path)?;
    let width = r.headers()?.len();
    let (mut ids, mut rows) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != width || width < 2 {
            return Err(PipelineError::malformed(path, "ragged row"));
        }
        ids.push(rec[0].to_string());
        rows.push(rec.iter().skip(1).map(|v| parse_f64(v, path)).collect::<Result<Vec<_>, _>>()?);
    }
    Ok((ids, rows))
}

/// Field, full label rendering and masked rendering of one parameter vector.
pub struct Rendered {
    pub field: StrainField,
    pub labels: ZoneLabelGrid,
    pub raw: RgbImage,
    pub image: RgbImage,
}

/// Simulate, classify, render at `side`×`side` and apply the working-region
/// mask.
pub fn render_sample(
    cfg: &RunConfig,
    space: &ParameterSpace,
    mask: &RgbImage,
    theta: &[f64],
) -> Result<Rendered, PipelineError> {
    let sim = &cfg.simulator;
    let field = forming_sim::simulate(theta, space, sim)?;
    let labels = forming_sim::classify_elements(&field, &sim.flc);
    let side = cfg.image.side;
    let raw = forming_sim::render_fld_image(&labels, &sim.colors, side, side, None);
    let image = imaging::apply_mask(&raw, mask)?;
    Ok(Rendered {
        field,
        labels,
        raw,
        image,
    })
}

/// Working-region mask derived from the configured punch outline.
pub fn working_mask(cfg: &RunConfig) -> Mask {
    let side = cfg.image.side;
    let punch = forming_sim::render_punch_image(&cfg.simulator, side, side);
    imaging::build_mask(&punch, cfg.objective.color_low)
}

fn design(cfg: &RunConfig, dir: &Path, m: &mut RunManifest) -> Result<StageOutcome, PipelineError> {
    let space = cfg.space()?;
    let sc = json!({
        "parameters": cfg.parameters,
        "design": cfg.design,
        "seeds": [cfg.train_design_seed(), cfg.test_design_seed()],
    });
    let mut st = Stage::begin("design", dir, m, &sc);
    if let Some(r) = st.up_to_date()? {
        return Ok(skipped("design", r.status));
    }
    // A new design makes earlier augmentation rounds meaningless.
    st.forget("validate", &[DESIGN_AUGMENT])?;
    lhd_sample(cfg.design.train, &space, cfg.train_design_seed(), "train").write_csv(&st.output(DESIGN_TRAIN)?)?;
    lhd_sample(cfg.design.test, &space, cfg.test_design_seed(), "test").write_csv(&st.output(DESIGN_TEST)?)?;
    done(st, STATUS_OK)
}

fn simulate(cfg: &RunConfig, dir: &Path, m: &mut RunManifest) -> Result<StageOutcome, PipelineError> {
    let space = cfg.space()?;
    let sc = json!({
        "parameters": cfg.parameters,
        "simulator": cfg.simulator,
        "image": cfg.image,
        "color_low": cfg.objective.color_low,
    });
    let mut st = Stage::begin("simulate", dir, m, &sc);
    let mut rows = training_design(&mut st, &space)?;
    rows.extend(&read_design(&mut st, "design", DESIGN_TEST, &space)?);
    if let Some(r) = st.up_to_date()? {
        return Ok(skipped("simulate", r.status));
    }
    let mut seen = BTreeSet::new();
    if let Some(r) = rows.rows.iter().find(|r| !seen.insert(r.id.as_str())) {
        return Err(PipelineError::malformed(dir, format!("sample id `{}` appears twice", r.id)));
    }

    fs::write(st.output(SIMULATOR_CONFIG)?, serde_json::to_string_pretty(&cfg.simulator)? + "\n")?;
    let side = cfg.image.side;
    let punch = forming_sim::render_punch_image(&cfg.simulator, side, side);
    imaging::save_png(&punch, st.output(PUNCH)?)?;
    let mask = imaging::build_mask(&punch, cfg.objective.color_low);
    imaging::save_png(&mask.image, st.output(MASK)?)?;
    for sub in ["raw", "images", "fields"] {
        fs::create_dir_all(dir.join(sub))?;
    }

    let results: Vec<Result<(), PipelineError>> = rows
        .rows
        .par_iter()
        .map(|row| {
            let r = render_sample(cfg, &space, &mask.image, &row.theta)?;
            imaging::save_png(&r.raw, dir.join(format!("raw/{}.png", row.id)))?;
            imaging::save_png(&r.image, dir.join(image_rel(&row.id)))?;
            let mut w = BufWriter::new(fs::File::create(dir.join(format!("fields/{}.csv", row.id)))?);
            r.field.write_csv(&mut w)?;
            w.flush()?;
            Ok(())
        })
        .collect();

    let mut failures = String::from("sample_id,error\n");
    let mut first = None;
    let mut count = 0;
    for (row, res) in rows.rows.iter().zip(results) {
        match res {
            Ok(()) => {
                st.output(&format!("raw/{}.png", row.id))?;
                st.output(&image_rel(&row.id))?;
                st.output(&format!("fields/{}.csv", row.id))?;
            }
            Err(e) => {
                log::error!("simulate {}: {e}", row.id);
                let msg = e.to_string().replace([',', '\n'], ";");
                let _ = writeln!(failures, "{},{msg}", row.id);
                first.get_or_insert(format!("{}: {msg}", row.id));
                count += 1;
            }
        }
    }
    fs::write(st.output(SIMULATE_FAILURES)?, failures)?;
    if count > 0 {
        st.commit("partial")?;
        return Err(PipelineError::SimulationFailures {
            stage: "simulate",
            count,
            first: first.unwrap_or_default(),
        });
    }
    done(st, STATUS_OK)
}

fn count_working(mask: &RgbImage) -> usize {
    mask.pixels().filter(|p| *p == MASK_KEEP).count()
}

fn build_objective(cfg: &RunConfig, dir: &Path, m: &mut RunManifest) -> Result<StageOutcome, PipelineError> {
    let space = cfg.space()?;
    let planted = cfg.objective.mode == ObjectiveMode::Planted;
    let sc = json!({
        "objective": cfg.objective,
        "parameters": cfg.parameters,
        "simulator": if planted { json!(cfg.simulator) } else { json!(null) },
        "image": cfg.image,
    });
    let mut st = Stage::begin("build-objective", dir, m, &sc);
    let mask_path = st.input("simulate", MASK)?;
    let mask = imaging::load_png(&mask_path)?;
    let sources = if planted {
        let theta = cfg.objective.planted.as_ref().expect("validated config");
        if st.up_to_date()?.is_some() {
            return Ok(skipped("build-objective", STATUS_OK.into()));
        }
        vec![render_sample(cfg, &space, &mask, theta)?.image]
    } else {
        let rows = training_design(&mut st, &space)?;
        let images = load_images(&mut st, &rows, cfg.image.side)?;
        if st.up_to_date()?.is_some() {
            return Ok(skipped("build-objective", STATUS_OK.into()));
        }
        images
    };
    let (objective, rep) = imaging::reconstruct_objective(&sources, &cfg.objective.green)?;
    imaging::save_png(&objective, st.output(OBJECTIVE)?)?;
    let working = count_working(&mask);
    let coverage = if working > 0 {
        rep.green_pixels as f64 / working as f64
    } else {
        0.0
    };
    log::info!("objective: {} green pixels, {:.4} of the working region", rep.green_pixels, coverage);
    write_metrics(
        &st.output(OBJECTIVE_REPORT)?,
        &[
            ("mode", if planted { "planted" } else { "reconstruct" }.into()),
            ("source_images", sources.len().to_string()),
            ("initial_green_pixels", rep.initial_green_pixels.to_string()),
            ("green_pixels", rep.green_pixels.to_string()),
            ("working_pixels", working.to_string()),
            ("green_fraction", coverage.to_string()),
        ],
    )?;
    done(st, STATUS_OK)
}

fn train_vae(cfg: &RunConfig, dir: &Path, m: &mut RunManifest) -> Result<StageOutcome, PipelineError> {
    let space = cfg.space()?;
    let sc = json!({ "vae": cfg.vae, "seed": cfg.vae_seed(), "image": cfg.image });
    let mut st = Stage::begin("train-vae", dir, m, &sc);
    let rows = training_design(&mut st, &space)?;
    let images = load_images(&mut st, &rows, cfg.image.side)?;
    let objective = imaging::load_png(st.input("build-objective", OBJECTIVE)?)?;
    if st.up_to_date()?.is_some() {
        return Ok(skipped("train-vae", STATUS_OK.into()));
    }
    let tensors: Vec<Tensor> = images.iter().map(RgbImage::to_tensor).collect();
    let tc = cfg.train_config();
    let trained = vae::train_with_progress(&cfg.architecture(), &tensors, Some(&objective.to_tensor()), &tc, |e, loss| {
        if (e + 1) % 10 == 0 || e + 1 == tc.epochs {
            log::info!("train-vae: epoch {}/{} loss {loss:.5}", e + 1, tc.epochs);
        }
    })?;

    let mut w = BufWriter::new(fs::File::create(st.output(CHECKPOINT)?)?);
    trained.model.to_checkpoint().write_to(&mut w)?;
    w.flush()?;
    let mut log_csv = String::from("epoch,mean_loss\n");
    for (e, l) in trained.log.epoch_loss.iter().enumerate() {
        let _ = writeln!(log_csv, "{},{l}", e + 1);
    }
    fs::write(st.output(TRAIN_LOG)?, log_csv)?;
    let ids: Vec<&str> = rows.rows.iter().map(|r| r.id.as_str()).collect();
    write_id_matrix(&st.output(ZS)?, "z_", &ids, &trained.zs)?;
    let zo = trained.zo.expect("objective supplied");
    write_id_matrix(&st.output(ZO)?, "z_", &["objective"], &[zo])?;
    done(st, STATUS_OK)
}

fn bundle_files() -> [String; 4] {
    [lssvr::BUNDLE_META, lssvr::BUNDLE_ANCHORS, lssvr::BUNDLE_ALPHAS, lssvr::BUNDLE_BOUNDS]
        .map(|f| format!("{SURROGATE_DIR}/{f}"))
}

fn load_surrogate(st: &mut Stage) -> Result<LvLssvrModel, PipelineError> {
    for f in bundle_files() {
        st.input("fit-surrogate", &f)?;
    }
    Ok(lssvr::load_bundle(&st.path(SURROGATE_DIR))?)
}

fn fit_surrogate(cfg: &RunConfig, dir: &Path, m: &mut RunManifest) -> Result<StageOutcome, PipelineError> {
    let space = cfg.space()?;
    let sc = json!({ "surrogate": cfg.surrogate, "parameters": cfg.parameters, "seed": cfg.cv_seed() });
    let mut st = Stage::begin("fit-surrogate", dir, m, &sc);
    let rows = training_design(&mut st, &space)?;
    let zs_path = st.input("train-vae", ZS)?;
    if st.up_to_date()?.is_some() {
        return Ok(skipped("fit-surrogate", STATUS_OK.into()));
    }
    let (ids, zs) = read_id_matrix(&zs_path)?;
    if ids.iter().map(String::as_str).ne(rows.rows.iter().map(|r| r.id.as_str())) {
        return Err(PipelineError::malformed(zs_path, "latent rows do not follow the training design"));
    }
    let thetas: Vec<Vec<f64>> = rows.rows.iter().map(|r| r.theta.clone()).collect();
    let scaled: Vec<Vec<f64>> = thetas.iter().map(|t| space.scale_unchecked(t)).collect();
    let default = HyperGrid::default_for(space.dim());
    let grid = HyperGrid {
        bandwidths: cfg.surrogate.bandwidths.clone().unwrap_or(default.bandwidths),
        gammas: cfg.surrogate.gammas.clone().unwrap_or(default.gammas),
    };
    let sel = lssvr::select_hyperparams_multi(&scaled, &zs, &grid, cfg.surrogate.folds, cfg.cv_seed())?;
    let model = lssvr::fit_multi_scaled(&space, &thetas, &zs, &sel.chosen)?;
    for f in bundle_files() {
        st.output(&f)?;
    }
    lssvr::save_bundle(&model, &st.path(SURROGATE_DIR))?;

    let mut cv = String::from("bandwidth,gamma_reg");
    for j in 1..=model.latent_dim() {
        let _ = write!(cv, ",rmse_{j}");
    }
    cv.push('\n');
    for (p, errs) in sel.points.iter().zip(&sel.cv_rmse) {
        let _ = write!(cv, "{},{}", p.bandwidth, p.gamma_reg);
        for e in errs {
            let _ = write!(cv, ",{e}");
        }
        cv.push('\n');
    }
    fs::write(st.output(SURROGATE_CV)?, cv)?;
    done(st, STATUS_OK)
}

fn load_vae(st: &mut Stage) -> Result<VaeModel, PipelineError> {
    let p = st.input("train-vae", CHECKPOINT)?;
    let ckpt = Checkpoint::read_from(std::io::BufReader::new(fs::File::open(&p)?))
        .map_err(|e| PipelineError::malformed(&p, e))?;
    Ok(VaeModel::from_checkpoint(&ckpt)?)
}

/// Distinct augmentation rounds (`augK-` id prefixes) in a design.
fn augmentation_rounds(t: &DesignTable) -> usize {
    t.rows
        .iter()
        .filter_map(|r| r.id.split_once('-').map(|(p, _)| p))
        .collect::<BTreeSet<_>>()
        .len()
}

fn validate(cfg: &RunConfig, dir: &Path, m: &mut RunManifest) -> Result<StageOutcome, PipelineError> {
    let space = cfg.space()?;
    let sc = json!({
        "validate": cfg.validate,
        "parameters": cfg.parameters,
        "seed": cfg.seed,
        "auto_quantile": cfg.abc.auto_quantile,
    });
    let mut st = Stage::begin("validate", dir, m, &sc);
    let test = read_design(&mut st, "design", DESIGN_TEST, &space)?;
    let images = load_images(&mut st, &test, cfg.image.side)?;
    let surrogate = load_surrogate(&mut st)?;
    let model = load_vae(&mut st)?;
    let augment_path = st.optional_input("validate", DESIGN_AUGMENT)?;
    let current = st.record("validate").and_then(|r| r.outputs.get(DESIGN_AUGMENT)).cloned();
    let fitted_on = st.record("fit-surrogate").and_then(|r| r.inputs.get(DESIGN_AUGMENT)).cloned();
    if current != fitted_on {
        // The surrogate predates the latest augmentation round.
        return Err(PipelineError::StaleArtifact {
            stage: "fit-surrogate".into(),
            path: st.path(SURROGATE_DIR),
        });
    }
    if let Some(r) = st.up_to_date()? {
        return Ok(skipped("validate", r.status));
    }
    if test.is_empty() {
        return Err(PipelineError::Config("validate needs design.test ≥ 1".into()));
    }
    if surrogate.input_dim() != space.dim() || surrogate.latent_dim() != model.latent_dim() {
        return Err(PipelineError::malformed(
            st.path(SURROGATE_DIR),
            "surrogate dimensions do not match the parameters and the VAE",
        ));
    }

    let params = cfg.ssim_params();
    let scored: Vec<(f64, f64)> = test
        .rows
        .par_iter()
        .zip(&images)
        .map(|(row, img)| {
            let zhat = surrogate.predict_multi(&row.theta)?;
            let pseudo = RgbImage::from_tensor(&model.decode(&zhat)?)?;
            let s = imaging::ssim(&pseudo, img, &params)?;
            let z = model.encode(&img.to_tensor())?.mean;
            Ok((s, abc::distance(&z, &zhat)?))
        })
        .collect::<Result<_, PipelineError>>()?;

    let mut table = String::from("sample_id,ssim,latent_error\n");
    for (row, (s, e)) in test.rows.iter().zip(&scored) {
        let _ = writeln!(table, "{},{s},{e}", row.id);
    }
    fs::write(st.output(SSIM_TABLE)?, table)?;
    let n = scored.len() as f64;
    let mean = scored.iter().map(|p| p.0).sum::<f64>() / n;
    let min = scored.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let errors: Vec<f64> = scored.iter().map(|p| p.1).collect();
    let q = abc::quantile(&errors, cfg.abc.auto_quantile);
    let pass = mean >= cfg.validate.ssim_threshold;

    let mut augment = match &augment_path {
        Some(p) => DesignTable::read_csv(p)?,
        None => DesignTable::empty(space.names().iter().map(|s| s.to_string()).collect()),
    };
    let rounds = augmentation_rounds(&augment);
    let status = if pass {
        STATUS_PASS
    } else if rounds < cfg.validate.max_rounds && cfg.validate.augment > 0 {
        let prefix = format!("aug{}", rounds + 1);
        augment.extend(&lhd_sample(cfg.validate.augment, &space, cfg.augment_seed(rounds), &prefix));
        augment.write_csv(&st.path(DESIGN_AUGMENT))?;
        STATUS_AUGMENTED
    } else {
        STATUS_FAIL
    };
    if st.path(DESIGN_AUGMENT).exists() {
        st.output(DESIGN_AUGMENT)?;
    }
    let rounds_now = augmentation_rounds(&augment);
    write_metrics(
        &st.output(VALIDATION)?,
        &[
            ("n_test", test.len().to_string()),
            ("mean_ssim", mean.to_string()),
            ("min_ssim", min.to_string()),
            ("ssim_threshold", cfg.validate.ssim_threshold.to_string()),
            ("pass", u8::from(pass).to_string()),
            ("augmentation_rounds", rounds_now.to_string()),
            ("latent_error_level", cfg.abc.auto_quantile.to_string()),
            ("latent_error_quantile", q.to_string()),
        ],
    )?;
    match status {
        STATUS_PASS => log::info!("validate: mean SSIM {mean:.4} ≥ {}", cfg.validate.ssim_threshold),
        STATUS_AUGMENTED => log::warn!(
            "validate: mean SSIM {mean:.4} < {}; added {} samples (round {rounds_now}), rerun from simulate",
            cfg.validate.ssim_threshold,
            cfg.validate.augment
        ),
        _ => log::error!(
            "validate: mean SSIM {mean:.4} < {} with no augmentation rounds left",
            cfg.validate.ssim_threshold
        ),
    }
    done(st, status)
}

fn infer(cfg: &RunConfig, dir: &Path, m: &mut RunManifest) -> Result<StageOutcome, PipelineError> {
    let space = cfg.space()?;
    let sc = json!({ "abc": cfg.abc, "seed": cfg.abc_seed(), "parameters": cfg.parameters });
    let mut st = Stage::begin("infer", dir, m, &sc);
    let surrogate = load_surrogate(&mut st)?;
    let zo_path = st.input("train-vae", ZO)?;
    let validation_path = st.input("validate", VALIDATION)?;
    if st.record("validate").is_some_and(|r| r.status != STATUS_PASS) {
        log::warn!("infer: the surrogate did not pass validation");
    }
    if let Some(r) = st.up_to_date()? {
        return Ok(skipped("infer", r.status));
    }
    let (_, zo) = read_id_matrix(&zo_path)?;
    let zo = zo.into_iter().next().ok_or_else(|| PipelineError::malformed(&zo_path, "no rows"))?;
    let eps_stop = match cfg.abc.epsilon_stop {
        EpsilonStop::Value(v) => v,
        EpsilonStop::Keyword(_) => metric_f64(&read_metrics(&validation_path)?, "latent_error_quantile", &validation_path)?,
    };
    if surrogate.input_dim() != space.dim() || surrogate.latent_dim() != zo.len() {
        return Err(PipelineError::malformed(zo_path, "latent dimension differs from the surrogate's"));
    }
    let prior = Prior::from_space(&space);
    let m_lat = surrogate.latent_dim();
    let forward = |t: &[f64]| surrogate.predict_multi(t).unwrap_or_else(|_| vec![f64::NAN; m_lat]);
    let run = abc::run_npmc(&prior, &forward, &zo, &cfg.npmc(eps_stop, cfg.abc_seed()))?;
    let names = space.names();
    let mut w = BufWriter::new(fs::File::create(st.output(POSTERIOR)?)?);
    abc::write_posterior_csv(&mut w, &names, &run.pools)?;
    w.flush()?;
    let mut w = BufWriter::new(fs::File::create(st.output(TRACE)?)?);
    abc::write_trace_csv(&mut w, &run.pools)?;
    w.flush()?;
    let mut w = BufWriter::new(fs::File::create(st.output(SUMMARY)?)?);
    abc::write_summary_csv(&mut w, &names, &run.summary)?;
    w.flush()?;
    let stop = match run.stop {
        StopReason::MaxGenerations => "max_generations",
        StopReason::ToleranceReached => "tolerance_reached",
        StopReason::Stalled => "stalled",
    };
    log::info!(
        "infer: {} generations, final epsilon {:.5} (stop at {eps_stop:.5}): {stop}",
        run.pools.len(),
        run.final_pool().epsilon
    );
    write_metrics(
        &st.output(INFER_REPORT)?,
        &[
            ("epsilon_stop", eps_stop.to_string()),
            ("generations", run.pools.len().to_string()),
            ("final_epsilon", run.final_pool().epsilon.to_string()),
            ("stop_reason", stop.to_string()),
            ("ess", run.summary.ess.to_string()),
        ],
    )?;
    done(st, STATUS_OK)
}

/// Final-generation `(theta, weight)` pairs of a posterior CSV.
pub fn read_final_generation(path: &Path, d: usize) -> Result<Vec<(Vec<f64>, f64)>, PipelineError> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.len() != d + 3 {
        return Err(PipelineError::malformed(path, format!("expected {} columns", d + 3)));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let vals = rec.iter().map(|v| parse_f64(v, path)).collect::<Result<Vec<_>, _>>()?;
        rows.push(vals);
    }
    let last = rows.iter().map(|v| v[d + 2]).fold(f64::NEG_INFINITY, f64::max);
    Ok(rows
        .into_iter()
        .filter(|v| v[d + 2] == last)
        .map(|v| (v[..d].to_vec(), v[d]))
        .collect())
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => s[n / 2],
        _ => 0.5 * (s[n / 2 - 1] + s[n / 2]),
    }
}

fn report(cfg: &RunConfig, dir: &Path, m: &mut RunManifest) -> Result<StageOutcome, PipelineError> {
    let space = cfg.space()?;
    let sc = json!({
        "report": cfg.report,
        "seed": cfg.report_seed(),
        "parameters": cfg.parameters,
        "objective": cfg.objective,
        "simulator": cfg.simulator,
    });
    let mut st = Stage::begin("report", dir, m, &sc);
    let posterior_path = st.input("infer", POSTERIOR)?;
    let summary_path = st.input("infer", SUMMARY)?;
    let trace_path = st.input("infer", TRACE)?;
    let ssim_path = st.input("validate", SSIM_TABLE)?;
    let validation_path = st.input("validate", VALIDATION)?;
    if let Some(r) = st.up_to_date()? {
        return Ok(skipped("report", r.status));
    }
    let d = space.dim();
    let names = space.names();
    let particles = read_final_generation(&posterior_path, d)?;
    if particles.is_empty() {
        return Err(PipelineError::malformed(posterior_path, "no particles"));
    }

    let mut sr = csv::Reader::from_path(&summary_path)?;
    let mut stats = Vec::new();
    for rec in sr.records() {
        let rec = rec?;
        stats.push((parse_f64(&rec[1], &summary_path)?, parse_f64(&rec[2], &summary_path)?));
    }
    if stats.len() != d {
        return Err(PipelineError::malformed(summary_path, format!("expected {d} parameters")));
    }
    let planted = match cfg.objective.mode {
        ObjectiveMode::Planted => cfg.objective.planted.clone(),
        ObjectiveMode::Reconstruct => None,
    };
    let mut table = String::from("parameter,mean,std,planted,within_3std\n");
    let mut all_within = true;
    for (k, (mean, std)) in stats.iter().enumerate() {
        let _ = write!(table, "{},{mean},{std}", names[k]);
        match &planted {
            Some(p) => {
                let within = (p[k] - mean).abs() <= 3.0 * std;
                all_within &= within;
                let _ = writeln!(table, ",{},{within}", p[k]);
            }
            None => table.push_str(",,\n"),
        }
    }
    fs::write(st.output(REPORT_SUMMARY)?, table)?;

    let panels: Vec<svg::HistPanel> = space
        .specs()
        .iter()
        .enumerate()
        .map(|(k, p)| svg::HistPanel {
            name: &p.name,
            lo: p.lo,
            hi: p.hi,
            samples: particles.iter().map(|(t, w)| (t[k], *w)).collect(),
            marker: planted.as_ref().map(|v| v[k]),
        })
        .collect();
    fs::write(
        st.output(POSTERIOR_HIST_SVG)?,
        svg::histogram_panels("Posterior (final generation)", &panels, 20),
    )?;

    let mut tr = csv::Reader::from_path(&trace_path)?;
    let mut eps = Vec::new();
    for rec in tr.records() {
        let rec = rec?;
        eps.push((parse_f64(&rec[0], &trace_path)?, parse_f64(&rec[1], &trace_path)?));
    }
    fs::write(
        st.output(EPSILON_TRACE_SVG)?,
        svg::line_plot("Tolerance by generation", "generation", "epsilon", &eps, true),
    )?;

    let mut ssr = csv::Reader::from_path(&ssim_path)?;
    let mut ssims = Vec::new();
    for rec in ssr.records() {
        ssims.push(parse_f64(&rec?[1], &ssim_path)?);
    }
    fs::write(
        st.output(SSIM_SVG)?,
        svg::bar_plot(
            "Surrogate validation",
            "test sample",
            "SSIM",
            &ssims,
            Some((cfg.validate.ssim_threshold, "threshold")),
        ),
    )?;

    // Weighted posterior draws, each simulated and checked for defects.
    let weights: Vec<f64> = particles.iter().map(|p| p.1).collect();
    let pick = WeightedIndex::new(&weights).map_err(|e| PipelineError::Numerical(format!("posterior weights: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.report_seed());
    let draws: Vec<&Vec<f64>> = (0..cfg.report.posterior_draws)
        .map(|_| &particles[pick.sample(&mut rng)].0)
        .collect();
    let counts: Vec<(usize, usize, usize)> = draws
        .par_iter()
        .map(|theta| {
            let field = forming_sim::simulate(theta, &space, &cfg.simulator)?;
            let labels = forming_sim::classify_elements(&field, &cfg.simulator.flc);
            Ok(forming_sim::count_defects_in(&labels, &cfg.simulator.region))
        })
        .collect::<Result<_, PipelineError>>()?;
    let mut dcsv = format!("draw,{},crack,wrinkle,elements_in_region,crack_fraction\n", names.join(","));
    for (i, (theta, (c, w, n))) in draws.iter().zip(&counts).enumerate() {
        let _ = write!(dcsv, "{}", i + 1);
        for v in theta.iter() {
            let _ = write!(dcsv, ",{v}");
        }
        let _ = writeln!(dcsv, ",{c},{w},{n},{}", *c as f64 / (*n).max(1) as f64);
    }
    fs::write(st.output(DEFECTS)?, dcsv)?;
    let cracks: Vec<f64> = counts.iter().map(|c| c.0 as f64).collect();
    let wrinkles: Vec<f64> = counts.iter().map(|c| c.1 as f64).collect();
    let in_region = counts.first().map_or(0, |c| c.2);
    fs::write(
        st.output(DEFECTS_SVG)?,
        svg::bar_plot(
            "Cracked elements in posterior draws",
            "draw",
            "cracked elements",
            &cracks,
            Some((0.02 * in_region as f64, "2% of region")),
        ),
    )?;

    let validation = read_metrics(&validation_path)?;
    let median_crack = median(&cracks);
    let mut metrics = vec![
        ("posterior_draws", draws.len().to_string()),
        ("elements_in_region", in_region.to_string()),
        ("median_crack", median_crack.to_string()),
        ("median_crack_fraction", (median_crack / in_region.max(1) as f64).to_string()),
        ("median_wrinkle", median(&wrinkles).to_string()),
        ("mean_ssim", metric_f64(&validation, "mean_ssim", &validation_path)?.to_string()),
    ];
    if planted.is_some() {
        metrics.push(("planted_within_3std", all_within.to_string()));
    }
    write_metrics(&st.output(REPORT_METRICS)?, &metrics)?;
    done(st, STATUS_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn rounds_count_distinct_prefixes() {
        let space = ParameterSpace::unit(2);
        let mut t = lhd_sample(3, &space, 0, "aug1");
        assert_eq!(augmentation_rounds(&t), 1);
        t.extend(&lhd_sample(3, &space, 1, "aug2"));
        assert_eq!(augmentation_rounds(&t), 2);
    }

    #[test]
    fn id_matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.csv");
        let rows = vec![vec![0.1, -2.5e-7], vec![3.0, 4.0]];
        write_id_matrix(&p, "z_", &["a", "b"], &rows).unwrap();
        let (ids, back) = read_id_matrix(&p).unwrap();
        assert_eq!(ids, ["a", "b"]);
        assert_eq!(back, rows);
    }
}
