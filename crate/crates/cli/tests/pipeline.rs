//! End-to-end checks of the `invabc` binary on tiny configurations.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use invabc::imaging;
use invabc_pipeline::design::DesignTable;
use invabc_pipeline::stages::{self, render_sample, working_mask};
use invabc_pipeline::RunConfig;

const PARAMS: &str = r#"
seed = 3

[[parameters]]
name = "minor_spread"
lo = 0.0
hi = 1.0

[[parameters]]
name = "stretch"
lo = 0.0
hi = 1.0

[[parameters]]
name = "bump"
lo = 0.0
hi = 1.0

[[parameters]]
name = "center_x"
lo = 0.0
hi = 1.0

[[parameters]]
name = "center_y"
lo = 0.0
hi = 1.0

[[parameters]]
name = "bump_width"
lo = 0.0
hi = 1.0

[image]
side = 16

[simulator]
grid = 12

[vae]
latent_dim = 2
epochs = 2
batch_size = 8
"#;

struct Setup {
    _tmp: tempfile::TempDir,
    config: PathBuf,
    out: PathBuf,
}

fn setup(extra: &str) -> Setup {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    fs::write(&config, format!("{PARAMS}\n{extra}")).unwrap();
    let out = tmp.path().join("out");
    Setup {
        _tmp: tmp,
        config,
        out,
    }
}

fn invabc(s: &Setup, args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_invabc"))
        .args(args)
        .arg("--config")
        .arg(&s.config)
        .arg("--out")
        .arg(&s.out)
        .env("INVABC_THREADS", "1")
        .output()
        .unwrap();
    out.status.code().unwrap_or(-1)
}

fn metric(dir: &Path, file: &str, key: &str) -> String {
    let text = fs::read_to_string(dir.join(file)).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key},")).map(str::to_string))
        .unwrap_or_else(|| panic!("{key} missing from {file}"))
}

const SMALL: &str = r#"
[design]
train = 12
test = 4

[validate]
ssim_threshold = 0.0
augment = 4

[abc]
pilot_size = 40
n_particles = 40
t_max = 3
"#;

#[test]
fn usage_errors_and_help() {
    let s = setup(SMALL);
    let help = Command::new(env!("CARGO_BIN_EXE_invabc")).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
    let bogus = Command::new(env!("CARGO_BIN_EXE_invabc")).arg("frobnicate").output().unwrap();
    assert_eq!(bogus.status.code(), Some(1));
    fs::write(&s.config, "seed = \"seven\"\n").unwrap();
    assert_eq!(invabc(&s, &["design"]), 1);
}

#[test]
fn missing_upstream_artifact_exits_3() {
    let s = setup(SMALL);
    assert_eq!(invabc(&s, &["simulate"]), 3);
    assert_eq!(invabc(&s, &["infer"]), 3);
}

#[test]
fn empty_design_simulates_nothing() {
    let s = setup("[design]\ntrain = 0\ntest = 0\n");
    assert_eq!(invabc(&s, &["design"]), 0);
    assert_eq!(invabc(&s, &["simulate"]), 0);
    assert_eq!(fs::read_dir(s.out.join("images")).unwrap().count(), 0);
    assert_eq!(fs::read_dir(s.out.join("fields")).unwrap().count(), 0);
}

#[test]
fn one_row_matches_direct_simulation() {
    let s = setup("[design]\ntrain = 1\ntest = 0\n");
    assert_eq!(invabc(&s, &["design"]), 0);
    assert_eq!(invabc(&s, &["simulate"]), 0);
    let cfg = RunConfig::load(&s.config).unwrap();
    let space = cfg.space().unwrap();
    let design = DesignTable::read_csv(&s.out.join(stages::DESIGN_TRAIN)).unwrap();
    assert_eq!(design.len(), 1);
    let row = &design.rows[0];
    let mask = working_mask(&cfg);
    let direct = render_sample(&cfg, &space, &mask.image, &row.theta).unwrap();
    let written = imaging::load_png(s.out.join(format!("images/{}.png", row.id))).unwrap();
    assert_eq!(written, direct.image);
    assert_eq!(imaging::load_png(s.out.join(stages::MASK)).unwrap(), mask.image);
    // Independent composition from the core calls.
    let field = invabc::forming_sim::simulate(&row.theta, &space, &cfg.simulator).unwrap();
    let labels = invabc::forming_sim::classify_elements(&field, &cfg.simulator.flc);
    let raw = invabc::forming_sim::render_fld_image(&labels, &cfg.simulator.colors, 16, 16, None);
    let punch = invabc::forming_sim::render_punch_image(&cfg.simulator, 16, 16);
    let m = imaging::build_mask(&punch, cfg.objective.color_low);
    assert_eq!(written, imaging::apply_mask(&raw, &m.image).unwrap());
}

#[test]
fn full_run_is_idempotent_and_consistent() {
    let s = setup(SMALL);
    assert_eq!(invabc(&s, &["run"]), 0);
    let manifest = fs::read(s.out.join("manifest.json")).unwrap();
    let posterior = fs::read(s.out.join(stages::POSTERIOR)).unwrap();
    // Every stage is skipped on rerun; nothing is rewritten.
    assert_eq!(invabc(&s, &["run"]), 0);
    assert_eq!(fs::read(s.out.join("manifest.json")).unwrap(), manifest);
    assert_eq!(fs::read(s.out.join(stages::POSTERIOR)).unwrap(), posterior);

    // Validation mean equals the hand average of the per-image table.
    let table = fs::read_to_string(s.out.join(stages::SSIM_TABLE)).unwrap();
    let vals: Vec<f64> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(vals.len(), 4);
    let mean: f64 = metric(&s.out, stages::VALIDATION, "mean_ssim").parse().unwrap();
    assert!((mean - vals.iter().sum::<f64>() / vals.len() as f64).abs() < 1e-12);
    assert_eq!(metric(&s.out, stages::VALIDATION, "pass"), "1");

    for f in [
        stages::REPORT_SUMMARY,
        stages::DEFECTS,
        stages::POSTERIOR_HIST_SVG,
        stages::EPSILON_TRACE_SVG,
        stages::DEFECTS_SVG,
        stages::SSIM_SVG,
    ] {
        assert!(s.out.join(f).is_file(), "{f} missing");
    }

    // Tampering with an upstream output is caught downstream.
    let img = s.out.join("images/train-0000.png");
    let mut pixels = imaging::load_png(&img).unwrap();
    let p = pixels.get(0, 0);
    pixels.set(0, 0, [p[0] ^ 1, p[1], p[2]]);
    imaging::save_png(&pixels, &img).unwrap();
    assert_eq!(invabc(&s, &["build-objective"]), 3);
    // Resimulating repairs it.
    assert_eq!(invabc(&s, &["simulate"]), 0);
    assert_eq!(invabc(&s, &["build-objective"]), 0);
}

#[test]
fn failing_threshold_exits_2_and_augments() {
    let s = setup(
        r#"
[design]
train = 8
test = 3

[validate]
ssim_threshold = 0.999
augment = 3
max_rounds = 1
"#,
    );
    for stage in ["design", "simulate", "build-objective", "train-vae", "fit-surrogate"] {
        assert_eq!(invabc(&s, &[stage]), 0, "{stage}");
    }
    assert_eq!(invabc(&s, &["validate"]), 2);
    let aug = DesignTable::read_csv(&s.out.join(stages::DESIGN_AUGMENT)).unwrap();
    assert_eq!(aug.len(), 3);
    // The surrogate predates the augmentation.
    assert_eq!(invabc(&s, &["validate"]), 3);
    // The capped loop ends in failure.
    assert_eq!(invabc(&s, &["run"]), 2);
    assert_eq!(metric(&s.out, stages::VALIDATION, "augmentation_rounds"), "1");
}

#[test]
fn single_particle_report_has_zero_std() {
    let s = setup(
        r#"
[design]
train = 10
test = 2

[validate]
ssim_threshold = 0.0

[abc]
pilot_size = 1
n_particles = 1
t_max = 1
"#,
    );
    assert_eq!(invabc(&s, &["run"]), 0);
    let summary = fs::read_to_string(s.out.join(stages::REPORT_SUMMARY)).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    for r in rows {
        let std: f64 = r.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(std, 0.0, "{r}");
    }
}
