//! End-to-end tests of the installed binary: exit codes, artifact layout,
//! and a seconds-scale run through all six subcommands.

use mvps_core::fields::config::FieldConfig;
use mvps_core::io::dataset::write_json;
use mvps_core::pipeline::{material_preset, RunConfig};
use mvps_core::render::sampling::SampleConfig;
use std::path::Path;
use std::process::{Command, Output};

fn mvps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvps"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// A configuration small enough for the whole chain to run in seconds.
fn micro_cfg(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.out = out.to_path_buf();
    cfg.seed = 21;
    cfg.scene.material = material_preset("lambertian").unwrap();
    cfg.rig.views = 2;
    cfg.rig.lights = 3;
    cfg.rig.width = 12;
    cfg.rig.height = 12;
    cfg.field = FieldConfig {
        pos_octaves: 2,
        dir_octaves: 1,
        sdf_layers: 2,
        sdf_width: 16,
        feature_dim: 8,
        skip_layer: 0,
        radiance_layers: 2,
        radiance_width: 16,
        ..FieldConfig::default()
    };
    cfg.train.epochs = 2;
    cfg.train.rays_per_view = 16;
    cfg.train.eikonal_samples = 8;
    cfg.train.checkpoint_interval = 10;
    cfg.train.sample = SampleConfig {
        coarse: 4,
        fine: 4,
        sphere_radius: 1.2,
    };
    cfg.eval.grid_res = 16;
    cfg.eval.gt_grid_res = 16;
    cfg.eval.samples = 400;
    cfg
}

#[test]
fn unknown_flag_exits_with_usage_code() {
    let out = mvps(&["simulate", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.to_lowercase().contains("usage"), "stderr: {err}");
}

#[test]
fn unknown_subcommand_exits_with_usage_code() {
    let out = mvps(&["render"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_dir_exits_one_and_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nothing");
    let out = mvps(&["priors", "--out", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("dataset"), "stderr: {err}");
    assert!(err.contains(missing.to_str().unwrap()), "stderr: {err}");
}

#[test]
fn simulate_writes_one_image_per_view_and_light() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("run");
    let out = mvps(&[
        "simulate",
        "--shape",
        "sphere",
        "--views",
        "2",
        "--lights",
        "3",
        "--width",
        "10",
        "--height",
        "10",
        "--seed",
        "5",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_ok(&out, "simulate");
    let dataset = out_dir.join("dataset");
    assert!(dataset.join("run_config.json").is_file());
    assert!(dataset.join("meta.json").is_file());
    assert!(dataset.join("cameras.json").is_file());
    let mut lights = 0;
    for v in 0..2 {
        let dir = dataset.join(format!("view_{v:03}"));
        assert!(dir.join("mask.pgm").is_file());
        lights += std::fs::read_dir(&dir)
            .unwrap()
            .filter(|e| {
                let name = e.as_ref().unwrap().file_name();
                name.to_string_lossy().starts_with("light_")
            })
            .count();
    }
    assert_eq!(lights, 2 * 3);
}

#[test]
fn all_six_stages_chain_through_a_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = micro_cfg(&tmp.path().join("run"));
    let cfg_path = tmp.path().join("cfg.json");
    write_json(&cfg_path, &cfg).unwrap();
    let cfg_arg = cfg_path.to_str().unwrap();

    assert_ok(&mvps(&["simulate", "--config", cfg_arg]), "simulate");
    assert_ok(&mvps(&["priors", "--config", cfg_arg]), "priors");
    assert_ok(&mvps(&["reconstruct", "--config", cfg_arg]), "reconstruct");
    let eval = mvps(&["evaluate", "--config", cfg_arg]);
    assert_ok(&eval, "evaluate");
    let stdout = String::from_utf8_lossy(&eval.stdout);
    assert!(stdout.contains("chamfer_l2"), "stdout: {stdout}");
    assert_ok(
        &mvps(&["profile", "--config", cfg_arg, "--plane", "0,0,1,0"]),
        "profile",
    );
    assert_ok(
        &mvps(&["ablate", "--config", cfg_arg, "--flags", "no_render"]),
        "ablate",
    );

    let root = &cfg.out;
    assert!(root.join("recon/recon_mesh.obj").is_file());
    assert!(root.join("recon/train_log.csv").is_file());
    assert!(root.join("recon/checkpoint.bin").is_file());
    assert!(root.join("eval/report.json").is_file());
    assert!(root.join("eval/report.txt").is_file());
    assert!(root.join("profile/profile.csv").is_file());
    let csv = std::fs::read_to_string(root.join("ablate/ablation.csv")).unwrap();
    assert!(csv.lines().count() >= 2, "ablation.csv: {csv}");
    assert!(csv.lines().nth(1).unwrap().starts_with("no_render,"));
}

#[test]
fn bad_preset_and_bad_plane_fail_with_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("run");
    let out = mvps(&["simulate", "--shape", "teapot", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("teapot"));

    let out = mvps(&[
        "profile",
        "--out",
        out_dir.to_str().unwrap(),
        "--plane",
        "0,0,1",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("plane"));
}
