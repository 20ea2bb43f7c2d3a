use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hyperem::hsdata::{read_cube, write_map};
use hyperem::ParameterMap;
use tempfile::TempDir;

fn hyperem(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyperem"))
        .args(args)
        .current_dir(dir)
        .env_remove("HYPEREM_SEED")
        .output()
        .expect("binary runs")
}

#[track_caller]
fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = hyperem(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    hyperem(dir, args).status.code().expect("exit code")
}

fn small_data(dir: &Path, name: &str, seed: u64) {
    ok(
        dir,
        &[
            "gen-data",
            "--set",
            &format!("out_dir={name}"),
            "--set",
            "n_cubes=6",
            "--set",
            "height=6",
            "--set",
            "width=6",
            "--set",
            &format!("seed={seed}"),
        ],
    );
}

fn small_train(dir: &Path, model: &str, out: &str, extra: &[&str]) {
    let mut args = vec![
        "train",
        "--set",
        "data=d",
        "--set",
        "seed=4",
        "--set",
        "samples=128",
        "--set",
        "epochs=2",
        "--set",
        "pretrain_epochs=2",
        "--set",
        "batch_size=32",
    ];
    let m = format!("model={model}");
    let o = format!("out={out}");
    args.extend(["--set", &m, "--set", &o]);
    args.extend(extra);
    ok(dir, &args);
}

fn files_under(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out: Vec<(PathBuf, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = fs::read(&p).unwrap();
            (p.strip_prefix(dir).unwrap().to_path_buf(), bytes)
        })
        .collect();
    out.sort();
    out
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn csv_field(line: &str, k: usize) -> &str {
    line.split(',').nth(k).unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    assert_eq!(code(d, &["train", "--set", "model=vit", "--set", "seed=1", "--set", "data=d"]), 2);
    assert_eq!(code(d, &["gen-data", "--set", "out_dir=x", "--set", "seed=1", "--set", "colour=red"]), 2);
    assert_eq!(code(d, &["gen-data", "--set", "out_dir=x"]), 2, "missing seed");
    assert_eq!(code(d, &["gen-data", "--set", "novalue"]), 2);
    assert_eq!(code(d, &["frobnicate"]), 2);
    assert_eq!(code(d, &["--workers", "0", "plot", "--set", "out_dir=p"]), 2);
    fs::write(d.join("bad.json"), "{not json").unwrap();
    assert_eq!(code(d, &["gen-data", "--config", "bad.json"]), 2);
    assert!(!d.join("x").exists());
}

#[test]
fn runtime_errors_exit_with_one() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    assert_eq!(
        code(d, &["train", "--set", "model=p2p", "--set", "seed=1", "--set", "data=nowhere", "--set", "out=m.hem"]),
        1
    );
    fs::write(d.join("junk.hem"), b"not a model").unwrap();
    assert_eq!(code(d, &["emulate", "--set", "model=junk.hem", "--set", "out_dir=e", "--set", "maps=[\"m.hpm\"]"]), 1);
}

#[test]
fn empty_dataset_and_config_hash() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    ok(d, &["gen-data", "--set", "out_dir=empty", "--set", "n_cubes=0", "--set", "seed=9"]);
    let m = manifest(&d.join("empty"));
    assert_eq!(m["files"].as_array().unwrap().len(), 0);
    assert_eq!(files_under(&d.join("empty")).len(), 1);

    ok(d, &["gen-data", "--set", "out_dir=other", "--set", "n_cubes=0", "--set", "seed=9"]);
    assert_eq!(manifest(&d.join("other"))["config_hash"], m["config_hash"], "output dir is not hashed");
    ok(d, &["gen-data", "--set", "out_dir=h", "--set", "n_cubes=0", "--set", "seed=10"]);
    assert_ne!(manifest(&d.join("h"))["config_hash"], m["config_hash"]);
    ok(d, &["gen-data", "--set", "out_dir=h", "--set", "n_cubes=0", "--set", "seed=9", "--set", "width=31"]);
    assert_ne!(manifest(&d.join("h"))["config_hash"], m["config_hash"]);
}

#[test]
fn seed_from_environment_and_set_overrides_config() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    fs::write(d.join("g.json"), r#"{"out_dir": "a", "n_cubes": 2, "height": 3, "width": 3, "seed": 1}"#).unwrap();
    ok(d, &["gen-data", "--config", "g.json", "--set", "seed=2", "--set", "out_dir=b"]);
    assert_eq!(manifest(&d.join("b"))["config"]["seed"], 2);
    assert_eq!(manifest(&d.join("b"))["config"]["n_cubes"], 2);

    let out = Command::new(env!("CARGO_BIN_EXE_hyperem"))
        .args(["gen-data", "--set", "out_dir=c", "--set", "n_cubes=1", "--set", "height=2", "--set", "width=2"])
        .current_dir(d)
        .env("HYPEREM_SEED", "77")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(manifest(&d.join("c"))["config"]["seed"], 77);
}

#[test]
fn runs_are_byte_reproducible() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    small_data(d, "d", 3);
    small_data(d, "d2", 3);
    assert_eq!(files_under(&d.join("d")), files_under(&d.join("d2")));

    for kind in ["p2p", "mlp", "gpr"] {
        let a = format!("{kind}_a.hem");
        let b = format!("{kind}_b.hem");
        small_train(d, kind, &a, &[]);
        small_train(d, kind, &b, &[]);
        assert_eq!(fs::read(d.join(&a)).unwrap(), fs::read(d.join(&b)).unwrap(), "{kind} checkpoint");
        assert_eq!(
            fs::read(d.join(format!("{kind}_a.csv"))).unwrap(),
            fs::read(d.join(format!("{kind}_b.csv"))).unwrap(),
            "{kind} log"
        );
    }
    for out in ["e1", "e2"] {
        let o = format!("out_dir={out}");
        ok(
            d,
            &[
                "emulate",
                "--set",
                "model=p2p_a.hem",
                "--set",
                "data=d",
                "--set",
                "split=all",
                "--set",
                &o,
                "--set",
                "mode=sample",
                "--set",
                "seed=5",
            ],
        );
    }
    assert_eq!(files_under(&d.join("e1")), files_under(&d.join("e2")));
    assert_eq!(files_under(&d.join("e1")).len(), 6);
}

#[test]
fn sample_mode_needs_a_seed() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    small_data(d, "d", 3);
    small_train(d, "p2p", "m.hem", &[]);
    assert_eq!(
        code(d, &["emulate", "--set", "model=m.hem", "--set", "data=d", "--set", "out_dir=e", "--set", "mode=sample"]),
        2
    );
    ok(d, &["emulate", "--set", "model=m.hem", "--set", "data=d", "--set", "out_dir=e"]);
}

#[test]
fn two_step_log_marks_phases_and_resume_is_identity() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    small_data(d, "d", 3);
    small_train(d, "p2p-pre", "m.hem", &[]);
    let log = fs::read_to_string(d.join("m.csv")).unwrap();
    let phases: Vec<&str> = log.lines().skip(1).map(|l| csv_field(l, 0)).collect();
    assert_eq!(phases, ["pretrain", "pretrain", "interpolator", "interpolator"]);

    small_train(d, "p2p-pre", "pre.hem", &["--set", "phase=pretrain"]);
    let log = fs::read_to_string(d.join("pre.csv")).unwrap();
    assert!(log.lines().skip(1).all(|l| l.starts_with("pretrain,")));
    assert_eq!(
        code(
            d,
            &[
                "train",
                "--set",
                "model=p2p",
                "--set",
                "seed=1",
                "--set",
                "data=d",
                "--set",
                "out=x.hem",
                "--set",
                "phase=pretrain"
            ]
        ),
        2
    );

    for (kind, m) in [("p2p-pre", "m.hem"), ("p2p", "one.hem"), ("krr", "k.hem")] {
        if m != "m.hem" {
            small_train(d, kind, m, &[]);
        }
        let r = format!("resume={m}");
        small_train(d, kind, "r.hem", &["--set", &r, "--set", "epochs=0", "--set", "pretrain_epochs=0"]);
        assert_eq!(fs::read(d.join(m)).unwrap(), fs::read(d.join("r.hem")).unwrap(), "{kind}");
    }
    // resuming into the wrong kind is refused
    assert_eq!(
        code(
            d,
            &[
                "train",
                "--set",
                "model=mlp",
                "--set",
                "seed=1",
                "--set",
                "data=d",
                "--set",
                "out=x.hem",
                "--set",
                "resume=m.hem"
            ]
        ),
        2
    );
}

#[test]
fn eval_of_a_cube_against_itself() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    small_data(d, "d", 3);
    ok(
        d,
        &[
            "eval",
            "--set",
            r#"reference=["d/cube_0001.hsc"]"#,
            "--set",
            r#"emulated=["d/cube_0001.hsc"]"#,
            "--set",
            "out=self.csv",
            "--set",
            "reports_dir=rep",
        ],
    );
    let text = fs::read_to_string(d.join("self.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "name,rmse,ssim,sa_radians,psnr_db,valid_pixels");
    for line in &lines[1..] {
        assert_eq!(csv_field(line, 1).parse::<f64>().unwrap(), 0.0);
        assert_eq!(csv_field(line, 2).parse::<f64>().unwrap(), 1.0);
        assert_eq!(csv_field(line, 3).parse::<f64>().unwrap(), 0.0);
        assert_eq!(csv_field(line, 4), "inf");
        assert_eq!(csv_field(line, 5), "36");
    }
    assert!(d.join("rep/metrics_cube_0001.csv").exists());
    assert_eq!(code(d, &["eval", "--set", r#"reference=["d/cube_0001.hsc"]"#, "--set", "out=x.csv"]), 2);
}

#[test]
fn model_eval_covers_the_test_split() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    small_data(d, "d", 3);
    small_train(d, "mlp", "m.hem", &[]);
    ok(d, &["eval", "--set", "model=m.hem", "--set", "data=d", "--set", "split=all", "--set", "out=e.csv"]);
    let text = fs::read_to_string(d.join("e.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 6 + 1);
    let mean = text.lines().last().unwrap();
    assert!(mean.starts_with("mean,"));
    assert!(csv_field(mean, 1).parse::<f64>().unwrap() > 0.0);
}

#[test]
fn invert_reference_against_itself_has_zero_error() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    small_data(d, "d", 3);
    ok(
        d,
        &[
            "invert",
            "--set",
            "reference=d/cube_0000.hsc",
            "--set",
            r#"emulated={"same": "d/cube_0000.hsc", "other": "d/cube_0001.hsc"}"#,
            "--set",
            "out_dir=inv",
        ],
    );
    let summary = fs::read_to_string(d.join("inv/summary.csv")).unwrap();
    assert!(summary.contains("same,0\n"), "{summary}");
    for f in ["retrieved_reference.hpm", "retrieved_same.hpm", "re_same.hpm", "re_other.hpm"] {
        assert!(d.join("inv").join(f).exists(), "{f}");
    }
    ok(
        d,
        &[
            "invert",
            "--set",
            "reference=d/cube_0000.hsc",
            "--set",
            r#"emulated={"same": "d/cube_0000.hsc"}"#,
            "--set",
            "out_dir=sa",
            "--set",
            "cost=spectral_angle",
        ],
    );
    assert!(fs::read_to_string(d.join("sa/summary.csv")).unwrap().contains("same,0\n"));
    assert_eq!(
        code(
            d,
            &[
                "invert",
                "--set",
                "reference=d/cube_0000.hsc",
                "--set",
                r#"emulated={"../x": "d/cube_0000.hsc"}"#,
                "--set",
                "out_dir=i"
            ]
        ),
        2
    );
    assert_eq!(
        code(
            d,
            &[
                "invert",
                "--set",
                "reference=d/cube_0000.hsc",
                "--set",
                r#"emulated={"a": "d/cube_0000.hsc"}"#,
                "--set",
                "out_dir=i",
                "--set",
                "param=height"
            ]
        ),
        2
    );
}

#[test]
fn bench_reports_each_repeat_and_the_median() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    small_data(d, "d", 3);
    small_train(d, "krr", "k.hem", &[]);
    ok(
        d,
        &[
            "--workers",
            "1",
            "bench",
            "--set",
            "model=k.hem",
            "--set",
            "out=b.csv",
            "--set",
            "seed=2",
            "--set",
            "n_maps=3",
            "--set",
            "height=4",
            "--set",
            "width=4",
        ],
    );
    let text = fs::read_to_string(d.join("b.csv")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "run,seconds");
    let runs: Vec<f64> = rows[1..4].iter().map(|l| csv_field(l, 1).parse().unwrap()).collect();
    assert!(rows[1..4].iter().enumerate().all(|(i, l)| csv_field(l, 0) == i.to_string()));
    let median: f64 = csv_field(rows[4], 1).parse().unwrap();
    assert!(rows[4].starts_with("median,"));
    let mut sorted = runs.clone();
    sorted.sort_by(f64::total_cmp);
    assert_eq!(median, sorted[1]);
    assert!(text.contains("# images=3 workers=1"));
    assert_eq!(
        code(d, &["bench", "--set", "model=k.hem", "--set", "out=b.csv", "--set", "seed=2", "--set", "repeats=0"]),
        2
    );
}

#[test]
fn plot_writes_heatmaps_and_scatter_data() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    small_data(d, "d", 3);
    let zero = ParameterMap::new(3, 4, vec!["re_percent".into()], vec![(0.0, 100.0)], &[0.0; 12]).unwrap();
    write_map(&zero, d.join("zero.hpm")).unwrap();
    ok(
        d,
        &[
            "plot",
            "--set",
            r#"error_maps=["zero.hpm"]"#,
            "--set",
            "reference=d/cube_0000.hsc",
            "--set",
            "emulated=d/cube_0000.hsc",
            "--set",
            "bands=[0,7]",
            "--set",
            "out_dir=p",
        ],
    );
    let svg = fs::read_to_string(d.join("p/zero.svg")).unwrap();
    assert_eq!(svg.matches(r#"class="px""#).count(), 12);
    assert_eq!(svg.matches(r#"class="bar""#).count(), 256);
    assert!(svg.contains(r#"sans-serif">0</text>"#));
    let px: Vec<&str> = svg.lines().filter(|l| l.contains(r#"class="px""#)).collect();
    assert!(px.iter().all(|l| l.contains("#808080")));

    let cube = read_cube(d.join("d/cube_0000.hsc")).unwrap();
    let scatter = fs::read_to_string(d.join("p/scatter_band_007.csv")).unwrap();
    let header: Vec<&str> = scatter.lines().take_while(|l| l.starts_with('#')).collect();
    assert!(header.iter().any(|l| l.contains("pearson_r=")));
    let r: f64 = header[1].split("pearson_r=").nth(1).unwrap().split(' ').next().unwrap().parse().unwrap();
    assert!((r - 1.0).abs() < 1e-12);
    assert_eq!(scatter.lines().filter(|l| !l.starts_with('#')).count(), 1 + cube.pixels());
    assert!(d.join("p/scatter_band_000.csv").exists());
    assert!(!d.join("p/scatter_band_001.csv").exists());
    assert_eq!(code(d, &["plot", "--set", "out_dir=q"]), 2);
    assert_eq!(code(d, &["plot", "--set", "out_dir=q", "--set", "reference=d/cube_0000.hsc"]), 2);
}
