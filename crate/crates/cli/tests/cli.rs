use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use tempfile::TempDir;

struct Run {
    code: i32,
    json: Value,
    stderr: String,
}

fn cyrisk(dir: &Path, args: &[&str], envs: &[(&str, &str)]) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cyrisk"));
    cmd.current_dir(dir).args(args).env_remove("CYRISK_OUT_DIR");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    let out = cmd.output().unwrap();
    let stdout = String::from_utf8(out.stdout).unwrap();
    let last = stdout.lines().last().unwrap_or("null");
    Run {
        code: out.status.code().unwrap(),
        json: serde_json::from_str(last).unwrap_or(Value::Null),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let r = cyrisk(dir, args, &[]);
    assert_eq!(r.code, 0, "{args:?}: {}", r.stderr);
    assert_eq!(r.json["status"], "ok");
    r.json
}

/// A small synthetic panel written into `dir/data`.
fn panel(dir: &Path) -> PathBuf {
    ok(
        dir,
        &[
            "synth",
            "--seed",
            "3",
            "--quarters",
            "60",
            "--lines",
            "3",
            "--out-dir",
            "data",
        ],
    );
    dir.join("data/synth_events.csv")
}

fn files(dir: &Path) -> Vec<String> {
    match fs::read_dir(dir) {
        Ok(rd) => {
            let mut v: Vec<String> = rd
                .map(|e| e.unwrap().file_name().into_string().unwrap())
                .collect();
            v.sort();
            v
        }
        Err(_) => Vec::new(),
    }
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let tmp = TempDir::new().unwrap();
    let args = ["synth", "--seed", "7", "--quarters", "120", "--lines", "5"];
    let a = ok(tmp.path(), &[&args[..], &["--out-dir", "a"]].concat());
    let b = ok(tmp.path(), &[&args[..], &["--out-dir", "b"]].concat());
    assert_eq!(a["settings_hash"], b["settings_hash"]);
    let fa = fs::read(tmp.path().join("a/synth_events.csv")).unwrap();
    let fb = fs::read(tmp.path().join("b/synth_events.csv")).unwrap();
    assert_eq!(fa, fb);
}

#[test]
fn csv_artifacts_carry_the_settings_hash() {
    let tmp = TempDir::new().unwrap();
    let input = panel(tmp.path());
    let j = ok(
        tmp.path(),
        &[
            "summary",
            "--input",
            input.to_str().unwrap(),
            "--out-dir",
            "o",
        ],
    );
    let text = fs::read_to_string(tmp.path().join("o/summary.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        format!("# settings_hash={}", j["settings_hash"].as_str().unwrap())
    );
    assert!(lines.next().unwrap().contains(','));
}

#[test]
fn input_location_does_not_change_the_hash() {
    let tmp = TempDir::new().unwrap();
    let input = panel(tmp.path());
    let copy = tmp.path().join("elsewhere.csv");
    fs::copy(&input, &copy).unwrap();
    let a = ok(
        tmp.path(),
        &[
            "summary",
            "--input",
            input.to_str().unwrap(),
            "--out-dir",
            "a",
        ],
    );
    let b = ok(
        tmp.path(),
        &[
            "summary",
            "--input",
            copy.to_str().unwrap(),
            "--out-dir",
            "b",
        ],
    );
    assert_eq!(a["settings_hash"], b["settings_hash"]);
}

#[test]
fn tailfit_all_methods_gives_finite_estimates() {
    let tmp = TempDir::new().unwrap();
    let input = panel(tmp.path());
    ok(
        tmp.path(),
        &[
            "tailfit",
            "--input",
            input.to_str().unwrap(),
            "--method",
            "all",
            "--out-dir",
            "o",
        ],
    );
    let text = fs::read_to_string(tmp.path().join("o/tailfit.csv")).unwrap();
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    let alpha_col = headers.iter().position(|h| h == "alpha_hat").unwrap();
    let mut seen = std::collections::BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let alpha: f64 = rec[alpha_col].parse().unwrap();
        assert!(alpha.is_finite() && alpha > 0.0, "{rec:?}");
        assert!(
            seen.insert((rec[0].to_string(), rec[1].to_string(), rec[2].to_string())),
            "duplicate {rec:?}"
        );
    }
    let sectors: std::collections::BTreeSet<_> = seen.iter().map(|s| s.0.clone()).collect();
    assert_eq!(sectors.len(), 3);
    assert!(seen.len() >= 3 * 8);
}

#[test]
fn portfolio_quote_schema() {
    let tmp = TempDir::new().unwrap();
    let input = panel(tmp.path());
    let j = ok(
        tmp.path(),
        &[
            "price",
            "--input",
            input.to_str().unwrap(),
            "--portfolio",
            "--copula",
            "gaussian",
            "--corr-method",
            "mcd",
            "--marginal-scenarios",
            "2000",
            "--scenarios",
            "5000",
            "--out-dir",
            "o",
        ],
    );
    assert!(j["premium"].as_f64().unwrap() > 0.0);
    assert!(j["std_error"].as_f64().unwrap() >= 0.0);
    assert_eq!(j["settings_hash"].as_str().unwrap().len(), 16);
}

#[test]
fn unknown_subcommand_and_flag_show_usage() {
    let tmp = TempDir::new().unwrap();
    for args in [
        &["frobnicate"][..],
        &["synth", "--no-such-flag"][..],
        &[][..],
    ] {
        let r = cyrisk(tmp.path(), args, &[]);
        assert_eq!(r.code, 1, "{args:?}");
        assert!(r.stderr.contains("Usage"), "{args:?}: {}", r.stderr);
        assert_eq!(r.json["status"], "error");
        assert_eq!(r.json["kind"], "validation");
    }
    assert_eq!(cyrisk(tmp.path(), &["--help"], &[]).code, 0);
}

#[test]
fn invalid_settings_leave_no_outputs() {
    let tmp = TempDir::new().unwrap();
    let input = panel(tmp.path());
    let input = input.to_str().unwrap();
    let cases: [&[&str]; 5] = [
        &[
            "price",
            "--input",
            input,
            "--line",
            "52",
            "--cover",
            "2",
            "--out-dir",
            "bad",
        ],
        &[
            "tailfit",
            "--input",
            input,
            "--method",
            "nonsense",
            "--out-dir",
            "bad",
        ],
        &["corr", "--input", "missing.csv", "--out-dir", "bad"],
        &["synth", "--contaminate", "5by1000", "--out-dir", "bad"],
        &[
            "diversify",
            "--input",
            input,
            "--level",
            "1.5",
            "--out-dir",
            "bad",
        ],
    ];
    for args in cases {
        let r = cyrisk(tmp.path(), args, &[]);
        assert_eq!(r.code, 1, "{args:?}: {}", r.stderr);
        assert_eq!(r.json["kind"], "validation");
        assert!(files(&tmp.path().join("bad")).is_empty(), "{args:?}");
    }
}

#[test]
fn computation_failure_exits_two_without_outputs() {
    let tmp = TempDir::new().unwrap();
    let input = panel(tmp.path());
    let r = cyrisk(
        tmp.path(),
        &[
            "price",
            "--input",
            input.to_str().unwrap(),
            "--line",
            "52",
            "--conditional",
            "0.99",
            "--marginal-scenarios",
            "1000",
            "--scenarios",
            "2000",
            "--out-dir",
            "bad",
        ],
        &[],
    );
    assert_eq!(r.code, 2, "{}", r.stderr);
    assert_eq!(r.json["kind"], "computation");
    assert!(files(&tmp.path().join("bad")).is_empty());
}

#[test]
fn config_sections_with_flag_overrides() {
    let tmp = TempDir::new().unwrap();
    fs::write(
        tmp.path().join("run.toml"),
        "[common]\nout_dir = \"from-config\"\n\n[synth]\nseed = 7\nquarters = 40\nlines = 2\n",
    )
    .unwrap();
    let by_config = ok(tmp.path(), &["--config", "run.toml", "synth"]);
    let by_flags = ok(
        tmp.path(),
        &[
            "synth",
            "--seed",
            "7",
            "--quarters",
            "40",
            "--lines",
            "2",
            "--out-dir",
            "flags",
        ],
    );
    assert_eq!(by_config["settings_hash"], by_flags["settings_hash"]);
    assert_eq!(
        fs::read(tmp.path().join("from-config/synth_events.csv")).unwrap(),
        fs::read(tmp.path().join("flags/synth_events.csv")).unwrap()
    );
    let overridden = ok(
        tmp.path(),
        &[
            "--config",
            "run.toml",
            "synth",
            "--quarters",
            "20",
            "--out-dir",
            "over",
        ],
    );
    let direct = ok(
        tmp.path(),
        &[
            "synth",
            "--seed",
            "7",
            "--quarters",
            "20",
            "--lines",
            "2",
            "--out-dir",
            "direct",
        ],
    );
    assert_eq!(overridden["settings_hash"], direct["settings_hash"]);
}

#[test]
fn config_rejects_unknown_keys_and_bad_types() {
    let tmp = TempDir::new().unwrap();
    for (name, body) in [
        ("unknown.toml", "[synth]\nsede = 7\n"),
        ("typed.toml", "[synth]\nseed = \"seven\"\n"),
        ("flat.toml", "seed = 7\n"),
        ("broken.toml", "[synth\n"),
    ] {
        fs::write(tmp.path().join(name), body).unwrap();
        let r = cyrisk(
            tmp.path(),
            &["--config", name, "synth", "--out-dir", "bad"],
            &[],
        );
        assert_eq!(r.code, 1, "{name}: {}", r.stderr);
        assert!(files(&tmp.path().join("bad")).is_empty());
    }
}

#[test]
fn output_directory_from_environment() {
    let tmp = TempDir::new().unwrap();
    let env_dir = tmp.path().join("env-out");
    let env = [("CYRISK_OUT_DIR", env_dir.to_str().unwrap())];
    let r = cyrisk(tmp.path(), &["synth", "--quarters", "8"], &env);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(files(&env_dir), vec!["synth_events.csv"]);
    let r = cyrisk(
        tmp.path(),
        &["synth", "--quarters", "8", "--out-dir", "flag-out"],
        &env,
    );
    assert_eq!(r.code, 0);
    assert_eq!(
        files(&tmp.path().join("flag-out")),
        vec!["synth_events.csv"]
    );
    assert_eq!(files(&env_dir), vec!["synth_events.csv"]);
}

#[test]
fn every_subcommand_runs_on_a_synthetic_panel() {
    let tmp = TempDir::new().unwrap();
    let input = panel(tmp.path());
    let input = input.to_str().unwrap();
    let runs: [(&[&str], &str); 8] = [
        (&["ingest"], "events.csv"),
        (&["summary"], "summary.csv"),
        (
            &[
                "trim-sweep",
                "--sectors",
                "52",
                "--k0",
                "0,2",
                "--k",
                "10,20",
            ],
            "trim_sweep.csv",
        ),
        (
            &["extremogram", "--sectors", "52", "--max-lag", "4"],
            "extremogram_52.csv",
        ),
        (&["corr", "--method", "all"], "corr.csv"),
        (&["copula"], "copula_structures.csv"),
        (
            &[
                "price",
                "--line",
                "52",
                "--marginal-scenarios",
                "1000",
                "--scenarios",
                "2000",
            ],
            "price.csv",
        ),
        (
            &[
                "diversify",
                "--marginal-scenarios",
                "1000",
                "--scenarios",
                "2000",
            ],
            "diversify.csv",
        ),
    ];
    for (args, file) in runs {
        let out = format!("out-{}", args[0]);
        let full = [args, &["--input", input, "--out-dir", &out]].concat();
        let j = ok(tmp.path(), &full);
        let text = fs::read_to_string(tmp.path().join(&out).join(file)).unwrap();
        assert!(
            text.starts_with(&format!(
                "# settings_hash={}\n",
                j["settings_hash"].as_str().unwrap()
            )),
            "{file}"
        );
    }
}
