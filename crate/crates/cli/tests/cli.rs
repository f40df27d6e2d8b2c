use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_packattack"));
    c.env_remove("PACKATTACK_DATA_DIR");
    c
}

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn example(name: &str) -> PathBuf {
    repo().join("scenarios").join(name)
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_json(dir: &Path, name: &str, edit: impl FnOnce(&mut serde_json::Value)) -> PathBuf {
    let mut v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(example("drain_compact.json")).unwrap()).unwrap();
    edit(&mut v);
    let p = dir.join(name);
    std::fs::write(&p, v.to_string()).unwrap();
    p
}

#[test]
fn stealth_prints_the_table_row() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("wipers.json");
    std::fs::write(
        &spec,
        r#"{"kind":"AuxDrain","components":["Wipers"],"start":"AfterFullCharge","duration":600,"repeat":"Daily"}"#,
    )
    .unwrap();
    let out = bin().arg("stealth").arg(&spec).output().unwrap();
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("Parked       Medium"), "{text}");
    assert!(text.contains("Stationary   Very Low"));
    assert!(text.contains("Driving      Very Low"));

    let out = bin()
        .arg("stealth")
        .arg(example("drain_compact.json"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("Driving      Low"));
}

#[test]
fn simulate_compare_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("attack.json");
    let daily = dir.path().join("daily.csv");
    let out = bin()
        .args(["simulate"])
        .arg(example("drain_compact.json"))
        .arg("-o")
        .arg(&report)
        .arg("--daily-csv")
        .arg(&daily)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let rate = v["max_soc_drain_rate"].as_f64().unwrap();
    assert!((0.15..=0.25).contains(&rate));
    assert!(v["delta_r"].as_f64().unwrap() > 0.0);
    let csv = std::fs::read_to_string(&daily).unwrap();
    assert!(csv.starts_with("day,sei_thickness_m,capacity_lost_ah,soc_min,temp_max_k\n1,"));

    // The same scenario again gives the same bytes.
    let again = bin()
        .arg("simulate")
        .arg(example("drain_compact.json"))
        .output()
        .unwrap();
    assert_eq!(
        stdout(&again).trim_end(),
        std::fs::read_to_string(&report).unwrap().trim_end()
    );

    let baseline_scenario = write_json(dir.path(), "baseline_scenario.json", |v| {
        v.as_object_mut().unwrap().remove("attack");
    });
    let baseline = dir.path().join("baseline.json");
    let out = bin()
        .arg("simulate")
        .arg(&baseline_scenario)
        .arg("-o")
        .arg(&baseline)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);

    let table = dir.path().join("table.csv");
    let out = bin()
        .arg("compare")
        .arg(&baseline)
        .arg(&report)
        .arg("-o")
        .arg(&table)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&table).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("scenario,"));
    assert!(lines.next().unwrap().starts_with("compact-drain,"));
    assert_eq!(lines.next(), None);

    let out = bin()
        .arg("compare")
        .arg("--paired")
        .arg(&baseline)
        .arg(&report)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).trim_end(), text.trim_end());
}

#[test]
fn sweep_runs_one_row_per_value() {
    let out = bin()
        .args(["sweep", "--param", "attack.duration", "--values", "1800,3600"])
        .arg(example("drain_compact.json"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2, "{text}");
    // Sorted by delta_r: the longer attack first.
    assert!(rows[0].starts_with("compact-drain attack.duration=3600,"), "{text}");
}

#[test]
fn bad_inputs_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .arg("simulate")
        .arg(dir.path().join("missing.json"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);

    let unknown = write_json(dir.path(), "unknown.json", |v| v["pack"] = "pack_9000kwh".into());
    assert_eq!(code(&bin().arg("simulate").arg(&unknown).output().unwrap()), 2);

    let typo = write_json(dir.path(), "typo.json", |v| v["horizon_dayz"] = 3.into());
    assert_eq!(code(&bin().arg("simulate").arg(&typo).output().unwrap()), 2);

    let sweep = bin()
        .args(["sweep", "--param", "attack.nothing.here", "--values", "1"])
        .arg(example("drain_compact.json"))
        .output()
        .unwrap();
    assert_eq!(code(&sweep), 2);

    assert_eq!(code(&bin().arg("frobnicate").output().unwrap()), 2);
}

#[test]
fn data_dir_override_and_simulation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let data = repo().join("crates/core/data");
    for entry in walkdir::WalkDir::new(&data)
        .into_iter()
        .map(Result::unwrap)
        .filter(|e| e.file_type().is_file())
    {
        let entry = entry.path();
        let rel = entry.strip_prefix(&data).unwrap();
        let dst = dir.path().join(rel);
        std::fs::create_dir_all(dst.parent().unwrap()).unwrap();
        std::fs::copy(entry, &dst).unwrap();
    }
    // Overridden data is actually read: a pack preset that only exists there.
    let preset = std::fs::read_to_string(dir.path().join("packs/compact_19kwh.json")).unwrap();
    std::fs::write(
        dir.path().join("packs/tiny.json"),
        preset.replace("compact_19kwh", "tiny"),
    )
    .unwrap();
    let scenario = write_json(dir.path(), "tiny.json", |v| v["pack"] = "tiny".into());
    let out = bin()
        .env("PACKATTACK_DATA_DIR", dir.path())
        .arg("simulate")
        .arg(&scenario)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(code(&bin().arg("simulate").arg(&scenario).output().unwrap()), 2);

    // A cell with almost no thermal mass makes the explicit thermal update blow up.
    let cell_path = dir.path().join("cells/nca_graphite.json");
    let cell = std::fs::read_to_string(&cell_path).unwrap();
    std::fs::write(&cell_path, cell.replace(r#""value": 1400.0"#, r#""value": 1e-6"#)).unwrap();
    let out = bin()
        .env("PACKATTACK_DATA_DIR", dir.path())
        .arg("simulate")
        .arg(&scenario)
        .output()
        .unwrap();
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}
