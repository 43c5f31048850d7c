use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn sepm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sepm"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SEPM_PROFILE")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const TREE: &str = r#"
name = "t"
[topology]
kind = "tree-decoder"
depth = 2
[network]
preset = "from-topology"
[[program.step]]
time = 0.1
intent = { address = 2 }
dwell = 0.2
"#;

#[test]
fn single_valve_closure_from_csv_matches_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = sepm(&["run", "fig3_single_valve", "--out", "o"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let base = dir.path().join("o/fig3_single_valve");

    let mut rdr = csv::Reader::from_path(base.join("trace.csv")).unwrap();
    let header = rdr.headers().unwrap().clone();
    let col = header.iter().position(|h| h == "p_outlet").unwrap();
    let rows: Vec<(f64, f64)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].parse().unwrap(), r[col].parse().unwrap())
        })
        .collect();
    let last_high = rows
        .iter()
        .rposition(|&(t, p)| t >= 1.0 && p.abs() > 5000.0)
        .unwrap();
    let settle = rows[last_high + 1].0 - 1.0;
    assert!((0.092..=0.138).contains(&settle), "{settle}");

    let report: toml::Value =
        toml::from_str(&std::fs::read_to_string(base.join("report.toml")).unwrap()).unwrap();
    let metric = report["metric"]
        .as_array()
        .unwrap()
        .iter()
        .find(|m| m["name"].as_str() == Some("closure_settle_s"))
        .unwrap();
    assert!((metric["value"].as_float().unwrap() - settle).abs() < 1e-9);
    assert_eq!(report["holding_energy_j"].as_float().unwrap(), 0.0);
    assert!(base.join("registry.toml").exists() && base.join("schedule.txt").exists());
}

#[test]
fn dry_run_prints_schedule_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = sepm(
        &["run", "fig4_decoder_k3", "--dry-run", "--out", "o"],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("step   0") && text.contains("pulses"));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn parallel_batch_writes_every_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = sepm(
        &[
            "run",
            "fig4_decoder_k3",
            "fig6_six_port",
            "fig5_dual_tree",
            "--jobs",
            "3",
            "--out",
            "o",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    for name in ["fig4_decoder_k3", "fig6_six_port", "fig5_dual_tree"] {
        assert!(
            dir.path().join("o").join(name).join("trace.csv").exists(),
            "{name}"
        );
    }
}

#[test]
fn registry_persists_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let s = write(&dir, "t.toml", TREE);
    assert_eq!(
        code(&sepm(
            &["run", &s, "--registry", "reg.toml", "--out", "o"],
            dir.path()
        )),
        0
    );
    let reg = std::fs::read_to_string(dir.path().join("reg.toml")).unwrap();
    assert!(reg.contains("[[valve]]"));
    let again = sepm(
        &["run", &s, "--registry", "reg.toml", "--dry-run"],
        dir.path(),
    );
    assert!(String::from_utf8(again.stdout)
        .unwrap()
        .contains("0 pulses"));
}

#[test]
fn truthtable_prints_text_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = sepm(&["truthtable", "tree:2", "--csv"], dir.path());
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("row,V1,V2,V3,output"));
    let six = sepm(&["truthtable", "six-port"], dir.path());
    assert!(String::from_utf8(six.stdout)
        .unwrap()
        .contains("1->6 3->2 5->4"));
}

#[test]
fn calibrate_default_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let out = sepm(&["calibrate", "--write", "fit.toml"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let fitted = std::fs::read_to_string(dir.path().join("fit.toml")).unwrap();
    assert_eq!(
        fitted.parse::<toml::Table>().unwrap()["magnet"]["coil_inductance"].as_float(),
        Some(0.0006634616851806641)
    );
}

#[test]
fn each_error_class_has_its_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad_profile = write(
        &dir,
        "p.toml",
        &format!("profile = \"missing.toml\"\n{TREE}"),
    );
    let high_supply = write(
        &dir,
        "hi.toml",
        &TREE.replace(
            "preset = \"from-topology\"",
            "preset = \"from-topology\"\nsupply_pressure = 2000000.0",
        ),
    );
    let unknown_node = write(
        &dir,
        "m.toml",
        &format!("{TREE}\n[[metric]]\nname = \"x\"\nkind = \"peak\"\nnode = \"nowhere\"\nfrom = 0.0\nto = 1.0\n"),
    );
    let bad_program = write(
        &dir,
        "seq.toml",
        &format!("{TREE}[[program.step]]\ntime = 0.1\nintent = {{ address = 1 }}\ndwell = 0.2\n"),
    );
    let bad_registry = write(
        &dir,
        "reg.toml",
        "[[valve]]\nid = \"V9\"\nlogical_state = 1\npulse_count = 0\n",
    );
    let tree = write(&dir, "t.toml", TREE);
    let blocker = write(&dir, "blocker", "");

    let cases: Vec<(Vec<&str>, i32)> = vec![
        (vec!["run"], 2),
        (vec!["run", &tree, &tree, "--registry", "r.toml"], 2),
        (vec!["run", "no_such_scenario"], 3),
        (vec!["run", &bad_profile], 4),
        (vec!["run", &high_supply, "--out", "o"], 6),
        (vec!["run", &unknown_node, "--out", "o"], 7),
        (vec!["truthtable", "tree:0"], 8),
        (vec!["run", &bad_program], 9),
        (vec!["run", &tree, "--registry", &bad_registry], 10),
        (vec!["calibrate", "seed", "--max-iterations", "0"], 11),
        (vec!["run", &tree, "--out", &blocker], 12),
    ];
    let mut seen = std::collections::BTreeSet::new();
    for (args, want) in cases {
        let out = sepm(&args, dir.path());
        assert_eq!(
            code(&out),
            want,
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        if want != 2 {
            assert!(
                String::from_utf8_lossy(&out.stderr).starts_with("error:"),
                "{args:?}"
            );
        }
        seen.insert(want);
    }
    let magnetics = sepm_core::Error::Magnetics(
        sepm_core::magnetics::MagneticsError::InvalidParameter("x".into()),
    );
    assert!(seen.insert(magnetics.exit_code()));
    assert_eq!(seen.len(), 11);
}
