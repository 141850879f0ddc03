//! Smoke tests of the `ttiga run` command line.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ttiga"))
}

#[test]
fn run_writes_csv_with_stable_schema() {
    let dir = std::env::temp_dir().join(format!("ttiga-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let out = dir.join("metrics.csv");
    let output = bin()
        .args([
            "run",
            "--solution",
            "sol1",
            "--scheme",
            "nested-slab",
            "--degree",
            "2",
            "--levels",
            "2",
            "--eps",
            "1e-5",
            "--approach",
            "1",
            "--prec",
            "block",
            "--source-n",
            "16",
            "--out",
        ])
        .arg(&out)
        .output()
        .expect("binary runs");
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));

    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "scheme,solution,p,L,k,eps,approach,prec,assembly_s,solve_s,iters,converged,l2_error,bytes_K,bytes_y,oracle_l2,oracle_op_delta"
    );
    let row = lines.next().unwrap();
    let fields: Vec<&str> = row.split(',').collect();
    assert_eq!(fields.len(), 17);
    assert_eq!(fields[0], "nested-slab");
    assert_eq!(fields[1], "sol1");
    assert_eq!(fields[11], "true", "run should converge: {row}");
    let l2: f64 = fields[12].parse().unwrap();
    assert!(l2 > 0.0 && l2 < 1e-2);
    // oracle columns stay empty when the oracle is off
    assert_eq!(fields[15], "");
    assert_eq!(fields[16], "");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn config_file_drives_the_run() {
    let dir = std::env::temp_dir().join(format!("ttiga-cfg-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("exp.cfg");
    std::fs::write(&cfg, "source-n=16\nmaxit=200\n").unwrap();
    let output = bin()
        .args([
            "run",
            "--scheme",
            "nested-slab",
            "--degree",
            "2",
            "--levels",
            "2",
            "--eps",
            "1e-4",
            "--config",
        ])
        .arg(&cfg)
        .output()
        .expect("binary runs");
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("nested-slab,sol1,2,2,"), "{stdout}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn invalid_configuration_is_a_structured_error() {
    let output = bin()
        .args(["run", "--scheme", "slab", "--degree", "5", "--levels", "2"])
        .output()
        .expect("binary runs");
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("desk scale"), "{stderr}");
}
