use std::path::Path;
use std::process::{Command, Output};

fn qlpv(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qlpv"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn short_config(dir: &Path) -> std::path::PathBuf {
    let desk = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml")).unwrap();
    let path = dir.join("short.toml");
    std::fs::write(&path, desk.replace("l_hat = 100", "l_hat = 5")).unwrap();
    path
}

#[test]
fn verbs_run_in_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let out = dir.path().join("run");

    let o = qlpv(&cfg, &out, &["gen-data"]);
    assert!(o.status.success(), "{o:?}");
    for f in ["data/train.csv", "data/disturbance.csv", "data/test.csv", "config.toml"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let again = qlpv(&cfg, &out, &["gen-data"]);
    assert_eq!(again.status.code(), Some(3));

    let o = qlpv(&cfg, &out, &["--strict-determinism", "identify"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("BFR train"));
    let log = std::fs::read_to_string(out.join("checkpoint_log.csv")).unwrap();
    let header = log.lines().find(|l| !l.starts_with('#')).unwrap();
    assert!(header.starts_with("outer_iter,fit_loss,r,J,max_kkt_residual"), "{header}");
    assert_eq!(log.lines().filter(|l| !l.starts_with('#')).count(), 6);

    let o = qlpv(&cfg, &out, &["rci"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("verification passed"), "{}", stdout(&o));
    assert!(out.join("rci_trace.svg").exists());

    let o = qlpv(&cfg, &out, &["simulate"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("violations: output 0, state 0, input 0"), "{}", stdout(&o));
    let trace = std::fs::read_to_string(out.join("closed_loop.csv")).unwrap();
    assert_eq!(trace.lines().filter(|l| !l.starts_with('#')).count(), 501);

    let o = qlpv(&cfg, &out, &["report", out.join("checkpoint.json").to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with('|'), "{}", stdout(&o));
}

#[test]
fn bad_configs_exit_with_code_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\ntau = -1.0\n").unwrap();
    let o = qlpv(&cfg, &dir.path().join("run"), &["gen-data"]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    std::fs::write(&cfg, "[train]\nno_such_field = 1\n").unwrap();
    assert_eq!(qlpv(&cfg, &dir.path().join("run"), &["gen-data"]).status.code(), Some(4));
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let o = qlpv(&cfg, &dir.path().join("run"), &["rci", "--checkpoint", "/nonexistent/ck.json"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
