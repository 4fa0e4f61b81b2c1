use std::path::Path;
use std::process::Command;

fn biasa() -> Command {
    Command::new(env!("CARGO_BIN_EXE_biasa"))
}

const SMALL: &str = r#"
iterations = 3000
seeds = [1, 2]
trace_stride = 7
biases = ["unbiased", { coeff = 1.0, exponent = 0.5 }]

[problem]
kind = "quadratic"
d = 4

[oracle]
kind = "synthetic"

[schedules]
gamma = { coeff = 0.5, exponent = 0.5 }
"#;

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn rerun_gives_identical_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "small.toml", SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for (out, jobs) in [(&a, "4"), (&b, "1")] {
        let st = biasa()
            .args(["run", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .args(["--jobs", jobs])
            .status()
            .unwrap();
        assert_eq!(st.code(), Some(0));
    }
    let (ta, tb) = (csvs(&a), csvs(&b));
    assert!(ta.len() >= 4);
    assert_eq!(ta, tb);
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write(
        tmp.path(),
        "bad.toml",
        &SMALL.replace("seeds = [1, 2]", "seeds = []"),
    );
    let out = biasa()
        .args(["run", "--config"])
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let typo = write(tmp.path(), "typo.toml", &SMALL.replace("d = 4", "dim = 4"));
    let out = biasa()
        .args(["check", "--config"])
        .arg(&typo)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
    let out = biasa()
        .args(["check", "--config", "/nonexistent.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn band_failure_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let text =
        format!("{SMALL}\n[band]\nmetric = \"grad_norm_sq\"\nslope_min = 1.0\nslope_max = 2.0\n");
    let cfg = write(tmp.path(), "band.toml", &text);
    let st = biasa()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("o"))
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(1));
}

#[test]
fn check_reports_assumptions() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "small.toml", SMALL);
    let out = biasa()
        .args(["check", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("\"pass\": true"));
    assert!(text.contains("predicted slope"));
}

#[test]
fn slopes_over_written_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "small.toml",
        SMALL
            .replace("trace_stride = 7", "trace_stride = 1")
            .as_str(),
    );
    let out_dir = tmp.path().join("o");
    biasa()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .status()
        .unwrap();
    let pattern = format!("{}/*.csv", out_dir.display());
    let out = biasa()
        .args([
            "slopes",
            "--traces",
            &pattern,
            "--window",
            "300:3000",
            "--band=-5:5",
        ])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    assert_eq!(
        String::from_utf8_lossy(&out.stdout).matches("PASS").count(),
        4
    );
    let out = biasa()
        .args([
            "slopes",
            "--traces",
            "/nonexistent/*.csv",
            "--window",
            "1:10",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in std::fs::read_dir(root).unwrap() {
        let p = entry.unwrap().path();
        let out = biasa()
            .args(["check", "--config"])
            .arg(&p)
            .output()
            .unwrap();
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}: {}",
            p.display(),
            String::from_utf8_lossy(&out.stderr)
        );
    }
}
