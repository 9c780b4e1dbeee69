#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Runs the binary inside the fixtures directory with `GENRISK_SEED` unset.
pub fn genrisk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_genrisk"))
        .args(args)
        .current_dir(fixtures())
        .env_remove("GENRISK_SEED")
        .output()
        .expect("binary runs")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

pub fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", stderr(out));
    serde_json::from_str(&stdout(out)).expect("valid JSON report")
}

/// Pretty JSON report with the `wall_clock` block cut out.
pub fn without_wall_clock(text: &str) -> String {
    let mut out = String::new();
    let mut skipping = false;
    for line in text.lines() {
        if line.starts_with("  \"wall_clock\": {") {
            skipping = true;
            continue;
        }
        if skipping {
            if line.starts_with("  }") {
                skipping = false;
            }
            continue;
        }
        out.push_str(line);
        out.push('\n');
    }
    out
}

/// Compares the `--json` report of `args` with `golden/<name>.json`,
/// ignoring only `wall_clock`. Set `GENRISK_UPDATE_GOLDEN=1` to rewrite.
pub fn check_golden(name: &str, args: &[&str]) -> Result<(), String> {
    let out = genrisk(args);
    if !out.status.success() {
        return Err(format!("{name}: exit {:?}: {}", out.status.code(), stderr(&out)));
    }
    let path = fixtures().join("golden").join(format!("{name}.json"));
    let got = stdout(&out);
    if std::env::var_os("GENRISK_UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &got).unwrap();
    }
    let want = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let (got, want) = (without_wall_clock(&got), without_wall_clock(&want));
    if got == want {
        Ok(())
    } else {
        Err(format!(
            "{name}: report differs from golden\n--- got\n{got}\n--- want\n{want}"
        ))
    }
}
