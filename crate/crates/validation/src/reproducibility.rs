//! Reruns every CLI command with identical inputs and compares outputs.

use std::path::Path;

use dno_lab::app::main_with_args;

use crate::Verdict;

/// Small configurations covering every experiment kind, the sweep and the
/// stationarity command.
const CASES: [(&str, &str); 6] = [
    (
        "run",
        r#"{"name": "dno", "experiment": "dno", "reward": {"name": "example1"}, "optimizer": {"steps": 20}, "seeds": {"count": 4}}"#,
    ),
    (
        "run",
        r#"{"name": "ode_vs_sde", "experiment": "ode_vs_sde", "reward": {"name": "example1"}, "optimizer": {"steps": 20}, "seeds": {"count": 4}}"#,
    ),
    (
        "run",
        r#"{"name": "hacking", "experiment": "reward_hacking", "reward": {"name": "quad_ood"}, "optimizer": {"steps": 20}, "probreg": {"q": 20, "b": 20}, "seeds": {"count": 4}}"#,
    ),
    (
        "run",
        r#"{"name": "estimators", "experiment": "estimators", "reward": {"name": "example1"}, "optimizer": {"steps": 10}, "seeds": {"count": 4}}"#,
    ),
    (
        "sweep",
        r#"{"name": "sweep", "reward": {"name": "quad_ood"}, "optimizer": {"steps": 10}, "probreg": {"q": 10}, "sweep": {"k": [1, 2], "b": [10], "gamma": [1.0]}, "seeds": {"count": 3}}"#,
    ),
    (
        "stationarity",
        r#"{"name": "stationarity", "model": {"kind": "segment"}, "reward": {"name": "line_height"}, "optimizer": {"steps": 20}, "seeds": {"count": 4}}"#,
    ),
];

fn csv_files(dir: &Path) -> std::io::Result<Vec<(String, Vec<u8>)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            out.push((path.file_name().unwrap_or_default().to_string_lossy().into_owned(), std::fs::read(&path)?));
        }
    }
    out.sort();
    Ok(out)
}

/// Runs `args` into `dir` and returns the CSV files written there.
fn run_once(args: &[&str], dir: &Path, jobs: &str) -> Result<Vec<(String, Vec<u8>)>, String> {
    let dir_str = dir.to_str().ok_or("non-UTF-8 temp path")?;
    let mut full = vec!["dno-lab"];
    full.extend_from_slice(args);
    full.extend_from_slice(&["--out", dir_str, "--jobs", jobs]);
    let code = main_with_args(full);
    if code != 0 {
        return Err(format!("`{}` exited with {code}", args.join(" ")));
    }
    let files = csv_files(dir).map_err(|e| e.to_string())?;
    if files.is_empty() {
        return Err(format!("`{}` wrote no CSV", args.join(" ")));
    }
    Ok(files)
}

pub fn c11_reproducibility() -> Verdict {
    let run = || -> Result<(usize, Vec<String>), String> {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut compared = 0;
        let mut differing = Vec::new();
        let mut commands: Vec<(String, Vec<String>)> = Vec::new();
        for (i, (command, config)) in CASES.iter().enumerate() {
            let path = tmp.path().join(format!("config{i}.json"));
            std::fs::write(&path, config).map_err(|e| e.to_string())?;
            let path = path.to_str().ok_or("non-UTF-8 temp path")?.to_string();
            commands.push((format!("{command} #{i}"), vec![command.to_string(), "--config".into(), path]));
        }
        commands.push((
            "pz".into(),
            ["pz", "--n", "4096", "--trials", "5", "--q", "20"].iter().map(|s| s.to_string()).collect(),
        ));
        for (i, (label, args)) in commands.iter().enumerate() {
            let args: Vec<&str> = args.iter().map(String::as_str).collect();
            let a = run_once(&args, &tmp.path().join(format!("a{i}")), "1")?;
            let b = run_once(&args, &tmp.path().join(format!("b{i}")), "2")?;
            compared += a.len();
            if a != b {
                differing.push(label.clone());
            }
        }
        Ok((compared, differing))
    };
    match run() {
        Ok((compared, differing)) => Verdict::new(
            differing.is_empty(),
            format!(
                "{} commands rerun with 1 and 2 worker threads; {compared} CSV files compared, {} differ{}",
                CASES.len() + 1,
                differing.len(),
                if differing.is_empty() { String::new() } else { format!(": {}", differing.join(", ")) }
            ),
        ),
        Err(e) => Verdict::error(e),
    }
}
