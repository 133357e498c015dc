use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lowrank-td"))
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn field<'a>(text: &'a str, key: &str) -> &'a str {
    text.split_whitespace()
        .find_map(|tok| tok.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no `{key}` in {text}"))
}

#[test]
fn generate_prints_summary_and_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["generate"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(field(&text, "d"), "200");
    assert_eq!(field(&text, "N"), "40");
    assert_eq!(field(&text, "r"), "8");
    let residual: f64 = field(&text, "lemma1_residual").parse().unwrap();
    assert!(residual <= 1e-8);
    assert!(dir.path().join("mdp.txt").exists());
}

#[test]
fn rank_above_tasks_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["generate", "--tasks", "5", "--rank", "7"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("rank 7") && err.contains("[1, 5]"), "{err}");
    assert!(!dir.path().join("mdp.txt").exists());
}

#[test]
fn snapshot_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["generate", "--states", "40", "--tasks", "6", "--rank", "2", "--seed", "17"];
    assert!(run(&args, a.path()).status.success());
    assert!(run(&args, b.path()).status.success());
    let x = std::fs::read(a.path().join("mdp.txt")).unwrap();
    let y = std::fs::read(b.path().join("mdp.txt")).unwrap();
    assert_eq!(x, y);

    let snapshot = lowrank_td::env::read_snapshot(x.as_slice()).unwrap();
    let fresh = lowrank_td::generate_mdp(40, 6, 2, 0.95, 17).unwrap();
    assert_eq!(snapshot.transition(), fresh.transition());
    assert_eq!(snapshot.expected_reward(), fresh.expected_reward());
}

#[test]
fn short_run_csv_layout_and_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["run", "--states", "30", "--tasks", "6", "--rank", "2", "--trials", "1", "--iters", "3", "--schedule", "simple"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 1 + 4 * 3);
    assert_eq!(lines[0], "iteration,algorithm,mse,misalignment,noise_norm_sq,alpha");
    for line in &lines[1..] {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 6);
        let t: u64 = cols[0].parse().unwrap();
        let alpha: f64 = cols[5].parse().unwrap();
        assert_eq!(alpha, 1.0 / (t as f64 + 1.0));
        for c in &cols[2..] {
            assert!(c.parse::<f64>().unwrap().is_finite());
        }
    }
    for svg in ["mse.svg", "misalignment.svg"] {
        let text = std::fs::read_to_string(dir.path().join(svg)).unwrap();
        assert_eq!(text.matches("<polyline").count(), 3);
        for label in ["tsvd", "td", "feature-td"] {
            assert!(text.contains(&format!(">{label}<")));
        }
    }
}

#[test]
fn sweep_sorts_ranks_and_matches_at_full_rank() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["sweep", "--states", "20", "--tasks", "6", "--iters", "30", "--trials", "2", "--ranks", "6,2,4"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("rank_sweep.csv")).unwrap();
    let rows: Vec<(usize, f64)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let (r, g) = l.split_once(',').unwrap();
            (r.parse().unwrap(), g.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![2, 4, 6]);
    assert_eq!(rows[2].1, 0.0);
    assert!(rows[0].1 > 0.0);
}

#[test]
fn verify_reports_c1() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["verify", "--states", "20", "--tasks", "5", "--rank", "2", "--iters", "50", "--gamma", "0"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let text = stdout(&o);
    let c1: f64 = text.lines().find_map(|l| l.strip_prefix("c1=")).unwrap().parse().unwrap();
    assert_eq!(c1, 16.0 * 25.0 * 20.0);
    assert!(text.contains("lemma2_violations="));
    assert!(stderr(&o).contains("theory schedule"));
    let saved = std::fs::read_to_string(dir.path().join("bounds.txt")).unwrap();
    assert_eq!(saved, text);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "# small\nstates = 25\ntasks = 4\nrank = 1\niters = 2\ntrials = 1\nalgos = tsvd\n").unwrap();
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--iters", "4"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 5);

    std::fs::write(&cfg, "bogus = 1\n").unwrap();
    let o = run(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bogus"));
}

#[test]
fn divergence_writes_partial_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("div.conf");
    std::fs::write(&cfg, "divergence_factor = 1e-3\n").unwrap();
    let o = run(
        &["run", "--config", cfg.to_str().unwrap(), "--states", "20", "--tasks", "4", "--rank", "1", "--trials", "2", "--iters", "10"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    let csv = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    let last = csv.lines().last().unwrap();
    assert!(last.starts_with("# aborted: algorithm="), "{last}");
    assert!(last.contains("iteration=1"));
    assert_eq!(csv.lines().count(), 1 + 3 + 1);
}
