use std::fs;
use std::io::Write;
use std::process::{Command, Output, Stdio};

use ers::gaussian::GaussianErs;
use ers::poisson2d::PoissonErs2D;
use ers::randomness::{MasterSeed, Mode};
use ers::universe::{CoeffRef, HaarIndex, RangeD, Universe};

const GOLDEN_STREAM: &str = include_str!("../../core/fixtures/golden_stream.txt");
const GOLDEN_ESTIMATES: &str = include_str!("../../core/fixtures/golden_estimates.txt");

fn ers(args: &[&str]) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ers"));
    c.args(args).env_remove("ERS_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    ers(args).output().unwrap()
}

fn run_stdin(args: &[&str], input: &str) -> Output {
    let mut child = ers(args).stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::piped()).spawn().unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Values from `--format csv` query output, header skipped.
fn csv_values(o: &Output) -> Vec<f64> {
    assert!(o.status.success(), "{}", stderr(o));
    stdout(o).lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect()
}

#[test]
fn full_range_is_four_times_root_coefficient() {
    let o = run(&[
        "--dist",
        "gaussian",
        "--d",
        "1",
        "--log2-delta",
        "4",
        "--seed",
        "01",
        "--format",
        "csv",
        "query",
        "0:16",
    ]);
    let v = csv_values(&o);
    let g = GaussianErs::new(Universe::new(1, 4).unwrap(), Mode::default(), MasterSeed::from_u64(1)).unwrap();
    let root = g.coefficient(&CoeffRef::new(vec![HaarIndex { scale: -1, location: 0 }])).unwrap();
    assert_eq!(v, vec![4.0 * root]);
}

#[test]
fn full_range_matches_library_and_halves_add_up() {
    let o = run(&[
        "--d",
        "2",
        "--log2-delta",
        "5",
        "--seed",
        "abc",
        "--format",
        "csv",
        "query",
        "0:32,0:32",
        "0:32,0:13",
        "0:32,13:32",
    ]);
    let v = csv_values(&o);
    let u = Universe::new(2, 5).unwrap();
    let g = GaussianErs::new(u, Mode::default(), "abc".parse::<MasterSeed>().unwrap()).unwrap();
    assert_eq!(v[0], g.range_sum(&RangeD::full(&u)).unwrap());
    assert!((v[0] - v[1] - v[2]).abs() <= 1e-10 * v[0].abs().max(1.0));
}

#[test]
fn stdin_ranges_skip_comments_and_blanks() {
    let o = run_stdin(&["--format", "csv", "query"], "# header\n\n0:16\n 0:8 \n");
    assert_eq!(csv_values(&o).len(), 2);
}

#[test]
fn poisson_2d_matches_materialized_grid() {
    let o = run(&[
        "--dist",
        "poisson",
        "--d",
        "2",
        "--log2-delta",
        "3",
        "--lambda",
        "2",
        "--format",
        "csv",
        "query",
        "1:6,2:7",
        "0:8,0:8",
    ]);
    let v = csv_values(&o);
    let mut p = PoissonErs2D::new(3, 2.0, &MasterSeed::from_u64(0x5eed)).unwrap();
    let grid = p.materialize(64).unwrap();
    let sum = |a: std::ops::Range<usize>, b: std::ops::Range<usize>| -> u64 {
        a.flat_map(|i| b.clone().map(move |j| (i, j))).map(|(i, j)| grid[i * 8 + j]).sum()
    };
    assert_eq!(v, vec![sum(1..6, 2..7) as f64, sum(0..8, 0..8) as f64]);
}

#[test]
fn one_dimensional_non_gaussian_distributions_answer() {
    for dist in ["poisson", "cauchy", "rademacher"] {
        let o = run(&["--dist", dist, "--format", "jsonl", "query", "0:16", "5:6"]);
        assert!(o.status.success(), "{dist}: {}", stderr(&o));
        assert_eq!(stdout(&o).lines().count(), 2);
    }
}

#[test]
fn unsupported_combinations_exit_2() {
    for args in [
        &["--dist", "cauchy", "--d", "2", "query", "0:2,0:2"][..],
        &["--dist", "rademacher", "--d", "3", "query", "0:2,0:2,0:2"],
        &["--dist", "poisson", "--d", "3", "query", "0:2,0:2,0:2"],
        &["--dist", "poisson", "--mode", "proxy", "query", "0:2"],
        &["--mode", "proxy", "--k", "4", "query", "0:2"],
        &["--lambda", "3", "query", "0:2"],
        &["--dist", "cauchy", "sketch"],
        &["--mode", "proxy", "sketch"],
        &["--k", "6", "sketch"],
    ] {
        let o = run(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn bad_ranges_exit_2() {
    for r in ["0:17", "3:3", "nonsense", "0:4,0:4"] {
        let o = run(&["query", r]);
        assert_eq!(o.status.code(), Some(2), "{r}");
    }
}

#[test]
fn seed_env_is_used_and_flag_overrides_it() {
    let base = stdout(&run(&["--seed", "42", "query", "0:16"]));
    let env = stdout(&ers(&["query", "0:16"]).env("ERS_SEED", "42").output().unwrap());
    let other = stdout(&ers(&["--seed", "43", "query", "0:16"]).env("ERS_SEED", "42").output().unwrap());
    assert_eq!(base, env);
    assert_ne!(base, other);
}

#[test]
fn config_goes_to_stderr() {
    let o = run(&["--seed", "7", "query", "0:16"]);
    let err = stderr(&o);
    assert!(err.starts_with("# ers query ") && err.contains("seed=") && err.contains("mode=kwise(k=4)"), "{err}");
    assert!(!stdout(&o).contains('#'));
}

#[test]
fn bench_reports_counts_within_bound() {
    let o = run(&["--d", "2", "--log2-delta", "6", "--format", "csv", "bench", "--queries", "20"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(
        lines.next().unwrap(),
        "log2_delta,delta,d,queries,mean_ns_per_query,mean_hash_evals,max_hash_evals,bound"
    );
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert!(r[6].parse::<u64>().unwrap() <= r[7].parse::<u64>().unwrap());
    }
    assert!(stderr(&o).contains("# fit:"));
}

#[test]
fn sketch_reproduces_golden_fixture() {
    let o = run_stdin(&["--seed", "5eed", "--d", "2", "--log2-delta", "4", "sketch"], GOLDEN_STREAM);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), GOLDEN_ESTIMATES);
}

#[test]
fn sketch_empty_stream_prints_nothing() {
    let o = run_stdin(&["sketch"], "");
    assert!(o.status.success());
    assert!(stdout(&o).is_empty());
}

#[test]
fn sketch_save_then_load_continues_the_stream() {
    let dir = tempfile::tempdir().unwrap();
    let (head, tail) = GOLDEN_STREAM.split_at(GOLDEN_STREAM.len() / 2);
    let cut = head.rfind('\n').unwrap() + 1;
    let (head, tail) = (&GOLDEN_STREAM[..cut], format!("{}{tail}", &head[cut..]));
    let state = dir.path().join("state.bin");
    let state_s = state.to_str().unwrap();
    let a = run_stdin(&["--seed", "5eed", "--d", "2", "sketch", "--save", state_s], head);
    let b = run_stdin(&["sketch", "--load", state_s], &tail);
    assert!(a.status.success() && b.status.success(), "{}", stderr(&b));
    assert_eq!(format!("{}{}", stdout(&a), stdout(&b)), GOLDEN_ESTIMATES);

    let clash = run_stdin(&["--d", "3", "sketch", "--load", state_s], "");
    assert_eq!(clash.status.code(), Some(2));
}

#[test]
fn sketch_file_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.bin");
    let o = run(&["sketch", "--load", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));

    let junk = dir.path().join("junk.bin");
    fs::write(&junk, b"not a sketch at all").unwrap();
    let o = run(&["sketch", "--load", junk.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn sketch_malformed_line_reports_line_number() {
    let o = run_stdin(&["--d", "2", "sketch"], "P 1 2 3\n# fine\nQ 0 0 4\n");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn verify_runs_selected_criteria() {
    let o = run(&["verify", "--criterion", "3", "--criterion", "6"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("criterion 3 (") && out.contains("criterion 6 ("));
    assert_eq!(run(&["verify", "--criterion", "42"]).status.code(), Some(2));
}
