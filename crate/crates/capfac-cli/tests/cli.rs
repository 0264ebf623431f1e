//! End-to-end checks of the binary: exit codes, exact output bytes, and
//! determinism across reruns.

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};
use std::sync::atomic::{AtomicU64, Ordering};

static COUNTER: AtomicU64 = AtomicU64::new(0);

fn fixture(name: &str, contents: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "capfac-cli-test-{}-{}",
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    fs::write(&path, contents).unwrap();
    path
}

fn capfac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capfac"))
        .args(args)
        .env_remove("CAPFAC_BUDGET")
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8(output.stdout.clone()).unwrap()
}

#[test]
fn optimal_emits_the_exact_contract_json() {
    let inst = fixture("inst.json", r#"{"locations":["0","0","1"],"k":2}"#);
    let out = capfac(&["optimal", "-i", inst.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out), "{\"s\":\"0\",\"welfare\":\"2\"}\n");
}

#[test]
fn equilibrium_reports_served_set_and_utilities() {
    let inst = fixture("inst.json", r#"{"locations":["0.2","0.4","0.9"],"k":2}"#);
    let out = capfac(&["equilibrium", "-i", inst.to_str().unwrap(), "-s", "7/20"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        stdout(&out),
        "{\"served\":[1,2],\"utilities\":[\"17/20\",\"19/20\",\"0\"]}\n"
    );
}

#[test]
fn run_mechanism_evaluates_reports() {
    let inst = fixture("inst.json", r#"{"locations":["0.1","0.5","0.9"],"k":2}"#);
    let mech = fixture("median.json", r#"{"variant":"median"}"#);
    let out = capfac(&[
        "run-mechanism",
        "-m",
        mech.to_str().unwrap(),
        "-i",
        inst.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out), "{\"s\":\"1/2\"}\n");
}

#[test]
fn failing_audit_exits_2_with_the_witness() {
    let mech = fixture("snap.json", r#"{"variant":"snap_dictator","agent":1}"#);
    let out = capfac(&[
        "audit-dic",
        "-m",
        mech.to_str().unwrap(),
        "-n",
        "4",
        "-k",
        "2",
        "-q",
        "8",
        "--budget",
        "200000000",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let text = stdout(&out);
    assert!(text.contains("\"passed\":false"));
    assert!(text.contains("\"true_location\":\"3/8\""));
    assert!(text.contains("\"deviating_utility\":\"5/8\""));
}

#[test]
fn budget_env_var_is_honored() {
    let mech = fixture("snap.json", r#"{"variant":"snap_dictator","agent":1}"#);
    let args = [
        "audit-dic",
        "-m",
        mech.to_str().unwrap(),
        "-n",
        "4",
        "-k",
        "2",
        "-q",
        "8",
    ];
    // Default budget is too small for this scan.
    let denied = capfac(&args);
    assert_eq!(denied.status.code(), Some(1));

    let allowed = Command::new(env!("CARGO_BIN_EXE_capfac"))
        .args(args)
        .env("CAPFAC_BUDGET", "200000000")
        .output()
        .unwrap();
    assert_eq!(allowed.status.code(), Some(2));
}

#[test]
fn passing_audit_exits_0() {
    let mech = fixture("median.json", r#"{"variant":"median"}"#);
    let out = capfac(&[
        "audit-dic",
        "-m",
        mech.to_str().unwrap(),
        "-n",
        "3",
        "-k",
        "2",
        "-q",
        "6",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("\"passed\":true"));
}

#[test]
fn uncompromising_audit_distinguishes_gmms() {
    let median = fixture("median.json", r#"{"variant":"median"}"#);
    let out = capfac(&[
        "audit-uncompromising",
        "-m",
        median.to_str().unwrap(),
        "-n",
        "3",
        "-q",
        "6",
    ]);
    assert_eq!(out.status.code(), Some(0));

    let snap = fixture("snap.json", r#"{"variant":"snap_dictator","agent":1}"#);
    let out = capfac(&[
        "audit-uncompromising",
        "-m",
        snap.to_str().unwrap(),
        "-n",
        "3",
        "-q",
        "8",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ratio_curve_holds_the_closed_form_peak() {
    let out = capfac(&["ratio-curve", "-n", "100"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "k,lower_bound,upper_bound,empirical,witness_profile"
    );
    let k50 = text.lines().nth(50).unwrap();
    assert!(k50.starts_with("50,100/51,100/51,"));
    assert_eq!(text.lines().count(), 101);
    assert!(text.ends_with('\n'));
}

#[test]
fn theorem41_confirms_the_manipulation() {
    let out = capfac(&["theorem41", "-n", "4", "-k", "2", "--eps", "1/100"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("\"truthful_utility\":\"0\""));
    assert!(text.contains("\"deviating_utility\":\"99/100\""));
    assert!(text.contains("\"confirmed\":true"));
    // Trivial capacities are rejected.
    let err = capfac(&["theorem41", "-n", "4", "-k", "1"]);
    assert_eq!(err.status.code(), Some(1));
}

#[test]
fn theorem43_pins_the_median_output() {
    let mech = fixture("median.json", r#"{"variant":"median"}"#);
    let out = capfac(&[
        "theorem43",
        "-m",
        mech.to_str().unwrap(),
        "-n",
        "5",
        "-k",
        "2",
        "--eps",
        "1/50",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("\"pinned\":true"));
    assert!(text.contains("\"ratio\":\"4/3\""));
    assert!(text.contains("\"lower_bound\":\"4/3\""));
}

#[test]
fn impossibility_demo_small_case_confirms() {
    let out = capfac(&["impossibility-demo", "-n", "2", "-k", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("\"dic_passing_anonymous\":0"));
    assert!(text.contains("\"verified\":true"));
}

#[test]
fn gmm_mechanism_file_round_trips_through_audit() {
    let mech = fixture(
        "gmm.json",
        r#"{"variant":"gmm","n":3,"a":{"":"1","1":"1","2":"1","3":"1","12":"0","13":"0","23":"0","123":"0"}}"#,
    );
    let out = capfac(&[
        "audit-dic",
        "-m",
        mech.to_str().unwrap(),
        "-n",
        "3",
        "-k",
        "2",
        "-q",
        "4",
    ]);
    assert_eq!(out.status.code(), Some(0), "median encoding is DIC");
}

#[test]
fn output_file_and_determinism() {
    let inst = fixture("inst.json", r#"{"locations":["1/4","0.375","1"],"k":2}"#);
    let target = inst.with_file_name("report.json");
    let mech = fixture("median.json", r#"{"variant":"median"}"#);
    let args = [
        "ratio",
        "-i",
        inst.to_str().unwrap(),
        "-m",
        mech.to_str().unwrap(),
        "-o",
        target.to_str().unwrap(),
    ];
    assert_eq!(capfac(&args).status.code(), Some(0));
    let first = fs::read(&target).unwrap();
    assert_eq!(capfac(&args).status.code(), Some(0));
    let second = fs::read(&target).unwrap();
    assert_eq!(first, second, "reruns are byte-identical");
    assert!(String::from_utf8(first).unwrap().contains("\"ratio\":"));
}

#[test]
fn thread_cap_does_not_change_output() {
    let mech = fixture("snap.json", r#"{"variant":"snap_dictator","agent":1}"#);
    let base_args = [
        "audit-dic",
        "-m",
        mech.to_str().unwrap(),
        "-n",
        "3",
        "-k",
        "2",
        "-q",
        "8",
    ];
    let default_pool = capfac(&base_args);
    let mut pinned_args = vec!["--threads", "1"];
    pinned_args.extend_from_slice(&base_args);
    let pinned = capfac(&pinned_args);
    assert_eq!(default_pool.status.code(), pinned.status.code());
    assert_eq!(stdout(&default_pool), stdout(&pinned));
}

#[test]
fn usage_and_io_errors_exit_1() {
    let out = capfac(&["optimal", "-i", "/nonexistent/instance.json"]);
    assert_eq!(out.status.code(), Some(1));
    let usage = capfac(&["optimal", "--no-such-flag"]);
    assert_eq!(usage.status.code(), Some(1));
    let nonsense = capfac(&["no-such-command"]);
    assert_eq!(nonsense.status.code(), Some(1));
    let help = capfac(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
}
