use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mqlearn::crosscheck::parse_report;
use mqlearn::mqtt::{serve, MutantId};
use tempfile::TempDir;

fn mqlearn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mqlearn"))
        .args(args)
        .output()
        .expect("failed to run mqlearn")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn extract(dir: &TempDir, broker: &str, mapper: &str) -> PathBuf {
    let out = path(dir, &format!("{broker}-{mapper}.model"));
    let res = mqlearn(&["extract", broker, "--mapper", mapper, "--out", s(&out)]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    out
}

/// Report lines without the wall-clock fields.
fn timeless(report: &str) -> Vec<String> {
    report
        .lines()
        .filter(|l| !l.contains("_time_s:") && !l.starts_with("model:"))
        .map(str::to_string)
        .collect()
}

#[test]
fn learn_writes_model_dot_and_report() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "ref.model");
    let res = mqlearn(&[
        "learn",
        "sim:reference",
        "--mapper",
        "simple",
        "--out",
        s(&out),
    ]);
    assert_eq!(res.status.code(), Some(0));
    let report = fs::read_to_string(out.with_extension("report")).unwrap();
    assert_eq!(report, stdout(&res));
    for line in [
        "oracle: random-walk",
        "reset_prob: 0.05",
        "max_steps: 10000",
        "reset_on_ce: true",
        "seed: 1",
        "verified: true",
        "states: 7",
        "exit_status: 0",
    ] {
        assert!(
            report.lines().any(|l| l == line),
            "missing {line:?} in\n{report}"
        );
    }
    for key in [
        "mq_time_s",
        "mq_queries",
        "ct_time_s",
        "ct_queries",
        "eq_queries",
    ] {
        assert!(report.lines().any(|l| l.starts_with(&format!("{key}: "))));
    }
    let dot = fs::read_to_string(out.with_extension("dot")).unwrap();
    assert!(dot.starts_with("digraph"));
    let model = mqlearn::MealyMachine::deserialize(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(model.num_states(), 7);
}

#[test]
fn learning_is_deterministic_apart_from_timing() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str| {
        let out = path(&dir, name);
        let args = [
            "learn",
            "sim:retained-will-bug",
            "--mapper",
            "simple",
            "--seed",
            "9",
            "--max-steps",
            "2000",
            "--out",
            s(&out),
        ];
        let res = mqlearn(&args);
        assert_eq!(res.status.code(), Some(0));
        (fs::read_to_string(&out).unwrap(), timeless(&stdout(&res)))
    };
    assert_eq!(run("one.model"), run("two.model"));
}

#[test]
fn crosscheck_exit_codes() {
    let dir = TempDir::new().unwrap();
    let reference = extract(&dir, "reference", "simple");
    let copy = extract(&dir, "empty-retained-bug", "simple");
    let buggy = extract(&dir, "hbmqtt-bug", "simple");

    assert_eq!(
        mqlearn(&["crosscheck", s(&reference), s(&copy)])
            .status
            .code(),
        Some(0)
    );

    let report = path(&dir, "diffs.txt");
    let res = mqlearn(&["crosscheck", s(&reference), s(&buggy), "--out", s(&report)]);
    assert_eq!(res.status.code(), Some(1));
    let diffs = parse_report(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(parse_report(&stdout(&res)).unwrap(), diffs);
    assert!(diffs.iter().any(|d| d.inputs == ["Connect", "Connect"]));

    let other = extract(&dir, "reference", "two-client-retained-will");
    assert_eq!(
        mqlearn(&["crosscheck", s(&reference), s(&other)])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        mqlearn(&["crosscheck", s(&reference), s(&buggy), "--max-diffs", "0"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn more_allowed_diffs_report_a_superset() {
    let dir = TempDir::new().unwrap();
    let a = extract(&dir, "reference", "two-client-retained-will");
    let b = extract(&dir, "empty-retained-bug", "two-client-retained-will");
    let traces = |k: &str| -> BTreeSet<Vec<String>> {
        let res = mqlearn(&["crosscheck", s(&a), s(&b), "--max-diffs", k]);
        assert_eq!(res.status.code(), Some(1));
        parse_report(&stdout(&res))
            .unwrap()
            .into_iter()
            .map(|d| d.inputs)
            .collect()
    };
    let one = traces("1");
    let two = traces("2");
    assert!(one.is_subset(&two));
    assert!(two.len() > one.len());
}

#[test]
fn filters_hide_matching_diffs() {
    let dir = TempDir::new().unwrap();
    let a = extract(&dir, "reference", "simple");
    let b = extract(&dir, "hbmqtt-bug", "simple");
    let filters = path(&dir, "filters.txt");
    fs::write(&filters, "# known double connect\nConnect Connect\n").unwrap();
    let res = mqlearn(&["crosscheck", s(&a), s(&b), "--filters", s(&filters)]);
    let remaining = parse_report(&stdout(&res)).unwrap();
    assert!(remaining
        .iter()
        .all(|d| !d.inputs.windows(2).any(|w| w == ["Connect", "Connect"])));
    assert_eq!(
        res.status.code(),
        Some(if remaining.is_empty() { 0 } else { 1 })
    );

    fs::write(&filters, "*\n").unwrap();
    let res = mqlearn(&["crosscheck", s(&a), s(&b), "--filters", s(&filters)]);
    assert_eq!(res.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&res.stderr).contains("0 diff(s)"));
}

#[test]
fn replay_classifies_diffs() {
    let dir = TempDir::new().unwrap();
    let a = extract(&dir, "reference", "simple");
    let b = extract(&dir, "hbmqtt-bug", "simple");
    let report = path(&dir, "diffs.txt");
    mqlearn(&["crosscheck", s(&a), s(&b), "--out", s(&report)]);

    let res = mqlearn(&[
        "replay",
        s(&report),
        "sim:reference",
        "sim:hbmqtt-bug",
        "--mapper",
        "simple",
    ]);
    assert_eq!(res.status.code(), Some(0));
    assert!(stdout(&res)
        .lines()
        .filter(|l| l.starts_with("diff #"))
        .all(|l| l.ends_with("CONFIRMED")));

    let res = mqlearn(&[
        "replay",
        s(&report),
        "sim:reference",
        "sim:reference",
        "--mapper",
        "simple",
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stdout(&res).contains("VANISHED"));

    let res = mqlearn(&[
        "replay",
        s(&report),
        "sim:hbmqtt-bug",
        "sim:reference",
        "--mapper",
        "simple",
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stdout(&res).contains("SPURIOUS_A"));
}

#[test]
fn replay_against_served_broker() {
    let dir = TempDir::new().unwrap();
    let a = extract(&dir, "reference", "simple");
    let b = extract(&dir, "hbmqtt-bug", "simple");
    let report = path(&dir, "diffs.txt");
    mqlearn(&["crosscheck", s(&a), s(&b), "--out", s(&report)]);
    let server = serve(MutantId::IgnoreSecondConnect, "127.0.0.1:0").unwrap();
    let target = format!("tcp://{}", server.local_addr());
    let res = mqlearn(&[
        "replay",
        s(&report),
        "sim:reference",
        &target,
        "--mapper",
        "simple",
        "--timeout-ms",
        "20",
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", stdout(&res));
}

#[test]
fn unreachable_target_is_a_transport_error() {
    let addr = {
        let server = serve(MutantId::Reference, "127.0.0.1:0").unwrap();
        server.local_addr()
    };
    let dir = TempDir::new().unwrap();
    let target = format!("tcp://{addr}");
    let res = mqlearn(&[
        "learn",
        &target,
        "--mapper",
        "simple",
        "--out",
        s(&path(&dir, "m.model")),
    ]);
    assert_eq!(res.status.code(), Some(3));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "m.model");
    for args in [
        vec![
            "extract",
            "no-such-broker",
            "--mapper",
            "simple",
            "--out",
            s(&out),
        ],
        vec![
            "extract",
            "reference",
            "--mapper",
            "no-such-mapper",
            "--out",
            s(&out),
        ],
        vec![
            "learn",
            "sim:no-such-broker",
            "--mapper",
            "simple",
            "--out",
            s(&out),
        ],
        vec!["learn", "ftp://x", "--mapper", "simple", "--out", s(&out)],
        vec![
            "learn",
            "sim:reference",
            "--mapper",
            "simple",
            "--reset-prob",
            "1.5",
            "--out",
            s(&out),
        ],
        vec!["crosscheck", "/nonexistent/a", "/nonexistent/b"],
        vec!["frobnicate"],
    ] {
        assert_eq!(mqlearn(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn extracted_two_client_model_shows_will_redelivery() {
    let dir = TempDir::new().unwrap();
    let reference = extract(&dir, "reference", "two-client-retained-will");
    let model =
        mqlearn::MealyMachine::deserialize(&fs::read_to_string(reference).unwrap()).unwrap();
    let word: Vec<String> = [
        "Connect1",
        "ConnectWill2",
        "TcpClose2",
        "Subscribe1",
        "Subscribe1",
    ]
    .map(String::from)
    .to_vec();
    assert_eq!(
        model.run(&word).unwrap(),
        [
            "C_Ack | Empty",
            "Empty | C_Ack",
            "Empty | Empty",
            "Pub(c2_will,bye)__S_Ack | Empty",
            "Pub(c2_will,bye)__S_Ack | Empty",
        ]
    );
}
