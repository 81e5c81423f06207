use std::path::Path;
use std::process::{Command, Output};

use gpslab::config::Config;
use gpslab::policy::PolicyParams;
use gpslab::rollout::parse_trace;
use gpslab::terrain::Terrain;

fn gpslab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpslab"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A run small enough for a test: short horizon, few samples and evals.
const TINY: &str = "\
train_terrains = flat
test_terrains = flat,2
terrain_extent = 4
horizon = 40
hidden = 4
n_gps = 1
guiding_samples = 3
policy_samples = 2
ilqg_iters = 3
supervised_evals = 15
gps_evals = 10
eval_trials = 2
";

fn write_tiny(dir: &Path, extra: &str) -> String {
    let p = dir.join("tiny.cfg");
    std::fs::write(&p, format!("{TINY}{extra}")).unwrap();
    p.to_str().unwrap().to_string()
}

fn train(dir: &Path, cfg: &str, out: &str) -> Output {
    let o = gpslab(&["train", "--config", cfg, "--out", out, "--threads", "2"], dir);
    assert!(o.status.success(), "train failed: {}", stderr(&o));
    o
}

#[test]
fn terrain_round_trips_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.txt", "b.txt"] {
        let o = gpslab(
            &["terrain", "--seed", "1", "--extent", "10", "--out", name],
            dir.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("segments="));
    }
    let a = std::fs::read(dir.path().join("a.txt")).unwrap();
    let b = std::fs::read(dir.path().join("b.txt")).unwrap();
    assert_eq!(a, b);
    let loaded = Terrain::load(&dir.path().join("a.txt")).unwrap();
    assert_eq!(loaded, Terrain::generate(1, 10.0).unwrap());
}

#[test]
fn zero_extent_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = gpslab(&["terrain", "--seed", "1", "--extent", "0"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("extent"));
}

#[test]
fn bad_flags_and_configs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(gpslab(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(
        gpslab(&["terrain", "--extent", "ten"], dir.path()).status.code(),
        Some(1)
    );
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "horizon = 700\nwobble = 3\n").unwrap();
    let o = gpslab(&["train", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("wobble"), "{}", stderr(&o));
    let o = gpslab(&["train", "--config", "missing.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(gpslab(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn demo_writes_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let o = gpslab(
        &["demo", "--terrain", "flat", "--horizon", "120", "--out", "d.csv"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let trace = parse_trace(&std::fs::read_to_string(dir.path().join("d.csv")).unwrap()).unwrap();
    assert_eq!(trace.actions.len(), 120);
    assert_eq!(trace.states.len(), 121);
}

#[test]
fn train_is_reproducible_and_eval_reports_both_sets() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path(), "");
    let o = train(dir.path(), &cfg, "r1");
    assert!(stdout(&o).contains("trained 1 iterations"));
    train(dir.path(), &cfg, "r2");
    // logs agree on everything but wall-clock time
    let strip = |run: &str| -> Vec<String> {
        std::fs::read_to_string(dir.path().join(run).join("train_log.csv"))
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    let (a, b) = (strip("r1"), strip("r2"));
    assert_eq!(a[0], "iter,objective,Z,ess,train_success");
    assert_eq!(a.len(), 3);
    assert_eq!(a, b);
    let p1 = std::fs::read(dir.path().join("r1/policy.txt")).unwrap();
    let p2 = std::fs::read(dir.path().join("r2/policy.txt")).unwrap();
    assert_eq!(p1, p2);
    // the effective config is saved and parses back
    Config::load(&dir.path().join("r1/config.cfg")).unwrap();

    let o = gpslab(
        &[
            "eval",
            "--config",
            &cfg,
            "--checkpoint",
            "r1/policy.txt",
            "--out",
            "ev",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o);
    assert!(line.starts_with("train=") && line.contains(" test="), "{line}");
    let test_csv = std::fs::read_to_string(dir.path().join("ev/test.csv")).unwrap();
    assert_eq!(
        test_csv.lines().next().unwrap(),
        "terrain_id,trial,success,mean_vx,min_height,steps"
    );
    // two test terrains, two trials each
    assert_eq!(test_csv.lines().count(), 5);
    let train_csv = std::fs::read_to_string(dir.path().join("ev/train.csv")).unwrap();
    assert_eq!(train_csv.lines().count(), 3);
}

#[test]
fn no_gps_iterations_keep_the_supervised_policy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path(), "");
    let o = gpslab(
        &["train", "--config", &cfg, "--set", "n_gps=0", "--out", "r0"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let saved = PolicyParams::load(&dir.path().join("r0/policy.txt")).unwrap();
    let mut c = Config::load(Path::new(&cfg)).unwrap();
    c.n_gps = 0;
    let r = gpslab::gps::train(&c, &mut |_: &str| {}).unwrap();
    assert_eq!(saved, r.init_params);
    let log = std::fs::read_to_string(dir.path().join("r0/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);
}

#[test]
fn corrupted_checkpoint_names_the_counts() {
    let dir = tempfile::tempdir().unwrap();
    let arch =
        gpslab::policy::Architecture::new(gpslab::policy::Kind::Shallow, 4, gpslab::policy::Activation::Soft)
            .unwrap();
    let p = PolicyParams::init(arch, 3);
    let mut lines: Vec<String> = p.to_text().lines().map(String::from).collect();
    lines.pop();
    std::fs::write(dir.path().join("bad.txt"), lines.join("\n")).unwrap();
    let o = gpslab(
        &["eval", "--checkpoint", "bad.txt", "--terrains", "flat"],
        dir.path(),
    );
    assert_ne!(o.status.code(), Some(0));
    let err = stderr(&o);
    let n = arch.param_count();
    assert!(
        err.contains(&n.to_string()) && err.contains(&(n - 1).to_string()),
        "{err}"
    );
}

#[test]
fn architecture_mismatch_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path(), "");
    let arch =
        gpslab::policy::Architecture::new(gpslab::policy::Kind::Deep, 4, gpslab::policy::Activation::Soft)
            .unwrap();
    PolicyParams::init(arch, 3)
        .save(&dir.path().join("deep.txt"))
        .unwrap();
    let o = gpslab(
        &["eval", "--config", &cfg, "--checkpoint", "deep.txt"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("deep"), "{}", stderr(&o));
}

#[test]
fn rollout_trace_matches_in_process_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path(), "");
    let arch =
        gpslab::policy::Architecture::new(gpslab::policy::Kind::Shallow, 4, gpslab::policy::Activation::Soft)
            .unwrap();
    let policy = PolicyParams::init(arch, 8);
    policy.save(&dir.path().join("p.txt")).unwrap();
    for name in ["t1.csv", "t2.csv"] {
        let o = gpslab(
            &[
                "rollout",
                "--config",
                &cfg,
                "--checkpoint",
                "p.txt",
                "--terrain",
                "2",
                "--seed",
                "5",
                "--out",
                name,
            ],
            dir.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let t1 = std::fs::read_to_string(dir.path().join("t1.csv")).unwrap();
    assert_eq!(t1, std::fs::read_to_string(dir.path().join("t2.csv")).unwrap());
    let rows = t1.lines().count() - 1;
    assert!(rows <= 41, "{rows} rows");

    // same data path in process
    let c = Config::load(Path::new(&cfg)).unwrap();
    let terrain = Terrain::generate(2, c.terrain_extent).unwrap();
    let model = c.model();
    let traj = gpslab::eval::policy_rollout(&model, &policy, &terrain, 5, c.horizon).unwrap();
    assert_eq!(t1, gpslab::rollout::trace_csv(&traj));
    let trace = parse_trace(&t1).unwrap();
    assert_eq!(trace.states, traj.states);
}
