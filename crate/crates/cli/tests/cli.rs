use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn climrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_climrl")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Record files without their header line (which carries the wall time).
fn record_bodies(dir: &Path) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            let text = fs::read_to_string(&p).unwrap();
            (p.file_name().unwrap().to_string_lossy().into_owned(), text.lines().skip(1).collect::<Vec<_>>().join("\n"))
        })
        .collect();
    out.sort();
    out
}

const REFERENCE_LISTS: &str = "\
# bias correction
v0-optim-L,TD3,TQC,DPG
v0-optim-L-60k,DDPG,TD3,TQC
v0-homo-64L,DPG,DDPG,TQC
v0-homo-64L-60k,TQC,DDPG,DPG
v1-optim-L,TQC,DDPG,TD3
v1-optim-L-60k,TD3,DDPG,TQC
v1-homo-64L,DDPG,TD3,TQC
v1-homo-64L-60k,DDPG,TD3,TQC
v2-optim-L,TD3,DDPG,TQC
v2-optim-L-60k,TD3,SAC,DDPG
v2-homo-64L,TD3,DDPG,TQC
v2-homo-64L-60k,TD3,SAC,DDPG
# radiative-convective
rce-v0-optim-L,DPG,DDPG,TQC
rce-v0-optim-L-10k,DPG,PPO,TQC
rce-v0-homo-64L,TRPO,PPO,DPG
rce-v0-homo-64L-10k,TRPO,PPO,DPG
";

fn section<'a>(csv: &'a str, title: &str) -> Vec<&'a str> {
    csv.lines().skip_while(|l| *l != title).skip(2).take_while(|l| !l.is_empty()).collect()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&climrl(&["--help"])), 0);
    assert_eq!(code(&climrl(&[])), 1);
    assert_eq!(code(&climrl(&["train", "--no-such-flag"])), 1);
    let o = climrl(&["train", "--experiment", "v9-homo-64L"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("v9-homo-64L"));
    assert_eq!(code(&climrl(&["train", "--experiment", "v0-homo-64L", "--algo", "a2c"])), 1);
    assert_eq!(code(&climrl(&["train", "--experiment", "v0-homo-64L", "--seeds", "3..1"])), 1);
    let o = climrl(&["train", "--experiment", "v0-optim-L", "--algo", "ddpg", "--steps", "200"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("tuned"), "{}", stderr(&o));
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = climrl(&["evaluate", "--records", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no records"), "{}", stderr(&o));

    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = climrl(&["train", "--experiment", "v0-homo-64L", "--algo", "reinforce", "--seeds", "1", "--steps", "200", "--out", blocker.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn rank_reproduces_reference_frequencies() {
    let dir = tempfile::tempdir().unwrap();
    let lists = dir.path().join("lists.csv");
    fs::write(&lists, REFERENCE_LISTS).unwrap();
    let o = climrl(&["rank", "--top-lists", lists.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(
        section(&out, "# SimpleClimateBiasCorrectionEnv top-3"),
        ["1,DDPG,11", "2,TD3,10", "2,TQC,10", "4,DPG,3", "5,SAC,2"]
    );
    assert_eq!(section(&out, "# SimpleClimateBiasCorrectionEnv top-1"), ["1,TD3,6", "2,DDPG,3", "3,TQC,2", "4,DPG,1"]);
    assert_eq!(
        section(&out, "# RadiativeConvectiveModelEnv top-3"),
        ["1,DPG,4", "2,PPO,3", "3,TRPO,2", "3,TQC,2", "5,DDPG,1"]
    );
    assert_eq!(section(&out, "# RadiativeConvectiveModelEnv top-1"), ["1,DPG,2", "1,TRPO,2"]);

    let text = stdout(&climrl(&["rank", "--top-lists", lists.to_str().unwrap()]));
    assert!(text.contains("frequency within top-1"));

    fs::write(&lists, "v0-optim-L,TD3,TD3,DPG\n").unwrap();
    assert_eq!(code(&climrl(&["rank", "--top-lists", lists.to_str().unwrap()])), 1);
}

#[test]
fn train_evaluate_rank_and_export_from_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = climrl(&["train", "--experiment", "v0-homo-64L", "--algo", "ddpg,reinforce", "--seeds", "1,2", "--steps", "800", "--out", out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let exp_dir = dir.path().join("v0-homo-64L");
    let names: Vec<String> = record_bodies(&exp_dir).into_iter().map(|(n, _)| n).collect();
    assert_eq!(names, ["ddpg-seed1.csv", "ddpg-seed2.csv", "reinforce-seed1.csv", "reinforce-seed2.csv"]);

    let o = climrl(&["evaluate", "--records", out, "--format", "csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("v0-homo-64L,")).count(), 2);

    let o = climrl(&["rank", "--records", out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("v0-homo-64L"));

    let curves = dir.path().join("curves.csv");
    let o = climrl(&["export", "curves", "--records", out, "--bucket", "200", "--out", curves.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(curves).unwrap();
    assert!(text.starts_with("experiment_id,algorithm,step,mean,lower,upper,n\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 4);
}

#[test]
fn reruns_write_identical_records() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (dir, workers) in [(&a, "1"), (&b, "2")] {
        let o = climrl(&[
            "train", "--experiment", "v0-homo-64L", "--algo", "td3,ppo", "--seeds", "1..2", "--steps", "600", "--workers", workers, "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let bodies = record_bodies(&a.path().join("v0-homo-64L"));
    assert_eq!(bodies.len(), 4);
    assert_eq!(bodies, record_bodies(&b.path().join("v0-homo-64L")));
}

#[test]
fn tuning_writes_a_fragment_that_enables_optim_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = climrl(&["tune", "--experiment", "v0-optim-L", "--algo", "reinforce,ppo", "--trials", "3", "--steps", "1000", "--out", out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let fragment = dir.path().join("tuned-v0-optim-L.cfg");
    let text = fs::read_to_string(&fragment).unwrap();
    assert!(text.contains("[reinforce]") && text.contains("[ppo]"), "{text}");

    let o = climrl(&[
        "train", "--experiment", "v0-optim-L", "--algo", "reinforce", "--seeds", "1", "--steps", "400", "--config",
        fragment.to_str().unwrap(), "--out", out,
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("v0-optim-L/reinforce-seed1.csv").exists());
}

#[test]
fn config_file_supplies_run_settings() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let out = dir.path().join("records");
    fs::write(
        &cfg,
        format!("experiment = v1-homo-64L\nalgorithms = reinforce\nseeds = 3\nsteps = 400\nout = {}\nenv.T_initial = 318.0\n", out.display()),
    )
    .unwrap();
    let o = climrl(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("v1-homo-64L/reinforce-seed3.csv").exists());

    fs::write(&cfg, "experiment = v1-homo-64L\nenv.no_such_knob = 1\n").unwrap();
    assert_eq!(code(&climrl(&["train", "--config", cfg.to_str().unwrap()])), 1);
}

#[test]
fn profile_export_needs_rce() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&climrl(&["export", "profile", "--experiment", "v0-homo-64L", "--algo", "ddpg", "--out", out])), 1);
    let o = climrl(&["export", "profile", "--experiment", "rce-v0-homo-64L", "--algo", "dpg", "--seeds", "1", "--steps", "1000", "--out", out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("profile-rce-v0-homo-64L-dpg-seed1.csv")).unwrap();
    assert_eq!(text.lines().count(), 18);
    assert!(text.starts_with("pressure_hPa,simulated_K,observed_K,difference_K\n"));
}
