use std::fs;
use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_blowup-rescale");

const HEAT: &str = "equation = heat
p = 5
lambda_inv = 2
alpha = 0.4
amplitude = 1.2
I = 20
tau_ratio = 0.25
K_max = 12
";

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn exit(args: &[&str]) -> i32 {
    Command::new(BIN)
        .args(args)
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

#[test]
fn run_writes_the_bundle_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "heat.conf", HEAT);
    let out = dir.path().join("out");
    let code = exit(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--k-profiles",
        "4,12",
    ]);
    assert_eq!(code, 0);
    assert_eq!(
        header(&out.join("tau_star.csv")),
        "k,n_k,tau_star,xi_minus,xi_plus"
    );
    assert_eq!(header(&out.join("rate.csv")), "t,T_minus_t,sup_norm");
    assert_eq!(header(&out.join("profile_12.csv")), "z,computed,predicted");
    assert_eq!(
        fs::read_to_string(out.join("tau_star.csv"))
            .unwrap()
            .lines()
            .count(),
        14
    );
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("outcome"));
}

#[test]
fn identical_configs_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "heat.conf", HEAT);
    let outs = ["a", "b"].map(|n| dir.path().join(n));
    for out in &outs {
        let code = exit(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--k-profiles",
            "12",
        ]);
        assert_eq!(code, 0);
    }
    for file in ["tau_star.csv", "rate.csv", "profile_12.csv", "summary.txt"] {
        assert_eq!(
            fs::read(outs[0].join(file)).unwrap(),
            fs::read(outs[1].join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn cgl_bundle_carries_phase_columns() {
    let dir = tempfile::tempdir().unwrap();
    let text = HEAT.replace("equation = heat", "equation = cgl\ndelta = 0.2");
    let cfg = write(dir.path(), "cgl.conf", &text);
    let out = dir.path().join("out");
    let code = exit(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--k-profiles",
        "12",
    ]);
    assert_eq!(code, 0);
    assert_eq!(
        header(&out.join("profile_12.csv")),
        "z,computed,predicted,computed_phase,predicted_phase"
    );
}

#[test]
fn exhausted_step_budget_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "capped.conf", &format!("{HEAT}step_cap = 3\n"));
    let out = dir.path().join("out");
    assert_eq!(
        exit(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap()
        ]),
        2
    );
    assert!(fs::read_to_string(out.join("summary.txt"))
        .unwrap()
        .contains("no_blowup"));
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let missing = write(
        dir.path(),
        "missing.conf",
        &HEAT.replace("K_max = 12\n", ""),
    );
    let unknown = write(
        dir.path(),
        "unknown.conf",
        &format!("{HEAT}colour = blue\n"),
    );
    let unstable = write(
        dir.path(),
        "unstable.conf",
        &HEAT.replace("tau_ratio = 0.25", "tau_ratio = 0.75"),
    );
    for cfg in [&missing, &unknown, &unstable] {
        assert_eq!(
            exit(&["run", "--config", cfg.to_str().unwrap(), "--out", out]),
            1,
            "{}",
            cfg.display()
        );
    }
    assert_eq!(
        exit(&["run", "--config", "/nonexistent/heat.conf", "--out", out]),
        1
    );
    assert_eq!(exit(&["frobnicate"]), 1);
}

#[test]
fn missing_key_is_named_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "empty.conf", "");
    let output = Command::new(BIN)
        .args([
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().join("o").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("equation"));
}

#[test]
fn converge_reports_order_and_rejects_tiny_grids() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "heat.conf", HEAT);
    let out = dir.path().join("conv");
    assert_eq!(
        exit(&[
            "converge",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap()
        ]),
        0
    );
    let text = fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "I,I2,I4,t_end,e1,e2,order");
    let order: f64 = text
        .lines()
        .nth(1)
        .unwrap()
        .rsplit(',')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!((1.7..=2.3).contains(&order), "order {order}");
    assert_eq!(
        exit(&[
            "converge",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--base-i",
            "2"
        ]),
        1
    );
}

#[test]
fn beta_sweep_writes_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "heat.conf", HEAT);
    let out = dir.path().join("sweep");
    let code = exit(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--param",
        "beta",
        "--values",
        "0.5,1",
        "--k-profiles",
        "12",
    ]);
    assert_eq!(code, 0);
    let text = fs::read_to_string(out.join("b_sweep.csv")).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "param,xi_plus_K,b_estimate,b_theory"
    );
    assert!(out.join("beta_0.5").join("tau_star.csv").exists());
}
