//! End-to-end checks of the `fhawkes` binary: exit codes, error messages and
//! a few outputs with known values.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn fhawkes(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fhawkes"))
        .args(["--out", out.to_str().unwrap()])
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &TempDir, name: &str, body: &str) -> String {
    let p = dir.path().join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

/// Rows `(omega, i, j, re, im)` of a spectrum.csv.
fn spectrum_rows(dir: &Path) -> Vec<(f64, usize, usize, f64, f64)> {
    let text = std::fs::read_to_string(dir.join("spectrum.csv")).unwrap();
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap(), f[3].parse().unwrap(), f[4].parse().unwrap())
        })
        .collect()
}

#[test]
fn univariate_spectrum_at_zero() {
    let dir = tempfile::tempdir().unwrap();
    // λ = μ / (1 - ν) = 2, f(0) = λ / (1 - ν)^2 = 8
    let cfg = write(
        &dir,
        "s.toml",
        "omegas = [0.0, 1.0]\n[model]\nmu = [1.0]\nnu = [[0.5]]\nkernels = [[{ family = \"exponential\", c = 1.0 }]]\n",
    );
    let out = dir.path().join("out");
    let o = fhawkes(&out, &["spectrum", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = spectrum_rows(&out);
    assert_eq!(rows.len(), 2);
    assert!((rows[0].3 - 8.0).abs() < 1e-12 && rows[0].4 == 0.0, "{:?}", rows[0]);
    // |1 - ν/(1 + iω)|^2 at ω = 1 is 0.625
    assert!((rows[1].3 - 2.0 / 0.625).abs() < 1e-12, "{:?}", rows[1]);
}

#[test]
fn bivariate_spectrum_is_hermitian() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = fhawkes(&out, &["spectrum", "--preset", "FH5", "--points", "9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = spectrum_rows(&out);
    assert_eq!(rows.len(), 9 * 4);
    for w in rows.chunks(4) {
        assert!(w[0].4 == 0.0 && w[3].4 == 0.0, "diagonal must be real: {w:?}");
        assert!(w[0].3 > 0.0 && w[3].3 > 0.0);
        assert!((w[1].3 - w[2].3).abs() <= 1e-12 * w[1].3.abs().max(1.0));
        assert!((w[1].4 + w[2].4).abs() <= 1e-12 * w[1].4.abs().max(1.0));
    }
}

#[test]
fn diagonal_excitation_has_no_cross_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        &dir,
        "s.toml",
        "points = 7\nomega_max = 5.0\n[model]\nmu = [0.5, 1.0]\nnu = [[0.3, 0.0], [0.0, 0.6]]\n\
         kernels = [[{ family = \"exponential\", c = 1.0 }, { family = \"exponential\", c = 1.0 }],\
         [{ family = \"mittag-leffler\", beta = 0.7, c = 2.0 }, { family = \"mittag-leffler\", beta = 0.7, c = 2.0 }]]\n",
    );
    let out = dir.path().join("out");
    let o = fhawkes(&out, &["spectrum", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    for r in spectrum_rows(&out).into_iter().filter(|r| r.1 != r.2) {
        assert!(r.3 == 0.0 && r.4 == 0.0, "{r:?}");
    }
}

#[test]
fn nonstationary_model_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        &dir,
        "s.toml",
        "horizon = 10.0\n[model]\nmu = [1.0]\nnu = [[1.2]]\nkernels = [[{ family = \"exponential\", c = 1.0 }]]\n",
    );
    let o = fhawkes(&dir.path().join("out"), &["simulate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nonstationary"), "{}", stderr(&o));
}

#[test]
fn invalid_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir, "s.toml", "preset = \"FH4\"\nreps = 3\nno_such_key = 1\n");
    let o = fhawkes(&dir.path().join("out"), &["experiment", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = fhawkes(&dir.path().join("out"), &["simulate", "--preset", "FH9", "--horizon", "10"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn malformed_events_exit_with_3_and_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let ev = write(&dir, "e.csv", "time,mark\n0.5,1\n0.7,x\n0.9,1\n");
    let o = fhawkes(
        &dir.path().join("out"),
        &["fit", "--events", &ev, "--horizon", "10", "--family", "univariate-poisson", "--method", "mle"],
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn independence_test_needs_two_components() {
    let dir = tempfile::tempdir().unwrap();
    let ev = write(&dir, "e.csv", "time,mark\n0.5,1\n0.7,1\n0.9,1\n");
    let o = fhawkes(&dir.path().join("out"), &["test-independence", "--events", &ev, "--horizon", "10"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("need D ≥ 2"), "{}", stderr(&o));
}

#[test]
fn poisson_fit_recovers_the_event_rate() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = String::from("time,mark\n");
    let n = 600;
    for k in 0..n {
        // irregular but deterministic times in [0, 1000)
        let t = (k as f64 + 0.5 * ((k * 7919) % 13) as f64 / 13.0) * 1000.0 / n as f64;
        body.push_str(&format!("{t:.9},1\n"));
    }
    let ev = write(&dir, "e.csv", &body);
    let out = dir.path().join("out");
    let o = fhawkes(&out, &["fit", "--events", &ev, "--horizon", "1000", "--family", "univariate-poisson", "--method", "mle"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fit: toml::Value = toml::from_str(&std::fs::read_to_string(out.join("fit.toml")).unwrap()).unwrap();
    let mu = fit["theta_hat"][0].as_float().unwrap();
    assert!((mu - 0.6).abs() < 1e-4, "mu_hat {mu}");
}

#[test]
fn simulate_then_fit_from_sidecar_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let o = fhawkes(&sim, &["--seed", "3", "simulate", "--preset", "FH5", "--horizon", "400"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ev = sim.join("events.csv");
    let out = dir.path().join("indep");
    let o = fhawkes(&out, &["test-independence", "--events", ev.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rep: toml::Value = toml::from_str(&std::fs::read_to_string(out.join("independence.toml")).unwrap()).unwrap();
    let p = rep["p_value"].as_float().unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert_eq!(rep["df"].as_integer(), Some(1));
}
