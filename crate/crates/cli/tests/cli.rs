use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use parallab::fitting::evaluate_decay;
use parallab::tracegen::{load_campaign, save_campaign, ExternalMetadata};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cpa-parallab"));
    c.env_remove("CPA_PARALLAB_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, json: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, json).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, json: &str) -> PathBuf {
    let cfg = write_config(dir, json);
    let out = dir.join("out");
    let o = run(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    out.join("campaign.cpat")
}

#[test]
fn simulate_writes_loadable_campaign_and_echoes_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"array": {"n_pe": 1}, "n_runs": 10, "n_traces": 100}"#);
    let out = dir.path().join("out");
    let o = run(&["simulate", "--config", s(&cfg), "--out", s(&out), "--seed", "42"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("10 runs x 100 traces x 8 samples"), "{text}");
    assert!(text.contains("seed=42"), "{text}");
    let c = load_campaign(&out.join("campaign.cpat")).unwrap();
    assert_eq!((c.n_runs(), c.n_traces, c.master_seed), (10, 100, 42));
    assert!(out.join("campaign.cpat.json").exists());
}

#[test]
fn simulate_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let json = r#"{"array": {"n_pe": 2}, "n_runs": 3, "n_traces": 50, "seed": 7}"#;
    let pa = simulate(a.path(), json);
    let pb = simulate(b.path(), json);
    assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
}

#[test]
fn invalid_fields_are_listed_individually() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"array": {"n_pe": 0, "weight_bits": 40}, "n_runs": 1}"#);
    let o = run(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("- invalid parameter `n_pe`"), "{err}");
    assert!(err.contains("- invalid parameter `weight_bits`"), "{err}");
}

#[test]
fn existing_output_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let json = r#"{"n_runs": 1, "n_traces": 10}"#;
    simulate(dir.path(), json);
    let cfg = dir.path().join("config.json");
    let out = dir.path().join("out");
    let o = run(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--force"));
    let o = run(&["simulate", "--config", s(&cfg), "--out", s(&out), "--force"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn locked_output_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(out.join(".cpa-parallab.lock"), "1").unwrap();
    let cfg = write_config(dir.path(), r#"{"n_runs": 1, "n_traces": 10}"#);
    let o = run(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("in use"), "{}", stderr(&o));
}

#[test]
fn full_two_weight_attack_recovers_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let path = simulate(dir.path(), r#"{"array": {"n_pe": 1}, "n_runs": 1, "n_traces": 600, "seed": 3}"#);
    let truth = load_campaign(&path).unwrap().runs[0].weights.clone().unwrap();
    let out = dir.path().join("attack");
    let o = run(&["attack", s(&path), "--tau", "1", "--mode", "full", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let want = format!("target ({} {}) recovered", truth.get(0, 0), truth.get(0, 1));
    assert!(text.contains("candidates=65536"), "{text}");
    assert!(text.contains(&want), "{text}");

    let table = std::fs::read_to_string(out.join("attack_run0_tau1.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("hypothesis,weights,abs_rho,is_correct,is_alias"));
    let correct: Vec<&str> = lines.filter(|l| l.ends_with(",true,false")).collect();
    assert_eq!(correct.len(), 1);
    let fields: Vec<&str> = correct[0].split(',').collect();
    assert_eq!(fields[1], format!("{} {}", truth.get(0, 0), truth.get(0, 1)));
    assert!((fields[2].parse::<f64>().unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn first_step_argmax_holds_the_true_weight() {
    let dir = tempfile::tempdir().unwrap();
    let path = simulate(dir.path(), r#"{"array": {"n_pe": 1}, "n_runs": 2, "n_traces": 300, "seed": 5}"#);
    let c = load_campaign(&path).unwrap();
    let w = c.runs[1].weights.as_ref().unwrap().get(0, 0);
    let out = dir.path().join("attack");
    let o = run(&["attack", s(&path), "--tau", "0", "--run", "1", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    if w != 0 {
        assert!(text.contains(&format!("argmax=[({w})")), "{text}");
        assert!(text.contains("recovered"), "{text}");
    }
}

#[test]
fn oversized_space_suggests_known_prefix_mode() {
    let dir = tempfile::tempdir().unwrap();
    let path = simulate(dir.path(), r#"{"n_runs": 1, "n_traces": 20}"#);
    let o = run(&["attack", s(&path), "--tau", "3", "--mode", "full", "--out", s(&dir.path().join("a"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("known-prefix"), "{}", stderr(&o));
}

#[test]
fn imported_traces_without_inputs_are_unusable() {
    let dir = tempfile::tempdir().unwrap();
    let path = simulate(dir.path(), r#"{"n_runs": 1, "n_traces": 20}"#);
    let meta = dir.path().join("meta.json");
    std::fs::write(&meta, r#"{"n_traces": 20, "n_tau": 8}"#).unwrap();
    let o = run(&["attack", s(&path), "--meta", s(&meta), "--tau", "0", "--out", s(&dir.path().join("a"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unusable for CPA"), "{}", stderr(&o));
}

#[test]
fn import_then_attack_with_known_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let path = simulate(dir.path(), r#"{"array": {"n_pe": 2}, "n_runs": 1, "n_traces": 400, "seed": 11}"#);
    let c = load_campaign(&path).unwrap();
    let run0 = &c.runs[0];
    let w = run0.weights.clone().unwrap();
    // Strip the weights as a measurement would.
    let mut stripped = c.clone();
    stripped.runs[0].weights = None;
    let measured = dir.path().join("measured.cpat");
    save_campaign(&stripped, &measured).unwrap();
    let meta = dir.path().join("measured.meta.json");
    std::fs::write(&meta, serde_json::to_vec(&ExternalMetadata::for_run(run0, 2)).unwrap()).unwrap();

    let out = dir.path().join("imp");
    let o = run(&["import", s(&measured), "--meta", s(&meta), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("weights unknown"));

    let imported = out.join("imported.cpat");
    let o = run(&["attack", s(&imported), "--tau", "2", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2), "prefix is required when weights are unknown");
    let prefix = format!("{},{}", w.get(0, 0), w.get(0, 1));
    let o = run(&["attack", s(&imported), "--tau", "2", "--prefix", &prefix, "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("best correct: unknown"), "{text}");
    assert!(text.contains(&format!("argmax=[({} {} {})", w.get(0, 0), w.get(0, 1), w.get(0, 2))), "{text}");
}

#[test]
fn fit_recovers_reference_curve() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("c.csv");
    let mut text = String::from("n_pe,rho\n");
    for n in 1..=32 {
        text.push_str(&format!("{n},{}\n", evaluate_decay(0.369, 0.637, 0.534, n as f64)));
    }
    std::fs::write(&csv, text).unwrap();
    let o = run(&["fit", s(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for (k, want) in [("a", 0.369), ("b", 0.637), ("c", 0.534)] {
        let got = v[k].as_f64().unwrap();
        assert!((got - want).abs() < 1e-6, "{k}: {got}");
    }
}

#[test]
fn fit_reports_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("c.csv");
    std::fs::write(&csv, "n_pe,rho\n1,0.9\n2,0.8\n4,0.7\n").unwrap();
    let o = run(&["fit", s(&csv)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("at least 4 points"), "{}", stderr(&o));

    std::fs::write(&csv, "n_pe,rho\n").unwrap();
    let o = run(&["fit", s(&csv)]);
    assert!(stderr(&o).contains("no data rows"), "{}", stderr(&o));

    std::fs::write(&csv, "n_pe,rho\n1,0.9\n2,0.8\nthree,0.7\n4,0.6\n").unwrap();
    let o = run(&["fit", s(&csv)]);
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
}

#[test]
fn crossing_from_curve_file() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("curve.csv");
    std::fs::write(&csv, "tau,n_pe,rho,best_incorrect\n0,1,0.9,0.3\n0,2,0.5,0.3\n0,4,0.2,0.3\n").unwrap();
    let out = dir.path().join("out");
    let o = run(&["crossing", "--curve", s(&csv), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("tau=0 crossing at n_pe=4"), "{}", stdout(&o));
    assert_eq!(
        std::fs::read_to_string(out.join("crossing.csv")).unwrap(),
        "tau,n_pe_star,half_width\n0,4,0\n"
    );
}

#[test]
fn snr_of_saved_campaign() {
    let dir = tempfile::tempdir().unwrap();
    let path = simulate(dir.path(), r#"{"array": {"n_pe": 4}, "n_runs": 3, "n_traces": 200}"#);
    let out = dir.path().join("snr");
    let o = run(&["snr", "--campaign", s(&path), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(out.join("snr.csv")).unwrap();
    assert!(table.starts_with("tau,n_pe,snr,n_runs,n_infinite\n0,4,"), "{table}");
    assert_eq!(table.lines().count(), 9);
}

const SMALL: &str = r#"{"n_runs": 4, "n_traces": 150, "n_pes": [1, 2, 3, 4, 5, 6], "seed": 9}"#;

fn reproduce(dir: &Path, figure: &str, threads: &str) -> Output {
    let cfg = write_config(dir, SMALL);
    bin()
        .args(["reproduce", figure, "--config", s(&cfg), "--out", s(&dir.join("out"))])
        .env("CPA_PARALLAB_THREADS", threads)
        .output()
        .unwrap()
}

#[test]
fn reproduction_is_byte_identical_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let oa = reproduce(a.path(), "appendixB", "1");
    let ob = reproduce(b.path(), "appendixB", "3");
    // Tiny campaigns cannot meet the tolerances; the report says so.
    assert_eq!(oa.status.code(), Some(1), "{}", stderr(&oa));
    assert_eq!(stdout(&oa).replace(s(a.path()), ""), stdout(&ob).replace(s(b.path()), ""));
    let files = ["curve_tau0.csv", "curve_tau7.csv", "fits.csv", "report.txt"];
    for f in files {
        let pa = a.path().join("out/appendixB").join(f);
        let pb = b.path().join("out/appendixB").join(f);
        assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap(), "{f}");
    }
    let report = std::fs::read_to_string(a.path().join("out/appendixB/report.txt")).unwrap();
    assert!(report.contains("PASS single PE rho, tau=0"), "{report}");
    assert!(report.contains("FAIL decay fit") || report.contains("PASS decay fit"));
    assert!(report.trim_end().ends_with("checks passed)"));
}

#[test]
fn curve_csv_round_trips_through_fit() {
    let dir = tempfile::tempdir().unwrap();
    let o = reproduce(dir.path(), "fig4", "2");
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
    let curve = dir.path().join("out/fig4/curve_tau3.csv");
    let f = run(&["fit", s(&curve)]);
    assert!(f.status.success(), "{}", stderr(&f));
    let v: serde_json::Value = serde_json::from_slice(&f.stdout).unwrap();
    assert!(v["a"].is_f64());
    for name in ["curve_tau0.csv", "curve_tau7.csv", "crossing.csv", "fits.csv"] {
        assert!(dir.path().join("out/fig4").join(name).exists(), "{name}");
    }
}

#[test]
fn dependence_figure_reports_each_step() {
    let dir = tempfile::tempdir().unwrap();
    let o = reproduce(dir.path(), "fig3", "1");
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
    let table = std::fs::read_to_string(dir.path().join("out/fig3/dependence.csv")).unwrap();
    assert_eq!(table.lines().count(), 12);
    assert!(stdout(&o).contains("cross-PE dependence, tau=0"));
}

#[test]
fn appendix_c_needs_a_weight_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = reproduce(dir.path(), "appendixC", "1");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--weights"));

    let weights = dir.path().join("w.txt");
    let values: Vec<String> = (0..6 * 8).map(|i| ((i * 37) % 200 - 100).to_string()).collect();
    std::fs::write(&weights, values.join(" ")).unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = run(&[
        "reproduce",
        "appendixC",
        "--config",
        s(&cfg),
        "--weights",
        s(&weights),
        "--out",
        s(&dir.path().join("c")),
    ]);
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
    assert!(dir.path().join("c/appendixC/fits.csv").exists());
}
