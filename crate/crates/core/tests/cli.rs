use std::path::{Path, PathBuf};
use std::process::Command as Proc;

use clap::Parser;
use spectra_rh::cli::*;
use spectra_rh::cluster::Seed;

const A1: &str = r#"{"numerator": [[-1,0],[0,0],[1,0]], "poles": []}"#;
const A2: &str = r#"{"numerator": [[0,3],[-3,0],[0,0],[1,0]], "poles": []}"#;
// z^3 - z + i/sqrt(3): the three-state chamber at a scale where |Z| < 10
const A2_BIG: &str = r#"{"schema": "spectra-rh/1", "numerator": [[0,0.5773502691896258],[-1,0],[0,0],[1,0]], "poles": []}"#;
// z^6 + 1 over five double poles: a five-punctured sphere
const S5: &str = r#"{"numerator": [[1,0],[0,0],[0,0],[0,0],[0,0],[0,0],[1,0]],
  "poles": [{"z":[0,0],"order":2},{"z":[2,0],"order":2},{"z":[0,2],"order":2},{"z":[-2,0],"order":2},{"z":[0,-2],"order":2}]}"#;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run_args(args: &[&str]) -> Result<Outcome, spectra_rh::Error> {
    let cli = Cli::try_parse_from(std::iter::once("spectra-rh").chain(args.iter().copied())).unwrap();
    run(&cli)
}

fn text(args: &[&str]) -> String {
    run_args(args).unwrap().text
}

fn bin() -> Proc {
    Proc::new(env!("CARGO_BIN_EXE_spectra-rh"))
}

#[test]
fn analyze_reports_surface_and_amenability() {
    let d = tempfile::tempdir().unwrap();
    let a1 = write(d.path(), "a1.json", A1);
    let r: AnalyzeReport = serde_json::from_str(&text(&["analyze", a1.to_str().unwrap()])).unwrap();
    assert_eq!(r.schema, SCHEMA);
    assert_eq!(r.surface, "disk, 4 marks");
    assert_eq!(r.n, 1);
    assert_eq!(r.zeros.len(), 2);
    // small disks are excluded from the amenable class too
    assert!(!r.amenable && r.complete);
    let s5 = write(d.path(), "s5.json", S5);
    let r: AnalyzeReport = serde_json::from_str(&text(&["analyze", s5.to_str().unwrap()])).unwrap();
    assert!(!r.amenable);
    assert!(r.warnings.iter().any(|w| w.contains("not amenable")));
    assert_eq!(r.poles.iter().filter(|p| p.residue.is_some()).count(), 5);
}

#[test]
fn spectrum_of_the_big_chamber() {
    let d = tempfile::tempdir().unwrap();
    let f = write(d.path(), "a2.json", A2_BIG);
    let r: SpectrumReport = serde_json::from_str(&text(&["spectrum", "--h-max", "10", f.to_str().unwrap()])).unwrap();
    assert_eq!(r.rows.len(), 3);
    assert!(r.rows.iter().all(|x| x.kind == "saddle" && !x.closed));
    let csv = text(&["spectrum", "--h-max", "10", "--format", "csv", f.to_str().unwrap()]);
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("theta,class,z_re,z_im,closed,type"));
}

#[test]
fn rh_check_on_a1() {
    let d = tempfile::tempdir().unwrap();
    let f = write(d.path(), "a1.json", A1);
    let out = run_args(&["rh-check", "--rays", "auto", f.to_str().unwrap()]).unwrap();
    assert!(!out.failed);
    let r: RhCheckReport = serde_json::from_str(&out.text).unwrap();
    assert_eq!(r.summary, vec!["PASS(RH1)", "PASS(RH2)", "ADVISORY(RH3)"]);
    assert_eq!(r.rays.len(), 1);
    assert!(matches!(run_args(&["rh-check", "--rays", "0.2", f.to_str().unwrap()]), Err(spectra_rh::Error::Invalid(_))));
}

#[test]
fn svg_outputs_are_well_formed() {
    let d = tempfile::tempdir().unwrap();
    let f = write(d.path(), "a2.json", A2);
    for args in [vec!["foliation-plot", "--theta", "0", "--format", "svg"], vec!["rays", "--format", "svg"]] {
        let mut a = args.clone();
        a.push(f.to_str().unwrap());
        let s = text(&a);
        let doc = roxmltree::Document::parse(&s).unwrap();
        let root = doc.root_element();
        assert_eq!(root.tag_name().name(), "svg");
        assert!(root.attribute("viewBox").is_some());
    }
    let s = text(&["foliation-plot", "--theta", "0.1", "--format", "svg", f.to_str().unwrap()]);
    let doc = roxmltree::Document::parse(&s).unwrap();
    let bold = doc.descendants().filter(|n| n.tag_name().name() == "polyline" && n.attribute("stroke-width") == Some("2.5")).count();
    assert_eq!(bold, 9);
}

#[test]
fn emitted_json_reads_back() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    let f = write(dir, "a2.json", A2);
    let fs = f.to_str().unwrap();
    let outputs = [
        text(&["analyze", fs]),
        text(&["spectrum", fs]),
        text(&["wkb", "--theta", "0.1", fs]),
        text(&["rays", fs]),
        text(&["wallcross", "--from", "0.999", "--to", "0.001", "--count", "2", fs]),
        text(&["ycoords", "--theta", "0.1", "--t-grid", "0.5", fs]),
        text(&["rh-solve", "--theta", "0.1", "--t-grid", "0.5", fs]),
    ];
    let original = read_differential(A2).unwrap();
    for (i, o) in outputs.iter().enumerate() {
        let v: serde_json::Value = serde_json::from_str(o).unwrap();
        assert_eq!(v["schema"], SCHEMA);
        // each report is itself a valid input
        assert_eq!(read_differential(o).unwrap(), original);
        let g = write(dir, &format!("out{i}.json"), o);
        text(&["analyze", g.to_str().unwrap()]);
    }
    let _: AnalyzeReport = serde_json::from_str(&outputs[0]).unwrap();
    let _: SpectrumReport = serde_json::from_str(&outputs[1]).unwrap();
    let _: WkbReport = serde_json::from_str(&outputs[2]).unwrap();
    let _: RaysReport = serde_json::from_str(&outputs[3]).unwrap();
    let w: WallcrossReport = serde_json::from_str(&outputs[4]).unwrap();
    assert_eq!(w.rays.len(), 3);
    let y: YcoordsReport = serde_json::from_str(&outputs[5]).unwrap();
    assert_eq!(y.rows.len(), 2);
    let _: RhSolveReport = serde_json::from_str(&outputs[6]).unwrap();

    let seed = write(dir, "seed.json", r#"{"labels": ["a", "b"], "skew": [[0, 1], [-1, 0]]}"#);
    let m = text(&["mutate", "--k", "0,1,0,1,0,1,0,1,0,1", "--exact", seed.to_str().unwrap()]);
    let r: MutateReport = serde_json::from_str(&m).unwrap();
    assert_eq!(r.exact_identity, Some(true));
    let again = write(dir, "m.json", &m);
    let r2: MutateReport = serde_json::from_str(&text(&["mutate", "--k", "0", again.to_str().unwrap()])).unwrap();
    assert_eq!(r2.start, read_seed(&m).unwrap());
    let s: Seed = r2.seed;
    assert_eq!(s.skew.0, vec![vec![0, -1], vec![1, 0]]);
    let p: PentagonReport = serde_json::from_str(&text(&["pentagon-check", "--count", "20"])).unwrap();
    assert!(p.pass);
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    let bad = write(dir, "bad.json", "{\"numerator\": [1,\n");
    let out = bin().args(["analyze", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    let double_zero = write(dir, "dz.json", r#"{"numerator": [[0,0],[0,0],[1,0]], "poles": []}"#);
    assert_eq!(bin().args(["analyze", double_zero.to_str().unwrap()]).status().unwrap().code(), Some(2));
    let cfg = write(dir, "cfg.json", r#"{"oper": {"ode_tol": 0}}"#);
    let a1 = write(dir, "a1.json", A1);
    assert_eq!(bin().args(["--config", cfg.to_str().unwrap(), "analyze", a1.to_str().unwrap()]).status().unwrap().code(), Some(2));
    // phase 0.5 carries the A1 saddle
    assert_eq!(bin().args(["wkb", "--theta", "0.5", a1.to_str().unwrap()]).status().unwrap().code(), Some(3));
    assert_eq!(bin().args(["analyze", a1.to_str().unwrap(), "--format", "svg"]).status().unwrap().code(), Some(2));
    let out_path = dir.join("o.json");
    let ok = bin().args(["analyze", a1.to_str().unwrap(), "--out", out_path.to_str().unwrap()]).status().unwrap();
    assert_eq!(ok.code(), Some(0));
    assert!(read_differential(&std::fs::read_to_string(out_path).unwrap()).is_ok());
}

#[test]
fn output_does_not_depend_on_the_pool_size() {
    let d = tempfile::tempdir().unwrap();
    let f = write(d.path(), "a2.json", A2);
    let run = |threads: &str| bin().env("SPECTRA_RH_THREADS", threads).args(["spectrum", f.to_str().unwrap()]).output().unwrap();
    let (a, b) = (run("1"), run("3"));
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(run("zero").status.code(), Some(2));
}

#[test]
fn config_defaults_and_overrides() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "cfg.json", r#"{"foliation": {"grid": 800}, "seed": 4}"#);
    let cli = Cli::try_parse_from(["spectra-rh", "--config", cfg.to_str().unwrap(), "--seed", "9", "--theta-window", "0,0.5", "pentagon-check"]).unwrap();
    let c = load_config(&cli.global).unwrap();
    assert_eq!(c.foliation.grid, 800);
    assert_eq!(c.foliation.ode_tol, Config::default().foliation.ode_tol);
    assert_eq!(c.seed, 9);
    assert_eq!(c.foliation.window, (0.0, 0.5));
    let bad = Cli::try_parse_from(["spectra-rh", "--theta-window", "1,0", "pentagon-check"]).unwrap();
    assert!(load_config(&bad.global).is_err());
}
