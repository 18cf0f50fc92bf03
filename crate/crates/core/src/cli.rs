//! Command-line surface: configuration, subcommands and output formats.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bps::{ray_diagram, sector_composition, BpsStructure, Class, RayDiagram, RayMap, TwistedTorusPoint};
use crate::exact::{q, Q};
use crate::cluster::{mutation_sequence, random_point, BirationalTorusMap, Seed};
use crate::differential::QuadraticDifferential;
use crate::foliation::{bps_invariants, Foliation, FoliationConfig, SpectrumTable};
use crate::opers::{OperConfig, OperFamily};
use crate::rh::{Rh1Report, Rh2Report, Rh3Report, RhProblem, RhSample};
use crate::surface::{ExchangeMatrix, IdealTriangulation};
use crate::{Error, Result, C64};

pub const SCHEMA: &str = "spectra-rh/1";

/// Everything tunable from a --config file. Missing keys take defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub foliation: FoliationConfig,
    pub oper: OperConfig,
    pub tol_rh2: f64,
    pub rh1_tol: f64,
    /// Moduli of t for the RH2 sequence.
    pub rh2_moduli: Vec<f64>,
    /// Moduli of t for the RH3 slope fit.
    pub rh3_moduli: Vec<f64>,
    /// Significant digits in CSV output.
    pub precision: usize,
    pub svg_width: f64,
    pub svg_height: f64,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            foliation: FoliationConfig::default(),
            oper: OperConfig::default(),
            tol_rh2: 1e-3,
            rh1_tol: 1e-4,
            rh2_moduli: (0..=6).map(|k| 0.3 * 0.5f64.powi(k)).collect(),
            rh3_moduli: vec![10.0, 30.0, 100.0, 300.0, 1000.0],
            precision: 12,
            svg_width: 800.0,
            svg_height: 800.0,
            seed: 0,
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        let f = &self.foliation;
        let o = &self.oper;
        let tols = [
            ("foliation.theta_tol", f.theta_tol),
            ("foliation.ode_tol", f.ode_tol),
            ("foliation.hit_rel", f.hit_rel),
            ("foliation.prong_rel", f.prong_rel),
            ("foliation.budget_rel", f.budget_rel),
            ("oper.ode_tol", o.ode_tol),
            ("oper.line_tol", o.line_tol),
            ("oper.r_big", o.r_big),
            ("tol_rh2", self.tol_rh2),
            ("rh1_tol", self.rh1_tol),
            ("svg_width", self.svg_width),
            ("svg_height", self.svg_height),
        ];
        for (name, v) in tols {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if f.grid == 0 || o.loop_sides < 3 || self.precision == 0 {
            return Err(Error::Invalid("grid, loop_sides and precision must be positive".into()));
        }
        if self.rh2_moduli.iter().chain(&self.rh3_moduli).any(|&m| m.is_nan() || m <= 0.0) {
            return Err(Error::Invalid("moduli of t must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Svg,
}

#[derive(Debug, Parser)]
#[command(name = "spectra-rh", version, about = "BPS spectra and Riemann-Hilbert problems of quadratic differentials")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file (stdout when absent).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, global = true, default_value = "json")]
    pub format: Format,
    #[arg(long, global = true)]
    pub h_max: Option<f64>,
    /// Phase window "lo,hi" in units of pi.
    #[arg(long, global = true)]
    pub theta_window: Option<String>,
    /// Comma-separated moduli of t.
    #[arg(long, global = true)]
    pub t_grid: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Critical points, residues, surface type.
    Analyze { input: PathBuf },
    /// Saddle connections and ring domains over the phase window.
    Spectrum { input: PathBuf },
    /// WKB triangulation at one phase.
    Wkb {
        input: PathBuf,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        theta: f64,
    },
    /// Ray diagram of the BPS structure.
    Rays { input: PathBuf },
    /// Evaluate the sector composition between two phases.
    Wallcross {
        input: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        from: f64,
        #[arg(long, allow_hyphen_values = true)]
        to: f64,
        /// JSON file with a list of points (each a list of [re, im]).
        #[arg(long)]
        points: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        count: usize,
    },
    /// Fock-Goncharov coordinates of the WKB triangulation along a ray.
    Ycoords {
        input: PathBuf,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        theta: f64,
    },
    /// Sample the RH solution on the given (or one per chamber) rays.
    RhSolve {
        input: PathBuf,
        /// Comma-separated phases, or "auto".
        #[arg(long, default_value = "auto", allow_hyphen_values = true)]
        theta: String,
    },
    /// Check RH1, RH2 and the weak RH3 diagnostic.
    RhCheck {
        input: PathBuf,
        /// Comma-separated active ray phases, or "auto".
        #[arg(long, default_value = "auto", allow_hyphen_values = true)]
        rays: String,
    },
    /// SVG of the foliation at one phase.
    FoliationPlot {
        input: PathBuf,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        theta: f64,
    },
    /// Apply a mutation sequence to a seed.
    Mutate {
        input: PathBuf,
        /// Comma-separated indices (0-based).
        #[arg(long)]
        k: String,
        /// Also decide exactly whether the composite map is the identity.
        #[arg(long)]
        exact: bool,
    },
    /// Exact period-five identity and the numeric pentagon identity.
    PentagonCheck {
        #[arg(long, default_value_t = 100)]
        count: usize,
    },
}

/// What a command produced; `failed` marks a completed check that did not pass.
pub struct Outcome {
    pub text: String,
    pub failed: bool,
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| Error::Invalid(format!("bad number {x:?}: {e}"))))
        .collect()
}

fn read_file(p: &PathBuf) -> Result<String> {
    std::fs::read_to_string(p).map_err(|e| Error::Invalid(format!("{}: {e}", p.display())))
}

fn parse_value(text: &str) -> Result<serde_json::Value> {
    serde_json::from_str(text).map_err(|e| Error::Invalid(format!("line {} column {}: {e}", e.line(), e.column())))
}

/// Accepts a bare differential or any report carrying a "differential" field.
pub fn read_differential(text: &str) -> Result<QuadraticDifferential> {
    let v = parse_value(text)?;
    let inner = v.get("differential").cloned().unwrap_or(v);
    let q: QuadraticDifferential = serde_json::from_value(inner).map_err(|e| Error::Invalid(format!("differential: {e}")))?;
    q.validate()?;
    Ok(q)
}

/// Accepts a bare seed or a mutate report.
pub fn read_seed(text: &str) -> Result<Seed> {
    let v = parse_value(text)?;
    let inner = v.get("seed").cloned().unwrap_or(v);
    let s: Seed = serde_json::from_value(inner).map_err(|e| Error::Invalid(format!("seed: {e}")))?;
    if s.labels.len() != s.skew.n() || s.skew.0.iter().any(|r| r.len() != s.skew.n()) {
        return Err(Error::Invalid("seed labels and form have different sizes".into()));
    }
    Seed::new(s.skew.clone()).map(|_| s)
}

pub fn load_config(g: &GlobalOpts) -> Result<Config> {
    let mut cfg = match &g.config {
        Some(p) => serde_json::from_str(&read_file(p)?)
            .map_err(|e| Error::Invalid(format!("config line {} column {}: {e}", e.line(), e.column())))?,
        None => Config::default(),
    };
    if let Some(h) = g.h_max {
        cfg.foliation.h_max = Some(h);
    }
    if let Some(w) = &g.theta_window {
        let v = parse_list(w)?;
        if v.len() != 2 || v[0] >= v[1] {
            return Err(Error::Invalid(format!("theta window must be lo,hi with lo < hi, got {w:?}")));
        }
        cfg.foliation.window = (v[0], v[1]);
    }
    if let Some(t) = &g.t_grid {
        let v = parse_list(t)?;
        cfg.rh2_moduli = v;
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

// ---------- reports ----------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoleReport {
    /// None is the point at infinity.
    pub location: Option<C64>,
    pub order: i32,
    pub residue: Option<C64>,
    pub directions: Vec<C64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeReport {
    pub schema: String,
    pub differential: QuadraticDifferential,
    pub zeros: Vec<C64>,
    pub poles: Vec<PoleReport>,
    pub surface: String,
    pub n: i64,
    pub amenable: bool,
    pub complete: bool,
    pub warnings: Vec<String>,
}

pub fn analyze(phi: &QuadraticDifferential) -> Result<AnalyzeReport> {
    let zeros = phi.zeros()?;
    let mut poles = vec![];
    for p in phi.pole_refs() {
        let order = phi.pole_order(p);
        let residue = if order == 2 { Some(phi.residue_at(p, phi.pole_sign(p))?.residue) } else { None };
        poles.push(PoleReport {
            location: phi.pole_position(p),
            order,
            residue,
            directions: if order >= 3 { phi.asymptotic_directions(p) } else { vec![] },
        });
    }
    let s = phi.marked_bordered_surface();
    let mut warnings = vec![];
    if !s.is_amenable() {
        warnings.push(format!("surface ({}) is not amenable", s.describe()));
    }
    if poles.iter().any(|p| p.order == 1) {
        warnings.push("simple poles present: the differential is not complete".into());
    }
    Ok(AnalyzeReport {
        schema: SCHEMA.into(),
        differential: phi.clone(),
        zeros,
        poles,
        surface: s.describe(),
        n: s.dimension(),
        amenable: s.is_amenable(),
        complete: phi.is_complete(),
        warnings,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub theta: f64,
    pub class: Vec<i64>,
    pub z: C64,
    pub closed: bool,
    #[serde(rename = "type")]
    pub kind: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaRow {
    pub class: Vec<i64>,
    pub omega: Q,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub schema: String,
    pub differential: QuadraticDifferential,
    pub basis_phase: f64,
    pub basis_periods: Vec<C64>,
    pub h_max: f64,
    pub window: (f64, f64),
    pub rows: Vec<SpectrumRow>,
    pub omega: Vec<OmegaRow>,
}

fn spectrum_rows(t: &SpectrumTable) -> Vec<SpectrumRow> {
    let mut rows: Vec<SpectrumRow> = t
        .saddles
        .iter()
        .map(|s| SpectrumRow { theta: s.phase, class: s.class.clone(), z: s.period, closed: s.closed, kind: "saddle".into() })
        .collect();
    for r in &t.rings {
        if let Some(c) = &r.class {
            let kind = if r.degenerate { "degenerate_ring" } else { "ring" };
            rows.push(SpectrumRow { theta: r.phase, class: c.clone(), z: r.period, closed: true, kind: kind.into() });
        }
    }
    rows.sort_by(|a, b| a.theta.total_cmp(&b.theta).then(a.class.cmp(&b.class)));
    rows
}

pub fn spectrum(phi: &QuadraticDifferential, cfg: &Config) -> Result<SpectrumReport> {
    let f = Foliation::new(phi, cfg.foliation.clone())?;
    let t = f.find_saddles()?;
    let omega = bps_invariants(&t).into_iter().map(|(class, w)| OmegaRow { class, omega: q(w, 1) }).collect();
    Ok(SpectrumReport {
        schema: SCHEMA.into(),
        differential: phi.clone(),
        basis_phase: t.basis_phase,
        basis_periods: t.basis_periods.clone(),
        h_max: t.h_max,
        window: t.window,
        rows: spectrum_rows(&t),
        omega,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WkbArc {
    pub arc: usize,
    /// (zero, side) at the two ends of the strip.
    pub a: (usize, usize),
    pub b: (usize, usize),
    pub strip_period: C64,
    /// Period of the hat class attached to the arc.
    pub period: C64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WkbReport {
    pub schema: String,
    pub differential: QuadraticDifferential,
    pub phase: f64,
    pub zeros: Vec<C64>,
    pub triangulation: IdealTriangulation,
    pub signing: Vec<i8>,
    pub exchange_matrix: ExchangeMatrix,
    pub arcs: Vec<WkbArc>,
}

pub fn wkb(phi: &QuadraticDifferential, cfg: &Config, theta: f64) -> Result<WkbReport> {
    let f = Foliation::new(phi, cfg.foliation.clone())?;
    let w = f.wkb_triangulation(theta)?;
    let periods = w.arc_periods();
    let arcs = w
        .strips
        .iter()
        .enumerate()
        .map(|(j, s)| WkbArc { arc: j, a: s.a, b: s.b, strip_period: s.period, period: periods[j] })
        .collect();
    Ok(WkbReport {
        schema: SCHEMA.into(),
        differential: phi.clone(),
        phase: theta,
        zeros: w.zeros.clone(),
        exchange_matrix: w.triangulation.exchange_matrix(),
        triangulation: w.triangulation,
        signing: w.signing,
        arcs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaysReport {
    pub schema: String,
    pub differential: QuadraticDifferential,
    pub basis_periods: Vec<C64>,
    pub skew: ExchangeMatrix,
    pub omega: Vec<OmegaRow>,
    pub diagram: RayDiagram,
}

fn bps_structure(phi: &QuadraticDifferential, cfg: &Config) -> Result<BpsStructure> {
    let f = Foliation::new(phi, cfg.foliation.clone())?;
    let t = f.find_saddles()?;
    let basis = f.wkb_triangulation(t.basis_phase)?.hat_basis();
    BpsStructure::from_differential(&basis, &t)
}

fn omega_rows(b: &BpsStructure) -> Vec<OmegaRow> {
    b.omega.iter().map(|(class, w)| OmegaRow { class: class.clone(), omega: w.clone() }).collect()
}

pub fn rays(phi: &QuadraticDifferential, cfg: &Config) -> Result<RaysReport> {
    let b = bps_structure(phi, cfg)?;
    Ok(RaysReport {
        schema: SCHEMA.into(),
        differential: phi.clone(),
        basis_periods: b.z.clone(),
        skew: b.skew.clone(),
        omega: omega_rows(&b),
        diagram: ray_diagram(&b, cfg.foliation.h_max.unwrap_or(f64::INFINITY)),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallcrossRow {
    pub input: Vec<C64>,
    pub output: Vec<C64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallcrossReport {
    pub schema: String,
    pub differential: QuadraticDifferential,
    pub phase_minus: f64,
    pub phase_plus: f64,
    pub rays: Vec<RayMap>,
    pub rows: Vec<WallcrossRow>,
}

pub fn wallcross(phi: &QuadraticDifferential, cfg: &Config, from: f64, to: f64, points: Option<Vec<Vec<C64>>>, count: usize) -> Result<WallcrossReport> {
    let b = bps_structure(phi, cfg)?;
    let map = sector_composition(&b, from, to, cfg.foliation.h_max.unwrap_or(f64::INFINITY))?;
    let n = b.z.len();
    let points = points.unwrap_or_else(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        (0..count).map(|_| random_point(&mut rng, n)).collect()
    });
    let mut rows = vec![];
    for p in points {
        if p.len() != n {
            return Err(Error::Invalid(format!("point has {} entries, rank is {n}", p.len())));
        }
        let x = TwistedTorusPoint::new(p.clone(), b.skew.clone())?;
        rows.push(WallcrossRow { input: p, output: map.eval(&x)?.values });
    }
    Ok(WallcrossReport { schema: SCHEMA.into(), differential: phi.clone(), phase_minus: from, phase_plus: to, rays: map.rays, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YRow {
    pub t: C64,
    pub gamma: Vec<i64>,
    pub value: C64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YcoordsReport {
    pub schema: String,
    pub differential: QuadraticDifferential,
    pub phase: f64,
    /// Periods of the arc classes the rows are indexed by.
    pub periods: Vec<C64>,
    pub rows: Vec<YRow>,
}

pub fn ycoords(phi: &QuadraticDifferential, cfg: &Config, theta: f64) -> Result<YcoordsReport> {
    let f = Foliation::new(phi, cfg.foliation.clone())?;
    let o = OperFamily::new(phi, cfg.oper.clone())?;
    let w = f.wkb_triangulation(theta)?;
    let n = w.strips.len();
    let mut rows = vec![];
    for &m in &cfg.rh2_moduli {
        let t = C64::from_polar(m, PI * theta);
        let x = o.wkb_coordinates(&w, t)?;
        for (i, &value) in x.iter().enumerate() {
            let mut gamma = vec![0; n];
            gamma[i] = 1;
            rows.push(YRow { t, gamma, value });
        }
    }
    Ok(YcoordsReport { schema: SCHEMA.into(), differential: phi.clone(), phase: theta, periods: w.arc_periods(), rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhSolveReport {
    pub schema: String,
    pub differential: QuadraticDifferential,
    /// Periods of the reference basis the values are written in.
    pub basis_periods: Vec<C64>,
    pub samples: Vec<RhSample>,
}

/// A phase strictly inside each chamber of the ray diagram, phases in (-1, 1].
fn chamber_phases(d: &RayDiagram) -> Vec<f64> {
    let mut ph: Vec<f64> = d.rays.iter().map(|r| r.phase).collect();
    ph.sort_by(f64::total_cmp);
    ph.dedup();
    if ph.is_empty() {
        return vec![0.0];
    }
    let mut out = vec![];
    for i in 0..ph.len() {
        let a = ph[i];
        let b = if i + 1 < ph.len() { ph[i + 1] } else { ph[0] + 2.0 };
        let mut m = 0.5 * (a + b);
        if m > 1.0 {
            m -= 2.0;
        }
        out.push(m);
    }
    out.sort_by(f64::total_cmp);
    out
}

pub fn rh_solve(phi: &QuadraticDifferential, cfg: &Config, theta: &str) -> Result<RhSolveReport> {
    let p = RhProblem::new(phi, cfg.foliation.clone(), cfg.oper.clone())?;
    let phases = if theta == "auto" { chamber_phases(&ray_diagram(&p.bps, f64::INFINITY)) } else { parse_list(theta)? };
    let mut samples = vec![];
    for ph in phases {
        let chart = p.chart(ph)?;
        for &m in &cfg.rh2_moduli {
            samples.push(p.sample(&chart, C64::from_polar(m, PI * ph))?);
        }
    }
    Ok(RhSolveReport { schema: SCHEMA.into(), differential: phi.clone(), basis_periods: p.basis.periods.clone(), samples })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhCheckReport {
    pub schema: String,
    pub differential: QuadraticDifferential,
    pub rays: Vec<f64>,
    pub rh1: Vec<Rh1Report>,
    pub rh2: Vec<Rh2Report>,
    pub rh3: Vec<Rh3Report>,
    /// One verdict per condition, e.g. "PASS(RH1)".
    pub summary: Vec<String>,
}

/// Half-width of a bracket around `ray` that contains no other ray.
fn bracket(ray: f64, all: &[f64]) -> f64 {
    let gap = all
        .iter()
        .map(|&r| {
            let d = (r - ray).rem_euclid(2.0);
            d.min(2.0 - d)
        })
        .filter(|&d| d > 1e-9)
        .fold(2.0, f64::min);
    (0.4 * gap).min(0.05)
}

pub fn rh_check(phi: &QuadraticDifferential, cfg: &Config, rays_arg: &str) -> Result<RhCheckReport> {
    let p = RhProblem::new(phi, cfg.foliation.clone(), cfg.oper.clone())?;
    let d = ray_diagram(&p.bps, f64::INFINITY);
    let all: Vec<f64> = d.rays.iter().map(|r| r.phase).collect();
    let rays: Vec<f64> = if rays_arg == "auto" {
        // rays come in +-Z pairs; one half turn suffices
        all.iter().copied().filter(|&r| r > -0.5 && r <= 0.5).collect()
    } else {
        let v = parse_list(rays_arg)?;
        for &r in &v {
            if !d.is_active(r) {
                return Err(Error::Invalid(format!("phase {r} is not an active ray")));
            }
        }
        v
    };
    let n = p.basis.periods.len();
    let mut rh1 = vec![];
    for &r in &rays {
        let h = bracket(r, &all);
        let ts = p.rh1_samples(r + h, r - h, p.small_t(), 5, 300.0);
        rh1.push(p.check_rh1(r + h, r - h, &ts)?);
    }
    let ref_phase = match rays.first() {
        Some(&r) => r - bracket(r, &all),
        None => chamber_phases(&d)[0],
    };
    let mut rh2 = vec![];
    let mut rh3 = vec![];
    for i in 0..n {
        let mut g = vec![0; n];
        g[i] = 1;
        rh2.push(p.check_rh2(ref_phase, &g, &cfg.rh2_moduli, cfg.tol_rh2)?);
        rh3.push(p.check_rh3(ref_phase, &g, &cfg.rh3_moduli)?);
    }
    let v1 = if rh1.iter().all(|r| r.max_deviation < cfg.rh1_tol) { "PASS" } else { "FAIL" };
    let v2 = if rh2.iter().all(|r| r.pass) { "PASS" } else { "FAIL" };
    let v3 = if rh3.iter().all(|r| r.weak_pass) { "ADVISORY" } else { "WARN" };
    let summary = vec![format!("{v1}(RH1)"), format!("{v2}(RH2)"), format!("{v3}(RH3)")];
    Ok(RhCheckReport { schema: SCHEMA.into(), differential: phi.clone(), rays, rh1, rh2, rh3, summary })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MutateReport {
    pub schema: String,
    pub start: Seed,
    pub sequence: Vec<usize>,
    pub seed: Seed,
    pub map: BirationalTorusMap,
    pub exact_identity: Option<bool>,
}

pub fn mutate(seed: &Seed, ks: &[usize], exact: bool) -> Result<MutateReport> {
    if let Some(&k) = ks.iter().find(|&&k| k >= seed.rank()) {
        return Err(Error::Invalid(format!("index {k} out of range for rank {}", seed.rank())));
    }
    let (end, map) = mutation_sequence(seed, ks);
    let exact_identity = if exact { Some(map.is_exact_identity()?) } else { None };
    Ok(MutateReport { schema: SCHEMA.into(), start: seed.clone(), sequence: ks.to_vec(), seed: end, map, exact_identity })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PentagonReport {
    pub schema: String,
    /// (mu_2 mu_1)^5 is the identity on the A2 torus, decided exactly.
    pub period_five: bool,
    /// (mu_2 mu_1)^4 is not.
    pub period_four_fails: bool,
    pub points: usize,
    pub max_deviation: f64,
    pub pass: bool,
}

pub fn pentagon_check(count: usize, seed: u64) -> Result<PentagonReport> {
    let skew = ExchangeMatrix(vec![vec![0, 1], vec![-1, 0]]);
    let s = Seed::new(skew.clone())?;
    let (_, five) = mutation_sequence(&s, &[0, 1, 0, 1, 0, 1, 0, 1, 0, 1]);
    let (_, four) = mutation_sequence(&s, &[0, 1, 0, 1, 0, 1, 0, 1]);
    let period_five = five.is_exact_identity()?;
    let period_four_fails = !four.is_exact_identity()?;
    let ray = |g: Vec<i64>| RayMap { phase: 0.0, classes: vec![(g as Class, q(1, 1))] };
    let (s1, s2, s12) = (ray(vec![1, 0]), ray(vec![0, 1]), ray(vec![1, 1]));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dev: f64 = 0.0;
    for _ in 0..count {
        let p = TwistedTorusPoint::new(random_point(&mut rng, 2), skew.clone())?;
        let l = s1.eval(&s2.eval(&p)?)?;
        let r = s2.eval(&s12.eval(&s1.eval(&p)?)?)?;
        for i in 0..2 {
            dev = dev.max((l.values[i] - r.values[i]).norm() / l.values[i].norm().max(1.0));
        }
    }
    let pass = period_five && period_four_fails && dev < 1e-10;
    Ok(PentagonReport { schema: SCHEMA.into(), period_five, period_four_fails, points: count, max_deviation: dev, pass })
}

// ---------- rendering ----------

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Invalid(format!("serialization: {e}")))
}

fn csv_table(header: &[&str], rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(vec![]);
    let err = |e: csv::Error| Error::Invalid(format!("csv: {e}"));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Invalid(format!("csv: {e}")))
}

fn num(x: f64, p: usize) -> String {
    format!("{x:.*e}", p.saturating_sub(1))
}

fn class_str(g: &[i64]) -> String {
    g.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(" ")
}

fn unsupported(f: Format, cmd: &str) -> Error {
    Error::Invalid(format!("format {f:?} is not available for {cmd}"))
}

/// Maps the plane region containing `pts` to the SVG canvas.
struct Frame {
    center: C64,
    radius: f64,
    w: f64,
    h: f64,
}

impl Frame {
    fn new(pts: &[C64], w: f64, h: f64, pad: f64) -> Self {
        let n = pts.len().max(1) as f64;
        let center = pts.iter().sum::<C64>() / n;
        let r = pts.iter().map(|p| (p - center).norm()).fold(0.0, f64::max);
        Frame { center, radius: (r * pad).max(1.0), w, h }
    }

    fn map(&self, z: C64) -> (f64, f64) {
        let s = 0.5 * self.w.min(self.h) / self.radius;
        let d = z - self.center;
        (0.5 * self.w + s * d.re, 0.5 * self.h - s * d.im)
    }

    fn polyline(&self, pts: &[C64], stroke: f64) -> String {
        let lim = 4.0 * self.w.max(self.h);
        let coords: Vec<String> = pts
            .iter()
            .map(|&z| self.map(z))
            .filter(|(x, y)| x.abs() < lim && y.abs() < lim)
            .map(|(x, y)| format!("{x:.2},{y:.2}"))
            .collect();
        format!("<polyline points=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"{stroke}\"/>\n", coords.join(" "))
    }
}

fn svg_open(w: f64, h: f64) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    )
}

pub fn foliation_svg(phi: &QuadraticDifferential, cfg: &Config, theta: f64) -> Result<String> {
    let f = Foliation::new(phi, cfg.foliation.clone())?;
    let zeros = phi.zeros()?;
    let poles: Vec<C64> = phi.pole_refs().into_iter().filter_map(|p| phi.pole_position(p)).collect();
    let mut pts = zeros.clone();
    pts.extend(&poles);
    let frame = Frame::new(&pts, cfg.svg_width, cfg.svg_height, 2.5);
    let mut s = svg_open(cfg.svg_width, cfg.svg_height);
    // generic leaves on a coarse grid
    let k = 7;
    for i in 0..k {
        for j in 0..k {
            let u = -1.0 + 2.0 * (i as f64 + 0.5) / k as f64;
            let v = -1.0 + 2.0 * (j as f64 + 0.5) / k as f64;
            let z = frame.center + C64::new(u, v) * frame.radius * 0.9;
            for dir in [1, -1] {
                if let Ok(t) = f.integrate_trajectory(z, theta, dir) {
                    s.push_str(&frame.polyline(&t.points, 0.6));
                }
            }
        }
    }
    for a in 0..zeros.len() {
        for prong in 0..3 {
            if let Ok(t) = f.prong_trajectory(a, prong, theta) {
                s.push_str(&frame.polyline(&t.points, 2.5));
            }
        }
    }
    for &z in &zeros {
        let (x, y) = frame.map(z);
        let _ = writeln!(
            s,
            "<path d=\"M{} {} L{} {} M{} {} L{} {}\" stroke=\"red\" stroke-width=\"2.5\"/>",
            x - 6.0,
            y - 6.0,
            x + 6.0,
            y + 6.0,
            x - 6.0,
            y + 6.0,
            x + 6.0,
            y - 6.0
        );
    }
    for &z in &poles {
        let (x, y) = frame.map(z);
        let _ = writeln!(s, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"5\" fill=\"blue\"/>");
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn rays_svg(r: &RaysReport, cfg: &Config) -> String {
    let charge = |g: &Class| -> C64 { g.iter().zip(&r.basis_periods).map(|(&k, z)| z * k as f64).sum() };
    let zs: Vec<(C64, &Class)> = r.diagram.rays.iter().flat_map(|ray| ray.classes.iter().map(|(g, _)| (charge(g), g))).collect();
    let mut pts: Vec<C64> = zs.iter().map(|(z, _)| *z).collect();
    pts.push(C64::new(0.0, 0.0));
    let rmax = pts.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let frame = Frame { center: C64::new(0.0, 0.0), radius: 1.2 * rmax.max(1e-9), w: cfg.svg_width, h: cfg.svg_height };
    let mut s = svg_open(cfg.svg_width, cfg.svg_height);
    let (ox, oy) = frame.map(C64::new(0.0, 0.0));
    for (z, g) in &zs {
        let (x, y) = frame.map(*z);
        let _ = writeln!(s, "<line x1=\"{ox:.2}\" y1=\"{oy:.2}\" x2=\"{x:.2}\" y2=\"{y:.2}\" stroke=\"black\" stroke-width=\"1.5\"/>");
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"14\">Z({})</text>", x + 4.0, y - 4.0, class_str(g).replace(' ', ","));
    }
    let _ = writeln!(s, "<circle cx=\"{ox:.2}\" cy=\"{oy:.2}\" r=\"3\" fill=\"black\"/>");
    s.push_str("</svg>\n");
    s
}

fn c_cells(z: C64, p: usize) -> [String; 2] {
    [num(z.re, p), num(z.im, p)]
}

/// Runs one parsed command line.
pub fn run(cli: &Cli) -> Result<Outcome> {
    let cfg = load_config(&cli.global)?;
    let fmt = cli.global.format;
    let p = cfg.precision;
    let diff = |path: &PathBuf| read_differential(&read_file(path)?);
    let ok = |text: String| Ok(Outcome { text, failed: false });
    match &cli.command {
        Command::Analyze { input } => {
            let r = analyze(&diff(input)?)?;
            match fmt {
                Format::Json => ok(to_json(&r)?),
                Format::Csv => {
                    let rows = r
                        .poles
                        .iter()
                        .map(|q| {
                            let loc = q.location.map(|z| c_cells(z, p)).unwrap_or(["inf".into(), "inf".into()]);
                            let res = q.residue.map(|z| c_cells(z, p)).unwrap_or([String::new(), String::new()]);
                            vec![loc[0].clone(), loc[1].clone(), q.order.to_string(), res[0].clone(), res[1].clone()]
                        })
                        .collect();
                    ok(csv_table(&["re", "im", "order", "residue_re", "residue_im"], rows)?)
                }
                Format::Svg => Err(unsupported(fmt, "analyze")),
            }
        }
        Command::Spectrum { input } => {
            let r = spectrum(&diff(input)?, &cfg)?;
            match fmt {
                Format::Json => ok(to_json(&r)?),
                Format::Csv => {
                    let rows = r
                        .rows
                        .iter()
                        .map(|x| {
                            let z = c_cells(x.z, p);
                            vec![num(x.theta, p), class_str(&x.class), z[0].clone(), z[1].clone(), x.closed.to_string(), x.kind.clone()]
                        })
                        .collect();
                    ok(csv_table(&["theta", "class", "z_re", "z_im", "closed", "type"], rows)?)
                }
                Format::Svg => Err(unsupported(fmt, "spectrum")),
            }
        }
        Command::Wkb { input, theta } => match fmt {
            Format::Json => ok(to_json(&wkb(&diff(input)?, &cfg, *theta)?)?),
            Format::Csv => {
                let r = wkb(&diff(input)?, &cfg, *theta)?;
                let rows = r
                    .arcs
                    .iter()
                    .map(|a| {
                        let z = c_cells(a.period, p);
                        vec![a.arc.to_string(), a.a.0.to_string(), a.b.0.to_string(), z[0].clone(), z[1].clone()]
                    })
                    .collect();
                ok(csv_table(&["arc", "zero_a", "zero_b", "period_re", "period_im"], rows)?)
            }
            Format::Svg => Err(unsupported(fmt, "wkb")),
        },
        Command::Rays { input } => {
            let r = rays(&diff(input)?, &cfg)?;
            match fmt {
                Format::Json => ok(to_json(&r)?),
                Format::Svg => ok(rays_svg(&r, &cfg)),
                Format::Csv => {
                    let rows = r
                        .diagram
                        .rays
                        .iter()
                        .flat_map(|ray| ray.classes.iter().map(move |(g, w)| vec![num(ray.phase, p), class_str(g), w.to_string()]))
                        .collect();
                    ok(csv_table(&["phase", "class", "omega"], rows)?)
                }
            }
        }
        Command::Wallcross { input, from, to, points, count } => {
            let pts = match points {
                Some(path) => {
                    let v = parse_value(&read_file(path)?)?;
                    let inner = v.get("points").cloned().unwrap_or(v);
                    Some(serde_json::from_value::<Vec<Vec<C64>>>(inner).map_err(|e| Error::Invalid(format!("points: {e}")))?)
                }
                None => None,
            };
            let r = wallcross(&diff(input)?, &cfg, *from, *to, pts, *count)?;
            match fmt {
                Format::Json => ok(to_json(&r)?),
                Format::Csv => {
                    let mut header = vec![];
                    let n = r.rows.first().map_or(0, |x| x.input.len());
                    for side in ["in", "out"] {
                        for i in 0..n {
                            header.push(format!("{side}{i}_re"));
                            header.push(format!("{side}{i}_im"));
                        }
                    }
                    let rows = r
                        .rows
                        .iter()
                        .map(|x| x.input.iter().chain(&x.output).flat_map(|&z| c_cells(z, p)).collect())
                        .collect();
                    ok(csv_table(&header.iter().map(String::as_str).collect::<Vec<_>>(), rows)?)
                }
                Format::Svg => Err(unsupported(fmt, "wallcross")),
            }
        }
        Command::Ycoords { input, theta } => {
            let r = ycoords(&diff(input)?, &cfg, *theta)?;
            match fmt {
                Format::Json => ok(to_json(&r)?),
                Format::Csv => {
                    let rows = r
                        .rows
                        .iter()
                        .map(|x| {
                            let (t, v) = (c_cells(x.t, p), c_cells(x.value, p));
                            vec![t[0].clone(), t[1].clone(), class_str(&x.gamma), v[0].clone(), v[1].clone()]
                        })
                        .collect();
                    ok(csv_table(&["t_re", "t_im", "gamma", "y_re", "y_im"], rows)?)
                }
                Format::Svg => Err(unsupported(fmt, "ycoords")),
            }
        }
        Command::RhSolve { input, theta } => {
            let r = rh_solve(&diff(input)?, &cfg, theta)?;
            match fmt {
                Format::Json => ok(to_json(&r)?),
                Format::Csv => {
                    let mut rows = vec![];
                    for smp in &r.samples {
                        for (i, &x) in smp.values.iter().enumerate() {
                            let (t, v) = (c_cells(smp.t, p), c_cells(x, p));
                            rows.push(vec![num(smp.phase, p), t[0].clone(), t[1].clone(), i.to_string(), v[0].clone(), v[1].clone()]);
                        }
                    }
                    ok(csv_table(&["phase", "t_re", "t_im", "class", "x_re", "x_im"], rows)?)
                }
                Format::Svg => Err(unsupported(fmt, "rh-solve")),
            }
        }
        Command::RhCheck { input, rays } => {
            let r = rh_check(&diff(input)?, &cfg, rays)?;
            let failed = r.summary.iter().any(|s| s.starts_with("FAIL"));
            let text = match fmt {
                Format::Json => to_json(&r)?,
                Format::Csv => {
                    let rows = r.summary.iter().map(|s| vec![s.clone()]).collect();
                    csv_table(&["verdict"], rows)?
                }
                Format::Svg => return Err(unsupported(fmt, "rh-check")),
            };
            Ok(Outcome { text, failed })
        }
        Command::FoliationPlot { input, theta } => match fmt {
            Format::Svg | Format::Json => ok(foliation_svg(&diff(input)?, &cfg, *theta)?),
            Format::Csv => Err(unsupported(fmt, "foliation-plot")),
        },
        Command::Mutate { input, k, exact } => {
            let seed = read_seed(&read_file(input)?)?;
            let ks = k
                .split(',')
                .map(|x| x.trim().parse::<usize>().map_err(|e| Error::Invalid(format!("bad index {x:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            let r = mutate(&seed, &ks, *exact)?;
            match fmt {
                Format::Json => ok(to_json(&r)?),
                Format::Csv => {
                    let rows = r.seed.skew.0.iter().map(|row| row.iter().map(|v| v.to_string()).collect()).collect();
                    let header: Vec<String> = (0..r.seed.rank()).map(|j| format!("e{j}")).collect();
                    ok(csv_table(&header.iter().map(String::as_str).collect::<Vec<_>>(), rows)?)
                }
                Format::Svg => Err(unsupported(fmt, "mutate")),
            }
        }
        Command::PentagonCheck { count } => {
            let r = pentagon_check(*count, cfg.seed)?;
            let text = match fmt {
                Format::Json => to_json(&r)?,
                Format::Csv => csv_table(
                    &["period_five", "period_four_fails", "points", "max_deviation", "pass"],
                    vec![vec![r.period_five.to_string(), r.period_four_fails.to_string(), r.points.to_string(), num(r.max_deviation, p), r.pass.to_string()]],
                )?,
                Format::Svg => return Err(unsupported(fmt, "pentagon-check")),
            };
            Ok(Outcome { text, failed: !r.pass })
        }
    }
}

/// Process exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        3
    } else {
        2
    }
}

/// Worker count from SPECTRA_RH_THREADS, if set.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var("SPECTRA_RH_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| Error::Invalid(format!("SPECTRA_RH_THREADS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}
