//! Scenario configuration, closed-loop runs against a reference baseline,
//! CSV output and convergence studies for the sine example.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DVector;
use thiserror::Error;

use crate::error::{Error, Result};
use crate::error_analysis::{
    fit_power_law, global_error_states, ConvergenceFit, ErrorReport, MagnitudeCell, MagnitudeTable,
};
use crate::geometry::ChartPoint;
use crate::integrators::{simulate, Controller, SchemeVariant, SolverConfig, Trajectory};
use crate::reference::{feedback_reference_trajectory, reference_trajectory, AdaptiveConfig};
use crate::systems::SinExampleSystem;

pub const CSV_HEADER: &str = "t,X1,X2,x1,x2,U1,u1,hn,hr";

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {msg}")]
    Value { key: String, msg: String },
    #[error("cannot read config: {0}")]
    Io(String),
}

/// The three closed-loop schemes for the sine example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    /// Lifted explicit Euler, `v_k = K y_k`.
    Ees,
    /// Lifted implicit Euler, `v_k = K y_{k+1}`.
    Ies,
    /// Multirate symmetric composition, `v_k = K y_k`, `v_{k+1} = K y_{k+1}`.
    Ses,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Ees, Scheme::Ies, Scheme::Ses];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Ees => "ees",
            Scheme::Ies => "ies",
            Scheme::Ses => "ses",
        }
    }

    pub fn variant(&self) -> SchemeVariant {
        match self {
            Scheme::Ees => SchemeVariant::Forward,
            Scheme::Ies => SchemeVariant::Adjoint,
            Scheme::Ses => SchemeVariant::SymmetricMultirate,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ees" => Ok(Scheme::Ees),
            "ies" => Ok(Scheme::Ies),
            "ses" => Ok(Scheme::Ses),
            other => Err(format!("unknown scheme `{other}` (expected ees, ies or ses)")),
        }
    }
}

/// Continuous-time baseline the discrete run is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMode {
    /// Same piecewise-constant input as the discrete run.
    Held,
    /// Continuous state feedback `u(t) = c(x(t))`.
    Continuous,
}

impl BaselineMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            BaselineMode::Held => "held",
            BaselineMode::Continuous => "continuous",
        }
    }
}

impl FromStr for BaselineMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "held" => Ok(BaselineMode::Held),
            "continuous" => Ok(BaselineMode::Continuous),
            other => Err(format!("unknown baseline `{other}` (expected held or continuous)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub system: String,
    pub a: f64,
    pub scheme: Scheme,
    pub h: f64,
    pub h_list: Vec<f64>,
    pub t_end: f64,
    pub x0: Vec<f64>,
    pub gain: Vec<f64>,
    pub baseline: BaselineMode,
    /// Newton residual tolerance for implicit steps.
    pub tol: f64,
    /// Absolute and relative tolerance of the reference solver.
    pub ref_tol: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            system: "sin-example".into(),
            a: 1.0,
            scheme: Scheme::Ees,
            h: 1e-2,
            h_list: vec![1e-1, 1e-2, 1e-3],
            t_end: 5.0,
            x0: vec![0.25, std::f64::consts::FRAC_PI_6],
            gain: vec![-10.0, -10.0],
            baseline: BaselineMode::Held,
            tol: 1e-12,
            ref_tol: 1e-10,
            seed: 42,
            out: None,
        }
    }
}

fn parse_f64(key: &str, raw: &str) -> std::result::Result<f64, ConfigError> {
    raw.trim().parse::<f64>().map_err(|e| ConfigError::Value { key: key.into(), msg: format!("`{raw}`: {e}") })
}

fn parse_list(key: &str, raw: &str) -> std::result::Result<Vec<f64>, ConfigError> {
    raw.split(',').map(|s| parse_f64(key, s)).collect()
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

impl ScenarioConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, raw: &str) -> std::result::Result<(), ConfigError> {
        let value_err = |msg: String| ConfigError::Value { key: key.into(), msg };
        match key {
            "system" => self.system = raw.trim().to_string(),
            "a" => self.a = parse_f64(key, raw)?,
            "scheme" => self.scheme = raw.parse().map_err(value_err)?,
            "h" => self.h = parse_f64(key, raw)?,
            "h_list" | "h-list" => self.h_list = parse_list(key, raw)?,
            "t_end" | "t-end" => self.t_end = parse_f64(key, raw)?,
            "x0" => self.x0 = parse_list(key, raw)?,
            "gain" => self.gain = parse_list(key, raw)?,
            "baseline" => self.baseline = raw.parse().map_err(value_err)?,
            "tol" => self.tol = parse_f64(key, raw)?,
            "ref_tol" | "ref-tol" => self.ref_tol = parse_f64(key, raw)?,
            "seed" => self.seed = raw.trim().parse().map_err(|e| value_err(format!("`{raw}`: {e}")))?,
            "out" => {
                let s = raw.trim();
                self.out = (!s.is_empty()).then(|| PathBuf::from(s));
            }
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Parses a flat `key=value` file; `#` starts a comment line.
    pub fn parse(text: &str) -> std::result::Result<Self, ConfigError> {
        let mut cfg = ScenarioConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: i + 1, msg: format!("expected key=value, got `{line}`") })?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> std::result::Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "system={}", self.system);
        let _ = writeln!(s, "a={:?}", self.a);
        let _ = writeln!(s, "scheme={}", self.scheme);
        let _ = writeln!(s, "h={:?}", self.h);
        let _ = writeln!(s, "h_list={}", join(&self.h_list));
        let _ = writeln!(s, "t_end={:?}", self.t_end);
        let _ = writeln!(s, "x0={}", join(&self.x0));
        let _ = writeln!(s, "gain={}", join(&self.gain));
        let _ = writeln!(s, "baseline={}", self.baseline.as_str());
        let _ = writeln!(s, "tol={:?}", self.tol);
        let _ = writeln!(s, "ref_tol={:?}", self.ref_tol);
        let _ = writeln!(s, "seed={}", self.seed);
        if let Some(out) = &self.out {
            let _ = writeln!(s, "out={}", out.display());
        }
        s
    }

    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        let bad = |key: &str, msg: String| Err(ConfigError::Value { key: key.into(), msg });
        if self.system != "sin-example" {
            return bad("system", format!("unsupported system `{}`", self.system));
        }
        if self.a == 0.0 || !self.a.is_finite() {
            return bad("a", "must be finite and nonzero".into());
        }
        if !(self.h > 0.0) {
            return bad("h", "must be positive".into());
        }
        if self.h_list.iter().any(|h| !(*h > 0.0)) {
            return bad("h_list", "all step sizes must be positive".into());
        }
        if !(self.t_end > 0.0) {
            return bad("t_end", "must be positive".into());
        }
        if self.x0.len() != 2 || self.x0.iter().any(|x| !x.is_finite()) {
            return bad("x0", "expected two finite coordinates".into());
        }
        if !SinExampleSystem::new(self.a).map(|s| s.in_domain(&DVector::from_vec(self.x0.clone()))).unwrap_or(false) {
            return bad("x0", "outside the chart domain |x2| < pi/2".into());
        }
        if self.gain.len() != 2 {
            return bad("gain", "expected two entries".into());
        }
        if !(self.tol > 0.0) || !(self.ref_tol > 0.0) {
            return bad("tol", "tolerances must be positive".into());
        }
        Ok(())
    }

    pub fn system(&self) -> Result<SinExampleSystem> {
        SinExampleSystem::new(self.a)
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig { tol: self.tol, ..SolverConfig::default() }
    }

    pub fn reference_config(&self, h: f64) -> AdaptiveConfig {
        AdaptiveConfig::for_sampling_step(h).with_tolerances(self.ref_tol, self.ref_tol)
    }
}

/// One discrete closed-loop run together with its baseline.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub scheme: Scheme,
    pub h: f64,
    pub trajectory: Trajectory,
    /// Baseline states at the discrete sample times.
    pub reference: Vec<ChartPoint>,
    /// Feedback law evaluated on the baseline state.
    pub reference_controls: Vec<Option<f64>>,
    pub report: Option<ErrorReport>,
    /// First numeric failure, from the discrete run or the baseline.
    pub failure: Option<String>,
}

impl RunOutcome {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }

    pub fn sup_error(&self) -> Option<f64> {
        self.report.as_ref().map(|r| r.sup_error)
    }

    pub fn magnitude(&self) -> MagnitudeCell {
        match (&self.failure, &self.report) {
            (Some(reason), _) => MagnitudeCell::Failed(reason.clone()),
            (None, Some(r)) => MagnitudeCell::from_report(r),
            (None, None) => MagnitudeCell::Failed("no report".into()),
        }
    }

    pub fn summary(&self) -> String {
        let mut s = format!("scheme={} h={:e} samples={}", self.scheme, self.h, self.trajectory.len());
        if let Some(r) = &self.report {
            let _ = write!(s, " sup_error={:.6e} magnitude={}", r.sup_error, MagnitudeCell::from_report(r).render());
        }
        if let Some(f) = &self.failure {
            let _ = write!(s, " failure=\"{f}\"");
        }
        s
    }

    /// Plot-ready CSV with header [`CSV_HEADER`]; 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(128 * (self.trajectory.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        let num = |x: f64| format!("{x:.16e}");
        for (k, (t, xd)) in self.trajectory.times.iter().zip(&self.trajectory.states).enumerate() {
            let xr = self.reference.get(k);
            let u_d = self.trajectory.controls_u.get(k).map(|u| u[0]);
            let u_r = self.reference_controls.get(k).copied().flatten();
            let (hn, hr) = match &self.report {
                Some(r) if k < r.per_step_error.len() => (Some(r.per_step_error[k]), r.relative_pct[k]),
                _ => (None, None),
            };
            let fields = [Some(*t), Some(xd[0]), Some(xd[1]), xr.map(|x| x[0]), xr.map(|x| x[1]), u_d, u_r, hn, hr];
            let row: Vec<String> = fields.iter().map(|f| f.map(num).unwrap_or_default()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        if let Some(f) = &self.failure {
            let _ = writeln!(out, "# failure: {f}");
        }
        out
    }

    /// Half-interval control schedule as `t,U` rows (start time of each piece).
    pub fn schedule_csv(&self) -> String {
        let mut out = String::from("t,U\n");
        let sched = &self.trajectory.schedule;
        for (t, u) in sched.breakpoints().iter().zip(sched.values()) {
            let _ = writeln!(out, "{:.16e},{:.16e}", t, u[0]);
        }
        out
    }
}

/// Runs `scheme` at step `h` from the config's initial state and computes
/// the baseline and error report.
pub fn run_scenario(cfg: &ScenarioConfig, scheme: Scheme, h: f64) -> Result<RunOutcome> {
    cfg.validate().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let sys = cfg.system()?;
    let step_scheme = sys.ees_scheme().with_solver(cfg.solver());
    let controller = sys.feedback(&cfg.gain)?;
    let x0 = ChartPoint::new(cfg.x0.clone())?;
    let trajectory = simulate(scheme.variant(), &step_scheme, &x0, &controller, h, cfg.t_end)?;
    let mut failure = trajectory.failure.as_ref().map(|f| format!("step {}: {}", f.index, f.error));

    let field = sys.field();
    let ref_cfg = cfg.reference_config(h);
    let baseline = match cfg.baseline {
        BaselineMode::Held if trajectory.schedule.is_empty() => Ok(vec![x0.clone()]),
        BaselineMode::Held => reference_trajectory(&field, &x0, &trajectory.schedule, &trajectory.times, &ref_cfg),
        BaselineMode::Continuous => {
            feedback_reference_trajectory(&field, &controller, &x0, &trajectory.times, &ref_cfg)
        }
    };
    let reference = match baseline {
        Ok(r) => r,
        Err(e) => {
            failure.get_or_insert_with(|| format!("baseline: {e}"));
            Vec::new()
        }
    };
    let reference_controls = reference.iter().map(|x| controller.control(x).ok().map(|a| a.u[0])).collect();
    let report = if reference.len() == trajectory.len() {
        Some(global_error_states(&trajectory.states, &reference)?)
    } else {
        None
    };
    Ok(RunOutcome { scheme, h, trajectory, reference, reference_controls, report, failure })
}

/// Writes the run's CSV (and the schedule file for SES) under `path`.
pub fn write_outputs(run: &RunOutcome, path: &Path) -> std::io::Result<Vec<PathBuf>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, run.to_csv())?;
    let mut written = vec![path.to_path_buf()];
    if run.scheme == Scheme::Ses {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
        let control = path.with_file_name(format!("{stem}_control.csv"));
        std::fs::write(&control, run.schedule_csv())?;
        written.push(control);
    }
    Ok(written)
}

#[derive(Debug, Clone)]
pub struct ConvergenceStudy {
    pub runs: Vec<RunOutcome>,
    pub table: MagnitudeTable,
    pub fits: BTreeMap<Scheme, std::result::Result<ConvergenceFit, String>>,
}

impl ConvergenceStudy {
    pub fn run(&self, scheme: Scheme, h: f64) -> Option<&RunOutcome> {
        self.runs.iter().find(|r| r.scheme == scheme && r.h == h)
    }

    pub fn render(&self) -> String {
        let mut s = self.table.render();
        for (scheme, fit) in &self.fits {
            match fit {
                Ok(f) => {
                    let _ = writeln!(s, "slope({scheme}) = {:.4} (r^2 = {:.4})", f.slope, f.r_squared);
                }
                Err(e) => {
                    let _ = writeln!(s, "slope({scheme}) unavailable: {e}");
                }
            }
        }
        s
    }
}

/// Runs every `(scheme, h)` pair concurrently; failed cells become table gaps.
pub fn convergence_study(cfg: &ScenarioConfig, schemes: &[Scheme], step_sizes: &[f64]) -> Result<ConvergenceStudy> {
    if step_sizes.len() < 2 {
        return Err(Error::InvalidArgument("a convergence study needs at least two step sizes".into()));
    }
    let cells: Vec<(Scheme, f64)> = step_sizes.iter().flat_map(|&h| schemes.iter().map(move |&s| (s, h))).collect();
    let results: Vec<Result<RunOutcome>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cells.iter().map(|&(s, h)| scope.spawn(move || run_scenario(cfg, s, h))).collect();
        handles.into_iter().map(|j| j.join().expect("run thread panicked")).collect()
    });

    let mut table = MagnitudeTable::new(schemes.iter().map(|s| s.to_string()).collect(), step_sizes.to_vec());
    let mut runs = Vec::new();
    for ((scheme, h), res) in cells.iter().zip(results) {
        let i = step_sizes.iter().position(|x| x == h).expect("h from list");
        let j = schemes.iter().position(|x| x == scheme).expect("scheme from list");
        match res {
            Ok(run) => {
                table.set(i, j, run.magnitude());
                runs.push(run);
            }
            Err(e) => table.set(i, j, MagnitudeCell::Failed(e.to_string())),
        }
    }
    let mut fits = BTreeMap::new();
    for &scheme in schemes {
        let (hs, es): (Vec<f64>, Vec<f64>) = runs
            .iter()
            .filter(|r| r.scheme == scheme && r.succeeded())
            .filter_map(|r| r.sup_error().map(|e| (r.h, e)))
            .unzip();
        fits.insert(scheme, fit_power_law(&hs, &es).map_err(|e| e.to_string()));
    }
    Ok(ConvergenceStudy { runs, table, fits })
}
