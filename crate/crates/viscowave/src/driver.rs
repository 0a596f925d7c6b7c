//! Configuration-driven solver runs and convergence studies.
//!
//! A [`RunConfig`] describes one solve (mesh, degree, formulation, time
//! grid, material, problem); [`run`] executes it and reports final-time
//! errors plus energy diagnostics. [`ConvergenceConfig`] drives a refinement
//! schedule in one of three modes (fixed time step, fixed mesh, coupled
//! `dt = h`) and produces rate tables in the layout of the reference
//! experiment.

use crate::fespace::{build_space, FeError};
use crate::linsolve::SolverOptions;
use crate::mesh::{unit_square_mesh, Diagonal, MeshError};
use crate::mms::{
    convergence_rate, error_norms, ErrorTriple, ExactSolution, ManufacturedProblem, MmsError,
};
use crate::stepper::{
    Form, MaterialModel, ProblemData, RunOptions, StepError, TimeGrid, TimeStepper,
};
use crate::vtk;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fe(#[from] FeError),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Mms(#[from] MmsError),
    #[error("refinement level {level} failed: {source}")]
    Level {
        level: usize,
        #[source]
        source: Box<DriverError>,
    },
    #[error("report parse error at line {line}: {message}")]
    ReportParse { line: usize, message: String },
}

fn config_err(field: &str, message: impl Into<String>) -> DriverError {
    DriverError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Which problem the run solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    /// The manufactured solution with closed-form data.
    Manufactured,
    /// Zero data and zero initial conditions; errors are measured against
    /// the zero solution. In-process users supply arbitrary data through
    /// [`crate::stepper::ProblemData`] directly.
    Custom,
}

/// Output options of a run.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub vtk: bool,
    /// Steps between VTK snapshots; default spreads ~50 over the run.
    pub vtk_stride: Option<usize>,
    /// Steps between energy CSV rows (0: final row only).
    #[serde(default = "default_energy_stride")]
    pub energy_stride: usize,
}

fn default_energy_stride() -> usize {
    1
}

/// Full description of a single solver run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub form: Form,
    pub degree: usize,
    /// Mesh subdivisions per side.
    pub n: usize,
    #[serde(default)]
    pub diagonal: Diagonal,
    pub t_final: f64,
    /// Give `steps` or `dt` (or both, consistently): `dt * steps = t_final`.
    pub steps: Option<usize>,
    pub dt: Option<f64>,
    /// All material values are explicit; there are no defaults.
    pub material: MaterialModel,
    pub problem: ProblemKind,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, DriverError> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<Self, DriverError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), DriverError> {
        if !(self.degree == 1 || self.degree == 2) {
            return Err(config_err("degree", format!("must be 1 or 2, got {}", self.degree)));
        }
        if self.n == 0 {
            return Err(config_err("n", "must be at least 1"));
        }
        if !self.t_final.is_finite() || self.t_final <= 0.0 {
            return Err(config_err("t_final", format!("must be positive, got {}", self.t_final)));
        }
        self.resolved_steps()?;
        self.material
            .validate()
            .map_err(|e| config_err("material", e.to_string()))?;
        if !(self.solver.tolerance > 0.0 && self.solver.tolerance < 1.0) {
            return Err(config_err(
                "solver.tolerance",
                format!("must lie in (0, 1), got {}", self.solver.tolerance),
            ));
        }
        Ok(())
    }

    /// Number of time steps, enforcing `dt * steps = t_final`.
    pub fn resolved_steps(&self) -> Result<usize, DriverError> {
        match (self.steps, self.dt) {
            (None, None) => Err(config_err("steps", "give `steps` or `dt`")),
            (Some(0), _) => Err(config_err("steps", "must be positive")),
            (Some(steps), None) => Ok(steps),
            (maybe_steps, Some(dt)) => {
                if !dt.is_finite() || dt <= 0.0 {
                    return Err(config_err("dt", format!("must be positive, got {dt}")));
                }
                let steps_from_dt = (self.t_final / dt).round();
                if steps_from_dt < 1.0
                    || (steps_from_dt * dt - self.t_final).abs() > 1e-9 * self.t_final
                {
                    return Err(config_err(
                        "dt",
                        format!("t_final/dt = {} is not an integer", self.t_final / dt),
                    ));
                }
                let steps_from_dt = steps_from_dt as usize;
                if let Some(steps) = maybe_steps {
                    if steps != steps_from_dt {
                        return Err(config_err(
                            "steps",
                            format!("inconsistent with dt: {steps} vs {steps_from_dt}"),
                        ));
                    }
                }
                Ok(steps_from_dt)
            }
        }
    }
}

/// Results of one run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub errors: ErrorTriple,
    /// Residual of the discrete energy identity at the final step.
    pub energy_identity_residual: f64,
    pub max_state_norm: f64,
    pub energy_csv: Option<PathBuf>,
    pub vtk_files: Vec<PathBuf>,
}

/// Execute a single run described by the config.
pub fn run(config: &RunConfig) -> Result<RunOutcome, DriverError> {
    config.validate()?;
    let steps = config.resolved_steps()?;
    let mesh = unit_square_mesh(config.n, config.diagonal);
    let space = build_space(mesh, config.degree)?;
    let (data, exact) = match config.problem {
        ProblemKind::Manufactured => {
            let problem = ManufacturedProblem::new(config.material.clone())?;
            (problem.problem_data(), problem.exact_solution())
        }
        ProblemKind::Custom => (ProblemData::zero(), ExactSolution::zero()),
    };
    let grid = TimeGrid::new(config.t_final, steps);
    let stepper = TimeStepper::new(
        &space,
        &config.material,
        &data,
        config.form,
        grid,
        &config.solver,
    )?;

    let out_dir = config.output.output_dir.clone();
    if let Some(dir) = &out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut vtk_files = Vec::new();
    let vtk_stride = config
        .output
        .vtk_stride
        .unwrap_or_else(|| (steps / 50).max(1));
    let options = RunOptions {
        steps,
        record_trajectory: false,
        energy_stride: config.output.energy_stride,
    };
    let write_vtk = config.output.vtk && out_dir.is_some();
    let result = stepper.run_observed(&options, |step, state| {
        if write_vtk && step % vtk_stride == 0 {
            let dir = out_dir.as_ref().unwrap();
            let path = dir.join(format!("displacement_{step:06}.vtk"));
            let full = space.expand(&state.z);
            if vtk::write_scalar_field(&space, &full, "displacement", &path).is_ok() {
                vtk_files.push(path);
            }
        }
    })?;

    let errors = error_norms(
        &space,
        &result.final_state,
        config.t_final,
        &exact,
        config.material.modulus,
    );

    let mut energy_csv = None;
    if let Some(dir) = &out_dir {
        let path = dir.join("energy.csv");
        let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(
            out,
            "step,t,kinetic,elastic,internal,dissipation,load_work,identity_residual"
        )?;
        for row in &result.energy {
            writeln!(
                out,
                "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                row.step,
                row.t,
                row.kinetic,
                row.elastic,
                row.internal,
                row.dissipation,
                row.load_work,
                row.identity_residual
            )?;
        }
        energy_csv = Some(path);
    }

    Ok(RunOutcome {
        errors,
        energy_identity_residual: result.final_residual,
        max_state_norm: result.max_state_norm,
        energy_csv,
        vtk_files,
    })
}

/// Refinement driver mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinementMode {
    /// Fixed `dt`, refine the mesh (the fixed-time-step table).
    FixedDt,
    /// Fixed mesh, refine `dt` (the fixed-mesh table).
    FixedH,
    /// `dt = h` coupled refinement.
    Coupled,
}

impl std::fmt::Display for RefinementMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RefinementMode::FixedDt => write!(f, "fixed_dt"),
            RefinementMode::FixedH => write!(f, "fixed_h"),
            RefinementMode::Coupled => write!(f, "coupled"),
        }
    }
}

/// Desk-scale and full-scale fixed meshes for the fixed-mesh mode.
pub const FIXED_H_DESK_SCALE: usize = 128;
pub const FIXED_H_FULL_SCALE: usize = 512;

/// Description of a convergence study.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub mode: RefinementMode,
    /// Refinement levels: mesh subdivisions `n` for `fixed_dt`/`coupled`,
    /// time step counts for `fixed_h`.
    pub levels: Vec<usize>,
    pub forms: Vec<Form>,
    pub degree: usize,
    /// Fixed mesh for `fixed_h`; defaults to the desk-scale 128 (512 with
    /// `full_scale`).
    pub n: Option<usize>,
    /// Fixed time step for `fixed_dt`.
    pub dt: Option<f64>,
    pub t_final: f64,
    pub material: MaterialModel,
    #[serde(default)]
    pub diagonal: Diagonal,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub full_scale: bool,
    /// Worker threads for running levels in parallel (0: rayon default).
    #[serde(default)]
    pub workers: usize,
    pub output_dir: Option<PathBuf>,
}

impl ConvergenceConfig {
    pub fn from_json(text: &str) -> Result<Self, DriverError> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<Self, DriverError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), DriverError> {
        if self.levels.len() < 3 {
            return Err(config_err(
                "levels",
                format!("need at least 3 refinement levels, got {}", self.levels.len()),
            ));
        }
        if self.levels.contains(&0) {
            return Err(config_err("levels", "levels must be positive"));
        }
        if self.forms.is_empty() {
            return Err(config_err("forms", "need at least one form"));
        }
        if self.mode == RefinementMode::FixedDt && self.dt.is_none() {
            return Err(config_err("dt", "fixed_dt mode needs the fixed `dt`"));
        }
        if !self.t_final.is_finite() || self.t_final <= 0.0 {
            return Err(config_err("t_final", "must be positive"));
        }
        self.material
            .validate()
            .map_err(|e| config_err("material", e.to_string()))?;
        Ok(())
    }

    /// Mesh size used by the fixed-mesh mode.
    pub fn fixed_mesh_n(&self) -> usize {
        self.n.unwrap_or(if self.full_scale {
            FIXED_H_FULL_SCALE
        } else {
            FIXED_H_DESK_SCALE
        })
    }

    fn level_run_config(&self, level: usize, form: Form) -> RunConfig {
        let (n, steps) = match self.mode {
            RefinementMode::FixedDt => (level, None),
            RefinementMode::FixedH => (self.fixed_mesh_n(), Some(level)),
            // dt = h: steps = t_final * n.
            RefinementMode::Coupled => (level, Some((self.t_final * level as f64).round() as usize)),
        };
        RunConfig {
            form,
            degree: self.degree,
            n,
            diagonal: self.diagonal,
            t_final: self.t_final,
            steps,
            dt: match self.mode {
                RefinementMode::FixedDt => self.dt,
                _ => None,
            },
            material: self.material.clone(),
            problem: ProblemKind::Manufactured,
            solver: self.solver.clone(),
            output: OutputConfig::default(),
        }
    }

    /// The abscissa reported for a level (h or dt).
    fn level_abscissa(&self, level: usize) -> f64 {
        match self.mode {
            RefinementMode::FixedDt | RefinementMode::Coupled => 1.0 / level as f64,
            RefinementMode::FixedH => self.t_final / level as f64,
        }
    }
}

/// Rate table for one form, mirroring the reference experiment layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub form: Form,
    pub degree: usize,
    pub mode: RefinementMode,
    /// The fixed dt (fixed_dt mode) or fixed h (fixed_h mode).
    pub fixed: Option<f64>,
    /// `(h or dt, errors)` rows, sorted by refinement.
    pub rows: Vec<(f64, ErrorTriple)>,
    /// Pairwise rates per column for adjacent rows.
    pub pairwise_rates: Vec<[f64; 3]>,
    /// Least-squares log-log slope per column.
    pub least_squares_rates: [f64; 3],
}

impl ConvergenceReport {
    pub fn from_rows(
        form: Form,
        degree: usize,
        mode: RefinementMode,
        fixed: Option<f64>,
        rows: Vec<(f64, ErrorTriple)>,
    ) -> Result<Self, DriverError> {
        let steps: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let mut pairwise_rates = vec![[0.0; 3]; rows.len().saturating_sub(1)];
        let mut least_squares_rates = [0.0; 3];
        for col in 0..3 {
            let errors: Vec<f64> = rows.iter().map(|r| r.1.as_array()[col]).collect();
            let rates = convergence_rate(&errors, &steps)?;
            for (k, &r) in rates.pairwise.iter().enumerate() {
                pairwise_rates[k][col] = r;
            }
            least_squares_rates[col] = rates.least_squares;
        }
        Ok(Self {
            form,
            degree,
            mode,
            fixed,
            rows,
            pairwise_rates,
            least_squares_rates,
        })
    }

    /// Emit the CSV table: error rows first, then the trailing rates block.
    /// Numbers use scientific notation with 5 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("# viscowave convergence report\n");
        out.push_str(&format!(
            "# form={} degree={} mode={} fixed={}\n",
            self.form,
            self.degree,
            self.mode,
            self.fixed.map_or("none".to_string(), |f| format!("{f:.4E}")),
        ));
        out.push_str("h_or_dt,energy_err,vel_l2_err,disp_l2_err\n");
        for (h, e) in &self.rows {
            out.push_str(&format!(
                "{h:.4E},{:.4E},{:.4E},{:.4E}\n",
                e.energy, e.velocity_l2, e.displacement_l2
            ));
        }
        for r in &self.pairwise_rates {
            out.push_str(&format!(
                "rate_pairwise,{:.4E},{:.4E},{:.4E}\n",
                r[0], r[1], r[2]
            ));
        }
        out.push_str(&format!(
            "rate_least_squares,{:.4E},{:.4E},{:.4E}\n",
            self.least_squares_rates[0], self.least_squares_rates[1], self.least_squares_rates[2]
        ));
        out
    }

    /// Parse a report emitted by [`ConvergenceReport::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self, DriverError> {
        let parse_err = |line: usize, message: &str| DriverError::ReportParse {
            line,
            message: message.to_string(),
        };
        let mut form = None;
        let mut degree = None;
        let mut mode = None;
        let mut fixed = None;
        let mut rows = Vec::new();
        let mut pairwise_rates = Vec::new();
        let mut least_squares_rates = None;
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                for token in meta.split_whitespace() {
                    if let Some((key, value)) = token.split_once('=') {
                        match key {
                            "form" => {
                                form = Some(match value {
                                    "displacement" => Form::Displacement,
                                    "velocity" => Form::Velocity,
                                    other => {
                                        return Err(parse_err(k + 1, &format!("bad form {other}")))
                                    }
                                })
                            }
                            "degree" => {
                                degree = Some(value.parse().map_err(|_| {
                                    parse_err(k + 1, "bad degree")
                                })?)
                            }
                            "mode" => {
                                mode = Some(match value {
                                    "fixed_dt" => RefinementMode::FixedDt,
                                    "fixed_h" => RefinementMode::FixedH,
                                    "coupled" => RefinementMode::Coupled,
                                    other => {
                                        return Err(parse_err(k + 1, &format!("bad mode {other}")))
                                    }
                                })
                            }
                            "fixed" => {
                                fixed = if value == "none" {
                                    None
                                } else {
                                    Some(value.parse().map_err(|_| {
                                        parse_err(k + 1, "bad fixed value")
                                    })?)
                                }
                            }
                            _ => {}
                        }
                    }
                }
                continue;
            }
            if line.starts_with("h_or_dt") {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let nums = |from: usize| -> Result<Vec<f64>, DriverError> {
                fields[from..]
                    .iter()
                    .map(|f| f.parse::<f64>().map_err(|_| parse_err(k + 1, "bad number")))
                    .collect()
            };
            if fields[0] == "rate_pairwise" {
                let v = nums(1)?;
                pairwise_rates.push([v[0], v[1], v[2]]);
            } else if fields[0] == "rate_least_squares" {
                let v = nums(1)?;
                least_squares_rates = Some([v[0], v[1], v[2]]);
            } else {
                let v = nums(0)?;
                if v.len() != 4 {
                    return Err(parse_err(k + 1, "expected 4 columns"));
                }
                rows.push((
                    v[0],
                    ErrorTriple {
                        energy: v[1],
                        velocity_l2: v[2],
                        displacement_l2: v[3],
                    },
                ));
            }
        }
        Ok(Self {
            form: form.ok_or_else(|| parse_err(0, "missing form"))?,
            degree: degree.ok_or_else(|| parse_err(0, "missing degree"))?,
            mode: mode.ok_or_else(|| parse_err(0, "missing mode"))?,
            fixed,
            rows,
            pairwise_rates,
            least_squares_rates: least_squares_rates
                .ok_or_else(|| parse_err(0, "missing least-squares rates"))?,
        })
    }
}

/// Run a convergence study; one report per requested form, in schedule
/// order. On a level failure the completed rows are still written to disk
/// before the error propagates.
pub fn convergence(config: &ConvergenceConfig) -> Result<Vec<ConvergenceReport>, DriverError> {
    config.validate()?;
    let jobs: Vec<(Form, usize)> = config
        .forms
        .iter()
        .flat_map(|&form| config.levels.iter().map(move |&level| (form, level)))
        .collect();

    let execute = || -> Vec<(Form, usize, Result<ErrorTriple, DriverError>)> {
        jobs.par_iter()
            .map(|&(form, level)| {
                let run_config = config.level_run_config(level, form);
                let result = run(&run_config).map(|outcome| outcome.errors).map_err(|e| {
                    DriverError::Level {
                        level,
                        source: Box::new(e),
                    }
                });
                (form, level, result)
            })
            .collect()
    };
    let results = if config.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .expect("worker pool")
            .install(execute)
    } else {
        execute()
    };

    // Build per-form reports from the completed prefix of each schedule.
    let fixed = match config.mode {
        RefinementMode::FixedDt => config.dt,
        RefinementMode::FixedH => Some(1.0 / config.fixed_mesh_n() as f64),
        RefinementMode::Coupled => None,
    };
    let mut reports = Vec::new();
    for &form in &config.forms {
        let mut rows = Vec::new();
        for &level in &config.levels {
            let entry = results
                .iter()
                .find(|(f, l, _)| *f == form && *l == level)
                .expect("every job ran");
            match &entry.2 {
                Ok(errors) => rows.push((config.level_abscissa(level), *errors)),
                Err(_) => break,
            }
        }
        if rows.len() >= 2 {
            reports.push(ConvergenceReport::from_rows(
                form,
                config.degree,
                config.mode,
                fixed,
                rows,
            )?);
        }
    }

    // Save whatever completed, then propagate the first failure if any.
    if let Some(dir) = &config.output_dir {
        std::fs::create_dir_all(dir)?;
        for report in &reports {
            let path = dir.join(format!("table_{}_{}.csv", config.mode, report.form));
            std::fs::write(path, report.to_csv())?;
        }
        if reports.len() == 2 {
            let path = dir.join(format!("table_{}_combined.csv", config.mode));
            std::fs::write(path, combined_csv(&reports[0], &reports[1]))?;
        }
    }
    for (_, _, result) in results {
        result?;
    }
    Ok(reports)
}

/// Both forms side by side, the layout of the reference experiment's tables.
fn combined_csv(a: &ConvergenceReport, b: &ConvergenceReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# forms {} | {} side by side, degree={} mode={}\n",
        a.form, b.form, a.degree, a.mode
    ));
    out.push_str(&format!(
        "h_or_dt,{0}_energy_err,{0}_vel_l2_err,{0}_disp_l2_err,{1}_energy_err,{1}_vel_l2_err,{1}_disp_l2_err\n",
        a.form, b.form
    ));
    for ((h, ea), (_, eb)) in a.rows.iter().zip(&b.rows) {
        out.push_str(&format!(
            "{h:.4E},{:.4E},{:.4E},{:.4E},{:.4E},{:.4E},{:.4E}\n",
            ea.energy, ea.velocity_l2, ea.displacement_l2, eb.energy, eb.velocity_l2, eb.displacement_l2
        ));
    }
    out.push_str(&format!(
        "rate_least_squares,{:.4E},{:.4E},{:.4E},{:.4E},{:.4E},{:.4E}\n",
        a.least_squares_rates[0],
        a.least_squares_rates[1],
        a.least_squares_rates[2],
        b.least_squares_rates[0],
        b.least_squares_rates[1],
        b.least_squares_rates[2]
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mms::reference_material;

    fn small_config() -> RunConfig {
        RunConfig {
            form: Form::Velocity,
            degree: 1,
            n: 3,
            diagonal: Diagonal::Right,
            t_final: 1.0,
            steps: Some(8),
            dt: None,
            material: reference_material(),
            problem: ProblemKind::Manufactured,
            solver: SolverOptions::default(),
            output: OutputConfig::default(),
        }
    }

    #[test]
    fn config_validation_messages() {
        let mut config = small_config();
        config.degree = 3;
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("degree"), "{err}");

        let mut config = small_config();
        config.steps = None;
        config.dt = Some(0.3);
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("dt"), "{err}");

        let mut config = small_config();
        config.steps = Some(8);
        config.dt = Some(1.0 / 8.0);
        assert_eq!(config.resolved_steps().unwrap(), 8);

        let mut config = small_config();
        config.material.phi0 = 0.9;
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("material"), "{err}");
    }

    #[test]
    fn config_json_round_trip() {
        let text = r#"{
            "form": "displacement",
            "degree": 2,
            "n": 4,
            "t_final": 1.0,
            "dt": 0.125,
            "material": {
                "rho": 1.0, "modulus": 1.0,
                "phi0": 0.5, "phi": [0.1, 0.4], "tau": [0.5, 1.5]
            },
            "problem": "manufactured"
        }"#;
        let config = RunConfig::from_json(text).unwrap();
        assert_eq!(config.resolved_steps().unwrap(), 8);
        assert_eq!(config.diagonal, Diagonal::Right);
        let rendered = serde_json::to_string(&config).unwrap();
        let back = RunConfig::from_json(&rendered).unwrap();
        assert_eq!(back.n, 4);
    }

    #[test]
    fn zero_problem_produces_zero_errors() {
        let mut config = small_config();
        config.problem = ProblemKind::Custom;
        let outcome = run(&config).unwrap();
        assert_eq!(outcome.errors.energy, 0.0);
        assert_eq!(outcome.errors.velocity_l2, 0.0);
        assert_eq!(outcome.errors.displacement_l2, 0.0);
    }

    #[test]
    fn runs_are_deterministic() {
        let dir = std::env::temp_dir().join("viscowave_driver_det");
        let _ = std::fs::remove_dir_all(&dir);
        let mut config = small_config();
        config.output.output_dir = Some(dir.join("a"));
        let first = run(&config).unwrap();
        config.output.output_dir = Some(dir.join("b"));
        let second = run(&config).unwrap();
        let a = std::fs::read(first.energy_csv.unwrap()).unwrap();
        let b = std::fs::read(second.energy_csv.unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(first.errors, second.errors);
    }

    #[test]
    fn report_csv_round_trip() {
        let rows = vec![
            (
                0.25,
                ErrorTriple {
                    energy: 2.2557e-3,
                    velocity_l2: 8.1101e-5,
                    displacement_l2: 6.9417e-5,
                },
            ),
            (
                0.125,
                ErrorTriple {
                    energy: 6.0301e-4,
                    velocity_l2: 1.0491e-5,
                    displacement_l2: 9.2260e-6,
                },
            ),
            (
                0.0625,
                ErrorTriple {
                    energy: 1.5566e-4,
                    velocity_l2: 1.2803e-6,
                    displacement_l2: 1.1954e-6,
                },
            ),
        ];
        let report = ConvergenceReport::from_rows(
            Form::Displacement,
            2,
            RefinementMode::FixedDt,
            Some(1.0 / 1200.0),
            rows,
        )
        .unwrap();
        let csv = report.to_csv();
        let parsed = ConvergenceReport::from_csv(&csv).unwrap();
        // Emission is idempotent after one parse (5 significant digits).
        assert_eq!(parsed.to_csv(), csv);
        assert_eq!(parsed.rows.len(), 3);
        assert_eq!(parsed.mode, RefinementMode::FixedDt);
        for (a, b) in report
            .least_squares_rates
            .iter()
            .zip(&parsed.least_squares_rates)
        {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn convergence_smoke() {
        let config = ConvergenceConfig {
            mode: RefinementMode::Coupled,
            levels: vec![2, 4, 8],
            forms: vec![Form::Displacement, Form::Velocity],
            degree: 1,
            n: None,
            dt: None,
            t_final: 1.0,
            material: reference_material(),
            diagonal: Diagonal::Right,
            solver: SolverOptions::default(),
            full_scale: false,
            workers: 2,
            output_dir: None,
        };
        let reports = convergence(&config).unwrap();
        assert_eq!(reports.len(), 2);
        for report in &reports {
            assert_eq!(report.rows.len(), 3);
            // Errors decrease under refinement.
            assert!(report.rows[0].1.energy > report.rows[2].1.energy);
        }
    }
}
