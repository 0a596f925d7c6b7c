//! Crank-Nicolson time stepping for the viscoelastic wave equation in both
//! internal-variable formulations.
//!
//! Each scheme couples the momentum update to one recurrence per Prony term.
//! Because the internal-variable equations pair both sides through the
//! energy inner product `a(.,.)` over the same discrete space, they hold as
//! identities of coefficient vectors, so the internal variables can be
//! eliminated algebraically:
//!
//! * displacement form: `psi_q^{n+1} = alpha_q psi_q^n + beta_q (z^{n+1} + z^n)`
//! * velocity form:     `s_q^{n+1}  = alpha_q s_q^n  + gamma_q (z^{n+1} - z^n)`
//!
//! with `alpha_q = (tau_q/dt - 1/2) / (tau_q/dt + 1/2)` (so `|alpha_q| < 1`
//! for any positive `dt`, `tau_q`). Substituting the recurrence into the
//! momentum equation leaves a single solve per step with the constant matrix
//! `K = (2/dt^2) M + c_eff A`. The velocity is recovered from the imposed
//! midpoint relation `(w^{n+1} + w^n)/2 = (z^{n+1} - z^n)/dt`, never solved
//! for. A monolithic reference stepper solves the coupled block system
//! without elimination and certifies the sign bookkeeping.

use crate::assembly::{
    assemble_gradient_load, assemble_mass, assemble_neumann, assemble_source, assemble_stiffness,
    reduce_matrix, SparseSpdMatrix,
};
use crate::fespace::FunctionSpace;
use crate::linsolve::{prepare, DenseMatrix, SolveError, SolverOptions, SpdSolverContext};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StepError {
    #[error("invalid material: {0}")]
    InvalidMaterial(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("monolithic oracle limited to dim*(terms+2) <= {limit}, got {got}")]
    MonolithicTooLarge { got: usize, limit: usize },
}

/// Which internal-variable formulation drives the scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    Displacement,
    Velocity,
}

impl std::fmt::Display for Form {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Form::Displacement => write!(f, "displacement"),
            Form::Velocity => write!(f, "velocity"),
        }
    }
}

/// Generalized Maxwell material: density, modulus and the Prony series
/// `phi(t) = phi0 + sum_q phi_q exp(-t/tau_q)`, normalized to `phi(0) = 1`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MaterialModel {
    pub rho: f64,
    pub modulus: f64,
    pub phi0: f64,
    pub phi: Vec<f64>,
    pub tau: Vec<f64>,
}

impl MaterialModel {
    pub fn new(
        rho: f64,
        modulus: f64,
        phi0: f64,
        phi: Vec<f64>,
        tau: Vec<f64>,
    ) -> Result<Self, StepError> {
        let m = Self {
            rho,
            modulus,
            phi0,
            phi,
            tau,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), StepError> {
        let err = |msg: String| Err(StepError::InvalidMaterial(msg));
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.rho) {
            return err(format!("rho must be positive, got {}", self.rho));
        }
        if !positive(self.modulus) {
            return err(format!("modulus must be positive, got {}", self.modulus));
        }
        if !positive(self.phi0) {
            return err(format!("phi0 must be positive, got {}", self.phi0));
        }
        if self.phi.len() != self.tau.len() {
            return err(format!(
                "phi ({}) and tau ({}) lengths differ",
                self.phi.len(),
                self.tau.len()
            ));
        }
        if let Some(p) = self.phi.iter().find(|&&p| !positive(p)) {
            return err(format!("Prony coefficients must be positive, got {p}"));
        }
        if let Some(t) = self.tau.iter().find(|&&t| !positive(t)) {
            return err(format!("delay times must be positive, got {t}"));
        }
        let total = self.phi0 + self.phi.iter().sum::<f64>();
        if (total - 1.0).abs() > 1e-14 {
            return err(format!("Prony series must be normalized to 1, sums to {total:.17}"));
        }
        Ok(())
    }

    pub fn num_terms(&self) -> usize {
        self.phi.len()
    }

    /// Stress relaxation function `phi(t)`.
    pub fn relaxation(&self, t: f64) -> f64 {
        self.phi0
            + self
                .phi
                .iter()
                .zip(&self.tau)
                .map(|(p, tau)| p * (-t / tau).exp())
                .sum::<f64>()
    }
}

/// Uniform time grid on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimeGrid {
    pub t_final: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, steps: usize) -> Self {
        assert!(t_final > 0.0 && steps > 0);
        Self { t_final, steps }
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt()
    }
}

/// Per-step recurrence coefficients derived from the scheme equations.
#[derive(Debug, Clone)]
pub struct SchemeCoefficients {
    pub form: Form,
    /// Decay factor of each internal-variable recurrence, `|alpha_q| < 1`.
    pub alpha: Vec<f64>,
    /// Displacement-form weight of `z^{n+1} + z^n`.
    pub beta: Vec<f64>,
    /// Velocity-form weight of `z^{n+1} - z^n`.
    pub gamma: Vec<f64>,
    /// Stiffness factor of the constant system matrix `K = (2/dt^2) M + c_eff A`.
    pub c_eff: f64,
}

impl SchemeCoefficients {
    pub fn new(material: &MaterialModel, dt: f64, form: Form) -> Self {
        assert!(dt > 0.0);
        let mut alpha = Vec::with_capacity(material.num_terms());
        let mut beta = Vec::with_capacity(material.num_terms());
        let mut gamma = Vec::with_capacity(material.num_terms());
        for (&phi, &tau) in material.phi.iter().zip(&material.tau) {
            let r = tau / dt;
            alpha.push((r - 0.5) / (r + 0.5));
            beta.push(0.5 * phi / (r + 0.5));
            gamma.push(phi * r / (r + 0.5));
        }
        let c_eff = match form {
            Form::Displacement => 0.5 * (1.0 - beta.iter().sum::<f64>()),
            Form::Velocity => 0.5 * (material.phi0 + gamma.iter().sum::<f64>()),
        };
        debug_assert!(alpha.iter().all(|a| a.abs() < 1.0));
        debug_assert!(c_eff > 0.0);
        Self {
            form,
            alpha,
            beta,
            gamma,
            c_eff,
        }
    }
}

/// Displacement-form recurrence: `psi_q^{n+1} = alpha_q psi_q^n + beta_q (z^{n+1} + z^n)`.
pub fn update_internal_displacement(
    psi: &[f64],
    z_n: &[f64],
    z_np1: &[f64],
    coeffs: &SchemeCoefficients,
    q: usize,
) -> Vec<f64> {
    let (a, b) = (coeffs.alpha[q], coeffs.beta[q]);
    psi.iter()
        .zip(z_n.iter().zip(z_np1))
        .map(|(&p, (&zn, &znp))| a * p + b * (znp + zn))
        .collect()
}

/// Velocity-form recurrence: `s_q^{n+1} = alpha_q s_q^n + gamma_q (z^{n+1} - z^n)`.
pub fn update_internal_velocity(
    s: &[f64],
    z_n: &[f64],
    z_np1: &[f64],
    coeffs: &SchemeCoefficients,
    q: usize,
) -> Vec<f64> {
    let (a, g) = (coeffs.alpha[q], coeffs.gamma[q]);
    s.iter()
        .zip(z_n.iter().zip(z_np1))
        .map(|(&sq, (&zn, &znp))| a * sq + g * (znp - zn))
        .collect()
}

/// History part of the velocity-form load: `-sum_q phi_q exp(-t/tau_q) A z0`,
/// valid because `z0` is the elliptic projection of `u0`.
pub fn velocity_history_load(az0: &[f64], material: &MaterialModel, t: f64) -> Vec<f64> {
    let factor: f64 = material
        .phi
        .iter()
        .zip(&material.tau)
        .map(|(p, tau)| p * (-t / tau).exp())
        .sum();
    az0.iter().map(|&v| -factor * v).collect()
}

/// Problem data: source, Neumann datum and initial conditions. The gradient
/// of the initial displacement feeds its elliptic projection.
#[derive(Clone)]
pub struct ProblemData {
    pub source: Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>,
    pub neumann: Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>,
    pub initial_displacement: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    pub initial_displacement_gradient: Arc<dyn Fn(f64, f64) -> [f64; 2] + Send + Sync>,
    pub initial_velocity: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
}

impl ProblemData {
    pub fn zero() -> Self {
        Self {
            source: Arc::new(|_, _, _| 0.0),
            neumann: Arc::new(|_, _, _| 0.0),
            initial_displacement: Arc::new(|_, _| 0.0),
            initial_displacement_gradient: Arc::new(|_, _| [0.0, 0.0]),
            initial_velocity: Arc::new(|_, _| 0.0),
        }
    }
}

/// Discrete state at one time level; all vectors live on the free dofs.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub step: usize,
    /// Displacement coefficients.
    pub z: Vec<f64>,
    /// Velocity coefficients.
    pub w: Vec<f64>,
    /// One internal-variable vector per Prony term.
    pub internal: Vec<Vec<f64>>,
    pub form: Form,
}

impl SolverState {
    pub fn max_deviation(&self, other: &SolverState) -> f64 {
        let mut max = 0.0f64;
        let pairs = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max)
        };
        max = max.max(pairs(&self.z, &other.z));
        max = max.max(pairs(&self.w, &other.w));
        for (a, b) in self.internal.iter().zip(&other.internal) {
            max = max.max(pairs(a, b));
        }
        max
    }
}

/// A recorded trajectory: states and the reduced load vectors they saw.
pub struct Trajectory {
    pub form: Form,
    pub dt: f64,
    pub states: Vec<SolverState>,
    pub loads: Vec<Vec<f64>>,
}

/// Scalar energy components of one recorded step.
#[derive(Debug, Clone, Copy)]
pub struct EnergyBreakdown {
    pub step: usize,
    pub t: f64,
    /// `rho ||W||^2`
    pub kinetic: f64,
    /// `||Z||_V^2` (displacement form) or `phi0 ||Z||_V^2` (velocity form)
    pub elastic: f64,
    /// `sum_q (1/phi_q) ||.||_V^2` of the internal variables
    pub internal: f64,
    /// cumulative dissipation sum
    pub dissipation: f64,
    /// cumulative load work
    pub load_work: f64,
    /// relative residual of the discrete energy identity
    pub identity_residual: f64,
}

/// Incremental bookkeeping of the exact discrete energy identity.
pub struct EnergyTracker {
    mass: Arc<SparseSpdMatrix>,
    stiffness: Arc<SparseSpdMatrix>,
    material: MaterialModel,
    form: Form,
    dt: f64,
    initial_energy: f64,
    dissipation: f64,
    load_work: f64,
    /// running max of sqrt(rho)||W|| + ||Z||_V
    pub max_state_norm: f64,
}

impl EnergyTracker {
    pub fn new(
        mass: Arc<SparseSpdMatrix>,
        stiffness: Arc<SparseSpdMatrix>,
        material: MaterialModel,
        form: Form,
        dt: f64,
        initial: &SolverState,
    ) -> Self {
        let kinetic = mass.bilinear(&initial.w, &initial.w);
        let elastic_factor = match form {
            Form::Displacement => 1.0,
            Form::Velocity => material.phi0,
        };
        let elastic = elastic_factor * stiffness.bilinear(&initial.z, &initial.z);
        let mut tracker = Self {
            mass,
            stiffness,
            material,
            form,
            dt,
            initial_energy: kinetic + elastic,
            dissipation: 0.0,
            load_work: 0.0,
            max_state_norm: 0.0,
        };
        tracker.observe_norm(initial);
        tracker
    }

    fn observe_norm(&mut self, state: &SolverState) {
        let norm = self.mass.bilinear(&state.w, &state.w).sqrt()
            + self.stiffness.bilinear(&state.z, &state.z).sqrt();
        self.max_state_norm = self.max_state_norm.max(norm);
    }

    /// Fold in one transition `prev -> next` with the loads at both ends.
    pub fn advance(
        &mut self,
        prev: &SolverState,
        next: &SolverState,
        load_prev: &[f64],
        load_next: &[f64],
    ) {
        let wsum: Vec<f64> = next.w.iter().zip(&prev.w).map(|(a, b)| a + b).collect();
        let fdot: f64 = load_next
            .iter()
            .zip(load_prev)
            .zip(&wsum)
            .map(|((fa, fb), w)| (fa + fb) * w)
            .sum();
        self.load_work += 0.5 * self.dt * fdot;
        for q in 0..self.material.num_terms() {
            let (phi, tau) = (self.material.phi[q], self.material.tau[q]);
            match self.form {
                Form::Displacement => {
                    let diff: Vec<f64> = next.internal[q]
                        .iter()
                        .zip(&prev.internal[q])
                        .map(|(a, b)| a - b)
                        .collect();
                    self.dissipation +=
                        2.0 * tau / (self.dt * phi) * self.stiffness.bilinear(&diff, &diff);
                }
                Form::Velocity => {
                    let sum: Vec<f64> = next.internal[q]
                        .iter()
                        .zip(&prev.internal[q])
                        .map(|(a, b)| a + b)
                        .collect();
                    self.dissipation +=
                        self.dt / (2.0 * tau * phi) * self.stiffness.bilinear(&sum, &sum);
                }
            }
        }
        self.observe_norm(next);
    }

    /// Energy components and identity residual at the given state.
    pub fn breakdown(&self, state: &SolverState) -> EnergyBreakdown {
        let kinetic = self.mass.bilinear(&state.w, &state.w);
        let elastic_factor = match self.form {
            Form::Displacement => 1.0,
            Form::Velocity => self.material.phi0,
        };
        let elastic = elastic_factor * self.stiffness.bilinear(&state.z, &state.z);
        let mut internal = 0.0;
        let mut cross = 0.0;
        for q in 0..self.material.num_terms() {
            let v = &state.internal[q];
            internal += self.stiffness.bilinear(v, v) / self.material.phi[q];
            if self.form == Form::Displacement {
                cross += 2.0 * self.stiffness.bilinear(&state.z, v);
            }
        }
        let lhs = kinetic + elastic + internal + self.dissipation - cross;
        let rhs = self.initial_energy + self.load_work;
        EnergyBreakdown {
            step: state.step,
            t: state.step as f64 * self.dt,
            kinetic,
            elastic,
            internal,
            dissipation: self.dissipation,
            load_work: self.load_work,
            identity_residual: (lhs - rhs).abs() / rhs.abs().max(1.0),
        }
    }
}

/// Relative residual of the exact discrete energy identity over a recorded
/// trajectory, evaluated at the final state.
pub fn energy_identity_residual(
    trajectory: &Trajectory,
    mass: &Arc<SparseSpdMatrix>,
    stiffness: &Arc<SparseSpdMatrix>,
    material: &MaterialModel,
) -> f64 {
    assert!(!trajectory.states.is_empty());
    assert_eq!(trajectory.states.len(), trajectory.loads.len());
    let mut tracker = EnergyTracker::new(
        mass.clone(),
        stiffness.clone(),
        material.clone(),
        trajectory.form,
        trajectory.dt,
        &trajectory.states[0],
    );
    for n in 0..trajectory.states.len() - 1 {
        tracker.advance(
            &trajectory.states[n],
            &trajectory.states[n + 1],
            &trajectory.loads[n],
            &trajectory.loads[n + 1],
        );
    }
    tracker
        .breakdown(trajectory.states.last().unwrap())
        .identity_residual
}

/// Options for a time-stepping run.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub steps: usize,
    /// Keep all states and loads (only sensible for small problems).
    pub record_trajectory: bool,
    /// Record an energy breakdown every this many steps; 0 records only the
    /// final one.
    pub energy_stride: usize,
}

impl RunOptions {
    pub fn new(steps: usize) -> Self {
        Self {
            steps,
            record_trajectory: false,
            energy_stride: 0,
        }
    }
}

pub struct RunResult {
    pub final_state: SolverState,
    pub energy: Vec<EnergyBreakdown>,
    pub trajectory: Option<Trajectory>,
    /// Residual of the discrete energy identity at the final step.
    pub final_residual: f64,
    /// Running max of sqrt(rho)||W^n|| + ||Z^n||_V over the run.
    pub max_state_norm: f64,
}

/// Time stepper bound to one space, material, formulation and step size.
pub struct TimeStepper<'a> {
    space: &'a FunctionSpace,
    data: &'a ProblemData,
    material: MaterialModel,
    form: Form,
    grid: TimeGrid,
    coeffs: SchemeCoefficients,
    mass: Arc<SparseSpdMatrix>,
    stiffness: Arc<SparseSpdMatrix>,
    system: SpdSolverContext,
    initial: SolverState,
    /// `A z^0` on free dofs; the velocity-form history load.
    az0: Vec<f64>,
}

impl<'a> TimeStepper<'a> {
    pub fn new(
        space: &'a FunctionSpace,
        material: &MaterialModel,
        data: &'a ProblemData,
        form: Form,
        grid: TimeGrid,
        solver: &SolverOptions,
    ) -> Result<Self, StepError> {
        material.validate()?;
        let mass = Arc::new(reduce_matrix(space, &assemble_mass(space, material.rho)));
        let stiffness = Arc::new(reduce_matrix(
            space,
            &assemble_stiffness(space, material.modulus),
        ));
        let dt = grid.dt();
        let coeffs = SchemeCoefficients::new(material, dt, form);
        let system = prepare(
            Arc::new(SparseSpdMatrix::linear_combination(
                2.0 / (dt * dt),
                &mass,
                coeffs.c_eff,
                &stiffness,
            )),
            solver,
        )?;

        // Discrete initial data: elliptic projection of u0, L2 projection of
        // w0, internal variables zero.
        let b_a = space.restrict(&assemble_gradient_load(
            space,
            |x, y| (data.initial_displacement_gradient)(x, y),
            material.modulus,
        ));
        let z0 = prepare(stiffness.clone(), solver)?.solve(&b_a)?;
        let b_m = space.restrict(&crate::assembly::assemble_source_with_exactness(
            space,
            |x, y, _| (data.initial_velocity)(x, y) * material.rho,
            0.0,
            crate::assembly::data_exactness(space.degree()),
        ));
        let w0 = prepare(mass.clone(), solver)?.solve(&b_m)?;
        let az0 = stiffness.apply(&z0);
        let initial = SolverState {
            step: 0,
            z: z0,
            w: w0,
            internal: vec![vec![0.0; mass.dim()]; material.num_terms()],
            form,
        };

        Ok(Self {
            space,
            data,
            material: material.clone(),
            form,
            grid,
            coeffs,
            mass,
            stiffness,
            system,
            initial,
            az0,
        })
    }

    pub fn initial_state(&self) -> SolverState {
        self.initial.clone()
    }

    pub fn coefficients(&self) -> &SchemeCoefficients {
        &self.coeffs
    }

    pub fn mass(&self) -> &Arc<SparseSpdMatrix> {
        &self.mass
    }

    pub fn stiffness(&self) -> &Arc<SparseSpdMatrix> {
        &self.stiffness
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn space(&self) -> &FunctionSpace {
        self.space
    }

    pub fn material(&self) -> &MaterialModel {
        &self.material
    }

    /// Reduced load vector at time `t`: `F_d` for the displacement form,
    /// `F_v = F_d - sum_q phi_q exp(-t/tau_q) a(u0, .)` for the velocity
    /// form.
    pub fn assemble_load(&self, t: f64) -> Vec<f64> {
        let mut full = assemble_source(self.space, |x, y, s| (self.data.source)(x, y, s), t);
        let neumann = assemble_neumann(self.space, |x, y, s| (self.data.neumann)(x, y, s), t);
        for (a, b) in full.iter_mut().zip(&neumann) {
            *a += b;
        }
        let mut reduced = self.space.restrict(&full);
        if self.form == Form::Velocity {
            let history = velocity_history_load(&self.az0, &self.material, t);
            for (a, b) in reduced.iter_mut().zip(&history) {
                *a += b;
            }
        }
        reduced
    }

    /// One Crank-Nicolson step with the internal variables eliminated.
    pub fn step(
        &self,
        state: &SolverState,
        load_n: &[f64],
        load_np1: &[f64],
    ) -> Result<SolverState, StepError> {
        let dt = self.grid.dt();
        let dim = self.mass.dim();
        let mz = self.mass.apply(&state.z);
        let mw = self.mass.apply(&state.w);
        let az = self.stiffness.apply(&state.z);

        let mut rhs = vec![0.0; dim];
        for i in 0..dim {
            rhs[i] = 0.5 * (load_n[i] + load_np1[i]) + 2.0 / (dt * dt) * mz[i]
                + 2.0 / dt * mw[i];
        }
        match self.form {
            Form::Displacement => {
                // + (1/2) sum_q (1 + alpha_q) A psi_q^n - c_eff A z^n
                for q in 0..self.material.num_terms() {
                    let apsi = self.stiffness.apply(&state.internal[q]);
                    let w = 0.5 * (1.0 + self.coeffs.alpha[q]);
                    for i in 0..dim {
                        rhs[i] += w * apsi[i];
                    }
                }
                for i in 0..dim {
                    rhs[i] -= self.coeffs.c_eff * az[i];
                }
            }
            Form::Velocity => {
                // - (1/2) sum_q (1 + alpha_q) A s_q^n + (sum gamma/2 - phi0/2) A z^n
                for q in 0..self.material.num_terms() {
                    let asq = self.stiffness.apply(&state.internal[q]);
                    let w = 0.5 * (1.0 + self.coeffs.alpha[q]);
                    for i in 0..dim {
                        rhs[i] -= w * asq[i];
                    }
                }
                let zc = 0.5 * (self.coeffs.gamma.iter().sum::<f64>() - self.material.phi0);
                for i in 0..dim {
                    rhs[i] += zc * az[i];
                }
            }
        }

        let z_next = self.system.solve(&rhs)?;
        let w_next: Vec<f64> = z_next
            .iter()
            .zip(&state.z)
            .zip(&state.w)
            .map(|((zn, zo), wo)| 2.0 / dt * (zn - zo) - wo)
            .collect();
        let internal = (0..self.material.num_terms())
            .map(|q| match self.form {
                Form::Displacement => {
                    update_internal_displacement(&state.internal[q], &state.z, &z_next, &self.coeffs, q)
                }
                Form::Velocity => {
                    update_internal_velocity(&state.internal[q], &state.z, &z_next, &self.coeffs, q)
                }
            })
            .collect();
        Ok(SolverState {
            step: state.step + 1,
            z: z_next,
            w: w_next,
            internal,
            form: self.form,
        })
    }

    /// Reference step: solve the coupled block system in `(z, psi_1..psi_Q)`
    /// without eliminating the internal variables. Must agree with
    /// [`TimeStepper::step`] to solver accuracy.
    pub fn monolithic_step(
        &self,
        state: &SolverState,
        load_n: &[f64],
        load_np1: &[f64],
    ) -> Result<SolverState, StepError> {
        let dim = self.mass.dim();
        let terms = self.material.num_terms();
        let limit = 10_000;
        if dim * (terms + 2) > limit {
            return Err(StepError::MonolithicTooLarge {
                got: dim * (terms + 2),
                limit,
            });
        }
        let dt = self.grid.dt();
        let mass = self.mass.to_dense();
        let stiff = self.stiffness.to_dense();
        let n_blocks = terms + 1;
        let mut block = DenseMatrix::zeros(dim * n_blocks);
        let mut rhs = vec![0.0; dim * n_blocks];

        let mz = self.mass.apply(&state.z);
        let mw = self.mass.apply(&state.w);
        let az = self.stiffness.apply(&state.z);

        // Momentum row.
        let phi_factor = match self.form {
            Form::Displacement => 0.5,
            Form::Velocity => 0.5 * self.material.phi0,
        };
        for i in 0..dim {
            for j in 0..dim {
                *block.at_mut(i, j) = 2.0 / (dt * dt) * mass[i][j] + phi_factor * stiff[i][j];
            }
            rhs[i] = 0.5 * (load_n[i] + load_np1[i]) + 2.0 / (dt * dt) * mz[i] + 2.0 / dt * mw[i]
                - phi_factor * az[i];
        }
        for q in 0..terms {
            let col = (q + 1) * dim;
            let sign = match self.form {
                Form::Displacement => -0.5,
                Form::Velocity => 0.5,
            };
            let a_int = self.stiffness.apply(&state.internal[q]);
            for i in 0..dim {
                for j in 0..dim {
                    *block.at_mut(i, col + j) = sign * stiff[i][j];
                }
                rhs[i] -= sign * a_int[i];
            }
        }

        // One internal-variable row per Prony term.
        for q in 0..terms {
            let row = (q + 1) * dim;
            let (phi, tau) = (self.material.phi[q], self.material.tau[q]);
            let r = tau / dt;
            let z_coeff = match self.form {
                Form::Displacement => 0.5 * phi,
                Form::Velocity => tau * phi / dt,
            };
            let a_int = self.stiffness.apply(&state.internal[q]);
            for i in 0..dim {
                for j in 0..dim {
                    *block.at_mut(row + i, j) = -z_coeff * stiff[i][j];
                    *block.at_mut(row + i, (q + 1) * dim + j) = (r + 0.5) * stiff[i][j];
                }
                let z_hist = match self.form {
                    Form::Displacement => z_coeff * az[i],
                    Form::Velocity => -z_coeff * az[i],
                };
                rhs[row + i] = (r - 0.5) * a_int[i] + z_hist;
            }
        }

        let solution = block.solve(&rhs)?;
        let z_next = solution[..dim].to_vec();
        let w_next: Vec<f64> = z_next
            .iter()
            .zip(&state.z)
            .zip(&state.w)
            .map(|((zn, zo), wo)| 2.0 / dt * (zn - zo) - wo)
            .collect();
        let internal: Vec<Vec<f64>> = (0..terms)
            .map(|q| solution[(q + 1) * dim..(q + 2) * dim].to_vec())
            .collect();
        Ok(SolverState {
            step: state.step + 1,
            z: z_next,
            w: w_next,
            internal,
            form: self.form,
        })
    }

    /// Run the scheme for `options.steps` steps with incremental energy
    /// bookkeeping.
    pub fn run(&self, options: &RunOptions) -> Result<RunResult, StepError> {
        self.run_observed(options, |_, _| {})
    }

    /// Like [`TimeStepper::run`], invoking the observer with every state
    /// (including the initial one) as it is produced.
    pub fn run_observed<F>(&self, options: &RunOptions, mut observer: F) -> Result<RunResult, StepError>
    where
        F: FnMut(usize, &SolverState),
    {
        let mut state = self.initial_state();
        let mut load = self.assemble_load(0.0);
        let mut tracker = EnergyTracker::new(
            self.mass.clone(),
            self.stiffness.clone(),
            self.material.clone(),
            self.form,
            self.grid.dt(),
            &state,
        );
        let mut energy = Vec::new();
        let mut trajectory = options.record_trajectory.then(|| Trajectory {
            form: self.form,
            dt: self.grid.dt(),
            states: vec![state.clone()],
            loads: vec![load.clone()],
        });
        if options.energy_stride > 0 {
            energy.push(tracker.breakdown(&state));
        }
        observer(0, &state);
        for n in 0..options.steps {
            let load_next = self.assemble_load(self.grid.time(n + 1));
            let next = self.step(&state, &load, &load_next)?;
            tracker.advance(&state, &next, &load, &load_next);
            observer(n + 1, &next);
            if let Some(t) = trajectory.as_mut() {
                t.states.push(next.clone());
                t.loads.push(load_next.clone());
            }
            if options.energy_stride > 0 && (n + 1) % options.energy_stride == 0 {
                energy.push(tracker.breakdown(&next));
            }
            state = next;
            load = load_next;
        }
        let final_breakdown = tracker.breakdown(&state);
        if energy.last().map(|e| e.step) != Some(state.step) {
            energy.push(final_breakdown);
        }
        Ok(RunResult {
            final_residual: final_breakdown.identity_residual,
            max_state_norm: tracker.max_state_norm,
            final_state: state,
            energy,
            trajectory,
        })
    }
}
