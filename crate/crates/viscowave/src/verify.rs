//! Runtime invariant suites: element-level exactness, discrete energy
//! identities, eliminated-vs-monolithic agreement and manufactured-data
//! self-consistency. The CLI `verify` subcommand and the acceptance tests
//! run these.

use crate::assembly::{element_mass_matrix, element_stiffness_matrix};
use crate::fespace::{build_space, quadrature};
use crate::linsolve::SolverOptions;
use crate::mesh::{unit_square_mesh, Diagonal, Mesh, Node, Triangle};
use crate::mms::{reference_material, ManufacturedProblem};
use crate::stepper::{Form, ProblemData, RunOptions, StepError, TimeGrid, TimeStepper};
use std::sync::Arc;

/// Result of one named check.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Measured quantity against its bound, for the log line.
    pub detail: String,
}

impl CheckOutcome {
    fn measured(name: &str, measured: f64, bound: f64) -> Self {
        Self {
            name: name.to_string(),
            passed: measured <= bound,
            detail: format!("measured {measured:.3e}, bound {bound:.1e}"),
        }
    }
}

fn single_reference_triangle(degree: usize) -> crate::fespace::FunctionSpace {
    let mesh = Mesh {
        nodes: vec![
            Node { x: 0.0, y: 0.0 },
            Node { x: 1.0, y: 0.0 },
            Node { x: 0.0, y: 1.0 },
        ],
        triangles: vec![Triangle {
            vertices: [0, 1, 2],
            area: 0.5,
        }],
        boundary_edges: vec![],
        n: 1,
        diagonal: Diagonal::Right,
    };
    build_space(mesh, degree).expect("reference triangle space")
}

/// P1 element matrices on the reference triangle against the analytic
/// values, and monomial exactness of every quadrature rule.
pub fn element_checks() -> Vec<CheckOutcome> {
    let mut checks = Vec::new();

    let space = single_reference_triangle(1);
    let rule = quadrature(2).expect("rule");
    let mass = element_mass_matrix(&space, 0, 1.0, &rule);
    let stiff = element_stiffness_matrix(&space, 0, 1.0, &rule);
    let mass_exact = [[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]];
    let stiff_exact = [[2.0, -1.0, -1.0], [-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]];
    let mut mass_dev = 0.0f64;
    let mut stiff_dev = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            mass_dev = mass_dev.max((mass[i][j] - mass_exact[i][j] / 24.0).abs());
            stiff_dev = stiff_dev.max((stiff[i][j] - stiff_exact[i][j] / 2.0).abs());
        }
    }
    checks.push(CheckOutcome::measured("p1 local mass matrix", mass_dev, 1e-14));
    checks.push(CheckOutcome::measured(
        "p1 local stiffness matrix",
        stiff_dev,
        1e-14,
    ));

    let factorial = |k: usize| (1..=k).map(|v| v as f64).product::<f64>().max(1.0);
    let mut worst = 0.0f64;
    for degree in 1..=10usize {
        let rule = quadrature(degree).expect("rule");
        for d in 0..=rule.exactness {
            for i in 0..=d {
                let j = d - i;
                let mut q = 0.0;
                for k in 0..rule.len() {
                    let (x, y) = rule.xy(k);
                    q += rule.weights[k] * x.powi(i as i32) * y.powi(j as i32);
                }
                let exact = factorial(i) * factorial(j) / factorial(i + j + 2);
                worst = worst.max((q - exact).abs());
            }
        }
    }
    checks.push(CheckOutcome::measured("quadrature monomial exactness", worst, 1e-14));
    checks
}

/// Discrete energy identity for one form: free oscillation from
/// `w0 = sin(xy)` on the 16x16 P2 mesh, 200 steps to `T = 1`.
pub fn energy_identity_check(form: Form) -> Result<CheckOutcome, StepError> {
    let space = build_space(unit_square_mesh(16, Diagonal::Right), 2).expect("space");
    let material = reference_material();
    let data = ProblemData {
        source: Arc::new(|_, _, _| 0.0),
        neumann: Arc::new(|_, _, _| 0.0),
        initial_displacement: Arc::new(|_, _| 0.0),
        initial_displacement_gradient: Arc::new(|_, _| [0.0, 0.0]),
        initial_velocity: Arc::new(|x, y| (x * y).sin()),
    };
    let stepper = TimeStepper::new(
        &space,
        &material,
        &data,
        form,
        TimeGrid::new(1.0, 200),
        &SolverOptions::default(),
    )?;
    let result = stepper.run(&RunOptions::new(200))?;
    Ok(CheckOutcome::measured(
        &format!("energy identity, {form} form"),
        result.final_residual,
        1e-10,
    ))
}

/// Both discrete energy identities.
pub fn energy_identity_checks() -> Result<Vec<CheckOutcome>, StepError> {
    Ok(vec![
        energy_identity_check(Form::Velocity)?,
        energy_identity_check(Form::Displacement)?,
    ])
}

/// Eliminated stepper against the monolithic block solve: 10 steps of the
/// manufactured problem on tiny meshes, every combination of mesh, degree
/// and form.
pub fn oracle_equivalence_checks() -> Result<Vec<CheckOutcome>, StepError> {
    let material = reference_material();
    let problem = ManufacturedProblem::new(material.clone()).expect("problem");
    let data = problem.problem_data();
    let mut checks = Vec::new();
    for n in [2usize, 4] {
        for degree in [1usize, 2] {
            for form in [Form::Displacement, Form::Velocity] {
                let space = build_space(unit_square_mesh(n, Diagonal::Right), degree)
                    .expect("space");
                let grid = TimeGrid::new(1.0, 10);
                let stepper = TimeStepper::new(
                    &space,
                    &material,
                    &data,
                    form,
                    grid,
                    &SolverOptions::default(),
                )?;
                let mut fast = stepper.initial_state();
                let mut slow = stepper.initial_state();
                let mut load = stepper.assemble_load(0.0);
                let mut deviation = 0.0f64;
                for step in 0..10 {
                    let load_next = stepper.assemble_load(grid.time(step + 1));
                    fast = stepper.step(&fast, &load, &load_next)?;
                    slow = stepper.monolithic_step(&slow, &load, &load_next)?;
                    deviation = deviation.max(fast.max_deviation(&slow));
                    load = load_next;
                }
                checks.push(CheckOutcome::measured(
                    &format!("oracle equivalence n={n} P{degree} {form}"),
                    deviation,
                    1e-9,
                ));
            }
        }
    }
    Ok(checks)
}

/// Fourth-order central difference of a scalar function.
fn central_derivative<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

/// Self-consistency of the manufactured data: the momentum residual
/// `rho u_tt - div sigma - f` with `div sigma` from finite differences of
/// the stress, and the boundary residual `sigma . n - g`, at random
/// space-time samples.
pub fn manufactured_consistency_checks(samples: usize, seed: u64) -> Vec<CheckOutcome> {
    // Small deterministic LCG; no external randomness needed here.
    let mut lcg_state = seed.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
    let mut uniform = move || {
        lcg_state = lcg_state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (lcg_state >> 11) as f64 / (1u64 << 53) as f64
    };
    let problem = ManufacturedProblem::new(reference_material()).expect("problem");
    let h = 1e-3;
    let mut pde_residual = 0.0f64;
    for _ in 0..samples {
        let x = uniform();
        let y = uniform();
        let t = uniform();
        let div_sigma = central_derivative(|s| problem.stress(s, y, t)[0], x, h)
            + central_derivative(|s| problem.stress(x, s, t)[1], y, h);
        let residual = problem.material().rho * problem.u_tt(x, y, t)
            - div_sigma
            - problem.source(x, y, t);
        pde_residual = pde_residual.max(residual.abs());
    }
    let mut boundary_residual = 0.0f64;
    for _ in 0..samples {
        let c = uniform();
        let t = uniform();
        let gx = problem.neumann(1.0, c, t, [1.0, 0.0]).expect("on boundary");
        boundary_residual = boundary_residual.max((problem.stress(1.0, c, t)[0] - gx).abs());
        let gy = problem.neumann(c, 1.0, t, [0.0, 1.0]).expect("on boundary");
        boundary_residual = boundary_residual.max((problem.stress(c, 1.0, t)[1] - gy).abs());
    }
    vec![
        CheckOutcome::measured("manufactured momentum residual", pde_residual, 1e-10),
        CheckOutcome::measured("manufactured boundary residual", boundary_residual, 1e-10),
    ]
}

/// Run every suite.
pub fn verify_all() -> Result<Vec<CheckOutcome>, StepError> {
    let mut checks = element_checks();
    checks.extend(manufactured_consistency_checks(50, 2024));
    checks.extend(energy_identity_checks()?);
    checks.extend(oracle_equivalence_checks()?);
    Ok(checks)
}
