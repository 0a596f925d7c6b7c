//! Manufactured exact solution, derived data, error norms and convergence
//! rates.
//!
//! The shipped problem uses `u(x,y,t) = exp(-t) sin(xy)` on the unit square
//! with the two-term Prony material `phi0 = 0.5, phi = (0.1, 0.4),
//! tau = (0.5, 1.5)` and `rho = D = 1`. Substituting `u` into the governing
//! equations yields closed forms for the internal variables, the source `f`
//! and the Neumann datum `g_N`, so discretization errors can be measured by
//! quadrature against exact expressions.

use crate::fespace::{quadrature, FunctionSpace};
use crate::stepper::{MaterialModel, ProblemData, SolverState};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MmsError {
    /// `tau = 1` is a removable singularity of the closed-form kernel and
    /// outside the experiment range.
    #[error("delay time tau = 1 is not supported by the closed-form kernel")]
    UnitDelayTime,
    #[error("point ({0}, {1}) is not on the Neumann boundary")]
    NotOnNeumannBoundary(f64, f64),
    #[error("convergence rates need at least two positive errors, got {0}")]
    InvalidRateInput(String),
}

/// The material of the reference experiment.
pub fn reference_material() -> MaterialModel {
    MaterialModel::new(1.0, 1.0, 0.5, vec![0.1, 0.4], vec![0.5, 1.5]).expect("reference material")
}

/// Separable coefficient of the displacement-form internal variable:
/// `psi_q(x,y,t) = c_q(t) sin(xy)` with
/// `c_q(t) = phi_q (exp(-t) - exp(-t/tau_q)) / (1 - tau_q)`, `tau_q != 1`.
pub fn exact_c_q(t: f64, phi_q: f64, tau_q: f64) -> Result<f64, MmsError> {
    if (tau_q - 1.0).abs() < 1e-12 {
        return Err(MmsError::UnitDelayTime);
    }
    Ok(phi_q * ((-t).exp() - (-t / tau_q).exp()) / (1.0 - tau_q))
}

/// Time derivative of [`exact_c_q`].
pub fn exact_c_q_dot(t: f64, phi_q: f64, tau_q: f64) -> Result<f64, MmsError> {
    if (tau_q - 1.0).abs() < 1e-12 {
        return Err(MmsError::UnitDelayTime);
    }
    Ok(phi_q * (-(-t).exp() + (-t / tau_q).exp() / tau_q) / (1.0 - tau_q))
}

/// Separable coefficient of the velocity-form internal variable,
/// `zeta_q(x,y,t) = d_q(t) sin(xy)`, via
/// `psi_q = phi_q u - phi_q exp(-t/tau_q) u0 - zeta_q`.
pub fn exact_zeta_q(t: f64, phi_q: f64, tau_q: f64) -> Result<f64, MmsError> {
    Ok(phi_q * (-t).exp() - phi_q * (-t / tau_q).exp() - exact_c_q(t, phi_q, tau_q)?)
}

pub fn exact_zeta_q_dot(t: f64, phi_q: f64, tau_q: f64) -> Result<f64, MmsError> {
    Ok(-phi_q * (-t).exp() + phi_q / tau_q * (-t / tau_q).exp()
        - exact_c_q_dot(t, phi_q, tau_q)?)
}

/// Closed-form exact solution fields used by the error norms.
#[derive(Clone)]
pub struct ExactSolution {
    pub value: Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>,
    pub gradient: Arc<dyn Fn(f64, f64, f64) -> [f64; 2] + Send + Sync>,
    pub velocity: Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>,
}

impl ExactSolution {
    pub fn zero() -> Self {
        Self {
            value: Arc::new(|_, _, _| 0.0),
            gradient: Arc::new(|_, _, _| [0.0, 0.0]),
            velocity: Arc::new(|_, _, _| 0.0),
        }
    }
}

/// The manufactured problem for a given (normalized) material.
#[derive(Clone)]
pub struct ManufacturedProblem {
    material: MaterialModel,
}

impl ManufacturedProblem {
    pub fn new(material: MaterialModel) -> Result<Self, MmsError> {
        if material.tau.iter().any(|&tau| (tau - 1.0).abs() < 1e-12) {
            return Err(MmsError::UnitDelayTime);
        }
        Ok(Self { material })
    }

    pub fn material(&self) -> &MaterialModel {
        &self.material
    }

    pub fn u(&self, x: f64, y: f64, t: f64) -> f64 {
        (-t).exp() * (x * y).sin()
    }

    pub fn u_t(&self, x: f64, y: f64, t: f64) -> f64 {
        -self.u(x, y, t)
    }

    pub fn u_tt(&self, x: f64, y: f64, t: f64) -> f64 {
        self.u(x, y, t)
    }

    pub fn grad_u(&self, x: f64, y: f64, t: f64) -> [f64; 2] {
        let e = (-t).exp();
        let c = (x * y).cos();
        [e * y * c, e * x * c]
    }

    /// `exp(-t) - sum_q c_q(t)`: the time factor of the relaxed gradient.
    pub fn memory_factor(&self, t: f64) -> f64 {
        let sum_c: f64 = self
            .material
            .phi
            .iter()
            .zip(&self.material.tau)
            .map(|(&phi, &tau)| exact_c_q(t, phi, tau).expect("tau != 1 checked at build"))
            .sum();
        (-t).exp() - sum_c
    }

    /// Stress vector `sigma = D grad(u - sum_q psi_q)`.
    pub fn stress(&self, x: f64, y: f64, t: f64) -> [f64; 2] {
        let f = self.material.modulus * self.memory_factor(t);
        let c = (x * y).cos();
        [f * y * c, f * x * c]
    }

    /// Source `f = rho u_tt - div sigma`, identical for both formulations.
    pub fn source(&self, x: f64, y: f64, t: f64) -> f64 {
        let s = (x * y).sin();
        self.material.rho * (-t).exp() * s
            + self.material.modulus * (x * x + y * y) * self.memory_factor(t) * s
    }

    /// Neumann datum `g = sigma . n` at a point of the Neumann boundary
    /// (`x = 1` or `y = 1`).
    pub fn neumann(&self, x: f64, y: f64, t: f64, normal: [f64; 2]) -> Result<f64, MmsError> {
        const TOL: f64 = 1e-9;
        if (x - 1.0).abs() > TOL && (y - 1.0).abs() > TOL {
            return Err(MmsError::NotOnNeumannBoundary(x, y));
        }
        let sigma = self.stress(x, y, t);
        Ok(sigma[0] * normal[0] + sigma[1] * normal[1])
    }

    /// Problem data closures for the stepper.
    pub fn problem_data(&self) -> ProblemData {
        let for_source = self.clone();
        let for_neumann = self.clone();
        let for_grad = self.clone();
        ProblemData {
            source: Arc::new(move |x, y, t| for_source.source(x, y, t)),
            // Route by side; evaluation only happens on Neumann edges.
            neumann: Arc::new(move |x, y, t| {
                if (x - 1.0).abs() < 1e-9 {
                    for_neumann.stress(x, y, t)[0]
                } else if (y - 1.0).abs() < 1e-9 {
                    for_neumann.stress(x, y, t)[1]
                } else {
                    0.0
                }
            }),
            initial_displacement: Arc::new(|x, y| (x * y).sin()),
            initial_displacement_gradient: Arc::new(move |x, y| for_grad.grad_u(x, y, 0.0)),
            initial_velocity: Arc::new(|x, y| -(x * y).sin()),
        }
    }

    pub fn exact_solution(&self) -> ExactSolution {
        let a = self.clone();
        let b = self.clone();
        let c = self.clone();
        ExactSolution {
            value: Arc::new(move |x, y, t| a.u(x, y, t)),
            gradient: Arc::new(move |x, y, t| b.grad_u(x, y, t)),
            velocity: Arc::new(move |x, y, t| c.u_t(x, y, t)),
        }
    }
}

/// Final-time error norms, the three columns of the convergence tables.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ErrorTriple {
    /// `||u(T) - Z||_V`
    pub energy: f64,
    /// `||u_t(T) - W||_{L2}`
    pub velocity_l2: f64,
    /// `||u(T) - Z||_{L2}`
    pub displacement_l2: f64,
}

impl ErrorTriple {
    pub fn as_array(&self) -> [f64; 3] {
        [self.energy, self.velocity_l2, self.displacement_l2]
    }
}

/// Measure the three error norms of a discrete state against the exact
/// solution by quadrature of exactness `2 s1 + 3` against the closed forms.
pub fn error_norms(
    space: &FunctionSpace,
    state: &SolverState,
    t: f64,
    exact: &ExactSolution,
    modulus: f64,
) -> ErrorTriple {
    error_norms_with_exactness(
        space,
        state,
        t,
        exact,
        modulus,
        crate::assembly::data_exactness(space.degree()),
    )
}

/// [`error_norms`] with an explicit quadrature exactness, for checking that
/// the default degree is already sufficient.
pub fn error_norms_with_exactness(
    space: &FunctionSpace,
    state: &SolverState,
    t: f64,
    exact: &ExactSolution,
    modulus: f64,
    exactness: usize,
) -> ErrorTriple {
    let rule = quadrature(exactness).expect("error rule");
    let z = space.expand(&state.z);
    let w = space.expand(&state.w);
    let local = space.element().local_dofs();
    let mut energy_sq = 0.0;
    let mut vel_sq = 0.0;
    let mut disp_sq = 0.0;
    for tri in 0..space.mesh().triangles.len() {
        let dofs = space.elem_dofs(tri);
        let scale = 2.0 * space.mesh().triangles[tri].area;
        for k in 0..rule.len() {
            let (xi, eta) = rule.xy(k);
            let p = space.map_to_physical(tri, xi, eta);
            let shape = space.element().shape(xi, eta);
            let grads = space.physical_gradients(tri, xi, eta);
            let mut zh = 0.0;
            let mut wh = 0.0;
            let mut gzh = [0.0, 0.0];
            for l in 0..local {
                let g = dofs[l];
                zh += z[g] * shape[l];
                wh += w[g] * shape[l];
                gzh[0] += z[g] * grads[l][0];
                gzh[1] += z[g] * grads[l][1];
            }
            let wq = rule.weights[k] * scale;
            let grad_exact = (exact.gradient)(p[0], p[1], t);
            let du = [grad_exact[0] - gzh[0], grad_exact[1] - gzh[1]];
            energy_sq += wq * modulus * (du[0] * du[0] + du[1] * du[1]);
            let dv = (exact.velocity)(p[0], p[1], t) - wh;
            vel_sq += wq * dv * dv;
            let dz = (exact.value)(p[0], p[1], t) - zh;
            disp_sq += wq * dz * dz;
        }
    }
    ErrorTriple {
        energy: energy_sq.sqrt(),
        velocity_l2: vel_sq.sqrt(),
        displacement_l2: disp_sq.sqrt(),
    }
}

/// Pairwise and least-squares convergence rates of an error sequence.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Rates {
    pub pairwise: Vec<f64>,
    pub least_squares: f64,
}

/// Estimate convergence rates: `d_c = (log e1 - log e2) / (log h1 - log h2)`
/// for adjacent pairs plus the least-squares slope of `log e` against
/// `log h` over the whole sequence.
pub fn convergence_rate(errors: &[f64], steps: &[f64]) -> Result<Rates, MmsError> {
    if errors.len() < 2 || errors.len() != steps.len() {
        return Err(MmsError::InvalidRateInput(format!(
            "{} errors vs {} steps",
            errors.len(),
            steps.len()
        )));
    }
    if let Some(&e) = errors.iter().find(|&&e| e.is_nan() || e <= 0.0) {
        return Err(MmsError::InvalidRateInput(format!("non-positive error {e}")));
    }
    if let Some(&h) = steps.iter().find(|&&h| h.is_nan() || h <= 0.0) {
        return Err(MmsError::InvalidRateInput(format!("non-positive step {h}")));
    }
    let pairwise = errors
        .windows(2)
        .zip(steps.windows(2))
        .map(|(e, h)| (e[0].ln() - e[1].ln()) / (h[0].ln() - h[1].ln()))
        .collect();
    let n = errors.len() as f64;
    let xs: Vec<f64> = steps.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let num: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum();
    let den: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    Ok(Rates {
        pairwise,
        least_squares: num / den,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::build_space;
    use crate::mesh::{unit_square_mesh, Diagonal};
    use crate::stepper::Form;
    use rand::{Rng, SeedableRng};

    /// Adaptive Simpson quadrature, the independent oracle for the Volterra
    /// integral defining the internal variables.
    fn adaptive_simpson<F: Fn(f64) -> f64 + Copy>(f: F, a: f64, b: f64, tol: f64) -> f64 {
        fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
            (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
        }
        fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let left = simpson(f, a, m);
            let right = simpson(f, m, b);
            if depth == 0 || (left + right - whole).abs() < 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                recurse(f, a, m, left, tol / 2.0, depth - 1)
                    + recurse(f, m, b, right, tol / 2.0, depth - 1)
            }
        }
        recurse(&f, a, b, simpson(&f, a, b), tol, 40)
    }

    #[test]
    fn kernel_closed_form_matches_quadrature() {
        assert_eq!(exact_c_q(0.0, 0.1, 0.5).unwrap(), 0.0);
        for (phi, tau, t) in [(0.1, 0.5, 1.0), (0.4, 1.5, 1.0), (0.4, 1.5, 0.3)] {
            let oracle = adaptive_simpson(
                |s: f64| phi / tau * (-(t - s) / tau).exp() * (-s).exp(),
                0.0,
                t,
                1e-14,
            );
            let closed = exact_c_q(t, phi, tau).unwrap();
            assert!((closed - oracle).abs() < 1e-12, "{closed} vs {oracle}");
        }
        assert!(matches!(exact_c_q(1.0, 0.1, 1.0), Err(MmsError::UnitDelayTime)));
        assert!(exact_c_q(1e3, 0.4, 1.5).unwrap().abs() < 1e-200);
    }

    #[test]
    fn kernel_satisfies_displacement_ode() {
        // tau c' + c - phi exp(-t) = 0
        for (phi, tau) in [(0.1, 0.5), (0.4, 1.5)] {
            for k in 0..100 {
                let t = k as f64 / 99.0;
                let c = exact_c_q(t, phi, tau).unwrap();
                let cdot = exact_c_q_dot(t, phi, tau).unwrap();
                assert!((tau * cdot + c - phi * (-t).exp()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kernel_satisfies_velocity_ode() {
        // zeta' + zeta / tau = phi u'(t) with separable factor -phi exp(-t)
        for (phi, tau) in [(0.1, 0.5), (0.4, 1.5)] {
            for k in 0..100 {
                let t = k as f64 / 99.0;
                let d = exact_zeta_q(t, phi, tau).unwrap();
                let ddot = exact_zeta_q_dot(t, phi, tau).unwrap();
                assert!((ddot + d / tau + phi * (-t).exp()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn source_values() {
        let problem = ManufacturedProblem::new(reference_material()).unwrap();
        for y in [0.0, 0.3, 0.9] {
            assert_eq!(problem.source(0.0, y, 0.5), 0.0);
        }
        let f110 = problem.source(1.0, 1.0, 0.0);
        assert!((f110 - 3.0 * 1f64.sin()).abs() < 1e-12);
        assert!((f110 - 2.524413).abs() < 1e-6);
    }

    #[test]
    fn neumann_values_and_consistency() {
        let problem = ManufacturedProblem::new(reference_material()).unwrap();
        let g = problem.neumann(1.0, 1.0, 0.0, [1.0, 0.0]).unwrap();
        assert!((g - 1f64.cos()).abs() < 1e-12);
        assert!((g - 0.540302).abs() < 1e-6);
        assert!(problem.neumann(1.0, 1e-9, 0.0, [1.0, 0.0]).unwrap().abs() < 1e-8);
        assert!(problem.neumann(0.5, 0.5, 0.0, [1.0, 0.0]).is_err());

        // g agrees with the componentwise stress at random boundary points.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let t = rng.gen_range(0.0..1.0);
            let c: f64 = rng.gen_range(0.0..1.0);
            let sx = problem.stress(1.0, c, t);
            let gx = problem.neumann(1.0, c, t, [1.0, 0.0]).unwrap();
            assert!((gx - sx[0]).abs() < 1e-12);
            let sy = problem.stress(c, 1.0, t);
            let gy = problem.neumann(c, 1.0, t, [0.0, 1.0]).unwrap();
            assert!((gy - sy[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn memory_factor_reduces_to_elastic_without_prony_terms() {
        let elastic = MaterialModel::new(1.0, 1.0, 1.0, vec![], vec![]).unwrap();
        let problem = ManufacturedProblem::new(elastic).unwrap();
        for t in [0.0, 0.4, 2.0] {
            assert_eq!(problem.memory_factor(t), (-t).exp());
        }
    }

    #[test]
    fn error_norms_vanish_for_the_fe_function_itself() {
        let space = build_space(unit_square_mesh(4, Diagonal::Right), 2).unwrap();
        let full = space.interpolate(|x, y| x * y);
        let state = SolverState {
            step: 0,
            z: space.restrict(&full),
            w: space.restrict(&full),
            internal: vec![],
            form: Form::Displacement,
        };
        // Exact fields equal to the P2 function x*y and its data.
        let exact = ExactSolution {
            value: Arc::new(|x, y, _| x * y),
            gradient: Arc::new(|x, y, _| [y, x]),
            velocity: Arc::new(|x, y, _| x * y),
        };
        // x*y vanishes on the Dirichlet boundary, so restriction loses
        // nothing.
        let e = error_norms(&space, &state, 0.7, &exact, 1.0);
        assert!(e.energy < 1e-13);
        assert!(e.velocity_l2 < 1e-14);
        assert!(e.displacement_l2 < 1e-14);
    }

    #[test]
    fn rate_computation() {
        let r = convergence_rate(&[4.0, 1.0], &[2.0, 1.0]).unwrap();
        assert!((r.pairwise[0] - 2.0).abs() < 1e-14);
        assert!((r.least_squares - 2.0).abs() < 1e-14);

        // Adjacent pair of the reference energy errors.
        let r = convergence_rate(&[2.2557e-3, 6.0301e-4], &[0.25, 0.125]).unwrap();
        assert!((r.pairwise[0] - 1.903).abs() < 5e-3);

        // Reference fixed-mesh displacement-form energy column.
        let r = convergence_rate(
            &[6.0705e-4, 1.5316e-4, 3.8373e-5, 9.5993e-6],
            &[1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0],
        )
        .unwrap();
        assert!((r.least_squares - 1.99).abs() < 0.02);

        assert!(convergence_rate(&[1.0, 0.0], &[2.0, 1.0]).is_err());
        assert!(convergence_rate(&[1.0], &[2.0]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn rates_invariant_under_error_scaling(scale in 1e-6f64..1e6) {
            let errors = [3.2e-2, 8.1e-3, 2.0e-3];
            let steps = [0.25, 0.125, 0.0625];
            let base = convergence_rate(&errors, &steps).unwrap();
            let scaled: Vec<f64> = errors.iter().map(|e| e * scale).collect();
            let r = convergence_rate(&scaled, &steps).unwrap();
            for (a, b) in base.pairwise.iter().zip(&r.pairwise) {
                proptest::prop_assert!((a - b).abs() < 1e-9);
            }
            proptest::prop_assert!((base.least_squares - r.least_squares).abs() < 1e-9);
        }
    }
}
