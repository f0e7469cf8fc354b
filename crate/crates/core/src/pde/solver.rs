//! Explicit Euler / central-difference solvers on periodic grids.

use ndarray::Array4;

use super::field::ReferenceField;
use super::grf::sample_grf;
use super::grid::SpatialGrid;
use super::problem::{BenchmarkKind, ProblemSpec};
use super::PdeError;

/// Stability margin below the 1/4 diffusive limit used by [`default_dt`].
const DIFFUSIVE_SAFETY: f64 = 0.2;

/// Step size and counts after aligning `dt` with the snapshot interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepPlan {
    pub dt: f64,
    pub burn_steps: usize,
    pub steps_per_snapshot: usize,
}

impl StepPlan {
    /// Shrinks `dt` (never grows it) so an integer number of steps spans each snapshot interval.
    pub fn new(spec: &ProblemSpec, dt: f64) -> Self {
        let span = spec.t_range.1 - spec.t_range.0;
        let (dt, steps_per_snapshot) = if spec.snapshots > 1 && span > 0.0 {
            let interval = span / (spec.snapshots - 1) as f64;
            let k = ((interval / dt) - 1e-9).ceil().max(1.0) as usize;
            (interval / k as f64, k)
        } else {
            (dt, 0)
        };
        let burn_steps = ((spec.burn_in / dt) - 1e-9).ceil().max(0.0) as usize;
        Self {
            dt,
            burn_steps,
            steps_per_snapshot,
        }
    }
}

/// A reasonably safe step for the benchmark at resolution `grid_n`.
pub fn default_dt(spec: &ProblemSpec, grid_n: usize) -> f64 {
    let grid = spec.grid(grid_n);
    let h2 = grid.hx().min(grid.hy()).powi(2);
    match spec.kind {
        BenchmarkKind::Burgers => {
            // diffusive limit, plus 2 nu / U^2 for central advection with |U| up to 3 amplitudes
            let diff = DIFFUSIVE_SAFETY * h2 / spec.true_param.max(1e-12);
            let u_max = 3.0 * spec.grf_amplitude.max(1e-12);
            let adv = 2.0 * spec.true_param / (u_max * u_max);
            diff.min(adv).min(1e-3)
        }
        BenchmarkKind::LambdaOmega => {
            // the cap keeps the first-order time error of the spiral phase small on coarse grids
            let diff = DIFFUSIVE_SAFETY * h2 / spec.diffusion.0.max(spec.diffusion.1).max(1e-12);
            diff.min(2.5e-3)
        }
        BenchmarkKind::AllenCahn => 1e-3,
    }
}

fn check_cfl(coeff: f64, dt: f64, grid: &SpatialGrid) -> Result<(), PdeError> {
    for h in [grid.hx(), grid.hy()] {
        let ratio = coeff * dt / (h * h);
        if ratio > 0.25 {
            return Err(PdeError::CflViolation { ratio });
        }
    }
    Ok(())
}

/// Periodic neighbour tables and inverse spacings.
struct Stencil {
    nx: usize,
    ny: usize,
    ip: Vec<usize>,
    im: Vec<usize>,
    jp: Vec<usize>,
    jm: Vec<usize>,
    inv_hx2: f64,
    inv_hy2: f64,
    inv_2hx: f64,
    inv_2hy: f64,
}

impl Stencil {
    fn new(grid: &SpatialGrid) -> Self {
        let (nx, ny) = (grid.nx, grid.ny);
        let (hx, hy) = (grid.hx(), grid.hy());
        Self {
            nx,
            ny,
            ip: (0..nx).map(|i| (i + 1) % nx).collect(),
            im: (0..nx).map(|i| (i + nx - 1) % nx).collect(),
            jp: (0..ny).map(|j| (j + 1) % ny).collect(),
            jm: (0..ny).map(|j| (j + ny - 1) % ny).collect(),
            inv_hx2: 1.0 / (hx * hx),
            inv_hy2: 1.0 / (hy * hy),
            inv_2hx: 0.5 / hx,
            inv_2hy: 0.5 / hy,
        }
    }

    #[inline]
    fn lap(&self, f: &[f64], i: usize, j: usize) -> f64 {
        let ny = self.ny;
        let c = f[i * ny + j];
        (f[self.ip[i] * ny + j] + f[self.im[i] * ny + j] - 2.0 * c) * self.inv_hx2
            + (f[i * ny + self.jp[j]] + f[i * ny + self.jm[j]] - 2.0 * c) * self.inv_hy2
    }

    #[inline]
    fn dx(&self, f: &[f64], i: usize, j: usize) -> f64 {
        (f[self.ip[i] * self.ny + j] - f[self.im[i] * self.ny + j]) * self.inv_2hx
    }

    #[inline]
    fn dy(&self, f: &[f64], i: usize, j: usize) -> f64 {
        (f[i * self.ny + self.jp[j]] - f[i * self.ny + self.jm[j]]) * self.inv_2hy
    }
}

/// Two-channel state advanced in place by an explicit Euler right-hand side.
trait Rhs {
    /// Writes `(u, v) + dt * rhs(u, v)` into `(nu, nv)`; returns a sum that is non-finite iff
    /// any new value is.
    fn step(&self, st: &Stencil, u: &[f64], v: &[f64], dt: f64, nu: &mut [f64], nv: &mut [f64]) -> f64;
}

struct BurgersRhs {
    nu: f64,
    advection: bool,
}

impl Rhs for BurgersRhs {
    fn step(&self, st: &Stencil, u: &[f64], v: &[f64], dt: f64, nu: &mut [f64], nv: &mut [f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..st.nx {
            for j in 0..st.ny {
                let k = i * st.ny + j;
                let (uk, vk) = (u[k], v[k]);
                let mut du = self.nu * st.lap(u, i, j);
                let mut dv = self.nu * st.lap(v, i, j);
                if self.advection {
                    du -= uk * st.dx(u, i, j) + vk * st.dy(u, i, j);
                    dv -= uk * st.dx(v, i, j) + vk * st.dy(v, i, j);
                }
                nu[k] = uk + dt * du;
                nv[k] = vk + dt * dv;
                acc += nu[k].abs() + nv[k].abs();
            }
        }
        acc
    }
}

struct LambdaOmegaRhs {
    beta: f64,
    du: f64,
    dv: f64,
}

impl Rhs for LambdaOmegaRhs {
    fn step(&self, st: &Stencil, u: &[f64], v: &[f64], dt: f64, nu: &mut [f64], nv: &mut [f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..st.nx {
            for j in 0..st.ny {
                let k = i * st.ny + j;
                let (uk, vk) = (u[k], v[k]);
                let r2 = uk * uk + vk * vk;
                let lambda = 1.0 - r2;
                let omega = -self.beta * r2;
                let du = self.du * st.lap(u, i, j) + lambda * uk - omega * vk;
                let dv = self.dv * st.lap(v, i, j) + omega * uk + lambda * vk;
                nu[k] = uk + dt * du;
                nv[k] = vk + dt * dv;
                acc += nu[k].abs() + nv[k].abs();
            }
        }
        acc
    }
}

struct Integrator<'a, R: Rhs> {
    rhs: R,
    stencil: Stencil,
    u: Vec<f64>,
    v: Vec<f64>,
    scratch: (Vec<f64>, Vec<f64>),
    step_index: usize,
    _grid: &'a SpatialGrid,
}

impl<'a, R: Rhs> Integrator<'a, R> {
    fn new(rhs: R, grid: &'a SpatialGrid, u: Vec<f64>, v: Vec<f64>) -> Self {
        let n = u.len();
        Self {
            rhs,
            stencil: Stencil::new(grid),
            u,
            v,
            scratch: (vec![0.0; n], vec![0.0; n]),
            step_index: 0,
            _grid: grid,
        }
    }

    fn advance(&mut self, steps: usize, dt: f64) -> Result<(), PdeError> {
        for _ in 0..steps {
            let (nu, nv) = (&mut self.scratch.0, &mut self.scratch.1);
            let acc = self.rhs.step(&self.stencil, &self.u, &self.v, dt, nu, nv);
            self.step_index += 1;
            if !acc.is_finite() {
                return Err(PdeError::BlowUp {
                    step: self.step_index,
                });
            }
            std::mem::swap(&mut self.u, nu);
            std::mem::swap(&mut self.v, nv);
        }
        Ok(())
    }
}

fn run<R: Rhs>(
    spec: &ProblemSpec,
    grid: SpatialGrid,
    plan: StepPlan,
    rhs: R,
    u0: Vec<f64>,
    v0: Vec<f64>,
) -> Result<ReferenceField, PdeError> {
    let times = spec.snapshot_times();
    let (nx, ny) = (grid.nx, grid.ny);
    let mut values = Array4::zeros((times.len(), nx, ny, 2));
    let mut integ = Integrator::new(rhs, &grid, u0, v0);
    integ.advance(plan.burn_steps, plan.dt)?;
    for ti in 0..times.len() {
        if ti > 0 {
            integ.advance(plan.steps_per_snapshot, plan.dt)?;
        }
        for i in 0..nx {
            for j in 0..ny {
                values[[ti, i, j, 0]] = integ.u[i * ny + j];
                values[[ti, i, j, 1]] = integ.v[i * ny + j];
            }
        }
    }
    Ok(ReferenceField {
        kind: spec.kind,
        times,
        grid,
        channel_names: spec.kind.channel_names().iter().map(|s| s.to_string()).collect(),
        values,
    })
}

/// Integrates the viscous Burgers system `(u, v)` for `steps` explicit steps. `advection`
/// switches the nonlinear transport terms on or off. Fields are row-major `nx * ny`.
pub fn integrate_burgers(
    grid: &SpatialGrid,
    nu: f64,
    dt: f64,
    steps: usize,
    advection: bool,
    u0: Vec<f64>,
    v0: Vec<f64>,
) -> Result<(Vec<f64>, Vec<f64>), PdeError> {
    check_cfl(nu, dt, grid)?;
    let mut integ = Integrator::new(BurgersRhs { nu, advection }, grid, u0, v0);
    integ.advance(steps, dt)?;
    Ok((integ.u, integ.v))
}

/// Burgers reference data from two independent GRF velocity components.
///
/// The initial components use seeds `2 * seed` and `2 * seed + 1`. The first `burn_in` time
/// units are simulated and discarded; snapshot `0` is the state right after burn-in.
pub fn solve_burgers_fd(
    spec: &ProblemSpec,
    grid_n: usize,
    dt: f64,
    seed: u64,
) -> Result<ReferenceField, PdeError> {
    let grid = spec.grid(grid_n);
    let plan = StepPlan::new(spec, dt);
    check_cfl(spec.true_param, plan.dt, &grid)?;
    let u0 = sample_grf(grid_n, spec.grf_alpha, seed.wrapping_mul(2))?;
    let v0 = sample_grf(grid_n, spec.grf_alpha, seed.wrapping_mul(2).wrapping_add(1))?;
    let scale = |f: ndarray::Array2<f64>| (f * spec.grf_amplitude).into_raw_vec_and_offset().0;
    let rhs = BurgersRhs {
        nu: spec.true_param,
        advection: true,
    };
    run(spec, grid, plan, rhs, scale(u0), scale(v0))
}

/// Spiral-wave initial condition: `rho = tanh(r)`, `u = rho cos(theta - rho)`, `v = rho sin(theta - rho)`.
pub fn spiral_initial_condition(x: f64, y: f64) -> (f64, f64) {
    let rho = x.hypot(y).tanh();
    let theta = y.atan2(x);
    let phase = theta - rho;
    (rho * phase.cos(), rho * phase.sin())
}

/// Lambda-omega reaction-diffusion data from the spiral initial condition.
pub fn solve_lambda_omega_fd(spec: &ProblemSpec, grid_n: usize, dt: f64) -> Result<ReferenceField, PdeError> {
    let grid = spec.grid(grid_n);
    let plan = StepPlan::new(spec, dt);
    check_cfl(spec.diffusion.0.max(spec.diffusion.1), plan.dt, &grid)?;
    let (mut u0, mut v0) = (
        Vec::with_capacity(grid_n * grid_n),
        Vec::with_capacity(grid_n * grid_n),
    );
    for (x, y) in grid.points() {
        let (u, v) = spiral_initial_condition(x, y);
        u0.push(u);
        v0.push(v);
    }
    let rhs = LambdaOmegaRhs {
        beta: spec.true_param,
        du: spec.diffusion.0,
        dv: spec.diffusion.1,
    };
    run(spec, grid, plan, rhs, u0, v0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn max_diff(a: &ReferenceField, b: &ReferenceField) -> f64 {
        a.values
            .iter()
            .zip(b.values.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    /// Observed order from three solves at dt, dt/2, dt/4.
    fn observed_order(solve: impl Fn(f64) -> ReferenceField, dt: f64) -> f64 {
        let (a, b, c) = (solve(dt), solve(dt / 2.0), solve(dt / 4.0));
        let e1 = max_diff(&a, &b);
        let e2 = max_diff(&b, &c);
        (e1 / e2).log2()
    }

    #[test]
    fn step_plan_aligns_with_snapshots() {
        let spec = ProblemSpec::burgers().with_snapshots(4);
        let p = StepPlan::new(&spec, 0.3);
        assert_eq!(p.steps_per_snapshot, 4);
        assert!((p.dt - 0.25).abs() < 1e-15);
        assert_eq!(p.burn_steps, 1);
        let p = StepPlan::new(&spec, 0.25);
        assert_eq!(p.steps_per_snapshot, 4);
    }

    #[test]
    fn viscous_cfl_is_enforced() {
        let spec = ProblemSpec::burgers().with_snapshots(3);
        // h = 1/16, h^2 / (4 nu) = 0.09765625
        assert!(matches!(
            solve_burgers_fd(&spec, 64, 0.2, 0),
            Err(PdeError::CflViolation { .. })
        ));
        let spec = ProblemSpec::lambda_omega().with_snapshots(3);
        assert!(matches!(
            solve_lambda_omega_fd(&spec, 64, 0.1),
            Err(PdeError::CflViolation { .. })
        ));
    }

    #[test]
    fn zero_field_stays_zero() {
        let grid = SpatialGrid::square((0.0, 4.0), (0.0, 4.0), 16, true);
        let (u, v) = integrate_burgers(&grid, 5.0, 1e-3, 200, true, vec![0.0; 256], vec![0.0; 256]).unwrap();
        assert!(u.iter().chain(v.iter()).all(|&x| x == 0.0));
    }

    #[test]
    fn single_mode_heat_decay() {
        let n = 64;
        let l = 4.0;
        let nu = 0.01;
        let grid = SpatialGrid::square((0.0, l), (0.0, l), n, true);
        let u0: Vec<f64> = grid
            .points()
            .iter()
            .map(|&(x, _)| (2.0 * PI * x / l).sin())
            .collect();
        let dt = 0.05;
        let steps = 100;
        let (u, _) = integrate_burgers(&grid, nu, dt, steps, false, u0.clone(), vec![0.0; n * n]).unwrap();
        let k = 2.0 * PI / l;
        let expected = (-nu * k * k * dt * steps as f64).exp();
        let i = n / 4; // sin = 1
        let got = u[i * n];
        assert!(((got - expected) / expected).abs() < 0.02, "{got} vs {expected}");
    }

    #[test]
    fn coarse_grid_steep_field_reports_blow_up() {
        let mut spec = ProblemSpec::burgers().with_snapshots(4);
        spec.grf_amplitude = 1.0;
        assert!(matches!(
            solve_burgers_fd(&spec, 64, 1e-3, 0),
            Err(PdeError::BlowUp { step }) if step > 0
        ));
    }

    #[test]
    fn advection_off_vs_on_differs() {
        let grid = SpatialGrid::square((0.0, 4.0), (0.0, 4.0), 32, true);
        let u0 = sample_grf(32, 5.0, 1).unwrap().into_raw_vec_and_offset().0;
        let v0 = sample_grf(32, 5.0, 2).unwrap().into_raw_vec_and_offset().0;
        let a = integrate_burgers(&grid, 0.05, 1e-3, 50, true, u0.clone(), v0.clone()).unwrap();
        let b = integrate_burgers(&grid, 0.05, 1e-3, 50, false, u0, v0).unwrap();
        assert_ne!(a.0, b.0);
    }

    #[test]
    fn burgers_is_deterministic_and_seed_dependent() {
        let mut spec = ProblemSpec::burgers().with_snapshots(3);
        spec.grf_amplitude = 0.1;
        let a = solve_burgers_fd(&spec, 32, 2e-3, 4).unwrap();
        let b = solve_burgers_fd(&spec, 32, 2e-3, 4).unwrap();
        assert_eq!(a, b);
        let c = solve_burgers_fd(&spec, 32, 2e-3, 5).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn burgers_stays_bounded_after_burn_in() {
        let spec = ProblemSpec::burgers().with_snapshots(10);
        let f = solve_burgers_fd(&spec, 256, default_dt(&spec, 256), 0).unwrap();
        let max_at = |ti: usize| {
            f.values
                .index_axis(ndarray::Axis(0), ti)
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()))
        };
        let m0 = max_at(0);
        for ti in 1..f.n_times() {
            assert!(max_at(ti) <= 1.05 * m0, "snapshot {ti}: {} > {m0}", max_at(ti));
        }
    }

    #[test]
    fn burgers_self_convergence() {
        let mut spec = ProblemSpec::burgers().with_snapshots(4);
        spec.grf_amplitude = 0.3;
        let order = observed_order(|dt| solve_burgers_fd(&spec, 128, dt, 0).unwrap(), 2e-3);
        assert!(order >= 0.9, "order {order}");
    }

    #[test]
    fn lambda_omega_origin_starts_at_zero() {
        assert_eq!(spiral_initial_condition(0.0, 0.0), (0.0, 0.0));
        let spec = ProblemSpec::lambda_omega().with_snapshots(2);
        let f = solve_lambda_omega_fd(&spec, 32, 0.02).unwrap();
        let (_, vals) = f.sample_nearest(0.0, 0.0, 0);
        assert_eq!(vals, vec![0.0, 0.0]);
    }

    #[test]
    fn lambda_omega_amplitude_bounded() {
        let spec = ProblemSpec::lambda_omega().with_snapshots(30);
        let f = solve_lambda_omega_fd(&spec, 64, default_dt(&spec, 64)).unwrap();
        for ti in 0..f.n_times() {
            for i in 0..64 {
                for j in 0..64 {
                    let (u, v) = (f.values[[ti, i, j, 0]], f.values[[ti, i, j, 1]]);
                    assert!(u * u + v * v <= 1.2);
                }
            }
        }
    }

    #[test]
    fn lambda_omega_half_dt_final_state() {
        let spec = ProblemSpec::lambda_omega().with_snapshots(5);
        let dt = default_dt(&spec, 64);
        let a = solve_lambda_omega_fd(&spec, 64, dt).unwrap();
        let b = solve_lambda_omega_fd(&spec, 64, dt / 2.0).unwrap();
        let last = a.n_times() - 1;
        let fa = a.values.index_axis(ndarray::Axis(0), last);
        let fb = b.values.index_axis(ndarray::Axis(0), last);
        let diff = fa
            .iter()
            .zip(fb.iter())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        let norm = fb.iter().fold(0.0f64, |m, y| m.max(y.abs()));
        assert!(diff / norm < 1e-2, "{}", diff / norm);
    }

    #[test]
    fn lambda_omega_self_convergence() {
        let spec = ProblemSpec::lambda_omega().with_snapshots(4);
        let dt = default_dt(&spec, 64);
        let order = observed_order(|dt| solve_lambda_omega_fd(&spec, 64, dt).unwrap(), dt);
        assert!(order >= 0.9, "order {order}");
    }
}
