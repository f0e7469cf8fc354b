//! Closed-form Allen-Cahn solution `u* = sin(pi x) sin(pi y) cos(omega t)` and its forcing.

use std::f64::consts::PI;

use super::residual::PointJet;

/// Exact value and derivatives of `u*` at `(x, y, t)`.
pub fn allen_cahn_exact_jet(x: f64, y: f64, t: f64, omega_t: f64) -> PointJet {
    let (sx, cx) = (PI * x).sin_cos();
    let (sy, cy) = (PI * y).sin_cos();
    let (st, ct) = (omega_t * t).sin_cos();
    let pi2 = PI * PI;
    PointJet {
        u: sx * sy * ct,
        t: -omega_t * sx * sy * st,
        x: PI * cx * sy * ct,
        y: PI * sx * cy * ct,
        xx: -pi2 * sx * sy * ct,
        yy: -pi2 * sx * sy * ct,
    }
}

/// `(u*, f)` with `f = u*_t - eps^2 lap u* + u*^3 - u*`, so `u*` solves the forced equation exactly.
pub fn manufactured_solution_ac(x: f64, y: f64, t: f64, omega_t: f64, eps: f64) -> (f64, f64) {
    let j = allen_cahn_exact_jet(x, y, t, omega_t);
    let f = j.t - eps * eps * j.laplacian() + j.u * j.u * j.u - j.u;
    (j.u, f)
}
