use nalgebra::DVector;

use crate::error::{Error, Result};

/// One classical Runge–Kutta step of `x' = f(t, x)`.
pub fn ode_step<F>(mut f: F, x: &DVector<f64>, t: f64, dt: f64) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    if !(dt > 0.0) {
        return Err(Error::Argument(format!("step must be positive, got {dt}")));
    }
    let half = 0.5 * dt;
    let k1 = f(t, x);
    let k2 = f(t + half, &(x + &k1 * half));
    let k3 = f(t + half, &(x + &k2 * half));
    let k4 = f(t + dt, &(x + &k3 * dt));
    let next = x + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { t: t + dt });
    }
    Ok(next)
}
