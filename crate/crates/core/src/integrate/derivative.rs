use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Time derivatives of uniformly sampled trajectories, one column per sample.
///
/// Interior columns use the fourth-order five-point central stencil; the
/// first two columns use forward differences and the last two backward
/// differences (first order).
pub fn estimate_derivatives(states: &DMatrix<f64>, dt: f64) -> Result<DMatrix<f64>> {
    let k = states.ncols();
    if k < 5 {
        return Err(Error::InvalidInput(format!(
            "derivative estimation needs at least 5 samples, got {k}"
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
    }
    let mut out = DMatrix::zeros(states.nrows(), k);
    let c = 1.0 / (12.0 * dt);
    for j in 2..k - 2 {
        let mut dst = out.column_mut(j);
        for i in 0..states.nrows() {
            dst[i] = (-states[(i, j + 2)] + 8.0 * states[(i, j + 1)] - 8.0 * states[(i, j - 1)]
                + states[(i, j - 2)])
                * c;
        }
    }
    for j in [0, 1] {
        let d = (states.column(j + 1) - states.column(j)) / dt;
        out.set_column(j, &d);
    }
    for j in [k - 2, k - 1] {
        let d = (states.column(j) - states.column(j - 1)) / dt;
        out.set_column(j, &d);
    }
    Ok(out)
}
