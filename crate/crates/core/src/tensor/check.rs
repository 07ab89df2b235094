use super::graph::{Graph, Tensor, TensorError};

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct FdReport {
    /// Largest relative error over all checked coordinates.
    pub max_rel_err: f64,
    /// Coordinate count that was compared.
    pub checked: usize,
    /// Tolerance the report was evaluated against.
    pub tol: f64,
}

impl FdReport {
    pub fn pass(&self) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < self.tol
    }
}

/// Relative error with a unit floor, so tiny gradients are compared
/// absolutely and large ones relatively.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Compare an analytic gradient against central finite differences of a
/// scalar-valued function. `f` must be deterministic.
pub fn finite_diff_scalar<F>(f: &F, x0: &[f64], analytic: &[f64], step: f64, tol: f64) -> FdReport
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(x0.len(), analytic.len());
    let mut max_rel_err: f64 = 0.0;
    let mut x = x0.to_vec();
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let fp = f(&x);
        x[i] = orig - step;
        let fm = f(&x);
        x[i] = orig;
        let numeric = (fp - fm) / (2.0 * step);
        max_rel_err = max_rel_err.max(rel_err(analytic[i], numeric));
    }
    FdReport {
        max_rel_err,
        checked: x0.len(),
        tol,
    }
}

/// Gradient check for a graph-building function of one input tensor: runs
/// backward for the analytic gradient, then central differences per
/// coordinate. The builder is re-invoked on a fresh graph for every
/// evaluation, so it must be deterministic given its input.
pub fn finite_diff_check<F>(
    f: &F,
    x0: &[f64],
    shape: &[usize],
    step: f64,
    tol: f64,
) -> Result<FdReport, TensorError>
where
    F: Fn(&Graph, &Tensor) -> Result<Tensor, TensorError>,
{
    let g = Graph::new();
    let x = g.input(x0.to_vec(), shape, true)?;
    let y = f(&g, &x)?;
    if y.numel() != 1 {
        return Err(TensorError::NotScalar {
            shape: y.shape().to_vec(),
        });
    }
    g.backward(&y)?;
    let analytic = g.grad(&x).unwrap_or_else(|| vec![0.0; x0.len()]);
    let shape = shape.to_vec();
    let eval = |xs: &[f64]| -> f64 {
        let g = Graph::new();
        let x = g.input(xs.to_vec(), &shape, false).expect("input");
        let y = f(&g, &x).expect("forward");
        g.scalar(&y)
    };
    Ok(finite_diff_scalar(&eval, x0, &analytic, step, tol))
}
