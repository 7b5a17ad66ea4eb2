use crate::error::{Error, Result};
use crate::tensor::{DenseMatrix, Tape, Var};

/// Gradients smaller than this are compared in absolute rather than relative terms.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub entries_checked: usize,
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    /// `(parameter index, flat entry index)` of the worst relative error.
    pub worst_entry: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_relative_error <= tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares tape gradients of `loss_fn` with central differences
/// `(f(θ+eps) − f(θ−eps)) / (2·eps)` for every entry of every parameter.
///
/// `loss_fn` receives a fresh tape with the parameters registered in order (ids
/// `0..params.len()`) and must return a 1×1 node.
pub fn grad_check<F>(params: &[DenseMatrix], eps: f64, mut loss_fn: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut eval = |params: &[DenseMatrix], want_grads: bool| -> Result<(f64, Option<Vec<DenseMatrix>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().enumerate().map(|(id, p)| tape.param(id, p)).collect();
        let out = loss_fn(&mut tape, &vars)?;
        let value = tape.scalar(out);
        if !value.is_finite() {
            return Err(Error::numerical(format!("loss evaluated to {value}")));
        }
        let grads = if want_grads {
            let g = tape.backward(out)?;
            Some(
                g.into_vec()
                    .into_iter()
                    .zip(params)
                    .map(|(g, p)| g.unwrap_or_else(|| DenseMatrix::zeros(p.rows(), p.cols())))
                    .collect(),
            )
        } else {
            None
        };
        Ok((value, grads))
    };

    let (_, analytic) = eval(params, true)?;
    let analytic = analytic.expect("gradients requested");
    let mut work: Vec<DenseMatrix> = params.to_vec();
    let mut report = GradCheckReport {
        entries_checked: 0,
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        worst_entry: None,
    };
    for p in 0..params.len() {
        for k in 0..params[p].len() {
            let orig = params[p].data()[k];
            work[p].data_mut()[k] = orig + eps;
            let (plus, _) = eval(&work, false)?;
            work[p].data_mut()[k] = orig - eps;
            let (minus, _) = eval(&work, false)?;
            work[p].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[p].data()[k];
            let rel = relative_error(a, numeric);
            report.entries_checked += 1;
            report.max_absolute_error = report.max_absolute_error.max((a - numeric).abs());
            if rel >= report.max_relative_error {
                report.max_relative_error = rel;
                report.worst_entry = Some((p, k));
            }
        }
    }
    Ok(report)
}
