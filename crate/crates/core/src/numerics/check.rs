use super::{Graph, NumericsError, Tensor, Var};

/// Smallest denominator used when forming relative errors, so coordinates
/// whose true gradient is zero are judged on absolute error at this scale.
const REL_FLOOR: f64 = 1e-6;

/// Result of comparing tape gradients against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(parameter index, flat coordinate)` of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
}

fn eval(
    f: &impl Fn(&mut Graph, &[Var]) -> Result<Var, NumericsError>,
    params: &[Tensor],
) -> Result<f64, NumericsError> {
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out);
    v.item().ok_or_else(|| NumericsError::NonScalarLoss {
        shape: v.shape().to_vec(),
    })
}

/// Compare the gradient recorded by the tape with central finite differences
/// `(f(x+h) - f(x-h)) / 2h` for every coordinate of every parameter.
///
/// `f` must be deterministic (disable dropout) and return a scalar node.
pub fn finite_difference_check<F>(f: F, params: &[Tensor], step: f64) -> Result<GradCheck, NumericsError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NumericsError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut probe = params.to_vec();
    for (pi, grads) in analytic.iter().enumerate() {
        for (ci, &a) in grads.iter().enumerate() {
            let orig = probe[pi].data()[ci];
            probe[pi].data_mut()[ci] = orig + step;
            let up = eval(&f, &probe)?;
            probe[pi].data_mut()[ci] = orig - step;
            let down = eval(&f, &probe)?;
            probe[pi].data_mut()[ci] = orig;
            let n = (up - down) / (2.0 * step);
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR);
            if rel > report.max_rel_error || report.worst.is_none() {
                report = GradCheck {
                    max_rel_error: rel,
                    worst: Some((pi, ci)),
                    analytic: a,
                    numeric: n,
                };
            }
        }
    }
    Ok(report)
}
