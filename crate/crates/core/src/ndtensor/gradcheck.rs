//! Central finite-difference checks against the tape's analytic gradients.

use super::{ParamStore, Tape, Tensor, TensorError, Var};

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    /// Location of the worst entry, e.g. `"enc.block0.wq[17]"`.
    pub worst: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl GradCheckReport {
    fn record(&mut self, location: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        self.checked += 1;
        let e = relative_error(analytic, numeric);
        if e > self.max_relative_error || self.worst.is_empty() {
            self.max_relative_error = e;
            self.worst = location();
            self.worst_analytic = analytic;
            self.worst_numeric = numeric;
        }
    }
}

fn scalar(tape: &Tape, v: Var) -> Result<f64, TensorError> {
    let t = tape.value(v);
    if !t.is_scalar() {
        return Err(TensorError::NotScalar { shape: t.shape().to_vec() });
    }
    Ok(t.data()[0])
}

/// Five-point central difference, `f(x + d)` given as `f(d)`. Truncation error is `O(h^4)`.
fn five_point(h: f64, mut f: impl FnMut(f64) -> Result<f64, TensorError>) -> Result<f64, TensorError> {
    let (p2, p1, m1, m2) = (f(2.0 * h)?, f(h)?, f(-h)?, f(-2.0 * h)?);
    Ok((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h))
}

/// Checks every entry of every parameter in `store` (or only those whose name passes
/// `filter`). `loss` must be deterministic in the store contents.
pub fn check_params<F>(
    store: &ParamStore,
    h: f64,
    filter: impl Fn(&str) -> bool,
    loss: F,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape) -> Result<Var, TensorError>,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let l = loss(&mut tape)?;
        tape.backward(l)?
    };
    let mut report = GradCheckReport::default();
    let mut probe = store.clone();
    for (id, param) in store.iter() {
        if !filter(param.name()) {
            continue;
        }
        let grad = analytic.param(id);
        for k in 0..param.value().len() {
            let original = param.value().data()[k];
            let mut eval = |x: f64| -> Result<f64, TensorError> {
                probe.get_mut(id).value_mut().data_mut()[k] = x;
                let mut tape = Tape::new(&probe);
                let l = loss(&mut tape)?;
                scalar(&tape, l)
            };
            let numeric = five_point(h, |d| eval(original + d))?;
            probe.get_mut(id).value_mut().data_mut()[k] = original;
            report.record(|| format!("{}[{k}]", param.name()), grad.data()[k], numeric);
        }
    }
    Ok(report)
}

/// Checks gradients with respect to non-parameter inputs.
pub fn check_inputs<F>(
    store: &ParamStore,
    inputs: &[Tensor],
    h: f64,
    loss: F,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let run = |inputs: &[Tensor]| -> Result<(f64, Option<Vec<Tensor>>), TensorError> {
        let mut tape = Tape::new(store);
        let vars: Vec<Var> = inputs
            .iter()
            .map(|t| tape.leaf(t.clone()))
            .collect::<Result<_, _>>()?;
        let l = loss(&mut tape, &vars)?;
        let value = scalar(&tape, l)?;
        let grads = tape.backward(l)?;
        let per_input = vars
            .iter()
            .zip(inputs)
            .map(|(v, t)| grads.wrt(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok((value, Some(per_input)))
    };
    let (_, analytic) = run(inputs)?;
    let analytic = analytic.expect("analytic gradients");
    let mut report = GradCheckReport::default();
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for k in 0..input.len() {
            let original = input.data()[k];
            let numeric = five_point(h, |d| {
                probe[i].data_mut()[k] = original + d;
                Ok(run(&probe)?.0)
            })?;
            probe[i].data_mut()[k] = original;
            report.record(|| format!("input{i}[{k}]"), analytic[i].data()[k], numeric);
        }
    }
    Ok(report)
}
