use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter, coordinate)` of the worst coordinate.
    pub worst: (usize, usize),
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_values: (f64, f64),
    pub coordinates: usize,
}

/// Compares reverse-mode gradients of `program` against central differences
/// with step `h`, on every coordinate of every parameter. Relative error uses
/// `max(|analytic|, |numeric|, 1e-8)` as denominator.
pub fn gradient_check<P>(program: P, params: &[Tensor<f64>], h: f64) -> Result<GradCheckReport>
where
    P: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    gradient_check_sampled(program, params, h, usize::MAX)
}

/// Like [`gradient_check`], but visits at most `max_per_param` evenly spaced
/// coordinates of each parameter.
pub fn gradient_check_sampled<P>(
    program: P,
    params: &[Tensor<f64>],
    h: f64,
    max_per_param: usize,
) -> Result<GradCheckReport>
where
    P: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>], track: bool| -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|p| tape.leaf(p.clone(), track)).collect();
        let out = program(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = eval(params, true)?;
    let grads = tape.backward(out)?;
    drop(tape);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        worst_values: (0.0, 0.0),
        coordinates: 0,
    };
    let mut work = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let stride = p.len().div_ceil(max_per_param.max(1)).max(1);
        for ci in (0..p.len()).step_by(stride) {
            let orig = p.data()[ci];
            work[pi].data_mut()[ci] = orig + h;
            let (t, _, o) = eval(&work, false)?;
            let plus = t.value(o).item();
            work[pi].data_mut()[ci] = orig - h;
            let (t, _, o) = eval(&work, false)?;
            let minus = t.value(o).item();
            work[pi].data_mut()[ci] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads.get(vars[pi]).map_or(0.0, |g| g.data()[ci]);
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            let err = (analytic - numeric).abs() / denom;
            report.coordinates += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (pi, ci);
                report.worst_values = (analytic, numeric);
            }
        }
    }
    Ok(report)
}
