use super::{Matrix, NumericsError, Tape, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub h: f64,
    /// Maximum accepted relative error.
    pub tol: f64,
    /// Denominator floor, scaled by `max(1, |f(x)|)`. Central differences carry
    /// roughly `ε·|f|/h` of roundoff, so gradients far below `|f|` are compared
    /// against this floor instead of their own magnitude.
    pub abs_floor: f64,
    /// Relative disagreement between one-sided slopes that marks a kink.
    pub kink_tol: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { h: 1e-6, tol: 1e-4, abs_floor: 1e-4, kink_tol: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CoordinateIssue {
    /// `f` was non-finite around this coordinate or the analytic gradient was.
    NonFinite { input: usize, index: usize },
    /// One-sided slopes disagree; the coordinate sits on a non-differentiable point
    /// and is left out of the error.
    Kink { input: usize, index: usize },
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub issues: Vec<CoordinateIssue>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn kinks(&self) -> usize {
        self.issues.iter().filter(|i| matches!(i, CoordinateIssue::Kink { .. })).count()
    }
}

fn eval<F, E>(f: &F, inputs: &[Matrix]) -> Result<f64, E>
where
    F: Fn(&mut Tape, &[Tensor]) -> Result<Tensor, E>,
    E: From<NumericsError>,
{
    let mut tape = Tape::new();
    let ts: Vec<Tensor> = inputs.iter().map(|m| tape.constant(m.clone())).collect();
    let out = f(&mut tape, &ts)?;
    tape.value(out).item().ok_or_else(|| NumericsError::NotScalar { shape: out.shape() }.into())
}

/// Compares tape gradients of scalar `f` at `inputs` against central differences.
pub fn grad_check<F, E>(f: F, inputs: &[Matrix], cfg: GradCheckConfig) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape, &[Tensor]) -> Result<Tensor, E>,
    E: From<NumericsError>,
{
    let mut tape = Tape::new();
    let ts: Vec<Tensor> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let out = f(&mut tape, &ts)?;
    tape.backward(out)?;
    let f0 = tape.value(out).data()[0];
    let analytic: Vec<Matrix> = ts
        .iter()
        .map(|&t| tape.grad(t).cloned().unwrap_or_else(|| Matrix::zeros(t.rows(), t.cols())))
        .collect();
    drop(tape);

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: 0, issues: Vec::new(), passed: true };
    let floor = cfg.abs_floor * f0.abs().max(1.0);
    let mut work: Vec<Matrix> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.data().len() {
            let x = input.data()[j];
            work[i].data_mut()[j] = x + cfg.h;
            let fp = eval(&f, &work)?;
            work[i].data_mut()[j] = x - cfg.h;
            let fm = eval(&f, &work)?;
            work[i].data_mut()[j] = x;

            let a = analytic[i].data()[j];
            if !(fp.is_finite() && fm.is_finite() && f0.is_finite() && a.is_finite()) {
                report.issues.push(CoordinateIssue::NonFinite { input: i, index: j });
                report.passed = false;
                continue;
            }
            let right = (fp - f0) / cfg.h;
            let left = (f0 - fm) / cfg.h;
            if (right - left).abs() > cfg.kink_tol * right.abs().max(left.abs()).max(1.0) {
                report.issues.push(CoordinateIssue::Kink { input: i, index: j });
                continue;
            }
            let numeric = (fp - fm) / (2.0 * cfg.h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((i, j));
            }
        }
    }
    report.passed &= report.max_rel_error <= cfg.tol;
    Ok(report)
}
