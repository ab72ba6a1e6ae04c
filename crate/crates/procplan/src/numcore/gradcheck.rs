//! Central finite-difference verification of tape gradients.

use super::{Array, NumError, Tape, Var};

pub const DEFAULT_FD_STEP: f64 = 1e-5;
pub const DEFAULT_FD_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (input index, flat element index) of the worst coordinate.
    pub worst: (usize, usize),
    pub num_coords: usize,
}

fn eval<F>(f: &F, inputs: &[Array]) -> Result<f64, NumError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NumError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|a| tape.input(a.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.value(loss).scalar_value()
}

/// Compare reverse-mode gradients of a scalar-valued `f` against central
/// finite differences over every coordinate of `inputs`. Relative error is
/// `|ad - fd| / max(1, |ad|, |fd|)`, so tiny gradients are compared
/// absolutely.
pub fn grad_check<F>(f: &F, inputs: &[Array], step: f64) -> Result<GradCheckReport, NumError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NumError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|a| tape.input(a.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport { max_rel_err: 0.0, worst: (0, 0), num_coords: 0 };
    let mut work: Vec<Array> = inputs.to_vec();
    for i in 0..inputs.len() {
        let n = inputs[i].len();
        for j in 0..n {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = eval(f, &work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = eval(f, &work)?;
            work[i].data_mut()[j] = orig;

            let fd = (plus - minus) / (2.0 * step);
            let ad = grads.get(vars[i]).map_or(0.0, |g| g.data()[j]);
            let rel = (ad - fd).abs() / 1.0f64.max(ad.abs()).max(fd.abs());
            report.num_coords += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (i, j);
            }
        }
    }
    Ok(report)
}
