//! Central finite-difference validation of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Denominator floor of the relative error, so gradients that are zero up to
/// rounding do not report spurious failures.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug)]
pub enum Coords {
    All,
    /// At most this many coordinates per input, drawn without replacement.
    Sample { per_input: usize, seed: u64 },
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(input index, flat coordinate, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn evaluate<F>(inputs: &[Tensor<f64>], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).data()[0])
}

/// Compare backward gradients of the scalar graph `f` against central
/// differences with step `h`.
pub fn grad_check<F>(inputs: &[Tensor<f64>], f: F, h: f64, coords: Coords) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.dims())))
        .collect();

    let mut report = GradCheckReport { max_rel_err: 0.0, worst: None, checked: 0 };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ii, input) in inputs.iter().enumerate() {
        let picks: Vec<usize> = match coords {
            Coords::All => (0..input.len()).collect(),
            Coords::Sample { per_input, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(ii as u64));
                let mut v = sample(&mut rng, input.len(), per_input.min(input.len())).into_vec();
                v.sort_unstable();
                v
            }
        };
        for c in picks {
            let orig = input.data()[c];
            work[ii].data_mut()[c] = orig + h;
            let plus = evaluate(&work, &f)?;
            work[ii].data_mut()[c] = orig - h;
            let minus = evaluate(&work, &f)?;
            work[ii].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[ii].data()[c];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((ii, c, a, numeric));
            }
        }
    }
    Ok(report)
}
