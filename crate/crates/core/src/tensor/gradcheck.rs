use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParamId, ParamStore, Tape, Var};
use crate::error::Result;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is zero are judged by absolute error.
const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Central-difference formula used by [`grad_check_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stencil {
    /// `(f(θ+h) − f(θ−h)) / 2h`
    #[default]
    TwoPoint,
    /// `(8(f(θ+h) − f(θ−h)) − (f(θ+2h) − f(θ−2h))) / 12h`; O(h⁴)
    /// truncation error, useful when some true gradients are tiny.
    FivePoint,
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences `(f(θ+h) − f(θ−h)) / 2h`.
///
/// At most `max_per_tensor` coordinates are checked in each parameter,
/// sampled with `seed` when the tensor is larger than that.
pub fn grad_check<F>(params: &ParamStore, f: F, h: f64, max_per_tensor: usize, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    grad_check_with(params, f, h, max_per_tensor, seed, Stencil::TwoPoint)
}

pub fn grad_check_with<F>(
    params: &ParamStore,
    f: F,
    h: f64,
    max_per_tensor: usize,
    seed: u64,
    stencil: Stencil,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new(params);
        let loss = f(&mut tape)?;
        tape.backward(loss)?
    };
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape)?;
        Ok(tape.scalar(loss))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, max_abs_error: 0.0, worst: None, checked: 0 };
    for p in 0..params.len() {
        let id = ParamId(p);
        let n = params.tensor(id).len();
        let coords: Vec<usize> = if n <= max_per_tensor {
            (0..n).collect()
        } else {
            (0..max_per_tensor).map(|_| rng.random_range(0..n)).collect()
        };
        for c in coords {
            let original = params.tensor(id).data()[c];
            let mut at = |offset: f64| -> Result<f64> {
                probe.tensor_mut(id).data_mut()[c] = original + offset;
                eval(&probe)
            };
            let numeric = match stencil {
                Stencil::TwoPoint => (at(h)? - at(-h)?) / (2.0 * h),
                Stencil::FivePoint => {
                    let near = at(h)? - at(-h)?;
                    let far = at(2.0 * h)? - at(-2.0 * h)?;
                    (8.0 * near - far) / (12.0 * h)
                }
            };
            probe.tensor_mut(id).data_mut()[c] = original;
            let a = analytic.get(id).data()[c];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((String::from(params.name(id)), c));
            }
        }
    }
    Ok(report)
}
