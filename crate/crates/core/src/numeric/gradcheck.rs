use rand::seq::index::sample as sample_indices;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{ParamStore, Tape, Var};

/// Denominator floor for the per-coordinate error. Central differences cannot
/// resolve gradients much below this in double precision, so those coordinates
/// are judged on absolute error.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Outcome of a finite-difference gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// `(store, tensor, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(String, String, usize, f64, f64)>,
}

/// Compares tape gradients with central differences on sampled coordinates.
///
/// `loss` builds the scalar on a fresh tape from read-only stores; it is called
/// once for the analytic pass and twice per sampled coordinate. Up to `sample`
/// coordinates are drawn from every non-frozen tensor. The error of one
/// coordinate is `|a - n| / max(GRAD_CHECK_FLOOR, |a| + |n|)`.
pub fn grad_check<F, R>(
    stores: &mut [&mut ParamStore],
    eps: f64,
    sample: usize,
    rng: &mut R,
    loss: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[&ParamStore]) -> Result<Var>,
    R: Rng + ?Sized,
{
    if !(eps > 0.0) || sample == 0 {
        return Err(Error::Structural(
            "grad_check needs eps > 0 and sample >= 1".into(),
        ));
    }
    for s in stores.iter_mut() {
        s.zero_grads();
    }
    {
        let mut tape = Tape::new();
        let refs: Vec<&ParamStore> = stores.iter().map(|s| &**s).collect();
        let out = loss(&mut tape, &refs)?;
        drop(refs);
        tape.backward(out, stores)?;
    }

    let eval = |stores: &[&mut ParamStore]| -> Result<f64> {
        let mut tape = Tape::new();
        let refs: Vec<&ParamStore> = stores.iter().map(|s| &**s).collect();
        let out = loss(&mut tape, &refs)?;
        let v = tape.scalar(out);
        if !v.is_finite() {
            return Err(Error::NumericOverflow { op: "grad_check" });
        }
        Ok(v)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coordinates: 0,
        worst: None,
    };
    for si in 0..stores.len() {
        for ti in 0..stores[si].len() {
            let (name, entry) = stores[si].at(ti).expect("in range");
            if entry.frozen {
                continue;
            }
            let name = name.to_string();
            let n = entry.value.len();
            let picks: Vec<usize> = if n <= sample {
                (0..n).collect()
            } else {
                sample_indices(rng, n, sample).into_vec()
            };
            for k in picks {
                let analytic = stores[si].at(ti).unwrap().1.grad.as_slice()[k];
                let orig = stores[si].at(ti).unwrap().1.value.as_slice()[k];
                stores[si].at_mut(ti).unwrap().1.value.as_mut_slice()[k] = orig + eps;
                let plus = eval(stores);
                stores[si].at_mut(ti).unwrap().1.value.as_mut_slice()[k] = orig - eps;
                let minus = eval(stores);
                stores[si].at_mut(ti).unwrap().1.value.as_mut_slice()[k] = orig;
                let numeric = (plus? - minus?) / (2.0 * eps);
                let err = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(GRAD_CHECK_FLOOR);
                report.coordinates += 1;
                if err > report.max_rel_error || report.worst.is_none() {
                    report.max_rel_error = err;
                    report.worst = Some((
                        stores[si].label().to_string(),
                        name.clone(),
                        k,
                        analytic,
                        numeric,
                    ));
                }
            }
        }
    }
    for s in stores.iter_mut() {
        s.zero_grads();
    }
    Ok(report)
}
