//! Central finite-difference verification of tape gradients.

use alloc::vec::Vec;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradFailure {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_error: f64,
    pub failures: Vec<GradFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compares the tape gradient of `f` at `params` with central differences.
///
/// A coordinate fails when `|analytic - numeric| / max(1, |numeric|) > tol`.
pub fn check_gradients<F>(f: F, params: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    check_gradients_sampled(f, params, h, tol, usize::MAX)
}

/// Like [`check_gradients`] but visits at most `per_param` evenly spaced
/// coordinates of each parameter tensor.
pub fn check_gradients_sampled<F>(
    f: F,
    params: &[Tensor],
    h: f64,
    tol: f64,
    per_param: usize,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new(params);
        let loss = f(&mut tape)?;
        tape.backward(loss)?.into_dense(params)
    };
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new(ps);
        let loss = f(&mut tape)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport::default();
    for p in 0..params.len() {
        let n = params[p].numel();
        let step = if per_param >= n { 1 } else { n.div_ceil(per_param) };
        for idx in (0..n).step_by(step) {
            let orig = params[p].data()[idx];
            work[p].data_mut()[idx] = orig + h;
            let up = eval(&work)?;
            work[p].data_mut()[idx] = orig - h;
            let down = eval(&work)?;
            work[p].data_mut()[idx] = orig;

            let numeric = (up - down) / (2.0 * h);
            let a = analytic[p].data()[idx];
            let error = (a - numeric).abs() / numeric.abs().max(1.0);
            report.checked += 1;
            report.max_error = report.max_error.max(error);
            if !(error <= tol) {
                report.failures.push(GradFailure {
                    param: p,
                    index: idx,
                    analytic: a,
                    numeric,
                    error,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use alloc::vec;

    fn random(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn quadratic_passes() {
        let params = [Tensor::vector(vec![1.0, 2.0]).unwrap()];
        let report = check_gradients(
            |t| {
                let p = t.param(0);
                let sq = t.mul(p, p)?;
                t.sum_all(sq)
            },
            &params,
            1e-4,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.checked, 2);
    }

    #[test]
    fn wrong_gradient_is_reported() {
        // mul_const treats its operand as a constant, so using it on the
        // parameter itself hides half of d(x²)/dx.
        let params = [Tensor::vector(vec![1.0, 2.0]).unwrap()];
        let report = check_gradients(
            |t| {
                let p = t.param(0);
                let c = t.value(p).clone();
                let sq = t.mul_const(p, c)?;
                t.sum_all(sq)
            },
            &params,
            1e-4,
            1e-3,
        )
        .unwrap();
        assert_eq!(report.failures.len(), 2);
    }

    /// Every primitive op, composed into scalar losses and checked over
    /// 20 seeds.
    #[test]
    fn every_op_matches_finite_differences() {
        for seed in 0..20u64 {
            let mut rng = SeededRng::new(seed);
            let params = vec![
                random(&mut rng, &[3, 4]),
                random(&mut rng, &[4, 5]),
                random(&mut rng, &[5]),
                random(&mut rng, &[5]),
                random(&mut rng, &[6, 4]),
            ];
            let mask: Vec<bool> = (0..15).map(|i| i % 4 != 1).collect();
            let pool_mask = vec![true, false, true];
            let report = check_gradients(
                |t| {
                    let (a, b, g, s, table) = (t.param(0), t.param(1), t.param(2), t.param(3), t.param(4));
                    let ab = t.matmul(a, b)?;
                    let ab = t.add_row(ab, s)?;
                    let ln = t.layer_norm(ab, g, s, 1e-5)?;
                    let act = t.gelu(ln)?;
                    let sm = t.softmax_masked(act, mask.clone())?;
                    let rows = t.gather(table, vec![0, 3, 3])?;
                    let sc = t.matmul_bt(rows, a)?;
                    let left = t.slice_cols(sc, 0, 2)?;
                    let right = t.slice_cols(sm, 1, 3)?;
                    let cat = t.concat_cols(vec![left, right])?;
                    let nrm = t.normalize_rows(cat)?;
                    let pooled = t.mean_pool(nrm, pool_mask.clone())?;
                    let lse = t.logsumexp_masked(cat, vec![true; 15])?;
                    let st = t.stack_rows(vec![pooled, pooled, pooled])?;
                    let sq = t.matmul_bt(st, st)?;
                    let d = t.diag(sq)?;
                    let diff = t.sub(d, lse)?;
                    let rd = t.row_dot(nrm, cat)?;
                    let prod = t.mul(diff, rd)?;
                    let scaled = t.scale(prod, 0.7)?;
                    let tot = t.sum_all(scaled)?;
                    let m = t.mean_all(sm)?;
                    t.add(tot, m)
                },
                &params,
                1e-5,
                1e-3,
            )
            .unwrap();
            assert!(report.passed(), "seed {seed}: {:?}", report.failures);
        }
    }
}
