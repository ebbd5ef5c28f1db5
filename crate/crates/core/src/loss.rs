//! Distillation objectives.
//!
//! Both losses take the teacher batch `T[n×d]` and the student batch
//! `S[n×d]`, normalize rows internally, and differentiate with respect to
//! `S`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Objective {
    /// Mean negative cosine between paired rows.
    Cosine,
    /// InfoNCE-style loss with teacher and in-batch student negatives.
    Contrastive { temperature: f64 },
}

impl Objective {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Objective::Cosine => Ok(()),
            Objective::Contrastive { temperature } if temperature > 0.0 && temperature.is_finite() => Ok(()),
            Objective::Contrastive { .. } => Err(Error::invalid("temperature must be positive")),
        }
    }

    pub fn record(&self, tape: &mut Tape<'_>, teacher: Var, student: Var) -> Result<Var> {
        match *self {
            Objective::Cosine => cosine_distance_loss(tape, teacher, student),
            Objective::Contrastive { temperature } => contrastive_loss(tape, teacher, student, temperature),
        }
    }

    /// Loss value for constant batches.
    pub fn value(&self, teacher: &Tensor, student: &Tensor) -> Result<f64> {
        let mut tape = Tape::new(&[]);
        let t = tape.input(teacher.clone())?;
        let s = tape.input(student.clone())?;
        let l = self.record(&mut tape, t, s)?;
        Ok(tape.value(l).data()[0])
    }

    pub fn label(&self) -> alloc::string::String {
        match self {
            Objective::Cosine => "cosine".into(),
            Objective::Contrastive { temperature } => alloc::format!("contrastive(tau={temperature})"),
        }
    }
}

fn check_batch(tape: &Tape<'_>, teacher: Var, student: Var) -> Result<()> {
    let (t, s) = (tape.value(teacher), tape.value(student));
    if t.shape() != s.shape() {
        return Err(Error::ShapeMismatch {
            op: "loss",
            left: t.shape().to_vec(),
            right: s.shape().to_vec(),
        });
    }
    t.dims2("loss").map(|_| ())
}

/// `-(1/n) Σ tᵢ·sᵢ / (‖tᵢ‖ ‖sᵢ‖)`; zero rows are an error.
pub fn cosine_distance_loss(tape: &mut Tape<'_>, teacher: Var, student: Var) -> Result<Var> {
    check_batch(tape, teacher, student)?;
    let tn = tape.normalize_rows(teacher)?;
    let sn = tape.normalize_rows(student)?;
    let cos = tape.row_dot(tn, sn)?;
    let mean = tape.mean_all(cos)?;
    tape.scale(mean, -1.0)
}

/// `-(1/n) Σᵢ log( e^{sim(tᵢ,sᵢ)/τ} / (Σⱼ e^{sim(tⱼ,sᵢ)/τ} + Σ_{j≠i} e^{sim(sⱼ,sᵢ)/τ}) )`
/// with cosine similarity.
pub fn contrastive_loss(tape: &mut Tape<'_>, teacher: Var, student: Var, temperature: f64) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    check_batch(tape, teacher, student)?;
    let n = tape.value(student).rows();
    let tn = tape.normalize_rows(teacher)?;
    let sn = tape.normalize_rows(student)?;
    // cross[i][j] = sim(sᵢ, tⱼ), own[i][j] = sim(sᵢ, sⱼ)
    let cross = tape.matmul_bt(sn, tn)?;
    let own = tape.matmul_bt(sn, sn)?;
    let logits = tape.concat_cols(alloc::vec![cross, own])?;
    let logits = tape.scale(logits, 1.0 / temperature)?;
    let mask: Vec<bool> = (0..n)
        .flat_map(|i| (0..2 * n).map(move |j| j < n || j - n != i))
        .collect();
    let lse = tape.logsumexp_masked(logits, mask)?;
    let pos = tape.diag(cross)?;
    let pos = tape.scale(pos, 1.0 / temperature)?;
    let per_row = tape.sub(lse, pos)?;
    tape.mean_all(per_row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;
    use crate::rng::SeededRng;

    fn rows(r: &[&[f64]]) -> Tensor {
        Tensor::from_rows(r).unwrap()
    }

    fn random(rng: &mut SeededRng, n: usize, d: usize) -> Tensor {
        Tensor::matrix(n, d, (0..n * d).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let t = rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!((Objective::Cosine.value(&t, &t).unwrap() + 1.0).abs() < 1e-15);
        let s = rows(&[&[0.0, 2.0], &[-3.0, 0.0]]);
        assert_eq!(Objective::Cosine.value(&t, &s).unwrap(), 0.0);
        let v = Objective::Cosine
            .value(&rows(&[&[1.0, 0.0]]), &rows(&[&[1.0, 1.0]]))
            .unwrap();
        assert!((v + core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn cosine_rejects_zero_rows() {
        let t = rows(&[&[1.0, 0.0]]);
        let s = rows(&[&[0.0, 0.0]]);
        assert_eq!(Objective::Cosine.value(&t, &s), Err(Error::ZeroNorm));
    }

    #[test]
    fn contrastive_single_row_is_zero() {
        let t = rows(&[&[0.3, -1.0, 2.0]]);
        let s = rows(&[&[1.0, 0.5, 0.2]]);
        for tau in [0.01, 0.05, 1.0] {
            assert_eq!(
                Objective::Contrastive { temperature: tau }.value(&t, &s).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn contrastive_two_identity_rows() {
        // every off-diagonal similarity is cos(90°) = 0, so each row's
        // denominator is e¹ + e⁰ + e⁰
        let t = Tensor::identity(2);
        let e = core::f64::consts::E;
        let want = -libm::log(e / (e + 2.0));
        let got = Objective::Contrastive { temperature: 1.0 }.value(&t, &t).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn contrastive_rejects_bad_temperature() {
        let t = Tensor::identity(2);
        assert!(Objective::Contrastive { temperature: 0.0 }.value(&t, &t).is_err());
        assert!(Objective::Contrastive { temperature: -1.0 }.validate().is_err());
    }

    #[test]
    fn losses_pass_gradient_check() {
        let mut rng = SeededRng::new(42);
        for _ in 0..20 {
            let t = random(&mut rng, 2, 4);
            let params = [random(&mut rng, 2, 4)];
            let r = check_gradients(
                |tape| {
                    let tv = tape.input(t.clone())?;
                    let s = tape.param(0);
                    cosine_distance_loss(tape, tv, s)
                },
                &params,
                1e-4,
                1e-3,
            )
            .unwrap();
            assert!(r.passed(), "{:?}", r.failures);

            let t = random(&mut rng, 3, 4);
            let params = [random(&mut rng, 3, 4)];
            let r = check_gradients(
                |tape| {
                    let tv = tape.input(t.clone())?;
                    let s = tape.param(0);
                    contrastive_loss(tape, tv, s, 0.05)
                },
                &params,
                1e-4,
                1e-3,
            )
            .unwrap();
            assert!(r.passed(), "{:?}", r.failures);
        }
    }
}
