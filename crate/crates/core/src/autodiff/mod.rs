//! Dense f64 tensors with a reverse-mode tape.

mod tape;
mod tensor;

pub use tape::{bce_value, Gradients, Tape, Var, BCE_CLAMP};
pub use tensor::Tensor;

use crate::error::Result;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Outcome of comparing tape gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Per parameter: max |analytic − numeric| / max(max|analytic|, max|numeric|, 1e-8).
    pub relative_errors: Vec<f64>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().fold(0.0, |m, &e| m.max(e))
    }

    pub fn passed(&self) -> bool {
        self.max_relative_error() <= self.tolerance
    }
}

/// Evaluate the scalar function `f` of `params` on a fresh tape, backpropagate,
/// and compare every gradient entry with a central difference of step `step`.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut work = params.to_vec();
    let mut relative_errors = Vec::with_capacity(params.len());
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads
            .get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(params[i].shape()));
        let mut numeric = vec![0.0; params[i].len()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = work[i].data()[k];
            work[i].data_mut()[k] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[k] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[k] = orig;
            *slot = (plus - minus) / (2.0 * step);
        }
        let diff = analytic
            .data()
            .iter()
            .zip(&numeric)
            .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
        let scale = analytic
            .max_abs()
            .max(numeric.iter().fold(0.0f64, |m, x| m.max(x.abs())))
            .max(1e-8);
        relative_errors.push(diff / scale);
    }
    Ok(GradCheckReport {
        relative_errors,
        tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigmoid_and_tanh_values() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![0.0, 1000.0, -1000.0]));
        let s = t.sigmoid(x).unwrap();
        assert_eq!(t.value(s).data(), &[0.5, 1.0, 0.0]);
        let h = t.tanh(x).unwrap();
        assert_eq!(t.value(h).data(), &[0.0, 1.0, -1.0]);
    }

    #[test]
    fn affine_matches_hand_computation() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![0.0, -1.0]]).unwrap());
        let w = t.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![2.0, 3.0], vec![0.5, 0.5]]).unwrap());
        let b = t.constant(Tensor::vector(vec![0.0, 1.0, -1.0]));
        let y = t.affine(x, w, Some(b)).unwrap();
        assert_eq!(t.value(y).shape(), &[2, 3]);
        assert_eq!(t.value(y).data(), &[1.0, 9.0, 0.5, 0.0, -2.0, -1.5]);
        let bad = t.constant(Tensor::zeros(&[3, 3]));
        assert!(matches!(t.affine(x, bad, None), Err(Error::Shape { .. })));
    }

    #[test]
    fn segment_reductions() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[vec![1.0], vec![3.0], vec![5.0]]).unwrap());
        let seg = [0, 0, 1];
        let mean = t.segment_mean(x, &seg, 3).unwrap();
        assert_eq!(t.value(mean).data(), &[2.0, 5.0, 0.0]);
        let max = t.segment_max(x, &seg, 3).unwrap();
        assert_eq!(t.value(max).data(), &[3.0, 5.0, 0.0]);
        let min = t.segment_min(x, &seg, 3).unwrap();
        assert_eq!(t.value(min).data(), &[1.0, 5.0, 0.0]);
        let std = t.segment_std(x, &seg, 3).unwrap();
        assert_eq!(t.value(std).data(), &[1.0, 0.0, 0.0]);
        let sum = t.scatter_accumulate(x, &seg, 3).unwrap();
        assert_eq!(t.value(sum).data(), &[4.0, 5.0, 0.0]);
        assert!(t.segment_mean(x, &[0, 0], 3).is_err());
        assert!(t.segment_mean(x, &[0, 0, 3], 3).is_err());
    }

    #[test]
    fn square_sum_gradient_is_twice_input() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.5, -2.0, 0.25]));
        let sq = t.hadamard(x, x).unwrap();
        let s = t.sum(sq).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[3.0, -4.0, 0.5]);
    }

    #[test]
    fn max_routes_to_first_argmax() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_rows(&[vec![2.0], vec![2.0], vec![1.0]]).unwrap());
        let m = t.segment_max(x, &[0, 0, 0], 1).unwrap();
        let s = t.sum(m).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn singleton_std_gradient_is_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_rows(&[vec![4.0]]).unwrap());
        let s = t.segment_std(x, &[0], 1).unwrap();
        let l = t.sum(s).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_foreign_vars() {
        let mut other = Tape::new();
        for _ in 0..5 {
            other.constant(Tensor::scalar(0.0));
        }
        let foreign = other.constant(Tensor::scalar(0.0));
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::Shape { .. })));
        assert!(matches!(t.backward(foreign), Err(Error::State(_))));
        assert!(t.sigmoid(foreign).is_err());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0]));
        let c = t.constant(Tensor::vector(vec![3.0]));
        let y = t.hadamard(x, c).unwrap();
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[3.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn dropout_modes() {
        let mut eval = Tape::new();
        let x = eval.leaf(Tensor::full(&[1000], 1.0));
        assert_eq!(eval.dropout(x, 0.5).unwrap(), x);
        assert!(matches!(eval.dropout(x, 1.0), Err(Error::Config(_))));
        assert!(matches!(eval.dropout(x, -0.1), Err(Error::Config(_))));

        let mut train = Tape::training(7);
        let x = train.leaf(Tensor::full(&[1000], 1.0));
        let y = train.dropout(x, 0.5).unwrap();
        let vals = train.value(y).data().to_vec();
        assert!(vals.iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = vals.iter().filter(|&&v| v > 0.0).count();
        assert!((400..600).contains(&kept));
        let s = train.sum(y).unwrap();
        let g = train.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &vals[..]);
    }

    #[test]
    fn bce_value_and_clamp() {
        let l = bce_value(&[0.5, 0.5], &[1.0, 0.0]);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let l = bce_value(&[0.0], &[1.0]);
        assert!((l - (-BCE_CLAMP.ln())).abs() < 1e-9);
        assert!(l.is_finite());
    }

    #[test]
    fn finite_differences_agree_on_composite() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = vec![
            Tensor::uniform(&[4, 3], 1.0, &mut rng),
            Tensor::uniform(&[2, 3], 1.0, &mut rng),
            Tensor::uniform(&[2], 1.0, &mut rng),
            Tensor::uniform(&[3, 2], 1.0, &mut rng),
        ];
        let report = finite_diff_check(
            |t, p| {
                let h = t.affine(p[0], p[1], Some(p[2]))?;
                let h = t.tanh(h)?;
                let g = t.gather(h, &[0, 2, 2, 3, 1])?;
                let mean = t.segment_mean(g, &[0, 1, 1, 2, 2], 3)?;
                let max = t.segment_max(g, &[0, 1, 1, 2, 2], 3)?;
                let min = t.segment_min(g, &[0, 1, 1, 2, 2], 3)?;
                let std = t.segment_std(g, &[0, 1, 1, 2, 2], 3)?;
                let sum = t.scatter_accumulate(g, &[0, 1, 1, 2, 2], 3)?;
                let c = t.concat(&[mean, max, min, std, sum])?;
                let w = t.matmul(p[0], p[3])?;
                let w = t.sigmoid(w)?;
                let d = t.sub(w, w)?;
                let e = t.add(w, d)?;
                let e = t.scale(e, 0.5)?;
                let s1 = t.sum(c)?;
                let labels = vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
                let s2 = t.bce(e, &labels)?;
                t.add(s1, s2)
            },
            &params,
            FD_STEP,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }
    #[test]
    fn constant_function_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = vec![Tensor::uniform(&[3, 2], 1.0, &mut rng)];
        let report = finite_diff_check(
            |t, p| {
                let c = t.constant(Tensor::vector(vec![0.25, -1.5]));
                let z = t.sub(p[0], p[0])?;
                let s = t.sum(z)?;
                let k = t.sum(c)?;
                t.add(s, k)
            },
            &params,
            FD_STEP,
            1e-4,
        )
        .unwrap();
        assert_eq!(report.relative_errors, vec![0.0]);
        let mut t = Tape::new();
        let x = t.leaf(params[0].clone());
        let z = t.sub(x, x).unwrap();
        let s = t.sum(z).unwrap();
        let g = t.backward(s).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn finite_differences_agree_per_primitive() {
        type Op = fn(&mut Tape, &[Var]) -> Result<Var>;
        let ops: [(&str, Op); 16] = [
            ("affine", |t, p| t.affine(p[0], p[2], Some(p[3]))),
            ("matmul", |t, p| t.matmul(p[0], p[4])),
            ("hadamard", |t, p| t.hadamard(p[0], p[1])),
            ("add", |t, p| t.add(p[0], p[1])),
            ("sub", |t, p| t.sub(p[0], p[1])),
            ("scale", |t, p| t.scale(p[0], -1.7)),
            ("sigmoid", |t, p| t.sigmoid(p[0])),
            ("tanh", |t, p| t.tanh(p[0])),
            ("concat", |t, p| t.concat(&[p[0], p[1]])),
            ("dropout_eval", |t, p| t.dropout(p[0], 0.5)),
            ("gather", |t, p| t.gather(p[0], &[4, 0, 0, 2])),
            ("scatter_accumulate", |t, p| t.scatter_accumulate(p[0], &[0, 2, 2, 1, 0], 4)),
            ("segment_mean", |t, p| t.segment_mean(p[0], &[0, 2, 2, 1, 0], 4)),
            ("segment_max", |t, p| t.segment_max(p[0], &[0, 2, 2, 1, 0], 4)),
            ("segment_min", |t, p| t.segment_min(p[0], &[0, 2, 2, 1, 0], 4)),
            ("segment_std", |t, p| t.segment_std(p[0], &[0, 2, 2, 1, 0], 4)),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let params = vec![
            Tensor::uniform(&[5, 3], 1.0, &mut rng),
            Tensor::uniform(&[5, 3], 1.0, &mut rng),
            Tensor::uniform(&[2, 3], 1.0, &mut rng),
            Tensor::uniform(&[2], 1.0, &mut rng),
            Tensor::uniform(&[3, 4], 1.0, &mut rng),
        ];
        for (name, op) in ops {
            let report = finite_diff_check(
                |t, p| {
                    let out = op(t, p)?;
                    let shape = t.value(out).shape().to_vec();
                    let mut r = ChaCha8Rng::seed_from_u64(1);
                    let w = t.constant(Tensor::uniform(&shape, 1.0, &mut r));
                    let y = t.hadamard(out, w)?;
                    t.sum(y)
                },
                &params,
                FD_STEP,
                1e-4,
            )
            .unwrap();
            assert!(report.passed(), "{name}: {report:?}");
        }
        let report = finite_diff_check(
            |t, p| {
                let s = t.sigmoid(p[1])?;
                t.bce(s, &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0])
            },
            &params,
            FD_STEP,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "bce: {report:?}");
    }
}
