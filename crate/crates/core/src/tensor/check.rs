//! Finite-difference gradient checking.
//!
//! The numerical side only ever calls the forward pass, so it stays
//! independent of the backward code it validates. Losses are rebuilt from
//! scratch for every probe; tapes are cheap at the sizes checked here.

use super::{NodeId, Tape};
use crate::error::Result;

/// Default central-difference step.
pub const DEFAULT_H: f64 = 1e-5;

/// Central finite-difference gradient of `f` at `x`.
pub fn numerical_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Relative error between one analytic and one numerical entry. Entries that
/// are both below 1e-8 in magnitude compare as equal.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom < 1e-8 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Largest entrywise relative error between two gradients.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

/// Check every input's analytic gradient against central differences.
///
/// `build` constructs the scalar loss on a fresh tape from variables created
/// in the order of `inputs` (data, shape) pairs. Returns the worst relative
/// error observed, or an error message naming the offending input.
pub fn check_gradients(
    build: impl Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
    inputs: &[(Vec<f64>, Vec<usize>)],
    h: f64,
    tol: f64,
) -> std::result::Result<f64, String> {
    let eval = |datas: &[Vec<f64>]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = datas
            .iter()
            .zip(inputs.iter())
            .map(|(data, (_, shape))| tape.variable(data.clone(), shape.clone()).unwrap())
            .collect();
        let loss = build(&mut tape, &ids).expect("loss construction failed");
        tape.value(loss)[0]
    };

    // Analytic gradients from one backward pass.
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .map(|(data, shape)| tape.variable(data.clone(), shape.clone()).unwrap())
        .collect();
    let loss = build(&mut tape, &ids).map_err(|e| format!("loss construction failed: {e}"))?;
    tape.backward(loss).map_err(|e| format!("backward failed: {e}"))?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| {
            tape.grad(id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; tape.numel_of(id)])
        })
        .collect();

    let base: Vec<Vec<f64>> = inputs.iter().map(|(d, _)| d.clone()).collect();
    let mut worst = 0.0f64;
    for (i, grads) in analytic.iter().enumerate() {
        let numeric = {
            let mut datas = base.clone();
            numerical_grad(
                |probe| {
                    datas[i] = probe.to_vec();
                    eval(&datas)
                },
                &base[i],
                h,
            )
        };
        let err = max_rel_err(grads, &numeric);
        worst = worst.max(err);
        if err > tol {
            return Err(format!(
                "input {i}: max relative error {err:.3e} exceeds tolerance {tol:.1e}\n\
                 analytic: {grads:?}\n numeric: {numeric:?}"
            ));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn rand_tensor(rng: &mut Rng, shape: &[usize]) -> (Vec<f64>, Vec<usize>) {
        let n: usize = shape.iter().product();
        ((0..n).map(|_| rng.uniform(-1.0, 1.0)).collect(), shape.to_vec())
    }

    const TOL: f64 = 1e-6;

    #[test]
    fn grad_matmul() {
        let mut rng = Rng::new(1);
        let inputs = vec![rand_tensor(&mut rng, &[3, 4]), rand_tensor(&mut rng, &[4, 2])];
        check_gradients(
            |tape, ids| {
                let c = tape.matmul(ids[0], ids[1])?;
                Ok(tape.sum_all(c))
            },
            &inputs,
            DEFAULT_H,
            TOL,
        )
        .unwrap();
    }

    #[test]
    fn grad_elementwise_family() {
        let mut rng = Rng::new(2);
        let a = rand_tensor(&mut rng, &[3, 3]);
        let b = rand_tensor(&mut rng, &[3, 3]);
        check_gradients(
            |tape, ids| {
                let s = tape.add(ids[0], ids[1])?;
                let d = tape.sub(s, ids[1])?;
                let m = tape.mul(d, ids[0])?;
                let a = tape.affine(m, 0.5, 0.125);
                Ok(tape.mean_all(a))
            },
            &[a, b],
            DEFAULT_H,
            TOL,
        )
        .unwrap();
    }

    #[test]
    fn grad_div_away_from_zero() {
        let mut rng = Rng::new(3);
        let a = rand_tensor(&mut rng, &[2, 3]);
        // Denominators bounded away from zero keep the quotient smooth.
        let b: Vec<f64> = (0..6).map(|_| rng.uniform(0.5, 1.5)).collect();
        check_gradients(
            |tape, ids| {
                let q = tape.div(ids[0], ids[1])?;
                Ok(tape.sum_all(q))
            },
            &[a, (b, vec![2, 3])],
            DEFAULT_H,
            TOL,
        )
        .unwrap();
    }

    #[test]
    fn grad_broadcast_scalar_and_row() {
        let mut rng = Rng::new(4);
        let a = rand_tensor(&mut rng, &[3, 4]);
        let row = rand_tensor(&mut rng, &[4]);
        let scalar = rand_tensor(&mut rng, &[1]);
        check_gradients(
            |tape, ids| {
                let biased = tape.add(ids[0], ids[1])?;
                let shifted = tape.sub(biased, ids[2])?;
                let scaled = tape.mul(shifted, ids[2])?;
                Ok(tape.mean_all(scaled))
            },
            &[a, row, scalar],
            DEFAULT_H,
            TOL,
        )
        .unwrap();
    }

    #[test]
    fn grad_softmax() {
        let mut rng = Rng::new(5);
        let x = rand_tensor(&mut rng, &[3, 5]);
        let probe = rand_tensor(&mut rng, &[3, 5]);
        let probe_data = probe.0.clone();
        check_gradients(
            move |tape, ids| {
                let y = tape.softmax_lastdim(ids[0])?;
                let p = tape.constant(probe_data.clone(), vec![3, 5])?;
                let weighted = tape.mul(y, p)?;
                Ok(tape.sum_all(weighted))
            },
            &[x],
            DEFAULT_H,
            TOL,
        )
        .unwrap();
    }

    #[test]
    fn grad_relu_away_from_kink() {
        let mut rng = Rng::new(6);
        // Inputs at least 0.1 from zero so the central difference never
        // straddles the kink.
        let data: Vec<f64> = (0..12)
            .map(|_| {
                let v = rng.uniform(0.1, 1.0);
                if rng.chance(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect();
        check_gradients(
            |tape, ids| {
                let y = tape.relu(ids[0]);
                Ok(tape.sum_all(y))
            },
            &[(data, vec![3, 4])],
            DEFAULT_H,
            TOL,
        )
        .unwrap();
    }

    #[test]
    fn grad_tanh() {
        let mut rng = Rng::new(7);
        let x = rand_tensor(&mut rng, &[2, 4]);
        check_gradients(
            |tape, ids| {
                let y = tape.tanh_elem(ids[0]);
                Ok(tape.mean_all(y))
            },
            &[x],
            DEFAULT_H,
            TOL,
        )
        .unwrap();
    }

    #[test]
    fn grad_layer_norm() {
        let mut rng = Rng::new(8);
        let x = rand_tensor(&mut rng, &[3, 4]);
        let gamma = rand_tensor(&mut rng, &[4]);
        let beta = rand_tensor(&mut rng, &[4]);
        let probe: Vec<f64> = (0..12).map(|_| rng.uniform(-1.0, 1.0)).collect();
        check_gradients(
            move |tape, ids| {
                let y = tape.layer_norm_lastdim(ids[0], ids[1], ids[2])?;
                let p = tape.constant(probe.clone(), vec![3, 4])?;
                let weighted = tape.mul(y, p)?;
                Ok(tape.sum_all(weighted))
            },
            &[x, gamma, beta],
            DEFAULT_H,
            TOL,
        )
        .unwrap();
    }

    #[test]
    fn grad_conv1d() {
        let mut rng = Rng::new(9);
        let x = rand_tensor(&mut rng, &[5, 3]);
        let w = rand_tensor(&mut rng, &[3, 3, 2]);
        let b = rand_tensor(&mut rng, &[2]);
        let probe: Vec<f64> = (0..10).map(|_| rng.uniform(-1.0, 1.0)).collect();
        check_gradients(
            move |tape, ids| {
                let y = tape.conv1d_temporal(ids[0], ids[1], ids[2])?;
                let p = tape.constant(probe.clone(), vec![5, 2])?;
                let weighted = tape.mul(y, p)?;
                Ok(tape.sum_all(weighted))
            },
            &[x, w, b],
            DEFAULT_H,
            TOL,
        )
        .unwrap();
    }

    #[test]
    fn grad_structural_ops() {
        let mut rng = Rng::new(10);
        let x = rand_tensor(&mut rng, &[4, 3]);
        check_gradients(
            |tape, ids| {
                let t = tape.transpose(ids[0])?;
                let back = tape.transpose(t)?;
                let top = tape.slice_time(back, 0, 2)?;
                let cols = tape.slice_lastdim(top, 1, 2)?;
                let gathered = tape.gather_rows(cols, &[1, 0, 1])?;
                let cat = tape.concat_lastdim(&[gathered, gathered])?;
                Ok(tape.mean_all(cat))
            },
            &[x],
            DEFAULT_H,
            TOL,
        )
        .unwrap();
    }

    #[test]
    fn grad_cross_entropy_rows() {
        let mut rng = Rng::new(11);
        let x = rand_tensor(&mut rng, &[4, 5]);
        let targets = vec![0usize, 3, 2, 4];
        let weights = vec![1.5, 0.5, 2.0, 1.0, 0.25];
        check_gradients(
            move |tape, ids| tape.cross_entropy_rows(ids[0], &targets, &weights),
            &[x],
            DEFAULT_H,
            TOL,
        )
        .unwrap();
    }

    #[test]
    fn grad_bce_logits() {
        let mut rng = Rng::new(12);
        let x = rand_tensor(&mut rng, &[3, 4]);
        let targets: Vec<f64> = (0..12).map(|_| if rng.chance(0.5) { 1.0 } else { 0.0 }).collect();
        let pos_weights = vec![1.0, 2.0, 0.5, 1.25];
        check_gradients(
            move |tape, ids| tape.bce_logits(ids[0], &targets, &pos_weights),
            &[x],
            DEFAULT_H,
            TOL,
        )
        .unwrap();
    }

    #[test]
    fn grad_composite_chain() {
        // The spec-level composite case: analytic matches central differences.
        let mut rng = Rng::new(13);
        let x = rand_tensor(&mut rng, &[3, 3]);
        let w = rand_tensor(&mut rng, &[3, 3]);
        check_gradients(
            |tape, ids| {
                let h = tape.matmul(ids[0], ids[1])?;
                let act = tape.tanh_elem(h);
                let sm = tape.softmax_lastdim(act)?;
                let sq = tape.mul(sm, sm)?;
                Ok(tape.mean_all(sq))
            },
            &[x, w],
            DEFAULT_H,
            TOL,
        )
        .unwrap();
    }
}
