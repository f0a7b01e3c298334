//! Central-difference gradient checking.

use super::{Graph, NumericsError, Tensor, Var};

/// Denominator floor in the relative error `|a − n| / (|a| + FLOOR)`.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

/// Worst relative error between `analytic` and central differences of `f` around `x`.
///
/// `f` must be deterministic; it is evaluated `2 · x.len()` times.
pub fn finite_diff_error(
    analytic: &[f64],
    x: &[f64],
    eps: f64,
    mut f: impl FnMut(&[f64]) -> Result<f64, NumericsError>,
) -> Result<f64, NumericsError> {
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let up = f(&probe)?;
        probe[i] = x[i] - eps;
        let down = f(&probe)?;
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + REL_ERROR_FLOOR);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Like [`finite_diff_error`] with the fourth-order five-point stencil
/// `(8(f(x+ε) − f(x−ε)) − (f(x+2ε) − f(x−2ε))) / 12ε`.
///
/// Deep graphs have entries whose gradients are orders of magnitude below the
/// loss; the wider stencil lets `ε` grow enough to keep rounding noise small
/// without paying second-order truncation error.
pub fn finite_diff_error_fourth_order(
    analytic: &[f64],
    x: &[f64],
    eps: f64,
    mut f: impl FnMut(&[f64]) -> Result<f64, NumericsError>,
) -> Result<f64, NumericsError> {
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    let mut at = |probe: &mut Vec<f64>, i: usize, dx: f64| {
        probe[i] = x[i] + dx;
        let y = f(probe);
        probe[i] = x[i];
        y
    };
    for i in 0..x.len() {
        let d1 = at(&mut probe, i, eps)? - at(&mut probe, i, -eps)?;
        let d2 = at(&mut probe, i, 2.0 * eps)? - at(&mut probe, i, -2.0 * eps)?;
        let numeric = (8.0 * d1 - d2) / (12.0 * eps);
        let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + REL_ERROR_FLOOR);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Checks the graph gradient of a scalar function built by `f` against central differences.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64, NumericsError>
where
    F: Fn(&mut Graph, Var) -> Result<Var, NumericsError>,
{
    let mut g = Graph::new().with_finite_checks(true);
    let input = g.leaf(x.clone().with_requires_grad(true));
    let out = f(&mut g, input)?;
    let grads = g.backward(out)?;
    let analytic = grads
        .wrt(input)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.len()]);
    finite_diff_error(&analytic, x.data(), eps, |probe| {
        let mut g = Graph::new();
        let input = g.constant(x.with_data(probe.to_vec()));
        let out = f(&mut g, input)?;
        Ok(g.value(out).item())
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::Mask;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    const TOL: f64 = 1e-4;
    const SEEDS: u64 = 10;

    #[test]
    fn sum_has_all_ones_gradient() {
        let x = Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]);
        let err = finite_diff_check(|g, v| g.sum_all(v), &x, 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn matmul_gradients_match_finite_differences() {
        for seed in 0..SEEDS {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random(&mut rng, 3, 4);
            let b = random(&mut rng, 4, 2);
            let w = random(&mut rng, 3, 2);
            // weighted sum so each output has a distinct upstream gradient
            let loss_a = |g: &mut Graph, v: Var| {
                let bb = g.constant(b.clone());
                let ww = g.constant(w.clone());
                let c = g.matmul(v, bb)?;
                let c = g.matmul_nt(c, ww)?;
                g.sum_all(c)
            };
            assert!(finite_diff_check(loss_a, &a, 1e-5).unwrap() < TOL);
            let loss_b = |g: &mut Graph, v: Var| {
                let aa = g.constant(a.clone());
                let ww = g.constant(w.clone());
                let c = g.matmul(aa, v)?;
                let c = g.matmul_nt(c, ww)?;
                g.sum_all(c)
            };
            assert!(finite_diff_check(loss_b, &b, 1e-5).unwrap() < TOL);
        }
    }

    #[test]
    fn softmax_norm_gradient_matches_finite_differences() {
        for seed in 0..SEEDS {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let x = random(&mut rng, 3, 5);
            let mask = Mask::causal(3, 5, 1);
            let f = |g: &mut Graph, v: Var| {
                let s = g.softmax_rows(v, Some(&mask))?;
                g.sum_squares(s)
            };
            assert!(finite_diff_check(f, &x, 1e-5).unwrap() < TOL);
        }
    }

    #[test]
    fn layer_norm_gradients_match_finite_differences() {
        for seed in 0..SEEDS {
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let x = random(&mut rng, 3, 8);
            let gain = random(&mut rng, 1, 8).reshape(vec![8]).unwrap();
            let bias = random(&mut rng, 1, 8).reshape(vec![8]).unwrap();
            let w = random(&mut rng, 3, 8);
            let fx = |g: &mut Graph, v: Var| {
                let (gg, bb, ww) = (g.constant(gain.clone()), g.constant(bias.clone()), g.constant(w.clone()));
                let y = g.layer_norm(v, gg, bb)?;
                let y = g.matmul_nt(y, ww)?;
                g.sum_squares(y)
            };
            assert!(finite_diff_check(fx, &x, 1e-5).unwrap() < TOL);
            let fg = |g: &mut Graph, v: Var| {
                let (xx, bb, ww) = (g.constant(x.clone()), g.constant(bias.clone()), g.constant(w.clone()));
                let y = g.layer_norm(xx, v, bb)?;
                let y = g.matmul_nt(y, ww)?;
                g.sum_squares(y)
            };
            assert!(finite_diff_check(fg, &gain, 1e-5).unwrap() < TOL);
            let fb = |g: &mut Graph, v: Var| {
                let (xx, gg, ww) = (g.constant(x.clone()), g.constant(gain.clone()), g.constant(w.clone()));
                let y = g.layer_norm(xx, gg, v)?;
                let y = g.matmul_nt(y, ww)?;
                g.sum_squares(y)
            };
            assert!(finite_diff_check(fb, &bias, 1e-5).unwrap() < TOL);
        }
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        for seed in 0..SEEDS {
            let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
            let logits = random(&mut rng, 4, 6);
            let targets = [1usize, 5, 0, 3];
            let mask = [true, false, true, true];
            let f = |g: &mut Graph, v: Var| g.masked_cross_entropy(v, &targets, &mask);
            assert!(finite_diff_check(f, &logits, 1e-5).unwrap() < TOL);
        }
    }

    #[test]
    fn structural_ops_gradients_match_finite_differences() {
        for seed in 0..SEEDS {
            let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
            let x = random(&mut rng, 4, 6);
            let row = random(&mut rng, 1, 3).reshape(vec![3]).unwrap();
            let w = random(&mut rng, 5, 3);
            let f = |g: &mut Graph, v: Var| {
                let left = g.slice_cols(v, 0, 3)?;
                let right = g.slice_cols(v, 3, 6)?;
                let top = g.slice_rows(left, 0, 2)?;
                let bottom = g.slice_rows(right, 1, 4)?;
                let stacked = g.concat_rows(&[top, bottom])?;
                let picked = g.gather_rows(stacked, &[4, 0, 0, 2])?;
                let wide = g.concat_cols(&[picked, picked])?;
                let narrowed = g.slice_cols(wide, 2, 5)?;
                let rr = g.constant(row.clone());
                let shifted = g.add_row(narrowed, rr)?;
                let act = g.gelu(shifted)?;
                let act = g.scale(act, 0.7)?;
                let sum = g.add(act, narrowed)?;
                let ww = g.constant(w.clone());
                let out = g.matmul_nt(sum, ww)?;
                g.sum_squares(out)
            };
            assert!(finite_diff_check(f, &x, 1e-5).unwrap() < TOL);
        }
    }
}
