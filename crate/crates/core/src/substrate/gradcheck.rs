//! Finite-difference verification of reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const MAX_SCALARS: usize = 512;

/// Below this norm a gradient is treated as zero and judged on absolute error.
const TINY: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub name: String,
    pub max_rel_error: f64,
    /// `(input, element)` with the largest absolute discrepancy.
    pub worst: Option<(usize, usize)>,
    pub tol: f64,
    pub passed: bool,
    pub scalars: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Multiply the analytic gradient by `1 + fault` before comparing.
    pub fault: Option<f64>,
    pub projection_seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: FD_STEP,
            fault: None,
            projection_seed: 0x5eed,
        }
    }
}

/// Compare reverse-mode gradients of `op` against central differences.
///
/// Non-scalar outputs are reduced with a fixed random projection `⟨y, r⟩`.
/// The error for each input is normwise, `‖a − n‖ / max(‖a‖, ‖n‖)`, and the
/// report carries the maximum over inputs.
pub fn check_gradients<F>(name: &str, op: F, inputs: &[Tensor<f64>], tol: f64) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    check_gradients_with(name, op, inputs, tol, GradCheckOptions::default())
}

pub fn check_gradients_with<F>(
    name: &str,
    op: F,
    inputs: &[Tensor<f64>],
    tol: f64,
    opts: GradCheckOptions,
) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let scalars: usize = inputs.iter().map(Tensor::len).sum();
    if scalars > MAX_SCALARS {
        return Err(Error::InvalidArgument(format!(
            "gradient check of {name} needs <= {MAX_SCALARS} input scalars, got {scalars}"
        )));
    }

    let mut projection: Option<Tensor<f64>> = None;
    let mut eval = |inputs: &[Tensor<f64>], want_grad: bool| -> Result<(f64, Vec<Tensor<f64>>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let y = op(&mut g, &vars)?;
        let r = projection
            .get_or_insert_with(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.projection_seed);
                Tensor::from_fn(g.shape(y), |_| rng.random_range(-1.0..1.0))
            })
            .clone();
        if r.shape() != g.shape(y) {
            return Err(Error::shape("check_gradients", r.shape(), g.shape(y)));
        }
        let r = g.leaf(r);
        let p = g.mul(y, r)?;
        let s = g.sum(p)?;
        let value = g.scalar_value(s);
        if !want_grad {
            return Ok((value, Vec::new()));
        }
        let grads = g.grad(s, &vars)?;
        Ok((value, grads.into_iter().map(|v| g.value(v).clone()).collect()))
    };

    let (_, analytic) = eval(inputs, true)?;
    let mut worst = None;
    let mut worst_abs = -1.0;
    let mut max_rel: f64 = 0.0;
    let mut perturbed: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, grad) in analytic.iter().enumerate() {
        let (mut err2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for j in 0..grad.len() {
            let a = grad.data()[j] * (1.0 + opts.fault.unwrap_or(0.0));
            if !a.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("gradient of {name}"),
                    location: Some(format!("input {k} element {j}")),
                });
            }
            let orig = inputs[k].data()[j];
            perturbed[k].data_mut()[j] = orig + opts.step;
            let (fp, _) = eval(&perturbed, false)?;
            perturbed[k].data_mut()[j] = orig - opts.step;
            let (fm, _) = eval(&perturbed, false)?;
            perturbed[k].data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * opts.step);
            if !numeric.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("finite difference of {name}"),
                    location: Some(format!("input {k} element {j}")),
                });
            }
            let diff = (a - numeric).abs();
            if diff > worst_abs {
                worst_abs = diff;
                worst = Some((k, j));
            }
            err2 += diff * diff;
            a2 += a * a;
            n2 += numeric * numeric;
        }
        let denom = a2.sqrt().max(n2.sqrt());
        let rel = if denom < TINY { err2.sqrt() } else { err2.sqrt() / denom };
        max_rel = max_rel.max(rel);
    }
    Ok(GradReport {
        name: name.to_string(),
        max_rel_error: max_rel,
        worst,
        tol,
        passed: max_rel <= tol,
        scalars,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::substrate::layers;

    fn seeded(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn linear_op_is_exact() {
        let x = seeded(&[4, 8], 1);
        let w = seeded(&[8, 3], 2);
        let b = seeded(&[3], 3);
        let r = check_gradients(
            "fully_connected",
            |g, v| layers::fully_connected(g, v[0], v[1], v[2]),
            &[x, w, b],
            1e-10,
        )
        .unwrap();
        // bilinear in (x, w): central differences are exact up to rounding
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn leaky_relu_away_from_kink() {
        let x = Tensor::new(vec![6], vec![-1.3, -0.7, -0.2, 0.3, 0.9, 2.0]).unwrap();
        let r = check_gradients("leaky_relu", |g, v| Ok(g.leaky_relu(v[0], 0.2)), &[x], 1e-6).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let x = seeded(&[5], 7);
        let opts = GradCheckOptions {
            fault: Some(0.1),
            ..Default::default()
        };
        let r = check_gradients_with("exp", |g, v| Ok(g.exp(v[0])), &[x], 1e-4, opts).unwrap();
        assert!(r.max_rel_error >= 0.05, "{r:?}");
        assert!(!r.passed);
    }

    #[test]
    fn oversize_inputs_rejected() {
        let x = Tensor::zeros(&[600]);
        assert!(check_gradients("id", |_, v| Ok(v[0]), &[x], 1e-4).is_err());
    }

    #[test]
    fn non_finite_gradient_reports_location() {
        let x = Tensor::new(vec![2], vec![1.0, 0.0]).unwrap();
        let err = check_gradients("sqrt", |g, v| Ok(g.powf(v[0], 0.5)), &[x], 1e-4).unwrap_err();
        assert!(err.to_string().contains("input 0 element 1"), "{err}");
    }
}
