//! Loss terms and regularisers, all built from graph operations so they can
//! be differentiated (twice, where a regulariser needs it).

use serde::{Deserialize, Serialize};

use crate::data::{AdvLossMode, ExtractLossMode};
use crate::error::{Error, Result};
use crate::substrate::{Graph, Real, Tensor, Var};

/// Probability floor inside logarithms of softmax outputs.
pub const PROB_FLOOR: f64 = 1e-7;
/// Added under square roots so their gradient stays finite at zero.
pub const SQRT_EPS: f64 = 1e-12;

fn mean_softplus<T: Real>(g: &mut Graph<T>, x: Var, negate: bool) -> Result<Var> {
    let x = if negate { g.neg(x) } else { x };
    let sp = g.softplus(x);
    g.mean(sp)
}

/// Generator side of the adversarial game.
pub fn adv_generator_loss<T: Real>(g: &mut Graph<T>, fake_logits: Var, mode: AdvLossMode) -> Result<Var> {
    match mode {
        AdvLossMode::NonSaturating => mean_softplus(g, fake_logits, true),
        // minimise mean log(1 - D(G)) = -mean softplus(fake)
        AdvLossMode::Literal => {
            let m = mean_softplus(g, fake_logits, false)?;
            Ok(g.neg(m))
        }
    }
}

/// Discriminator side; identical in both modes (it maximises `L_adv`).
pub fn adv_discriminator_loss<T: Real>(g: &mut Graph<T>, real_logits: Var, fake_logits: Var) -> Result<Var> {
    let a = mean_softplus(g, real_logits, true)?;
    let b = mean_softplus(g, fake_logits, false)?;
    g.add(a, b)
}

/// `L_adv = mean log σ(real) + mean log(1 − σ(fake))`, evaluated directly.
pub fn adv_value(real_logits: &[f64], fake_logits: &[f64]) -> f64 {
    let softplus = |x: f64| x.max(0.0) + (-x.abs()).exp().ln_1p();
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    -mean(real_logits.iter().map(|&r| softplus(-r)).collect()) - mean(fake_logits.iter().map(|&f| softplus(f)).collect())
}

fn check_probs<T: Real>(g: &Graph<T>, p: Var, op: &'static str) -> Result<usize> {
    let s = g.shape(p);
    if s.len() != 2 || s[1] != 2 {
        return Err(Error::shape(op, s, &[s.first().copied().unwrap_or(1), 2]));
    }
    Ok(s[0])
}

/// Batch mean of `‖0.5 − S(x)‖₂` for covers plus the same for stegos.
pub fn steg_generator_loss<T: Real>(g: &mut Graph<T>, s_cover: Var, s_stego: Var) -> Result<Var> {
    let mut total = None;
    for p in [s_cover, s_stego] {
        let n = check_probs(g, p, "steg_generator_loss")?;
        let d = g.add_scalar(p, T::of(-0.5));
        let sq = g.square(d)?;
        let row = g.sum_to(sq, &[n, 1])?;
        let row = g.add_scalar(row, T::of(SQRT_EPS));
        let norm = g.powf(row, T::of(0.5));
        let m = g.mean(norm)?;
        total = Some(match total {
            None => m,
            Some(t) => g.add(t, m)?,
        });
    }
    Ok(total.expect("two terms"))
}

fn mean_log_column<T: Real>(g: &mut Graph<T>, p: Var, column: usize) -> Result<Var> {
    let n = check_probs(g, p, "steganalyzer_loss")?;
    let mut mask = Tensor::zeros(&[1, 2]);
    mask.data_mut()[column] = T::one();
    let mask = g.leaf(mask);
    let picked = g.mul(p, mask)?;
    let picked = g.sum_to(picked, &[n, 1])?;
    let clamped = g.clamp(picked, T::of(PROB_FLOOR), T::one());
    let logp = g.log(clamped);
    g.mean(logp)
}

/// Cross-entropy with cover = `[1,0]`, stego = `[0,1]`, summed over the two
/// classes and averaged over the batch.
pub fn steganalyzer_loss<T: Real>(g: &mut Graph<T>, s_cover: Var, s_stego: Var) -> Result<Var> {
    let a = mean_log_column(g, s_cover, 0)?;
    let b = mean_log_column(g, s_stego, 1)?;
    let sum = g.add(a, b)?;
    Ok(g.neg(sum))
}

/// Binary cross-entropy of extractor logits against the embedded bits, in
/// logit form (`−log σ(F) = softplus(−F)`).
pub fn extraction_loss<T: Real>(g: &mut Graph<T>, logits: Var, bits: Var, mode: ExtractLossMode) -> Result<Var> {
    if g.shape(logits) != g.shape(bits) {
        return Err(Error::shape("extraction_loss", g.shape(logits), g.shape(bits)));
    }
    let neg = g.neg(logits);
    let pos_term = g.softplus(neg);
    let pos = g.mul(bits, pos_term)?;
    let total = match mode {
        ExtractLossMode::OneSided => pos,
        ExtractLossMode::TwoSided => {
            let nb = g.neg(bits);
            let zero_bits = g.add_scalar(nb, T::one());
            let neg_term = g.softplus(logits);
            let neg = g.mul(zero_bits, neg_term)?;
            g.add(pos, neg)?
        }
    };
    g.mean(total)
}

/// Per-bit decomposition of the variational mutual-information bound
/// `I(d; x) ≥ H(d) + E log q(d | x)` with `q` the extractor's Bernoulli model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiBound {
    /// `H(d)` per bit in nats (`ln 2` for fair bits).
    pub entropy: f64,
    /// `E log q(d | x)` per bit.
    pub conditional: f64,
    pub bound: f64,
}

pub fn mi_lower_bound(logits: &[f64], bits: &[u8]) -> Result<MiBound> {
    if logits.len() != bits.len() || logits.is_empty() {
        return Err(Error::shape("mi_lower_bound", &[logits.len()], &[bits.len()]));
    }
    let softplus = |x: f64| x.max(0.0) + (-x.abs()).exp().ln_1p();
    let sum: f64 = logits
        .iter()
        .zip(bits)
        .map(|(&f, &d)| if d == 1 { -softplus(-f) } else { -softplus(f) })
        .sum();
    let conditional = sum / logits.len() as f64;
    let entropy = std::f64::consts::LN_2;
    Ok(MiBound {
        entropy,
        conditional,
        bound: entropy + conditional,
    })
}

/// `(β/2) · mean_i ‖∇_x D(x_i)‖²`. The returned node depends on the
/// discriminator's parameters through the input gradient.
pub fn r1_penalty<T: Real>(g: &mut Graph<T>, real_logits: Var, real_images: Var, beta: f64) -> Result<Var> {
    let n = g.shape(real_images)[0];
    let total = g.sum(real_logits)?;
    let grad = g.grad(total, &[real_images])?[0];
    let sq = g.square(grad)?;
    let s = g.sum(sq)?;
    Ok(g.scale(s, T::of(beta / 2.0 / n as f64)))
}

/// Per-sample Jacobian norms `a_i = ‖J_ωᵀ ψ_i‖` via `∇_ω ⟨G(ω), ψ⟩`; samples do
/// not interact inside the generator, so one gradient yields all rows.
pub fn path_lengths<T: Real>(g: &mut Graph<T>, images: Var, dlatents: Var, psi: &Tensor<T>) -> Result<Var> {
    if g.shape(images) != psi.shape() {
        return Err(Error::shape("path_lengths", g.shape(images), psi.shape()));
    }
    let n = g.shape(dlatents)[0];
    let p = g.leaf(psi.clone());
    let dot = g.mul(images, p)?;
    let dot = g.sum(dot)?;
    let jw = g.grad(dot, &[dlatents])?[0];
    let sq = g.square(jw)?;
    let rows = g.sum_to(sq, &[n, 1])?;
    let rows = g.add_scalar(rows, T::of(SQRT_EPS));
    Ok(g.powf(rows, T::of(0.5)))
}

/// `mean_i (a_i − η)²`.
pub fn path_length_penalty<T: Real>(g: &mut Graph<T>, lengths: Var, eta: f64) -> Result<Var> {
    let d = g.add_scalar(lengths, T::of(-eta));
    let sq = g.square(d)?;
    g.mean(sq)
}

/// `η ← decay·η + (1 − decay)·a`.
pub fn ema(eta: f64, a: f64, decay: f64) -> f64 {
    decay * eta + (1.0 - decay) * a
}
