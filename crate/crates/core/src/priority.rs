//! Teacher-side feature scoring: gradient importance, robustness against
//! worst-case norm-bounded semantic noise, and the combined priority.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{FeatureDecoder, FeatureTensor, Image};
use crate::error::{shape_err, Error, Result};
use crate::rng::rng_for;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Loss increments below this are clamped before taking the reciprocal.
pub const DELTA_LOSS_FLOOR: f64 = 1e-8;

/// `(v - min) / (max - min)`; a constant vector maps to all 0.5.
pub fn normalize_minmax(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return vec![0.5; v.len()];
    }
    v.iter().map(|x| ((x - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
}

/// Raw score vector and its per-image min-max normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub raw: Vec<f64>,
    pub norm: Vec<f64>,
}

impl ScoreVector {
    pub fn from_raw(raw: Vec<f64>) -> Self {
        let norm = normalize_minmax(&raw);
        Self { raw, norm }
    }
}

/// How per-element gradients are pooled into one importance score per feature.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImportancePooling {
    /// Global average of the signed gradient.
    #[default]
    Signed,
    /// Global average of the gradient magnitude.
    Absolute,
}

fn check_geometry(a: &FeatureTensor, dec: &(impl FeatureDecoder + ?Sized)) -> Result<()> {
    if a.shape() != dec.feature_shape() {
        return Err(shape_err(
            "priority",
            format!("features {:?} vs decoder {:?}", a.shape(), dec.feature_shape()),
        ));
    }
    Ok(())
}

/// System loss of decoding `a` against `s`, with its gradient w.r.t. `a` if requested.
fn loss_and_grad(
    a: &Tensor,
    s: &Image,
    dec: &(impl FeatureDecoder + ?Sized),
    want_grad: bool,
) -> Result<(f64, Option<Tensor>)> {
    let mut tape = Tape::new();
    let av = tape.leaf(a.clone());
    let y = dec.decode_var(&mut tape, av)?;
    let target = tape.leaf(Tensor::from_vec(s.pixels().to_vec()));
    let y = tape.reshape(y, &[s.len()])?;
    let loss = tape.mse(y, target)?;
    let lv = tape.value(loss).item();
    if !want_grad {
        return Ok((lv, None));
    }
    let g = tape.backward(loss, &[av])?.pop().expect("one target");
    Ok((lv, Some(g)))
}

/// Decoding loss of `a` against `s`.
pub fn feature_loss(a: &FeatureTensor, s: &Image, dec: &(impl FeatureDecoder + ?Sized)) -> Result<f64> {
    check_geometry(a, dec)?;
    Ok(loss_and_grad(a.tensor(), s, dec, false)?.0)
}

/// Per-feature global average of `dL/da_{k,ij}`, then min-max normalized.
pub fn compute_importance(
    a: &FeatureTensor,
    s: &Image,
    dec: &(impl FeatureDecoder + ?Sized),
    pooling: ImportancePooling,
) -> Result<ScoreVector> {
    check_geometry(a, dec)?;
    let (_, g) = loss_and_grad(a.tensor(), s, dec, true)?;
    let g = g.expect("requested");
    let plane = a.plane();
    let raw = g
        .data()
        .chunks(plane)
        .map(|ch| match pooling {
            ImportancePooling::Signed => ch.iter().sum::<f64>() / plane as f64,
            ImportancePooling::Absolute => ch.iter().map(|v| v.abs()).sum::<f64>() / plane as f64,
        })
        .collect();
    Ok(ScoreVector::from_raw(raw))
}

/// Radius and schedule for the projected gradient ascent on one feature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseBudget {
    /// Radius as a fraction of the feature's own L2 norm.
    pub relative_eps: f64,
    /// Lower bound on the radius, so all-zero features still get a positive ball.
    pub min_eps: f64,
    pub steps: usize,
    /// Step length as a fraction of the radius.
    pub step_fraction: f64,
}

impl Default for NoiseBudget {
    fn default() -> Self {
        Self {
            relative_eps: 0.1,
            min_eps: 1e-6,
            steps: 20,
            step_fraction: 0.1,
        }
    }
}

impl NoiseBudget {
    pub fn eps_for(&self, feature: &[f64]) -> f64 {
        let n = feature.iter().map(|v| v * v).sum::<f64>().sqrt();
        (self.relative_eps * n).max(self.min_eps)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.relative_eps >= 0.0 && self.min_eps > 0.0 && self.step_fraction > 0.0) {
            return Err(Error::Config(format!("invalid noise budget {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticNoise {
    /// Perturbation of feature `k`, `h * w` values.
    pub delta: Vec<f64>,
    pub eps: f64,
    pub base_loss: f64,
    pub loss: f64,
}

fn project(delta: &mut [f64], eps: f64) {
    let n = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > eps {
        let s = eps / n;
        delta.iter_mut().for_each(|v| *v *= s);
    }
}

/// State of one projected gradient ascent: the current perturbation and the best
/// iterate seen so far.
struct Ascent {
    delta: Vec<f64>,
    best: Vec<f64>,
    best_loss: f64,
    base_loss: f64,
    eps: f64,
    step: f64,
}

impl Ascent {
    fn new(plane: usize, eps: f64, step: f64) -> Self {
        Self {
            delta: vec![0.0; plane],
            best: vec![0.0; plane],
            best_loss: f64::NEG_INFINITY,
            base_loss: 0.0,
            eps,
            step,
        }
    }

    /// Records the loss of the current iterate, then steps along `grad` if given.
    fn advance<R: Rng + ?Sized>(&mut self, it: usize, loss: f64, grad: Option<&[f64]>, rng: &mut R) {
        if it == 0 {
            self.base_loss = loss;
        }
        if loss > self.best_loss {
            self.best.copy_from_slice(&self.delta);
            self.best_loss = loss;
        }
        let Some(g) = grad else { return };
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gn > 0.0 {
            for (d, gi) in self.delta.iter_mut().zip(g) {
                *d += self.step * gi / gn;
            }
        } else {
            for d in self.delta.iter_mut() {
                *d += 1e-6 * (rng.random::<f64>() * 2.0 - 1.0);
            }
        }
        project(&mut self.delta, self.eps);
    }

    fn finish(self) -> SemanticNoise {
        SemanticNoise {
            delta: self.best,
            eps: self.eps,
            base_loss: self.base_loss,
            loss: self.best_loss,
        }
    }
}

/// Projected gradient ascent on the decoding loss over perturbations of feature
/// `k` inside an L2 ball of radius `eps`. Steps move `step` along the normalized
/// gradient. Returns the iterate with the highest loss, the zero start included.
#[allow(clippy::too_many_arguments)]
pub fn pga_noise<R: Rng + ?Sized>(
    a: &FeatureTensor,
    k: usize,
    s: &Image,
    dec: &(impl FeatureDecoder + ?Sized),
    eps: f64,
    steps: usize,
    step: f64,
    rng: &mut R,
) -> Result<SemanticNoise> {
    check_geometry(a, dec)?;
    if k >= a.c() {
        return Err(shape_err("pga_noise", format!("feature {k} of {}", a.c())));
    }
    if eps <= 0.0 {
        return Err(Error::Config(format!("noise radius must be positive, got {eps}")));
    }
    let plane = a.plane();
    let mut ascent = Ascent::new(plane, eps, step);
    for it in 0..=steps {
        let mut perturbed = a.tensor().clone();
        for (p, d) in perturbed.data_mut()[k * plane..(k + 1) * plane]
            .iter_mut()
            .zip(&ascent.delta)
        {
            *p += d;
        }
        let (loss, g) = loss_and_grad(&perturbed, s, dec, it < steps)?;
        let gk = g.as_ref().map(|g| &g.data()[k * plane..(k + 1) * plane]);
        ascent.advance(it, loss, gk, rng);
    }
    Ok(ascent.finish())
}

/// Per-sample decoding losses of a `[C, N, H, W]` batch against `s`, with the
/// gradient of each sample's loss w.r.t. its own features if requested.
fn batch_losses_and_grad(
    batch: Tensor,
    s: &Image,
    dec: &(impl FeatureDecoder + ?Sized),
    want_grad: bool,
) -> Result<(Vec<f64>, Option<Tensor>)> {
    let n = batch.shape()[1];
    let mut tape = Tape::new();
    let av = tape.leaf(batch);
    let y = dec.decode_var(&mut tape, av)?;
    let px = s.pixels();
    let yv = tape.value(y);
    if yv.len() != n * px.len() {
        return Err(shape_err("batch decode", format!("{:?} for {n} images", yv.shape())));
    }
    let channels = yv.shape()[0];
    let plane = px.len() / channels;
    let losses = (0..n)
        .map(|i| {
            let sq: f64 = (0..channels)
                .flat_map(|c| {
                    let out = &yv.data()[(c * n + i) * plane..(c * n + i + 1) * plane];
                    out.iter().zip(&px[c * plane..(c + 1) * plane])
                })
                .map(|(x, t)| (x - t) * (x - t))
                .sum();
            sq / px.len() as f64
        })
        .collect();
    if !want_grad {
        return Ok((losses, None));
    }
    let target: Vec<f64> = (0..channels)
        .flat_map(|c| (0..n).flat_map(move |_| px[c * plane..(c + 1) * plane].iter().copied()))
        .collect();
    let shape = yv.shape().to_vec();
    let target = tape.leaf(Tensor::new(&shape, target)?);
    let loss = tape.mse(y, target)?;
    // The batch mean carries a 1/N on every sample's gradient.
    let g = tape
        .backward(loss, &[av])?
        .pop()
        .expect("one target")
        .map(|v| v * n as f64);
    Ok((losses, Some(g)))
}

/// [`pga_noise`] on every feature at once, decoding all `c` perturbed tensors as
/// one batch per step. `eps`, `step` and `rngs` hold one entry per feature.
fn pga_noise_batched<R: Rng>(
    a: &FeatureTensor,
    s: &Image,
    dec: &(impl FeatureDecoder + ?Sized),
    eps: &[f64],
    steps: usize,
    step: &[f64],
    rngs: &mut [R],
) -> Result<Vec<SemanticNoise>> {
    let (c, plane) = (a.c(), a.plane());
    let mut ascents: Vec<Ascent> = eps
        .iter()
        .zip(step)
        .map(|(&e, &st)| Ascent::new(plane, e, st))
        .collect();
    let [_, h, w] = a.shape();
    for it in 0..=steps {
        // Sample n is `a` with feature n perturbed: entry (ch, n) of the batch.
        let mut batch = Vec::with_capacity(c * c * plane);
        for ch in 0..c {
            for (n, ascent) in ascents.iter().enumerate() {
                let base = a.feature(ch);
                if n == ch {
                    batch.extend(base.iter().zip(&ascent.delta).map(|(x, d)| x + d));
                } else {
                    batch.extend_from_slice(base);
                }
            }
        }
        let batch = Tensor::new(&[c, c, h, w], batch)?;
        let (losses, g) = batch_losses_and_grad(batch, s, dec, it < steps)?;
        for (k, (ascent, rng)) in ascents.iter_mut().zip(rngs.iter_mut()).enumerate() {
            let gk = g
                .as_ref()
                .map(|g| &g.data()[(k * c + k) * plane..(k * c + k + 1) * plane]);
            ascent.advance(it, losses[k], gk, rng);
        }
    }
    Ok(ascents.into_iter().map(Ascent::finish).collect())
}

/// [`pga_noise`] with the radius and schedule taken from `budget`.
pub fn generate_semantic_noise<R: Rng + ?Sized>(
    a: &FeatureTensor,
    k: usize,
    s: &Image,
    dec: &(impl FeatureDecoder + ?Sized),
    budget: &NoiseBudget,
    rng: &mut R,
) -> Result<SemanticNoise> {
    budget.validate()?;
    if k >= a.c() {
        return Err(shape_err("semantic noise", format!("feature {k} of {}", a.c())));
    }
    let eps = budget.eps_for(a.feature(k));
    pga_noise(a, k, s, dec, eps, budget.steps, budget.step_fraction * eps, rng)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Robustness {
    pub scores: ScoreVector,
    /// Clamped loss increments, one per feature.
    pub delta_loss: Vec<f64>,
    pub noises: Vec<SemanticNoise>,
}

/// `r_k = 1 / max(dL_k, 1e-8)` where `dL_k` is the loss increase caused by the
/// worst-case noise on feature `k`, then min-max normalized.
pub fn compute_robustness(
    a: &FeatureTensor,
    s: &Image,
    dec: &(impl FeatureDecoder + ?Sized),
    budget: &NoiseBudget,
    seed: u64,
) -> Result<Robustness> {
    let mut rngs: Vec<_> = (0..a.c()).map(|k| rng_for(seed, &[0xB0B, k as u64])).collect();
    let noises = if dec.decodes_batches() {
        check_geometry(a, dec)?;
        budget.validate()?;
        let eps: Vec<f64> = (0..a.c()).map(|k| budget.eps_for(a.feature(k))).collect();
        let step: Vec<f64> = eps.iter().map(|e| budget.step_fraction * e).collect();
        pga_noise_batched(a, s, dec, &eps, budget.steps, &step, &mut rngs)?
    } else {
        rngs.iter_mut()
            .enumerate()
            .map(|(k, rng)| generate_semantic_noise(a, k, s, dec, budget, rng))
            .collect::<Result<_>>()?
    };
    let delta_loss: Vec<f64> = noises
        .iter()
        .map(|n| (n.loss - n.base_loss).max(DELTA_LOSS_FLOOR))
        .collect();
    let raw = delta_loss.iter().map(|d| 1.0 / d).collect();
    Ok(Robustness {
        scores: ScoreVector::from_raw(raw),
        delta_loss,
        noises,
    })
}

/// Preference between importance (`alpha`) and robustness (`beta`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorityWeights {
    alpha: f64,
    beta: f64,
}

impl PriorityWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && (alpha + beta - 1.0).abs() < 1e-9) {
            return Err(Error::InvalidWeights { alpha, beta });
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

impl Default for PriorityWeights {
    fn default() -> Self {
        Self { alpha: 0.5, beta: 0.5 }
    }
}

/// `xi_k = alpha * w_k + beta * (1 - r_k)`.
pub fn combine_priority(w: &[f64], r: &[f64], weights: PriorityWeights) -> Result<Vec<f64>> {
    if w.len() != r.len() {
        return Err(Error::Length {
            what: "robustness vector",
            expected: w.len(),
            actual: r.len(),
        });
    }
    Ok(w.iter()
        .zip(r)
        .map(|(wi, ri)| weights.alpha * wi + weights.beta * (1.0 - ri))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherSettings {
    pub budget: NoiseBudget,
    pub pooling: ImportancePooling,
    pub weights: PriorityWeights,
}

impl Default for TeacherSettings {
    fn default() -> Self {
        Self {
            budget: NoiseBudget::default(),
            pooling: ImportancePooling::Signed,
            weights: PriorityWeights::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TeacherPriority {
    pub importance: ScoreVector,
    pub robustness: Robustness,
    pub priority: Vec<f64>,
}

/// Importance, robustness and their combination for one image.
pub fn teacher_priority(
    a: &FeatureTensor,
    s: &Image,
    dec: &(impl FeatureDecoder + ?Sized),
    settings: &TeacherSettings,
    seed: u64,
) -> Result<TeacherPriority> {
    let importance = compute_importance(a, s, dec, settings.pooling)?;
    let robustness = compute_robustness(a, s, dec, &settings.budget, seed)?;
    let priority = combine_priority(&importance.norm, &robustness.scores.norm, settings.weights)?;
    Ok(TeacherPriority {
        importance,
        robustness,
        priority,
    })
}

/// `y = W vec(A) + b`, reshaped to the image. Used as an analytically tractable
/// stand-in for the learned decoder.
#[derive(Clone, Debug)]
pub struct LinearDecoder {
    pub shape: [usize; 3],
    /// `[out, c*h*w]`.
    pub w: Tensor,
    pub b: Tensor,
}

impl FeatureDecoder for LinearDecoder {
    fn feature_shape(&self) -> [usize; 3] {
        self.shape
    }

    fn decode_var(&self, tape: &mut Tape, features: crate::tape::Var) -> Result<crate::tape::Var> {
        let n = self.shape.iter().product();
        let x = tape.reshape(features, &[n])?;
        let w = tape.leaf(self.w.clone());
        let b = tape.leaf(self.b.clone());
        tape.dense(x, w, Some(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{random_image, Codec, Geometry};
    use crate::stats::spearman;

    fn toy(seed: u64) -> (LinearDecoder, FeatureTensor, Image) {
        let mut rng = rng_for(seed, &[]);
        let shape = [3, 2, 2];
        let dec = LinearDecoder {
            shape,
            w: Tensor::uniform(&[12, 12], 0.5, &mut rng),
            b: Tensor::uniform(&[12], 0.1, &mut rng),
        };
        let a = FeatureTensor::new(Tensor::uniform(&[3, 2, 2], 1.0, &mut rng)).unwrap();
        (dec, a, random_image(2, 2, &mut rng))
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(normalize_minmax(&[2.0, 4.0, 6.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize_minmax(&[3.0; 4]), vec![0.5; 4]);
        assert_eq!(normalize_minmax(&[-1.0]), vec![0.5]);
    }

    #[test]
    fn combine_examples() {
        let w = PriorityWeights::new(0.5, 0.5).unwrap();
        assert_eq!(combine_priority(&[1.0], &[0.0], w).unwrap(), vec![1.0]);
        let w = PriorityWeights::new(0.7, 0.3).unwrap();
        assert!((combine_priority(&[0.5], &[0.5], w).unwrap()[0] - 0.5).abs() < 1e-15);
        assert!(PriorityWeights::new(1.0, 0.0).is_err());
        assert!(PriorityWeights::new(0.6, 0.6).is_err());
        assert!(combine_priority(&[0.1, 0.2], &[0.3], w).is_err());
    }

    #[test]
    fn ignored_feature_has_zero_importance() {
        let (mut dec, a, s) = toy(1);
        // feature 1 occupies columns 4..8
        for row in 0..12 {
            for col in 4..8 {
                dec.w.data_mut()[row * 12 + col] = 0.0;
            }
        }
        let imp = compute_importance(&a, &s, &dec, ImportancePooling::Signed).unwrap();
        assert_eq!(imp.raw[1], 0.0);
    }

    #[test]
    fn importance_matches_directional_difference() {
        let (dec, a, s) = toy(2);
        let imp = compute_importance(&a, &s, &dec, ImportancePooling::Signed).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let shifted = |d: f64| {
                let mut t = a.clone();
                t.feature_mut(k).iter_mut().for_each(|v| *v += d);
                feature_loss(&t, &s, &dec).unwrap()
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h) / 4.0;
            assert!(
                (fd - imp.raw[k]).abs() <= 1e-4 * fd.abs().max(1e-8),
                "{k}: {fd} vs {}",
                imp.raw[k]
            );
        }
    }

    #[test]
    fn duplicated_features_get_equal_importance() {
        let (mut dec, a, s) = toy(3);
        let mut a = a;
        let f0 = a.feature(0).to_vec();
        a.feature_mut(2).copy_from_slice(&f0);
        for row in 0..12 {
            for j in 0..4 {
                dec.w.data_mut()[row * 12 + 8 + j] = dec.w.data()[row * 12 + j];
            }
        }
        let imp = compute_importance(&a, &s, &dec, ImportancePooling::Signed).unwrap();
        assert!((imp.raw[0] - imp.raw[2]).abs() < 1e-15);
    }

    #[test]
    fn noise_stays_in_ball_and_never_lowers_loss() {
        let (dec, a, s) = toy(4);
        let budget = NoiseBudget::default();
        for k in 0..3 {
            let n = generate_semantic_noise(&a, k, &s, &dec, &budget, &mut rng_for(0, &[])).unwrap();
            let norm = n.delta.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= n.eps + 1e-9);
            assert!(n.loss >= n.base_loss);
            let mut p = a.clone();
            p.feature_mut(k).iter_mut().zip(&n.delta).for_each(|(x, d)| *x += d);
            assert!((feature_loss(&p, &s, &dec).unwrap() - n.loss).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_gradient_start_still_moves() {
        // decoder ignores everything: gradient is identically zero
        let (mut dec, a, s) = toy(5);
        dec.w = Tensor::zeros(&[12, 12]);
        let n = generate_semantic_noise(&a, 0, &s, &dec, &NoiseBudget::default(), &mut rng_for(1, &[])).unwrap();
        assert_eq!(n.loss, n.base_loss);
        assert!(n.delta.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn robustness_orders_inverse_to_loss_increment() {
        let (dec, a, s) = toy(6);
        let r = compute_robustness(&a, &s, &dec, &NoiseBudget::default(), 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if r.delta_loss[i] < r.delta_loss[j] {
                    assert!(r.scores.raw[i] > r.scores.raw[j]);
                }
            }
        }
        let most_robust = (0..3)
            .min_by(|&i, &j| r.delta_loss[i].total_cmp(&r.delta_loss[j]))
            .unwrap();
        assert_eq!(r.scores.norm[most_robust], 1.0);
        assert!(r.delta_loss.iter().all(|&d| d >= DELTA_LOSS_FLOOR));
    }

    #[test]
    fn batched_ascent_matches_one_feature_at_a_time() {
        let codec = Codec::init(Geometry::DESK, 4).unwrap();
        let s = random_image(16, 16, &mut rng_for(5, &[]));
        let a = codec.encode(&s).unwrap();
        let budget = NoiseBudget::default();
        let batched = compute_robustness(&a, &s, &codec.decoder, &budget, 11).unwrap();
        for (k, nb) in batched.noises.iter().enumerate() {
            let mut rng = rng_for(11, &[0xB0B, k as u64]);
            let one = generate_semantic_noise(&a, k, &s, &codec.decoder, &budget, &mut rng).unwrap();
            assert_eq!(nb.eps, one.eps);
            assert!(
                (nb.base_loss - one.base_loss).abs() <= 1e-12 * one.base_loss,
                "feature {k}"
            );
            assert!((nb.loss - one.loss).abs() <= 1e-9 * one.loss, "feature {k}");
            for (x, y) in nb.delta.iter().zip(&one.delta) {
                assert!((x - y).abs() <= 1e-9 * one.eps, "feature {k}");
            }
        }
    }

    #[test]
    fn teacher_is_deterministic_on_codec() {
        let codec = Codec::init(Geometry::DESK, 2).unwrap();
        let s = random_image(16, 16, &mut rng_for(3, &[]));
        let a = codec.encode(&s).unwrap();
        let st = TeacherSettings {
            budget: NoiseBudget {
                steps: 3,
                ..Default::default()
            },
            ..Default::default()
        };
        let t1 = teacher_priority(&a, &s, &codec.decoder, &st, 9).unwrap();
        let t2 = teacher_priority(&a, &s, &codec.decoder, &st, 9).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(t1.priority.len(), 24);
        assert!(t1.priority.iter().all(|p| (0.0..=1.0).contains(p)));
        assert!(spearman(&t1.importance.norm, &t1.priority).is_finite());
    }

    #[test]
    fn geometry_mismatch_rejected() {
        let (dec, _, s) = toy(7);
        let a = FeatureTensor::zeros(2, 2, 2);
        assert!(compute_importance(&a, &s, &dec, ImportancePooling::Signed).is_err());
    }
}
