//! White-box adversarial example generation: FGSM and DeepFool.
//!
//! Attacks operate in unit-interval pixel space on the float tensor the
//! network consumes. The perturbation `delta` is exact in that space
//! (norms and budget bounds are computed from it); the adversarial image is
//! that float result quantized back to 8-bit at the boundary, which is what
//! every downstream consumer (codec, classifier, persistence) sees.

use std::fmt;
use std::str::FromStr;

use crate::codec::ImageU8;
use crate::data_io::Dataset;
use crate::nn::{
    backward, image_to_input, input_to_image, logit_input_gradients, predict, ForwardMode, Model,
    NnError,
};
use crate::parallel::parallel_map;
use crate::tensor::Tensor;

#[derive(Debug)]
pub enum AttackError {
    Nn(NnError),
    /// Clean/adversarial sets differ in length or labels.
    MisalignedSets,
    /// The model classifies nothing correctly, so the success rate has a
    /// zero denominator.
    NoCorrectlyClassified,
    BadConfig(String),
}

impl fmt::Display for AttackError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackError::Nn(e) => write!(f, "{e}"),
            AttackError::MisalignedSets => write!(f, "clean and adversarial sets are not aligned"),
            AttackError::NoCorrectlyClassified => {
                write!(f, "no correctly classified instances: success rate undefined")
            }
            AttackError::BadConfig(msg) => write!(f, "bad attack config: {msg}"),
        }
    }
}

impl std::error::Error for AttackError {}

impl From<NnError> for AttackError {
    fn from(e: NnError) -> Self {
        AttackError::Nn(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackMethod {
    Fgsm,
    DeepFool,
}

impl AttackMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackMethod::Fgsm => "fgsm",
            AttackMethod::DeepFool => "deepfool",
        }
    }
}

impl FromStr for AttackMethod {
    type Err = AttackError;
    fn from_str(s: &str) -> Result<Self, AttackError> {
        match s {
            "fgsm" => Ok(AttackMethod::Fgsm),
            "deepfool" => Ok(AttackMethod::DeepFool),
            other => Err(AttackError::BadConfig(format!("unknown attack method '{other}'"))),
        }
    }
}

impl fmt::Display for AttackMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttackConfig {
    pub method: AttackMethod,
    /// FGSM L-infinity budget in unit pixel units.
    pub epsilon: f32,
    /// DeepFool final-step scaling beyond the boundary.
    pub overshoot: f32,
    /// DeepFool iteration cap.
    pub max_iter: usize,
}

impl AttackConfig {
    pub fn fgsm(epsilon: f32) -> Self {
        AttackConfig {
            method: AttackMethod::Fgsm,
            epsilon,
            overshoot: 0.02,
            max_iter: 50,
        }
    }

    pub fn deepfool(overshoot: f32, max_iter: usize) -> Self {
        AttackConfig {
            method: AttackMethod::DeepFool,
            epsilon: 0.0,
            overshoot,
            max_iter,
        }
    }

    pub fn check(&self) -> Result<(), AttackError> {
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(AttackError::BadConfig(format!("epsilon {} must be >= 0", self.epsilon)));
        }
        if self.overshoot.is_nan() || self.overshoot < 0.0 {
            return Err(AttackError::BadConfig(format!(
                "overshoot {} must be >= 0",
                self.overshoot
            )));
        }
        if self.max_iter == 0 {
            return Err(AttackError::BadConfig("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// One attacked instance. `label_before` is the reference label the caller
/// supplied; success means the model disagrees with it on the adversarial
/// image. `delta` is the exact float-space perturbation after clamping to
/// [0,1]; `x_adversarial` is `x_original + delta` quantized to bytes.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub x_original: ImageU8,
    pub x_adversarial: ImageU8,
    pub delta: Tensor,
    pub label_before: usize,
    pub label_after: usize,
    pub success: bool,
    pub linf_norm: f64,
    pub l2_norm: f64,
    pub iterations: usize,
}

/// Assemble the result from the canonical perturbation: the adversarial
/// image is clamp(x + delta) quantized to bytes, and the norms come from
/// delta itself.
fn finalize(
    model: &Model,
    x: &ImageU8,
    x_t: &Tensor,
    delta: Tensor,
    label_before: usize,
    iterations: usize,
) -> Result<AttackResult, AttackError> {
    let perturbed_data: Vec<f32> = x_t
        .data()
        .iter()
        .zip(delta.data())
        .map(|(&v, &d)| (v + d).clamp(0.0, 1.0))
        .collect();
    let perturbed = Tensor::new(x_t.shape().to_vec(), perturbed_data);
    let x_adv = input_to_image(&perturbed)?;
    let (label_after, _) = predict(model, &x_adv)?;
    Ok(AttackResult {
        x_original: x.clone(),
        x_adversarial: x_adv,
        linf_norm: delta.linf_norm(),
        l2_norm: delta.l2_norm(),
        delta,
        label_before,
        label_after,
        success: label_after != label_before,
        iterations,
    })
}

/// Fast gradient sign method: one loss-gradient evaluation with dropout off,
/// then x' = clamp(x + epsilon * sign(grad)). sign(0) = 0, so epsilon = 0 or
/// a zero gradient reproduces the input exactly.
pub fn fgsm(model: &Model, x: &ImageU8, y_true: usize, epsilon: f32) -> Result<AttackResult, AttackError> {
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(AttackError::BadConfig(format!("epsilon {epsilon} must be >= 0")));
    }
    let x_t = image_to_input(x);
    let grads = backward(model, &x_t, &[y_true], &ForwardMode::Eval)?;
    // Build the perturbation directly: +-epsilon capped by the distance to
    // the pixel box, so the L-infinity budget holds exactly in f32.
    let delta: Vec<f32> = x_t
        .data()
        .iter()
        .zip(grads.input.data())
        .map(|(&v, &g)| {
            if g > 0.0 {
                epsilon.min(1.0 - v)
            } else if g < 0.0 {
                -epsilon.min(v)
            } else {
                0.0
            }
        })
        .collect();
    let delta = Tensor::new(x_t.shape().to_vec(), delta);
    finalize(model, x, &x_t, delta, y_true, 1)
}

/// DeepFool: iteratively project across the nearest linearized decision
/// boundary until the predicted class flips, then scale the accumulated step
/// by (1 + overshoot) and clamp. Iterates are left unclamped so the
/// hyperplane geometry is preserved; candidate classes are all others.
pub fn deepfool(
    model: &Model,
    x: &ImageU8,
    y_true: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    cfg.check()?;
    let classes = model.spec().classes;
    if y_true >= classes {
        return Err(AttackError::Nn(NnError::InvalidLabel {
            label: y_true,
            classes,
        }));
    }
    let x_t = image_to_input(x);
    let all: Vec<usize> = (0..classes).collect();

    let (orig_pred, _) = predict(model, x)?;
    if orig_pred != y_true {
        // Already adversarial with respect to the reference label.
        return finalize(model, x, &x_t, Tensor::zeros(x_t.shape().to_vec()), y_true, 0);
    }

    let mut total: Tensor = Tensor::zeros(x_t.shape().to_vec());
    let mut iterations = 0usize;

    // Following the cited construction, both the stop condition and the next
    // linearization are evaluated at the overshot iterate
    // x + (1 + overshoot) * total; iterates stay unclamped so the hyperplane
    // geometry is preserved.
    loop {
        let eval_data: Vec<f32> = x_t
            .data()
            .iter()
            .zip(total.data())
            .map(|(&v, &r)| v + (1.0 + cfg.overshoot) * r)
            .collect();
        let x_eval = Tensor::new(x_t.shape().to_vec(), eval_data);
        let (logit_row, grads) = logit_input_gradients(model, &x_eval, &all)?;
        if crate::nn::argmax_slice(&logit_row) != orig_pred {
            break;
        }
        if iterations >= cfg.max_iter {
            break;
        }

        // Nearest boundary under the local linearization.
        let mut best: Option<(f64, usize)> = None; // (distance, class)
        for k in 0..classes {
            if k == orig_pred {
                continue;
            }
            let f_diff = f64::from(logit_row[k]) - f64::from(logit_row[orig_pred]);
            let mut norm_sq = 0.0f64;
            for (gk, gc) in grads[k].data().iter().zip(grads[orig_pred].data()) {
                let d = f64::from(gk - gc);
                norm_sq += d * d;
            }
            let norm = norm_sq.sqrt();
            if norm < 1e-12 {
                continue;
            }
            let dist = f_diff.abs() / norm;
            if best.is_none_or(|(bd, _)| dist < bd) {
                best = Some((dist, k));
            }
        }
        let Some((_, l)) = best else {
            // Every boundary direction is degenerate; report failure rather
            // than divide by zero.
            break;
        };

        let f_abs = (f64::from(logit_row[l]) - f64::from(logit_row[orig_pred])).abs();
        let mut norm_sq = 0.0f64;
        for (gk, gc) in grads[l].data().iter().zip(grads[orig_pred].data()) {
            let d = f64::from(gk - gc);
            norm_sq += d * d;
        }
        let scale = (f_abs / norm_sq) as f32;
        for (ti, (gk, gc)) in total
            .data_mut()
            .iter_mut()
            .zip(grads[l].data().iter().zip(grads[orig_pred].data()))
        {
            *ti += scale * (gk - gc);
        }
        iterations += 1;
    }

    // The perturbation is the overshot step after clamping to the pixel box.
    let delta: Vec<f32> = x_t
        .data()
        .iter()
        .zip(total.data())
        .map(|(&v, &r)| (v + (1.0 + cfg.overshoot) * r).clamp(0.0, 1.0) - v)
        .collect();
    let delta = Tensor::new(x_t.shape().to_vec(), delta);
    finalize(model, x, &x_t, delta, y_true, iterations)
}

fn attack_one(
    model: &Model,
    x: &ImageU8,
    y_true: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    match cfg.method {
        AttackMethod::Fgsm => fgsm(model, x, y_true, cfg.epsilon),
        AttackMethod::DeepFool => deepfool(model, x, y_true, cfg),
    }
}

/// Attack every instance the model classifies correctly; the rest pass
/// through unmodified. The output dataset is aligned index-wise with the
/// input, and the result list covers the attacked subset in dataset order.
pub fn attack_dataset(
    model: &Model,
    dataset: &Dataset,
    cfg: &AttackConfig,
    threads: usize,
) -> Result<(Dataset, Vec<AttackResult>), AttackError> {
    cfg.check()?;
    if dataset.is_empty() {
        return Err(AttackError::BadConfig("cannot attack an empty dataset".into()));
    }
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let per_instance = parallel_map(&indices, threads, |&i| {
        let img = &dataset.images()[i];
        let label = dataset.labels()[i];
        let (pred, _) = predict(model, img)?;
        if pred != label {
            return Ok::<Option<AttackResult>, AttackError>(None);
        }
        attack_one(model, img, label, cfg).map(Some)
    });

    let mut out = dataset.map_images(format!("{}-{}", dataset.name(), cfg.method.as_str()), Clone::clone);
    let mut results = Vec::new();
    for (i, item) in per_instance.into_iter().enumerate() {
        if let Some(result) = item? {
            out.with_image(i, result.x_adversarial.clone());
            results.push(result);
        }
    }
    Ok((out, results))
}

/// Fraction of originally correctly-classified instances whose labels the
/// attack flipped. Errors if the sets are misaligned or nothing was
/// correctly classified to begin with.
pub fn misclassification_success(
    model: &Model,
    clean: &Dataset,
    adversarial: &Dataset,
    threads: usize,
) -> Result<f64, AttackError> {
    if clean.len() != adversarial.len()
        || clean.labels() != adversarial.labels()
        || clean.class_count() != adversarial.class_count()
    {
        return Err(AttackError::MisalignedSets);
    }
    let indices: Vec<usize> = (0..clean.len()).collect();
    let flags = parallel_map(&indices, threads, |&i| {
        let label = clean.labels()[i];
        let (clean_pred, _) = predict(model, &clean.images()[i])?;
        if clean_pred != label {
            return Ok::<(bool, bool), AttackError>((false, false));
        }
        let (adv_pred, _) = predict(model, &adversarial.images()[i])?;
        Ok((true, adv_pred != label))
    });
    let mut denom = 0u64;
    let mut flipped = 0u64;
    for f in flags {
        let (was_correct, was_flipped) = f?;
        if was_correct {
            denom += 1;
            if was_flipped {
                flipped += 1;
            }
        }
    }
    if denom == 0 {
        return Err(AttackError::NoCorrectlyClassified);
    }
    Ok(flipped as f64 / denom as f64)
}
