//! Cross-entropy over annotated pixels only, with its analytic gradient and a
//! central finite-difference check.
//!
//! For annotated pixels `M`:
//! `loss = -(1/|M|) Σ_{p∈M} log softmax(z_p)[y_p]`, and
//! `∂loss/∂z_{p,k} = (softmax(z_p)[k] - [k = y_p]) / |M|`, zero outside `M`.
//! An empty mask gives `(0, 0)`.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("logit at pixel {pixel}, class {class} is not finite")]
    NonFiniteLogit { pixel: usize, class: usize },
    #[error("at least two classes are required, got {0}")]
    TooFewClasses(usize),
    #[error("label {label} at pixel {pixel} is outside 0..{classes}")]
    LabelOutOfRange {
        pixel: usize,
        label: usize,
        classes: usize,
    },
    #[error("finite-difference step must be positive, got {0}")]
    NonPositiveStep(f64),
}

/// Per-pixel class scores, row-major pixels with classes innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitField {
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    pub values: Vec<f64>,
}

impl LogitField {
    pub fn new(
        width: usize,
        height: usize,
        classes: usize,
        values: Vec<f64>,
    ) -> Result<Self, LossError> {
        if classes < 2 {
            return Err(LossError::TooFewClasses(classes));
        }
        if values.len() != width * height * classes {
            return Err(LossError::ShapeMismatch(format!(
                "{} logits for {width}x{height}x{classes}",
                values.len()
            )));
        }
        let field = Self {
            width,
            height,
            classes,
            values,
        };
        field.check_finite()?;
        Ok(field)
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    fn pixel(&self, p: usize) -> &[f64] {
        &self.values[p * self.classes..(p + 1) * self.classes]
    }

    fn check_finite(&self) -> Result<(), LossError> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(LossError::NonFiniteLogit {
                pixel: i / self.classes,
                class: i % self.classes,
            }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedTarget {
    pub labels: Vec<usize>,
    /// `true` = annotated.
    pub mask: Vec<bool>,
}

fn check(logits: &LogitField, target: &MaskedTarget) -> Result<(), LossError> {
    let n = logits.pixels();
    if target.labels.len() != n || target.mask.len() != n {
        return Err(LossError::ShapeMismatch(format!(
            "{n} pixels of logits, {} labels, {} mask entries",
            target.labels.len(),
            target.mask.len()
        )));
    }
    if logits.classes < 2 {
        return Err(LossError::TooFewClasses(logits.classes));
    }
    logits.check_finite()?;
    if let Some(pixel) = target.labels.iter().position(|&l| l >= logits.classes) {
        return Err(LossError::LabelOutOfRange {
            pixel,
            label: target.labels[pixel],
            classes: logits.classes,
        });
    }
    Ok(())
}

/// `log Σ exp(z)` with the maximum factored out.
fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

fn softmax_into(z: &[f64], out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Returns `(loss, annotated pixel count)`.
pub fn masked_cross_entropy(
    logits: &LogitField,
    target: &MaskedTarget,
) -> Result<(f64, usize), LossError> {
    check(logits, target)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for p in (0..logits.pixels()).filter(|&p| target.mask[p]) {
        let z = logits.pixel(p);
        total += log_sum_exp(z) - z[target.labels[p]];
        count += 1;
    }
    if count == 0 {
        return Ok((0.0, 0));
    }
    Ok((total / count as f64, count))
}

/// Gradient of [`masked_cross_entropy`] with respect to every logit.
pub fn masked_ce_gradient(
    logits: &LogitField,
    target: &MaskedTarget,
) -> Result<LogitField, LossError> {
    check(logits, target)?;
    let k = logits.classes;
    let mut grad = vec![0.0; logits.values.len()];
    let count = target.mask.iter().filter(|&&m| m).count();
    if count > 0 {
        let scale = 1.0 / count as f64;
        for p in (0..logits.pixels()).filter(|&p| target.mask[p]) {
            let out = &mut grad[p * k..(p + 1) * k];
            softmax_into(logits.pixel(p), out);
            out[target.labels[p]] -= 1.0;
            for g in out.iter_mut() {
                *g *= scale;
            }
        }
    }
    Ok(LogitField {
        width: logits.width,
        height: logits.height,
        classes: k,
        values: grad,
    })
}

/// Entries whose absolute difference is at most this are compared absolutely.
pub const FD_ABSOLUTE_FLOOR: f64 = 1e-8;

/// Per-entry discrepancy between analytic and numeric derivatives: the
/// absolute difference when it is within [`FD_ABSOLUTE_FLOOR`], otherwise the
/// difference relative to the larger magnitude.
pub fn gradient_discrepancy(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= FD_ABSOLUTE_FLOOR {
        diff
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

/// Largest [`gradient_discrepancy`] between the analytic gradient and central
/// differences `(L(z + h e) - L(z - h e)) / 2h` over every logit.
pub fn finite_difference_check(
    logits: &LogitField,
    target: &MaskedTarget,
    step: f64,
) -> Result<f64, LossError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(LossError::NonPositiveStep(step));
    }
    let analytic = masked_ce_gradient(logits, target)?;
    let mut probe = logits.clone();
    let mut worst = 0.0f64;
    for i in 0..logits.values.len() {
        let original = probe.values[i];
        probe.values[i] = original + step;
        let (plus, _) = masked_cross_entropy(&probe, target)?;
        probe.values[i] = original - step;
        let (minus, _) = masked_cross_entropy(&probe, target)?;
        probe.values[i] = original;
        let numeric = (plus - minus) / (2.0 * step);
        worst = worst.max(gradient_discrepancy(analytic.values[i], numeric));
    }
    Ok(worst)
}
