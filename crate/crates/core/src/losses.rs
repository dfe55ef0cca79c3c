//! Cross-entropy, KL, three-way Jensen–Shannon and the DART objective.
//!
//! Probabilities are floored at [`PROB_FLOOR`] before taking logs. Gradients
//! are returned with respect to logits, averaged over the batch.

use serde::{Deserialize, Serialize};

use crate::augmix::AugmentedBatch;
use crate::error::{Error, Result};
use crate::model::{softmax_backward, Classifier, LossGrad, Matrix, ParameterVector};

pub const PROB_FLOOR: f64 = 1e-12;

fn ln_floor(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// Weights of the DART objective `distill·L_d + alpha·L_c`.
///
/// `distill` is 1 in normal use; setting it to 0 drops the distillation
/// term and setting `alpha` to 0 drops the consistency term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha: f64,
    pub distill: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 12.0,
            distill: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("distill", self.distill)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("distributions of length {} and {}", a.len(), b.len())));
    }
    Ok(())
}

/// `KL(p ‖ q)`; zero-probability entries of `p` contribute nothing.
pub fn kl_div(p: &[f64], q: &[f64]) -> Result<f64> {
    same_len(p, q)?;
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (ln_floor(pi) - ln_floor(qi)))
        .sum();
    Ok(kl.max(0.0))
}

/// Sum of three values in ascending order, so the result does not depend on
/// argument order.
fn sum3(a: f64, b: f64, c: f64) -> f64 {
    let mut v = [a, b, c];
    v.sort_by(f64::total_cmp);
    (v[0] + v[1]) + v[2]
}

fn js_mixture(p1: &[f64], p2: &[f64], p3: &[f64]) -> Vec<f64> {
    p1.iter()
        .zip(p2)
        .zip(p3)
        .map(|((&a, &b), &c)| sum3(a, b, c) / 3.0)
        .collect()
}

/// `JS(p1, p2, p3) = (1/3) Σ_j KL(p_j ‖ M)` with `M` the mean distribution.
/// Exactly symmetric in its arguments.
pub fn js_div(p1: &[f64], p2: &[f64], p3: &[f64]) -> Result<f64> {
    same_len(p1, p2)?;
    same_len(p1, p3)?;
    let m = js_mixture(p1, p2, p3);
    let k = [kl_div(p1, &m)?, kl_div(p2, &m)?, kl_div(p3, &m)?];
    Ok(sum3(k[0], k[1], k[2]) / 3.0)
}

/// Gradient of `js_div` with respect to each distribution:
/// `∂JS/∂p_j = (1/3) ln(p_j / M)`.
fn js_prob_grads(p: [&[f64]; 3]) -> [Vec<f64>; 3] {
    let m = js_mixture(p[0], p[1], p[2]);
    p.map(|pj| {
        pj.iter()
            .zip(&m)
            .map(|(&a, &mi)| (ln_floor(a) - ln_floor(mi)) / 3.0)
            .collect()
    })
}

fn check_labels(probs: &Matrix, labels: &[u16]) -> Result<()> {
    if probs.rows() != labels.len() {
        return Err(Error::ShapeMismatch(format!("{} rows for {} labels", probs.rows(), labels.len())));
    }
    if probs.rows() == 0 {
        return Err(Error::EmptyDataset("empty batch".into()));
    }
    if let Some(&y) = labels.iter().find(|&&y| y as usize >= probs.cols()) {
        return Err(Error::InvalidArgument(format!("label {y} out of range for {} classes", probs.cols())));
    }
    Ok(())
}

/// Mean `−ln p_y` over the batch.
pub fn cross_entropy(probs: &Matrix, labels: &[u16]) -> Result<f64> {
    check_labels(probs, labels)?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -ln_floor(probs.row(i)[y as usize]))
        .sum();
    Ok(total / labels.len() as f64)
}

/// Cross-entropy with its logit gradient `(p − onehot(y)) / B`.
pub fn cross_entropy_loss(probs: &Matrix, labels: &[u16]) -> Result<LossGrad> {
    let value = cross_entropy(probs, labels)?;
    let b = labels.len() as f64;
    let mut d = probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        let row = d.row_mut(i);
        row[y as usize] -= 1.0;
        row.iter_mut().for_each(|v| *v /= b);
    }
    Ok(LossGrad {
        value,
        d_logits: vec![d],
    })
}

/// Mean JS over the batch and its logit gradients for the three passes.
fn js_batch(p: [&Matrix; 3]) -> Result<(f64, [Matrix; 3])> {
    let (rows, cols) = (p[0].rows(), p[0].cols());
    if p.iter().any(|m| m.rows() != rows || m.cols() != cols) {
        return Err(Error::ShapeMismatch("consistency passes differ in shape".into()));
    }
    if rows == 0 {
        return Err(Error::EmptyDataset("empty batch".into()));
    }
    let b = rows as f64;
    let mut total = 0.0;
    let mut grads = [Matrix::zeros(rows, cols), Matrix::zeros(rows, cols), Matrix::zeros(rows, cols)];
    for i in 0..rows {
        let rows_i = [p[0].row(i), p[1].row(i), p[2].row(i)];
        total += js_div(rows_i[0], rows_i[1], rows_i[2])?;
        let g = js_prob_grads(rows_i);
        for j in 0..3 {
            let dz = softmax_backward(rows_i[j], &g[j]);
            for (out, v) in grads[j].row_mut(i).iter_mut().zip(dz) {
                *out = v / b;
            }
        }
    }
    Ok((total / b, grads))
}

fn add_into(dst: &mut Matrix, src: &Matrix, scale: f64) {
    for i in 0..dst.rows() {
        for (d, s) in dst.row_mut(i).iter_mut().zip(src.row(i)) {
            *d += scale * s;
        }
    }
}

/// Local objective of augmentation-trained clients:
/// `CE(p_clean, y) + alpha·JS(p_clean, p_aug1, p_aug2)` over three passes.
pub fn robust_client_loss(probs: &[Matrix], labels: &[u16], alpha: f64) -> Result<LossGrad> {
    let [clean, a1, a2] = probs else {
        return Err(Error::ShapeMismatch(format!("expected 3 passes, got {}", probs.len())));
    };
    let mut ce = cross_entropy_loss(clean, labels)?;
    let (js, js_grads) = js_batch([clean, a1, a2])?;
    let mut d_clean = ce.d_logits.pop().expect("one pass");
    add_into(&mut d_clean, &js_grads[0], alpha);
    let [_, mut g1, mut g2] = js_grads;
    for g in [&mut g1, &mut g2] {
        for i in 0..g.rows() {
            g.row_mut(i).iter_mut().for_each(|v| *v *= alpha);
        }
    }
    Ok(LossGrad {
        value: ce.value + alpha * js,
        d_logits: vec![d_clean, g1, g2],
    })
}

/// Components of one DART loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DartLossValue {
    /// Mean `KL(teacher ‖ student)` on clean inputs.
    pub distill: f64,
    /// Mean three-way JS between the student's clean and augmented outputs;
    /// left at 0 when `alpha` is 0 since the augmented passes are skipped.
    pub consistency: f64,
    pub total: f64,
}

/// DART objective over precomputed student probabilities.
///
/// `student` holds the clean pass, followed by the two augmented passes
/// when `weights.alpha > 0`. Returns the value and logit gradients aligned
/// with `student`.
pub fn dart_objective(teacher: &Matrix, student: &[Matrix], weights: LossWeights) -> Result<(DartLossValue, LossGrad)> {
    let clean = student
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no student passes".into()))?;
    if teacher.rows() != clean.rows() || teacher.cols() != clean.cols() {
        return Err(Error::ShapeMismatch("teacher and student outputs differ in shape".into()));
    }
    if clean.rows() == 0 {
        return Err(Error::EmptyDataset("empty batch".into()));
    }
    let b = clean.rows() as f64;
    let mut distill = 0.0;
    let mut d_clean = Matrix::zeros(clean.rows(), clean.cols());
    for i in 0..clean.rows() {
        distill += kl_div(teacher.row(i), clean.row(i))?;
        // ∂KL(t ‖ softmax(z))/∂z = s − t
        for ((d, &s), &t) in d_clean.row_mut(i).iter_mut().zip(clean.row(i)).zip(teacher.row(i)) {
            *d = weights.distill * (s - t) / b;
        }
    }
    distill /= b;

    let mut consistency = 0.0;
    let mut d_logits = Vec::with_capacity(student.len());
    if weights.alpha > 0.0 {
        let [_, a1, a2] = student else {
            return Err(Error::ShapeMismatch(format!("expected 3 student passes, got {}", student.len())));
        };
        let (js, [g0, mut g1, mut g2]) = js_batch([clean, a1, a2])?;
        consistency = js;
        add_into(&mut d_clean, &g0, weights.alpha);
        for g in [&mut g1, &mut g2] {
            for i in 0..g.rows() {
                g.row_mut(i).iter_mut().for_each(|v| *v *= weights.alpha);
            }
        }
        d_logits.push(d_clean);
        d_logits.push(g1);
        d_logits.push(g2);
    } else {
        if student.len() != 1 {
            return Err(Error::ShapeMismatch("alpha = 0 takes only the clean pass".into()));
        }
        d_logits.push(d_clean);
    }
    let total = weights.distill * distill + weights.alpha * consistency;
    let value = DartLossValue {
        distill,
        consistency,
        total,
    };
    Ok((value, LossGrad { value: total, d_logits }))
}

fn student_passes(batch: &AugmentedBatch, weights: LossWeights) -> Vec<&[crate::image::Image]> {
    if weights.alpha > 0.0 {
        vec![&batch.clean, &batch.aug1, &batch.aug2]
    } else {
        vec![&batch.clean]
    }
}

/// DART loss of `student` against `teacher` on one augmented batch.
pub fn dart_loss(teacher: &Classifier, student: &Classifier, batch: &AugmentedBatch, weights: LossWeights) -> Result<DartLossValue> {
    let t = teacher.predict_proba(&batch.clean)?;
    dart_loss_cached(&t, student, batch, weights)
}

/// As [`dart_loss`] with the teacher's clean-input probabilities supplied.
pub fn dart_loss_cached(teacher: &Matrix, student: &Classifier, batch: &AugmentedBatch, weights: LossWeights) -> Result<DartLossValue> {
    let probs = student_passes(batch, weights)
        .into_iter()
        .map(|b| student.predict_proba(b))
        .collect::<Result<Vec<_>>>()?;
    Ok(dart_objective(teacher, &probs, weights)?.0)
}

/// DART loss and its gradient with respect to the student's parameters.
pub fn dart_loss_and_grad(
    teacher: &Matrix,
    student: &Classifier,
    batch: &AugmentedBatch,
    weights: LossWeights,
) -> Result<(DartLossValue, ParameterVector)> {
    let mut value = None;
    let (_, grad) = student.loss_and_grad(&student_passes(batch, weights), |probs| {
        let (v, lg) = dart_objective(teacher, probs, weights)?;
        value = Some(v);
        Ok(lg)
    })?;
    Ok((value.expect("loss closure ran"), grad))
}
