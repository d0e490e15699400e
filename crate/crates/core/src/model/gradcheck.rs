use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::transformer::{loss, loss_and_grad, Batch};
use super::{ModelError, ParamGroup, Scalar, TransformerParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSettings {
    /// Central-difference half step.
    pub epsilon: f64,
    /// Random indices per tensor, in addition to its largest-gradient entry.
    pub per_tensor: usize,
    /// Denominator floor so vanishing gradients compare absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        Self { epsilon: 1e-5, per_tensor: 6, floor: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_deviation: f64,
    /// `tensor[index]` where the maximum occurred.
    pub worst: String,
    pub checked: usize,
    pub groups: Vec<ParamGroup>,
}

/// Compares backpropagated gradients against central finite differences,
/// both in f64, on a sample of entries from every tensor.
pub fn grad_check<T: Scalar>(
    params: &TransformerParams<T>,
    batch: &Batch,
    settings: &GradCheckSettings,
) -> Result<GradCheckReport, ModelError> {
    let mut p = params.cast::<f64>();
    let (_, grads) = loss_and_grad(&p, batch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut report = GradCheckReport { max_rel_deviation: 0.0, worst: String::new(), checked: 0, groups: Vec::new() };
    let tensors = p.layout.tensors.clone();
    for t in &tensors {
        let range = t.range();
        let largest = range
            .clone()
            .max_by(|&a, &b| grads[a].abs().total_cmp(&grads[b].abs()))
            .expect("tensors are non-empty");
        let mut picks = vec![largest];
        picks.extend((0..settings.per_tensor).map(|_| rng.gen_range(range.clone())));
        for i in picks {
            let orig = p.data[i];
            p.data[i] = orig + settings.epsilon;
            let up = loss(&p, batch)?;
            p.data[i] = orig - settings.epsilon;
            let down = loss(&p, batch)?;
            p.data[i] = orig;
            let numeric = (up - down) / (2.0 * settings.epsilon);
            let analytic = grads[i];
            let dev = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(settings.floor);
            if dev > report.max_rel_deviation || report.worst.is_empty() {
                report.max_rel_deviation = dev;
                report.worst = format!("{}[{}]", t.name, i - t.offset);
            }
            report.checked += 1;
        }
        if !report.groups.contains(&t.group) {
            report.groups.push(t.group);
        }
    }
    Ok(report)
}
