//! Evaluation metrics: accuracy and per-class accuracy, hypothesis-dominance
//! proportions, diversity measures (error inconsistency, prediction variance,
//! pairwise KL), ensemble efficiency, likelihood and mutual-information
//! uncertainty scores, and the uncertainty-rejection curve.
//!
//! Conventions: natural logarithm everywhere, population variance (divide by
//! the member count), probabilities clamped at 1e-12 before any logarithm.

use crate::ensemble::{average_predictions, PredictionMatrix, PROB_FLOOR};
use crate::error::{Error, Result};
use crate::model::Matrix;

/// Where prediction variance is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceSpace {
    Probs,
    Logits,
}

/// Which per-sample uncertainty score orders the rejection curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyScore {
    /// Mutual information between prediction and member identity.
    Bald,
    /// Entropy of the mean prediction.
    PredictiveEntropy,
}

fn check_aligned(pm: &PredictionMatrix, labels: &[usize]) -> Result<()> {
    if pm.sample_count() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} prediction rows for {} labels",
            pm.sample_count(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= pm.class_count()) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {} classes",
            pm.class_count()
        )));
    }
    Ok(())
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Top-1 accuracy; argmax ties resolve to the lowest class index.
pub fn accuracy(pm: &PredictionMatrix, labels: &[usize]) -> Result<f64> {
    check_aligned(pm, labels)?;
    let correct = labels
        .iter()
        .enumerate()
        .filter(|(i, &label)| argmax(pm.probs().row(*i)) == label)
        .count();
    Ok(correct as f64 / labels.len().max(1) as f64)
}

/// Per-class top-1 accuracy; classes absent from `labels` are `None`.
pub fn per_class_accuracy(pm: &PredictionMatrix, labels: &[usize]) -> Result<Vec<Option<f64>>> {
    check_aligned(pm, labels)?;
    let k = pm.class_count();
    let mut correct = vec![0usize; k];
    let mut totals = vec![0usize; k];
    for (i, &label) in labels.iter().enumerate() {
        totals[label] += 1;
        if argmax(pm.probs().row(i)) == label {
            correct[label] += 1;
        }
    }
    Ok((0..k)
        .map(|c| {
            if totals[c] == 0 {
                None
            } else {
                Some(correct[c] as f64 / totals[c] as f64)
            }
        })
        .collect())
}

/// Fractions of classes where the first model's per-class accuracy is
/// higher, lower, or equal; computed over classes with defined accuracy and
/// summing to one over them.
pub fn dominance_proportions(
    pm_a: &PredictionMatrix,
    pm_b: &PredictionMatrix,
    labels: &[usize],
) -> Result<(f64, f64, f64)> {
    let a = per_class_accuracy(pm_a, labels)?;
    let b = per_class_accuracy(pm_b, labels)?;
    let mut wins = 0usize;
    let mut losses = 0usize;
    let mut ties = 0usize;
    for (a_c, b_c) in a.iter().zip(&b) {
        match (a_c, b_c) {
            (Some(a_c), Some(b_c)) => {
                if a_c > b_c {
                    wins += 1;
                } else if a_c < b_c {
                    losses += 1;
                } else {
                    ties += 1;
                }
            }
            _ => {}
        }
    }
    let defined = (wins + losses + ties).max(1) as f64;
    Ok((
        wins as f64 / defined,
        losses as f64 / defined,
        ties as f64 / defined,
    ))
}

fn require_members(members: &[&PredictionMatrix], minimum: usize) -> Result<()> {
    if members.len() < minimum {
        return Err(Error::InvalidArgument(format!(
            "need at least {minimum} members, got {}",
            members.len()
        )));
    }
    let first = members[0];
    for pm in members {
        if pm.sample_count() != first.sample_count() || pm.class_count() != first.class_count() {
            return Err(Error::DimensionMismatch(
                "members must share sample and class counts".to_string(),
            ));
        }
    }
    Ok(())
}

/// Mean over unordered member pairs of the fraction of samples where exactly
/// one of the two is correct.
pub fn error_inconsistency(members: &[&PredictionMatrix], labels: &[usize]) -> Result<f64> {
    require_members(members, 2)?;
    check_aligned(members[0], labels)?;
    let corrects: Vec<Vec<bool>> = members
        .iter()
        .map(|pm| {
            labels
                .iter()
                .enumerate()
                .map(|(i, &label)| argmax(pm.probs().row(i)) == label)
                .collect()
        })
        .collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..members.len() {
        for b in a + 1..members.len() {
            let disagreements = corrects[a]
                .iter()
                .zip(&corrects[b])
                .filter(|(x, y)| x != y)
                .count();
            total += disagreements as f64 / labels.len() as f64;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Mean over samples of the per-class population variance across members,
/// summed over classes.
pub fn prediction_variance(members: &[&PredictionMatrix], space: VarianceSpace) -> Result<f64> {
    require_members(members, 2)?;
    let n = members[0].sample_count();
    let k = members[0].class_count();
    let m = members.len() as f64;
    fn values(pm: &PredictionMatrix, space: VarianceSpace) -> &Matrix {
        match space {
            VarianceSpace::Probs => pm.probs(),
            VarianceSpace::Logits => pm.logits(),
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        for c in 0..k {
            let mut mean = 0.0;
            for pm in members {
                mean += values(pm, space).get(i, c);
            }
            mean /= m;
            let mut var = 0.0;
            for pm in members {
                let d = values(pm, space).get(i, c) - mean;
                var += d * d;
            }
            total += var / m;
        }
    }
    Ok(total / n as f64)
}

/// Mean over ordered member pairs of the mean-over-samples KL divergence
/// between their probability rows.
pub fn pairwise_kl(members: &[&PredictionMatrix]) -> Result<f64> {
    require_members(members, 2)?;
    let n = members[0].sample_count();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..members.len() {
        for b in 0..members.len() {
            if a == b {
                continue;
            }
            let mut pair_total = 0.0;
            for i in 0..n {
                let p = members[a].probs().row(i);
                let q = members[b].probs().row(i);
                let mut kl = 0.0;
                for (&pi, &qi) in p.iter().zip(q) {
                    let pc = pi.max(PROB_FLOOR);
                    let qc = qi.max(PROB_FLOOR);
                    kl += pc * (pc.ln() - qc.ln());
                }
                pair_total += kl;
            }
            total += pair_total / n as f64;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Ensemble accuracy minus the mean accuracy of its members (a fraction;
/// multiply by 100 for percentage points).
pub fn ensemble_efficiency(
    ensemble_pm: &PredictionMatrix,
    member_pms: &[&PredictionMatrix],
    labels: &[usize],
) -> Result<f64> {
    if member_pms.is_empty() {
        return Err(Error::InvalidArgument("need at least one member".into()));
    }
    let ensemble_acc = accuracy(ensemble_pm, labels)?;
    let mut mean_member = 0.0;
    for pm in member_pms {
        mean_member += accuracy(pm, labels)?;
    }
    mean_member /= member_pms.len() as f64;
    Ok(ensemble_acc - mean_member)
}

/// Mean negative log probability of the true class, natural log.
pub fn nll(pm: &PredictionMatrix, labels: &[usize]) -> Result<f64> {
    check_aligned(pm, labels)?;
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        total -= pm.probs().get(i, label).max(PROB_FLOOR).ln();
    }
    Ok(total / labels.len().max(1) as f64)
}

fn entropy(row: &[f64]) -> f64 {
    row.iter()
        .map(|&p| {
            let pc = p.max(PROB_FLOOR);
            -pc * pc.ln()
        })
        .sum()
}

/// Per-sample mutual information between the prediction and the member
/// identity: entropy of the mean distribution minus the mean member entropy.
/// Small negative float residue is clamped to zero.
pub fn bald(members: &[&PredictionMatrix]) -> Result<Vec<f64>> {
    require_members(members, 1)?;
    let n = members[0].sample_count();
    let k = members[0].class_count();
    let m = members.len() as f64;
    let mut scores = Vec::with_capacity(n);
    for i in 0..n {
        let mut mean = vec![0.0; k];
        let mut mean_entropy = 0.0;
        for pm in members {
            let row = pm.probs().row(i);
            for (acc, &p) in mean.iter_mut().zip(row) {
                *acc += p;
            }
            mean_entropy += entropy(row);
        }
        for v in &mut mean {
            *v /= m;
        }
        mean_entropy /= m;
        scores.push((entropy(&mean) - mean_entropy).max(0.0));
    }
    Ok(scores)
}

/// One point of the uncertainty-rejection curve.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RejectionPoint {
    pub fraction_removed: f64,
    pub accuracy: f64,
}

/// Sorts samples by uncertainty (descending, ties by sample index), removes
/// the most uncertain fraction `r` over the grid `{0, 0.01, …, 1}`, and
/// reports ensemble accuracy on the retained `ceil((1-r)·N)` samples, with
/// accuracy at `r = 1` pinned to one. The area is the trapezoidal integral.
pub fn rejection_curve(
    members: &[&PredictionMatrix],
    labels: &[usize],
    score: UncertaintyScore,
) -> Result<(Vec<RejectionPoint>, f64)> {
    require_members(members, 1)?;
    check_aligned(members[0], labels)?;
    let ensemble = average_predictions(members)?;
    let uncertainty = match score {
        UncertaintyScore::Bald => bald(members)?,
        UncertaintyScore::PredictiveEntropy => (0..ensemble.sample_count())
            .map(|i| entropy(ensemble.probs().row(i)))
            .collect(),
    };
    let n = labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        uncertainty[b]
            .partial_cmp(&uncertainty[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let correct: Vec<bool> = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| argmax(ensemble.probs().row(i)) == label)
        .collect();
    // Prefix sums over the removal order let every grid point read off the
    // retained-correct count directly.
    let mut correct_in_suffix = vec![0usize; n + 1];
    for pos in (0..n).rev() {
        correct_in_suffix[pos] = correct_in_suffix[pos + 1] + usize::from(correct[order[pos]]);
    }
    let mut points = Vec::with_capacity(101);
    for step in 0..=100u32 {
        let fraction_removed = f64::from(step) / 100.0;
        let retained = ((1.0 - fraction_removed) * n as f64).ceil() as usize;
        let accuracy = if retained == 0 {
            1.0
        } else {
            correct_in_suffix[n - retained] as f64 / retained as f64
        };
        points.push(RejectionPoint {
            fraction_removed,
            accuracy,
        });
    }
    let mut area = 0.0;
    for pair in points.windows(2) {
        let dr = pair[1].fraction_removed - pair[0].fraction_removed;
        area += dr * (pair[0].accuracy + pair[1].accuracy) / 2.0;
    }
    Ok((points, area))
}

/// Everything the evaluation pipeline reports for one ensemble.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub member_count: usize,
    pub ensemble_accuracy: f64,
    pub nll: f64,
    pub auuqc: f64,
    pub ensemble_efficiency: f64,
    /// Diversity metrics; `None` when the ensemble has a single member.
    pub error_inconsistency: Option<f64>,
    pub variance_logits: Option<f64>,
    pub variance_probs: Option<f64>,
    pub pairwise_kl: Option<f64>,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub rejection_curve: Vec<RejectionPoint>,
}

/// Computes the full report for a member set evaluated against `labels`.
pub fn report(members: &[&PredictionMatrix], labels: &[usize]) -> Result<MetricsReport> {
    require_members(members, 1)?;
    check_aligned(members[0], labels)?;
    let ensemble = average_predictions(members)?;
    let (curve, auuqc) = rejection_curve(members, labels, UncertaintyScore::Bald)?;
    let multi = members.len() >= 2;
    Ok(MetricsReport {
        member_count: members.len(),
        ensemble_accuracy: accuracy(&ensemble, labels)?,
        nll: nll(&ensemble, labels)?,
        auuqc,
        ensemble_efficiency: ensemble_efficiency(&ensemble, members, labels)?,
        error_inconsistency: if multi {
            Some(error_inconsistency(members, labels)?)
        } else {
            None
        },
        variance_logits: if multi {
            Some(prediction_variance(members, VarianceSpace::Logits)?)
        } else {
            None
        },
        variance_probs: if multi {
            Some(prediction_variance(members, VarianceSpace::Probs)?)
        } else {
            None
        },
        pairwise_kl: if multi {
            Some(pairwise_kl(members)?)
        } else {
            None
        },
        per_class_accuracy: per_class_accuracy(&ensemble, labels)?,
        rejection_curve: curve,
    })
}
