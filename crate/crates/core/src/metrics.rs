//! Displacement metrics over weighted sample sets and ROC-based task
//! metrics.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::geometry::{Scene, Trajectory};
use crate::losses::{joint_ade, LossError};
use crate::model::PredictionSampleSet;
use crate::tasks::{ground_truth_decision, warning_utilities, TaskError, TaskSpec, WARN};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("ground truth has no valid step")]
    EmptyGroundTruth,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("AUC needs both classes (or at least two classes) present")]
    SingleClass,
    #[error(transparent)]
    Task(#[from] TaskError),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

impl From<LossError> for MetricsError {
    fn from(e: LossError) -> Self {
        match e {
            LossError::EmptyGroundTruth => MetricsError::EmptyGroundTruth,
            other => MetricsError::ShapeMismatch(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Displacement {
    pub min_ade: f64,
    pub min_fde: f64,
    pub w_ade: f64,
    pub w_fde: f64,
}

/// Mean over agents of the distance at each agent's last valid step.
fn joint_fde<T: Scalar>(sample: &[Trajectory<T>], gt: &[Trajectory<T>]) -> Result<T> {
    let mut total = T::zero();
    let mut n = 0usize;
    for (s, g) in sample.iter().zip(gt) {
        if let Some((t, q)) = g.last_valid() {
            let p = s
                .get(t)
                .ok_or_else(|| MetricsError::ShapeMismatch(format!("sample invalid at step {t}")))?;
            total += p.distance(q);
            n += 1;
        }
    }
    if n == 0 {
        return Err(MetricsError::EmptyGroundTruth);
    }
    Ok(total / T::from_usize_lossy(n))
}

/// minADE, minFDE, wADE and wFDE of a sample set against joint ground
/// truth. Errors average over all ground-truth agents.
pub fn displacement_metrics<T: Scalar>(
    preds: &PredictionSampleSet<T>,
    gt: &[Trajectory<T>],
) -> Result<Displacement> {
    let mut out = Displacement {
        min_ade: f64::INFINITY,
        min_fde: f64::INFINITY,
        w_ade: 0.0,
        w_fde: 0.0,
    };
    for k in 0..preds.k() {
        let ade = joint_ade(preds.sample(k), gt)?.as_f64();
        let fde = joint_fde(preds.sample(k), gt)?.as_f64();
        let w = preds.weights()[k].as_f64();
        out.min_ade = out.min_ade.min(ade);
        out.min_fde = out.min_fde.min(fde);
        out.w_ade += w * ade;
        out.w_fde += w * fde;
    }
    Ok(out)
}

fn check_lengths(scores: usize, labels: usize) -> Result<()> {
    if scores != labels {
        return Err(MetricsError::ShapeMismatch(format!("{scores} scores, {labels} labels")));
    }
    Ok(())
}

/// Indices sorted by decreasing score, with tie groups as index ranges.
fn tie_groups(scores: &[f64]) -> (Vec<usize>, Vec<(usize, usize)>) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]));
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=order.len() {
        if i == order.len() || scores[order[i]] != scores[order[start]] {
            groups.push((start, i));
            start = i;
        }
    }
    (order, groups)
}

/// ROC curve points `(false positive rate, true positive rate)` from the
/// strictest threshold to the loosest, starting at `(0, 0)`.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    check_lengths(scores.len(), labels.len())?;
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let (order, groups) = tie_groups(scores);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = vec![(0.0, 0.0)];
    for (s, e) in groups {
        for &i in &order[s..e] {
            if labels[i] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        curve.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(curve)
}

/// Area under the ROC curve by a threshold sweep with trapezoids over tie
/// groups. The area is accumulated as an exact integer over `2·P·N`, so it
/// equals the pair-counting statistic `P(s⁺ > s⁻) + ½·P(s⁺ = s⁻)`.
pub fn roc_auc_binary(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let pos = labels.iter().filter(|l| **l).count() as u128;
    let neg = labels.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let (order, groups) = tie_groups(scores);
    let mut tp_before: u128 = 0;
    let mut twice_area: u128 = 0;
    for (s, e) in groups {
        let tp_g = order[s..e].iter().filter(|i| labels[**i]).count() as u128;
        let fp_g = (e - s) as u128 - tp_g;
        // Trapezoid of width fp_g between heights tp_before and tp_before + tp_g.
        twice_area += fp_g * (2 * tp_before + tp_g);
        tp_before += tp_g;
    }
    Ok(twice_area as f64 / (2 * pos * neg) as f64)
}

/// One-vs-one multiclass AUC (Hand and Till): the mean over class pairs of
/// `½(A(i|j) + A(j|i))`. Pairs involving a class with no examples are
/// skipped.
pub fn roc_auc_ovo(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    check_lengths(probs.len(), labels.len())?;
    let n_classes = probs.first().map_or(0, |p| p.len());
    if probs.iter().any(|p| p.len() != n_classes) {
        return Err(MetricsError::ShapeMismatch("ragged probability vectors".into()));
    }
    if let Some(bad) = labels.iter().find(|l| **l >= n_classes) {
        return Err(MetricsError::ShapeMismatch(format!("label {bad} of {n_classes} classes")));
    }
    let present: BTreeSet<usize> = labels.iter().copied().collect();
    if present.len() < 2 {
        return Err(MetricsError::SingleClass);
    }
    let present: Vec<usize> = present.into_iter().collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (a, &i) in present.iter().enumerate() {
        for &j in &present[a + 1..] {
            let (mut s_i, mut s_j, mut y) = (Vec::new(), Vec::new(), Vec::new());
            for (p, l) in probs.iter().zip(labels) {
                if *l == i || *l == j {
                    s_i.push(p[i]);
                    s_j.push(p[j]);
                    y.push(*l == i);
                }
            }
            let a_ij = roc_auc_binary(&s_i, &y)?;
            let not_y: Vec<bool> = y.iter().map(|v| !v).collect();
            let a_ji = roc_auc_binary(&s_j, &not_y)?;
            total += 0.5 * (a_ij + a_ji);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Hard-score collision likelihood of the predictions and the ground-truth
/// warn label of the scene.
pub fn warning_task_scores<T: Scalar>(
    preds: &PredictionSampleSet<T>,
    scene: &Scene<T>,
    spec: &TaskSpec,
) -> Result<(T, bool)> {
    let (u_warn, _) = warning_utilities(preds, scene.ego_index, &scene.object_indices, spec, false)?;
    let gt = ground_truth_decision(scene, spec, None)?;
    Ok((u_warn, gt.index == WARN))
}

/// Evaluation summary. `auc_roc` is absent when only one class occurred.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub min_ade: f64,
    pub min_fde: f64,
    pub w_ade: f64,
    pub w_fde: f64,
    pub auc_roc: Option<f64>,
    pub n_examples: usize,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v}"))
}

impl MetricsReport {
    /// `key=value` lines.
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            writeln!(s, "{k}={v}").expect("write to string");
        }
        s
    }

    /// Comma-separated table with header `metric,value,n`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value,n\n");
        for (k, v) in self.entries() {
            if k != "n_examples" {
                writeln!(s, "{k},{v},{}", self.n_examples).expect("write to string");
            }
        }
        s
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("min_ade", format!("{}", self.min_ade)),
            ("min_fde", format!("{}", self.min_fde)),
            ("w_ade", format!("{}", self.w_ade)),
            ("w_fde", format!("{}", self.w_fde)),
            ("auc_roc", fmt_opt(self.auc_roc)),
            ("n_examples", self.n_examples.to_string()),
        ]
    }
}

/// Running evaluation state. `merge` is associative, so shards can be
/// accumulated independently and combined in order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsAccumulator {
    sum: [f64; 4],
    n: usize,
    binary: Vec<(f64, bool)>,
    multiclass: Vec<(Vec<f64>, usize)>,
}

impl MetricsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_displacement(&mut self, d: &Displacement) {
        self.sum[0] += d.min_ade;
        self.sum[1] += d.min_fde;
        self.sum[2] += d.w_ade;
        self.sum[3] += d.w_fde;
        self.n += 1;
    }

    pub fn add_binary(&mut self, score: f64, label: bool) {
        self.binary.push((score, label));
    }

    pub fn add_multiclass(&mut self, probs: Vec<f64>, label: usize) {
        self.multiclass.push((probs, label));
    }

    pub fn merge(mut self, other: &MetricsAccumulator) -> Self {
        for (a, b) in self.sum.iter_mut().zip(other.sum) {
            *a += b;
        }
        self.n += other.n;
        self.binary.extend(other.binary.iter().cloned());
        self.multiclass.extend(other.multiclass.iter().cloned());
        self
    }

    pub fn n_examples(&self) -> usize {
        self.n
    }

    pub fn binary_entries(&self) -> &[(f64, bool)] {
        &self.binary
    }

    pub fn multiclass_entries(&self) -> &[(Vec<f64>, usize)] {
        &self.multiclass
    }

    /// Means of the displacement metrics and the AUC of whichever score
    /// kind was recorded (multiclass takes precedence).
    pub fn report(&self) -> Result<MetricsReport> {
        if self.n == 0 {
            return Err(MetricsError::EmptyGroundTruth);
        }
        let auc = if !self.multiclass.is_empty() {
            let (p, l): (Vec<Vec<f64>>, Vec<usize>) = self.multiclass.iter().cloned().unzip();
            optional_auc(roc_auc_ovo(&p, &l))?
        } else if !self.binary.is_empty() {
            let (s, l): (Vec<f64>, Vec<bool>) = self.binary.iter().cloned().unzip();
            optional_auc(roc_auc_binary(&s, &l))?
        } else {
            None
        };
        let n = self.n as f64;
        Ok(MetricsReport {
            min_ade: self.sum[0] / n,
            min_fde: self.sum[1] / n,
            w_ade: self.sum[2] / n,
            w_fde: self.sum[3] / n,
            auc_roc: auc,
            n_examples: self.n,
        })
    }
}

fn optional_auc(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(MetricsError::SingleClass) => Ok(None),
        Err(e) => Err(e),
    }
}
