//! Connectionist temporal classification: loss, gradient, and decoding.
//!
//! Class indices `0..classes-1` are characters; the blank is always the
//! last index (`classes - 1`). Every recursion runs in log space.

use std::collections::{BTreeMap, HashMap};

use crate::error::{invalid, Error, Result};
use crate::tensor::{log_softmax_rows, Tensor};

/// Per-timestep log-probabilities over the charset plus a trailing blank.
#[derive(Clone, Debug, PartialEq)]
pub struct LogProbMatrix {
    steps: usize,
    classes: usize,
    data: Vec<f64>,
}

impl LogProbMatrix {
    /// Wraps log-probabilities, checking that every row normalizes.
    pub fn new(steps: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        if classes < 2 {
            return Err(invalid("need at least one character class plus blank"));
        }
        if data.len() != steps * classes {
            return Err(Error::ShapeMismatch {
                expected: vec![steps, classes],
                actual: vec![data.len()],
            });
        }
        for (t, row) in data.chunks(classes).enumerate() {
            let lse = log_sum_exp(row);
            if !((lse).abs() <= 1e-9) {
                return Err(invalid(format!("row {t} log-sum-exps to {lse}, not 0")));
            }
        }
        Ok(Self { steps, classes, data })
    }

    /// Normalizes raw logits `[steps, classes]` with a row-wise log-softmax.
    pub fn from_logits(logits: &Tensor) -> Result<Self> {
        let lp = log_softmax_rows(logits)?;
        let (steps, classes) = (lp.shape()[0], lp.shape()[1]);
        Ok(Self {
            steps,
            classes,
            data: lp.into_data(),
        })
    }

    /// Builds from linear probabilities (rows are renormalized).
    pub fn from_probs(steps: usize, classes: usize, probs: &[f64]) -> Result<Self> {
        if probs.len() != steps * classes {
            return Err(Error::ShapeMismatch {
                expected: vec![steps, classes],
                actual: vec![probs.len()],
            });
        }
        let mut data = Vec::with_capacity(probs.len());
        for row in probs.chunks(classes) {
            let total: f64 = row.iter().sum();
            if !(total > 0.0) || row.iter().any(|&p| p < 0.0) {
                return Err(invalid("probability rows must be nonnegative with positive mass"));
            }
            data.extend(row.iter().map(|&p| (p / total).ln()));
        }
        Ok(Self { steps, classes, data })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn blank(&self) -> usize {
        self.classes - 1
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.classes..][..self.classes]
    }

    #[inline]
    pub fn get(&self, t: usize, k: usize) -> f64 {
        self.data[t * self.classes + k]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[inline]
fn lse2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Merges adjacent duplicates, then drops blanks.
pub fn collapse(alignment: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &a in alignment {
        if Some(a) != prev && a != blank {
            out.push(a);
        }
        prev = Some(a);
    }
    out
}

/// Minimum number of timesteps any alignment of `target` needs: one per
/// label plus a separating blank between each adjacent repeat.
pub fn min_steps(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check_labels(y: &LogProbMatrix, target: &[usize]) -> Result<()> {
    if let Some(&bad) = target.iter().find(|&&l| l >= y.blank()) {
        return Err(invalid(format!(
            "label {bad} out of range for {} character classes",
            y.blank()
        )));
    }
    Ok(())
}

fn extended(target: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(blank);
    for &l in target {
        ext.push(l);
        ext.push(blank);
    }
    ext
}

#[inline]
fn can_skip(ext: &[usize], s: usize, blank: usize) -> bool {
    s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]
}

fn forward_table(y: &LogProbMatrix, ext: &[usize]) -> Vec<f64> {
    let (m, len, blank) = (y.steps, ext.len(), y.blank());
    let mut alpha = vec![f64::NEG_INFINITY; m * len];
    alpha[0] = y.get(0, ext[0]);
    if len > 1 {
        alpha[1] = y.get(0, ext[1]);
    }
    for t in 1..m {
        for s in 0..len {
            let prev = &alpha[(t - 1) * len..];
            let mut acc = prev[s];
            if s >= 1 {
                acc = lse2(acc, prev[s - 1]);
            }
            if can_skip(ext, s, blank) {
                acc = lse2(acc, prev[s - 2]);
            }
            alpha[t * len + s] = if acc == f64::NEG_INFINITY {
                acc
            } else {
                acc + y.get(t, ext[s])
            };
        }
    }
    alpha
}

fn backward_table(y: &LogProbMatrix, ext: &[usize]) -> Vec<f64> {
    let (m, len, blank) = (y.steps, ext.len(), y.blank());
    let mut beta = vec![f64::NEG_INFINITY; m * len];
    beta[(m - 1) * len + len - 1] = y.get(m - 1, ext[len - 1]);
    if len > 1 {
        beta[(m - 1) * len + len - 2] = y.get(m - 1, ext[len - 2]);
    }
    for t in (0..m - 1).rev() {
        for s in 0..len {
            let next = &beta[(t + 1) * len..][..len];
            let mut acc = next[s];
            if s + 1 < len {
                acc = lse2(acc, next[s + 1]);
            }
            if s + 2 < len && can_skip(ext, s + 2, blank) {
                acc = lse2(acc, next[s + 2]);
            }
            beta[t * len + s] = if acc == f64::NEG_INFINITY {
                acc
            } else {
                acc + y.get(t, ext[s])
            };
        }
    }
    beta
}

/// `-ln p(target | y)` via the forward recursion over the blank-extended
/// target. An infeasible target yields `+inf` rather than an error.
pub fn ctc_loss(y: &LogProbMatrix, target: &[usize]) -> Result<f64> {
    check_labels(y, target)?;
    if y.steps == 0 || min_steps(target) > y.steps {
        return Ok(f64::INFINITY);
    }
    let ext = extended(target, y.blank());
    let alpha = forward_table(y, &ext);
    let len = ext.len();
    let last = &alpha[(y.steps - 1) * len..];
    let log_p = if len > 1 {
        lse2(last[len - 1], last[len - 2])
    } else {
        last[0]
    };
    Ok(-log_p)
}

/// Loss and its gradient with respect to the pre-softmax logits that
/// produced `y`: `softmax - posterior occupancy`, shaped `[steps, classes]`.
pub fn ctc_grad(y: &LogProbMatrix, target: &[usize]) -> Result<(f64, Vec<f64>)> {
    check_labels(y, target)?;
    if y.steps == 0 || min_steps(target) > y.steps {
        return Err(Error::InfeasibleTarget {
            target_len: target.len(),
            steps: y.steps,
        });
    }
    let ext = extended(target, y.blank());
    let len = ext.len();
    let alpha = forward_table(y, &ext);
    let beta = backward_table(y, &ext);
    let last = &alpha[(y.steps - 1) * len..];
    let log_p = if len > 1 {
        lse2(last[len - 1], last[len - 2])
    } else {
        last[0]
    };

    let k = y.classes;
    let mut grad = Vec::with_capacity(y.steps * k);
    let mut occupancy = vec![f64::NEG_INFINITY; k];
    for t in 0..y.steps {
        occupancy.fill(f64::NEG_INFINITY);
        for s in 0..len {
            let a = alpha[t * len + s];
            let b = beta[t * len + s];
            if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
                continue;
            }
            let label = ext[s];
            occupancy[label] = lse2(occupancy[label], a + b - y.get(t, label));
        }
        for (c, &occ) in occupancy.iter().enumerate() {
            grad.push(y.get(t, c).exp() - (occ - log_p).exp());
        }
    }
    Ok((-log_p, grad))
}

/// Direct enumeration of every alignment; the test oracle for [`ctc_loss`].
pub fn ctc_brute_force(y: &LogProbMatrix, target: &[usize]) -> Result<f64> {
    check_labels(y, target)?;
    if y.steps > 8 || y.classes > 6 {
        return Err(invalid(format!(
            "brute force limited to 8 steps and 5 characters, got {} and {}",
            y.steps,
            y.classes - 1
        )));
    }
    let mut terms = Vec::new();
    let mut alignment = vec![0usize; y.steps];
    let total = y.classes.pow(y.steps as u32);
    for code in 0..total {
        let mut c = code;
        for a in alignment.iter_mut() {
            *a = c % y.classes;
            c /= y.classes;
        }
        if collapse(&alignment, y.blank()) == target {
            terms.push(alignment.iter().enumerate().map(|(t, &a)| y.get(t, a)).sum::<f64>());
        }
    }
    Ok(-log_sum_exp(&terms))
}

/// Per-step argmax (ties to the lowest index), then collapse.
pub fn greedy_decode(y: &LogProbMatrix) -> Vec<usize> {
    let path: Vec<usize> = (0..y.steps)
        .map(|t| {
            let row = y.row(t);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    collapse(&path, y.blank())
}

/// Prefix beam search over collapsed labelings.
///
/// Each beam entry tracks the log-probability of its prefix ending in a
/// blank and ending in a non-blank, so alignments reaching the same prefix
/// are merged. With `beam_width = 1` this can differ from [`greedy_decode`],
/// since it keeps the best prefix rather than the best path.
pub fn beam_decode(y: &LogProbMatrix, beam_width: usize) -> Result<Vec<usize>> {
    if beam_width == 0 {
        return Err(invalid("beam width must be at least 1"));
    }
    let blank = y.blank();
    // (ends in blank, ends in non-blank)
    let mut beam: Vec<(Vec<usize>, f64, f64)> = vec![(Vec::new(), 0.0, f64::NEG_INFINITY)];
    for t in 0..y.steps {
        let mut next: BTreeMap<Vec<usize>, (f64, f64)> = BTreeMap::new();
        for (prefix, pb, pnb) in &beam {
            let total = lse2(*pb, *pnb);
            let entry = next
                .entry(prefix.clone())
                .or_insert((f64::NEG_INFINITY, f64::NEG_INFINITY));
            entry.0 = lse2(entry.0, total + y.get(t, blank));

            for c in 0..blank {
                let p = y.get(t, c);
                if prefix.last() == Some(&c) {
                    let same = next.get_mut(prefix).expect("inserted above");
                    same.1 = lse2(same.1, pnb + p);
                    let mut extended = prefix.clone();
                    extended.push(c);
                    let e = next.entry(extended).or_insert((f64::NEG_INFINITY, f64::NEG_INFINITY));
                    e.1 = lse2(e.1, pb + p);
                } else {
                    let mut extended = prefix.clone();
                    extended.push(c);
                    let e = next.entry(extended).or_insert((f64::NEG_INFINITY, f64::NEG_INFINITY));
                    e.1 = lse2(e.1, total + p);
                }
            }
        }
        let mut ranked: Vec<(Vec<usize>, f64, f64)> = next.into_iter().map(|(k, (b, n))| (k, b, n)).collect();
        // BTreeMap iteration already orders prefixes, so a stable sort on
        // score alone breaks ties lexicographically.
        ranked.sort_by(|a, b| lse2(b.1, b.2).total_cmp(&lse2(a.1, a.2)));
        ranked.truncate(beam_width);
        beam = ranked;
    }
    Ok(beam.into_iter().next().map(|(p, _, _)| p).unwrap_or_default())
}

/// Sums path probabilities per collapsed labeling; test oracle for decoders.
pub fn labeling_distribution(y: &LogProbMatrix) -> Result<HashMap<Vec<usize>, f64>> {
    if y.steps > 8 || y.classes > 6 {
        return Err(invalid("labeling enumeration limited to 8 steps and 5 characters"));
    }
    let mut out: HashMap<Vec<usize>, Vec<f64>> = HashMap::new();
    let mut alignment = vec![0usize; y.steps];
    for code in 0..y.classes.pow(y.steps as u32) {
        let mut c = code;
        for a in alignment.iter_mut() {
            *a = c % y.classes;
            c /= y.classes;
        }
        let lp: f64 = alignment.iter().enumerate().map(|(t, &a)| y.get(t, a)).sum();
        out.entry(collapse(&alignment, y.blank())).or_default().push(lp);
    }
    Ok(out.into_iter().map(|(k, v)| (k, log_sum_exp(&v))).collect())
}
