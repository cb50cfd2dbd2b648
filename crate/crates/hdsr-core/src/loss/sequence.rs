//! Alignment-marginalized sequence loss for the transcription head.
//!
//! The loss of a frame sequence against a digit-string target is the negative
//! log of the total probability of every frame labeling that collapses to the
//! target (collapse = merge adjacent repeats, then drop blanks). Computed by
//! the forward-backward recursion over the blank-augmented target, entirely in
//! log space so long sequences do not underflow.

use crate::error::{Error, Result};
use crate::loss::PROB_CLAMP;

/// Symbol index of the blank in the 11-symbol alphabet (digits 0-9 + blank).
pub const BLANK: usize = 10;

/// Number of symbols per frame distribution.
pub const ALPHABET: usize = 11;

const NEG_INF: f64 = f64::NEG_INFINITY;

fn log_sum_exp2(a: f64, b: f64) -> f64 {
    if a == NEG_INF {
        return b;
    }
    if b == NEG_INF {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn log_sum_exp3(a: f64, b: f64, c: f64) -> f64 {
    log_sum_exp2(log_sum_exp2(a, b), c)
}

/// Digits of `target` as symbol indices.
fn target_symbols(target: &str) -> Result<Vec<usize>> {
    target
        .chars()
        .map(|c| {
            c.to_digit(10)
                .map(|d| d as usize)
                .ok_or_else(|| Error::InvalidArgument(format!("non-digit '{c}' in target")))
        })
        .collect()
}

/// Minimal frame count able to represent `target`: one frame per digit plus a
/// separating blank between adjacent repeats.
pub fn min_frames_for(target: &str) -> usize {
    let bytes = target.as_bytes();
    let repeats = bytes.windows(2).filter(|w| w[0] == w[1]).count();
    bytes.len() + repeats
}

/// Loss and gradient of the sequence objective.
///
/// `frames` holds one probability vector over [`ALPHABET`] symbols per frame,
/// left to right. Returns `(-log P(target | frames), g)` where `g[t][k]` is
/// the derivative of the loss with respect to the log-probability of symbol
/// `k` at frame `t`. Probabilities are clamped to at least [`PROB_CLAMP`]
/// before taking logs.
pub fn sequence_loss(frames: &[Vec<f64>], target: &str) -> Result<(f64, Vec<Vec<f64>>)> {
    let symbols = target_symbols(target)?;
    let t_len = frames.len();
    if t_len == 0 {
        return Err(Error::InvalidArgument("empty frame sequence".into()));
    }
    for (i, f) in frames.iter().enumerate() {
        if f.len() != ALPHABET {
            return Err(Error::ShapeMismatch(format!(
                "frame {i} has {} symbols, expected {ALPHABET}",
                f.len()
            )));
        }
    }
    if t_len < min_frames_for(target) {
        return Err(Error::InfeasibleTarget {
            target: target.to_string(),
            frames: t_len,
        });
    }

    // Blank-augmented label: blank, l1, blank, l2, ..., ln, blank.
    let s_len = 2 * symbols.len() + 1;
    let ext = |s: usize| -> usize {
        if s % 2 == 0 {
            BLANK
        } else {
            symbols[s / 2]
        }
    };

    let logp = |t: usize, k: usize| -> f64 { frames[t][k].max(PROB_CLAMP).ln() };

    // Forward.
    let mut alpha = vec![vec![NEG_INF; s_len]; t_len];
    alpha[0][0] = logp(0, BLANK);
    if s_len > 1 {
        alpha[0][1] = logp(0, ext(1));
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let stay = alpha[t - 1][s];
            let step = if s >= 1 { alpha[t - 1][s - 1] } else { NEG_INF };
            let skip = if s >= 2 && ext(s) != BLANK && ext(s) != ext(s - 2) {
                alpha[t - 1][s - 2]
            } else {
                NEG_INF
            };
            let acc = log_sum_exp3(stay, step, skip);
            alpha[t][s] = if acc == NEG_INF { NEG_INF } else { acc + logp(t, ext(s)) };
        }
    }
    let log_total = if s_len > 1 {
        log_sum_exp2(alpha[t_len - 1][s_len - 1], alpha[t_len - 1][s_len - 2])
    } else {
        alpha[t_len - 1][0]
    };
    if log_total == NEG_INF {
        return Err(Error::Numerics(format!(
            "target '{target}' has zero probability under the given frames"
        )));
    }

    // Backward: beta[t][s] = log P(suffix after frame t | state s at frame t).
    let mut beta = vec![vec![NEG_INF; s_len]; t_len];
    beta[t_len - 1][s_len - 1] = 0.0;
    if s_len > 1 {
        beta[t_len - 1][s_len - 2] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let stay = beta[t + 1][s] + logp(t + 1, ext(s));
            let step = if s + 1 < s_len {
                beta[t + 1][s + 1] + logp(t + 1, ext(s + 1))
            } else {
                NEG_INF
            };
            let skip = if s + 2 < s_len && ext(s + 2) != BLANK && ext(s + 2) != ext(s) {
                beta[t + 1][s + 2] + logp(t + 1, ext(s + 2))
            } else {
                NEG_INF
            };
            beta[t][s] = log_sum_exp3(stay, step, skip);
        }
    }

    // Gradient wrt log-probabilities: -sum of state posteriors per symbol.
    let mut grad = vec![vec![0.0; ALPHABET]; t_len];
    for t in 0..t_len {
        for s in 0..s_len {
            let post = alpha[t][s] + beta[t][s] - log_total;
            if post > NEG_INF {
                grad[t][ext(s)] -= post.exp();
            }
        }
    }

    Ok((-log_total, grad))
}

/// Loss and gradient with respect to raw per-frame logits.
///
/// Applies a per-frame softmax, runs [`sequence_loss`], and chains the
/// gradient through the softmax: dL/dz_j = g_j - p_j * sum_k g_k.
pub fn sequence_loss_from_logits(logits: &[Vec<f64>], target: &str) -> Result<(f64, Vec<Vec<f64>>)> {
    let probs: Vec<Vec<f64>> = logits.iter().map(|row| softmax(row)).collect();
    let (loss, g_logp) = sequence_loss(&probs, target)?;
    let grad = logits
        .iter()
        .zip(probs.iter().zip(g_logp.iter()))
        .map(|(_, (p, g))| {
            let g_sum: f64 = g.iter().sum();
            p.iter().zip(g.iter()).map(|(&pj, &gj)| gj - pj * g_sum).collect()
        })
        .collect();
    Ok((loss, grad))
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Collapse a frame labeling: merge adjacent repeats, drop blanks.
    fn collapse(path: &[usize]) -> String {
        let mut out = String::new();
        let mut prev = usize::MAX;
        for &s in path {
            if s != prev && s != BLANK {
                out.push(char::from_digit(s as u32, 10).unwrap());
            }
            prev = s;
        }
        out
    }

    /// Brute force: enumerate all ALPHABET^T labelings, sum path products.
    fn brute_force(frames: &[Vec<f64>], target: &str) -> f64 {
        let t = frames.len();
        let mut total = 0.0f64;
        let mut path = vec![0usize; t];
        loop {
            if collapse(&path) == target {
                let p: f64 = path.iter().enumerate().map(|(i, &s)| frames[i][s]).product();
                total += p;
            }
            // odometer increment
            let mut i = 0;
            loop {
                if i == t {
                    return -total.ln();
                }
                path[i] += 1;
                if path[i] < ALPHABET {
                    break;
                }
                path[i] = 0;
                i += 1;
            }
        }
    }

    fn random_frames(rng: &mut impl Rng, t: usize) -> Vec<Vec<f64>> {
        (0..t)
            .map(|_| {
                let raw: Vec<f64> = (0..ALPHABET).map(|_| rng.gen_range(0.05..1.0)).collect();
                let sum: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / sum).collect()
            })
            .collect()
    }

    #[test]
    fn single_frame_single_digit() {
        let mut frame = vec![0.02; ALPHABET];
        frame[5] = 0.8;
        let (loss, _) = sequence_loss(&[frame.clone()], "5").unwrap();
        assert!((loss - (-0.8f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn two_frames_enumerates_three_paths() {
        let mut f1 = vec![0.01; ALPHABET];
        f1[5] = 0.7;
        f1[BLANK] = 0.2;
        let mut f2 = vec![0.03; ALPHABET];
        f2[5] = 0.5;
        f2[BLANK] = 0.2;
        let (loss, _) = sequence_loss(&[f1.clone(), f2.clone()], "5").unwrap();
        let expected = -(f1[5] * f2[5] + f1[5] * f2[BLANK] + f1[BLANK] * f2[5]).ln();
        assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
    }

    #[test]
    fn matches_brute_force_on_random_cases() {
        let mut rng = crate::rng::named(11, "seqloss-test");
        for case in 0..60 {
            let t = rng.gen_range(1..=4);
            let frames = random_frames(&mut rng, t);
            let max_len = t.min(3);
            let len = rng.gen_range(0..=max_len);
            let target: String = (0..len)
                .map(|_| char::from_digit(rng.gen_range(0..10u32), 10).unwrap())
                .collect();
            if frames.len() < min_frames_for(&target) {
                continue;
            }
            let (loss, _) = sequence_loss(&frames, &target).unwrap();
            let expected = brute_force(&frames, &target);
            let rel = (loss - expected).abs() / expected.abs().max(1e-12);
            assert!(rel < 1e-9, "case {case}: {loss} vs {expected}");
        }
    }

    #[test]
    fn repeated_digits_need_separating_frames() {
        assert_eq!(min_frames_for("55"), 3);
        assert_eq!(min_frames_for("555"), 5);
        assert_eq!(min_frames_for("505"), 3);
        let frames = random_frames(&mut crate::rng::named(3, "rep"), 2);
        match sequence_loss(&frames, "55") {
            Err(Error::InfeasibleTarget { .. }) => {}
            other => panic!("expected infeasible target, got {other:?}"),
        }
    }

    #[test]
    fn empty_target_scores_all_blank_paths() {
        let frames = random_frames(&mut crate::rng::named(4, "empty"), 3);
        let (loss, _) = sequence_loss(&frames, "").unwrap();
        let expected: f64 = -frames.iter().map(|f| f[BLANK]).product::<f64>().ln();
        assert!((loss - expected).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = crate::rng::named(5, "seqgrad");
        let t = 4;
        let frames = random_frames(&mut rng, t);
        let target = "37";
        let (_, grad) = sequence_loss(&frames, target).unwrap();
        let h = 1e-6;
        for ti in 0..t {
            for k in 0..ALPHABET {
                // perturb the log-probability of one symbol
                let mut up = frames.clone();
                let mut dn = frames.clone();
                up[ti][k] = (frames[ti][k].ln() + h).exp();
                dn[ti][k] = (frames[ti][k].ln() - h).exp();
                let (lu, _) = sequence_loss(&up, target).unwrap();
                let (ld, _) = sequence_loss(&dn, target).unwrap();
                let numeric = (lu - ld) / (2.0 * h);
                let analytic = grad[ti][k];
                let denom = analytic.abs().max(1e-6);
                assert!(
                    ((analytic - numeric) / denom).abs() < 1e-4,
                    "frame {ti} sym {k}: {analytic} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let mut rng = crate::rng::named(6, "seqlogit");
        let t = 4;
        let logits: Vec<Vec<f64>> = (0..t)
            .map(|_| (0..ALPHABET).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let target = "90";
        let (_, grad) = sequence_loss_from_logits(&logits, target).unwrap();
        let h = 1e-6;
        for ti in 0..t {
            for k in 0..ALPHABET {
                let mut up = logits.clone();
                let mut dn = logits.clone();
                up[ti][k] += h;
                dn[ti][k] -= h;
                let (lu, _) = sequence_loss_from_logits(&up, target).unwrap();
                let (ld, _) = sequence_loss_from_logits(&dn, target).unwrap();
                let numeric = (lu - ld) / (2.0 * h);
                let analytic = grad[ti][k];
                let denom = analytic.abs().max(1e-6);
                assert!(
                    ((analytic - numeric) / denom).abs() < 1e-4,
                    "frame {ti} sym {k}: {analytic} vs {numeric}"
                );
            }
        }
    }
}
