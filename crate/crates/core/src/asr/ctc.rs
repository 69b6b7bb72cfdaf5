//! CTC negative log-likelihood as a single tape primitive.
//!
//! The forward pass runs the blank-augmented alignment DP in log space; the
//! backward pass uses the companion reverse DP to form alignment posteriors,
//! giving the exact gradient with respect to the per-frame log-probabilities.

use super::BLANK_ID;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[inline]
fn lse2<S: Scalar>(a: S, b: S) -> S {
    if a == S::neg_infinity() {
        return b;
    }
    if b == S::neg_infinity() {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[inline]
fn lse3<S: Scalar>(a: S, b: S, c: S) -> S {
    lse2(lse2(a, b), c)
}

/// Minimum encoder frames that admit any alignment: one per target symbol
/// plus a mandatory blank between adjacent repeats.
pub fn min_alignment_frames(targets: &[usize]) -> usize {
    let repeats = targets.windows(2).filter(|w| w[0] == w[1]).count();
    targets.len() + repeats
}

fn extended_labels(targets: &[usize]) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * targets.len() + 1);
    ext.push(BLANK_ID);
    for &y in targets {
        ext.push(y);
        ext.push(BLANK_ID);
    }
    ext
}

/// Negative log of the total probability over all valid blank-augmented
/// alignments of `targets` under `log_probs` (`[T x V]`, rows already
/// log-normalized). Differentiable w.r.t. `log_probs`.
pub fn ctc_nll<S: Scalar>(log_probs: &Tensor<S>, targets: &[usize]) -> Result<Tensor<S>> {
    let (t_len, vocab) = (log_probs.rows(), log_probs.cols());
    for &y in targets {
        if y == BLANK_ID {
            return Err(Error::invalid_input("CTC target contains the blank id"));
        }
        if y >= vocab {
            return Err(Error::invalid_input(format!(
                "CTC target id {y} outside vocabulary of {vocab}"
            )));
        }
    }
    let required = min_alignment_frames(targets);
    if t_len < required {
        return Err(Error::AlignmentInfeasible(format!(
            "target needs {required} frames but the encoder produced {t_len}"
        )));
    }

    let ext = extended_labels(targets);
    let e = ext.len();
    let lp = log_probs.data();
    let ninf = S::neg_infinity();

    // forward lattice, emission included at each step
    let mut alpha = vec![ninf; t_len * e];
    alpha[0] = lp[BLANK_ID];
    if e > 1 {
        alpha[1] = lp[ext[1]];
    }
    for t in 1..t_len {
        for s in 0..e {
            let stay = alpha[(t - 1) * e + s];
            let from_prev = if s >= 1 { alpha[(t - 1) * e + s - 1] } else { ninf };
            let from_skip = if s >= 2 && ext[s] != BLANK_ID && ext[s] != ext[s - 2] {
                alpha[(t - 1) * e + s - 2]
            } else {
                ninf
            };
            let inc = lse3(stay, from_prev, from_skip);
            if inc > ninf {
                alpha[t * e + s] = inc + lp[t * vocab + ext[s]];
            }
        }
    }
    let log_p = if e > 1 {
        lse2(alpha[(t_len - 1) * e + e - 1], alpha[(t_len - 1) * e + e - 2])
    } else {
        alpha[(t_len - 1) * e]
    };
    let loss = -log_p;

    let node = log_probs.tape().cloned().map(|tape| {
        let pid = log_probs.node_id().unwrap();

        // reverse lattice, emission included
        let mut beta = vec![ninf; t_len * e];
        beta[(t_len - 1) * e + e - 1] = lp[(t_len - 1) * vocab + ext[e - 1]];
        if e > 1 {
            beta[(t_len - 1) * e + e - 2] = lp[(t_len - 1) * vocab + ext[e - 2]];
        }
        for t in (0..t_len - 1).rev() {
            for s in 0..e {
                let stay = beta[(t + 1) * e + s];
                let to_next = if s + 1 < e { beta[(t + 1) * e + s + 1] } else { ninf };
                let to_skip = if s + 2 < e && ext[s + 2] != BLANK_ID && ext[s + 2] != ext[s] {
                    beta[(t + 1) * e + s + 2]
                } else {
                    ninf
                };
                let out = lse3(stay, to_next, to_skip);
                if out > ninf {
                    beta[t * e + s] = out + lp[t * vocab + ext[s]];
                }
            }
        }

        let lp_arc = log_probs.data_arc();
        let ext_c = ext.clone();
        let id = tape.push_node(
            vec![pid],
            Some(Box::new(move |g, sink| {
                let g0 = g[0];
                let slot = sink.slot(pid, t_len * vocab);
                for t in 0..t_len {
                    // log posterior mass per vocabulary symbol at frame t
                    let mut acc = vec![ninf; vocab];
                    for (s, &sym) in ext_c.iter().enumerate() {
                        let a = alpha[t * e + s];
                        let b = beta[t * e + s];
                        if a > ninf && b > ninf {
                            acc[sym] = lse2(acc[sym], a + b - lp_arc[t * vocab + sym]);
                        }
                    }
                    for (k, &m) in acc.iter().enumerate() {
                        if m > ninf {
                            // d(-logP)/d lp[t][k] = -exp(m - logP)
                            slot[t * vocab + k] =
                                slot[t * vocab + k] - g0 * (m - log_p).exp();
                        }
                    }
                }
            })),
        );
        (tape, id)
    });
    Ok(Tensor::with_node(vec![loss], 1, 1, node))
}
