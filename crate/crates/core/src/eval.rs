//! Scoring: token error rate from a minimal-edit alignment, scale-invariant
//! SNR, and the comparison-report structures.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::signal::Waveform;
use serde::{Deserialize, Serialize};

/// Counts from a minimal-edit alignment. `wer` may exceed 1 when the
/// hypothesis carries more insertions than the reference has tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WerResult {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_tokens: usize,
    pub wer: f64,
}

impl WerResult {
    pub fn edits(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Levenshtein alignment with unit costs. Ties are broken preferring
/// substitution over insertion over deletion, so the counts are
/// deterministic.
pub fn wer(reference: &[usize], hypothesis: &[usize]) -> Result<WerResult> {
    if reference.is_empty() {
        return Err(Error::invalid_input("empty reference in WER"));
    }
    let r = reference.len();
    let h = hypothesis.len();
    #[derive(Clone, Copy, PartialEq)]
    enum Op {
        Start,
        Keep,
        Sub,
        Ins,
        Del,
    }
    let mut dist = vec![0usize; (r + 1) * (h + 1)];
    let mut op = vec![Op::Start; (r + 1) * (h + 1)];
    let idx = |i: usize, j: usize| i * (h + 1) + j;
    for j in 1..=h {
        dist[idx(0, j)] = j;
        op[idx(0, j)] = Op::Ins;
    }
    for i in 1..=r {
        dist[idx(i, 0)] = i;
        op[idx(i, 0)] = Op::Del;
    }
    for i in 1..=r {
        for j in 1..=h {
            let eq = reference[i - 1] == hypothesis[j - 1];
            let sub_cost = dist[idx(i - 1, j - 1)] + usize::from(!eq);
            let ins_cost = dist[idx(i, j - 1)] + 1;
            let del_cost = dist[idx(i - 1, j)] + 1;
            let (cost, chosen) = if sub_cost <= ins_cost && sub_cost <= del_cost {
                (sub_cost, if eq { Op::Keep } else { Op::Sub })
            } else if ins_cost <= del_cost {
                (ins_cost, Op::Ins)
            } else {
                (del_cost, Op::Del)
            };
            dist[idx(i, j)] = cost;
            op[idx(i, j)] = chosen;
        }
    }

    let (mut i, mut j) = (r, h);
    let (mut subs, mut dels, mut inss) = (0usize, 0usize, 0usize);
    while i > 0 || j > 0 {
        match op[idx(i, j)] {
            Op::Keep => {
                i -= 1;
                j -= 1;
            }
            Op::Sub => {
                subs += 1;
                i -= 1;
                j -= 1;
            }
            Op::Ins => {
                inss += 1;
                j -= 1;
            }
            Op::Del => {
                dels += 1;
                i -= 1;
            }
            Op::Start => unreachable!(),
        }
    }
    Ok(WerResult {
        substitutions: subs,
        deletions: dels,
        insertions: inss,
        ref_tokens: r,
        wer: (subs + dels + inss) as f64 / r as f64,
    })
}

/// Corpus-level error rate: total edits over total reference tokens.
pub fn aggregate_wer(results: &[WerResult]) -> f64 {
    let edits: usize = results.iter().map(WerResult::edits).sum();
    let tokens: usize = results.iter().map(|r| r.ref_tokens).sum();
    if tokens == 0 {
        0.0
    } else {
        edits as f64 / tokens as f64
    }
}

/// Cap for the scale-invariant SNR when the residual vanishes.
pub const SI_SNR_CAP_DB: f64 = 60.0;

/// Scale-invariant SNR in dB: project the estimate onto the reference and
/// compare the projected energy against the residual.
pub fn si_snr<S: Scalar>(est: &Waveform<S>, reference: &Waveform<S>) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::invalid_input("si_snr requires equal lengths"));
    }
    let mut dot = 0.0f64;
    let mut ref_energy = 0.0f64;
    for (&e, &r) in est.samples.iter().zip(&reference.samples) {
        dot += e.as_f64() * r.as_f64();
        ref_energy += r.as_f64() * r.as_f64();
    }
    if ref_energy == 0.0 {
        return Err(Error::invalid_input("silent reference in si_snr"));
    }
    let alpha = dot / ref_energy;
    let mut target_energy = 0.0f64;
    let mut resid_energy = 0.0f64;
    for (&e, &r) in est.samples.iter().zip(&reference.samples) {
        let t = alpha * r.as_f64();
        let res = e.as_f64() - t;
        target_energy += t * t;
        resid_energy += res * res;
    }
    if resid_energy <= target_energy * 10f64.powf(-SI_SNR_CAP_DB / 10.0) {
        return Ok(SI_SNR_CAP_DB);
    }
    Ok((10.0 * (target_energy / resid_energy).log10()).min(SI_SNR_CAP_DB))
}

/// One row of the comparison report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemResult {
    pub system: String,
    pub description: String,
    pub cer_test: f64,
    pub cer_train: f64,
    pub si_snr_test_db: Option<f64>,
    pub steps: u64,
}

/// Comparative experiment report across training configurations, with the
/// clean-weight and activation sweeps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub note: String,
    pub corpus: String,
    pub systems: Vec<SystemResult>,
    pub gamma_sweep: Vec<SweepPoint>,
    pub activation_sweep: Vec<SweepPoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub setting: String,
    pub cer_test: f64,
}

impl ComparisonReport {
    /// Human-readable aligned table.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{}\n", self.note));
        out.push_str(&format!("corpus: {}\n\n", self.corpus));
        out.push_str(&format!(
            "{:<6} {:<44} {:>10} {:>10} {:>12}\n",
            "system", "description", "CER test", "CER train", "SI-SNR (dB)"
        ));
        for s in &self.systems {
            let snr = s
                .si_snr_test_db
                .map(|v| format!("{v:.2}"))
                .unwrap_or_else(|| "-".to_string());
            out.push_str(&format!(
                "{:<6} {:<44} {:>9.1}% {:>9.1}% {:>12}\n",
                s.system,
                s.description,
                100.0 * s.cer_test,
                100.0 * s.cer_train,
                snr
            ));
        }
        if !self.gamma_sweep.is_empty() {
            out.push_str("\nclean-weight sweep (dual-channel joint training):\n");
            for p in &self.gamma_sweep {
                out.push_str(&format!(
                    "  gamma = {:<6} CER test = {:.1}%\n",
                    p.setting,
                    100.0 * p.cer_test
                ));
            }
        }
        if !self.activation_sweep.is_empty() {
            out.push_str("\nmask-activation sweep (single-channel joint training):\n");
            for p in &self.activation_sweep {
                out.push_str(&format!(
                    "  {:<10} CER test = {:.1}%\n",
                    p.setting,
                    100.0 * p.cer_test
                ));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sequences_score_zero() {
        let r = wer(&[3, 4, 5], &[3, 4, 5]).unwrap();
        assert_eq!(r.edits(), 0);
        assert_eq!(r.wer, 0.0);
    }

    #[test]
    fn single_substitution() {
        // "a b c" vs "a x c"
        let r = wer(&[3, 4, 5], &[3, 9, 5]).unwrap();
        assert_eq!(r.substitutions, 1);
        assert_eq!(r.deletions, 0);
        assert_eq!(r.insertions, 0);
        assert!((r.wer - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn wer_may_exceed_one() {
        // "a" vs "a b c": two insertions
        let r = wer(&[3], &[3, 4, 5]).unwrap();
        assert_eq!(r.insertions, 2);
        assert_eq!(r.substitutions + r.deletions, 0);
        assert_eq!(r.wer, 2.0);
    }

    #[test]
    fn empty_reference_errors() {
        assert!(wer(&[], &[3]).is_err());
    }

    /// Plain recursion on the edit-distance definition; the oracle.
    fn brute_distance(a: &[usize], b: &[usize]) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        let sub = brute_distance(&a[1..], &b[1..]) + usize::from(a[0] != b[0]);
        let del = brute_distance(&a[1..], b) + 1;
        let ins = brute_distance(a, &b[1..]) + 1;
        sub.min(del).min(ins)
    }

    #[test]
    fn dp_matches_brute_force_on_short_sequences() {
        let symbols = [3usize, 4, 5];
        let mut seqs: Vec<Vec<usize>> = vec![vec![]];
        for _ in 0..3 {
            let mut next = seqs.clone();
            for s in &seqs {
                for &sym in &symbols {
                    let mut s2 = s.clone();
                    s2.push(sym);
                    next.push(s2);
                }
            }
            seqs = next;
        }
        seqs.dedup();
        for a in &seqs {
            if a.is_empty() {
                continue;
            }
            for b in &seqs {
                let got = wer(a, b).unwrap();
                assert_eq!(got.edits(), brute_distance(a, b), "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn swapping_arguments_swaps_insertions_and_deletions() {
        let a = [3usize, 4, 5, 4];
        let b = [3usize, 5, 5];
        let fwd = wer(&a, &b).unwrap();
        let rev = wer(&b, &a).unwrap();
        assert_eq!(fwd.substitutions, rev.substitutions);
        assert_eq!(fwd.insertions, rev.deletions);
        assert_eq!(fwd.deletions, rev.insertions);
    }

    fn wave(v: Vec<f64>) -> Waveform<f64> {
        Waveform::new(v, 16000).unwrap()
    }

    #[test]
    fn si_snr_caps_on_perfect_estimates_and_is_scale_invariant() {
        let r = wave(vec![0.1, -0.3, 0.5, 0.2]);
        assert_eq!(si_snr(&r, &r).unwrap(), SI_SNR_CAP_DB);
        let doubled = wave(r.samples.iter().map(|&v| 2.0 * v).collect());
        assert_eq!(si_snr(&doubled, &r).unwrap(), SI_SNR_CAP_DB);

        // positive scaling never changes the value
        let est = wave(vec![0.11, -0.25, 0.4, 0.3]);
        let a = si_snr(&est, &r).unwrap();
        let scaled = wave(est.samples.iter().map(|&v| 3.7 * v).collect());
        let b = si_snr(&scaled, &r).unwrap();
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn orthogonal_estimate_matches_the_projection_formula() {
        let r = wave(vec![1.0, 0.0, -1.0, 0.0]);
        let est = wave(vec![0.0, 1.0, 0.0, -1.0]);
        // dot = 0 -> target = 0; ratio -> 0; deeply negative value
        let v = si_snr(&est, &r).unwrap();
        assert!(v < -100.0 || v == f64::NEG_INFINITY);
    }

    #[test]
    fn silent_reference_errors() {
        let r = wave(vec![0.0; 8]);
        let est = wave(vec![0.1; 8]);
        assert!(si_snr(&est, &r).is_err());
    }

    #[test]
    fn report_renders_all_sections() {
        let report = ComparisonReport {
            note: "synthetic corpus".into(),
            corpus: "runs/corpus".into(),
            systems: vec![SystemResult {
                system: "S1".into(),
                description: "baseline".into(),
                cer_test: 0.5,
                cer_train: 0.4,
                si_snr_test_db: Some(3.2),
                steps: 100,
            }],
            gamma_sweep: vec![SweepPoint {
                setting: "0.7".into(),
                cer_test: 0.3,
            }],
            activation_sweep: vec![SweepPoint {
                setting: "relu".into(),
                cer_test: 0.31,
            }],
        };
        let text = report.render_text();
        assert!(text.contains("baseline"));
        assert!(text.contains("gamma = 0.7"));
        assert!(text.contains("relu"));
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"gamma_sweep\""));
    }
}
