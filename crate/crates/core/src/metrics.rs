//! Accuracy, confusion matrices, one-vs-rest ROC curves and AUC, and the
//! CSV / SVG report writers.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::classify::TrainedModel;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::invalid("accuracy of an empty set"));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// `confusion[truth][pred]` counts.
pub fn confusion(pred: &[usize], truth: &[usize], n_classes: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        m[t][p] += 1;
    }
    m
}

/// Score groups in descending order as `(positives, negatives)` per distinct
/// score.
fn groups(scores: &[f64], positive: &[bool]) -> Result<(Vec<(u64, u64)>, u64, u64)> {
    if scores.len() != positive.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let p = positive.iter().filter(|&&b| b).count() as u64;
    let n = positive.len() as u64 - p;
    if p == 0 || n == 0 {
        return Err(Error::invalid("ROC needs both positive and negative samples"));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out: Vec<(u64, u64)> = Vec::new();
    let mut last = f64::NAN;
    for i in idx {
        // -0.0 and 0.0 are the same threshold
        if out.is_empty() || scores[i] != last {
            out.push((0, 0));
            last = scores[i];
        }
        let g = out.last_mut().unwrap();
        if positive[i] {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    Ok((out, p, n))
}

/// ROC vertices from a threshold sweep over distinct scores, high to low.
/// Tied scores move together, giving diagonal segments. Collinear interior
/// vertices are dropped, so the curve always starts at (0,0) and ends at
/// (1,1).
pub fn roc_points(scores: &[f64], positive: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (groups, p, n) = groups(scores, positive)?;
    let mut pts: Vec<(u64, u64)> = vec![(0, 0)];
    let (mut fp, mut tp) = (0u64, 0u64);
    for (gp, gn) in groups {
        tp += gp;
        fp += gn;
        let next = (fp, tp);
        if pts.len() >= 2 {
            let a = pts[pts.len() - 2];
            let b = pts[pts.len() - 1];
            let cross = (b.0 as i128 - a.0 as i128) * (next.1 as i128 - a.1 as i128)
                - (b.1 as i128 - a.1 as i128) * (next.0 as i128 - a.0 as i128);
            if cross == 0 {
                pts.pop();
            }
        }
        pts.push(next);
    }
    Ok(pts
        .into_iter()
        .map(|(f, t)| (f as f64 / n as f64, t as f64 / p as f64))
        .collect())
}

/// Mann-Whitney AUC: `(#(pos > neg) + ½ #(pos = neg)) / (n_pos n_neg)`,
/// counted exactly.
pub fn auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    let (groups, p, n) = groups(scores, positive)?;
    let mut twice_u: u128 = 0;
    let mut neg_below = n as u128;
    for (gp, gn) in groups {
        neg_below -= gn as u128;
        twice_u += gp as u128 * (2 * neg_below + gn as u128);
    }
    Ok(twice_u as f64 / (2.0 * p as f64 * n as f64))
}

/// Area under a polyline by the trapezoid rule.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub confusion: Vec<Vec<u64>>,
    /// Per class; `None` when the class is absent from (or is all of) the
    /// evaluated set.
    pub roc: Vec<Option<Vec<(f64, f64)>>>,
    pub auc_per_class: Vec<Option<f64>>,
    /// Unweighted mean over the classes that have an AUC.
    pub auc_macro: Option<f64>,
}

/// Report from a score matrix whose column `c` scores class `c`; labels are
/// the row-argmax.
pub fn evaluate_scores(scores: &Matrix, truth: &[usize]) -> Result<EvalReport> {
    if scores.rows() != truth.len() {
        return Err(Error::invalid(format!(
            "{} score rows for {} labels",
            scores.rows(),
            truth.len()
        )));
    }
    let k = scores.cols();
    if let Some(&bad) = truth.iter().find(|&&t| t >= k) {
        return Err(Error::invalid(format!("label {bad} outside 0..{k}")));
    }
    let pred: Vec<usize> = (0..scores.rows())
        .map(|i| crate::matrix::argmax(scores.row(i)))
        .collect();
    let acc = accuracy(&pred, truth)?;
    let mut roc = Vec::with_capacity(k);
    let mut aucs = Vec::with_capacity(k);
    for c in 0..k {
        let col: Vec<f64> = (0..scores.rows()).map(|i| scores.get(i, c)).collect();
        let pos: Vec<bool> = truth.iter().map(|&t| t == c).collect();
        match (roc_points(&col, &pos), auc(&col, &pos)) {
            (Ok(r), Ok(a)) => {
                roc.push(Some(r));
                aucs.push(Some(a));
            }
            _ => {
                log::warn!("class {c} lacks positives or negatives; AUC omitted from the macro average");
                roc.push(None);
                aucs.push(None);
            }
        }
    }
    let present: Vec<f64> = aucs.iter().flatten().copied().collect();
    let auc_macro = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
    Ok(EvalReport {
        accuracy: acc,
        confusion: confusion(&pred, truth, k),
        roc,
        auc_per_class: aucs,
        auc_macro,
    })
}

pub fn evaluate(model: &TrainedModel, x: &Matrix, truth: &[usize]) -> Result<EvalReport> {
    if x.rows() == 0 {
        return Err(Error::invalid("evaluation set is empty"));
    }
    evaluate_scores(&model.predict_scores(x)?, truth)
}

/// A fraction as a percentage with two decimals, e.g. `0.96011 → "96.01"`.
pub fn pct(fraction: f64) -> String {
    format!("{:.2}", fraction * 100.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub feature_kind: String,
    pub snr_db: Option<f64>,
    pub auc: Option<f64>,
    pub accuracy: f64,
}

pub const REPORT_HEADER: &str = "model,feature_kind,snr_db,auc_pct,accuracy_pct";

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.model,
            r.feature_kind,
            r.snr_db.map(|v| v.to_string()).unwrap_or_default(),
            r.auc.map(pct).unwrap_or_default(),
            pct(r.accuracy)
        );
    }
    s
}

pub fn roc_csv(points: &[(f64, f64)]) -> String {
    let mut s = String::from("fpr,tpr\n");
    for (f, t) in points {
        let _ = writeln!(s, "{f},{t}");
    }
    s
}

/// A minimal standalone SVG of one ROC curve.
pub fn roc_svg(points: &[(f64, f64)], title: &str) -> String {
    let size = 300.0;
    let pad = 40.0;
    let map = |(f, t): (f64, f64)| (pad + f * size, pad + (1.0 - t) * size);
    let poly: Vec<String> = points
        .iter()
        .map(|&p| {
            let (x, y) = map(p);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let title = title.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    let w = size + 2.0 * pad;
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{w}\" viewBox=\"0 0 {w} {w}\">\n",
            "<rect x=\"{pad}\" y=\"{pad}\" width=\"{size}\" height=\"{size}\" fill=\"none\" stroke=\"#000\"/>\n",
            "<line x1=\"{pad}\" y1=\"{bottom}\" x2=\"{right}\" y2=\"{pad}\" stroke=\"#999\" stroke-dasharray=\"4 4\"/>\n",
            "<polyline points=\"{poly}\" fill=\"none\" stroke=\"#c0392b\" stroke-width=\"2\"/>\n",
            "<text x=\"{cx}\" y=\"{ty}\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n",
            "<text x=\"{cx}\" y=\"{fy}\" text-anchor=\"middle\" font-size=\"12\">false positive rate</text>\n",
            "<text x=\"12\" y=\"{cy}\" font-size=\"12\" transform=\"rotate(-90 12 {cy})\" text-anchor=\"middle\">true positive rate</text>\n",
            "</svg>\n"
        ),
        w = w,
        pad = pad,
        size = size,
        bottom = pad + size,
        right = pad + size,
        poly = poly.join(" "),
        cx = w / 2.0,
        cy = w / 2.0,
        ty = pad / 2.0 + 5.0,
        fy = w - 10.0,
        title = title,
    )
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairwise_auc(scores: &[f64], pos: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if pos[i] && !pos[j] {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn accuracy_basics() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 1, 1]).unwrap(), 0.75);
        assert!(accuracy(&[], &[]).is_err());
        assert_eq!(pct(0.960_14), "96.01");
        assert_eq!(pct(1.0), "100.00");
    }

    #[test]
    fn perfect_and_tied_curves() {
        let pos = [true, true, false, false];
        assert_eq!(
            roc_points(&[0.9, 0.8, 0.2, 0.1], &pos).unwrap(),
            vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
        );
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &pos).unwrap(), 1.0);
        assert_eq!(roc_points(&[0.5; 4], &pos).unwrap(), vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(auc(&[0.5; 4], &pos).unwrap(), 0.5);
        assert!(roc_points(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn three_by_three_example_is_eight_ninths() {
        let s = [0.9, 0.8, 0.4, 0.7, 0.3, 0.2];
        let p = [true, true, true, false, false, false];
        assert_eq!(pairwise_auc(&s, &p), 8.0 / 9.0);
        assert!((auc(&s, &p).unwrap() - 8.0 / 9.0).abs() < 1e-15);
        let r = roc_points(&s, &p).unwrap();
        assert!((trapezoid(&r) - 8.0 / 9.0).abs() < 1e-12);
        assert_eq!(r.first(), Some(&(0.0, 0.0)));
        assert_eq!(r.last(), Some(&(1.0, 1.0)));
    }

    #[test]
    fn confusion_rows_sum_to_truth_counts() {
        let truth = [0, 0, 1, 2, 2, 2];
        let pred = [0, 1, 1, 2, 0, 2];
        let c = confusion(&pred, &truth, 3);
        let sums: Vec<u64> = c.iter().map(|r| r.iter().sum()).collect();
        assert_eq!(sums, vec![2, 1, 3]);
        let trace: u64 = (0..3).map(|i| c[i][i]).sum();
        assert_eq!(trace as f64 / 6.0, accuracy(&pred, &truth).unwrap());
    }

    #[test]
    fn evaluate_perfect_scores_and_absent_class() {
        let scores = Matrix::from_rows(&[[0.9, 0.1, 0.0], [0.2, 0.8, 0.0], [0.6, 0.4, 0.0]]);
        let r = evaluate_scores(&scores, &[0, 1, 0]).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.auc_per_class, vec![Some(1.0), Some(1.0), None]);
        assert_eq!(r.auc_macro, Some(1.0));
    }

    #[test]
    fn null_scores_have_half_auc() {
        use rand::Rng;
        let mut rng = crate::seed::rng(21);
        let n = 10_000;
        let k = 5;
        let mut s = Matrix::zeros(n, k);
        s.data_mut().iter_mut().for_each(|v| *v = rng.random());
        let truth: Vec<usize> = (0..n).map(|i| i % k).collect();
        let m = evaluate_scores(&s, &truth).unwrap().auc_macro.unwrap();
        assert!((m - 0.5).abs() < 0.02, "{m}");
    }

    #[test]
    fn report_layout() {
        let rows = [
            ReportRow {
                model: "gbm".into(),
                feature_kind: "fused".into(),
                snr_db: None,
                auc: Some(0.99771),
                accuracy: 0.9601,
            },
            ReportRow {
                model: "svm".into(),
                feature_kind: "deep".into(),
                snr_db: Some(35.0),
                auc: None,
                accuracy: 0.5,
            },
        ];
        assert_eq!(
            report_csv(&rows),
            "model,feature_kind,snr_db,auc_pct,accuracy_pct\ngbm,fused,,99.77,96.01\nsvm,deep,35,,50.00\n"
        );
        let svg = roc_svg(&[(0.0, 0.0), (0.5, 1.0), (1.0, 1.0)], "a<b");
        assert!(svg.starts_with("<svg") && svg.contains("polyline") && svg.contains("a&lt;b"));
    }

    fn scored_set() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..200).prop_flat_map(|n| {
            (
                proptest::collection::vec((0i32..12).prop_map(|v| f64::from(v) / 4.0), n),
                proptest::collection::vec(any::<bool>(), n),
            )
        })
        .prop_filter("both classes", |(_, p)| p.iter().any(|&b| b) && p.iter().any(|&b| !b))
    }

    proptest! {
        #[test]
        fn auc_matches_pairs_and_trapezoid((s, p) in scored_set()) {
            let a = auc(&s, &p).unwrap();
            prop_assert!((a - pairwise_auc(&s, &p)).abs() < 1e-12);
            let r = roc_points(&s, &p).unwrap();
            prop_assert!((trapezoid(&r) - a).abs() < 1e-12);
            prop_assert_eq!(r[0], (0.0, 0.0));
            prop_assert_eq!(*r.last().unwrap(), (1.0, 1.0));
            for w in r.windows(2) {
                prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
            }
        }

        #[test]
        fn auc_is_rank_invariant((s, p) in scored_set(), a in 0.1f64..5.0, b in -3.0f64..3.0) {
            let t: Vec<f64> = s.iter().map(|v| (a * v + b).exp()).collect();
            prop_assert_eq!(auc(&t, &p).unwrap(), auc(&s, &p).unwrap());
        }

        #[test]
        fn negated_scores_complement_without_ties(n in 2usize..100, seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = crate::seed::rng(seed);
            let s: Vec<f64> = (0..n).map(|i| i as f64 + rng.random::<f64>() * 0.5).collect();
            let mut p: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            p[0] = true;
            p[1] = false;
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            prop_assert!((auc(&neg, &p).unwrap() - (1.0 - auc(&s, &p).unwrap())).abs() < 1e-12);
        }
    }
}
