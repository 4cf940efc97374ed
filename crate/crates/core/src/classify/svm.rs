use super::{check_c, dot, ClassifierKind, LabeledSet, LinearModel};
use crate::error::Result;

/// Dual coefficients above this count as support vectors.
pub const SVM_ALPHA_TOL: f64 = 1e-8;
const STOP_TOL: f64 = 1e-6;
const MAX_EPOCHS: usize = 1000;

/// L1-hinge linear SVM by dual coordinate descent, visiting samples in their
/// given order. The bias is learned as the weight of an extra constant
/// feature equal to the largest sample norm, which keeps the problem
/// covariant under a global rescaling of the inputs.
pub fn train_linear_svm(data: &LabeledSet, c: f64) -> Result<LinearModel> {
    check_c(c)?;
    data.check_binary()?;
    let (n, d) = (data.len(), data.dim());
    let xs = data.vectors();
    let ys: Vec<f64> = data.labels().iter().map(|&y| y as f64).collect();
    let bias_feature = xs.iter().map(|x| dot(x, x).sqrt()).fold(0.0, f64::max);
    let bias_feature = if bias_feature > 0.0 { bias_feature } else { 1.0 };
    let qii: Vec<f64> = xs.iter().map(|x| dot(x, x) + bias_feature * bias_feature).collect();

    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; d];
    let mut wb = 0.0;
    let mut converged = false;
    let mut epochs = 0;
    while epochs < MAX_EPOCHS {
        epochs += 1;
        let mut max_pg: f64 = 0.0;
        for i in 0..n {
            let g = ys[i] * (dot(&w, &xs[i]) + wb * bias_feature) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            max_pg = max_pg.max(pg.abs());
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / qii[i]).clamp(0.0, c);
                let step = (alpha[i] - old) * ys[i];
                if step != 0.0 {
                    w.iter_mut().zip(&xs[i]).for_each(|(wj, xj)| *wj += step * xj);
                    wb += step * bias_feature;
                }
            }
        }
        if max_pg < STOP_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("linear svm stopped after {MAX_EPOCHS} epochs without reaching tolerance {STOP_TOL:e}");
    }
    let v = wb * bias_feature;
    let slacks_sum = xs.iter().zip(&ys).map(|(x, y)| (1.0 - y * (dot(&w, x) + v)).max(0.0)).sum();
    let support_indices = (0..n).filter(|&i| alpha[i] > SVM_ALPHA_TOL).collect();
    log::debug!("svm: n={n} d={d} epochs={epochs}");
    Ok(LinearModel { kind: ClassifierKind::Svm, u: w, v, h: 0.0, c, slacks_sum, support_indices, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::testdata::blobs;
    use crate::classify::{predict, support_count};

    #[test]
    fn two_point_toy_is_max_margin() {
        let s = LabeledSet::new(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![1, -1]).unwrap();
        let m = train_linear_svm(&s, 10.0).unwrap();
        assert!(m.converged);
        assert!((m.u[0] - 1.0).abs() < 1e-6 && m.u[1].abs() < 1e-9 && m.v.abs() < 1e-9, "{:?} {}", m.u, m.v);
        assert_eq!(support_count(&m), 2);
    }

    #[test]
    fn separable_blobs_fit_exactly() {
        for seed in 0..5 {
            let s = blobs(60, 4, 8.0, seed);
            let m = train_linear_svm(&s, 100.0).unwrap();
            assert!(m.converged);
            for (x, &y) in s.vectors().iter().zip(s.labels()) {
                assert_eq!(predict(&m, x).unwrap().1, y);
            }
        }
    }

    #[test]
    fn duplicated_data_same_function_when_separable() {
        // With a non-binding C the optimum is the hard-margin solution, which
        // duplicates cannot move.
        let s = blobs(30, 3, 8.0, 3);
        let mut xs = s.vectors().to_vec();
        xs.extend_from_slice(s.vectors());
        let mut ys = s.labels().to_vec();
        ys.extend_from_slice(s.labels());
        let a = train_linear_svm(&s, 1e3).unwrap();
        let b = train_linear_svm(&LabeledSet::new(xs, ys).unwrap(), 1e3).unwrap();
        for t in blobs(40, 3, 8.0, 77).vectors() {
            assert!((a.score(t).unwrap() - b.score(t).unwrap()).abs() < 1e-6);
        }
    }

    #[test]
    fn labels_invariant_to_scaling_when_separable() {
        let s = blobs(40, 3, 6.0, 5);
        let k = 0.2;
        let scaled = LabeledSet::new(s.vectors().iter().map(|x| x.iter().map(|v| v * k).collect()).collect(), s.labels().to_vec()).unwrap();
        let a = train_linear_svm(&s, 1e4).unwrap();
        let b = train_linear_svm(&scaled, 1e4).unwrap();
        for t in blobs(60, 3, 6.0, 8).vectors() {
            let ts: Vec<f64> = t.iter().map(|v| v * k).collect();
            assert_eq!(predict(&a, t).unwrap().1, predict(&b, &ts).unwrap().1);
        }
    }

    #[test]
    fn overlapping_data_still_terminates() {
        let s = blobs(200, 2, 1.0, 1);
        let m = train_linear_svm(&s, 1.0).unwrap();
        assert!(support_count(&m) <= s.len());
        assert!(m.u.iter().all(|v| v.is_finite()));
    }
}
