use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{predict, train, ClassifierKind, LabeledSet, LinearModel, ModelRecord};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct OvoEnsemble {
    pub kind: ClassifierKind,
    pub class_ids: Vec<i32>,
    /// Keyed by `(i, j)` with `i < j`; class `i` is the positive side.
    pub models: BTreeMap<(i32, i32), LinearModel>,
}

impl OvoEnsemble {
    pub fn support_vectors_total(&self) -> usize {
        self.models.values().map(|m| m.support_indices.len()).sum()
    }

    pub fn records(&self) -> Vec<ModelRecord> {
        self.models.iter().map(|(&p, m)| m.to_record(p)).collect()
    }
}

/// One binary model per unordered class pair, trained in parallel.
/// Support indices refer to positions in `data`.
pub fn train_ovo(data: &LabeledSet, kind: ClassifierKind, c: f64) -> Result<OvoEnsemble> {
    let class_ids = data.classes();
    if class_ids.len() < 2 {
        return Err(Error::SingleClass);
    }
    let pairs: Vec<(i32, i32)> = class_ids
        .iter()
        .enumerate()
        .flat_map(|(a, &i)| class_ids[a + 1..].iter().map(move |&j| (i, j)))
        .collect();
    let trained: Vec<Result<((i32, i32), LinearModel)>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let idx: Vec<usize> = (0..data.len()).filter(|&k| data.labels()[k] == i || data.labels()[k] == j).collect();
            let xs = idx.iter().map(|&k| data.vectors()[k].clone()).collect();
            let ys = idx.iter().map(|&k| if data.labels()[k] == i { 1 } else { -1 }).collect();
            let mut m = train(kind, &LabeledSet::new(xs, ys)?, c)?;
            m.support_indices = m.support_indices.iter().map(|&s| idx[s]).collect();
            Ok(((i, j), m))
        })
        .collect();
    let models = trained.into_iter().collect::<Result<BTreeMap<_, _>>>()?;
    Ok(OvoEnsemble { kind, class_ids, models })
}

/// Majority vote; ties go to the larger summed |score| of won duels, then the
/// lowest class id.
pub fn predict_ovo(e: &OvoEnsemble, x: &[f64]) -> Result<i32> {
    let mut tally: BTreeMap<i32, (usize, f64)> = e.class_ids.iter().map(|&c| (c, (0, 0.0))).collect();
    for (&(i, j), m) in &e.models {
        let (s, label) = predict(m, x)?;
        let winner = if label > 0 { i } else { j };
        let t = tally.get_mut(&winner).expect("pair classes are ensemble classes");
        t.0 += 1;
        t.1 += s.abs();
    }
    let mut best: Option<(i32, usize, f64)> = None;
    for (&c, &(votes, margin)) in &tally {
        let better = match best {
            None => true,
            Some((_, bv, bm)) => votes > bv || (votes == bv && margin > bm),
        };
        if better {
            best = Some((c, votes, margin));
        }
    }
    best.map(|b| b.0).ok_or(Error::SingleClass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn clusters(k: usize, per: usize, seed: u64) -> LabeledSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for c in 0..k {
            let ang = c as f64 * std::f64::consts::TAU / k as f64;
            for _ in 0..per {
                xs.push(vec![5.0 * ang.cos() + noise.sample(&mut rng), 5.0 * ang.sin() + noise.sample(&mut rng)]);
                ys.push(c as i32 * 10);
            }
        }
        LabeledSet::new(xs, ys).unwrap()
    }

    fn constant(v: f64) -> LinearModel {
        LinearModel { kind: ClassifierKind::Svm, u: vec![0.0], v, h: 0.0, c: 1.0, slacks_sum: 0.0, support_indices: vec![], converged: true }
    }

    #[test]
    fn model_counts() {
        for (k, want) in [(2, 1), (4, 6)] {
            let e = train_ovo(&clusters(k, 5, 1), ClassifierKind::Svm, 1.0).unwrap();
            assert_eq!(e.models.len(), want);
            assert!(e.models.keys().all(|(i, j)| i < j));
        }
        let one = LabeledSet::new(vec![vec![0.0], vec![1.0]], vec![3, 3]).unwrap();
        assert!(matches!(train_ovo(&one, ClassifierKind::Mcm, 1.0), Err(Error::SingleClass)));
    }

    #[test]
    fn separable_clusters_are_recovered() {
        let data = clusters(3, 12, 4);
        for kind in [ClassifierKind::Mcm, ClassifierKind::Svm] {
            let e = train_ovo(&data, kind, 10.0).unwrap();
            for (x, &y) in data.vectors().iter().zip(data.labels()) {
                assert_eq!(predict_ovo(&e, x).unwrap(), y, "{kind:?}");
            }
        }
    }

    #[test]
    fn two_class_matches_binary_predict() {
        let data = clusters(2, 10, 2);
        let e = train_ovo(&data, ClassifierKind::Svm, 1.0).unwrap();
        let m = &e.models[&(0, 10)];
        for x in data.vectors() {
            let want = if predict(m, x).unwrap().1 > 0 { 0 } else { 10 };
            assert_eq!(predict_ovo(&e, x).unwrap(), want);
        }
    }

    #[test]
    fn cyclic_tie_uses_margin_sum() {
        // 0 beats 1 by 0.5, 1 beats 2 by 1.0, 2 beats 0 by 2.0: one vote each.
        let mut models = BTreeMap::new();
        models.insert((0, 1), constant(0.5));
        models.insert((0, 2), constant(-2.0));
        models.insert((1, 2), constant(1.0));
        let e = OvoEnsemble { kind: ClassifierKind::Svm, class_ids: vec![0, 1, 2], models };
        assert_eq!(predict_ovo(&e, &[0.0]).unwrap(), 2);

        // exact margin tie falls through to the lowest id
        let mut models = BTreeMap::new();
        models.insert((0, 1), constant(1.0));
        models.insert((0, 2), constant(-1.0));
        models.insert((1, 2), constant(1.0));
        let e = OvoEnsemble { kind: ClassifierKind::Svm, class_ids: vec![0, 1, 2], models };
        assert_eq!(predict_ovo(&e, &[0.0]).unwrap(), 0);
    }

    #[test]
    fn support_indices_refer_to_full_set() {
        let data = clusters(3, 8, 6);
        let e = train_ovo(&data, ClassifierKind::Mcm, 1.0).unwrap();
        for (&(i, j), m) in &e.models {
            assert!(m.support_indices.iter().all(|&s| data.labels()[s] == i || data.labels()[s] == j));
        }
    }
}
