//! Linear classifiers: the LP-trained minimal complexity machine, a dual
//! coordinate descent SVM, and one-vs-one multiclass voting.

pub mod lp;
mod mcm;
mod ovo;
mod svm;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use lp::{solve_lp, LpProblem, LpSolution, LpStatus};
pub use mcm::{train_mcm, MCM_ACTIVE_TOL};
pub use ovo::{predict_ovo, train_ovo, OvoEnsemble};
pub use svm::{train_linear_svm, SVM_ALPHA_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Mcm,
    Svm,
}

impl ClassifierKind {
    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Mcm => "mcm",
            ClassifierKind::Svm => "svm",
        }
    }
}

/// Feature vectors with labels: `+1/-1` for binary problems, class ids otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    vectors: Vec<Vec<f64>>,
    labels: Vec<i32>,
}

impl LabeledSet {
    pub fn new(vectors: Vec<Vec<f64>>, labels: Vec<i32>) -> Result<LabeledSet> {
        if vectors.len() != labels.len() {
            return Err(Error::LengthMismatch(vectors.len(), labels.len()));
        }
        if vectors.len() < 2 {
            return Err(Error::InvalidParams(format!("need at least 2 samples, got {}", vectors.len())));
        }
        let d = vectors[0].len();
        if let Some(v) = vectors.iter().find(|v| v.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: v.len() });
        }
        if vectors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite feature value".into()));
        }
        Ok(LabeledSet { vectors, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    /// Sorted distinct labels.
    pub fn classes(&self) -> Vec<i32> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    fn check_binary(&self) -> Result<()> {
        if self.labels.iter().any(|&y| y != 1 && y != -1) {
            return Err(Error::InvalidParams("binary labels must be +1 or -1".into()));
        }
        if self.classes().len() < 2 {
            return Err(Error::SingleClass);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub kind: ClassifierKind,
    pub u: Vec<f64>,
    pub v: f64,
    /// MCM margin bound; 0 for SVM.
    pub h: f64,
    pub c: f64,
    pub slacks_sum: f64,
    pub support_indices: Vec<usize>,
    /// False if the SVM hit its epoch cap before the stopping tolerance.
    pub converged: bool,
}

impl LinearModel {
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.u.len() {
            return Err(Error::DimensionMismatch { expected: self.u.len(), got: x.len() });
        }
        Ok(dot(&self.u, x) + self.v)
    }

    /// Serializable form tagged with the (positive, negative) class pair.
    pub fn to_record(&self, class_pair: (i32, i32)) -> ModelRecord {
        ModelRecord {
            kind: self.kind,
            class_pair: [class_pair.0, class_pair.1],
            u: self.u.clone(),
            v: self.v,
            h: self.h,
            c: self.c,
            support_indices: self.support_indices.clone(),
        }
    }
}

/// On-disk JSON shape of one binary model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRecord {
    pub kind: ClassifierKind,
    pub class_pair: [i32; 2],
    pub u: Vec<f64>,
    pub v: f64,
    pub h: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub support_indices: Vec<usize>,
}

impl From<ModelRecord> for LinearModel {
    fn from(r: ModelRecord) -> LinearModel {
        LinearModel {
            kind: r.kind,
            u: r.u,
            v: r.v,
            h: r.h,
            c: r.c,
            slacks_sum: 0.0,
            support_indices: r.support_indices,
            converged: true,
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(score, label)` with label `+1` on an exact zero.
pub fn predict(m: &LinearModel, x: &[f64]) -> Result<(f64, i32)> {
    let s = m.score(x)?;
    Ok((s, if s >= 0.0 { 1 } else { -1 }))
}

pub fn support_count(m: &LinearModel) -> usize {
    m.support_indices.len()
}

pub fn train(kind: ClassifierKind, data: &LabeledSet, c: f64) -> Result<LinearModel> {
    match kind {
        ClassifierKind::Mcm => train_mcm(data, c),
        ClassifierKind::Svm => train_linear_svm(data, c),
    }
}

fn check_c(c: f64) -> Result<()> {
    if c.is_finite() && c > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("C must be positive and finite, got {c}")))
    }
}

#[cfg(test)]
pub(crate) mod testdata {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use super::LabeledSet;

    /// Two isotropic Gaussian clouds centered at `+-sep/2` along every axis.
    pub fn blobs(n: usize, d: usize, sep: f64, seed: u64) -> LabeledSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for i in 0..n {
            let y = if i % 2 == 0 { 1 } else { -1 };
            xs.push((0..d).map(|_| y as f64 * sep / 2.0 + noise.sample(&mut rng)).collect());
            ys.push(y);
        }
        LabeledSet::new(xs, ys).unwrap()
    }
}
