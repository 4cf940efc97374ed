//! Visual-word codebooks, histogram encoding and weighted SIFT/KAZE fusion.

use std::io::{Read, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::keypoints::{Descriptor, FeatureKind};

const CODEBOOK_MAGIC: &[u8; 4] = b"BVW1";

#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    pub kind: FeatureKind,
    pub centroids: Vec<Vec<f32>>,
    pub seed: u64,
    /// Final k-means objective; not stored on disk.
    pub inertia: Option<f64>,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    /// Index of the nearest centroid; ties go to the lowest index.
    pub fn nearest(&self, v: &[f32]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (j, c) in self.centroids.iter().enumerate() {
            let d: f64 = c.iter().zip(v).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum();
            if d < best.0 {
                best = (d, j);
            }
        }
        best.1
    }

    /// `BVW1`, kind byte, u32 k, u32 d, u64 seed, then k*d little-endian f32.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(CODEBOOK_MAGIC)?;
        w.write_all(&[self.kind.as_byte()])?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for c in &self.centroids {
            for v in c {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Codebook> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CODEBOOK_MAGIC {
            return Err(Error::CodebookFormat("bad magic".into()));
        }
        let mut kind = [0u8; 1];
        r.read_exact(&mut kind)?;
        let kind = FeatureKind::from_byte(kind[0])
            .ok_or_else(|| Error::CodebookFormat(format!("unknown kind byte {}", kind[0])))?;
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let k = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let d = u32::from_le_bytes(b4) as usize;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let seed = u64::from_le_bytes(b8);
        if d != kind.descriptor_len() || k < 2 {
            return Err(Error::CodebookFormat(format!("k={k} d={d} for {}", kind.name())));
        }
        let mut centroids = Vec::with_capacity(k);
        for _ in 0..k {
            let mut c = Vec::with_capacity(d);
            for _ in 0..d {
                r.read_exact(&mut b4)?;
                c.push(f32::from_le_bytes(b4));
            }
            centroids.push(c);
        }
        Ok(Codebook { kind, centroids, seed, inertia: None })
    }
}

/// Result of a k-means run on arbitrary-dimension points.
#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Objective after every assignment step.
    pub inertia_history: Vec<f64>,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_center(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_seeding(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if !(total > 0.0) {
            return Err(Error::TooFewDescriptors { got: centers.len(), need: k });
        }
        let pick = WeightedIndex::new(&d2)
            .map_err(|e| Error::InvalidParams(format!("k-means++ weights: {e}")))?
            .sample(rng);
        centers.push(points[pick].clone());
        let newest = centers.last().unwrap();
        d2.par_iter_mut().zip(points.par_iter()).for_each(|(d, p)| *d = d.min(sq_dist(p, newest)));
    }
    Ok(centers)
}

/// k-means++ seeded Lloyd iterations until the assignment stops changing or
/// `max_iters` assignment steps have run. Empty clusters are re-seeded at the
/// point farthest from its own centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iters: usize) -> Result<KMeans> {
    if k < 2 {
        return Err(Error::InvalidParams(format!("codebook size {k} < 2")));
    }
    if points.len() < k {
        return Err(Error::TooFewDescriptors { got: points.len(), need: k });
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_seeding(points, k, &mut rng)?;
    let mut assignments = vec![usize::MAX; points.len()];
    let mut history = Vec::new();

    for _ in 0..max_iters.max(1) {
        let nearest: Vec<(usize, f64)> = points.par_iter().map(|p| nearest_center(p, &centers)).collect();
        let changed = nearest.iter().zip(&assignments).any(|((j, _), a)| j != a);
        let inertia: f64 = nearest.iter().map(|(_, d)| d).sum();
        if let Some(&prev) = history.last() {
            debug_assert!(inertia <= prev * (1.0 + 1e-12) + 1e-300, "k-means inertia rose {prev} -> {inertia}");
        }
        history.push(inertia);
        assignments.iter_mut().zip(&nearest).for_each(|(a, (j, _))| *a = *j);
        if !changed {
            break;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for j in 0..k {
            if counts[j] > 0 {
                let inv = 1.0 / counts[j] as f64;
                centers[j] = sums[j].iter().map(|s| s * inv).collect();
            }
        }
        let mut taken = vec![false; points.len()];
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let far = points
                .iter()
                .enumerate()
                .filter(|(i, _)| !taken[*i])
                .map(|(i, p)| (i, sq_dist(p, &centers[assignments[i]])))
                .fold((usize::MAX, -1.0), |best, (i, d)| if d > best.1 { (i, d) } else { best });
            if far.0 != usize::MAX {
                taken[far.0] = true;
                centers[j] = points[far.0].clone();
            }
        }
    }

    // objective for the centroids actually returned
    let nearest: Vec<(usize, f64)> = points.par_iter().map(|p| nearest_center(p, &centers)).collect();
    let inertia: f64 = nearest.iter().map(|(_, d)| d).sum();
    if nearest.iter().zip(&assignments).any(|((j, _), a)| j != a) {
        history.push(inertia);
        assignments = nearest.iter().map(|(j, _)| *j).collect();
    }
    Ok(KMeans { centroids: centers, assignments, inertia, inertia_history: history })
}

/// Codebook over descriptors of a single kind.
pub fn build_codebook(descriptors: &[Descriptor], k: usize, seed: u64, max_iters: usize) -> Result<Codebook> {
    build_codebook_traced(descriptors, k, seed, max_iters).map(|(cb, _)| cb)
}

pub fn build_codebook_traced(
    descriptors: &[Descriptor],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<(Codebook, KMeans)> {
    let kind = descriptors
        .first()
        .map(|d| d.keypoint.kind)
        .ok_or(Error::TooFewDescriptors { got: 0, need: k })?;
    if descriptors.iter().any(|d| d.keypoint.kind != kind) {
        return Err(Error::KindMismatch("codebook descriptors must share one kind"));
    }
    let points: Vec<Vec<f64>> = descriptors
        .iter()
        .map(|d| d.values.iter().map(|&v| v as f64).collect())
        .collect();
    if points[0].len() != kind.descriptor_len() {
        return Err(Error::DimensionMismatch { expected: kind.descriptor_len(), got: points[0].len() });
    }
    let km = kmeans(&points, k, seed, max_iters)?;
    let centroids = km
        .centroids
        .iter()
        .map(|c| c.iter().map(|&v| v as f32).collect())
        .collect();
    Ok((Codebook { kind, centroids, seed, inertia: Some(km.inertia) }, km))
}

/// L1-normalized visual-word counts (all zero when there were no descriptors).
#[derive(Clone, Debug, PartialEq)]
pub struct WordHistogram {
    pub kind: FeatureKind,
    pub values: Vec<f64>,
}

pub fn encode(descriptors: &[Descriptor], cb: &Codebook) -> Result<WordHistogram> {
    if descriptors.iter().any(|d| d.keypoint.kind != cb.kind) {
        return Err(Error::KindMismatch("codebook kind"));
    }
    let mut values = vec![0.0; cb.len()];
    for d in descriptors {
        values[cb.nearest(&d.values)] += 1.0;
    }
    if !descriptors.is_empty() {
        let n = descriptors.len() as f64;
        values.iter_mut().for_each(|v| *v /= n);
    }
    Ok(WordHistogram { kind: cb.kind, values })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusedVector {
    pub values: Vec<f64>,
    pub weight: f64,
}

/// `[w * h_sift, (1 - w) * h_kaze]`.
pub fn fuse(h_sift: &WordHistogram, h_kaze: &WordHistogram, w: f64) -> Result<FusedVector> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::InvalidWeight(w));
    }
    if h_sift.kind != FeatureKind::Sift || h_kaze.kind != FeatureKind::Kaze {
        return Err(Error::KindMismatch("fuse expects (sift, kaze) histograms"));
    }
    let values = h_sift
        .values
        .iter()
        .map(|v| w * v)
        .chain(h_kaze.values.iter().map(|v| (1.0 - w) * v))
        .collect();
    Ok(FusedVector { values, weight: w })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keypoints::Keypoint;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    fn desc(kind: FeatureKind, values: Vec<f32>) -> Descriptor {
        Descriptor { keypoint: Keypoint { x: 0.0, y: 0.0, sigma: 1.0, response: 1.0, kind }, values }
    }

    fn random_descs(n: usize, seed: u64) -> Vec<Descriptor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| desc(FeatureKind::Kaze, (0..64).map(|_| rng.random::<f32>()).collect())).collect()
    }

    #[test]
    fn exact_fit_when_k_equals_n() {
        let descs = random_descs(5, 1);
        let (cb, km) = build_codebook_traced(&descs, 5, 7, 50).unwrap();
        assert_eq!(km.inertia, 0.0);
        let mut got = cb.centroids.clone();
        let mut want: Vec<_> = descs.iter().map(|d| d.values.clone()).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);
    }

    #[test]
    fn two_separated_pairs() {
        let pts = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![10.0, 0.0], vec![10.0, 1.0]];
        // oracle: both 2-2 partitions that keep pairs together; the best has inertia 1.0
        let km = kmeans(&pts, 2, 3, 100).unwrap();
        let mut cents = km.centroids.clone();
        cents.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(cents, vec![vec![0.0, 0.5], vec![10.0, 0.5]]);
        assert!((km.inertia - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_for_seed() {
        let descs = random_descs(300, 2);
        let a = build_codebook(&descs, 8, 42, 100).unwrap();
        let b = build_codebook(&descs, 8, 42, 100).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_descriptors() {
        let descs = random_descs(3, 4);
        assert!(matches!(build_codebook(&descs, 4, 0, 10), Err(Error::TooFewDescriptors { .. })));
        let dup = vec![descs[0].clone(), descs[0].clone(), descs[0].clone()];
        assert!(matches!(build_codebook(&dup, 2, 0, 10), Err(Error::TooFewDescriptors { .. })));
    }

    #[test]
    fn empty_clusters_are_reseeded() {
        let mut pts: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 4) as f64 * 0.01]).collect();
        pts.extend((0..4).map(|i| vec![100.0 + i as f64]));
        let km = kmeans(&pts, 6, 5, 100).unwrap();
        for w in km.inertia_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        for i in 0..6 {
            for j in i + 1..6 {
                assert_ne!(km.centroids[i], km.centroids[j]);
            }
        }
    }

    #[test]
    fn encode_counts() {
        let cb = Codebook {
            kind: FeatureKind::Kaze,
            centroids: vec![vec![0.0; 64], vec![1.0; 64], vec![2.0; 64]],
            seed: 0,
            inertia: None,
        };
        let h = encode(&[desc(FeatureKind::Kaze, vec![1.0; 64])], &cb).unwrap();
        assert_eq!(h.values, vec![0.0, 1.0, 0.0]);
        assert_eq!(encode(&[], &cb).unwrap().values, vec![0.0; 3]);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let descs: Vec<_> = (0..7)
            .map(|_| desc(FeatureKind::Kaze, (0..64).map(|_| rng.random_range(-0.5f32..2.5)).collect()))
            .collect();
        // oracle: explicit distance table
        let mut counts = [0usize; 3];
        for d in &descs {
            let dists: Vec<f64> = cb
                .centroids
                .iter()
                .map(|c| c.iter().zip(&d.values).map(|(a, b)| ((a - b) as f64).powi(2)).sum())
                .collect();
            let j = (0..3).min_by(|&a, &b| dists[a].partial_cmp(&dists[b]).unwrap()).unwrap();
            counts[j] += 1;
        }
        let h = encode(&descs, &cb).unwrap();
        for j in 0..3 {
            assert!((h.values[j] - counts[j] as f64 / 7.0).abs() < 1e-15);
        }
        assert!((h.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(matches!(encode(&[desc(FeatureKind::Sift, vec![0.0; 128])], &cb), Err(Error::KindMismatch(_))));
    }

    #[test]
    fn fuse_weights() {
        let hs = WordHistogram { kind: FeatureKind::Sift, values: vec![0.25, 0.75] };
        let hk = WordHistogram { kind: FeatureKind::Kaze, values: vec![0.5, 0.1, 0.4] };
        let f = fuse(&hs, &hk, 1.0).unwrap();
        assert_eq!(&f.values[..2], &hs.values[..]);
        assert!(f.values[2..].iter().all(|&v| v == 0.0));
        let f = fuse(&hs, &hk, 0.5).unwrap();
        assert!((f.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let f = fuse(&hs, &hk, 0.3).unwrap();
        let want = [0.3 * 0.25, 0.3 * 0.75, 0.7 * 0.5, 0.7 * 0.1, 0.7 * 0.4];
        for (a, b) in f.values.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(fuse(&hs, &hk, 1.2), Err(Error::InvalidWeight(_))));
        assert!(fuse(&hk, &hs, 0.5).is_err());
    }

    #[test]
    fn codebook_file_roundtrip() {
        let descs = random_descs(50, 5);
        let cb = build_codebook(&descs, 4, 9, 30).unwrap();
        let mut buf = Vec::new();
        cb.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"BVW1");
        assert_eq!(buf.len(), 4 + 1 + 4 + 4 + 8 + 4 * 64 * 4);
        let back = Codebook::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.centroids, cb.centroids);
        assert_eq!((back.kind, back.seed), (cb.kind, cb.seed));
        buf[0] = b'X';
        assert!(Codebook::read_from(&mut buf.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn encode_is_permutation_invariant(seed in 0u64..1000, rot in 0usize..20) {
            let descs = random_descs(20, seed);
            let cb = build_codebook(&descs[..10], 3, seed, 20).unwrap();
            let mut shuffled = descs.clone();
            shuffled.rotate_left(rot);
            shuffled.reverse();
            prop_assert_eq!(encode(&descs, &cb).unwrap(), encode(&shuffled, &cb).unwrap());
        }

        #[test]
        fn fuse_is_linear(a in proptest::collection::vec(0.0f64..1.0, 3), b in proptest::collection::vec(0.0f64..1.0, 2), w in 0.0f64..1.0, s in 0.1f64..3.0) {
            let hs = WordHistogram { kind: FeatureKind::Sift, values: a.clone() };
            let hk = WordHistogram { kind: FeatureKind::Kaze, values: b.clone() };
            let hs2 = WordHistogram { kind: FeatureKind::Sift, values: a.iter().map(|v| v * s).collect() };
            let f1 = fuse(&hs, &hk, w).unwrap();
            let f2 = fuse(&hs2, &hk, w).unwrap();
            for i in 0..3 {
                prop_assert!((f2.values[i] - s * f1.values[i]).abs() < 1e-12);
            }
            prop_assert_eq!(&f1.values[3..], &f2.values[3..]);
        }
    }
}
