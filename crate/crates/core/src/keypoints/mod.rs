//! Scale-space extrema, descriptors, and response-ranked keypoint selection.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod describe;
mod detect;

pub use describe::{describe, describe_all, describe_with, DescribeOptions, KAZE_DESCRIPTOR_LEN, SIFT_DESCRIPTOR_LEN};
pub use detect::{detect_kaze, detect_sift, hessian_response};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Sift,
    Kaze,
}

impl FeatureKind {
    pub fn descriptor_len(self) -> usize {
        match self {
            FeatureKind::Sift => SIFT_DESCRIPTOR_LEN,
            FeatureKind::Kaze => KAZE_DESCRIPTOR_LEN,
        }
    }

    pub fn as_byte(self) -> u8 {
        match self {
            FeatureKind::Sift => 0,
            FeatureKind::Kaze => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(FeatureKind::Sift),
            1 => Some(FeatureKind::Kaze),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Sift => "sift",
            FeatureKind::Kaze => "kaze",
        }
    }
}

/// A detected interest point in original-image coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    pub sigma: f32,
    pub response: f32,
    pub kind: FeatureKind,
}

/// Descending response, then `(y, x, sigma)` ascending.
pub fn response_order(a: &Keypoint, b: &Keypoint) -> Ordering {
    b.response
        .total_cmp(&a.response)
        .then(a.y.total_cmp(&b.y))
        .then(a.x.total_cmp(&b.x))
        .then(a.sigma.total_cmp(&b.sigma))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Descriptor {
    pub keypoint: Keypoint,
    pub values: Vec<f32>,
}

/// The `ceil(len * n_percent / 100)` strongest keypoints, in response order.
pub fn top_responses(kps: &[Keypoint], n_percent: f64) -> Result<Vec<Keypoint>> {
    if !(n_percent > 0.0 && n_percent <= 100.0) {
        return Err(Error::InvalidPercent(n_percent));
    }
    let mut sorted = kps.to_vec();
    sorted.sort_by(response_order);
    // the epsilon absorbs products like 7 * 10 / 100 = 0.7000000000000001
    let keep = (kps.len() as f64 * n_percent / 100.0 - 1e-9).ceil().max(0.0) as usize;
    sorted.truncate(keep.min(kps.len()));
    Ok(sorted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kp(x: f32, y: f32, response: f32) -> Keypoint {
        Keypoint { x, y, sigma: 2.0, response, kind: FeatureKind::Kaze }
    }

    #[test]
    fn top_half_of_ten() {
        let kps: Vec<_> = (0..10).map(|i| kp(i as f32, 0.0, i as f32)).collect();
        let top = top_responses(&kps, 50.0).unwrap();
        let r: Vec<f32> = top.iter().map(|k| k.response).collect();
        assert_eq!(r, vec![9.0, 8.0, 7.0, 6.0, 5.0]);
        assert_eq!(top_responses(&kps, 100.0).unwrap().len(), 10);
    }

    #[test]
    fn ties_use_position_order() {
        let kps = vec![kp(5.0, 1.0, 1.0), kp(2.0, 3.0, 1.0), kp(9.0, 1.0, 1.0)];
        let top = top_responses(&kps, 34.0).unwrap();
        // ceil(3 * 0.34) = 2, tie broken by y then x
        assert_eq!(top, vec![kps[0], kps[2]]);
    }

    #[test]
    fn percent_range() {
        assert!(top_responses(&[], 0.0).is_err());
        assert!(top_responses(&[], 100.5).is_err());
        assert!(top_responses(&[], 10.0).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn top_sets_are_nested(
            resp in proptest::collection::vec(0u8..6, 1..40),
            a in 1.0f64..100.0,
            b in 1.0f64..100.0,
        ) {
            let kps: Vec<_> = resp.iter().enumerate().map(|(i, r)| kp((i % 7) as f32, (i / 7) as f32, *r as f32)).collect();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let small = top_responses(&kps, lo).unwrap();
            let large = top_responses(&kps, hi).unwrap();
            prop_assert!(small.len() <= large.len());
            prop_assert_eq!(&large[..small.len()], &small[..]);
        }
    }
}
