/// Clip-normalize-bucket parameters for a raw retrieval score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureSpec {
    pub min_raw: f64,
    pub max_raw: f64,
    pub buckets: u32,
}

impl FeatureSpec {
    /// Bounds used for dense-retriever scores in the original setup.
    pub const DENSE_RETRIEVER: FeatureSpec = FeatureSpec { min_raw: 165.0, max_raw: 190.0, buckets: 100 };
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self::DENSE_RETRIEVER
    }
}

/// Integer bucket in `[0, buckets]`: clip to `[min_raw, max_raw]`, min-max
/// normalize, then round half away from zero. A degenerate range maps
/// everything to 0.
pub fn discretize_feature(raw: f64, spec: &FeatureSpec) -> u32 {
    if !(spec.min_raw < spec.max_raw) {
        return 0;
    }
    let clipped = raw.clamp(spec.min_raw, spec.max_raw);
    let norm = (clipped - spec.min_raw) / (spec.max_raw - spec.min_raw);
    (norm * spec.buckets as f64).round() as u32
}

/// How raw scores of one candidate set become feature buckets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FeatureScaling {
    /// Global bounds shared by every query.
    Fixed(FeatureSpec),
    /// Bounds taken from the min and max score within each candidate set.
    PerQuery { buckets: u32 },
}

impl Default for FeatureScaling {
    fn default() -> Self {
        FeatureScaling::PerQuery { buckets: 100 }
    }
}

impl FeatureScaling {
    pub fn discretize_set(&self, raw: &[f64]) -> Vec<u32> {
        let spec = match *self {
            FeatureScaling::Fixed(spec) => spec,
            FeatureScaling::PerQuery { buckets } => {
                let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
                let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                FeatureSpec { min_raw: min, max_raw: max, buckets }
            }
        };
        raw.iter().map(|&r| discretize_feature(r, &spec)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dense_retriever_bounds() {
        let s = FeatureSpec::default();
        assert_eq!(discretize_feature(165.0, &s), 0);
        assert_eq!(discretize_feature(190.0, &s), 100);
        assert_eq!(discretize_feature(177.5, &s), 50);
        assert_eq!(discretize_feature(200.0, &s), 100);
        assert_eq!(discretize_feature(-3.0, &s), 0);
    }

    #[test]
    fn degenerate_range_maps_to_zero() {
        let s = FeatureSpec { min_raw: 5.0, max_raw: 5.0, buckets: 100 };
        assert_eq!(discretize_feature(9.0, &s), 0);
        assert_eq!(FeatureScaling::PerQuery { buckets: 100 }.discretize_set(&[2.0, 2.0]), vec![0, 0]);
    }

    #[test]
    fn per_query_scaling_spans_full_range() {
        let f = FeatureScaling::PerQuery { buckets: 100 }.discretize_set(&[3.0, 1.0, 2.0]);
        assert_eq!(f, vec![100, 0, 50]);
    }

    proptest! {
        #[test]
        fn monotone(a in -1000.0f64..1000.0, b in -1000.0f64..1000.0) {
            let s = FeatureSpec { min_raw: -50.0, max_raw: 70.0, buckets: 100 };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(discretize_feature(lo, &s) <= discretize_feature(hi, &s));
            prop_assert!(discretize_feature(hi, &s) <= 100);
        }
    }
}
