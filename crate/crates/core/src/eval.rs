//! Dice overlap restricted to acquired slices and paired comparisons.

use std::collections::BTreeMap;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::volume::{Axis, ConfidenceMask, LabelMap, SliceAcquisitionPattern};

/// Mean, spread and robust statistics of a set of scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator); 0 for a single value.
    pub sd: f64,
    pub median: f64,
    /// Median absolute deviation from the median, unscaled.
    pub mad: f64,
}

fn median_of(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl Summary {
    /// `None` for an empty slice.
    pub fn from_values(values: &[f64]) -> Option<Summary> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let median = median_of(values.to_vec());
        let mad = median_of(values.iter().map(|v| (v - median).abs()).collect());
        Some(Summary {
            count: n,
            mean,
            sd,
            median,
            mad,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelDice {
    /// `None` when the label is absent from both maps.
    pub dice: Option<f64>,
    pub count_a: usize,
    pub count_b: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiceReport {
    pub per_label: BTreeMap<u32, LabelDice>,
    /// Over labels with a defined score; `None` if there are none.
    pub summary: Option<Summary>,
}

impl DiceReport {
    pub fn get(&self, label: u32) -> Option<f64> {
        self.per_label.get(&label).and_then(|d| d.dice)
    }

    pub fn defined_scores(&self) -> Vec<f64> {
        self.per_label.values().filter_map(|d| d.dice).collect()
    }

    pub fn mean(&self) -> Option<f64> {
        self.summary.map(|s| s.mean)
    }
}

/// Per-label Dice `2|A ∩ B| / (|A| + |B|)`, counting only voxels on the
/// slices of `restrict` when given.
pub fn dice(
    a: &LabelMap,
    b: &LabelMap,
    labels: &[u32],
    restrict: Option<&SliceAcquisitionPattern>,
) -> Result<DiceReport> {
    if a.dims() != b.dims() {
        return Err(Error::invalid(format!(
            "label maps differ in dims: {} vs {}",
            a.dims(),
            b.dims()
        )));
    }
    if labels.is_empty() {
        return Err(Error::invalid("no labels to score"));
    }
    let dims = a.dims();
    let voxels: Vec<usize> = match restrict {
        Some(p) => {
            p.validate_for(dims)?;
            p.indices()
                .iter()
                .flat_map(|&s| dims.slice_indices(p.axis(), s).collect::<Vec<_>>())
                .collect()
        }
        None => (0..dims.len()).collect(),
    };
    // (|A|, |B|, |A ∩ B|) per requested label
    let mut counts: BTreeMap<u32, (usize, usize, usize)> = labels.iter().map(|&l| (l, (0, 0, 0))).collect();
    let (la, lb) = (a.labels(), b.labels());
    for i in voxels {
        let (x, y) = (la[i], lb[i]);
        if let Some(c) = counts.get_mut(&x) {
            c.0 += 1;
            if x == y {
                c.2 += 1;
            }
        }
        if let Some(c) = counts.get_mut(&y) {
            c.1 += 1;
        }
    }
    let per_label: BTreeMap<u32, LabelDice> = counts
        .into_iter()
        .map(|(l, (na, nb, both))| {
            let dice = (na + nb > 0).then(|| 2.0 * both as f64 / (na + nb) as f64);
            (
                l,
                LabelDice {
                    dice,
                    count_a: na,
                    count_b: nb,
                },
            )
        })
        .collect();
    let scores: Vec<f64> = per_label.values().filter_map(|d| d.dice).collect();
    Ok(DiceReport {
        summary: Summary::from_values(&scores),
        per_label,
    })
}

/// Slices whose mean mask weight is at least `threshold` count as acquired.
pub fn pattern_from_mask(
    mask: &ConfidenceMask,
    axis: Axis,
    threshold: f64,
) -> Result<SliceAcquisitionPattern> {
    let dims = mask.dims();
    let w = mask.weights();
    let plane = dims.slice_len(axis) as f64;
    let indices: Vec<usize> = (0..dims.extent(axis))
        .filter(|&s| {
            let total: f64 = dims.slice_indices(axis, s).map(|i| w[i] as f64).sum();
            total / plane >= threshold
        })
        .collect();
    if indices.is_empty() {
        return Err(Error::DegenerateMask(format!(
            "no {axis} slice reaches mean weight {threshold}"
        )));
    }
    SliceAcquisitionPattern::new(axis, indices)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    /// Two-sided.
    pub p: f64,
    pub df: usize,
}

/// One-sample t test of the paired differences against zero.
pub fn paired_t_test(diffs: &[f64]) -> Result<TTest> {
    let n = diffs.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "t test needs at least 2 differences, got {n}"
        )));
    }
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::invalid("non-finite difference"));
    }
    let s = Summary::from_values(diffs).expect("non-empty");
    let df = n - 1;
    // exact test: rounding in the mean must not turn constant data into a
    // finite t
    if diffs.iter().all(|&d| d == diffs[0]) {
        return Ok(if diffs[0] == 0.0 {
            TTest { t: 0.0, p: 1.0, df }
        } else {
            TTest {
                t: f64::INFINITY.copysign(diffs[0]),
                p: 0.0,
                df,
            }
        });
    }
    let t = s.mean / (s.sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::invalid(e.to_string()))?;
    // survival function directly, to keep precision in the far tail
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest { t, p, df })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Improvement {
    Fraction(f64),
    /// Baseline already at or above the reference maximum.
    Excluded,
}

/// Per subject, `(a - b) / (dice_max - b)`: how much of the remaining gap to
/// `dice_max` method `a` closes over baseline `b`.
pub fn improvement_fraction(a: &[f64], b: &[f64], dice_max: f64) -> Result<Vec<Improvement>> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "score lists differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&a, &b)| {
            if b < dice_max {
                Improvement::Fraction((a - b) / (dice_max - b))
            } else {
                Improvement::Excluded
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims;

    fn cube_at(dims: Dims, x0: usize) -> LabelMap {
        let mut l = vec![0u32; dims.len()];
        for z in 0..2 {
            for y in 0..2 {
                for x in x0..x0 + 2 {
                    l[dims.index(x, y, z)] = 1;
                }
            }
        }
        LabelMap::new(dims, l).unwrap()
    }

    #[test]
    fn shifted_cube_is_half() {
        let d = Dims::cube(4);
        let r = dice(&cube_at(d, 0), &cube_at(d, 1), &[1], None).unwrap();
        assert_eq!(r.get(1), Some(0.5));
        assert_eq!(r.per_label[&1].count_a, 8);
    }

    #[test]
    fn identical_disjoint_and_absent() {
        let d = Dims::cube(4);
        let a = cube_at(d, 0);
        let b = cube_at(d, 2);
        let r = dice(&a, &a, &[1, 7], None).unwrap();
        assert_eq!(r.get(1), Some(1.0));
        assert_eq!(r.get(7), None);
        assert_eq!(r.summary.unwrap().count, 1);
        assert_eq!(dice(&a, &b, &[1], None).unwrap().get(1), Some(0.0));
        assert!(dice(
            &a,
            &LabelMap::new(Dims::cube(3), vec![0; 27]).unwrap(),
            &[1],
            None
        )
        .is_err());
        assert!(dice(&a, &a, &[], None).is_err());
    }

    #[test]
    fn restriction_counts_only_listed_slices() {
        let d = Dims::cube(4);
        let a = cube_at(d, 0);
        let p = SliceAcquisitionPattern::new(Axis::Z, vec![1, 3]).unwrap();
        let r = dice(&a, &a, &[1], Some(&p)).unwrap();
        assert_eq!(r.per_label[&1].count_a, 4);
    }

    #[test]
    fn summary_statistics() {
        let s = Summary::from_values(&[1.0, 2.0, 4.0, 10.0]).unwrap();
        assert_eq!(s.mean, 4.25);
        assert_eq!(s.median, 3.0);
        // deviations 2, 1, 1, 7
        assert_eq!(s.mad, 1.5);
        assert!((s.sd - (48.75f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!(Summary::from_values(&[]).is_none());
    }

    #[test]
    fn t_test_edge_cases() {
        let r = paired_t_test(&[1.0, -1.0]).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
        let r = paired_t_test(&[0.0; 5]).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
        let r = paired_t_test(&[0.2; 3]).unwrap();
        assert_eq!((r.t, r.p), (f64::INFINITY, 0.0));
        assert!(paired_t_test(&[1.0]).is_err());
        let r = paired_t_test(&[0.5, 0.7, 0.9, 1.1]).unwrap();
        assert!((r.t - 6.196_773_353_931_867).abs() < 1e-9);
        assert!((r.p - 0.008_466_162_065_371_739).abs() < 1e-9, "{}", r.p);
    }

    #[test]
    fn improvement_examples() {
        let r = improvement_fraction(&[0.7, 0.9, 0.75, 0.5], &[0.7, 0.6, 0.7, 0.95], 0.9).unwrap();
        assert_eq!(r[0], Improvement::Fraction(0.0));
        assert_eq!(r[1], Improvement::Fraction(1.0));
        match r[2] {
            Improvement::Fraction(f) => assert!((f - 0.25).abs() < 1e-12),
            Improvement::Excluded => panic!(),
        }
        assert_eq!(r[3], Improvement::Excluded);
    }
}
