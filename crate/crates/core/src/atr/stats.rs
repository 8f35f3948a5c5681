use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Pearson correlation coefficient, clamped to `[-1, 1]`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "pearson needs two equal-length samples of at least 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateInput("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Percent overlap of the top-k (most temporal) and bottom-k (most static)
/// classes by value with human-labeled sets. Equal values rank the lower
/// class id first in both orders.
pub fn topk_overlap(
    class_values: &[(usize, f64)],
    human_temporal: &BTreeSet<usize>,
    human_static: &BTreeSet<usize>,
    k: usize,
) -> Result<(f64, f64)> {
    if k == 0 || k > class_values.len() {
        return Err(Error::InvalidK {
            k,
            classes: class_values.len(),
        });
    }
    let universe: BTreeSet<usize> = class_values.iter().map(|(c, _)| *c).collect();
    if universe.len() != class_values.len() {
        return Err(Error::DegenerateInput("duplicate class ids".into()));
    }
    if let Some(c) = human_temporal.iter().chain(human_static).find(|c| !universe.contains(c)) {
        return Err(Error::IndexOutOfRange(format!("human-labeled class {c} has no value")));
    }

    let mut descending = class_values.to_vec();
    descending.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut ascending = class_values.to_vec();
    ascending.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

    let overlap = |ranked: &[(usize, f64)], human: &BTreeSet<usize>| {
        let hits = ranked[..k].iter().filter(|(c, _)| human.contains(c)).count();
        hits as f64 / k as f64 * 100.0
    };
    Ok((overlap(&descending, human_temporal), overlap(&ascending, human_static)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_correlations() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(), 1.0);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap(), -1.0);
    }

    #[test]
    fn constant_sample_is_degenerate() {
        assert!(matches!(
            pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0; 4]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    fn values() -> Vec<(usize, f64)> {
        vec![(0, 9.0), (1, 8.0), (2, 7.0), (3, 6.0), (4, 3.0), (5, 2.0), (6, 1.5), (7, 1.0)]
    }

    #[test]
    fn full_and_empty_overlap() {
        let temporal = BTreeSet::from([0, 1]);
        let statik = BTreeSet::from([6, 7]);
        assert_eq!(topk_overlap(&values(), &temporal, &statik, 2).unwrap(), (100.0, 100.0));
        let (t, s) = topk_overlap(&values(), &statik, &temporal, 2).unwrap();
        assert_eq!((t, s), (0.0, 0.0));
    }

    #[test]
    fn quarter_overlap() {
        let temporal = BTreeSet::from([3, 4, 5, 6]);
        let statik = BTreeSet::from([4, 0, 1, 2]);
        assert_eq!(topk_overlap(&values(), &temporal, &statik, 4).unwrap(), (25.0, 25.0));
    }

    #[test]
    fn ties_rank_lower_class_first() {
        let v = vec![(2, 1.0), (0, 1.0), (1, 1.0)];
        let (t, s) = topk_overlap(&v, &BTreeSet::from([0]), &BTreeSet::from([0]), 1).unwrap();
        assert_eq!((t, s), (100.0, 100.0));
    }

    #[test]
    fn k_must_fit() {
        let err = topk_overlap(&values(), &BTreeSet::new(), &BTreeSet::new(), 9).unwrap_err();
        assert!(matches!(err, Error::InvalidK { k: 9, classes: 8 }));
        assert!(topk_overlap(&values(), &BTreeSet::new(), &BTreeSet::new(), 0).is_err());
    }
}
