use rand::seq::SliceRandom;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Stratified train/validation split by true class.
///
/// Validation quotas per class are allocated by largest remainder so the
/// total validation size is `round(val_fraction * N)` and every class count is
/// within one of proportional.
pub fn split(
    ds: &LabeledDataset,
    val_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::arg(format!(
            "validation fraction {val_fraction} outside (0, 1)"
        )));
    }
    let c = ds.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &y) in ds.true_labels().iter().enumerate() {
        by_class[y].push(i);
    }

    let total = (val_fraction * ds.len() as f64).round() as usize;
    let exact: Vec<f64> = by_class
        .iter()
        .map(|v| v.len() as f64 * val_fraction)
        .collect();
    let mut quota: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..c).collect();
    // largest fractional part first, ties by class index
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut missing = total.saturating_sub(quota.iter().sum());
    for &k in order.iter().cycle().take(c * 2) {
        if missing == 0 {
            break;
        }
        if quota[k] < by_class[k].len() {
            quota[k] += 1;
            missing -= 1;
        }
    }

    let mut train = Vec::with_capacity(ds.len() - total);
    let mut val = Vec::with_capacity(total);
    for (k, members) in by_class.iter_mut().enumerate() {
        let mut rng = stream_rng(seed, Stream::Split, k as u64);
        members.shuffle(&mut rng);
        val.extend_from_slice(&members[..quota[k]]);
        train.extend_from_slice(&members[quota[k]..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((ds.subset(&train)?, ds.subset(&val)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;
    use crate::nn::Tensor;

    #[test]
    fn sizes_and_stratification() {
        let ds = make_blobs(10, 100, 4, 2.0, 0).unwrap();
        let (tr, va) = split(&ds, 0.1, 3).unwrap();
        assert_eq!((tr.len(), va.len()), (900, 100));
        assert!(va.class_counts().iter().all(|&k| k == 10));
    }

    #[test]
    fn unbalanced_classes_within_one() {
        let labels: Vec<usize> = (0..97).map(|i| (i * i) % 7).collect();
        let x = Tensor::new(vec![97, 1], (0..97).map(f64::from).collect()).unwrap();
        let ds = LabeledDataset::clean(x, labels, 7).unwrap();
        let (tr, va) = split(&ds, 0.23, 1).unwrap();
        assert_eq!(tr.len() + va.len(), 97);
        assert_eq!(va.len(), (0.23f64 * 97.0).round() as usize);
        for (k, (&n, &v)) in ds.class_counts().iter().zip(&va.class_counts()).enumerate() {
            let ideal = n as f64 * 0.23;
            assert!((v as f64 - ideal).abs() <= 1.0, "class {k}");
        }
        // partition: the single feature is the original index
        let mut seen: Vec<usize> = tr
            .features()
            .data()
            .iter()
            .chain(va.features().data())
            .map(|&v| v as usize)
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..97).collect::<Vec<_>>());
    }

    #[test]
    fn fraction_out_of_range() {
        let ds = make_blobs(2, 5, 1, 1.0, 0).unwrap();
        for f in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(split(&ds, f, 0), Err(Error::Argument(_))));
        }
    }
}
