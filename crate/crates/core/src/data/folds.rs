use super::Sample;
use crate::error::{Error, Result};

/// Patient-level partition for one cross-validation fold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
}

impl Fold {
    /// Samples of each part, in input order.
    pub fn select<'a>(&self, samples: &'a [Sample]) -> (Vec<&'a Sample>, Vec<&'a Sample>, Vec<&'a Sample>) {
        let pick = |ids: &[u32]| samples.iter().filter(|s| ids.contains(&s.patient)).collect::<Vec<_>>();
        (pick(&self.train), pick(&self.val), pick(&self.test))
    }
}

/// `k` folds over the distinct patients of `samples`. Consecutive blocks of
/// patients form the test sets; from each fold's remaining patients the last
/// `ceil(val_fraction * n)` (at least one) are held out for validation.
pub fn split_folds(samples: &[Sample], k: usize, val_fraction: f64) -> Result<Vec<Fold>> {
    let mut patients: Vec<u32> = samples.iter().map(|s| s.patient).collect();
    patients.sort_unstable();
    patients.dedup();
    let n = patients.len();
    if k < 2 {
        return Err(Error::config("at least two folds are needed to hold out test patients"));
    }
    if n == 0 || n % k != 0 {
        return Err(Error::config(format!("{n} patients cannot be split into {k} equal folds")));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::config("val_fraction must lie in (0, 1)"));
    }
    let per = n / k;
    let rest = n - per;
    let n_val = ((val_fraction * rest as f64).ceil() as usize).max(1);
    if n_val >= rest {
        return Err(Error::config(format!("{rest} training patients leave none for fitting after validation")));
    }
    let folds: Vec<Fold> = (0..k)
        .map(|i| {
            let test = patients[i * per..(i + 1) * per].to_vec();
            let others: Vec<u32> = patients.iter().copied().filter(|p| !test.contains(p)).collect();
            let (train, val) = others.split_at(rest - n_val);
            Fold { train: train.to_vec(), val: val.to_vec(), test }
        })
        .collect();
    for f in &folds {
        assert!(f.test.iter().all(|p| !f.train.contains(p) && !f.val.contains(p)), "patient leaks into test");
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patients(n: u32) -> Vec<Sample> {
        (0..n)
            .flat_map(|p| {
                (0..2).map(move |i| Sample {
                    height: 1,
                    width: 1,
                    image: vec![0.0],
                    labels: vec![0],
                    patient: p,
                    seed: i,
                })
            })
            .collect()
    }

    #[test]
    fn twenty_patients_five_folds() {
        let folds = split_folds(&patients(20), 5, 0.1).unwrap();
        assert_eq!(folds.len(), 5);
        for f in &folds {
            assert_eq!(f.test.len(), 4);
            assert_eq!(f.train.len() + f.val.len(), 16);
            assert_eq!(f.val.len(), 2);
        }
        let mut all: Vec<u32> = folds.iter().flat_map(|f| f.test.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn desk_split() {
        let folds = split_folds(&patients(4), 4, 0.1).unwrap();
        assert_eq!(folds[0], Fold { train: vec![1, 2], val: vec![3], test: vec![0] });
        let data = patients(4);
        let (tr, va, te) = folds[0].select(&data);
        assert_eq!((tr.len(), va.len(), te.len()), (4, 2, 2));
    }

    #[test]
    fn rejects_bad_splits() {
        assert!(split_folds(&patients(20), 1, 0.1).is_err());
        assert!(split_folds(&patients(10), 3, 0.1).is_err());
        assert!(split_folds(&patients(4), 2, 0.1).is_ok());
        assert!(split_folds(&patients(2), 2, 0.1).is_err());
    }
}
