use serde::{Deserialize, Serialize};

use super::{CohortError, PatientRecord};

/// Record indices of one leave-one-hospital-out fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub hospital: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// One fold per label in `hospitals`, in the given order. Fold i tests on
/// hospital i and trains on every other record.
pub fn split_by_hospital(
    records: &[PatientRecord],
    hospitals: &[String],
) -> Result<Vec<Fold>, CohortError> {
    let mut folds: Vec<Fold> = hospitals
        .iter()
        .map(|h| Fold {
            hospital: h.clone(),
            train: Vec::new(),
            test: Vec::new(),
        })
        .collect();
    for (i, r) in records.iter().enumerate() {
        let Some(k) = hospitals.iter().position(|h| *h == r.hospital_id) else {
            return Err(CohortError::Partition(format!(
                "patient {} has unknown hospital `{}` (expected one of {})",
                r.patient_id,
                r.hospital_id,
                hospitals.join(", ")
            )));
        };
        for (f, fold) in folds.iter_mut().enumerate() {
            if f == k {
                fold.test.push(i);
            } else {
                fold.train.push(i);
            }
        }
    }
    for fold in &folds {
        if fold.test.is_empty() {
            log::warn!("hospital {} has no patients; its fold has an empty test set", fold.hospital);
        }
    }
    Ok(folds)
}

/// Distinct hospital labels in order of first appearance.
pub fn hospital_labels(records: &[PatientRecord]) -> Vec<String> {
    let mut labels: Vec<String> = Vec::new();
    for r in records {
        if !labels.contains(&r.hospital_id) {
            labels.push(r.hospital_id.clone());
        }
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::Outcome;
    use proptest::prelude::*;

    fn records(assign: &[usize]) -> Vec<PatientRecord> {
        assign
            .iter()
            .enumerate()
            .map(|(i, &h)| PatientRecord {
                patient_id: format!("p{i}"),
                hospital_id: format!("H{}", h + 1),
                static_covariates: vec![],
                series: vec![],
                oxygen_series: vec![],
                outcome: Outcome::Discharged,
                event_time: 0.0,
            })
            .collect()
    }

    fn labels() -> Vec<String> {
        (1..=4).map(|h| format!("H{h}")).collect()
    }

    #[test]
    fn ten_per_hospital() {
        let assign: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let folds = split_by_hospital(&records(&assign), &labels()).unwrap();
        assert_eq!(folds.len(), 4);
        for f in &folds {
            assert_eq!((f.train.len(), f.test.len()), (30, 10));
        }
    }

    #[test]
    fn empty_hospital_and_unknown_label() {
        let folds = split_by_hospital(&records(&[0, 1, 2, 0]), &labels()).unwrap();
        assert!(folds[3].test.is_empty());
        assert_eq!(folds[3].train.len(), 4);
        assert!(matches!(
            split_by_hospital(&records(&[0, 5]), &labels()),
            Err(CohortError::Partition(_))
        ));
    }

    proptest! {
        #[test]
        fn folds_partition_the_cohort(assign in proptest::collection::vec(0usize..4, 0..80)) {
            let recs = records(&assign);
            let folds = split_by_hospital(&recs, &labels()).unwrap();
            let mut seen: Vec<usize> = folds.iter().flat_map(|f| f.test.iter().copied()).collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..recs.len()).collect::<Vec<_>>());
            for f in &folds {
                prop_assert_eq!(f.train.len() + f.test.len(), recs.len());
                prop_assert!(f.test.iter().all(|&i| recs[i].hospital_id == f.hospital));
                prop_assert!(f.train.iter().all(|&i| recs[i].hospital_id != f.hospital));
            }
        }
    }
}
