use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::synth::DatasetManifest;

/// Case-atomic train/validation partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitPlan {
    pub train: BTreeSet<String>,
    pub validation: BTreeSet<String>,
    /// Target train:validation image ratio.
    pub ratio: usize,
}

impl SplitPlan {
    pub fn is_validation(&self, case_id: &str) -> bool {
        self.validation.contains(case_id)
    }
}

/// Greedy split of one group's cases: visit cases in seeded random order
/// and send a case to validation whenever that brings the validation image
/// count closer to `total / (ratio + 1)`. At least one case lands on each
/// side. Returns the validation cases.
pub fn greedy_validation(cases: &[(String, usize)], ratio: usize, seed: u64) -> Result<Vec<String>> {
    if cases.len() < 2 {
        return Err(Error::Split(format!(
            "{} case(s) cannot be split case-atomically",
            cases.len()
        )));
    }
    let mut order: Vec<&(String, usize)> = cases.iter().collect();
    order.sort();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let total: usize = cases.iter().map(|c| c.1).sum();
    let target = total as f64 / (ratio as f64 + 1.0);
    let mut val = Vec::new();
    let mut val_count = 0usize;
    for (id, n) in &order {
        let now = (val_count as f64 - target).abs();
        let then = ((val_count + n) as f64 - target).abs();
        if then < now && val.len() + 1 < cases.len() {
            val.push(id.clone());
            val_count += n;
        }
    }
    if val.is_empty() {
        let smallest = order.iter().min_by_key(|c| c.1).expect("two or more cases");
        val.push(smallest.0.clone());
    }
    Ok(val)
}

/// Splits each label's cases separately (see [`greedy_validation`]) so
/// every category is represented in validation. A case never straddles
/// the split.
pub fn split_by_case(manifest: &DatasetManifest, ratio: usize, seed: u64) -> Result<SplitPlan> {
    if ratio == 0 {
        return Err(Error::Split("ratio must be at least 1".into()));
    }
    let mut groups: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    let mut case_label: BTreeMap<&str, &str> = BTreeMap::new();
    for row in &manifest.rows {
        if let Some(prev) = case_label.insert(&row.case_id, &row.label) {
            if prev != row.label {
                return Err(Error::Split(format!(
                    "case {} carries labels {prev} and {}",
                    row.case_id, row.label
                )));
            }
        }
        *groups.entry(&row.label).or_default().entry(&row.case_id).or_default() += 1;
    }
    let mut train = BTreeSet::new();
    let mut validation = BTreeSet::new();
    for (i, (label, cases)) in groups.iter().enumerate() {
        let list: Vec<(String, usize)> = cases.iter().map(|(c, n)| (c.to_string(), *n)).collect();
        let val = greedy_validation(&list, ratio, seed.wrapping_add(i as u64))
            .map_err(|e| Error::Split(format!("label {label}: {e}")))?;
        for (c, _) in list {
            if val.contains(&c) {
                validation.insert(c);
            } else {
                train.insert(c);
            }
        }
    }
    Ok(SplitPlan {
        train,
        validation,
        ratio,
    })
}
