use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BenchmarkItem, EvalError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSpec {
    /// Share of the whole set, in (0, 1].
    Fraction(f64),
    /// Exact number of items.
    Count(usize),
}

impl SampleSpec {
    /// Total number of items to draw from `n`.
    pub fn target(&self, n: usize) -> Result<usize, EvalError> {
        match *self {
            SampleSpec::Fraction(p) if p > 0.0 && p <= 1.0 => Ok(((p * n as f64).round() as usize).clamp(1, n)),
            SampleSpec::Fraction(p) => Err(EvalError::InvalidSpec(format!("fraction must be in (0, 1], got {p}"))),
            SampleSpec::Count(c) if c > 0 && c <= n => Ok(c),
            SampleSpec::Count(c) => Err(EvalError::InvalidSpec(format!("count must be in 1..={n}, got {c}"))),
        }
    }
}

/// Splits `target` across groups proportionally to `sizes`: every group gets
/// the floor of its exact share, and the leftover units go to the largest
/// fractional parts (earlier groups first on ties). Exact integer arithmetic.
pub fn largest_remainder(sizes: &[usize], target: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return vec![0; sizes.len()];
    }
    let mut alloc: Vec<usize> = sizes.iter().map(|&s| target * s / total).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(target * sizes[i] % total));
    let leftover = target - alloc.iter().sum::<usize>();
    for &i in order.iter().take(leftover) {
        alloc[i] += 1;
    }
    alloc
}

/// Proportional per-stratum sample, uniform without replacement inside each
/// stratum. Deterministic for fixed items, spec and seed; returned in input order.
pub fn stratified_sample(items: &[BenchmarkItem], spec: SampleSpec, seed: u64) -> Result<Vec<BenchmarkItem>, EvalError> {
    if items.is_empty() {
        return Err(EvalError::EmptyItems);
    }
    let target = spec.target(items.len())?;
    let mut strata: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        strata.entry(item.stratum.as_str()).or_default().push(i);
    }
    let sizes: Vec<usize> = strata.values().map(Vec::len).collect();
    let alloc = largest_remainder(&sizes, target);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = Vec::with_capacity(target);
    for (members, k) in strata.values().zip(alloc) {
        picked.extend(rand::seq::index::sample(&mut rng, members.len(), k).into_iter().map(|j| members[j]));
    }
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| items[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TaskKind;
    use proptest::prelude::*;

    fn items(strata: &[(&str, usize)]) -> Vec<BenchmarkItem> {
        let mut out = Vec::new();
        for (name, n) in strata {
            for i in 0..*n {
                out.push(BenchmarkItem {
                    id: format!("{name}-{i}"),
                    kind: TaskKind::Choice,
                    prompt: String::new(),
                    reference: "a".into(),
                    stratum: name.to_string(),
                    entry_point: None,
                });
            }
        }
        out
    }

    #[test]
    fn remainder_allocation() {
        assert_eq!(largest_remainder(&[5, 3, 2], 5), vec![3, 1, 1]);
        assert_eq!(largest_remainder(&[1, 1, 1], 2), vec![1, 1, 0]);
        assert_eq!(largest_remainder(&[10], 4), vec![4]);
    }

    #[test]
    fn fraction_target() {
        assert_eq!(SampleSpec::Fraction(0.13).target(15_908).unwrap(), 2068);
        assert_eq!(SampleSpec::Fraction(1.0).target(7).unwrap(), 7);
        assert!(SampleSpec::Fraction(0.0).target(7).is_err());
        assert!(SampleSpec::Count(8).target(7).is_err());
    }

    #[test]
    fn single_stratum_is_deterministic() {
        let set = items(&[("only", 50)]);
        let a = stratified_sample(&set, SampleSpec::Count(10), 7).unwrap();
        let b = stratified_sample(&set, SampleSpec::Count(10), 7).unwrap();
        let c = stratified_sample(&set, SampleSpec::Count(10), 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert_ne!(a, c);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(stratified_sample(&[], SampleSpec::Count(1), 0), Err(EvalError::EmptyItems)));
    }

    proptest! {
        #[test]
        fn totals_exact_and_within_one_of_share(
            sizes in prop::collection::vec(1usize..40, 1..8),
            frac in 0.01f64..1.0,
            seed in any::<u64>(),
        ) {
            let names: Vec<String> = (0..sizes.len()).map(|i| format!("s{i}")).collect();
            let spec: Vec<(&str, usize)> = names.iter().map(String::as_str).zip(sizes.iter().copied()).collect();
            let set = items(&spec);
            let n = set.len();
            let target = SampleSpec::Fraction(frac).target(n).unwrap();
            let sample = stratified_sample(&set, SampleSpec::Fraction(frac), seed).unwrap();
            prop_assert_eq!(sample.len(), target);
            for (name, size) in &spec {
                let got = sample.iter().filter(|i| i.stratum == *name).count() as f64;
                let share = target as f64 * *size as f64 / n as f64;
                prop_assert!((got - share).abs() < 1.0 + 1e-9);
            }
            let mut ids: Vec<&str> = sample.iter().map(|i| i.id.as_str()).collect();
            ids.dedup();
            prop_assert_eq!(ids.len(), target);
        }
    }
}
