//! Splitting a dataset across clients.
//!
//! IID plans give every client the global label mix (each per-label count
//! within one of its proportional share). Non-IID plans shard by label: every
//! client draws from exactly `labels_per_client` labels.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum PartitionMode {
    Iid,
    #[serde(rename = "noniid")]
    NonIid { labels_per_client: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub mode: PartitionMode,
    pub cardinalities: Vec<usize>,
    pub seed: u64,
}

impl PartitionPlan {
    pub fn new(mode: PartitionMode, cardinalities: Vec<usize>, seed: u64) -> Self {
        PartitionPlan {
            mode,
            cardinalities,
            seed,
        }
    }

    /// Equal cardinalities for `num_clients`.
    ///
    /// IID plans split all `labels` (leftovers to the lowest client ids).
    /// Non-IID plans use the largest common cardinality every label shard can
    /// supply.
    pub fn balanced(
        mode: PartitionMode,
        num_clients: usize,
        labels: &[usize],
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        if num_clients == 0 {
            return Err(Error::Partition("need at least one client".into()));
        }
        let cardinalities = match mode {
            PartitionMode::Iid => {
                let base = labels.len() / num_clients;
                let extra = labels.len() % num_clients;
                (0..num_clients).map(|i| base + usize::from(i < extra)).collect()
            }
            PartitionMode::NonIid { labels_per_client } => {
                check_skew(labels_per_client, num_classes)?;
                let sets = label_sets(num_clients, num_classes, labels_per_client, seed);
                let available = histogram(labels, num_classes);
                let mut users = vec![0usize; num_classes];
                for set in &sets {
                    for &l in set {
                        users[l] += 1;
                    }
                }
                let mut card = (0..num_classes)
                    .filter(|&l| users[l] > 0)
                    .map(|l| available[l] * labels_per_client / users[l])
                    .min()
                    .unwrap_or(0);
                while card >= labels_per_client
                    && noniid_counts(&sets, &vec![card; num_clients], &available).is_err()
                {
                    card -= 1;
                }
                if card < labels_per_client {
                    return Err(Error::Partition(format!(
                        "not enough examples for {num_clients} clients with {labels_per_client} labels each"
                    )));
                }
                vec![card; num_clients]
            }
        };
        Ok(PartitionPlan::new(mode, cardinalities, seed))
    }

    pub fn num_clients(&self) -> usize {
        self.cardinalities.len()
    }
}

fn check_skew(labels_per_client: usize, num_classes: usize) -> Result<()> {
    if labels_per_client == 0 || labels_per_client > num_classes {
        return Err(Error::Partition(format!(
            "labels_per_client must lie in [1, {num_classes}], got {labels_per_client}"
        )));
    }
    Ok(())
}

fn histogram(labels: &[usize], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

/// Label set of each client: consecutive runs of a seeded label permutation.
fn label_sets(num_clients: usize, num_classes: usize, per_client: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..num_classes).collect();
    order.shuffle(&mut seed::derive_rng(seed, &[seed::purpose::PARTITION, 1]));
    (0..num_clients)
        .map(|i| (0..per_client).map(|j| order[(i * per_client + j) % num_classes]).collect())
        .collect()
}

/// Per-(client, label) counts for IID plans.
fn iid_counts(cards: &[usize], available: &[usize]) -> Result<Vec<Vec<usize>>> {
    let total: usize = available.iter().sum();
    let mut remaining = available.to_vec();
    let mut counts: Vec<Vec<usize>> = Vec::with_capacity(cards.len());
    let mut fractions = Vec::with_capacity(cards.len());
    for &card in cards {
        let mut row = Vec::with_capacity(available.len());
        let mut frac = Vec::with_capacity(available.len());
        for (l, &n) in available.iter().enumerate() {
            let share = card * n;
            row.push(share / total);
            frac.push((share % total, l));
            remaining[l] -= share / total;
        }
        counts.push(row);
        fractions.push(frac);
    }
    // Leftovers: each client takes at most one extra example per label, so
    // every count stays within one of its proportional share. Clients are
    // served in index order, largest fractional share first; when a label
    // runs out, an augmenting path moves an earlier client's extra to
    // another label.
    let mut extras = vec![vec![false; available.len()]; cards.len()];
    let prefs: Vec<Vec<usize>> = fractions
        .iter()
        .map(|frac| {
            let mut order = frac.clone();
            order.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            order.into_iter().map(|(_, l)| l).collect()
        })
        .collect();
    for (client, &card) in cards.iter().enumerate() {
        let missing = card - counts[client].iter().sum::<usize>();
        for _ in 0..missing {
            let mut visited = vec![false; available.len()];
            if !augment(client, &prefs, &mut extras, &mut remaining, &mut visited) {
                return Err(Error::Partition(format!(
                    "cannot place leftover examples for client {client} without breaking label balance"
                )));
            }
        }
    }
    for (row, extra) in counts.iter_mut().zip(&extras) {
        for (c, &e) in row.iter_mut().zip(extra) {
            *c += usize::from(e);
        }
    }
    Ok(counts)
}

/// Find one more extra label for `client`, possibly by displacing another
/// client's extra along an alternating path.
fn augment(
    client: usize,
    prefs: &[Vec<usize>],
    extras: &mut [Vec<bool>],
    remaining: &mut [usize],
    visited: &mut [bool],
) -> bool {
    for &l in &prefs[client] {
        if extras[client][l] || visited[l] {
            continue;
        }
        visited[l] = true;
        if remaining[l] > 0 {
            remaining[l] -= 1;
            extras[client][l] = true;
            return true;
        }
        for other in 0..extras.len() {
            if other != client
                && extras[other][l]
                && augment(other, prefs, extras, remaining, visited)
            {
                extras[other][l] = false;
                extras[client][l] = true;
                return true;
            }
        }
    }
    false
}

/// Per-(client, label) counts for label-sharded plans: each client's
/// cardinality split evenly over its labels.
fn noniid_counts(sets: &[Vec<usize>], cards: &[usize], available: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut used = vec![0usize; available.len()];
    let mut counts = Vec::with_capacity(sets.len());
    for (client, (set, &card)) in sets.iter().zip(cards).enumerate() {
        if card < set.len() {
            return Err(Error::Partition(format!(
                "client {client}: cardinality {card} is below its {} labels",
                set.len()
            )));
        }
        let mut row = vec![0usize; available.len()];
        let base = card / set.len();
        let extra = card % set.len();
        for (j, &l) in set.iter().enumerate() {
            row[l] = base + usize::from(j < extra);
            used[l] += row[l];
        }
        counts.push(row);
    }
    if let Some(l) = (0..available.len()).find(|&l| used[l] > available[l]) {
        return Err(Error::Partition(format!(
            "label {l}: shards need {} examples, only {} available",
            used[l], available[l]
        )));
    }
    Ok(counts)
}

/// Example indices of each client under `plan`. Client index lists are
/// sorted and pairwise disjoint.
pub fn plan_indices(labels: &[usize], num_classes: usize, plan: &PartitionPlan) -> Result<Vec<Vec<usize>>> {
    let n = plan.num_clients();
    if n == 0 {
        return Err(Error::Partition("need at least one client".into()));
    }
    let total: usize = plan.cardinalities.iter().sum();
    if total > labels.len() {
        return Err(Error::Partition(format!(
            "cardinalities sum to {total}, dataset has {} examples",
            labels.len()
        )));
    }
    let available = histogram(labels, num_classes);
    let counts = match plan.mode {
        PartitionMode::Iid => iid_counts(&plan.cardinalities, &available)?,
        PartitionMode::NonIid { labels_per_client } => {
            check_skew(labels_per_client, num_classes)?;
            let sets = label_sets(n, num_classes, labels_per_client, plan.seed);
            noniid_counts(&sets, &plan.cardinalities, &available)?
        }
    };

    let mut rng = seed::derive_rng(plan.seed, &[seed::purpose::PARTITION, 0]);
    let mut pools = vec![Vec::new(); num_classes];
    for (row, &l) in labels.iter().enumerate() {
        pools[l].push(row);
    }
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }
    let mut cursor = vec![0usize; num_classes];
    Ok(counts
        .iter()
        .map(|row| {
            let mut indices = Vec::with_capacity(row.iter().sum());
            for (l, &c) in row.iter().enumerate() {
                indices.extend_from_slice(&pools[l][cursor[l]..cursor[l] + c]);
                cursor[l] += c;
            }
            indices.sort_unstable();
            indices
        })
        .collect())
}

pub fn partition(data: &Dataset, plan: &PartitionPlan) -> Result<Vec<Dataset>> {
    let indices = plan_indices(data.labels(), data.num_classes(), plan)?;
    Ok(indices.iter().map(|idx| data.subset(idx)).collect())
}

pub fn partition_iid(data: &Dataset, plan: &PartitionPlan) -> Result<Vec<Dataset>> {
    if plan.mode != PartitionMode::Iid {
        return Err(Error::Partition("plan is not IID".into()));
    }
    partition(data, plan)
}

pub fn partition_noniid(data: &Dataset, plan: &PartitionPlan) -> Result<Vec<Dataset>> {
    if !matches!(plan.mode, PartitionMode::NonIid { .. }) {
        return Err(Error::Partition("plan is not label-sharded".into()));
    }
    partition(data, plan)
}
