//! The four client data-partitioning schemes.
//!
//! All schemes are deterministic in `(dataset, spec, seed)`, produce pairwise
//! disjoint shards, and guarantee every client at least one row (after the
//! documented repair rule) or fail with a structured error.
//!
//! Rounding convention used throughout: proportions are turned into counts by
//! largest-remainder apportionment with ties going to the lower index.

use crate::data::{sample_dirichlet, sample_lognormal, Dataset};
use crate::error::{Error, Result};
use crate::rng::{SeededRng, Stream};
use std::fmt::Write as _;
use std::path::Path;

/// Partitioning scheme selector.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Scheme {
    /// Every client gets an equal, class-balanced slice.
    IidBalanced,
    /// Equal-size shards constrained to exactly `labels_per_client` distinct
    /// labels per client.
    Shards { labels_per_client: usize },
    /// One shared class mix drawn from Dirichlet(alpha), client sizes
    /// proportional to normalized LogNormal(0, sigma^2) draws.
    UnbalancedDirichlet { alpha: f64, sigma: f64 },
    /// Per-client class mixes drawn independently from Dirichlet(alpha).
    HeteroDirichlet { alpha: f64 },
}

/// Declarative partition recipe.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PartitionSpec {
    pub scheme: Scheme,
    pub num_clients: usize,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients < 2 {
            return Err(Error::invalid_config("partition.clients", "must be >= 2"));
        }
        match self.scheme {
            Scheme::IidBalanced => {}
            Scheme::Shards { labels_per_client } => {
                if labels_per_client == 0 {
                    return Err(Error::invalid_config(
                        "partition.labels_per_client",
                        "must be >= 1",
                    ));
                }
            }
            Scheme::UnbalancedDirichlet { alpha, sigma } => {
                if alpha <= 0.0 {
                    return Err(Error::invalid_config("partition.alpha", "must be > 0"));
                }
                if sigma <= 0.0 {
                    return Err(Error::invalid_config("partition.sigma", "must be > 0"));
                }
            }
            Scheme::HeteroDirichlet { alpha } => {
                if alpha <= 0.0 {
                    return Err(Error::invalid_config("partition.alpha", "must be > 0"));
                }
            }
        }
        Ok(())
    }
}

/// One client's slice of the parent dataset, by row index (ascending).
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub indices: Vec<usize>,
}

impl ClientShard {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Largest-remainder apportionment of `total` by `weights`; ties break toward
/// the lower index. Zero-weight entries receive zero (before remainders).
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let wsum: f64 = weights.iter().sum();
    let n = weights.len();
    if total == 0 || wsum <= 0.0 {
        return vec![0; n];
    }
    let mut counts = vec![0usize; n];
    let mut fracs: Vec<(usize, f64)> = Vec::with_capacity(n);
    let mut assigned = 0usize;
    for (i, &w) in weights.iter().enumerate() {
        let quota = total as f64 * (w / wsum);
        let floor = quota.floor() as usize;
        counts[i] = floor;
        assigned += floor;
        fracs.push((i, quota - floor as f64));
    }
    // Stable sort by descending fraction keeps the lower-index tie rule.
    fracs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let mut leftover = total.saturating_sub(assigned);
    for (i, _) in fracs {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    counts
}

/// Apportionment with per-index caps; overflow re-apportioned among the
/// uncapped indices. Returns an error if the caps cannot absorb `total`.
fn apportion_capped(total: usize, weights: &[f64], caps: &[usize]) -> Result<Vec<usize>> {
    let cap_sum: usize = caps.iter().sum();
    if cap_sum < total {
        return Err(Error::InfeasiblePartition(format!(
            "need {total} units but caps only allow {cap_sum}"
        )));
    }
    let n = weights.len();
    let mut counts = vec![0usize; n];
    let mut fixed = vec![false; n];
    let mut remaining = total;
    loop {
        let live_weights: Vec<f64> = (0..n)
            .map(|i| if fixed[i] { 0.0 } else { weights[i] })
            .collect();
        let trial = apportion(remaining, &live_weights);
        let mut overflowed = false;
        for i in 0..n {
            if !fixed[i] && counts[i] + trial[i] > caps[i] {
                remaining -= caps[i] - counts[i];
                counts[i] = caps[i];
                fixed[i] = true;
                overflowed = true;
            }
        }
        if !overflowed {
            for i in 0..n {
                if !fixed[i] {
                    counts[i] += trial[i];
                }
            }
            return Ok(counts);
        }
        if (0..n).all(|i| fixed[i]) {
            // All capped; remaining must be zero by the cap_sum check, but a
            // weight distribution of zeros can strand units.
            if remaining == 0 {
                return Ok(counts);
            }
            // Distribute leftovers to any index with spare cap, low id first.
            for i in 0..n {
                while remaining > 0 && counts[i] < caps[i] {
                    counts[i] += 1;
                    remaining -= 1;
                }
            }
            return Ok(counts);
        }
    }
}

/// Split `rows` into `parts` contiguous chunks with near-equal sizes.
fn chunk_evenly(rows: &[usize], parts: usize) -> Vec<Vec<usize>> {
    let sizes = apportion(rows.len(), &vec![1.0; parts]);
    let mut out = Vec::with_capacity(parts);
    let mut off = 0;
    for s in sizes {
        out.push(rows[off..off + s].to_vec());
        off += s;
    }
    out
}

/// Partition the dataset according to `spec`, deterministically in `seed`.
pub fn partition(ds: &Dataset, spec: &PartitionSpec, seed: u64) -> Result<Vec<ClientShard>> {
    spec.validate()?;
    if ds.len() < spec.num_clients {
        return Err(Error::InfeasiblePartition(format!(
            "{} rows cannot cover {} clients",
            ds.len(),
            spec.num_clients
        )));
    }
    let mut rng = SeededRng::derive(seed, Stream::Partition, 0, 0);
    let mut assignments = match spec.scheme {
        Scheme::IidBalanced => iid_balanced(ds, spec.num_clients, &mut rng),
        Scheme::Shards { labels_per_client } => {
            shards(ds, spec.num_clients, labels_per_client, &mut rng)?
        }
        Scheme::UnbalancedDirichlet { alpha, sigma } => {
            unbalanced_dirichlet(ds, spec.num_clients, alpha, sigma, &mut rng)?
        }
        Scheme::HeteroDirichlet { alpha } => {
            hetero_dirichlet(ds, spec.num_clients, alpha, &mut rng)
        }
    };
    repair_empty_clients(&mut assignments)?;
    Ok(assignments
        .into_iter()
        .enumerate()
        .map(|(client_id, mut indices)| {
            indices.sort_unstable();
            ClientShard { client_id, indices }
        })
        .collect())
}

fn iid_balanced(ds: &Dataset, num_clients: usize, rng: &mut SeededRng) -> Vec<Vec<usize>> {
    let mut shards = vec![Vec::new(); num_clients];
    for (c, mut rows) in ds.rows_by_class().into_iter().enumerate() {
        rng.shuffle(&mut rows);
        for (j, row) in rows.into_iter().enumerate() {
            // Offset by class so remainder rows spread over distinct clients.
            shards[(j + c) % num_clients].push(row);
        }
    }
    shards
}

/// Sort rows by label, cut each label's (shuffled) rows into its apportioned
/// number of slices, then deal the label-ordered slice list round-robin over a
/// seeded client permutation.
///
/// A label's slice count is capped at `min(num_clients, label row count)`;
/// because a label's slices sit contiguously in the deal order, the cap
/// guarantees no client receives the same label twice, so every client ends
/// with exactly `labels_per_client` distinct labels.
fn shards(
    ds: &Dataset,
    num_clients: usize,
    labels_per_client: usize,
    rng: &mut SeededRng,
) -> Result<Vec<Vec<usize>>> {
    let by_class = ds.rows_by_class();
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let total_slices = num_clients * labels_per_client;
    let caps: Vec<usize> = counts.iter().map(|&c| c.min(num_clients)).collect();
    let weights: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let slice_counts = apportion_capped(total_slices, &weights, &caps).map_err(|_| {
        Error::InfeasiblePartition(format!(
            "shards scheme needs {total_slices} label-slices ({num_clients} clients x \
             {labels_per_client} labels) but the dataset only supports {}",
            caps.iter().sum::<usize>()
        ))
    })?;
    let mut deal_order: Vec<usize> = (0..num_clients).collect();
    rng.shuffle(&mut deal_order);
    let mut shards = vec![Vec::new(); num_clients];
    let mut k = 0usize;
    for (label, mut rows) in by_class.into_iter().enumerate() {
        let parts = slice_counts[label];
        if parts == 0 {
            continue;
        }
        rng.shuffle(&mut rows);
        for slice in chunk_evenly(&rows, parts) {
            shards[deal_order[k % num_clients]].extend_from_slice(&slice);
            k += 1;
        }
    }
    Ok(shards)
}

fn unbalanced_dirichlet(
    ds: &Dataset,
    num_clients: usize,
    alpha: f64,
    sigma: f64,
    rng: &mut SeededRng,
) -> Result<Vec<Vec<usize>>> {
    let classes = ds.num_classes;
    let shared_mix = sample_dirichlet(&vec![alpha; classes], rng);
    let size_weights: Vec<f64> = (0..num_clients).map(|_| sample_lognormal(sigma, rng)).collect();
    let counts = ds.class_counts();
    // Largest total honoring the shared mix within per-class availability.
    let mut usable = ds.len() as f64;
    for c in 0..classes {
        if shared_mix[c] > 0.0 {
            usable = usable.min((counts[c] as f64 / shared_mix[c]).floor());
        }
    }
    let usable = usable as usize;
    if usable == 0 {
        return Err(Error::InfeasiblePartition(
            "shared class mix demands a class with no rows".into(),
        ));
    }
    let class_budgets = apportion_capped(usable, &shared_mix, &counts)?;
    let mut shards = vec![Vec::new(); num_clients];
    for (c, mut rows) in ds.rows_by_class().into_iter().enumerate() {
        rng.shuffle(&mut rows);
        let per_client = apportion(class_budgets[c], &size_weights);
        let mut off = 0;
        for (i, take) in per_client.into_iter().enumerate() {
            shards[i].extend_from_slice(&rows[off..off + take]);
            off += take;
        }
    }
    Ok(shards)
}

fn hetero_dirichlet(
    ds: &Dataset,
    num_clients: usize,
    alpha: f64,
    rng: &mut SeededRng,
) -> Vec<Vec<usize>> {
    let classes = ds.num_classes;
    let mixes: Vec<Vec<f64>> = (0..num_clients)
        .map(|_| sample_dirichlet(&vec![alpha; classes], rng))
        .collect();
    let mut shards = vec![Vec::new(); num_clients];
    for (c, mut rows) in ds.rows_by_class().into_iter().enumerate() {
        rng.shuffle(&mut rows);
        let weights: Vec<f64> = mixes.iter().map(|m| m[c]).collect();
        let per_client = apportion(rows.len(), &weights);
        let mut off = 0;
        for (i, take) in per_client.into_iter().enumerate() {
            shards[i].extend_from_slice(&rows[off..off + take]);
            off += take;
        }
    }
    shards
}

/// Move one row from the largest shard into each empty shard; error if the
/// donor would itself become empty.
fn repair_empty_clients(shards: &mut [Vec<usize>]) -> Result<()> {
    for i in 0..shards.len() {
        if !shards[i].is_empty() {
            continue;
        }
        let donor = (0..shards.len())
            .max_by(|&a, &b| shards[a].len().cmp(&shards[b].len()).then(b.cmp(&a)))
            .expect("at least one shard exists");
        if shards[donor].len() <= 1 {
            return Err(Error::InfeasiblePartition(format!(
                "client {i} received no rows and no shard can spare one"
            )));
        }
        let moved = shards[donor].pop().expect("donor is non-empty");
        shards[i].push(moved);
    }
    Ok(())
}

/// Serialize shards as one line per client: `<client_id>:<i1>,<i2>,...`.
pub fn save_partition(shards: &[ClientShard], path: &Path) -> Result<()> {
    let mut out = String::new();
    for shard in shards {
        let _ = write!(out, "{}:", shard.client_id);
        for (j, idx) in shard.indices.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{idx}");
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
