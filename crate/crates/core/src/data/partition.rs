use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, domain};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PartitionKind {
    Iid,
    /// Label skew: per-class client proportions drawn from
    /// `Dirichlet(beta, ..., beta)`.
    Dirichlet {
        beta: f64,
    },
}

impl fmt::Display for PartitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartitionKind::Iid => f.write_str("iid"),
            PartitionKind::Dirichlet { beta } => write!(f, "dirichlet({beta})"),
        }
    }
}

impl FromStr for PartitionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        if t == "iid" {
            return Ok(PartitionKind::Iid);
        }
        t.strip_prefix("dirichlet(")
            .and_then(|r| r.strip_suffix(')'))
            .and_then(|b| b.parse().ok())
            .map(|beta| PartitionKind::Dirichlet { beta })
            .ok_or_else(|| Error::Partition(format!("unknown partition '{s}'")))
    }
}

/// Splits the sample indices of `ds` into `clients` disjoint, exhaustive,
/// non-empty shards (each sorted ascending).
pub fn partition(ds: &Dataset, kind: PartitionKind, clients: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let n = ds.len();
    if clients == 0 {
        return Err(Error::Partition("client count must be at least 1".into()));
    }
    if clients > n {
        return Err(Error::Partition(format!("{clients} clients for {n} samples")));
    }
    let mut rng = rng::stream(seed, domain::PARTITION, 0);
    let mut shards = match kind {
        PartitionKind::Iid => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let (base, extra) = (n / clients, n % clients);
            let mut shards = Vec::with_capacity(clients);
            let mut start = 0;
            for c in 0..clients {
                let len = base + usize::from(c < extra);
                shards.push(order[start..start + len].to_vec());
                start += len;
            }
            shards
        }
        PartitionKind::Dirichlet { beta } => {
            if !(beta > 0.0 && beta.is_finite()) {
                return Err(Error::Partition(format!("dirichlet beta {beta} must be positive")));
            }
            dirichlet_shards(&ds.labels(), beta, clients, &mut rng)?
        }
    };
    fill_empty(&mut shards);
    for s in &mut shards {
        s.sort_unstable();
    }
    Ok(shards)
}

fn dirichlet_shards<R: Rng>(labels: &[usize], beta: f64, clients: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let gamma = Gamma::new(beta, 1.0).map_err(|e| Error::Partition(e.to_string()))?;
    let mut shards = vec![Vec::new(); clients];
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(rng);
        let mut weights: Vec<f64> = (0..clients).map(|_| rng.sample(gamma)).collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            // Every draw underflowed: give the whole class to one client.
            weights = vec![0.0; clients];
            weights[rng.random_range(0..clients)] = 1.0;
        } else {
            weights.iter_mut().for_each(|w| *w /= total);
        }
        for (shard, count) in shards.iter_mut().zip(apportion(&weights, members.len())) {
            shard.extend(members.drain(..count));
        }
    }
    Ok(shards)
}

/// Largest-remainder rounding of `weights · n` to integers summing to `n`;
/// equal remainders favor the lower index.
fn apportion(weights: &[f64], n: usize) -> Vec<usize> {
    let exact: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Moves one sample from the largest shard (lowest index on ties) into each
/// empty shard.
fn fill_empty(shards: &mut [Vec<usize>]) {
    while let Some(empty) = shards.iter().position(Vec::is_empty) {
        let donor = (0..shards.len())
            .max_by(|&a, &b| shards[a].len().cmp(&shards[b].len()).then(b.cmp(&a)))
            .expect("at least one shard");
        let moved = shards[donor].pop().expect("donor holds at least two samples");
        shards[empty].push(moved);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_blobs;

    fn assert_exact_partition(shards: &[Vec<usize>], n: usize) {
        let mut all: Vec<usize> = shards.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
        assert!(shards.iter().all(|s| !s.is_empty()));
    }

    #[test]
    fn single_client_gets_everything() {
        let ds = gen_blobs(3, 2, 5, 1.0, 0).unwrap();
        assert_eq!(
            partition(&ds, PartitionKind::Iid, 1, 0).unwrap(),
            vec![(0..15).collect::<Vec<_>>()]
        );
    }

    #[test]
    fn exact_partitions() {
        let ds = gen_blobs(3, 2, 20, 1.0, 0).unwrap();
        for kind in [
            PartitionKind::Iid,
            PartitionKind::Dirichlet { beta: 0.01 },
            PartitionKind::Dirichlet { beta: 5.0 },
        ] {
            for clients in [1, 2, 7, 60] {
                for seed in 0..5 {
                    assert_exact_partition(&partition(&ds, kind, clients, seed).unwrap(), 60);
                }
            }
        }
    }

    #[test]
    fn infeasible_rejected() {
        let ds = gen_blobs(1, 2, 3, 1.0, 0).unwrap();
        assert!(partition(&ds, PartitionKind::Iid, 4, 0).is_err());
        assert!(partition(&ds, PartitionKind::Iid, 0, 0).is_err());
        assert!(partition(&ds, PartitionKind::Dirichlet { beta: 0.0 }, 2, 0).is_err());
    }

    #[test]
    fn apportion_sums() {
        assert_eq!(apportion(&[0.5, 0.25, 0.25], 5), vec![3, 1, 1]);
        assert_eq!(apportion(&[1.0 / 3.0; 3], 4), vec![2, 1, 1]);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("iid".parse::<PartitionKind>().unwrap(), PartitionKind::Iid);
        assert_eq!(
            "Dirichlet(0.5)".parse::<PartitionKind>().unwrap(),
            PartitionKind::Dirichlet { beta: 0.5 }
        );
        assert!("zipf".parse::<PartitionKind>().is_err());
    }
}
