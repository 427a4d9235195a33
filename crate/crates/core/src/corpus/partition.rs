//! Dataset partitioning: dialect-stratified, utterance-level sampling without
//! replacement against frame budgets.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{Domain, Manifest, ManifestRow, PartitionSet};
use super::CorpusError;

/// Frames corresponding to one hour of speech at 100 frames/second.
pub const FRAMES_PER_HOUR: u64 = 360_000;

/// One named subset to carve out of a domain pool. `target_frames = None`
/// takes everything left in the pool.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct SubsetSpec {
    pub name: String,
    pub domain: Domain,
    pub target_frames: Option<u64>,
}

/// Ordered subset specs; earlier subsets draw first, so all subsets are
/// disjoint by construction.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct PartitionPlan {
    pub subsets: Vec<SubsetSpec>,
    /// allowed relative deviation from each frame target (default 0.05)
    pub tolerance: f64,
}

impl PartitionPlan {
    pub fn new(subsets: Vec<SubsetSpec>) -> Self {
        PartitionPlan {
            subsets,
            tolerance: 0.05,
        }
    }

    /// Condition-protocol plan: all train-domain utterances as `train`, and
    /// the test-domain pool split into `dev` and `test` halves.
    pub fn condition_default(manifest: &Manifest) -> Self {
        let test_pool = manifest.filter_domain(Domain::Test).total_frames();
        PartitionPlan::new(vec![
            SubsetSpec {
                name: "dev".into(),
                domain: Domain::Test,
                target_frames: Some(test_pool / 2),
            },
            SubsetSpec {
                name: "test".into(),
                domain: Domain::Test,
                target_frames: None,
            },
            SubsetSpec {
                name: "train".into(),
                domain: Domain::Train,
                target_frames: None,
            },
        ])
    }

    /// Incremental-label plan: a large base train slice, five equal train
    /// slices, five equal dev slices, and the held-out test half.
    ///
    /// `hours(name)` analogs are scaled by `scale` (e.g. 1/15 turns the 30 h
    /// base into 2 h worth of frames).
    pub fn increment_plan(manifest: &Manifest, scale: f64) -> Self {
        let slice = |hours: f64| Some((hours * scale * FRAMES_PER_HOUR as f64) as u64);
        let mut subsets = vec![SubsetSpec {
            name: "trn30".into(),
            domain: Domain::Train,
            target_frames: slice(30.0),
        }];
        for i in 1..=5 {
            subsets.push(SubsetSpec {
                name: format!("trn{i}"),
                domain: Domain::Train,
                target_frames: slice(2.0),
            });
        }
        for i in 1..=5 {
            subsets.push(SubsetSpec {
                name: format!("dev{i}"),
                domain: Domain::Test,
                target_frames: slice(2.0),
            });
        }
        let test_pool = manifest.filter_domain(Domain::Test).total_frames();
        let dev_budget: u64 = (5.0 * 2.0 * scale * FRAMES_PER_HOUR as f64) as u64;
        subsets.push(SubsetSpec {
            name: "test".into(),
            domain: Domain::Test,
            target_frames: Some(test_pool.saturating_sub(dev_budget)),
        });
        PartitionPlan::new(subsets)
    }
}

/// Draws the plan's subsets from the manifest: shuffled per-dialect queues,
/// round-robin over dialects, stopping when a subset reaches its target.
///
/// Frame totals land within the plan tolerance of each target or the call
/// fails with `InfeasiblePlan`.
pub fn partition(
    manifest: &Manifest,
    plan: &PartitionPlan,
    seed: u64,
) -> Result<PartitionSet, CorpusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // per-domain, per-dialect shuffled queues
    let mut queues: BTreeMap<(Domain, usize), Vec<ManifestRow>> = BTreeMap::new();
    for row in &manifest.rows {
        let dialect = row.dialect.ok_or_else(|| {
            CorpusError::BadSpec(format!("cannot partition unlabeled row {}", row.utt_id))
        })?;
        queues
            .entry((row.domain, dialect))
            .or_default()
            .push(row.clone());
    }
    for queue in queues.values_mut() {
        queue.shuffle(&mut rng);
    }

    let mut set = PartitionSet::default();
    for spec in &plan.subsets {
        let dialects: Vec<usize> = queues
            .keys()
            .filter(|(d, _)| *d == spec.domain)
            .map(|(_, dia)| *dia)
            .collect();
        if dialects.is_empty() {
            return Err(CorpusError::InfeasiblePlan(format!(
                "subset {:?}: no utterances in {}",
                spec.name, spec.domain
            )));
        }
        let mut rows = Vec::new();
        let mut frames: u64 = 0;
        match spec.target_frames {
            Some(target) => {
                let mut cursor = 0usize;
                'fill: while frames < target {
                    // next dialect with stock, round-robin
                    let mut advanced = false;
                    for _ in 0..dialects.len() {
                        let dia = dialects[cursor % dialects.len()];
                        cursor += 1;
                        if let Some(row) = queues
                            .get_mut(&(spec.domain, dia))
                            .and_then(|q| q.pop())
                        {
                            frames += row.n_frames as u64;
                            rows.push(row);
                            advanced = true;
                            break;
                        }
                    }
                    if !advanced {
                        break 'fill; // pools exhausted
                    }
                }
                let lo = (target as f64 * (1.0 - plan.tolerance)) as u64;
                let hi = (target as f64 * (1.0 + plan.tolerance)).ceil() as u64;
                if frames < lo || frames > hi {
                    return Err(CorpusError::InfeasiblePlan(format!(
                        "subset {:?}: reached {frames} frames for target {target} (±{:.0}%)",
                        spec.name,
                        plan.tolerance * 100.0
                    )));
                }
            }
            None => {
                for dia in &dialects {
                    if let Some(q) = queues.get_mut(&(spec.domain, *dia)) {
                        rows.append(q);
                    }
                }
                rows.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
            }
        }
        rows.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
        set.subsets.insert(spec.name.clone(), Manifest::new(rows)?);
    }
    Ok(set)
}
