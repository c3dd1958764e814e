//! Stratified cross-validation folds and horizontal client splits.
//!
//! Both levels use the same dealing scheme: ids are sorted, shuffled within
//! their class, positives are laid out before negatives, and position `i`
//! goes to bucket `i mod B`. Bucket sizes and per-bucket positive counts
//! then differ by at most one, and remainders land in the lowest buckets.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{stream, Rng};

pub type Labeled = (Arc<str>, u8);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientSplit {
    pub train: Vec<Arc<str>>,
    pub val: Vec<Arc<str>>,
}

impl ClientSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub test: Vec<Arc<str>>,
    pub clients: Vec<ClientSplit>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    #[serde(rename = "F")]
    pub fold_count: usize,
    #[serde(rename = "K")]
    pub clients: usize,
    pub folds: Vec<FoldPlan>,
}

fn deal(items: &[Labeled], buckets: usize, rng: &mut Rng) -> Vec<Vec<Labeled>> {
    let mut pos: Vec<Labeled> = items.iter().filter(|x| x.1 == 1).cloned().collect();
    let mut neg: Vec<Labeled> = items.iter().filter(|x| x.1 != 1).cloned().collect();
    pos.sort();
    neg.sort();
    rng.shuffle(&mut pos);
    rng.shuffle(&mut neg);
    let mut out = vec![Vec::new(); buckets];
    for (i, x) in pos.into_iter().chain(neg).enumerate() {
        out[i % buckets].push(x);
    }
    out
}

fn check_unique(items: &[Labeled]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for (id, y) in items {
        if *y > 1 {
            return Err(Error::Validation(format!("label of {id} must be 0 or 1, got {y}")));
        }
        if !seen.insert(id) {
            return Err(Error::Validation(format!("duplicate patient id {id}")));
        }
    }
    Ok(())
}

fn sorted_ids(items: Vec<Labeled>) -> Vec<Arc<str>> {
    let mut ids: Vec<Arc<str>> = items.into_iter().map(|x| x.0).collect();
    ids.sort();
    ids
}

/// `F` stratified folds; each fold's ids are returned sorted.
pub fn make_folds(items: &[Labeled], folds: usize, seed: u64) -> Result<Vec<Vec<Labeled>>> {
    check_unique(items)?;
    if folds == 0 || folds > items.len() {
        return Err(Error::Validation(format!(
            "cannot split {} patients into {folds} folds",
            items.len()
        )));
    }
    let mut out = deal(items, folds, &mut Rng::derive(seed, &[stream::FOLDS]));
    for f in &mut out {
        f.sort();
    }
    Ok(out)
}

fn prevalence_of(items: &[Labeled]) -> f64 {
    items.iter().filter(|x| x.1 == 1).count() as f64 / items.len().max(1) as f64
}

/// Positives to move into a validation part of `n_val` ids, taken from a
/// client of `m` ids with `p` positives. Both the validation and the training
/// part stay within one patient of `prevalence` whenever the client does.
fn val_positives(m: usize, p: usize, n_val: usize, prevalence: f64) -> usize {
    let n_train = (m - n_val) as f64;
    let lo = (n_val as f64 * prevalence - 1.0).max(p as f64 - n_train * prevalence - 1.0).max(0.0);
    let hi = (n_val as f64 * prevalence + 1.0)
        .min(p as f64 - n_train * prevalence + 1.0)
        .min(p.min(n_val) as f64);
    let ideal = if m == 0 { 0.0 } else { n_val as f64 * p as f64 / m as f64 };
    let lo = lo.ceil();
    let hi = hi.floor();
    let v = if lo <= hi { ideal.round().clamp(lo, hi) } else { ideal.round() };
    // never more negatives requested than exist
    (v as usize).max(n_val.saturating_sub(m - p)).min(p)
}

/// `K` stratified clients, each divided into a train and a validation part
/// with `round(val_fraction · n_client)` validation ids. Positives are
/// apportioned so both parts stay within one patient of the prevalence
/// (of `population_prevalence` if given, else of `items`).
pub fn make_client_splits(
    items: &[Labeled],
    clients: usize,
    val_fraction: f64,
    seed: u64,
    fold: usize,
    population_prevalence: Option<f64>,
) -> Result<Vec<ClientSplit>> {
    check_unique(items)?;
    if clients == 0 || clients > items.len() {
        return Err(Error::Validation(format!(
            "cannot split {} patients across {clients} clients",
            items.len()
        )));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Validation(format!("val_fraction must lie in [0, 1), got {val_fraction}")));
    }
    let prevalence = population_prevalence.unwrap_or_else(|| prevalence_of(items));
    let mut rng = Rng::derive(seed, &[stream::CLIENTS, fold as u64, clients as u64]);
    let parts = deal(items, clients, &mut rng);
    let mut out = Vec::with_capacity(clients);
    for (k, part) in parts.into_iter().enumerate() {
        // `deal` already shuffled within class
        let (pos, neg): (Vec<Labeled>, Vec<Labeled>) = part.iter().cloned().partition(|x| x.1 == 1);
        let n_val = (val_fraction * part.len() as f64).round() as usize;
        let v_pos = val_positives(part.len(), pos.len(), n_val, prevalence);
        let v_neg = (n_val - v_pos).min(neg.len());
        let mut val: Vec<Labeled> = pos[..v_pos].to_vec();
        val.extend_from_slice(&neg[..v_neg]);
        let mut train: Vec<Labeled> = pos[v_pos..].to_vec();
        train.extend_from_slice(&neg[v_neg..]);
        if !train.iter().any(|x| x.1 == 1) {
            log::warn!("fold {fold}: client {k} of {clients} has no positive training patient");
        }
        out.push(ClientSplit {
            train: sorted_ids(train),
            val: sorted_ids(val),
        });
    }
    Ok(out)
}

/// Folds plus, for every fold, the client splits of its non-test patients.
/// Test sets depend only on `(items, F, seed)`, never on `K`.
pub fn make_split_plan(items: &[Labeled], folds: usize, clients: usize, val_fraction: f64, seed: u64) -> Result<SplitPlan> {
    let fold_sets = make_folds(items, folds, seed)?;
    let mut plan = Vec::with_capacity(folds);
    for f in 0..folds {
        let rest: Vec<Labeled> = fold_sets
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, s)| s.iter().cloned())
            .collect();
        plan.push(FoldPlan {
            test: fold_sets[f].iter().map(|x| x.0.clone()).collect(),
            clients: make_client_splits(&rest, clients, val_fraction, seed, f, Some(prevalence_of(items)))?,
        });
    }
    Ok(SplitPlan {
        seed,
        fold_count: folds,
        clients,
        folds: plan,
    })
}

fn ratio_ok(subset: &[Arc<str>], labels: &BTreeMap<&str, u8>, prevalence: f64) -> bool {
    let pos = subset.iter().filter(|id| labels[&***id] == 1).count() as f64;
    (pos - prevalence * subset.len() as f64).abs() <= 1.0 + 1e-9
}

impl SplitPlan {
    /// Checks partition, disjointness, balance and stratification against
    /// the labelled population the plan was built from.
    pub fn validate(&self, items: &[Labeled]) -> Result<()> {
        let labels: BTreeMap<&str, u8> = items.iter().map(|(id, y)| (&**id, *y)).collect();
        let all: BTreeSet<&str> = labels.keys().copied().collect();
        let prevalence = prevalence_of(items);
        let bad = |msg: String| Err(Error::Validation(msg));
        if self.folds.len() != self.fold_count {
            return bad(format!("plan declares {} folds but holds {}", self.fold_count, self.folds.len()));
        }
        let mut tested = BTreeSet::new();
        for (f, fold) in self.folds.iter().enumerate() {
            if fold.clients.len() != self.clients {
                return bad(format!("fold {f} has {} clients, expected {}", fold.clients.len(), self.clients));
            }
            let mut seen = BTreeSet::new();
            let subsets = std::iter::once(&fold.test).chain(fold.clients.iter().flat_map(|c| [&c.train, &c.val]));
            for subset in subsets {
                for id in subset {
                    if !all.contains(&**id) {
                        return bad(format!("fold {f}: unknown id {id}"));
                    }
                    if !seen.insert(&**id) {
                        return bad(format!("fold {f}: id {id} assigned twice"));
                    }
                }
                if !ratio_ok(subset, &labels, prevalence) {
                    return bad(format!("fold {f}: a subset of {} ids breaks stratification", subset.len()));
                }
            }
            if seen != all {
                return bad(format!("fold {f} covers {} of {} ids", seen.len(), all.len()));
            }
            for id in &fold.test {
                if !tested.insert(&**id) {
                    return bad(format!("id {id} is tested in more than one fold"));
                }
            }
            let sizes: Vec<usize> = fold.clients.iter().map(ClientSplit::len).collect();
            if sizes.iter().max().unwrap_or(&0) - sizes.iter().min().unwrap_or(&0) > 1 {
                return bad(format!("fold {f}: client sizes {sizes:?} differ by more than one"));
            }
        }
        if tested != all {
            return bad(format!("{} of {} ids are never tested", all.len() - tested.len(), all.len()));
        }
        let sizes: Vec<usize> = self.folds.iter().map(|f| f.test.len()).collect();
        if sizes.iter().max().unwrap_or(&0) - sizes.iter().min().unwrap_or(&0) > 1 {
            return bad(format!("fold sizes {sizes:?} differ by more than one"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
