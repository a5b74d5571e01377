//! Item-group-inclination (IGI) and signed stereotypicality.
//!
//! `IGI(i, g)` is the fraction of users in group `g` who rated item `i`.
//! The score of item `i` for a user in group `g` is
//! `sign(g) * (IGI(i, a) - IGI(i, ā)) / max(IGI(i, a), IGI(i, ā))`,
//! which lies in `[-1, 1]` and is positive when the item is more typical of
//! the user's own group.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{AttributeTable, Group, RatingDataset};
use crate::{Error, Result};

/// Which records the index was computed from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoringSubset {
    /// Training portion of one fold.
    Train {
        fold: usize,
    },
    Full,
    /// Loaded from a scores file.
    File,
}

impl std::fmt::Display for ScoringSubset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScoringSubset::Train { fold } => write!(f, "train(fold={fold})"),
            ScoringSubset::Full => f.write_str("full"),
            ScoringSubset::File => f.write_str("file"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StereotypeIndex {
    pub igi_a: Vec<f64>,
    pub igi_abar: Vec<f64>,
    pub built_on: ScoringSubset,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredItem {
    pub item: u32,
    pub score: f64,
}

/// Counts, for every item, the users of each group who rated it.
pub fn build_index(
    ds: &RatingDataset,
    attributes: &AttributeTable,
    built_on: ScoringSubset,
) -> Result<StereotypeIndex> {
    if attributes.len() != ds.num_users() {
        return Err(Error::invalid(format!(
            "{} attribute rows for {} users",
            attributes.len(),
            ds.num_users()
        )));
    }
    if ds.is_empty() {
        return Err(Error::Empty("scoring subset"));
    }
    attributes.require_both_groups()?;
    let size_a = attributes.count(Group::A) as f64;
    let size_abar = attributes.count(Group::ABar) as f64;
    let mut count_a = vec![0u32; ds.num_items()];
    let mut count_abar = vec![0u32; ds.num_items()];
    for r in ds.records() {
        match attributes.group(r.user as usize) {
            Group::A => count_a[r.item as usize] += 1,
            Group::ABar => count_abar[r.item as usize] += 1,
        }
    }
    Ok(StereotypeIndex {
        igi_a: count_a.iter().map(|&c| f64::from(c) / size_a).collect(),
        igi_abar: count_abar.iter().map(|&c| f64::from(c) / size_abar).collect(),
        built_on,
    })
}

/// Normalized IGI difference seen from group `a`; 0 when neither group
/// rated the item.
fn a_side(igi_a: f64, igi_abar: f64) -> f64 {
    let m = igi_a.max(igi_abar);
    if m > 0.0 {
        (igi_a - igi_abar) / m
    } else {
        0.0
    }
}

impl StereotypeIndex {
    pub fn num_items(&self) -> usize {
        self.igi_a.len()
    }

    /// Score of `item` for a user in `group`.
    pub fn item_score(&self, item: usize, group: Group) -> Result<f64> {
        if item >= self.num_items() {
            return Err(Error::UnknownItem(item));
        }
        Ok(group.sign() * a_side(self.igi_a[item], self.igi_abar[item]))
    }

    /// Scores for every item as seen from group `a`.
    pub fn a_side_scores(&self) -> Vec<f64> {
        self.igi_a
            .iter()
            .zip(&self.igi_abar)
            .map(|(&a, &b)| a_side(a, b))
            .collect()
    }

    /// Writes `item_id,igi_a,igi_abar,score_a_side`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["item_id", "igi_a", "igi_abar", "score_a_side"])?;
        for (i, s) in self.a_side_scores().into_iter().enumerate() {
            w.write_record([
                i.to_string(),
                self.igi_a[i].to_string(),
                self.igi_abar[i].to_string(),
                s.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            item_id: usize,
            igi_a: f64,
            igi_abar: f64,
        }
        let mut rdr = csv::Reader::from_reader(fs::File::open(path)?);
        let mut igi_a = Vec::new();
        let mut igi_abar = Vec::new();
        for row in rdr.deserialize() {
            let row: Row = row?;
            if row.item_id != igi_a.len() {
                return Err(Error::invalid(format!(
                    "{}: item ids must be dense and ascending",
                    path.display()
                )));
            }
            igi_a.push(row.igi_a);
            igi_abar.push(row.igi_abar);
        }
        Ok(Self {
            igi_a,
            igi_abar,
            built_on: ScoringSubset::File,
        })
    }
}

/// `ceil((1 - beta) * n)`, robust to the rounding of `1 - beta`.
pub fn protected_count(beta: f64, n: usize) -> usize {
    let raw = (1.0 - beta) * n as f64;
    // (1 - 0.7) * 10 evaluates to 3.0000000000000004.
    let k = (raw - 1e-9).ceil().max(0.0) as usize;
    k.min(n)
}

fn check_beta(beta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&beta) {
        Ok(())
    } else {
        Err(Error::invalid(format!("beta {beta} outside [0, 1]")))
    }
}

/// The user's profile scored for the user's own group, best first; ties by
/// ascending item id.
pub fn ranked_profile(
    index: &StereotypeIndex,
    ds: &RatingDataset,
    attributes: &AttributeTable,
    user: usize,
) -> Result<Vec<ScoredItem>> {
    ds.check_user(user)?;
    let group = attributes.group(user);
    let mut scored = ds
        .profile(user)
        .iter()
        .map(|r| {
            Ok(ScoredItem {
                item: r.item,
                score: index.item_score(r.item as usize, group)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|x, y| y.score.total_cmp(&x.score).then(x.item.cmp(&y.item)));
    Ok(scored)
}

/// The `ceil((1 - beta) * profile_len)` most stereotypical items of the user.
pub fn select_stereotypical(
    index: &StereotypeIndex,
    ds: &RatingDataset,
    attributes: &AttributeTable,
    user: usize,
    beta: f64,
) -> Result<Vec<u32>> {
    check_beta(beta)?;
    let ranked = ranked_profile(index, ds, attributes, user)?;
    let k = protected_count(beta, ranked.len());
    Ok(ranked[..k].iter().map(|s| s.item).collect())
}

/// `ceil((1 - beta) * profile_len)` items drawn uniformly without replacement.
pub fn select_random<R: Rng + ?Sized>(ds: &RatingDataset, user: usize, beta: f64, rng: &mut R) -> Result<Vec<u32>> {
    check_beta(beta)?;
    ds.check_user(user)?;
    let profile = ds.profile(user);
    let k = protected_count(beta, profile.len());
    if k == 0 {
        return Ok(Vec::new());
    }
    Ok(rand::seq::index::sample(rng, profile.len(), k)
        .into_iter()
        .map(|i| profile[i].item)
        .collect())
}

/// Mean item score over the user's current profile.
pub fn user_stereotypicality(
    index: &StereotypeIndex,
    ds: &RatingDataset,
    attributes: &AttributeTable,
    user: usize,
) -> Result<f64> {
    ds.check_user(user)?;
    let profile = ds.profile(user);
    if profile.is_empty() {
        return Err(Error::Empty("user profile"));
    }
    let group = attributes.group(user);
    let total = profile
        .iter()
        .map(|r| index.item_score(r.item as usize, group))
        .sum::<Result<f64>>()?;
    Ok(total / profile.len() as f64)
}

/// Mean of [`user_stereotypicality`] over users with a nonempty profile.
pub fn mean_user_stereotypicality(
    index: &StereotypeIndex,
    ds: &RatingDataset,
    attributes: &AttributeTable,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for u in 0..ds.num_users() {
        if !ds.profile(u).is_empty() {
            sum += user_stereotypicality(index, ds, attributes, u)?;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("dataset"));
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StereotypeSummary {
    /// Items whose score for group `a` is positive.
    pub a_indicative_fraction: f64,
    /// Items whose score for group `ā` is positive.
    pub abar_indicative_fraction: f64,
    /// Mean of the per-user mean item score ("mean of item scores" reading).
    pub mean_user_stereotypicality: f64,
    /// Mean share of positive-score items in a profile.
    pub mean_stereotypical_fraction: f64,
}

pub fn stereotype_summary(
    index: &StereotypeIndex,
    ds: &RatingDataset,
    attributes: &AttributeTable,
) -> Result<StereotypeSummary> {
    let scores = index.a_side_scores();
    let n_items = scores.len().max(1) as f64;
    let a_ind = scores.iter().filter(|&&s| s > 0.0).count() as f64 / n_items;
    let abar_ind = scores.iter().filter(|&&s| s < 0.0).count() as f64 / n_items;

    let mut stereo_sum = 0.0;
    let mut frac_sum = 0.0;
    let mut n_users = 0usize;
    for u in 0..ds.num_users() {
        let profile = ds.profile(u);
        if profile.is_empty() {
            continue;
        }
        let sign = attributes.group(u).sign();
        let mut total = 0.0;
        let mut positive = 0usize;
        for r in profile {
            let s = sign * *scores.get(r.item as usize).ok_or(Error::UnknownItem(r.item as usize))?;
            total += s;
            positive += (s > 0.0) as usize;
        }
        stereo_sum += total / profile.len() as f64;
        frac_sum += positive as f64 / profile.len() as f64;
        n_users += 1;
    }
    let users = n_users.max(1) as f64;
    Ok(StereotypeSummary {
        a_indicative_fraction: a_ind,
        abar_indicative_fraction: abar_ind,
        mean_user_stereotypicality: stereo_sum / users,
        mean_stereotypical_fraction: frac_sum / users,
    })
}
