//! Rating data: types, raw-format parsers, k-core pruning, splits and a
//! synthetic generator with a tunable attribute signal.

mod io;
mod kcore;
mod parse;
mod split;
mod synth;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use io::{
    read_attributes_csv, read_canonical, read_ratings_csv, write_canonical, write_ratings_csv, CanonicalMeta,
};
pub use kcore::{k_core_prune, k_core_prune_with_attributes};
pub use parse::{parse_bookcrossing, parse_movielens, AgeThreshold};
pub use split::{make_splits, split_sizes, Split, SplitAssignment};
pub use synth::{generate_synthetic, SyntheticSpec};

/// One explicit rating, using dense user and item indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RatingRecord {
    pub user: u32,
    pub item: u32,
    pub rating: u8,
}

impl RatingRecord {
    pub fn new(user: u32, item: u32, rating: u8) -> Self {
        Self { user, item, rating }
    }
}

/// Contiguous integer rating scale `min..=max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingScale {
    pub min: u8,
    pub max: u8,
}

impl RatingScale {
    pub const MOVIELENS: RatingScale = RatingScale { min: 1, max: 5 };
    pub const BOOKCROSSING: RatingScale = RatingScale { min: 1, max: 10 };

    pub fn new(min: u8, max: u8) -> Result<Self> {
        if min > max {
            return Err(Error::invalid(format!("rating scale {min}..={max} is empty")));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, r: u8) -> bool {
        (self.min..=self.max).contains(&r)
    }

    pub fn len(&self) -> usize {
        usize::from(self.max - self.min) + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> impl Iterator<Item = u8> {
        self.min..=self.max
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(f64::from(self.min), f64::from(self.max))
    }
}

/// Original identifiers behind the dense indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMaps {
    pub users: Vec<String>,
    pub items: Vec<String>,
}

impl IdMaps {
    pub fn identity(num_users: usize, num_items: usize) -> Self {
        Self {
            users: (0..num_users).map(|u| u.to_string()).collect(),
            items: (0..num_items).map(|i| i.to_string()).collect(),
        }
    }
}

/// Normalized user–item–rating triples.
///
/// Records are kept sorted by `(user, item)` with at most one record per
/// pair, so a user's profile is a contiguous slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingDataset {
    records: Vec<RatingRecord>,
    offsets: Vec<usize>,
    num_items: usize,
    scale: RatingScale,
    id_maps: IdMaps,
}

impl RatingDataset {
    pub fn new(
        mut records: Vec<RatingRecord>,
        num_users: usize,
        num_items: usize,
        scale: RatingScale,
        id_maps: IdMaps,
    ) -> Result<Self> {
        if id_maps.users.len() != num_users || id_maps.items.len() != num_items {
            return Err(Error::invalid(format!(
                "id maps cover {}x{} but dataset is {num_users}x{num_items}",
                id_maps.users.len(),
                id_maps.items.len()
            )));
        }
        records.sort_unstable_by_key(|r| (r.user, r.item));
        for r in &records {
            if r.user as usize >= num_users {
                return Err(Error::UnknownUser(r.user as usize));
            }
            if r.item as usize >= num_items {
                return Err(Error::UnknownItem(r.item as usize));
            }
            if !scale.contains(r.rating) {
                return Err(Error::invalid(format!(
                    "rating {} outside scale {}..={}",
                    r.rating, scale.min, scale.max
                )));
            }
        }
        if let Some(w) = records
            .windows(2)
            .find(|w| (w[0].user, w[0].item) == (w[1].user, w[1].item))
        {
            return Err(Error::invalid(format!(
                "duplicate rating for user {} item {}",
                w[0].user, w[0].item
            )));
        }
        let mut offsets = vec![0; num_users + 1];
        for r in &records {
            offsets[r.user as usize + 1] += 1;
        }
        for u in 0..num_users {
            offsets[u + 1] += offsets[u];
        }
        Ok(Self {
            records,
            offsets,
            num_items,
            scale,
            id_maps,
        })
    }

    /// Dataset with identity id maps.
    pub fn from_records(
        records: Vec<RatingRecord>,
        num_users: usize,
        num_items: usize,
        scale: RatingScale,
    ) -> Result<Self> {
        Self::new(
            records,
            num_users,
            num_items,
            scale,
            IdMaps::identity(num_users, num_items),
        )
    }

    pub fn empty(scale: RatingScale) -> Self {
        Self {
            records: Vec::new(),
            offsets: vec![0],
            num_items: 0,
            scale,
            id_maps: IdMaps::default(),
        }
    }

    pub fn records(&self) -> &[RatingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_users(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn scale(&self) -> RatingScale {
        self.scale
    }

    pub fn id_maps(&self) -> &IdMaps {
        &self.id_maps
    }

    /// The user's records, sorted by item.
    pub fn profile(&self, user: usize) -> &[RatingRecord] {
        &self.records[self.offsets[user]..self.offsets[user + 1]]
    }

    pub fn profile_range(&self, user: usize) -> std::ops::Range<usize> {
        self.offsets[user]..self.offsets[user + 1]
    }

    pub fn check_user(&self, user: usize) -> Result<()> {
        if user < self.num_users() {
            Ok(())
        } else {
            Err(Error::UnknownUser(user))
        }
    }

    pub fn user_items(&self, user: usize) -> HashSet<u32> {
        self.profile(user).iter().map(|r| r.item).collect()
    }

    pub fn item_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_items];
        for r in &self.records {
            deg[r.item as usize] += 1;
        }
        deg
    }

    /// Same user/item universe, different records.
    pub fn with_records(&self, records: Vec<RatingRecord>) -> Result<Self> {
        Self::new(
            records,
            self.num_users(),
            self.num_items,
            self.scale,
            self.id_maps.clone(),
        )
    }
}

/// Which side of the binary sensitive attribute a user is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    /// The attribute `a` (female, or younger than the age threshold).
    A,
    /// The complement `ā`.
    ABar,
}

impl Group {
    pub fn from_flag(is_a: bool) -> Self {
        if is_a {
            Group::A
        } else {
            Group::ABar
        }
    }

    /// +1 for `a`, −1 for `ā`.
    pub fn sign(self) -> f64 {
        match self {
            Group::A => 1.0,
            Group::ABar => -1.0,
        }
    }

    pub fn other(self) -> Self {
        match self {
            Group::A => Group::ABar,
            Group::ABar => Group::A,
        }
    }

    /// Class index used by the attacker: 1 for `a`, 0 for `ā`.
    pub fn class(self) -> usize {
        match self {
            Group::A => 1,
            Group::ABar => 0,
        }
    }
}

/// Binary sensitive attribute per dense user index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeTable {
    groups: Vec<Group>,
    pub label_names: [String; 2],
}

impl AttributeTable {
    /// `label_names` are `[name of a, name of ā]`.
    pub fn new(groups: Vec<Group>, label_names: [String; 2]) -> Self {
        Self { groups, label_names }
    }

    pub fn from_flags(flags: &[bool]) -> Self {
        Self::new(
            flags.iter().map(|&f| Group::from_flag(f)).collect(),
            ["a".to_string(), "not_a".to_string()],
        )
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn group(&self, user: usize) -> Group {
        self.groups[user]
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn count(&self, g: Group) -> usize {
        self.groups.iter().filter(|&&x| x == g).count()
    }

    /// Fraction of users in group `a`.
    pub fn share_a(&self) -> f64 {
        if self.groups.is_empty() {
            0.0
        } else {
            self.count(Group::A) as f64 / self.groups.len() as f64
        }
    }

    pub fn require_both_groups(&self) -> Result<()> {
        if self.count(Group::A) == 0 {
            return Err(Error::EmptyGroup { group: "a" });
        }
        if self.count(Group::ABar) == 0 {
            return Err(Error::EmptyGroup { group: "not_a" });
        }
        Ok(())
    }

    pub(crate) fn select(&self, users: &[usize]) -> Self {
        Self::new(
            users.iter().map(|&u| self.groups[u]).collect(),
            self.label_names.clone(),
        )
    }
}
