//! Keep-or-replace randomized response over selected ratings.
//!
//! Each selected rating survives with probability `e^ε / (e^ε + 1)`.
//! Otherwise it is swapped for a rating of an item the user never
//! interacted with (uniform, drawn without replacement within the user)
//! and a value uniform over the rating scale.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{AttributeTable, RatingDataset, RatingRecord, RatingScale};
use crate::exec::Exec;
use crate::seed;
use crate::stereotype::{select_random, select_stereotypical, StereotypeIndex};
use crate::{Error, Result};

/// Privacy budget; `+inf` means no protection.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Epsilon(f64);

impl Epsilon {
    pub const INFINITY: Epsilon = Epsilon(f64::INFINITY);

    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && !value.is_nan() {
            Ok(Self(value))
        } else {
            Err(Error::invalid(format!("epsilon must be > 0, got {value}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }

    /// `e^ε / (e^ε + 1)`.
    pub fn keep_probability(self) -> f64 {
        if self.is_infinite() {
            1.0
        } else {
            1.0 / (1.0 + (-self.0).exp())
        }
    }
}

impl fmt::Display for Epsilon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl FromStr for Epsilon {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "Inf" | "infinity" | "∞" => Ok(Self::INFINITY),
            t => Self::new(t.parse().map_err(|_| Error::invalid(format!("bad epsilon {s:?}")))?),
        }
    }
}

impl Serialize for Epsilon {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Epsilon {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Epsilon::new(v),
            Raw::Text(t) => t.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Protect the most stereotypical part of each profile.
    Targeted,
    /// Protect a uniform sample of the same size.
    Random,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Targeted => "targeted",
            Strategy::Random => "random",
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "targeted" => Ok(Strategy::Targeted),
            "random" => Ok(Strategy::Random),
            _ => Err(Error::invalid(format!("unknown strategy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyConfig {
    pub epsilon: Epsilon,
    /// Fraction of each profile left unprotected.
    pub beta: f64,
    pub strategy: Strategy,
    pub seed: u64,
}

impl PrivacyConfig {
    pub fn new(epsilon: Epsilon, beta: f64, strategy: Strategy, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::invalid(format!("beta {beta} outside [0, 1]")));
        }
        Ok(Self {
            epsilon,
            beta,
            strategy,
            seed,
        })
    }
}

/// Items a user may receive as replacements: unrated ones not yet handed
/// out to this user.
#[derive(Debug, Clone)]
pub struct ReplacementPool {
    user: usize,
    candidates: Vec<u32>,
}

impl ReplacementPool {
    pub fn for_user(ds: &RatingDataset, user: usize) -> Self {
        let rated = ds.user_items(user);
        Self {
            user,
            candidates: (0..ds.num_items() as u32).filter(|i| !rated.contains(i)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<u32> {
        if self.candidates.is_empty() {
            return Err(Error::NoReplacementCandidates { user: self.user });
        }
        let i = rng.gen_range(0..self.candidates.len());
        Ok(self.candidates.swap_remove(i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Replacement {
    pub original: RatingRecord,
    pub new_item: u32,
    pub new_rating: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlipOutcome {
    Kept(RatingRecord),
    Replaced(Replacement),
}

/// One draw of the mechanism for `record`.
pub fn coin_flip<R: Rng + ?Sized>(
    record: RatingRecord,
    pool: &mut ReplacementPool,
    epsilon: Epsilon,
    scale: RatingScale,
    rng: &mut R,
) -> Result<FlipOutcome> {
    if epsilon.is_infinite() {
        return Ok(FlipOutcome::Kept(record));
    }
    if rng.gen::<f64>() < epsilon.keep_probability() {
        return Ok(FlipOutcome::Kept(record));
    }
    let new_item = pool.draw(rng)?;
    let new_rating = rng.gen_range(scale.min..=scale.max);
    Ok(FlipOutcome::Replaced(Replacement {
        original: record,
        new_item,
        new_rating,
    }))
}

/// A user's profile after protection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtectedProfile {
    pub user: usize,
    /// Records outside the selection.
    pub untouched: Vec<RatingRecord>,
    /// Selected records that survived the coin flip.
    pub survived: Vec<RatingRecord>,
    pub replaced: Vec<Replacement>,
}

impl ProtectedProfile {
    pub fn len(&self) -> usize {
        self.untouched.len() + self.survived.len() + self.replaced.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> impl Iterator<Item = RatingRecord> + '_ {
        self.untouched.iter().chain(&self.survived).copied().chain(
            self.replaced
                .iter()
                .map(move |r| RatingRecord::new(self.user as u32, r.new_item, r.new_rating)),
        )
    }
}

/// Applies the configured selection and the mechanism to one user.
pub fn protect_user<R: Rng + ?Sized>(
    ds: &RatingDataset,
    attributes: &AttributeTable,
    index: Option<&StereotypeIndex>,
    user: usize,
    config: &PrivacyConfig,
    rng: &mut R,
) -> Result<ProtectedProfile> {
    ds.check_user(user)?;
    let selected = match config.strategy {
        Strategy::Targeted => {
            let index = index.ok_or_else(|| Error::invalid("targeted selection needs a stereotype index"))?;
            select_stereotypical(index, ds, attributes, user, config.beta)?
        }
        Strategy::Random => select_random(ds, user, config.beta, rng)?,
    };
    let profile = ds.profile(user);
    let mut out = ProtectedProfile {
        user,
        untouched: Vec::with_capacity(profile.len() - selected.len()),
        survived: Vec::new(),
        replaced: Vec::new(),
    };
    let is_selected = |item: u32| selected.contains(&item);
    out.untouched
        .extend(profile.iter().filter(|r| !is_selected(r.item)).copied());

    if selected.is_empty() {
        return Ok(out);
    }
    if config.epsilon.is_infinite() {
        out.survived
            .extend(profile.iter().filter(|r| is_selected(r.item)).copied());
        return Ok(out);
    }
    let mut pool = ReplacementPool::for_user(ds, user);
    if pool.is_empty() {
        return Err(Error::NoReplacementCandidates { user });
    }
    for &item in &selected {
        let record = *profile
            .iter()
            .find(|r| r.item == item)
            .ok_or(Error::UnknownItem(item as usize))?;
        match coin_flip(record, &mut pool, config.epsilon, ds.scale(), rng)? {
            FlipOutcome::Kept(r) => out.survived.push(r),
            FlipOutcome::Replaced(r) => out.replaced.push(r),
        }
    }
    Ok(out)
}

/// Protected dataset plus the per-user bookkeeping behind it.
#[derive(Debug, Clone)]
pub struct ProtectionOutcome {
    pub dataset: RatingDataset,
    pub profiles: Vec<ProtectedProfile>,
}

impl ProtectionOutcome {
    pub fn replaced_count(&self) -> usize {
        self.profiles.iter().map(|p| p.replaced.len()).sum()
    }

    /// Writes `user_id,original_item,action,new_item,new_rating`, one row per
    /// original record; `action` is `unprotected`, `kept` or `replaced`.
    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["user_id", "original_item", "action", "new_item", "new_rating"])?;
        for p in &self.profiles {
            let mut rows: Vec<(u32, &str, u32, u8)> = Vec::with_capacity(p.len());
            rows.extend(p.untouched.iter().map(|r| (r.item, "unprotected", r.item, r.rating)));
            rows.extend(p.survived.iter().map(|r| (r.item, "kept", r.item, r.rating)));
            rows.extend(
                p.replaced
                    .iter()
                    .map(|r| (r.original.item, "replaced", r.new_item, r.new_rating)),
            );
            rows.sort_by_key(|row| row.0);
            for (orig, action, new_item, rating) in rows {
                w.write_record([
                    p.user.to_string(),
                    orig.to_string(),
                    action.to_string(),
                    new_item.to_string(),
                    rating.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-user RNG stream, independent of iteration order.
pub fn user_rng(seed: u64, user: usize) -> rand_chacha::ChaCha8Rng {
    seed::rng(seed::derive(seed, &[user as u64]))
}

pub fn protect_dataset(
    ds: &RatingDataset,
    attributes: &AttributeTable,
    index: Option<&StereotypeIndex>,
    config: &PrivacyConfig,
) -> Result<ProtectionOutcome> {
    protect_dataset_with(ds, attributes, index, config, Exec::default())
}

pub fn protect_dataset_with(
    ds: &RatingDataset,
    attributes: &AttributeTable,
    index: Option<&StereotypeIndex>,
    config: &PrivacyConfig,
    exec: Exec,
) -> Result<ProtectionOutcome> {
    if attributes.len() != ds.num_users() {
        return Err(Error::invalid("attribute table does not match dataset"));
    }
    if config.strategy == Strategy::Targeted && index.is_none() {
        return Err(Error::invalid("targeted selection needs a stereotype index"));
    }
    let profiles = exec
        .map_range(ds.num_users(), |u| {
            protect_user(ds, attributes, index, u, config, &mut user_rng(config.seed, u))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let records = profiles.iter().flat_map(|p| p.records()).collect();
    Ok(ProtectionOutcome {
        dataset: ds.with_records(records)?,
        profiles,
    })
}

/// Fraction of `flips` coin flips that keep the record, in chunks with
/// independent derived seeds.
pub fn empirical_keep_rate(epsilon: Epsilon, flips: usize, seed: u64, exec: Exec) -> f64 {
    const CHUNK: usize = 10_000;
    let p = epsilon.keep_probability();
    let chunks = flips.div_ceil(CHUNK);
    let kept: usize = exec
        .map_range(chunks, |c| {
            let mut rng = seed::rng(seed::derive(seed, &[c as u64]));
            let n = CHUNK.min(flips - c * CHUNK);
            (0..n).filter(|_| rng.gen::<f64>() < p).count()
        })
        .into_iter()
        .sum();
    kept as f64 / flips.max(1) as f64
}
