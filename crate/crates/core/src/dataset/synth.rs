use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AttributeTable, Group, IdMaps, RatingDataset, RatingRecord, RatingScale};
use crate::seed;
use crate::{Error, Result};

/// Parameters of the synthetic stereotyped rating generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_users: usize,
    pub num_items: usize,
    pub ratings_per_user: usize,
    /// 0: item choice ignores the group; 1: each group rates only its half.
    pub signal_strength: f64,
    pub seed: u64,
}

/// Generates a dataset with a planted attribute signal.
///
/// Half of the users (rounded down) are in group `a`. Items
/// `0..num_items/2` are a-inclined, the rest ā-inclined. For every pick a
/// user takes an item from its own half with probability
/// `(1 + signal_strength) / 2`, uniformly among items it has not rated
/// yet, falling back to the other half once its own half is exhausted.
///
/// Rating values follow an additive user-bias + item-bias model on 1..=5
/// whose parameters are drawn independently of the group, so the rating
/// distribution carries no attribute signal.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(RatingDataset, AttributeTable)> {
    let SyntheticSpec {
        num_users,
        num_items,
        ratings_per_user,
        signal_strength,
        seed,
    } = *spec;
    if !(0.0..=1.0).contains(&signal_strength) {
        return Err(Error::invalid(format!(
            "signal_strength {signal_strength} outside [0, 1]"
        )));
    }
    if ratings_per_user > num_items {
        return Err(Error::invalid(format!(
            "ratings_per_user {ratings_per_user} exceeds num_items {num_items}"
        )));
    }
    let mut rng = seed::rng(seed);
    let scale = RatingScale::MOVIELENS;

    let mut order: Vec<usize> = (0..num_users).collect();
    order.shuffle(&mut rng);
    let mut groups = vec![Group::ABar; num_users];
    for &u in &order[..num_users / 2] {
        groups[u] = Group::A;
    }

    let user_bias: Vec<f64> = (0..num_users).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let item_bias: Vec<f64> = (0..num_items).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let half = num_items / 2;
    let own_prob = (1.0 + signal_strength) / 2.0;
    let mut records = Vec::with_capacity(num_users * ratings_per_user);
    for u in 0..num_users {
        let mut a_side: Vec<u32> = (0..half as u32).collect();
        let mut abar_side: Vec<u32> = (half as u32..num_items as u32).collect();
        let (own, other) = match groups[u] {
            Group::A => (&mut a_side, &mut abar_side),
            Group::ABar => (&mut abar_side, &mut a_side),
        };
        for _ in 0..ratings_per_user {
            let want_own = rng.gen_bool(own_prob);
            let pool = if (want_own && !own.is_empty()) || other.is_empty() {
                &mut *own
            } else {
                &mut *other
            };
            let item = pool.swap_remove(rng.gen_range(0..pool.len()));
            let noise: f64 = rng.gen_range(-0.5..0.5);
            let value = 3.5 + 0.8 * user_bias[u] + 0.8 * item_bias[item as usize] + noise;
            let rating = value.round().clamp(f64::from(scale.min), f64::from(scale.max)) as u8;
            records.push(RatingRecord::new(u as u32, item, rating));
        }
    }

    let ds = RatingDataset::new(
        records,
        num_users,
        num_items,
        scale,
        IdMaps::identity(num_users, num_items),
    )?;
    let attr = AttributeTable::new(groups, ["a".to_string(), "not_a".to_string()]);
    Ok((ds, attr))
}
