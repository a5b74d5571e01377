use super::{AttributeTable, IdMaps, RatingDataset, RatingRecord};
use crate::{Error, Result};

/// Surviving users and items (old indices, ascending) of the k-core.
fn core_members(ds: &RatingDataset, k: usize) -> (Vec<bool>, Vec<bool>) {
    let mut user_alive = vec![true; ds.num_users()];
    let mut item_alive = vec![true; ds.num_items()];
    loop {
        let mut changed = false;

        let mut udeg = vec![0usize; ds.num_users()];
        for r in ds.records() {
            if item_alive[r.item as usize] {
                udeg[r.user as usize] += 1;
            }
        }
        for (alive, &d) in user_alive.iter_mut().zip(&udeg) {
            if *alive && d < k {
                *alive = false;
                changed = true;
            }
        }

        let mut ideg = vec![0usize; ds.num_items()];
        for r in ds.records() {
            if user_alive[r.user as usize] {
                ideg[r.item as usize] += 1;
            }
        }
        for (alive, &d) in item_alive.iter_mut().zip(&ideg) {
            if *alive && d < k {
                *alive = false;
                changed = true;
            }
        }

        if !changed {
            return (user_alive, item_alive);
        }
    }
}

fn reindex(alive: &[bool]) -> Vec<Option<u32>> {
    let mut next = 0u32;
    alive
        .iter()
        .map(|&a| {
            a.then(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

fn prune(ds: &RatingDataset, k: usize) -> Result<(RatingDataset, Vec<usize>)> {
    if k == 0 {
        return Err(Error::invalid("k-core requires k >= 1"));
    }
    let (user_alive, item_alive) = core_members(ds, k);
    let umap = reindex(&user_alive);
    let imap = reindex(&item_alive);
    let records: Vec<RatingRecord> = ds
        .records()
        .iter()
        .filter_map(|r| {
            Some(RatingRecord::new(
                umap[r.user as usize]?,
                imap[r.item as usize]?,
                r.rating,
            ))
        })
        .collect();
    if records.is_empty() {
        return Err(Error::EmptyKCore { k });
    }
    let kept_users: Vec<usize> = (0..ds.num_users()).filter(|&u| user_alive[u]).collect();
    let ids = ds.id_maps();
    let id_maps = IdMaps {
        users: kept_users.iter().map(|&u| ids.users[u].clone()).collect(),
        items: (0..ds.num_items())
            .filter(|&i| item_alive[i])
            .map(|i| ids.items[i].clone())
            .collect(),
    };
    let pruned = RatingDataset::new(records, id_maps.users.len(), id_maps.items.len(), ds.scale(), id_maps)?;
    Ok((pruned, kept_users))
}

/// Largest sub-dataset in which every user and every item has at least `k`
/// ratings, with indices re-densified in their original order.
///
/// The k-core is unique, so the alternating filter order does not matter.
pub fn k_core_prune(ds: &RatingDataset, k: usize) -> Result<RatingDataset> {
    prune(ds, k).map(|(d, _)| d)
}

/// [`k_core_prune`] that also carries the attribute table along.
pub fn k_core_prune_with_attributes(
    ds: &RatingDataset,
    attributes: &AttributeTable,
    k: usize,
) -> Result<(RatingDataset, AttributeTable)> {
    let (pruned, kept) = prune(ds, k)?;
    Ok((pruned, attributes.select(&kept)))
}
