//! Canonical on-disk form of a normalized dataset.
//!
//! A dataset directory holds `ratings.csv` (`user_id,item_id,rating`),
//! `attributes.csv` (`user_id,attribute`, 1 = group `a`) and a `meta.json`
//! sidecar with the rating scale, universe sizes and label names.
//! `users.csv`/`items.csv` map dense indices back to original ids.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AttributeTable, Group, IdMaps, RatingDataset, RatingRecord, RatingScale};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalMeta {
    pub name: String,
    pub num_users: usize,
    pub num_items: usize,
    pub rating_min: u8,
    pub rating_max: u8,
    pub label_names: [String; 2],
}

#[derive(Serialize, Deserialize)]
struct RatingRow {
    user_id: u32,
    item_id: u32,
    rating: u8,
}

#[derive(Serialize, Deserialize)]
struct AttributeRow {
    user_id: u32,
    attribute: u8,
}

#[derive(Serialize, Deserialize)]
struct IdRow {
    id: u32,
    original_id: String,
}

pub fn write_ratings_csv(path: &Path, ds: &RatingDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in ds.records() {
        w.serialize(RatingRow {
            user_id: r.user,
            item_id: r.item,
            rating: r.rating,
        })?;
    }
    w.flush()?;
    Ok(())
}

fn write_ids(path: &Path, ids: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (i, original_id) in ids.iter().enumerate() {
        w.serialize(IdRow {
            id: i as u32,
            original_id: original_id.clone(),
        })?;
    }
    w.flush()?;
    Ok(())
}

fn read_ids(path: &Path) -> Result<Vec<String>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: IdRow = row?;
        if row.id as usize != out.len() {
            return Err(Error::invalid(format!("{}: ids not dense", path.display())));
        }
        out.push(row.original_id);
    }
    Ok(out)
}

pub fn write_canonical(dir: &Path, name: &str, ds: &RatingDataset, attributes: &AttributeTable) -> Result<()> {
    if attributes.len() != ds.num_users() {
        return Err(Error::invalid(format!(
            "{} attribute rows for {} users",
            attributes.len(),
            ds.num_users()
        )));
    }
    fs::create_dir_all(dir)?;
    write_ratings_csv(&dir.join("ratings.csv"), ds)?;

    let mut w = csv::Writer::from_path(dir.join("attributes.csv"))?;
    for (u, g) in attributes.groups().iter().enumerate() {
        w.serialize(AttributeRow {
            user_id: u as u32,
            attribute: (*g == Group::A) as u8,
        })?;
    }
    w.flush()?;

    write_ids(&dir.join("users.csv"), &ds.id_maps().users)?;
    write_ids(&dir.join("items.csv"), &ds.id_maps().items)?;

    let meta = CanonicalMeta {
        name: name.to_string(),
        num_users: ds.num_users(),
        num_items: ds.num_items(),
        rating_min: ds.scale().min,
        rating_max: ds.scale().max,
        label_names: attributes.label_names.clone(),
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

pub fn read_ratings_csv(path: &Path) -> Result<Vec<RatingRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize()
        .map(|row| {
            let row: RatingRow = row?;
            Ok(RatingRecord::new(row.user_id, row.item_id, row.rating))
        })
        .collect()
}

pub fn read_attributes_csv(path: &Path) -> Result<Vec<Group>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut groups = Vec::new();
    for row in rdr.deserialize() {
        let row: AttributeRow = row?;
        if row.user_id as usize != groups.len() {
            return Err(Error::invalid(format!(
                "{}: user ids must be dense and ascending",
                path.display()
            )));
        }
        groups.push(match row.attribute {
            1 => Group::A,
            0 => Group::ABar,
            v => return Err(Error::invalid(format!("attribute {v} is not 0 or 1"))),
        });
    }
    Ok(groups)
}

/// Reads a dataset directory. Without `meta.json` the universe sizes and
/// the rating scale are inferred from the ratings.
pub fn read_canonical(dir: &Path) -> Result<(RatingDataset, AttributeTable, CanonicalMeta)> {
    let records = read_ratings_csv(&dir.join("ratings.csv"))?;
    let groups = read_attributes_csv(&dir.join("attributes.csv"))?;
    let meta_path = dir.join("meta.json");
    let meta: CanonicalMeta = if meta_path.exists() {
        serde_json::from_str(&fs::read_to_string(&meta_path)?)?
    } else {
        let num_users = records
            .iter()
            .map(|r| r.user as usize + 1)
            .max()
            .unwrap_or(0)
            .max(groups.len());
        CanonicalMeta {
            name: dir
                .file_name()
                .map_or_else(|| "dataset".to_string(), |n| n.to_string_lossy().into_owned()),
            num_users,
            num_items: records.iter().map(|r| r.item as usize + 1).max().unwrap_or(0),
            rating_min: records.iter().map(|r| r.rating).min().unwrap_or(1),
            rating_max: records.iter().map(|r| r.rating).max().unwrap_or(1),
            label_names: ["a".to_string(), "not_a".to_string()],
        }
    };
    let users_path = dir.join("users.csv");
    let items_path = dir.join("items.csv");
    let id_maps = if users_path.exists() && items_path.exists() {
        IdMaps {
            users: read_ids(&users_path)?,
            items: read_ids(&items_path)?,
        }
    } else {
        IdMaps::identity(meta.num_users, meta.num_items)
    };
    let ds = RatingDataset::new(
        records,
        meta.num_users,
        meta.num_items,
        RatingScale::new(meta.rating_min, meta.rating_max)?,
        id_maps,
    )?;
    if groups.len() != ds.num_users() {
        return Err(Error::invalid(format!(
            "{} attribute rows for {} users",
            groups.len(),
            ds.num_users()
        )));
    }
    let attributes = AttributeTable::new(groups, meta.label_names.clone());
    Ok((ds, attributes, meta))
}
