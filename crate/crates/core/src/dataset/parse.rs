use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::{AttributeTable, Group, IdMaps, RatingDataset, RatingRecord, RatingScale};
use crate::{Error, Result};

/// How Bookcrossing users are split into the two age groups.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AgeThreshold {
    /// Median age over the retained users.
    Median,
    Fixed(f64),
}

/// Ages outside this range are treated as missing.
const PLAUSIBLE_AGE: std::ops::RangeInclusive<u32> = 5..=100;

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Numeric order when both ids are integers, lexical otherwise.
fn natural_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        _ => a.cmp(b),
    }
}

fn dense_ids(keys: HashSet<&str>) -> (Vec<String>, HashMap<String, u32>) {
    let mut sorted: Vec<&str> = keys.into_iter().collect();
    sorted.sort_by(|a, b| natural_cmp(a, b));
    let index = sorted
        .iter()
        .enumerate()
        .map(|(i, k)| (k.to_string(), i as u32))
        .collect();
    (sorted.into_iter().map(str::to_string).collect(), index)
}

/// Raw `(user, item, rating)` triples with original ids, plus the group of
/// each retained user.
fn assemble(
    raw: Vec<(String, String, u8)>,
    groups: &HashMap<String, Group>,
    scale: RatingScale,
    label_names: [String; 2],
) -> Result<(RatingDataset, AttributeTable)> {
    let users: HashSet<&str> = raw.iter().map(|(u, _, _)| u.as_str()).collect();
    let items: HashSet<&str> = raw.iter().map(|(_, i, _)| i.as_str()).collect();
    let (user_ids, user_index) = dense_ids(users);
    let (item_ids, item_index) = dense_ids(items);
    let records = raw
        .iter()
        .map(|(u, i, r)| RatingRecord::new(user_index[u], item_index[i], *r))
        .collect();
    let attr = AttributeTable::new(user_ids.iter().map(|u| groups[u]).collect(), label_names);
    let ds = RatingDataset::new(
        records,
        user_ids.len(),
        item_ids.len(),
        scale,
        IdMaps {
            users: user_ids,
            items: item_ids,
        },
    )?;
    Ok((ds, attr))
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut buf = Vec::new();
    let mut out = Vec::new();
    let mut line = 0;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line += 1;
        let text = String::from_utf8_lossy(&buf);
        let text = text.trim();
        if !text.is_empty() {
            out.push((line, text.to_string()));
        }
    }
    Ok(out)
}

/// Parses MovieLens-1M `ratings.dat` and `users.dat`.
///
/// Group `a` is female. Timestamps are discarded.
pub fn parse_movielens(ratings_path: &Path, users_path: &Path) -> Result<(RatingDataset, AttributeTable)> {
    let mut groups = HashMap::new();
    for (line, text) in read_lines(users_path)? {
        let fields: Vec<&str> = text.split("::").collect();
        if fields.len() != 5 {
            return Err(parse_err(
                users_path,
                line,
                format!("expected 5 '::'-separated fields, found {}", fields.len()),
            ));
        }
        let group = match fields[1] {
            "F" => Group::A,
            "M" => Group::ABar,
            other => return Err(parse_err(users_path, line, format!("unknown gender {other:?}"))),
        };
        groups.insert(fields[0].to_string(), group);
    }

    let mut raw = Vec::new();
    let mut seen = HashSet::new();
    for (line, text) in read_lines(ratings_path)? {
        let fields: Vec<&str> = text.split("::").collect();
        if fields.len() != 4 {
            return Err(parse_err(
                ratings_path,
                line,
                format!("expected 4 '::'-separated fields, found {}", fields.len()),
            ));
        }
        let rating: u8 = fields[2]
            .parse()
            .map_err(|_| parse_err(ratings_path, line, format!("bad rating {:?}", fields[2])))?;
        if !RatingScale::MOVIELENS.contains(rating) {
            return Err(parse_err(ratings_path, line, format!("rating {rating} outside 1..=5")));
        }
        let (user, item) = (fields[0].to_string(), fields[1].to_string());
        if !groups.contains_key(&user) {
            return Err(Error::MissingUser { user });
        }
        if !seen.insert((user.clone(), item.clone())) {
            return Err(parse_err(ratings_path, line, "duplicate user/item pair"));
        }
        raw.push((user, item, rating));
    }
    assemble(
        raw,
        &groups,
        RatingScale::MOVIELENS,
        ["female".to_string(), "male".to_string()],
    )
}

fn bx_reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new()
        .delimiter(b';')
        .has_headers(true)
        .escape(Some(b'\\'))
        .flexible(true)
        .from_path(path)?)
}

fn field(rec: &csv::ByteRecord, i: usize) -> String {
    String::from_utf8_lossy(rec.get(i).unwrap_or_default())
        .trim()
        .to_string()
}

/// Parses Bookcrossing `BX-Book-Ratings.csv` and `BX-Users.csv`.
///
/// Implicit ratings (0) are dropped, users without a plausible age are
/// dropped, and group `a` is `age < threshold`.
pub fn parse_bookcrossing(
    ratings_path: &Path,
    users_path: &Path,
    threshold: AgeThreshold,
) -> Result<(RatingDataset, AttributeTable)> {
    let mut ages: HashMap<String, u32> = HashMap::new();
    let mut dropped_age = 0usize;
    let mut rdr = bx_reader(users_path)?;
    let mut rec = csv::ByteRecord::new();
    while rdr.read_byte_record(&mut rec)? {
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() < 3 {
            return Err(parse_err(
                users_path,
                line,
                format!("expected 3 fields, found {}", rec.len()),
            ));
        }
        let user = field(&rec, 0);
        if user.is_empty() {
            return Err(parse_err(users_path, line, "empty user id"));
        }
        match field(&rec, rec.len() - 1).parse::<f64>() {
            Ok(age) if age.fract() == 0.0 && PLAUSIBLE_AGE.contains(&(age as u32)) => {
                ages.insert(user, age as u32);
            }
            _ => dropped_age += 1,
        }
    }
    if dropped_age > 0 {
        log::info!("bookcrossing: dropped {dropped_age} users with missing or implausible age");
    }

    let mut raw = Vec::new();
    let mut seen = HashSet::new();
    let mut implicit = 0usize;
    let mut no_age = 0usize;
    let mut rdr = bx_reader(ratings_path)?;
    while rdr.read_byte_record(&mut rec)? {
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 3 {
            return Err(parse_err(
                ratings_path,
                line,
                format!("expected 3 fields, found {}", rec.len()),
            ));
        }
        let (user, item) = (field(&rec, 0), field(&rec, 1));
        let rating_text = field(&rec, 2);
        let rating: u8 = rating_text
            .parse()
            .map_err(|_| parse_err(ratings_path, line, format!("bad rating {rating_text:?}")))?;
        if rating == 0 {
            implicit += 1;
            continue;
        }
        if !RatingScale::BOOKCROSSING.contains(rating) {
            return Err(parse_err(ratings_path, line, format!("rating {rating} outside 0..=10")));
        }
        if !ages.contains_key(&user) {
            no_age += 1;
            continue;
        }
        if !seen.insert((user.clone(), item.clone())) {
            log::warn!("{}:{line}: duplicate rating ignored", ratings_path.display());
            continue;
        }
        raw.push((user, item, rating));
    }
    log::info!("bookcrossing: dropped {implicit} implicit ratings, {no_age} ratings of users without age");

    let retained: BTreeMap<&str, u32> = raw.iter().map(|(u, _, _)| (u.as_str(), ages[u])).collect();
    let cut = match threshold {
        AgeThreshold::Fixed(t) => t,
        AgeThreshold::Median => median(retained.values().map(|&a| f64::from(a)).collect()),
    };
    let groups: HashMap<String, Group> = retained
        .iter()
        .map(|(u, &age)| (u.to_string(), Group::from_flag(f64::from(age) < cut)))
        .collect();
    assemble(
        raw,
        &groups,
        RatingScale::BOOKCROSSING,
        [format!("age<{cut}"), format!("age>={cut}")],
    )
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}
