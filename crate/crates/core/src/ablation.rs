//! The sixteen-row ablation grid (M-1 to M-16).

use crate::error::{Error, Result};
use crate::trainer::AblationFlags;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationRow {
    /// 1-based row number.
    pub id: usize,
    pub description: &'static str,
    pub flags: AblationFlags,
}

impl AblationRow {
    pub fn label(&self) -> String {
        format!("M-{}", self.id)
    }
}

const fn flags(adbc: bool, wdbc: bool, lab: bool, con: bool) -> AblationFlags {
    AblationFlags {
        adbc,
        wdbc,
        lab,
        con,
        ..AblationFlags::full()
    }
}

const FULL: AblationFlags = AblationFlags::full();

pub const ROWS: [AblationRow; 16] = [
    AblationRow { id: 1, description: "supervised only (S+T)", flags: flags(false, false, false, false) },
    AblationRow { id: 2, description: "+ adbc", flags: flags(true, false, false, false) },
    AblationRow { id: 3, description: "+ wdbc", flags: flags(false, true, false, false) },
    AblationRow { id: 4, description: "+ adbc + wdbc", flags: flags(true, true, false, false) },
    AblationRow { id: 5, description: "+ lab", flags: flags(false, false, true, false) },
    AblationRow { id: 6, description: "+ con", flags: flags(false, false, false, true) },
    AblationRow { id: 7, description: "+ lab + con", flags: flags(false, false, true, true) },
    AblationRow { id: 8, description: "+ adbc + lab", flags: flags(true, false, true, false) },
    AblationRow { id: 9, description: "+ wdbc + lab", flags: flags(false, true, true, false) },
    AblationRow { id: 10, description: "+ adbc + wdbc + lab", flags: flags(true, true, true, false) },
    AblationRow { id: 11, description: "full model", flags: FULL },
    AblationRow {
        id: 12,
        description: "full, clustering without perturbation",
        flags: AblationFlags { augment_abc: false, ..FULL },
    },
    AblationRow {
        id: 13,
        description: "adbc + wdbc without perturbation",
        flags: AblationFlags { augment_abc: false, ..flags(true, true, false, false) },
    },
    AblationRow {
        id: 14,
        description: "full, no pseudo-labels in wdbc",
        flags: AblationFlags { pseudo_in_wdbc: false, ..FULL },
    },
    AblationRow {
        id: 15,
        description: "full, no positive pair term",
        flags: AblationFlags { abc_positive: false, ..FULL },
    },
    AblationRow {
        id: 16,
        description: "full, no negative pair term",
        flags: AblationFlags { abc_negative: false, ..FULL },
    },
];

pub fn row(id: usize) -> Option<&'static AblationRow> {
    ROWS.get(id.checked_sub(1)?)
}

fn parse_id(s: &str) -> Result<usize> {
    let id: usize = s
        .trim()
        .parse()
        .map_err(|_| Error::config("rows", format!("`{s}` is not a row number")))?;
    if row(id).is_none() {
        return Err(Error::config("rows", format!("row {id} outside 1..={}", ROWS.len())));
    }
    Ok(id)
}

/// Parses a selection such as `1,11-16` or `M-11`. Returns sorted,
/// deduplicated rows; an empty or `all` selection yields every row.
pub fn parse_rows(spec: &str) -> Result<Vec<&'static AblationRow>> {
    let spec = spec.trim();
    if spec.is_empty() || spec.eq_ignore_ascii_case("all") {
        return Ok(ROWS.iter().collect());
    }
    let mut ids = Vec::new();
    for part in spec.split(',') {
        let bare = part.replace("M-", "").replace('M', "");
        match bare.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (parse_id(a)?, parse_id(b)?);
                if a > b {
                    return Err(Error::config("rows", format!("empty range `{}`", part.trim())));
                }
                ids.extend(a..=b);
            }
            None => ids.push(parse_id(&bare)?),
        }
    }
    ids.sort_unstable();
    ids.dedup();
    Ok(ids.into_iter().filter_map(row).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_shape() {
        assert_eq!(ROWS.len(), 16);
        for (i, r) in ROWS.iter().enumerate() {
            assert_eq!(r.id, i + 1);
        }
        assert_eq!(row(1).unwrap().flags, AblationFlags::supervised_only());
        assert_eq!(row(11).unwrap().flags, AblationFlags::full());
        assert!(row(0).is_none() && row(17).is_none());
        let distinct: std::collections::HashSet<_> = ROWS.iter().map(|r| format!("{:?}", r.flags)).collect();
        assert_eq!(distinct.len(), 16);
    }

    #[test]
    fn selections() {
        let ids = |s: &str| parse_rows(s).unwrap().iter().map(|r| r.id).collect::<Vec<_>>();
        assert_eq!(ids("11"), vec![11]);
        assert_eq!(ids("M-11"), vec![11]);
        assert_eq!(ids("M11,1"), vec![1, 11]);
        assert_eq!(ids("12-14, 3"), vec![3, 12, 13, 14]);
        assert_eq!(ids("M-1-M-3"), vec![1, 2, 3]);
        assert_eq!(ids("all").len(), 16);
        assert_eq!(ids("").len(), 16);
        assert!(parse_rows("17").is_err());
        assert!(parse_rows("5-2").is_err());
        assert!(parse_rows("x").is_err());
    }
}
