//! Reproducible train / validation / test partitions.
//!
//! Cases are sorted by id, then shuffled with [`SplitMix64`] seeded by the
//! split seed. Plain mode cuts the shuffled list into consecutive runs of the
//! requested sizes. Stratified mode sorts strata by name, shuffles each
//! stratum with its own generator (seed + stratum position, wrapping), and
//! allocates each stratum to the splits proportionally: every cell gets the
//! floor or the ceiling of `stratum_size * split_size / total`, with the
//! ceilings handed out by largest remainder so that row and column totals
//! both come out exact. Split lists are concatenated in stratum order.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseRecord {
    pub case_id: String,
    pub stratum: Option<String>,
}

impl CaseRecord {
    pub fn new(case_id: impl Into<String>, stratum: Option<&str>) -> Self {
        Self {
            case_id: case_id.into(),
            stratum: stratum.map(str::to_string),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn new(train: usize, validation: usize, test: usize) -> Self {
        Self {
            train,
            validation,
            test,
        }
    }

    fn as_array(&self) -> [usize; 3] {
        [self.train, self.validation, self.test]
    }

    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub stratified: bool,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SplitError {
    #[error("split sizes sum to {requested} but the manifest has {available} cases")]
    SizesDoNotSum { requested: usize, available: usize },
    #[error("stratum `{stratum}` has {size} cases, fewer than the {needed} non-empty splits")]
    StratumTooSmall {
        stratum: String,
        size: usize,
        needed: usize,
    },
    #[error("duplicate case id `{0}`")]
    DuplicateCaseId(String),
    #[error("manifest: {0}")]
    Manifest(String),
}

pub fn split_dataset(
    manifest: &[CaseRecord],
    sizes: SplitSizes,
    seed: u64,
    stratified: bool,
) -> Result<Split, SplitError> {
    if sizes.total() != manifest.len() {
        return Err(SplitError::SizesDoNotSum {
            requested: sizes.total(),
            available: manifest.len(),
        });
    }
    let mut seen = BTreeSet::new();
    for r in manifest {
        if !seen.insert(r.case_id.as_str()) {
            return Err(SplitError::DuplicateCaseId(r.case_id.clone()));
        }
    }

    let mut sorted: Vec<&CaseRecord> = manifest.iter().collect();
    sorted.sort_by(|a, b| a.case_id.cmp(&b.case_id));

    let mut lists: [Vec<String>; 3] = Default::default();
    if stratified {
        let mut strata: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for r in &sorted {
            strata
                .entry(r.stratum.as_deref().unwrap_or(""))
                .or_default()
                .push(&r.case_id);
        }
        let needed = sizes.as_array().iter().filter(|&&s| s > 0).count();
        if let Some((name, ids)) = strata.iter().find(|(_, ids)| ids.len() < needed) {
            return Err(SplitError::StratumTooSmall {
                stratum: name.to_string(),
                size: ids.len(),
                needed,
            });
        }
        let stratum_sizes: Vec<usize> = strata.values().map(Vec::len).collect();
        let table = allocate(&stratum_sizes, &sizes.as_array());
        for (h, ids) in strata.values_mut().enumerate() {
            SplitMix64::new(seed.wrapping_add(h as u64)).shuffle(ids);
            let mut rest = &ids[..];
            for (k, list) in lists.iter_mut().enumerate() {
                let (take, tail) = rest.split_at(table[h][k]);
                list.extend(take.iter().map(|s| s.to_string()));
                rest = tail;
            }
        }
    } else {
        let mut ids: Vec<&str> = sorted.iter().map(|r| r.case_id.as_str()).collect();
        SplitMix64::new(seed).shuffle(&mut ids);
        let mut rest = &ids[..];
        for (list, size) in lists.iter_mut().zip(sizes.as_array()) {
            let (take, tail) = rest.split_at(size);
            list.extend(take.iter().map(|s| s.to_string()));
            rest = tail;
        }
    }

    let [train, validation, test] = lists;
    Ok(Split {
        seed,
        stratified,
        train,
        validation,
        test,
    })
}

/// Integer table with the given row and column sums whose every cell is the
/// floor or ceiling of `rows[h] * cols[k] / total`.
pub(crate) fn allocate(rows: &[usize], cols: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = rows.iter().sum();
    debug_assert_eq!(total, cols.iter().sum::<usize>());
    let (nh, nk) = (rows.len(), cols.len());
    let mut table = vec![vec![0usize; nk]; nh];
    if total == 0 {
        return table;
    }
    let mut remainder = vec![vec![0usize; nk]; nh];
    for h in 0..nh {
        for k in 0..nk {
            let num = rows[h] * cols[k];
            table[h][k] = num / total;
            remainder[h][k] = num % total;
        }
    }
    let mut row_need: Vec<usize> = (0..nh)
        .map(|h| rows[h] - table[h].iter().sum::<usize>())
        .collect();
    let mut col_need: Vec<usize> = (0..nk)
        .map(|k| cols[k] - (0..nh).map(|h| table[h][k]).sum::<usize>())
        .collect();

    // largest remainders first
    let mut cells: Vec<(usize, usize)> = (0..nh)
        .flat_map(|h| (0..nk).map(move |k| (h, k)))
        .filter(|&(h, k)| remainder[h][k] > 0)
        .collect();
    cells.sort_by(|a, b| remainder[b.0][b.1].cmp(&remainder[a.0][a.1]).then(a.cmp(b)));
    let mut bumped = vec![vec![false; nk]; nh];
    for &(h, k) in &cells {
        if row_need[h] > 0 && col_need[k] > 0 {
            bumped[h][k] = true;
            row_need[h] -= 1;
            col_need[k] -= 1;
        }
    }

    // greedy can stall; fix up with augmenting paths row -> col -> row ...
    while let Some(h0) = (0..nh).find(|&h| row_need[h] > 0) {
        let mut from_col: Vec<Option<usize>> = vec![None; nk];
        let mut from_row: Vec<Option<usize>> = vec![None; nh];
        let mut seen_row = vec![false; nh];
        seen_row[h0] = true;
        let mut queue = VecDeque::from([h0]);
        let mut end = None;
        'search: while let Some(h) = queue.pop_front() {
            for k in 0..nk {
                if remainder[h][k] == 0 || bumped[h][k] || from_col[k].is_some() {
                    continue;
                }
                from_col[k] = Some(h);
                if col_need[k] > 0 {
                    end = Some(k);
                    break 'search;
                }
                for h2 in 0..nh {
                    if bumped[h2][k] && !seen_row[h2] {
                        seen_row[h2] = true;
                        from_row[h2] = Some(k);
                        queue.push_back(h2);
                    }
                }
            }
        }
        let Some(mut k) = end else {
            unreachable!("proportional rounding is always feasible");
        };
        col_need[k] -= 1;
        row_need[h0] -= 1;
        loop {
            let h = from_col[k].expect("path");
            bumped[h][k] = true;
            match from_row[h] {
                Some(prev_k) => {
                    bumped[h][prev_k] = false;
                    k = prev_k;
                }
                None => break,
            }
        }
    }

    for h in 0..nh {
        for k in 0..nk {
            if bumped[h][k] {
                table[h][k] += 1;
            }
        }
    }
    table
}

/// Reads `case_id,stratum` rows. A header row starting with `case_id` is
/// skipped; the stratum column is optional and blank means none.
pub fn read_manifest(text: &str) -> Result<Vec<CaseRecord>, SplitError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| SplitError::Manifest(e.to_string()))?;
        let id = row.get(0).unwrap_or("");
        if i == 0 && id.eq_ignore_ascii_case("case_id") {
            continue;
        }
        if id.is_empty() {
            if row.iter().all(str::is_empty) {
                continue;
            }
            return Err(SplitError::Manifest(format!(
                "row {} has an empty case id",
                i + 1
            )));
        }
        let stratum = row.get(1).filter(|s| !s.is_empty());
        out.push(CaseRecord::new(id, stratum));
    }
    Ok(out)
}

impl Split {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(n: usize) -> Vec<CaseRecord> {
        (0..n)
            .map(|i| {
                CaseRecord::new(
                    format!("case_{i:04}"),
                    Some(if i % 2 == 0 { "primary" } else { "metastatic" }),
                )
            })
            .collect()
    }

    #[test]
    fn sizes_154_26_26_stratified() {
        let s = split_dataset(&manifest(206), SplitSizes::new(154, 26, 26), 7, true).unwrap();
        assert_eq!(
            (s.train.len(), s.validation.len(), s.test.len()),
            (154, 26, 26)
        );
        for list in [&s.train, &s.validation, &s.test] {
            let primary = list
                .iter()
                .filter(|id| id[5..].parse::<usize>().unwrap() % 2 == 0)
                .count();
            let exact = list.len() as f64 / 2.0;
            assert!((primary as f64 - exact).abs() <= 1.0);
        }
    }

    #[test]
    fn nsclc_sizes() {
        let m: Vec<CaseRecord> = (0..2000)
            .map(|i| CaseRecord::new(format!("n{i}"), None))
            .collect();
        let s = split_dataset(&m, SplitSizes::new(1600, 400, 0), 0, false).unwrap();
        assert_eq!(
            (s.train.len(), s.validation.len(), s.test.len()),
            (1600, 400, 0)
        );
    }

    #[test]
    fn deterministic_and_order_independent() {
        let m = manifest(50);
        let a = split_dataset(&m, SplitSizes::new(30, 10, 10), 11, true).unwrap();
        let mut reversed = m.clone();
        reversed.reverse();
        let b = split_dataset(&reversed, SplitSizes::new(30, 10, 10), 11, true).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn partition_is_complete_and_disjoint() {
        let m = manifest(31);
        for stratified in [false, true] {
            let s = split_dataset(&m, SplitSizes::new(20, 6, 5), 3, stratified).unwrap();
            let mut all: Vec<&String> =
                s.train.iter().chain(&s.validation).chain(&s.test).collect();
            all.sort();
            all.dedup();
            assert_eq!(all.len(), 31);
        }
    }

    #[test]
    fn errors() {
        let m = manifest(10);
        assert_eq!(
            split_dataset(&m, SplitSizes::new(5, 5, 1), 0, false),
            Err(SplitError::SizesDoNotSum {
                requested: 11,
                available: 10
            })
        );
        let mut dup = manifest(3);
        dup[2].case_id = dup[0].case_id.clone();
        assert!(matches!(
            split_dataset(&dup, SplitSizes::new(1, 1, 1), 0, false),
            Err(SplitError::DuplicateCaseId(_))
        ));
        let mut tiny = manifest(8);
        tiny[0].stratum = Some("rare".into());
        assert!(matches!(
            split_dataset(&tiny, SplitSizes::new(6, 1, 1), 0, true),
            Err(SplitError::StratumTooSmall {
                needed: 3,
                size: 1,
                ..
            })
        ));
    }

    #[test]
    fn allocation_is_within_one_of_proportional() {
        let cases: &[(&[usize], &[usize])] = &[
            (&[103, 103], &[154, 26, 26]),
            (&[1, 1, 1, 1, 1], &[2, 2, 1]),
            (&[7, 3, 11], &[10, 6, 5]),
            (&[5, 5, 5], &[1, 1, 13]),
            (&[2, 2, 2, 2, 2, 2, 2], &[5, 5, 4]),
        ];
        for (rows, cols) in cases {
            let t = allocate(rows, cols);
            let total: usize = rows.iter().sum();
            for (h, &r) in rows.iter().enumerate() {
                assert_eq!(t[h].iter().sum::<usize>(), r);
                for (k, &c) in cols.iter().enumerate() {
                    let exact = (r * c) as f64 / total as f64;
                    assert!((t[h][k] as f64 - exact).abs() < 1.0, "{rows:?} {cols:?}");
                }
            }
            for (k, &c) in cols.iter().enumerate() {
                assert_eq!(t.iter().map(|row| row[k]).sum::<usize>(), c);
            }
        }
    }

    #[test]
    fn manifest_parsing() {
        let text = "case_id,stratum\nA,primary\n B , metastatic\nC\n\nD,\n";
        let m = read_manifest(text).unwrap();
        assert_eq!(
            m,
            vec![
                CaseRecord::new("A", Some("primary")),
                CaseRecord::new("B", Some("metastatic")),
                CaseRecord::new("C", None),
                CaseRecord::new("D", None),
            ]
        );
    }
}
