//! Hybrid cross-validation.
//!
//! Real and seen-fake entries are split with a seeded per-class K-fold, so a
//! seen generator contributes to both train and test of every fold. Unseen
//! fake entries are split with a group K-fold keyed by generator: each
//! generator lands in exactly one test fold and never appears in that fold's
//! training side.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::dataset::{ClassTaxonomy, ManifestEntry};
use crate::rng::{derive_rng, Draw};

pub const ASSIGNMENT_MAGIC: &str = "#synthdetect-assignment";
pub const ASSIGNMENT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum SplitError {
    #[error("n_folds must be at least 2, got {0}")]
    TooFewFolds(usize),
    #[error("insufficient-groups: {groups} unseen-fake generators for {folds} folds")]
    InsufficientGroups { groups: usize, folds: usize },
    #[error("class-too-small: class {class} has {count} entries for {folds} folds")]
    ClassTooSmall { class: usize, count: usize, folds: usize },
    #[error("unseen-fake entry `{0}` has no generator id")]
    MissingGenerator(String),
    #[error("assignment file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldAssignment {
    pub n_folds: usize,
    pub seed: u64,
    pub assignment: BTreeMap<String, usize>,
    pub meta: Vec<(String, String)>,
}

impl FoldAssignment {
    pub fn fold_of(&self, entry_id: &str) -> Option<usize> {
        self.assignment.get(entry_id).copied()
    }
}

/// Assign every entry a fold in `0..n_folds`.
///
/// Entries are canonically sorted by `entry_id` first, so the result does not
/// depend on input order. Non-UF classes are shuffled with a stream derived
/// from `(seed, "kfold-class-<index>")` and dealt round-robin. UF generators
/// are placed largest-first into the fold with the fewest UF entries so far
/// (ties go to the lowest fold index).
pub fn assign_folds(
    entries: &[ManifestEntry],
    taxonomy: &ClassTaxonomy,
    n_folds: usize,
    seed: u64,
) -> Result<FoldAssignment, SplitError> {
    if n_folds < 2 {
        return Err(SplitError::TooFewFolds(n_folds));
    }
    let mut sorted: Vec<&ManifestEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| a.entry_id.cmp(&b.entry_id));

    let uf = taxonomy.uf_index();
    let mut by_class: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    let mut uf_groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for e in &sorted {
        if e.class_index == uf {
            let g = e
                .generator_id
                .as_deref()
                .ok_or_else(|| SplitError::MissingGenerator(e.entry_id.clone()))?;
            uf_groups.entry(g).or_default().push(&e.entry_id);
        } else {
            by_class.entry(e.class_index).or_default().push(&e.entry_id);
        }
    }

    let mut assignment = BTreeMap::new();
    for (class, mut ids) in by_class {
        if ids.len() < n_folds {
            return Err(SplitError::ClassTooSmall {
                class,
                count: ids.len(),
                folds: n_folds,
            });
        }
        derive_rng(seed, &format!("kfold-class-{class}")).shuffle(&mut ids);
        for (i, id) in ids.into_iter().enumerate() {
            assignment.insert(id.to_string(), i % n_folds);
        }
    }

    if !uf_groups.is_empty() {
        if uf_groups.len() < n_folds {
            return Err(SplitError::InsufficientGroups {
                groups: uf_groups.len(),
                folds: n_folds,
            });
        }
        for (gen, fold) in group_k_fold(&uf_groups.iter().map(|(g, v)| (*g, v.len())).collect::<Vec<_>>(), n_folds) {
            for id in &uf_groups[gen] {
                assignment.insert(id.to_string(), fold);
            }
        }
    }

    Ok(FoldAssignment {
        n_folds,
        seed,
        assignment,
        meta: Vec::new(),
    })
}

/// Greedy largest-group-first balancing. Returns `(group, fold)` pairs.
pub fn group_k_fold<'a>(groups: &[(&'a str, usize)], n_folds: usize) -> Vec<(&'a str, usize)> {
    let mut order: Vec<(&str, usize)> = groups.to_vec();
    order.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut load = vec![0usize; n_folds];
    order
        .into_iter()
        .map(|(g, n)| {
            let fold = (0..n_folds).min_by_key(|&f| (load[f], f)).unwrap();
            load[fold] += n;
            (g, fold)
        })
        .collect()
}

/// Train / test sides of `fold`. Entries missing from the assignment are on
/// neither side.
pub fn fold_view<'a>(
    entries: &'a [ManifestEntry],
    assignment: &FoldAssignment,
    fold: usize,
) -> (Vec<&'a ManifestEntry>, Vec<&'a ManifestEntry>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for e in entries {
        match assignment.fold_of(&e.entry_id) {
            Some(f) if f == fold => test.push(e),
            Some(_) => train.push(e),
            None => {}
        }
    }
    (train, test)
}

pub fn write_assignment_string(a: &FoldAssignment) -> String {
    let mut s = format!("{ASSIGNMENT_MAGIC}\t{ASSIGNMENT_VERSION}\n");
    s.push_str(&format!("#n_folds\t{}\n#seed\t{}\n", a.n_folds, a.seed));
    for (k, v) in &a.meta {
        s.push_str(&format!("#meta\t{k}\t{v}\n"));
    }
    for (id, f) in &a.assignment {
        s.push_str(&format!("{id}\t{f}\n"));
    }
    s
}

pub fn write_assignment(a: &FoldAssignment, path: impl AsRef<Path>) -> Result<(), SplitError> {
    let path = path.as_ref();
    fs::write(path, write_assignment_string(a)).map_err(|source| SplitError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn parse_assignment(text: &str) -> Result<FoldAssignment, SplitError> {
    let err = |line: usize, message: String| SplitError::Parse { line, message };
    let mut n_folds = None;
    let mut seed = None;
    let mut meta = Vec::new();
    let mut assignment = BTreeMap::new();
    for (i, raw) in text.split('\n').enumerate() {
        let line = i + 1;
        if raw.is_empty() {
            continue;
        }
        let f: Vec<&str> = raw.splitn(3, '\t').collect();
        if line == 1 {
            if f.len() != 2 || f[0] != ASSIGNMENT_MAGIC || f[1] != ASSIGNMENT_VERSION.to_string() {
                return Err(err(line, "missing or unsupported header".into()));
            }
            continue;
        }
        match f[0] {
            "#n_folds" => n_folds = Some(f.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| err(line, "bad n_folds".into()))?),
            "#seed" => seed = Some(f.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| err(line, "bad seed".into()))?),
            "#meta" if f.len() == 3 => meta.push((f[1].to_string(), f[2].to_string())),
            tag if tag.starts_with('#') => return Err(err(line, format!("unknown header `{tag}`"))),
            id => {
                let fold: usize = f
                    .get(1)
                    .filter(|_| f.len() == 2)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| err(line, "expected `entry_id<TAB>fold`".into()))?;
                assignment.insert(id.to_string(), fold);
            }
        }
    }
    let n_folds: usize = n_folds.ok_or_else(|| err(1, "missing #n_folds".into()))?;
    if let Some((id, f)) = assignment.iter().find(|(_, &f)| f >= n_folds) {
        return Err(err(0, format!("entry `{id}` has fold {f} >= n_folds {n_folds}")));
    }
    Ok(FoldAssignment {
        n_folds,
        seed: seed.ok_or_else(|| err(1, "missing #seed".into()))?,
        assignment,
        meta,
    })
}

pub fn read_assignment(path: impl AsRef<Path>) -> Result<FoldAssignment, SplitError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| SplitError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_assignment(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{GeneratorFamily, GeneratorInfo, Manipulation};
    use std::collections::BTreeSet;

    fn taxonomy(n_unseen: usize) -> ClassTaxonomy {
        let mut g = vec![GeneratorInfo::new("s0", GeneratorFamily::Gan, Manipulation::Full, true)];
        for i in 0..n_unseen {
            g.push(GeneratorInfo::new(format!("u{i}"), GeneratorFamily::Diffusion, Manipulation::Full, false));
        }
        ClassTaxonomy::from_generators(g).unwrap()
    }

    fn e(id: String, class: usize, gen: Option<String>) -> ManifestEntry {
        ManifestEntry {
            path: format!("{id}.png"),
            entry_id: id,
            class_index: class,
            generator_id: gen,
            category: "c".into(),
            source: "s".into(),
            fold: None,
        }
    }

    #[test]
    fn eight_reals_into_four_folds() {
        let t = taxonomy(0);
        let es: Vec<_> = (0..8).map(|i| e(format!("r{i}"), 0, None)).collect();
        let a = assign_folds(&es, &t, 4, 0).unwrap();
        for f in 0..4 {
            assert_eq!(a.assignment.values().filter(|&&v| v == f).count(), 2);
        }
    }

    #[test]
    fn four_equal_groups_one_per_fold() {
        let t = taxonomy(4);
        let uf = t.uf_index();
        let mut es: Vec<_> = (0..8).map(|i| e(format!("r{i}"), 0, None)).collect();
        for g in 0..4 {
            for j in 0..5 {
                es.push(e(format!("u{g}_{j}"), uf, Some(format!("u{g}"))));
            }
        }
        let a = assign_folds(&es, &t, 4, 11).unwrap();
        for fold in 0..4 {
            let (train, test) = fold_view(&es, &a, fold);
            let gens = |v: &[&ManifestEntry]| -> BTreeSet<String> {
                v.iter().filter(|x| x.class_index == uf).filter_map(|x| x.generator_id.clone()).collect()
            };
            assert_eq!(gens(&test).len(), 1);
            assert_eq!(gens(&train).len(), 3);
            assert!(gens(&test).is_disjoint(&gens(&train)));
        }
    }

    #[test]
    fn errors() {
        let t = taxonomy(2);
        let uf = t.uf_index();
        let mut es: Vec<_> = (0..8).map(|i| e(format!("r{i}"), 0, None)).collect();
        es.push(e("a".into(), uf, Some("u0".into())));
        es.push(e("b".into(), uf, Some("u1".into())));
        assert!(matches!(
            assign_folds(&es, &t, 4, 0),
            Err(SplitError::InsufficientGroups { groups: 2, folds: 4 })
        ));
        let es: Vec<_> = (0..3).map(|i| e(format!("r{i}"), 0, None)).collect();
        assert!(matches!(assign_folds(&es, &t, 4, 0), Err(SplitError::ClassTooSmall { .. })));
        assert!(matches!(assign_folds(&es, &t, 1, 0), Err(SplitError::TooFewFolds(1))));
    }

    #[test]
    fn greedy_prefers_lightest_fold() {
        let groups = [("a", 10), ("b", 7), ("c", 5), ("d", 4), ("e", 1)];
        let got = group_k_fold(&groups, 2);
        assert_eq!(got, vec![("a", 0), ("b", 1), ("c", 1), ("d", 0), ("e", 1)]);
    }

    #[test]
    fn assignment_file_round_trip() {
        let t = taxonomy(0);
        let es: Vec<_> = (0..9).map(|i| e(format!("r{i}"), 0, None)).collect();
        let mut a = assign_folds(&es, &t, 3, 5).unwrap();
        a.meta.push(("tool".into(), "x y".into()));
        let back = parse_assignment(&write_assignment_string(&a)).unwrap();
        assert_eq!(back, a);
        assert!(parse_assignment("garbage\n").is_err());
    }
}
