//! Line-oriented manifest format.
//!
//! ```text
//! #synthdetect-manifest 1
//! #meta <key> <value>
//! #class <index> <name> <real|seen|uf>
//! #generator <id> <gan|diffusion|other> <full|partial> <seen|unseen> <class-index|->
//! #columns entry_id path class_index generator_id category source fold
//! <record>...
//! ```
//!
//! Fields are tab separated, lines end in LF, text is UTF-8. Absent optional
//! fields are written as `-`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use super::taxonomy::{ClassDescriptor, ClassKind, ClassTaxonomy, GeneratorInfo};
use super::DatasetError;

pub const MANIFEST_MAGIC: &str = "#synthdetect-manifest";
pub const MANIFEST_VERSION: u32 = 1;
const COLUMNS: [&str; 7] = ["entry_id", "path", "class_index", "generator_id", "category", "source", "fold"];
const ABSENT: &str = "-";

/// One image record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub entry_id: String,
    pub path: String,
    pub class_index: usize,
    pub generator_id: Option<String>,
    pub category: String,
    pub source: String,
    pub fold: Option<usize>,
}

/// A taxonomy, its entries, and free-form provenance metadata.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub taxonomy: ClassTaxonomy,
    pub entries: Vec<ManifestEntry>,
    /// Ordered `key -> value` pairs written as `#meta` header lines.
    pub meta: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(taxonomy: ClassTaxonomy, entries: Vec<ManifestEntry>) -> Self {
        Self {
            taxonomy,
            entries,
            meta: Vec::new(),
        }
    }

    pub fn with_meta(mut self, meta: Vec<(String, String)>) -> Self {
        self.meta = meta;
        self
    }

    pub fn to_text(&self) -> Result<String, DatasetError> {
        write_manifest_string(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ViolationRule {
    DuplicateEntryId,
    ClassOutOfRange,
    RealWithGenerator,
    FakeWithoutGenerator,
    UnknownGenerator,
    UfGeneratorSeen,
    SeenClassMismatch,
}

impl ViolationRule {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationRule::DuplicateEntryId => "duplicate-entry-id",
            ViolationRule::ClassOutOfRange => "class-out-of-range",
            ViolationRule::RealWithGenerator => "real-with-generator",
            ViolationRule::FakeWithoutGenerator => "fake-without-generator",
            ViolationRule::UnknownGenerator => "unknown-generator",
            ViolationRule::UfGeneratorSeen => "uf-generator-seen",
            ViolationRule::SeenClassMismatch => "seen-class-mismatch",
        }
    }
}

impl fmt::Display for ViolationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Violation {
    pub entry_id: String,
    pub rule: ViolationRule,
}

/// Check every entry against the taxonomy. Violations are returned as data,
/// sorted by (entry_id, rule) so the result does not depend on entry order.
pub fn validate_manifest(entries: &[ManifestEntry], taxonomy: &ClassTaxonomy) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |entry_id: &str, rule| {
        out.push(Violation {
            entry_id: entry_id.to_string(),
            rule,
        })
    };

    let mut seen_ids = HashSet::new();
    let mut reported_dup = HashSet::new();
    for e in entries {
        if !seen_ids.insert(e.entry_id.as_str()) && reported_dup.insert(e.entry_id.as_str()) {
            push(&e.entry_id, ViolationRule::DuplicateEntryId);
        }

        let Some(kind) = taxonomy.class_kind(e.class_index) else {
            push(&e.entry_id, ViolationRule::ClassOutOfRange);
            continue;
        };
        match (kind, e.generator_id.as_deref()) {
            (ClassKind::Real, None) => {}
            (ClassKind::Real, Some(_)) => push(&e.entry_id, ViolationRule::RealWithGenerator),
            (_, None) => push(&e.entry_id, ViolationRule::FakeWithoutGenerator),
            (kind, Some(gid)) => match taxonomy.generator(gid) {
                None => push(&e.entry_id, ViolationRule::UnknownGenerator),
                Some(g) if kind == ClassKind::UnseenFake => {
                    if g.seen {
                        push(&e.entry_id, ViolationRule::UfGeneratorSeen);
                    }
                }
                Some(_) => {
                    if taxonomy.seen_generator_map().get(gid) != Some(&e.class_index) {
                        push(&e.entry_id, ViolationRule::SeenClassMismatch);
                    }
                }
            },
        }
    }
    out.sort();
    out
}

fn check_field(name: &str, value: &str) -> Result<(), DatasetError> {
    if value.is_empty() || value.contains(['\t', '\n', '\r']) {
        return Err(DatasetError::InvalidField {
            field: name.to_string(),
            value: value.to_string(),
        });
    }
    Ok(())
}

/// Serialize a manifest to its canonical text form.
pub fn write_manifest_string(manifest: &Manifest) -> Result<String, DatasetError> {
    let tax = &manifest.taxonomy;
    let mut s = String::new();
    s.push_str(&format!("{MANIFEST_MAGIC}\t{MANIFEST_VERSION}\n"));
    for (k, v) in &manifest.meta {
        check_field("meta key", k)?;
        if v.contains(['\n', '\r']) {
            return Err(DatasetError::InvalidField {
                field: format!("meta {k}"),
                value: v.clone(),
            });
        }
        s.push_str(&format!("#meta\t{k}\t{v}\n"));
    }
    for (i, c) in tax.classes().iter().enumerate() {
        check_field("class name", &c.name)?;
        s.push_str(&format!("#class\t{i}\t{}\t{}\n", c.name, c.kind.as_str()));
    }
    for g in tax.generators() {
        check_field("generator id", &g.id)?;
        let class = tax
            .seen_generator_map()
            .get(&g.id)
            .map(|c| c.to_string())
            .unwrap_or_else(|| ABSENT.to_string());
        s.push_str(&format!(
            "#generator\t{}\t{}\t{}\t{}\t{}\n",
            g.id,
            g.family.as_str(),
            g.manipulation.as_str(),
            if g.seen { "seen" } else { "unseen" },
            class
        ));
    }
    s.push_str("#columns\t");
    s.push_str(&COLUMNS.join("\t"));
    s.push('\n');

    for e in &manifest.entries {
        check_field("entry_id", &e.entry_id)?;
        check_field("path", &e.path)?;
        check_field("category", &e.category)?;
        check_field("source", &e.source)?;
        if let Some(g) = &e.generator_id {
            check_field("generator_id", g)?;
            if g == ABSENT {
                return Err(DatasetError::InvalidField {
                    field: "generator_id".into(),
                    value: g.clone(),
                });
            }
        }
        if e.class_index >= tax.num_classes() {
            return Err(DatasetError::Schema(format!(
                "entry `{}` has class index {} outside taxonomy of {}",
                e.entry_id,
                e.class_index,
                tax.num_classes()
            )));
        }
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            e.entry_id,
            e.path,
            e.class_index,
            e.generator_id.as_deref().unwrap_or(ABSENT),
            e.category,
            e.source,
            e.fold.map(|f| f.to_string()).unwrap_or_else(|| ABSENT.to_string())
        ));
    }
    Ok(s)
}

pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let text = write_manifest_string(manifest)?;
    fs::write(path.as_ref(), text).map_err(|e| DatasetError::io(path.as_ref(), e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest, DatasetError> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| DatasetError::io(path.as_ref(), e))?;
    parse_manifest(&text)
}

fn parse_err(line: usize, field: &str, message: impl Into<String>) -> DatasetError {
    DatasetError::Parse {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, field: &str, s: &str) -> Result<T, DatasetError> {
    s.parse().map_err(|_| parse_err(line, field, format!("not a number: `{s}`")))
}

fn expect_fields<'a>(line: usize, raw: &'a str, n: usize, what: &str) -> Result<Vec<&'a str>, DatasetError> {
    let parts: Vec<&str> = raw.split('\t').collect();
    if parts.len() != n {
        return Err(parse_err(
            line,
            what,
            format!("expected {n} tab-separated fields, found {}", parts.len()),
        ));
    }
    Ok(parts)
}

/// Parse manifest text. Errors carry 1-based line numbers.
pub fn parse_manifest(text: &str) -> Result<Manifest, DatasetError> {
    let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l)).peekable();

    let (_, first) = lines.next().ok_or_else(|| parse_err(1, "header", "empty file"))?;
    let head = expect_fields(1, first, 2, "header")?;
    if head[0] != MANIFEST_MAGIC {
        return Err(parse_err(1, "header", format!("expected `{MANIFEST_MAGIC}`")));
    }
    let version: u32 = parse_num(1, "version", head[1])?;
    if version != MANIFEST_VERSION {
        return Err(parse_err(1, "version", format!("unsupported manifest version {version}")));
    }

    let mut meta = Vec::new();
    let mut classes = Vec::new();
    let mut generators = Vec::new();
    let mut seen_map = BTreeMap::new();
    let mut saw_columns = false;

    while let Some(&(n, raw)) = lines.peek() {
        if !raw.starts_with('#') {
            break;
        }
        lines.next();
        let tag = raw.split('\t').next().unwrap_or("");
        match tag {
            "#meta" => {
                let mut it = raw.splitn(3, '\t');
                it.next();
                let k = it.next().ok_or_else(|| parse_err(n, "meta", "missing key"))?;
                let v = it.next().ok_or_else(|| parse_err(n, "meta", "missing value"))?;
                meta.push((k.to_string(), v.to_string()));
            }
            "#class" => {
                let f = expect_fields(n, raw, 4, "class")?;
                let idx: usize = parse_num(n, "class index", f[1])?;
                if idx != classes.len() {
                    return Err(parse_err(n, "class index", format!("expected {}, found {idx}", classes.len())));
                }
                let kind: ClassKind = f[3].parse().map_err(|m: String| parse_err(n, "class kind", m))?;
                classes.push(ClassDescriptor {
                    name: f[2].to_string(),
                    kind,
                });
            }
            "#generator" => {
                let f = expect_fields(n, raw, 6, "generator")?;
                let family = f[2].parse().map_err(|m: String| parse_err(n, "family", m))?;
                let manipulation = f[3].parse().map_err(|m: String| parse_err(n, "manipulation", m))?;
                let seen = match f[4] {
                    "seen" => true,
                    "unseen" => false,
                    other => return Err(parse_err(n, "seen", format!("expected seen|unseen, found `{other}`"))),
                };
                if f[5] != ABSENT {
                    seen_map.insert(f[1].to_string(), parse_num(n, "generator class", f[5])?);
                }
                generators.push(GeneratorInfo {
                    id: f[1].to_string(),
                    family,
                    manipulation,
                    seen,
                });
            }
            "#columns" => {
                let f: Vec<&str> = raw.split('\t').skip(1).collect();
                if f != COLUMNS {
                    return Err(parse_err(n, "columns", "unexpected column layout"));
                }
                saw_columns = true;
            }
            other => return Err(parse_err(n, "header", format!("unknown header tag `{other}`"))),
        }
    }
    if !saw_columns {
        return Err(parse_err(1, "columns", "missing #columns header"));
    }

    let taxonomy = ClassTaxonomy::new(classes, generators, seen_map)?;

    let mut entries = Vec::new();
    for (n, raw) in lines {
        if raw.is_empty() {
            continue;
        }
        let f = expect_fields(n, raw, 7, "record")?;
        let class_index: usize = parse_num(n, "class_index", f[2])?;
        if class_index >= taxonomy.num_classes() {
            return Err(DatasetError::Schema(format!(
                "line {n}: class index {class_index} outside taxonomy of {}",
                taxonomy.num_classes()
            )));
        }
        entries.push(ManifestEntry {
            entry_id: f[0].to_string(),
            path: f[1].to_string(),
            class_index,
            generator_id: (f[3] != ABSENT).then(|| f[3].to_string()),
            category: f[4].to_string(),
            source: f[5].to_string(),
            fold: if f[6] == ABSENT {
                None
            } else {
                Some(parse_num(n, "fold", f[6])?)
            },
        });
    }

    Ok(Manifest { taxonomy, entries, meta })
}

/// Distinct generator ids present among `entries`.
pub fn generator_ids(entries: &[ManifestEntry]) -> BTreeSet<&str> {
    entries.iter().filter_map(|e| e.generator_id.as_deref()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::taxonomy::{GeneratorFamily, Manipulation};

    fn taxonomy() -> ClassTaxonomy {
        let gens = vec![
            GeneratorInfo::new("g0", GeneratorFamily::Gan, Manipulation::Full, true),
            GeneratorInfo::new("g1", GeneratorFamily::Diffusion, Manipulation::Full, true),
            GeneratorInfo::new("g2", GeneratorFamily::Other, Manipulation::Partial, false),
        ];
        ClassTaxonomy::from_generators(gens).unwrap()
    }

    fn entry(id: &str, class: usize, gen: Option<&str>) -> ManifestEntry {
        ManifestEntry {
            entry_id: id.into(),
            path: format!("img/{id}.png"),
            class_index: class,
            generator_id: gen.map(String::from),
            category: "faces".into(),
            source: "unit".into(),
            fold: None,
        }
    }

    #[test]
    fn real_without_generator_is_clean() {
        assert!(validate_manifest(&[entry("a", 0, None)], &taxonomy()).is_empty());
    }

    #[test]
    fn real_with_generator_is_flagged() {
        let v = validate_manifest(&[entry("a", 0, Some("g1"))], &taxonomy());
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule.as_str(), "real-with-generator");
        assert_eq!(v[0].entry_id, "a");
    }

    #[test]
    fn uf_entry_with_seen_generator_is_flagged() {
        let v = validate_manifest(&[entry("a", 3, Some("g0"))], &taxonomy());
        assert_eq!(v[0].rule, ViolationRule::UfGeneratorSeen);
    }

    #[test]
    fn duplicates_and_mismatches() {
        let es = [entry("a", 1, Some("g1")), entry("a", 0, None), entry("b", 2, None)];
        let rules: Vec<_> = validate_manifest(&es, &taxonomy()).into_iter().map(|v| v.rule).collect();
        assert_eq!(
            rules,
            vec![
                ViolationRule::DuplicateEntryId,
                ViolationRule::SeenClassMismatch,
                ViolationRule::FakeWithoutGenerator
            ]
        );
    }

    #[test]
    fn empty_manifest_is_header_only() {
        let m = Manifest::new(taxonomy(), vec![]);
        let text = m.to_text().unwrap();
        assert!(text.lines().all(|l| l.starts_with('#')));
        assert_eq!(parse_manifest(&text).unwrap(), m);
    }

    #[test]
    fn three_entry_round_trip() {
        let mut es = vec![entry("a", 0, None), entry("b", 1, Some("g0")), entry("c", 3, Some("g2"))];
        es[2].fold = Some(2);
        let m = Manifest::new(taxonomy(), es).with_meta(vec![("seed".into(), "7".into())]);
        assert_eq!(parse_manifest(&m.to_text().unwrap()).unwrap(), m);
    }

    #[test]
    fn parse_error_names_line_and_field() {
        let m = Manifest::new(taxonomy(), vec![entry("a", 0, None)]);
        let text = m.to_text().unwrap().replace("a\timg/a.png\t0", "a\timg/a.png\tzero");
        match parse_manifest(&text) {
            Err(DatasetError::Parse { line, field, .. }) => {
                assert_eq!(field, "class_index");
                assert_eq!(line, text.lines().count());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_class_index_is_schema_error() {
        let m = Manifest::new(taxonomy(), vec![entry("a", 0, None)]);
        let text = m.to_text().unwrap().replace("a\timg/a.png\t0", "a\timg/a.png\t9");
        assert!(matches!(parse_manifest(&text), Err(DatasetError::Schema(_))));
    }

    #[test]
    fn tab_in_field_is_rejected_on_write() {
        let mut e = entry("a", 0, None);
        e.category = "has\ttab".into();
        assert!(Manifest::new(taxonomy(), vec![e]).to_text().is_err());
    }
}
