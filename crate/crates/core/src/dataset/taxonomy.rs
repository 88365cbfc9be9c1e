//! Class taxonomy and generator metadata.
//!
//! The class list is ordered: index 0 is the real class, followed by one class
//! per seen generator, followed by the single unseen-fake (UF) class that
//! collects every generator excluded from the seen set.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DatasetError;

/// Architectural family of a generative model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GeneratorFamily {
    Gan,
    Diffusion,
    Other,
}

impl GeneratorFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            GeneratorFamily::Gan => "gan",
            GeneratorFamily::Diffusion => "diffusion",
            GeneratorFamily::Other => "other",
        }
    }
}

impl FromStr for GeneratorFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gan" => Ok(GeneratorFamily::Gan),
            "diffusion" => Ok(GeneratorFamily::Diffusion),
            "other" => Ok(GeneratorFamily::Other),
            _ => Err(format!("unknown generator family `{s}`")),
        }
    }
}

/// Whether a generator synthesizes the whole image or edits part of a real one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Manipulation {
    Full,
    Partial,
}

impl Manipulation {
    pub fn as_str(self) -> &'static str {
        match self {
            Manipulation::Full => "full",
            Manipulation::Partial => "partial",
        }
    }
}

impl FromStr for Manipulation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Manipulation::Full),
            "partial" => Ok(Manipulation::Partial),
            _ => Err(format!("unknown manipulation kind `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub id: String,
    pub family: GeneratorFamily,
    pub manipulation: Manipulation,
    /// Seen generators get their own class and appear in training.
    pub seen: bool,
}

impl GeneratorInfo {
    pub fn new(id: impl Into<String>, family: GeneratorFamily, manipulation: Manipulation, seen: bool) -> Self {
        Self {
            id: id.into(),
            family,
            manipulation,
            seen,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassKind {
    Real,
    SeenFake,
    UnseenFake,
}

impl ClassKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassKind::Real => "real",
            ClassKind::SeenFake => "seen",
            ClassKind::UnseenFake => "uf",
        }
    }
}

impl FromStr for ClassKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "real" => Ok(ClassKind::Real),
            "seen" => Ok(ClassKind::SeenFake),
            "uf" => Ok(ClassKind::UnseenFake),
            _ => Err(format!("unknown class kind `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDescriptor {
    pub name: String,
    pub kind: ClassKind,
}

/// Ordered class set with the real / unseen-fake index contract.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTaxonomy {
    classes: Vec<ClassDescriptor>,
    real_index: usize,
    uf_index: usize,
    generators: Vec<GeneratorInfo>,
    seen_generator_map: BTreeMap<String, usize>,
}

impl ClassTaxonomy {
    /// Build the canonical layout from a generator list: `real`, then one
    /// class per seen generator in list order, then `unseen_fake`.
    pub fn from_generators(generators: Vec<GeneratorInfo>) -> Result<Self, DatasetError> {
        let mut classes = vec![ClassDescriptor {
            name: "real".to_string(),
            kind: ClassKind::Real,
        }];
        let mut seen_map = BTreeMap::new();
        for g in generators.iter().filter(|g| g.seen) {
            seen_map.insert(g.id.clone(), classes.len());
            classes.push(ClassDescriptor {
                name: g.id.clone(),
                kind: ClassKind::SeenFake,
            });
        }
        classes.push(ClassDescriptor {
            name: "unseen_fake".to_string(),
            kind: ClassKind::UnseenFake,
        });
        Self::new(classes, generators, seen_map)
    }

    /// Assemble a taxonomy from explicit parts, checking every invariant.
    pub fn new(
        classes: Vec<ClassDescriptor>,
        generators: Vec<GeneratorInfo>,
        seen_generator_map: BTreeMap<String, usize>,
    ) -> Result<Self, DatasetError> {
        let bad = |msg: String| Err(DatasetError::Taxonomy(msg));

        let reals: Vec<usize> = positions(&classes, ClassKind::Real);
        let ufs: Vec<usize> = positions(&classes, ClassKind::UnseenFake);
        if reals.len() != 1 {
            return bad(format!("expected exactly one real class, found {}", reals.len()));
        }
        if ufs.len() != 1 {
            return bad(format!("expected exactly one unseen-fake class, found {}", ufs.len()));
        }

        let mut ids = BTreeSet::new();
        for g in &generators {
            if g.id.is_empty() {
                return bad("generator id must be non-empty".to_string());
            }
            if !ids.insert(g.id.as_str()) {
                return bad(format!("duplicate generator id `{}`", g.id));
            }
        }

        let mut claimed = BTreeSet::new();
        for (id, &idx) in &seen_generator_map {
            let Some(g) = generators.iter().find(|g| &g.id == id) else {
                return bad(format!("seen map references unknown generator `{id}`"));
            };
            if !g.seen {
                return bad(format!("generator `{id}` is unseen but mapped to a seen class"));
            }
            match classes.get(idx) {
                Some(c) if c.kind == ClassKind::SeenFake => {}
                _ => return bad(format!("generator `{id}` maps to {idx}, which is not a seen-fake class")),
            }
            if !claimed.insert(idx) {
                return bad(format!("class {idx} claimed by more than one seen generator"));
            }
        }
        for g in generators.iter().filter(|g| g.seen) {
            if !seen_generator_map.contains_key(&g.id) {
                return bad(format!("seen generator `{}` has no class", g.id));
            }
        }
        let n_seen_classes = classes.iter().filter(|c| c.kind == ClassKind::SeenFake).count();
        if n_seen_classes != claimed.len() {
            return bad("every seen-fake class needs exactly one generator".to_string());
        }

        Ok(Self {
            classes,
            real_index: reals[0],
            uf_index: ufs[0],
            generators,
            seen_generator_map,
        })
    }

    pub fn classes(&self) -> &[ClassDescriptor] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Number of seen-fake classes (K_seen).
    pub fn k_seen(&self) -> usize {
        self.seen_generator_map.len()
    }

    pub fn real_index(&self) -> usize {
        self.real_index
    }

    pub fn uf_index(&self) -> usize {
        self.uf_index
    }

    pub fn generators(&self) -> &[GeneratorInfo] {
        &self.generators
    }

    pub fn generator(&self, id: &str) -> Option<&GeneratorInfo> {
        self.generators.iter().find(|g| g.id == id)
    }

    pub fn seen_generator_map(&self) -> &BTreeMap<String, usize> {
        &self.seen_generator_map
    }

    pub fn class_kind(&self, index: usize) -> Option<ClassKind> {
        self.classes.get(index).map(|c| c.kind)
    }

    /// Class a generator's images are labeled with: its own class when seen,
    /// the UF class otherwise.
    pub fn class_for_generator(&self, id: &str) -> Option<usize> {
        let g = self.generator(id)?;
        if g.seen {
            self.seen_generator_map.get(id).copied()
        } else {
            Some(self.uf_index)
        }
    }
}

fn positions(classes: &[ClassDescriptor], kind: ClassKind) -> Vec<usize> {
    classes
        .iter()
        .enumerate()
        .filter(|(_, c)| c.kind == kind)
        .map(|(i, _)| i)
        .collect()
}

impl fmt::Display for ClassTaxonomy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.classes.iter().map(|c| c.name.as_str()).collect();
        write!(f, "[{}]", names.join(", "))
    }
}
