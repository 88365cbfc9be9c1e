//! Hybrid split of the toy manifest: real and seen-generator classes are
//! dealt per class, unseen generators move between folds as whole groups.
//!
//! cargo run --release --example hybrid_split -- [folds]

use std::collections::BTreeMap;

use synthdetect::forge::ToySpec;
use synthdetect::split::assign_folds;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let folds: usize = std::env::args().nth(1).map_or(Ok(2), |s| s.parse())?;
    let spec = ToySpec::default();
    let entries = spec.entries()?;
    let taxonomy = spec.taxonomy()?;
    let a = assign_folds(&entries, &taxonomy, folds, spec.seed)?;

    let mut counts: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for e in &entries {
        let class = &taxonomy.classes()[e.class_index].name;
        let key = match &e.generator_id {
            Some(g) if e.class_index == taxonomy.uf_index() => format!("{class}/{g}"),
            _ => class.clone(),
        };
        counts.entry(key).or_insert_with(|| vec![0; folds])[a.fold_of(&e.entry_id).expect("assigned")] += 1;
    }
    println!("{:<20} {}", "class", (0..folds).map(|f| format!("fold{f:<3}")).collect::<Vec<_>>().join(" "));
    for (k, v) in &counts {
        println!("{k:<20} {}", v.iter().map(|n| format!("{n:<7}")).collect::<Vec<_>>().join(" "));
    }
    Ok(())
}
