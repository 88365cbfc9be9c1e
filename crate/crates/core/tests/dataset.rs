use proptest::prelude::*;
use synthdetect::dataset::{
    parse_manifest, read_manifest, validate_manifest, write_manifest, ClassKind, ClassTaxonomy, GeneratorFamily,
    GeneratorInfo, Manifest, ManifestEntry, Manipulation, ViolationRule,
};
use rand::RngCore;
use synthdetect::rng::{derive_rng, Draw};

fn taxonomy(n_gens: usize, n_seen: usize) -> ClassTaxonomy {
    let families = [GeneratorFamily::Gan, GeneratorFamily::Diffusion, GeneratorFamily::Other];
    let gens = (0..n_gens)
        .map(|g| {
            let manip = if g % 4 == 3 { Manipulation::Partial } else { Manipulation::Full };
            GeneratorInfo::new(format!("gen{g}"), families[g % 3], manip, g < n_seen)
        })
        .collect();
    ClassTaxonomy::from_generators(gens).unwrap()
}

/// A valid entry for class kind `pick`: real, a seen generator, or an
/// unseen generator routed to the UF class.
fn valid_entry(tax: &ClassTaxonomy, i: usize, pick: u64, category: &str, fold: Option<usize>) -> ManifestEntry {
    let gens = tax.generators();
    let seen: Vec<_> = gens.iter().filter(|g| g.seen).collect();
    let unseen: Vec<_> = gens.iter().filter(|g| !g.seen).collect();
    let (class_index, generator_id) = match pick % 3 {
        0 => (tax.real_index(), None),
        1 => {
            let g = seen[(pick / 3) as usize % seen.len()];
            (tax.class_for_generator(&g.id).unwrap(), Some(g.id.clone()))
        }
        _ => {
            let g = unseen[(pick / 3) as usize % unseen.len()];
            (tax.uf_index(), Some(g.id.clone()))
        }
    };
    ManifestEntry {
        entry_id: format!("e{i:05}"),
        path: format!("img/e{i:05}.png"),
        class_index,
        generator_id,
        category: category.to_string(),
        source: format!("run-{}", pick % 7),
        fold,
    }
}

fn random_manifest(seed: u64, n: usize) -> Manifest {
    let tax = taxonomy(7, 5);
    let mut rng = derive_rng(seed, "manifest");
    let entries = (0..n)
        .map(|i| {
            let fold = rng.bernoulli(0.5).then(|| rng.uniform_usize(0, 3));
            let cat = ["faces", "animals", "vehicles", "scenes"][rng.uniform_usize(0, 3)];
            valid_entry(&tax, i, rng.next_u64(), cat, fold)
        })
        .collect();
    Manifest::new(tax, entries).with_meta(vec![("origin".into(), "test".into())])
}

#[test]
fn full_configuration_has_seven_classes() {
    let tax = taxonomy(25, 5);
    assert_eq!(tax.num_classes(), 7);
    assert_eq!(tax.class_kind(tax.real_index()), Some(ClassKind::Real));
    assert_eq!(tax.class_kind(tax.uf_index()), Some(ClassKind::UnseenFake));
    assert_ne!(tax.real_index(), tax.uf_index());
}

#[test]
fn thousand_entry_round_trip() {
    let m = random_manifest(3, 1000);
    assert!(validate_manifest(&m.entries, &m.taxonomy).is_empty());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.tsv");
    write_manifest(&m, &path).unwrap();
    assert_eq!(read_manifest(&path).unwrap(), m);
}

#[test]
fn injected_faults_are_each_reported() {
    for seed in 0..10 {
        let m = random_manifest(seed, 60);
        let tax = &m.taxonomy;
        let mut entries = m.entries.clone();
        let mut rng = derive_rng(seed, "faults");
        let real = entries.iter().position(|e| e.class_index == tax.real_index()).unwrap();
        let uf = entries.iter().position(|e| e.class_index == tax.uf_index()).unwrap();
        let seen = entries
            .iter()
            .position(|e| tax.class_kind(e.class_index) == Some(ClassKind::SeenFake))
            .unwrap();
        let seen_gen = tax.generators().iter().find(|g| g.seen).unwrap().id.clone();
        let expected = match rng.uniform_u64(0, 4) {
            0 => {
                entries[real].generator_id = Some(seen_gen);
                (entries[real].entry_id.clone(), ViolationRule::RealWithGenerator)
            }
            1 => {
                entries[uf].generator_id = Some(seen_gen);
                (entries[uf].entry_id.clone(), ViolationRule::UfGeneratorSeen)
            }
            2 => {
                entries[seen].generator_id = None;
                (entries[seen].entry_id.clone(), ViolationRule::FakeWithoutGenerator)
            }
            3 => {
                entries[seen].generator_id = Some("nobody".into());
                (entries[seen].entry_id.clone(), ViolationRule::UnknownGenerator)
            }
            _ => {
                let id = entries[0].entry_id.clone();
                entries[1].entry_id = id.clone();
                (id, ViolationRule::DuplicateEntryId)
            }
        };
        let report = validate_manifest(&entries, tax);
        assert!(
            report.iter().any(|v| (v.entry_id.clone(), v.rule) == expected),
            "seed {seed}: {expected:?} not in {report:?}"
        );
    }
}

#[test]
fn malformed_record_names_its_line() {
    let text = random_manifest(1, 3).to_text().unwrap();
    let n_lines = text.lines().count();
    let err = parse_manifest(&format!("{text}e9\tonly-two\n")).unwrap_err().to_string();
    assert!(err.contains(&format!("line {}", n_lines + 1)), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn read_after_write_is_identity(seed in any::<u64>(), n in 0usize..200) {
        let m = random_manifest(seed, n);
        let text = m.to_text().unwrap();
        prop_assert_eq!(parse_manifest(&text).unwrap(), m.clone());
        prop_assert_eq!(parse_manifest(&text).unwrap().to_text().unwrap(), text);
    }

    #[test]
    fn validation_ignores_entry_order(seed in any::<u64>(), n in 1usize..80) {
        let m = random_manifest(seed, n);
        let mut entries = m.entries.clone();
        entries[0].generator_id = Some("ghost".into());
        if n > 2 {
            entries[2].entry_id = entries[1].entry_id.clone();
        }
        let a = validate_manifest(&entries, &m.taxonomy);
        derive_rng(seed, "order").shuffle(&mut entries);
        prop_assert_eq!(a, validate_manifest(&entries, &m.taxonomy));
    }
}
