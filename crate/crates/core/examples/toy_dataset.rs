//! Write the default toy dataset to disk and show where each generator's
//! grating sits in the spectrum.
//!
//! cargo run --release --example toy_dataset -- [out_dir]

use std::path::PathBuf;

use synthdetect::forge::{artifact_energy, synth_dataset, synth_image, ToySpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let out: PathBuf = std::env::args().nth(1).map_or_else(|| tmp.path().join("toy"), PathBuf::from);
    let spec = ToySpec::default();
    let manifest = synth_dataset(&spec, &out, 1, &[])?;
    println!("{} entries in {} classes under {}", manifest.entries.len(), manifest.taxonomy.num_classes(), out.display());
    for c in manifest.taxonomy.classes() {
        let n = manifest.entries.iter().filter(|e| manifest.taxonomy.classes()[e.class_index].name == c.name).count();
        println!("  {:<12} {:?} {n}", c.name, c.kind);
    }

    let real = synth_image(&spec, None, "probe");
    println!("{:<4} {:>8} {:>8} {:>8} {:>12}", "gen", "fx", "fy", "partial", "energy x/real");
    for g in 0..spec.n_generators {
        let a = spec.artifact(g);
        let fake = synth_image(&spec, Some(g), "probe");
        let ratio = artifact_energy(&fake, a.fx, a.fy) / artifact_energy(&real, a.fx, a.fy);
        println!("g{g:<3} {:>8} {:>8} {:>8} {ratio:>12.1}", a.fx, a.fy, a.partial);
    }
    Ok(())
}
