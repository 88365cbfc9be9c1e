use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{apply_impairment, ImpairError, ImpairmentConfig};
use crate::dataset::{write_manifest, Manifest, ManifestEntry};
use crate::rng::derive_rng;

pub const SKIP_REPORT_FILE: &str = "skipped.tsv";
pub const OUTPUT_MANIFEST_FILE: &str = "manifest.tsv";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkipRecord {
    pub entry_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct BuildOptions {
    pub workers: usize,
    /// Extra header lines for the output manifest (e.g. run provenance).
    pub extra_meta: Vec<(String, String)>,
}

#[derive(Clone, Debug)]
pub struct BuildOutput {
    pub manifest: Manifest,
    pub skipped: Vec<SkipRecord>,
    /// Drawn JPEG quality per written entry, in manifest order.
    pub qualities: Vec<u8>,
}

enum Outcome {
    Written(ManifestEntry, u8),
    Skipped(SkipRecord),
}

fn is_file_safe(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn io_err(path: &Path, source: std::io::Error) -> ImpairError {
    ImpairError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Impair every entry of `manifest_in` (paths relative to `src_root`) into
/// `out_dir/images/<entry_id>.jpg`, writing `out_dir/manifest.tsv` and the
/// skip report `out_dir/skipped.tsv` (`# key=value` header lines, then
/// `entry_id TAB reason` records).
pub fn build_dataset(
    manifest_in: &Manifest,
    src_root: &Path,
    cfg: &ImpairmentConfig,
    out_dir: &Path,
    opts: &BuildOptions,
) -> Result<BuildOutput, ImpairError> {
    cfg.validate()?;
    let img_dir = out_dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| io_err(&img_dir, e))?;

    let process = |e: &ManifestEntry| -> Result<Outcome, ImpairError> {
        let skip = |reason: &str| {
            Ok(Outcome::Skipped(SkipRecord {
                entry_id: e.entry_id.clone(),
                reason: reason.to_string(),
            }))
        };
        if !is_file_safe(&e.entry_id) {
            return skip("unsafe-entry-id");
        }
        let src: PathBuf = src_root.join(&e.path);
        let img = match image::open(&src) {
            Ok(i) => i.to_rgb8(),
            Err(err) => {
                log::warn!("{}: cannot read {}: {err}", e.entry_id, src.display());
                return skip("unreadable-source");
            }
        };
        let mut rng = derive_rng(cfg.master_seed, &e.entry_id);
        let out = match apply_impairment(&img, cfg, &mut rng, &e.entry_id) {
            Ok(o) => o,
            Err(ImpairError::ImageTooSmall { width, height, .. }) => {
                log::warn!("{}: {width}x{height} is below crop_min {}", e.entry_id, cfg.crop_min);
                return skip("image-too-small");
            }
            Err(other) => return Err(other),
        };
        let rel = format!("images/{}.jpg", e.entry_id);
        let dst = out_dir.join(&rel);
        fs::write(&dst, &out.jpeg).map_err(|err| io_err(&dst, err))?;
        Ok(Outcome::Written(
            ManifestEntry {
                path: rel,
                ..e.clone()
            },
            out.quality,
        ))
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<Result<Outcome, ImpairError>> =
        pool.install(|| manifest_in.entries.par_iter().map(process).collect());

    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    let mut qualities = Vec::new();
    for r in results {
        match r? {
            Outcome::Written(e, q) => {
                entries.push(e);
                qualities.push(q);
            }
            Outcome::Skipped(s) => skipped.push(s),
        }
    }

    let mut meta = manifest_in.meta.clone();
    meta.extend(opts.extra_meta.iter().cloned());
    meta.extend(cfg.to_meta());
    let manifest = Manifest {
        taxonomy: manifest_in.taxonomy.clone(),
        entries,
        meta,
    };
    write_manifest(&manifest, out_dir.join(OUTPUT_MANIFEST_FILE))?;

    let mut report: String = manifest.meta.iter().map(|(k, v)| format!("# {k}={v}\n")).collect();
    report.extend(skipped.iter().map(|s| format!("{}\t{}\n", s.entry_id, s.reason)));
    let report_path = out_dir.join(SKIP_REPORT_FILE);
    fs::write(&report_path, report).map_err(|e| io_err(&report_path, e))?;

    log::info!(
        "impaired {} entries ({} skipped) into {}",
        manifest.entries.len(),
        skipped.len(),
        out_dir.display()
    );
    Ok(BuildOutput {
        manifest,
        skipped,
        qualities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_safe_ids() {
        assert!(is_file_safe("real_00012"));
        assert!(is_file_safe("g0-1.v2"));
        assert!(!is_file_safe("../x"));
        assert!(!is_file_safe("a/b"));
        assert!(!is_file_safe(""));
    }
}
