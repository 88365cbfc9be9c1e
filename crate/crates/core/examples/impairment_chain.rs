//! Run the crop -> resize -> JPEG chain on one synthetic image and show the
//! drawn parameters, then check that the draw is a pure function of the
//! seed and entry id.
//!
//! cargo run --release --example impairment_chain -- [seed]

use synthdetect::impair::{apply_impairment, ImpairmentConfig};
use synthdetect::rng::derive_rng;
use synthdetect::sha256_hex;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map_or(Ok(0), |s| s.parse())?;
    let cfg = ImpairmentConfig::default().with_seed(seed);
    let src = image::RgbImage::from_fn(640, 480, |x, y| {
        image::Rgb([(x / 3) as u8, (y / 2) as u8, ((x ^ y) & 0xff) as u8])
    });

    for id in ["photo_0001", "photo_0002", "photo_0003"] {
        let out = apply_impairment(&src, &cfg, &mut derive_rng(seed, id), id)?;
        let b = out.crop;
        let decoded = image::load_from_memory(&out.jpeg)?.to_rgb8();
        println!(
            "{id}: crop {}x{} at ({},{}), ratio {:.3}, quality {}, {} bytes -> {}x{}, sha256 {}",
            b.w,
            b.h,
            b.x,
            b.y,
            f64::from(b.w.min(b.h)) / f64::from(b.w.max(b.h)),
            out.quality,
            out.jpeg.len(),
            decoded.width(),
            decoded.height(),
            &sha256_hex(&out.jpeg)[..16]
        );
        let again = apply_impairment(&src, &cfg, &mut derive_rng(seed, id), id)?;
        assert_eq!(again.jpeg, out.jpeg);
    }
    Ok(())
}
