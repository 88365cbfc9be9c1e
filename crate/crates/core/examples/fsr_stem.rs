//! Filter stride reduction: the stem keeps its 4x4 kernel and only halves
//! its stride, so every feature map doubles in side while the parameter
//! shapes stay identical.
//!
//! cargo run --release --example fsr_stem -- [input_side]

use synthdetect::forge::ToySpec;
use synthdetect::model::{Act, Detector, HeadMode, ModelConfig, Scheme};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let side: usize = std::env::args().nth(1).map_or(Ok(64), |s| s.parse())?;
    let taxonomy = ToySpec::default().taxonomy()?;
    let base = ModelConfig {
        input_size: side,
        ..ModelConfig::toy(HeadMode::MultiClass, taxonomy.num_classes())
    }
    .for_scheme(Scheme::new(HeadMode::Binary, false, false), taxonomy.num_classes());
    let plain = Detector::<f32>::new(base.clone(), taxonomy.clone(), 0)?;
    let fsr = plain.with_fsr(true);
    assert_eq!(plain.param_shapes(), fsr.param_shapes());
    println!("{} parameters, identical shapes with and without FSR", plain.num_parameters());

    let x = Act::<f32>::zeros(1, side, side, 3);
    for (name, model) in [("stride 4", &plain), ("stride 2 (FSR)", &fsr)] {
        let (_, trace) = model.forward_traced(&x)?;
        let maps: Vec<String> = trace.stages.iter().map(|s| format!("{}x{}x{}", s[1], s[2], s[3])).collect();
        println!("{name:<16} stem {}x{}x{}  stages {}", trace.stem[1], trace.stem[2], trace.stem[3], maps.join(" "));
    }
    Ok(())
}
