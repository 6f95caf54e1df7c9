//! Generate source and shifted target splits, print label statistics and
//! write one source/target image pair as PPM files.

use std::io::Write;

use s4t::bench::{make_dataset, GenConfig, Scene, ShiftSpec, SplitSizes};

fn write_ppm(path: &str, s: &Scene) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    write!(f, "P6\n{} {}\n255\n", s.size, s.size)?;
    let bytes: Vec<u8> = s.image.iter().map(|v| (v * 255.0).round() as u8).collect();
    f.write_all(&bytes)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gen = GenConfig::default();
    let sizes = SplitSizes {
        source_train: 64,
        source_val: 16,
        target: 16,
    };
    let data = make_dataset(&gen, &ShiftSpec::desk_target(), sizes, 0)?;
    println!("manifest: {}", serde_json::to_string(&data.manifest)?);

    let mut hist = vec![0usize; gen.label_classes()];
    for s in &data.source_train {
        s.class.iter().for_each(|&c| hist[c as usize] += 1);
    }
    let total: usize = hist.iter().sum();
    for (c, n) in hist.iter().enumerate() {
        println!(
            "class {c}: {:5.1}% of pixels",
            100.0 * *n as f64 / total as f64
        );
    }
    let edge = data
        .source_train
        .iter()
        .flat_map(|s| &s.edge)
        .filter(|&&e| e > 0.5)
        .count();
    let depth: Vec<f32> = data
        .source_train
        .iter()
        .flat_map(|s| s.depth.iter().copied())
        .collect();
    let (lo, hi) = depth
        .iter()
        .fold((f32::MAX, f32::MIN), |(a, b), &d| (a.min(d), b.max(d)));
    println!(
        "edge pixels {:.1}%, depth range [{lo:.2}, {hi:.2}]",
        100.0 * edge as f64 / total as f64
    );

    let dir = std::env::temp_dir();
    let src = dir.join("s4t_source.ppm");
    let tgt = dir.join("s4t_target.ppm");
    write_ppm(src.to_str().unwrap(), &data.source_val[0])?;
    write_ppm(tgt.to_str().unwrap(), &data.target[0])?;
    println!("wrote {} and {}", src.display(), tgt.display());
    Ok(())
}
