//! Runs the ablation protocol and prints per-seed and median validation success rates.
//!
//! Usage: `cargo run --release --example ablation -- [config] [seeds] [train fraction]`.
//! The config defaults to the `benchmark` preset, seeds to 5 and the fraction to 1.

use std::path::Path;
use std::time::Instant;

use adapt_nav::config::Settings;
use adapt_nav::experiment::{median_sr, run_ablation, Variant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let settings = match args.first().map(String::as_str) {
        None | Some("benchmark") => Settings::preset("benchmark")?,
        Some(path) => Settings::load(Path::new(path))?,
    };
    let seeds: u64 = args.get(1).map_or(Ok(5), |s| s.parse())?;
    let fraction: f64 = args.get(2).map_or(Ok(1.0), |s| s.parse())?;
    let start = Instant::now();
    let seeds: Vec<u64> = (0..seeds).collect();
    let results = run_ablation(&settings, &seeds, fraction, &Variant::ALL, |r| {
        let cols: Vec<String> =
            r.variants.iter().zip(&r.sr).map(|(v, sr)| format!("{} {sr:.0}", v.name())).collect();
        println!(
            "seed {}: stage-1 {:.0} | {}  [{:.0}s]",
            r.seed,
            r.stage1_sr,
            cols.join(" "),
            start.elapsed().as_secs_f64()
        );
    })?;
    let meds: Vec<String> = Variant::ALL
        .iter()
        .map(|&v| format!("{} {:.1}", v.name(), median_sr(&results, v).unwrap_or(f64::NAN)))
        .collect();
    println!("median: {}", meds.join(" "));
    Ok(())
}
