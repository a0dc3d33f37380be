//! Realizations of the log-normal material field on the heat-problem mesh.
//!
//! Writes one `element_id,value` CSV of `λ = exp(λ_g)` per sample into the
//! given directory.
//!
//! ```text
//! cargo run --release --example random_field_samples -- [out_dir] [count]
//! ```
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use vbdesign::mesh::{build_regular_mesh, write_element_field};
use vbdesign::random_field::{build_covariance, sample_log_field, CORRELATION_LENGTH, MU_THETA0, SIGMA_G2};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "field_samples".into()));
    let count: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3);
    std::fs::create_dir_all(&out)?;

    let mesh = build_regular_mesh(40, 20, 2.0, 1.0)?;
    let prior = build_covariance(mesh.centroids(), SIGMA_G2, CORRELATION_LENGTH, MU_THETA0)?;
    println!("d_theta = {}, nugget = {:e}", prior.dim(), prior.nugget);

    for seed in 0..count {
        let lambda: Vec<f64> = sample_log_field(&prior, seed).iter().map(|g| g.exp()).collect();
        let mean = lambda.iter().sum::<f64>() / lambda.len() as f64;
        let var = lambda.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / lambda.len() as f64;
        println!("sample {seed}: mean {mean:.3}, coefficient of variation {:.3}", var.sqrt() / mean);
        let path = out.join(format!("lambda_{seed}.csv"));
        write_element_field(BufWriter::new(File::create(&path)?), &lambda)?;
    }
    println!("written to {}", out.display());
    Ok(())
}
