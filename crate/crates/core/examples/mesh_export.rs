//! Builds a regular triangulation and writes it as plain text.
//!
//! ```text
//! cargo run --example mesh_export -- [nx] [ny] [lx] [ly] > mesh.txt
//! ```
use std::io::{stdout, BufWriter};

use vbdesign::mesh::{build_regular_mesh, BoundaryTag};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let nx: usize = args.first().map(|s| s.parse()).transpose()?.unwrap_or(40);
    let ny: usize = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(20);
    let lx: f64 = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(2.0);
    let ly: f64 = args.get(3).map(|s| s.parse()).transpose()?.unwrap_or(1.0);

    let mesh = build_regular_mesh(nx, ny, lx, ly)?;
    eprintln!("{} nodes, {} triangles", mesh.n_nodes(), mesh.n_elements());
    for tag in BoundaryTag::ALL {
        eprintln!("  {tag}: {} nodes", mesh.boundary_nodes(tag).len());
    }
    mesh.write_text(BufWriter::new(stdout().lock()))?;
    Ok(())
}
