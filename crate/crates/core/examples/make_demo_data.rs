//! Writes the demo corpus and queries: `cargo run --example make_demo_data -- data 7`

use std::path::PathBuf;

fn main() -> ltrr_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data".into()));
    let seed = args.next().map_or(7, |s| s.parse().expect("seed must be an integer"));
    let (docs, queries) = ltrr_core::pipeline::write_demo_inputs(&dir, seed)?;
    println!("wrote {} and {}", docs.display(), queries.display());
    Ok(())
}
