//! Finite-difference checks of every hand-written backward pass.
//!
//! `cargo run --release --example gradient_check -- [scope] [seeds]`

use scriptline::gradcheck::{format_table, run_scope};

fn main() -> scriptline::Result<()> {
    let scope = std::env::args().nth(1).unwrap_or_else(|| "all".into());
    let seeds: u64 = std::env::args().nth(2).map_or(3, |s| s.parse().expect("seed count"));
    let results = run_scope(&scope, &(1..=seeds).collect::<Vec<_>>())?;
    println!("{}", format_table(&results));
    Ok(())
}
