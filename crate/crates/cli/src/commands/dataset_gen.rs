//! `svs dataset-gen`: write synthetic fixture directories.

use std::path::PathBuf;

use clap::Args as ClapArgs;
use svs_core::io::save_fixture;
use svs_core::scenegen::make_fixture_suite;

use crate::common::{parse_size, CliError, CliResult};

#[derive(ClapArgs)]
pub struct Args {
    /// Output directory; fixtures land in fixture_000, fixture_001, ...
    #[arg(long)]
    out: PathBuf,

    /// Number of fixtures.
    #[arg(long, default_value_t = 1)]
    count: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// View resolution as WxH.
    #[arg(long, default_value = "128x128")]
    size: String,
}

pub fn run(args: Args) -> CliResult {
    let (w, h) = parse_size(&args.size)?;
    if args.count == 0 {
        return Err(CliError::usage("--count must be at least 1"));
    }
    std::fs::create_dir_all(&args.out)?;
    let fixtures = make_fixture_suite(args.count, args.seed, w, h);
    for (i, fixture) in fixtures.iter().enumerate() {
        let dir = args.out.join(format!("fixture_{i:03}"));
        save_fixture(&dir, fixture)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}
