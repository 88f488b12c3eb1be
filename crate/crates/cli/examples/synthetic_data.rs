//! Writes Kraken-style OHLCVT files for a seeded synthetic market.
//!
//! `cargo run -p ott-cli --example synthetic_data -- <dir> [seed] [intervals]`

use std::io::Write;

use ott_core::synthetic::{generate, SyntheticSpec};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = std::path::PathBuf::from(args.next().unwrap_or_else(|| "data".into()));
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(11);
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20_000);
    std::fs::create_dir_all(&dir)?;
    let spec = SyntheticSpec::four_currencies(seed, n);
    let m = generate(&spec)?;
    for (c, code) in m.currencies().iter().enumerate() {
        let path = dir.join(format!("ETH{code}_{}.csv", spec.interval / 60));
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
        for (t, ts) in m.timestamps().iter().enumerate() {
            let p = m.value(c, t);
            writeln!(f, "{ts},{p},{p},{p},{p},1,1")?;
        }
        println!("{}", path.display());
    }
    println!("{} intervals from {} every {}s", n, spec.start, spec.interval);
    Ok(())
}
