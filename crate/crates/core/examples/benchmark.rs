//! Times one classifier training step across image sizes, batch sizes and
//! worker counts, then prints the speedup table.
//!
//! cargo run --release --example benchmark -- [sizes, e.g. 64,128] [workers, e.g. 1,4]

use cxrb::bench::{run_grid, speedup_report, BenchConfig, Environment};

fn list(arg: Option<&String>, default: &[usize]) -> Vec<usize> {
    arg.map_or_else(
        || default.to_vec(),
        |s| {
            s.split(',')
                .map(|x| x.trim().parse().expect("comma-separated integers"))
                .collect()
        },
    )
}

fn main() -> cxrb::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let env = Environment::detect();
    println!("{env:?}");
    let cfg = BenchConfig {
        sizes: list(args.first(), &[64, 128]),
        batches: vec![1, 8],
        workers: list(args.get(1), &[1, env.physical_cores.max(2)]),
        runs: 3,
        warmup: 1,
        ..BenchConfig::default()
    };
    let points = run_grid(&cfg, |p| {
        println!(
            "image {:5} batch {} workers {}: {:.4}s",
            p.image_size, p.batch_size, p.workers, p.median_seconds
        )
    })?;
    let table = speedup_report(&points)?;
    print!("{}", table.to_csv());
    println!("{}", table.summary());
    for w in table.trend_warnings() {
        println!("warning: {w}");
    }
    Ok(())
}
