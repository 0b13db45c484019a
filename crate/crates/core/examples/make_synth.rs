//! Generate a synthetic desk-scale dataset (manifest, images, enhancement
//! cache) for trying the pipeline without real data or an MLLM endpoint.
//!
//! Usage: cargo run -p memodetector --example make_synth -- <dir> [classes] [train] [val] [test] [seed]

use memodetector::synth::{generate, SynthSpec};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() {
        eprintln!("usage: make_synth <dir> [classes] [train] [val] [test] [seed]");
        std::process::exit(2);
    }
    let dir = std::path::PathBuf::from(&args[0]);
    let num = |i: usize, default: usize| -> usize {
        args.get(i).map(|s| s.parse().expect("numeric argument")).unwrap_or(default)
    };
    let spec = SynthSpec {
        classes: num(1, 7),
        train: num(2, 32),
        val: num(3, 8),
        test: num(4, 8),
        seed: num(5, 0) as u64,
    };
    match generate(&dir, &spec) {
        Ok(paths) => {
            println!("manifest: {}", paths.manifest.display());
            println!("cache:    {}", paths.cache.display());
        }
        Err(error) => {
            eprintln!("error: {error}");
            std::process::exit(1);
        }
    }
}
