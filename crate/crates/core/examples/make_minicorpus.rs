//! Regenerates the bundled mini-corpus under `data/minicorpus/`.
//!
//! Usage: `cargo run -p trackfill-core --example make_minicorpus [out_dir]`

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trackfill_core::midi::write_midi;
use trackfill_core::synth::{random_piece, SynthParams};

const FILES: usize = 48;
const TPQS: [u16; 4] = [96, 384, 480, 960];

fn main() -> std::io::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/minicorpus"));
    std::fs::create_dir_all(&out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..FILES {
        let params = SynthParams {
            tracks: 4..=6,
            bars: 8..=16,
            waltz_probability: 0.15,
            expressive: true,
            with_drums: true,
            ticks_per_quarter: TPQS[i % TPQS.len()],
        };
        let piece = random_piece(&mut rng, &params);
        std::fs::write(out.join(format!("piece_{i:03}.mid")), write_midi(&piece, true))?;
    }
    println!("wrote {FILES} files to {}", out.display());
    Ok(())
}
