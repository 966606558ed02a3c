//! Regenerates the bundled fixture corpus under a target directory.
//!
//! ```sh
//! cargo run -p gnr --example generate_fixture -- fixtures
//! ```

use gnr::align::write_triples;
use gnr::synth::{generate, generate_triples, write_files, SynthConfig, TripleSynthConfig};

fn main() {
    let dir = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "fixtures".to_string());
    let dir = std::path::PathBuf::from(dir);
    std::fs::create_dir_all(&dir).expect("create fixture dir");

    let corpus = generate(&SynthConfig::default());
    write_files(&corpus, &dir).expect("write corpus files");

    let (mut train, held_out) = generate_triples(&TripleSynthConfig::default());
    let train_len = train.len();
    train.extend(held_out);
    write_triples(&dir.join("triples.jsonl"), &train).expect("write triples");

    println!(
        "wrote {} articles, {} train + {} eval impressions, {} pairs, {} triples ({} train) to {}",
        corpus.store.len(),
        corpus.train.len(),
        corpus.eval.len(),
        corpus.pairs.pairs.len(),
        train.len(),
        train_len,
        dir.display()
    );
}
