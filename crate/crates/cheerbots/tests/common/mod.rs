#![allow(dead_code)]

use std::path::{Path, PathBuf};

use cheerbots::checkpoint::Bundle;
use cheerbots::pipeline::{self, TrainOpts};
use cheerbots_core::response::GenConfig;

pub const TOY_LABELS: [&str; 4] = ["joyful", "sad", "afraid", "content"];

/// Label-specific vocabulary so every model can learn the toy corpus.
const WORDS: [[&str; 8]; 4] = [
    ["sunny", "party", "smile", "win", "laugh", "gift", "dance", "cheer"],
    ["rain", "loss", "tears", "grey", "alone", "funeral", "miss", "broken"],
    ["noise", "dark", "spider", "storm", "shaking", "scream", "alarm", "ghost"],
    ["garden", "tea", "quiet", "sofa", "book", "blanket", "calm", "nap"],
];

/// Catalog JSON over the four toy labels. `complete` seeds all four;
/// otherwise only joyful and afraid carry coordinates.
pub fn toy_catalog_json(complete: bool) -> String {
    let labels = serde_json::json!(TOY_LABELS);
    let mut seed = serde_json::json!({ "joyful": [0.85, 0.15], "afraid": [-0.12, 0.79] });
    if complete {
        seed["sad"] = serde_json::json!([-0.81, -0.40]);
        seed["content"] = serde_json::json!([0.81, -0.55]);
    }
    serde_json::json!({ "labels": labels, "va_seed": seed }).to_string()
}

fn sentence(label: usize, salt: usize, n: usize) -> String {
    (0..n).map(|j| WORDS[label][(salt * 7 + j * 3 + salt / 8) % 8]).collect::<Vec<_>>().join(" ")
}

/// ED-style CSV with `n_convs` four-turn conversations cycling through the
/// toy labels. Listener replies carry a unique tag so they stay distinct.
pub fn toy_csv(n_convs: usize) -> String {
    let mut out = String::from("conv_id,utterance_idx,context,prompt,speaker_idx,utterance\n");
    for c in 0..n_convs {
        let label = c % TOY_LABELS.len();
        let prompt = format!("i remember the {}_comma_ {}", WORDS[label][c % 8], WORDS[label][(c + 3) % 8]);
        for t in 0..4 {
            let text = if t % 2 == 0 {
                format!("{} today", sentence(label, c + t, 5))
            } else {
                format!("oh {} r{c}x{t}", sentence(label, c * 3 + t, 3))
            };
            out.push_str(&format!("hit:{c}_conv:{c},{},{},{},{},{}\n", t + 1, TOY_LABELS[label], prompt, t % 2, text));
        }
    }
    out
}

pub fn write_toy_inputs(dir: &Path, n_convs: usize, complete: bool) -> (PathBuf, PathBuf) {
    let csv = dir.join("toy.csv");
    let catalog = dir.join("toy_catalog.json");
    std::fs::write(&csv, toy_csv(n_convs)).unwrap();
    std::fs::write(&catalog, toy_catalog_json(complete)).unwrap();
    (csv, catalog)
}

pub fn opts(seed: u64) -> TrainOpts {
    TrainOpts { seed, epochs: 3, batch_size: 16, lr: 5e-3, history: 4 }
}

pub fn small_gen() -> GenConfig {
    GenConfig { emb_dim: 8, hidden: 16, window: 2, max_len: 32 }
}

/// Runs every supervised stage on the toy corpus in `dir`.
pub fn trained_bundle(dir: &Path, n_convs: usize, seed: u64) -> Bundle {
    let inputs = dir.join("inputs");
    std::fs::create_dir_all(&inputs).unwrap();
    let (csv, catalog) = write_toy_inputs(&inputs, n_convs, false);
    let work = dir.join("work");
    let mut b = Bundle::open(&work).unwrap();
    pipeline::ingest(&mut b, &csv, Some(&catalog)).unwrap();
    let o = opts(seed);
    pipeline::train_detector(&mut b, &o, 1.0).unwrap();
    pipeline::bootstrap_va(&mut b, &o, 1.0).unwrap();
    pipeline::train_predictor(&mut b, &o, 32).unwrap();
    pipeline::train_retrieval(&mut b, &o).unwrap();
    pipeline::train_gen(&mut b, &o, small_gen()).unwrap();
    b
}

/// Synthetic speaker config for quick, deterministic RL runs.
pub fn oracle_rl_json(episodes: usize) -> serde_json::Value {
    serde_json::json!({
        "episodes": episodes,
        "lr": 1e-3,
        "q_hidden": 32,
        "reward_window": 10,
        "oracle": { "alpha": 0.5, "noise_sigma": 0.05 }
    })
}
