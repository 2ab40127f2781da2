//! The minimal file in the format document must stay readable.

use furnibench::dataset::{decode_episode, encode_episode};

#[test]
fn documented_minimal_file_parses() {
    let doc = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/episode-format.md")).unwrap();
    let block = doc
        .split("## Minimal file")
        .nth(1)
        .and_then(|s| s.split("```").nth(1))
        .expect("minimal file block");
    let text = block.trim_start_matches('\n');
    let ep = decode_episode(text).unwrap();
    assert_eq!(ep.steps.len(), 1);
    assert_eq!(ep.header.furniture_id, "one_leg");
    assert_eq!(encode_episode(&ep.header, &ep.steps).unwrap(), text);
}
