mod common;

use common::*;

/// Rebuilds `fixtures/store.jsonl` against the scripted mock server.
/// Run with `cargo test -p kfe-cli --test store -- --ignored` after changing
/// prompt wording or fixtures.
#[test]
#[ignore]
fn regenerate_replay_store() {
    let ws = workspace();
    let server = scripted_server();
    let store = fixtures().join("store.jsonl");
    if store.exists() {
        std::fs::remove_file(&store).unwrap();
    }
    let url = server.base_url();
    let store_arg = store.to_str().unwrap();
    let zero_shot: &[&str] = &["--shots", "0", "--knowledge", "false"];
    for extra in [&[][..], zero_shot] {
        let mut args = vec!["run", "--config", "config.toml", "--base-url", &url, "--store", store_arg, "--out", "r.json"];
        args.extend_from_slice(extra);
        kfe_ok(ws.path(), &args);
    }
    assert_eq!(read(&store).lines().count(), 40);
}
