//! Frozen generator output. Any change to the generator's draw order or to
//! the scene file format shows up here. Regenerate with `BLESS=1`.

use std::path::PathBuf;

use coplace::scene::{generate_scene, load_scene, save_scene, GeneratorConfig, RoomType};

#[test]
fn bedroom_seed_zero_matches_frozen_file() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/bedroom-seed0.json");
    let scene = generate_scene(&GeneratorConfig::for_room(RoomType::Bedroom), 0).unwrap();
    let text = save_scene(&scene);
    if std::env::var_os("BLESS").is_some() {
        std::fs::write(&path, &text).unwrap();
    }
    let frozen = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, frozen);
    assert_eq!(load_scene(&frozen).unwrap(), scene);
}
