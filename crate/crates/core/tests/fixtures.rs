use std::path::Path;

use splat_avatar::mesh::{procedural, read_obj, write_obj};

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

#[test]
fn committed_fixtures_match_the_generator() {
    for (name, mesh) in [
        ("head", procedural::reference_head()),
        ("low_poly_head", procedural::low_poly_head()),
    ] {
        let text = std::fs::read_to_string(fixture(&format!("{name}.obj"))).unwrap();
        assert_eq!(text, write_obj(&mesh), "{name}.obj is stale; run the write_fixtures example");
        let lm = std::fs::read_to_string(fixture(&format!("{name}_landmarks.json"))).unwrap();
        let lm: Vec<usize> = serde_json::from_str(&lm).unwrap();
        assert_eq!(lm, mesh.landmarks);
        let parsed = read_obj(&fixture(&format!("{name}.obj"))).unwrap();
        assert_eq!(parsed.faces, mesh.faces);
        for (a, b) in parsed.vertices.iter().zip(&mesh.vertices) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn reference_fixture_has_flame_vertex_count() {
    let m = read_obj(&fixture("head.obj")).unwrap();
    assert_eq!(m.vertex_count(), 5023);
    assert!(m.has_uvs());
}
