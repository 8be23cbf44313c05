//! Regenerates the OBJ fixtures under `fixtures/`.

use std::path::Path;

use splat_avatar::mesh::{procedural, write_obj};

fn main() -> splat_avatar::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    for (name, mesh) in [
        ("head.obj", procedural::reference_head()),
        ("low_poly_head.obj", procedural::low_poly_head()),
    ] {
        let path = dir.join(name);
        write(&path, write_obj(&mesh))?;
        let lm = dir.join(name.replace(".obj", "_landmarks.json"));
        write(&lm, format!("{:?}\n", mesh.landmarks))?;
        println!("{} ({} vertices, {} faces)", path.display(), mesh.vertex_count(), mesh.faces.len());
    }
    Ok(())
}

fn write(path: &Path, text: String) -> splat_avatar::Result<()> {
    std::fs::write(path, text).map_err(|source| splat_avatar::Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
