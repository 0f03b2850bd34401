//! Saves a fractional field to disk and reloads it against its mesh.
//!
//! cargo run --release --example field_persistence

use spdefem::mesh::{generate, load_boundary_sidecar, load_mesh, write_boundary_sidecar, write_off, MeshFormat};
use spdefem::spde::{build_field, load_field, save_field, MaternParams};

fn main() -> spdefem::Result<()> {
    let dir = std::env::temp_dir().join("spdefem_persist");
    std::fs::create_dir_all(&dir)?;
    let mesh = generate::unit_square(20)?;
    let field = build_field(&mesh, &MaternParams::new(0.7, 0.25, 1.3, 2)?, 5)?;

    let (off, side, bin) = (dir.join("square.off"), dir.join("square.bnd"), dir.join("field.bin"));
    write_off(&mesh, &off)?;
    write_boundary_sidecar(&mesh, &side)?;
    save_field(&field, &bin)?;
    println!("field file: {} bytes", std::fs::metadata(&bin)?.len());

    let mut reread = load_mesh(&off, MeshFormat::from_path(&off))?;
    load_boundary_sidecar(&mut reread, &side)?;
    let back = load_field(&bin, &reread)?;
    let same = back.sample(8, 3) == field.sample(8, 3);
    println!(
        "reloaded: nu = {}, degree = {}, identical samples: {same}",
        back.matern().nu,
        back.degree()
    );

    // A field only loads against the mesh it was built on.
    match load_field(&bin, &generate::unit_square(21)?) {
        Err(e) => println!("other mesh rejected: {e}"),
        Ok(_) => println!("other mesh unexpectedly accepted"),
    }
    Ok(())
}
