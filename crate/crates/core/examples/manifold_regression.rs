//! GP regression on the unit hemisphere, a curved surface mesh.
//!
//! cargo run --release --example manifold_regression

use nalgebra::DMatrix;
use spdefem::gp::{gp_posterior_sparse, ObservationSet};
use spdefem::mesh::generate;
use spdefem::spde::{build_field, MaternParams};

fn target(x: &[f64]) -> f64 {
    // A degree-2 spherical harmonic.
    x[0] * x[2] + 0.5 * (3.0 * x[2] * x[2] - 1.0)
}

fn main() -> spdefem::Result<()> {
    let mesh = generate::hemisphere(24)?;
    println!(
        "{} nodes, area {:.5} (2 pi = {:.5})",
        mesh.n_nodes(),
        mesh.measure(),
        2.0 * std::f64::consts::PI
    );
    let field = build_field(&mesh, &MaternParams::new(1.0, 0.4, 1.0, 2)?, 0)?;

    // Readings at the nodes of a coarse hemisphere.
    let coarse = generate::hemisphere(6)?;
    let points: Vec<Vec<f64>> = coarse.nodes().map(|x| x.to_vec()).collect();
    let y = DMatrix::from_fn(points.len(), 1, |i, _| target(&points[i]));
    let obs = ObservationSet::new(&mesh, points, y, 1e-3)?;
    let post = gp_posterior_sparse(&field, &obs)?;

    let (mut num, mut den) = (0.0, 0.0);
    for (i, x) in mesh.nodes().enumerate() {
        num += (post.mean()[i] - target(x)).powi(2);
        den += target(x).powi(2);
    }
    println!(
        "{} readings, relative nodal error {:.3e}",
        obs.n_y(),
        (num / den).sqrt()
    );
    let pole = mesh.nodes().position(|x| x[2] > 1.0 - 1e-12).unwrap();
    let sd = post.variances(&[pole])?[0].sqrt();
    println!(
        "north pole: mean {:.5}, target {:.5}, sd {sd:.2e}",
        post.mean()[pole],
        target(mesh.node(pole))
    );
    Ok(())
}
