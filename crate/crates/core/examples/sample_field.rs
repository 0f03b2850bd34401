//! Draws Matérn samples on the unit square and checks the empirical
//! marginal variance away from the boundary.
//!
//! cargo run --release --example sample_field

use spdefem::io::write_vtk;
use spdefem::mesh::generate;
use spdefem::spde::{build_field, MaternParams};

fn main() -> spdefem::Result<()> {
    let mesh = generate::unit_square(40)?;
    // ν = 0.8 in 2D gives β = 0.9, so this goes through the rational factors.
    let matern = MaternParams::new(1.5, 0.15, 0.8, 2)?;
    let field = build_field(&mesh, &matern, 6)?;
    let p = field.params();
    println!(
        "kappa = {:.4}, beta = {}, alpha = {}, gamma = {:.2}",
        p.kappa, p.beta, p.alpha, p.gamma
    );

    let samples = field.sample(2000, 42);
    let centre: Vec<usize> = (0..mesh.n_nodes())
        .filter(|&i| mesh.node(i).iter().all(|&x| (0.3..=0.7).contains(&x)))
        .collect();
    let emp: f64 = centre
        .iter()
        .map(|&i| samples.row(i).iter().map(|v| v * v).sum::<f64>() / samples.ncols() as f64)
        .sum::<f64>()
        / centre.len() as f64;
    let exact = field.variances(&centre)?;
    let exact = exact.iter().sum::<f64>() / exact.len() as f64;
    println!(
        "interior variance: empirical {emp:.4}, discrete {exact:.4}, sigma^2 {:.4}",
        matern.sigma.powi(2)
    );

    let out = std::env::temp_dir().join("spdefem_sample.vtk");
    let first: Vec<f64> = samples.column(0).iter().copied().collect();
    let second: Vec<f64> = samples.column(1).iter().copied().collect();
    write_vtk(&out, &mesh, &[("sample0", &first), ("sample1", &second)])?;
    println!("wrote {}", out.display());
    Ok(())
}
