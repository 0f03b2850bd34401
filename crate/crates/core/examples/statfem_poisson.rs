//! Statistical FEM for a 1D Poisson problem: a random source, a mismatch
//! field and noisy readings of the true response.
//!
//! cargo run --release --example statfem_poisson

use nalgebra::DMatrix;
use spdefem::gp::ObservationSet;
use spdefem::mesh::generate;
use spdefem::spde::build_field;
use spdefem::spde::MaternParams;
use spdefem::statfem::{
    assemble_forward, forward_prior, posterior_true_response, statfem_log_marginal, statfem_posterior,
    DirichletCondition, MismatchField,
};

fn main() -> spdefem::Result<()> {
    let mesh = generate::interval(0.0, 1.0, 64)?;
    let fbar: Vec<f64> = mesh
        .nodes()
        .map(|x| 1.0 + (std::f64::consts::PI * x[0]).sin())
        .collect();
    let bc = [
        DirichletCondition::fixed("left", 0.0),
        DirichletCondition::fixed("right", 0.0),
    ];
    let forward = assemble_forward(&mesh, &bc, fbar)?;

    let source = build_field(&mesh, &MaternParams::new(0.3, 0.2, 1.5, 1)?, 0)?;
    let prior = forward_prior(&forward, &source)?;
    let mismatch = MismatchField::new(&mesh, &MaternParams::new(0.01, 0.3, 1.5, 1)?)?;

    // The "true" process is the model response plus a smooth offset.
    let points: Vec<Vec<f64>> = (1..10).map(|i| vec![0.1 * i as f64]).collect();
    let truth = |x: f64| forward.mean()[(x * 64.0).round() as usize] + 0.02 * (2.0 * x).sin();
    let y = DMatrix::from_fn(points.len(), 3, |i, j| {
        truth(points[i][0]) + 1e-3 * ((i * 7 + j * 3) % 5) as f64 - 2e-3
    });
    let obs = ObservationSet::new(&mesh, points.clone(), y, 2e-3)?;

    let post = statfem_posterior(&prior, &mismatch, &obs)?;
    let z = posterior_true_response(&post, &mismatch, &obs)?;
    println!("log marginal {:.3}", statfem_log_marginal(&prior, &mismatch, &obs)?);
    println!("   x    prior     posterior   true-response (sd)");
    let prior_var = prior.variances()?;
    let post_var = post.variances()?;
    for (k, x) in points.iter().enumerate() {
        let i = (x[0] * 64.0).round() as usize;
        let f = post.free_nodes().iter().position(|&n| n == i).unwrap();
        println!(
            "  {:.1}  {:.5}+-{:.1e}  {:.5}+-{:.1e}  {:.5} ({:.1e})",
            x[0],
            prior.mean()[i],
            prior_var[f].sqrt(),
            post.mean()[i],
            post_var[f].sqrt(),
            z.mean[k],
            z.covariance[(k, k)].sqrt()
        );
    }
    Ok(())
}
