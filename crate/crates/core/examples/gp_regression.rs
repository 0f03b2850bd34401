//! GP regression with repeated independent readings and a fit of (σ, ℓ) by
//! maximum marginal likelihood.
//!
//! cargo run --release --example gp_regression

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use spdefem::gp::{gp_posterior_sparse, ObservationSet};
use spdefem::hyper::{gp_objective, maximize, or_nan, HyperName, HyperPoint, HyperSpec, Readings};
use spdefem::mesh::{generate, observation_matrix};
use spdefem::spde::{build_field, MaternParams};

fn main() -> spdefem::Result<()> {
    let mesh = generate::interval(0.0, 10.0, 100)?;
    let nu = 2.5;
    let truth = build_field(&mesh, &MaternParams::new(0.4, 1.2, nu, 1)?, 6)?;

    let points: Vec<Vec<f64>> = (0..41).map(|i| vec![1.0 + 0.2 * i as f64]).collect();
    let p = observation_matrix(&mesh, &points)?;
    let draws = truth.sample(40, 1);
    let sigma_e = 0.05;
    let noise = Normal::new(0.0, sigma_e).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let clean = p.mul_dense(&draws)?;
    let y = DMatrix::from_fn(clean.nrows(), clean.ncols(), |i, j| {
        clean[(i, j)] + noise.sample(&mut rng)
    });
    let obs = ObservationSet::new(&mesh, points, y, sigma_e)?;

    let fixed = HyperPoint {
        sigma: 1.0,
        ell: 1.0,
        sigma_d: 1.0,
        ell_d: 1.0,
        sigma_e,
    };
    let mut spec = HyperSpec::new(&[(HyperName::Sigma, 0.01, 2.0), (HyperName::Ell, 0.1, 5.0)], fixed)?;
    spec.restarts = 2;
    let objective = |x: &[f64]| {
        let hp = spec.point(x);
        or_nan(gp_objective(&mesh, nu, 6, &obs, Readings::Independent, &hp))
    };
    let fit = maximize(objective, &spec, &[0.2, 2.5])?;
    println!(
        "sigma = {:.4} (true 0.4), ell = {:.4} (true 1.2), log marginal {:.3}, {} evaluations",
        fit.params[0],
        fit.params[1],
        fit.value,
        fit.trace.len()
    );

    // Posterior of the first realization at the fitted parameters.
    let field = build_field(&mesh, &MaternParams::new(fit.params[0], fit.params[1], nu, 1)?, 6)?;
    let one = obs.with_readings(obs.y().columns(0, 1).into_owned())?;
    let post = gp_posterior_sparse(&field, &one)?;
    let var = post.variances(&[50])?;
    println!(
        "at x = 5: truth {:.4}, posterior mean {:.4} +- {:.4}",
        draws[(50, 0)],
        post.mean()[50],
        1.96 * var[0].sqrt()
    );
    Ok(())
}
