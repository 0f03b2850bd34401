//! Best uniform rational approximations of x^γ on [ε, 1] and the operator
//! factors they induce.
//!
//! cargo run --release --example rational_approx

use spdefem::mesh::generate;
use spdefem::rational::best_rational_approx;
use spdefem::spde::{build_field, MaternParams};

fn main() -> spdefem::Result<()> {
    for gamma in [-0.25, 0.225, 0.5, 0.75] {
        print!("gamma = {gamma:6}:");
        for m in 1..=6 {
            let r = best_rational_approx(gamma, m, 1e-6)?;
            print!("  m={m} {:.2e}", r.max_error);
        }
        println!();
    }

    let r = best_rational_approx(0.5, 4, 1e-6)?;
    println!(
        "\nsqrt with m = 4: {} iterations, spread {:.1e}",
        r.iterations, r.spread
    );
    println!("numerator roots   {:?}", r.num_roots);
    println!("denominator roots {:?}", r.den_roots);
    for x in [1e-6, 1e-3, 0.1, 0.9] {
        println!("  r({x:e}) = {:.8}  sqrt = {:.8}", r.eval(x), x.sqrt());
    }

    // The same approximant as operator factors of a fractional field.
    let mesh = generate::interval(0.0, 1.0, 50)?;
    let field = build_field(&mesh, &MaternParams::new(1.0, 0.2, 1.0, 1)?, 4)?;
    let f = field.factors().expect("nu = 1 in 1D is fractional");
    println!("\nscale {:.4e}, lambda_1 {:.4}", f.scale, f.lambda1);
    for (k, (a, b)) in f.right.iter().zip(&f.left).enumerate() {
        println!(
            "  factor {k}: right ({:.3e}, {:.3e})  left ({:.3e}, {:.3e})",
            a.alpha, a.beta, b.alpha, b.beta
        );
    }
    Ok(())
}
