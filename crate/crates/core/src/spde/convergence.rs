use super::{build_field_with, matern_kernel, FieldOptions, GaussianField, MaternParams};
use crate::error::{Error, Result};
use crate::mesh::{generate, Mesh};
use crate::parallel::map_indexed;

/// One mesh level of a convergence study.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub h: f64,
    pub nodes: usize,
    pub eta: f64,
}

fn inside(x: &[f64], window: &[(f64, f64)]) -> bool {
    x.iter()
        .zip(window)
        .all(|(&v, &(lo, hi))| v >= lo - 1e-12 && v <= hi + 1e-12)
}

/// `‖a − b‖ / ‖b‖` in L² over the elements lying inside the axis-aligned
/// `window`, integrated with the vertex rule (trapezoidal in 1D).
pub fn relative_l2_error(mesh: &Mesh, window: &[(f64, f64)], approx: &[f64], exact: &[f64]) -> Result<f64> {
    let n = mesh.n_nodes();
    if approx.len() != n || exact.len() != n {
        return Err(Error::DimensionMismatch {
            context: "relative_l2_error",
            expected: n,
            found: approx.len().min(exact.len()),
        });
    }
    if window.len() != mesh.dim_embed() {
        return Err(Error::InvalidParameter(format!(
            "window has {} axes, mesh is embedded in {}",
            window.len(),
            mesh.dim_embed()
        )));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for e in 0..mesh.n_elements() {
        let el = mesh.element(e);
        if !el.iter().all(|&v| inside(mesh.node(v), window)) {
            continue;
        }
        let w = mesh.element_geometry(e)?.measure / el.len() as f64;
        for &v in el {
            num += w * (approx[v] - exact[v]).powi(2);
            den += w * exact[v].powi(2);
        }
    }
    if !(den > 0.0) {
        return Err(Error::InvalidParameter("evaluation window holds no element".into()));
    }
    Ok((num / den).sqrt())
}

/// Relative L² error of the covariance `c_h(·, x_ref)` against the analytic
/// Matérn kernel over `window`.
pub fn covariance_error(
    field: &GaussianField,
    mesh: &Mesh,
    matern: &MaternParams,
    x_ref: &[f64],
    window: &[(f64, f64)],
) -> Result<f64> {
    if mesh.is_manifold() {
        return Err(Error::InvalidParameter(
            "covariance error needs a flat mesh; no analytic kernel on manifolds".into(),
        ));
    }
    let approx = field.covariance_at(mesh, x_ref)?;
    let exact: Vec<f64> = mesh
        .nodes()
        .map(|x| matern_kernel(matern, crate::mesh::dist(x, x_ref)))
        .collect();
    relative_l2_error(mesh, window, &approx, &exact)
}

/// Covariance error on uniform 1D meshes of `domain` with the given
/// spacings. Levels run in parallel.
pub fn convergence_study(
    matern: &MaternParams,
    domain: (f64, f64),
    window: (f64, f64),
    x_ref: f64,
    spacings: &[f64],
    opts: &FieldOptions,
) -> Result<Vec<ConvergenceRow>> {
    if matern.dim != 1 {
        return Err(Error::InvalidParameter("convergence study runs on 1D meshes".into()));
    }
    let rows = map_indexed(spacings.len(), |k| -> Result<ConvergenceRow> {
        let h = spacings[k];
        let n = ((domain.1 - domain.0) / h).round() as usize;
        let mesh = generate::interval(domain.0, domain.1, n)?;
        let field = build_field_with(&mesh, matern, opts, None)?;
        let eta = covariance_error(&field, &mesh, matern, &[x_ref], &[window])?;
        Ok(ConvergenceRow {
            h: (domain.1 - domain.0) / n as f64,
            nodes: mesh.n_nodes(),
            eta,
        })
    });
    rows.into_iter().collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_values_give_zero() {
        let mesh = generate::interval(-0.2, 1.2, 70).unwrap();
        let v: Vec<f64> = mesh.nodes().map(|x| (x[0] * 3.0).sin() + 2.0).collect();
        assert_eq!(relative_l2_error(&mesh, &[(0.0, 1.0)], &v, &v).unwrap(), 0.0);
    }

    #[test]
    fn trapezoid_on_window() {
        // exact = 1, approx = 1 + x on (0, 1): ‖x‖² by trapezoid on h = 0.1.
        let mesh = generate::interval(-1.0, 2.0, 30).unwrap();
        let one = vec![1.0; 31];
        let a: Vec<f64> = mesh.nodes().map(|x| 1.0 + x[0]).collect();
        let h: f64 = 0.1;
        let trap: f64 = (0..10)
            .map(|i| {
                let (x0, x1) = (i as f64 * h, (i + 1) as f64 * h);
                h / 2.0 * (x0 * x0 + x1 * x1)
            })
            .sum();
        let eta = relative_l2_error(&mesh, &[(0.0, 1.0)], &a, &one).unwrap();
        assert!((eta - trap.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [0.1, 0.05, 0.025].iter().map(|&h: &f64| (h, 3.0 * h * h)).collect();
        assert!((fit_loglog_slope(&pts) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn integer_rate_is_two() {
        let p = MaternParams::new(1.0, 0.05, 1.5, 1).unwrap();
        let rows = convergence_study(
            &p,
            (-0.2, 1.2),
            (0.0, 1.0),
            0.5,
            &[1.0 / 50.0, 1.0 / 100.0, 1.0 / 200.0],
            &FieldOptions::default(),
        )
        .unwrap();
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.h, r.eta)).collect();
        let slope = fit_loglog_slope(&pts);
        assert!((slope - 2.0).abs() < 0.3, "{rows:?}");
    }

    #[test]
    fn manifold_rejected() {
        let mesh = generate::hemisphere(2).unwrap();
        let p = MaternParams::new(1.0, 0.5, 1.0, 2).unwrap();
        let f = super::super::build_field(&mesh, &p, 4).unwrap();
        assert!(covariance_error(&f, &mesh, &p, &[0.0, 0.0, 1.0], &[(-1.0, 1.0); 3]).is_err());
    }
}
