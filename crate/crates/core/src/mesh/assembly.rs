use nalgebra::DMatrix;

use super::{dist, CoefficientField, Mesh};
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

const BARY_TOL: f64 = 1e-10;

/// Mass matrix `M_ij = ∫ φ_i φ_j`, or its row-sum diagonal when `lumped`.
pub fn assemble_mass(mesh: &Mesh, lumped: bool) -> Result<SparseMatrix> {
    let n = mesh.n_nodes();
    let k = mesh.dim_param() + 1;
    // ∫ λ_a λ_b = |e| (1 + δ_ab) / ((p+1)(p+2))
    let denom = (k * (k + 1)) as f64;
    if lumped {
        let mut diag = vec![0.0; n];
        for e in 0..mesh.n_elements() {
            let g = mesh.element_geometry(e)?;
            for &v in mesh.element(e) {
                diag[v] += g.measure / k as f64;
            }
        }
        return Ok(SparseMatrix::from_diagonal(&diag));
    }
    let mut trip = Vec::with_capacity(mesh.n_elements() * k * k);
    for e in 0..mesh.n_elements() {
        let g = mesh.element_geometry(e)?;
        let el = mesh.element(e);
        for a in 0..k {
            for b in 0..k {
                let w = if a == b { 2.0 } else { 1.0 };
                trip.push((el[a], el[b], g.measure * w / denom));
            }
        }
    }
    SparseMatrix::from_triplets(&trip, (n, n))
}

/// SPDE operator matrix `L_ij = ∫ κ² φ_i φ_j + ∇φ_i · H ∇φ_j`.
///
/// Gradients are surface gradients, so on embedded surfaces the contraction
/// is with `G⁻¹` (isotropic) or `TᵀHT`. `κ²` and `H` are taken at element
/// centroids; the mass part is integrated exactly.
pub fn assemble_stiffness(mesh: &Mesh, coeff: &dyn CoefficientField) -> Result<SparseMatrix> {
    let n = mesh.n_nodes();
    let k = mesh.dim_param() + 1;
    let denom = (k * (k + 1)) as f64;
    let mut trip = Vec::with_capacity(mesh.n_elements() * k * k);
    for e in 0..mesh.n_elements() {
        let g = mesh.element_geometry(e)?;
        let el = mesh.element(e);
        let kappa2 = coeff.kappa2_at(&g.centroid);
        if !(kappa2 >= 0.0) || !kappa2.is_finite() {
            return Err(Error::InvalidParameter(format!("kappa^2 = {kappa2} at element {e}")));
        }
        let h = coeff.diffusion_at(&g.centroid);
        if let Some(h) = &h {
            check_diffusion(h, mesh.dim_embed(), e)?;
        }
        for a in 0..k {
            for b in 0..k {
                let grad = match &h {
                    None => g.grads[a].dot(&g.grads[b]),
                    Some(h) => g.grads[a].dot(&(h * &g.grads[b])),
                };
                let w = if a == b { 2.0 } else { 1.0 };
                let mass = g.measure * w / denom;
                trip.push((el[a], el[b], kappa2 * mass + g.measure * grad));
            }
        }
    }
    SparseMatrix::from_triplets(&trip, (n, n))
}

fn check_diffusion(h: &DMatrix<f64>, dim: usize, e: usize) -> Result<()> {
    if h.nrows() != dim || h.ncols() != dim {
        return Err(Error::DimensionMismatch {
            context: "diffusion tensor",
            expected: dim,
            found: h.nrows(),
        });
    }
    let asym = (h - h.transpose()).amax();
    if asym > 1e-12 * h.amax() {
        return Err(Error::InvalidParameter(format!(
            "diffusion tensor at element {e} is not symmetric"
        )));
    }
    let min_eig = h.clone().symmetric_eigenvalues().min();
    if !(min_eig > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "diffusion tensor at element {e} is not positive definite (min eigenvalue {min_eig})"
        )));
    }
    Ok(())
}

/// Precomputed affine data for point location: `ξ = B (p − x0)`.
struct Locator {
    x0: [f64; 3],
    jac: [[f64; 3]; 2],
    pinv: [[f64; 3]; 2],
    diam: f64,
}

fn locators(mesh: &Mesh) -> Result<Vec<Locator>> {
    let de = mesh.dim_embed();
    let p = mesh.dim_param();
    let mut out = Vec::with_capacity(mesh.n_elements());
    for e in 0..mesh.n_elements() {
        let g = mesh.element_geometry(e)?;
        let gm = g.jacobian.transpose() * &g.jacobian;
        let b = gm.try_inverse().expect("validated element") * g.jacobian.transpose();
        let mut loc = Locator {
            x0: [0.0; 3],
            jac: [[0.0; 3]; 2],
            pinv: [[0.0; 3]; 2],
            diam: 0.0,
        };
        loc.x0[..de].copy_from_slice(mesh.node(mesh.element(e)[0]));
        for a in 0..p {
            for c in 0..de {
                loc.jac[a][c] = g.jacobian[(c, a)];
                loc.pinv[a][c] = b[(a, c)];
            }
        }
        let el = mesh.element(e);
        for i in 0..el.len() {
            for j in i + 1..el.len() {
                loc.diam = loc.diam.max(dist(mesh.node(el[i]), mesh.node(el[j])));
            }
        }
        out.push(loc);
    }
    Ok(out)
}

/// Barycentric coordinates and distance from the element's affine hull.
fn barycentric(loc: &Locator, p: usize, de: usize, x: &[f64]) -> ([f64; 3], f64) {
    let mut r = [0.0; 3];
    for c in 0..de {
        r[c] = x[c] - loc.x0[c];
    }
    let mut lam = [0.0; 3];
    let mut s = 0.0;
    for a in 0..p {
        let xi: f64 = (0..de).map(|c| loc.pinv[a][c] * r[c]).sum();
        lam[a + 1] = xi;
        s += xi;
    }
    lam[0] = 1.0 - s;
    let mut off = 0.0;
    for c in 0..de {
        let proj: f64 = (0..p).map(|a| loc.jac[a][c] * lam[a + 1]).sum();
        off += (r[c] - proj).powi(2);
    }
    (lam, off.sqrt())
}

fn locate_with(mesh: &Mesh, locs: &[Locator], index: usize, x: &[f64]) -> Result<(usize, [f64; 3])> {
    let p = mesh.dim_param();
    let de = mesh.dim_embed();
    if x.len() != de {
        return Err(Error::DimensionMismatch {
            context: "observation point",
            expected: de,
            found: x.len(),
        });
    }
    let mut best: Option<(usize, [f64; 3], f64)> = None;
    for (e, loc) in locs.iter().enumerate() {
        let (mut lam, off) = barycentric(loc, p, de, x);
        let inside = lam[..=p].iter().all(|&l| l >= -BARY_TOL);
        if !mesh.is_manifold() {
            if inside {
                best = Some((e, lam, 0.0));
                break;
            }
            continue;
        }
        // Curved geometry: the point need not lie on any facet. Take the
        // facet with the nearest (clamped) foot point; ties keep the lower index.
        let d = if inside {
            off
        } else {
            lam[..=p].iter_mut().for_each(|l| *l = l.max(0.0));
            let s: f64 = lam[..=p].iter().sum();
            lam[..=p].iter_mut().for_each(|l| *l /= s);
            let mut d2 = 0.0;
            for c in 0..de {
                let foot = loc.x0[c] + (0..p).map(|a| loc.jac[a][c] * lam[a + 1]).sum::<f64>();
                d2 += (x[c] - foot).powi(2);
            }
            d2.sqrt()
        };
        if d <= loc.diam && best.as_ref().is_none_or(|b| d < b.2 - 1e-14) {
            best = Some((e, lam, d));
        }
    }
    match best {
        Some((e, lam, _)) => Ok((e, lam)),
        None => {
            let nearest = (0..mesh.n_elements())
                .min_by(|&a, &b| {
                    let ca = mesh.element_geometry(a).map(|g| dist(&g.centroid, x));
                    let cb = mesh.element_geometry(b).map(|g| dist(&g.centroid, x));
                    ca.unwrap_or(f64::INFINITY).total_cmp(&cb.unwrap_or(f64::INFINITY))
                })
                .unwrap_or(0);
            Err(Error::PointOutsideMesh {
                point: index,
                nearest_element: nearest,
            })
        }
    }
}

/// Finds the element containing `x` and its barycentric coordinates.
pub fn locate(mesh: &Mesh, x: &[f64]) -> Result<(usize, Vec<f64>)> {
    let locs = locators(mesh)?;
    let (e, lam) = locate_with(mesh, &locs, 0, x)?;
    Ok((e, lam[..=mesh.dim_param()].to_vec()))
}

/// Observation matrix: row `i` holds the basis-function values at `points[i]`.
pub fn observation_matrix(mesh: &Mesh, points: &[Vec<f64>]) -> Result<SparseMatrix> {
    let locs = locators(mesh)?;
    let p = mesh.dim_param();
    let mut trip = Vec::with_capacity(points.len() * (p + 1));
    for (i, x) in points.iter().enumerate() {
        let (e, lam) = locate_with(mesh, &locs, i, x)?;
        let mut w: Vec<f64> = lam[..=p].iter().map(|&l| if l < 1e-12 { 0.0 } else { l }).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        for (&node, &v) in mesh.element(e).iter().zip(&w) {
            if v != 0.0 {
                trip.push((i, node, v));
            }
        }
    }
    SparseMatrix::from_triplets(&trip, (points.len(), mesh.n_nodes()))
}
