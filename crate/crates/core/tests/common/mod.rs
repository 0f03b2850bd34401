#![allow(dead_code)]
//! Dense oracles and random instances shared by the integration tests and
//! the acceptance suite.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spdefem::gp::{dense_log_density, ObservationSet};
use spdefem::mesh::{generate, Mesh};
use spdefem::spde::{build_field, GaussianField, MaternParams};
use spdefem::statfem::{assemble_forward, DirichletCondition, ForwardModel};

/// Joint-Gaussian conditioning of the stacked readings for statFEM.
pub struct StatfemDense {
    pub u_mean_free: DVector<f64>,
    pub u_cov: DMatrix<f64>,
    pub log_marginal: f64,
    pub z_mean: DVector<f64>,
    pub z_cov: DMatrix<f64>,
}

pub fn statfem_dense(
    fm: &ForwardModel,
    source: &GaussianField,
    mismatch: &GaussianField,
    obs: &ObservationSet,
) -> StatfemDense {
    let free = fm.free_nodes();
    let nf = free.len();
    let (ny, no) = (obs.n_y(), obs.n_o());
    let m = DMatrix::from_fn(nf, nf, |i, j| if i == j { fm.lumped_mass()[free[i]] } else { 0.0 });
    let ainv = fm.system_matrix().to_dense().try_inverse().unwrap();
    let cs = source
        .covariance_dense()
        .unwrap()
        .select_rows(free)
        .select_columns(free);
    let c_u = &ainv * &m * cs * &m * &ainv;
    let c_d = mismatch.covariance_dense().unwrap();
    let p = obs.p().to_dense();
    let pf = p.select_columns(free);
    let mean_all = DVector::from_column_slice(fm.mean());
    let u_f = DVector::from_iterator(nf, free.iter().map(|&i| fm.mean()[i]));

    let n = ny * no;
    let block_u = &pf * &c_u * pf.transpose();
    let block_e = &p * &c_d * p.transpose() + DMatrix::identity(ny, ny) * obs.sigma_e().powi(2);
    let mut sigma = DMatrix::zeros(n, n);
    let mut cross = DMatrix::zeros(nf, n);
    let pm = &p * &mean_all;
    let mut resid = DVector::zeros(n);
    for a in 0..no {
        for b in 0..no {
            let mut blk = block_u.clone();
            if a == b {
                blk += &block_e;
            }
            sigma.view_mut((a * ny, b * ny), (ny, ny)).copy_from(&blk);
        }
        cross
            .view_mut((0, a * ny), (nf, ny))
            .copy_from(&(&c_u * pf.transpose()));
        for i in 0..ny {
            resid[a * ny + i] = obs.y()[(i, a)] - pm[i];
        }
    }
    let log_marginal = dense_log_density(sigma.clone(), &resid).unwrap();
    let ch = sigma.cholesky().unwrap();
    let u_mean_free = &u_f + &cross * ch.solve(&resid);
    let u_cov = &c_u - &cross * ch.solve(&cross.transpose());
    let mut post_all = mean_all.clone();
    for (k, &i) in free.iter().enumerate() {
        post_all[i] = u_mean_free[k];
    }
    let z_mean = &p * post_all;
    let z_cov = &pf * &u_cov * pf.transpose() + &p * &c_d * p.transpose();
    StatfemDense {
        u_mean_free,
        u_cov,
        log_marginal,
        z_mean,
        z_cov,
    }
}

pub struct StatfemInstance {
    pub mesh: Mesh,
    pub forward: ForwardModel,
    pub source: GaussianField,
    pub mismatch: GaussianField,
    pub obs: ObservationSet,
}

/// Random 1D or 2D Poisson instance with at most `max_nodes` nodes,
/// `n_y ≤ max_ny` and `n_o ≤ max_no`. 2D instances may carry a random
/// boundary.
pub fn random_statfem(seed: u64, max_nodes: usize, max_ny: usize, max_no: usize) -> StatfemInstance {
    random_statfem_with(seed, max_nodes, max_ny, max_no, 1.0)
}

/// As [`random_statfem`] with a given source exponent.
pub fn random_statfem_with(
    seed: u64,
    max_nodes: usize,
    max_ny: usize,
    max_no: usize,
    source_beta: f64,
) -> StatfemInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let two_d = rng.random_bool(0.4) && max_nodes >= 25;
    let (mesh, bc) = if two_d {
        let k = rng.random_range(4..=((max_nodes as f64).sqrt() as usize - 1).max(4));
        let m = generate::unit_square(k).unwrap();
        let bc = if rng.random_bool(0.5) {
            vec![
                DirichletCondition::with_fn("left", |x| 0.5 * (std::f64::consts::PI * x[1]).sin(), true),
                DirichletCondition::fixed("right", 0.0),
                DirichletCondition::fixed("top", 0.0),
                DirichletCondition::fixed("bottom", 0.0),
            ]
        } else {
            vec![DirichletCondition::fixed("boundary", 0.0)]
        };
        (m, bc)
    } else {
        let n = rng.random_range(12..max_nodes);
        let m = generate::interval(0.0, 1.0, n - 1).unwrap();
        let (a, b) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        (
            m,
            vec![
                DirichletCondition::fixed("left", a),
                DirichletCondition::fixed("right", b),
            ],
        )
    };
    let d = mesh.dim_param();
    let fbar: Vec<f64> = mesh.nodes().map(|x| 5.0 * (3.0 * x[0]).sin() + 1.0).collect();
    let forward = assemble_forward(&mesh, &bc, fbar).unwrap();
    let integer_nu = |beta: f64| 2.0 * beta - d as f64 / 2.0;
    let source = build_field(
        &mesh,
        &MaternParams::new(
            rng.random_range(0.5..3.0),
            rng.random_range(0.1..0.5),
            integer_nu(source_beta),
            d,
        )
        .unwrap(),
        0,
    )
    .unwrap();
    let db = [1.0, 2.0][rng.random_range(0..2)];
    let mismatch = build_field(
        &mesh,
        &MaternParams::new(
            rng.random_range(0.01..0.2),
            rng.random_range(0.1..0.5),
            integer_nu(db),
            d,
        )
        .unwrap(),
        0,
    )
    .unwrap();
    let nf = forward.free_nodes().len();
    let ny = rng.random_range(1..=max_ny.min(nf / 4));
    let no = rng.random_range(1..=max_no);
    let pts: Vec<Vec<f64>> = (0..ny)
        .map(|_| (0..mesh.dim_embed()).map(|_| rng.random_range(0.02..0.98)).collect())
        .collect();
    let y = DMatrix::from_fn(ny, no, |_, _| rng.random_range(-0.3..0.3));
    let obs = ObservationSet::new(&mesh, pts, y, rng.random_range(0.01..0.2)).unwrap();
    StatfemInstance {
        mesh,
        forward,
        source,
        mismatch,
        obs,
    }
}

/// Largest entry of `|a − b|` relative to the largest entry of `|b|`.
pub fn rel_max(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max() / b.abs().max()
}

pub fn rel_vec(a: &[f64], b: &[f64]) -> f64 {
    let d = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    d / b.iter().map(|y| y.abs()).fold(0.0, f64::max)
}

/// Dense GP conditioning for readings that share one field realization:
/// the stacked readings are jointly Gaussian with blocks `P C Pᵀ` off the
/// diagonal and `P C Pᵀ + σ_e² I` on it.
pub struct GpDense {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub log_marginal: f64,
    pub log_marginal_independent: f64,
}

/// `C_s = F_r Q_t⁻¹ F_rᵀ` from dense copies of the factors.
pub fn dense_covariance(field: &GaussianField) -> DMatrix<f64> {
    let q = field.q_t().to_dense();
    let fr = field.fr_matrix().unwrap().to_dense();
    let qinv = q.cholesky().unwrap().inverse();
    let c = &fr * qinv * fr.transpose();
    (&c + c.transpose()) * 0.5
}

pub fn gp_dense(c: &DMatrix<f64>, obs: &ObservationSet) -> GpDense {
    let (ny, no) = (obs.n_y(), obs.n_o());
    let p = obs.p().to_dense();
    let s2 = obs.sigma_e().powi(2);
    let pcp = &p * c * p.transpose();
    let n = ny * no;
    let mut sigma = DMatrix::zeros(n, n);
    let mut cross = DMatrix::zeros(c.nrows(), n);
    let mut y = DVector::zeros(n);
    let cpt = c * p.transpose();
    for a in 0..no {
        for b in 0..no {
            let mut blk = pcp.clone();
            if a == b {
                blk += DMatrix::identity(ny, ny) * s2;
            }
            sigma.view_mut((a * ny, b * ny), (ny, ny)).copy_from(&blk);
        }
        cross.view_mut((0, a * ny), (c.nrows(), ny)).copy_from(&cpt);
        for i in 0..ny {
            y[a * ny + i] = obs.y()[(i, a)];
        }
    }
    let log_marginal = dense_log_density(sigma.clone(), &y).unwrap();
    let single = &pcp + DMatrix::identity(ny, ny) * s2;
    let log_marginal_independent = (0..no)
        .map(|k| dense_log_density(single.clone(), &obs.y().column(k).into_owned()).unwrap())
        .sum();
    let ch = sigma.cholesky().unwrap();
    let mean = &cross * ch.solve(&y);
    let cov = c - &cross * ch.solve(&cross.transpose());
    GpDense {
        mean,
        cov,
        log_marginal,
        log_marginal_independent,
    }
}

/// Random GP regression instance on a 1D interval or a unit square.
pub struct GpInstance {
    pub mesh: Mesh,
    pub field: GaussianField,
    pub obs: ObservationSet,
    pub fractional: bool,
}

/// `n_u ≤ max_nodes`, `n_y ≤ max_ny`, `n_o ∈ {1, 2, 3, 5}`. Even seeds give
/// fractional exponents, odd seeds integer ones.
pub fn random_gp(seed: u64, max_nodes: usize, max_ny: usize) -> GpInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fractional = seed.is_multiple_of(2);
    let two_d = rng.random_bool(0.3);
    let mesh = if two_d {
        let k = rng.random_range(4..=((max_nodes as f64).sqrt() as usize - 1));
        generate::unit_square(k).unwrap()
    } else {
        let n = rng.random_range(20..=max_nodes);
        generate::interval(0.0, 1.0, n - 1).unwrap()
    };
    let d = mesh.dim_param();
    let (h, _) = mesh.size_range();
    let beta = if fractional {
        let lo = d as f64 / 4.0 + 0.05;
        rng.random_range(lo..2.9)
    } else {
        [1.0, 2.0][rng.random_range(0..2)]
    };
    let nu = MaternParams::nu_for_beta(beta, d);
    let ell = rng.random_range(2.0..6.0) * h;
    let degree = rng.random_range(2..=5);
    let field = build_field(
        &mesh,
        &MaternParams::new(rng.random_range(0.3..2.0), ell, nu, d).unwrap(),
        degree,
    )
    .unwrap();
    let ny = rng.random_range(1..=max_ny);
    let no = [1, 2, 3, 5][rng.random_range(0..4)];
    let pts: Vec<Vec<f64>> = (0..ny)
        .map(|_| (0..mesh.dim_embed()).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let y = DMatrix::from_fn(ny, no, |_, _| rng.random_range(-1.5..1.5));
    let obs = ObservationSet::new(&mesh, pts, y, rng.random_range(0.05..0.5)).unwrap();
    GpInstance {
        mesh,
        field,
        obs,
        fractional,
    }
}

/// `C_s` without forming `Q_t`: `G Q_α⁻¹ Gᵀ` with `G = F_r F_l⁻¹` applied
/// factor by factor and `Q_α⁻¹` unrolled into solves with `L`.
pub fn factored_covariance(field: &GaussianField) -> DMatrix<f64> {
    let f = field.factors().expect("fractional field");
    let n = f.dim();
    let l = f.stiffness().to_dense();
    let m = DVector::from_column_slice(f.mass());
    let minv = DMatrix::from_diagonal(&m.map(|v| 1.0 / v));
    let mm = DMatrix::from_diagonal(&m);
    let factor = |a: f64, b: f64| &minv * (&mm * a + &l * b);
    let mut g = DMatrix::identity(n, n) * f.scale;
    for r in &f.right {
        g = factor(r.alpha, r.beta) * g;
    }
    for d in &f.left {
        g = factor(d.alpha, d.beta).lu().solve(&g).unwrap();
    }
    let p = field.params();
    let lu = l.clone().lu();
    // Q₁⁻¹ = τ⁻² L⁻¹ M L⁻¹, Q_k⁻¹ = L⁻¹ M Q_{k−1}⁻¹ M L⁻¹.
    let linv_m = lu.solve(&mm).unwrap();
    let mut qinv = &linv_m * lu.solve(&DMatrix::identity(n, n)).unwrap().transpose() / (p.tau * p.tau);
    for _ in 1..p.alpha {
        qinv = &linv_m * qinv * linv_m.transpose();
    }
    let c = &g * qinv * g.transpose();
    (&c + c.transpose()) * 0.5
}
