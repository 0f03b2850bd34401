//! Structured meshes used by the examples, tests and CLI.

use std::collections::HashMap;

use super::io::interval_mesh;
use super::Mesh;
use crate::error::{Error, Result};

/// `n` equal segments on `[a, b]`.
pub fn interval(a: f64, b: f64, n: usize) -> Result<Mesh> {
    if n == 0 || !(b > a) {
        return Err(Error::InvalidParameter(format!(
            "interval needs a < b and at least one element (got [{a}, {b}], n = {n})"
        )));
    }
    let xs: Vec<f64> = (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect();
    interval_mesh(&xs)
}

/// `nx × ny` cells on `[x0, x1] × [y0, y1]`, each split along its
/// lower-left to upper-right diagonal. Node `(i, j)` has index
/// `j (nx + 1) + i`. Sides are labelled `left`, `right`, `bottom`, `top`,
/// and `boundary` holds all of them.
pub fn rectangle(x0: f64, x1: f64, y0: f64, y1: f64, nx: usize, ny: usize) -> Result<Mesh> {
    if nx == 0 || ny == 0 || !(x1 > x0) || !(y1 > y0) {
        return Err(Error::InvalidParameter("empty rectangle".into()));
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push(vec![
                x0 + (x1 - x0) * i as f64 / nx as f64,
                y0 + (y1 - y0) * j as f64 / ny as f64,
            ]);
        }
    }
    let mut elems = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            elems.push(vec![id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            elems.push(vec![id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    let mut m = Mesh::new(2, 2, nodes, elems)?;
    let left: Vec<usize> = (0..=ny).map(|j| id(0, j)).collect();
    let right: Vec<usize> = (0..=ny).map(|j| id(nx, j)).collect();
    let bottom: Vec<usize> = (0..=nx).map(|i| id(i, 0)).collect();
    let top: Vec<usize> = (0..=nx).map(|i| id(i, ny)).collect();
    let all = [&left[..], &right[..], &bottom[..], &top[..]].concat();
    m.set_boundary("left", left)?;
    m.set_boundary("right", right)?;
    m.set_boundary("bottom", bottom)?;
    m.set_boundary("top", top)?;
    m.set_boundary("boundary", all)?;
    Ok(m)
}

/// Unit square with `n × n` cells.
pub fn unit_square(n: usize) -> Result<Mesh> {
    rectangle(0.0, 1.0, 0.0, 1.0, n, n)
}

/// Upper unit hemisphere from the four upper faces of an octahedron, each
/// split into `n²` triangles and projected radially onto the sphere.
///
/// Has `2n² + 2n + 1` nodes; meshes for `n` and `2n` share the coarse nodes.
/// The rim `z = 0` is labelled `equator`.
pub fn hemisphere(n: usize) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::InvalidParameter("hemisphere needs n >= 1".into()));
    }
    let ni = n as i64;
    let mut index: HashMap<(i64, i64), usize> = HashMap::new();
    let mut nodes = Vec::new();
    let mut rim = Vec::new();
    for i in -ni..=ni {
        for j in -ni..=ni {
            let k = i.abs() + j.abs();
            if k > ni {
                continue;
            }
            let p = [i as f64, j as f64, (ni - k) as f64];
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            index.insert((i, j), nodes.len());
            if k == ni {
                rim.push(nodes.len());
            }
            nodes.push(vec![p[0] / r, p[1] / r, p[2] / r]);
        }
    }
    let mut elems = Vec::with_capacity(4 * n * n);
    for (si, sj) in [(1i64, 1i64), (-1, 1), (-1, -1), (1, -1)] {
        for a in 0..ni {
            for b in 0..ni - a {
                let p = |u: i64, v: i64| index[&(si * u, sj * v)];
                let mut t1 = vec![p(a, b), p(a + 1, b), p(a, b + 1)];
                if si * sj < 0 {
                    t1.swap(1, 2);
                }
                elems.push(t1);
                if a + b + 2 <= ni {
                    let mut t2 = vec![p(a + 1, b), p(a + 1, b + 1), p(a, b + 1)];
                    if si * sj < 0 {
                        t2.swap(1, 2);
                    }
                    elems.push(t2);
                }
            }
        }
    }
    let mut m = Mesh::new(2, 3, nodes, elems)?;
    m.set_boundary("equator", rim)?;
    Ok(m)
}

/// Regular icosahedron with edge length 2, outward-oriented faces.
pub fn icosahedron() -> Result<Mesh> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut nodes = Vec::with_capacity(12);
    for s1 in [-1.0, 1.0] {
        for s2 in [-1.0, 1.0] {
            nodes.push(vec![0.0, s1, s2 * phi]);
            nodes.push(vec![s1, s2 * phi, 0.0]);
            nodes.push(vec![s2 * phi, 0.0, s1]);
        }
    }
    let d = super::dist;
    let adj = |a: usize, b: usize| (d(&nodes[a], &nodes[b]) - 2.0).abs() < 1e-9;
    let mut elems = Vec::with_capacity(20);
    for a in 0..12 {
        for b in a + 1..12 {
            for c in b + 1..12 {
                if adj(a, b) && adj(b, c) && adj(a, c) {
                    let (x, y, z) = (&nodes[a], &nodes[b], &nodes[c]);
                    let u = [y[0] - x[0], y[1] - x[1], y[2] - x[2]];
                    let v = [z[0] - x[0], z[1] - x[1], z[2] - x[2]];
                    let nrm = [
                        u[1] * v[2] - u[2] * v[1],
                        u[2] * v[0] - u[0] * v[2],
                        u[0] * v[1] - u[1] * v[0],
                    ];
                    let out = nrm[0] * x[0] + nrm[1] * x[1] + nrm[2] * x[2];
                    elems.push(if out > 0.0 { vec![a, b, c] } else { vec![a, c, b] });
                }
            }
        }
    }
    Mesh::new(2, 3, nodes, elems)
}
