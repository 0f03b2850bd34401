//! Linear simplicial meshes (segments and triangles) embedded in 1 to 3
//! dimensions, with finite-element assembly on top.

mod assembly;
mod coeff;
pub mod generate;
mod io;

pub use assembly::{assemble_mass, assemble_stiffness, locate, observation_matrix};
pub use coeff::{CoefficientField, Constant, FnCoefficients};
pub use io::{load_boundary_sidecar, load_mesh, write_boundary_sidecar, write_off, MeshFormat};

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MIN_MEASURE: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    dim_param: usize,
    dim_embed: usize,
    coords: Vec<f64>,
    elements: Vec<usize>,
    boundaries: BTreeMap<String, Vec<usize>>,
}

/// Per-element geometry of a linear simplex.
#[derive(Clone, Debug)]
pub struct ElementGeometry {
    /// Length or area in embedding units.
    pub measure: f64,
    /// Surface gradients of the local basis functions, one embedding-space
    /// vector per vertex.
    pub grads: Vec<DVector<f64>>,
    pub centroid: Vec<f64>,
    /// Covariant basis `J = [a_1 .. a_p]`, `dim_embed × dim_param`.
    pub jacobian: DMatrix<f64>,
}

impl Mesh {
    /// Builds and validates a mesh. `elements` holds `dim_param + 1` node
    /// indices per element.
    pub fn new(dim_param: usize, dim_embed: usize, nodes: Vec<Vec<f64>>, elements: Vec<Vec<usize>>) -> Result<Self> {
        if !(1..=2).contains(&dim_param) || !(1..=3).contains(&dim_embed) || dim_embed < dim_param {
            return Err(Error::InvalidParameter(format!(
                "unsupported mesh dimensions: parametric {dim_param}, embedding {dim_embed}"
            )));
        }
        let mut coords = Vec::with_capacity(nodes.len() * dim_embed);
        for (i, x) in nodes.iter().enumerate() {
            if x.len() != dim_embed {
                return Err(Error::InvalidParameter(format!(
                    "node {i} has {} coordinates, expected {dim_embed}",
                    x.len()
                )));
            }
            coords.extend_from_slice(x);
        }
        let n = nodes.len();
        let k = dim_param + 1;
        let mut flat = Vec::with_capacity(elements.len() * k);
        for (e, el) in elements.iter().enumerate() {
            if el.len() != k {
                return Err(Error::InvalidParameter(format!(
                    "element {e} has {} vertices, expected {k}",
                    el.len()
                )));
            }
            for &v in el {
                if v >= n {
                    return Err(Error::DanglingIndex {
                        element: e,
                        node: v,
                        nodes: n,
                    });
                }
            }
            flat.extend_from_slice(el);
        }
        let mesh = Self {
            dim_param,
            dim_embed,
            coords,
            elements: flat,
            boundaries: BTreeMap::new(),
        };
        for e in 0..mesh.n_elements() {
            mesh.element_geometry(e)?;
        }
        Ok(mesh)
    }

    pub fn dim_param(&self) -> usize {
        self.dim_param
    }

    pub fn dim_embed(&self) -> usize {
        self.dim_embed
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len() / self.dim_embed
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len() / (self.dim_param + 1)
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim_embed..(i + 1) * self.dim_embed]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks(self.dim_embed)
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let k = self.dim_param + 1;
        &self.elements[e * k..(e + 1) * k]
    }

    pub fn elements(&self) -> impl Iterator<Item = &[usize]> {
        self.elements.chunks(self.dim_param + 1)
    }

    /// True when the mesh is a curve or surface in a higher-dimensional space.
    pub fn is_manifold(&self) -> bool {
        self.dim_embed > self.dim_param
    }

    pub fn boundary(&self, label: &str) -> Option<&[usize]> {
        self.boundaries.get(label).map(|v| v.as_slice())
    }

    pub fn boundary_labels(&self) -> impl Iterator<Item = &str> {
        self.boundaries.keys().map(|s| s.as_str())
    }

    /// Attaches (or replaces) a named set of boundary nodes.
    pub fn set_boundary(&mut self, label: &str, mut nodes: Vec<usize>) -> Result<()> {
        let n = self.n_nodes();
        if let Some(&bad) = nodes.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidParameter(format!(
                "boundary `{label}` references node {bad}, mesh has {n}"
            )));
        }
        nodes.sort_unstable();
        nodes.dedup();
        self.boundaries.insert(label.to_string(), nodes);
        Ok(())
    }

    pub fn element_geometry(&self, e: usize) -> Result<ElementGeometry> {
        let el = self.element(e);
        let x0 = DVector::from_column_slice(self.node(el[0]));
        let p = self.dim_param;
        let mut jac = DMatrix::zeros(self.dim_embed, p);
        for a in 0..p {
            let xa = DVector::from_column_slice(self.node(el[a + 1]));
            jac.set_column(a, &(xa - &x0));
        }
        let g = jac.transpose() * &jac;
        let det_g = g.determinant();
        let factorial = if p == 1 { 1.0 } else { 2.0 };
        let measure = det_g.max(0.0).sqrt() / factorial;
        if !(measure > MIN_MEASURE) {
            return Err(Error::DegenerateElement { element: e, measure });
        }
        let g_inv = g
            .try_inverse()
            .ok_or(Error::DegenerateElement { element: e, measure })?;
        // T = J G⁻¹ maps parametric derivatives to surface gradients.
        let t = &jac * g_inv;
        let mut grads = Vec::with_capacity(p + 1);
        let mut d0 = DVector::zeros(p);
        d0.fill(-1.0);
        grads.push(&t * d0);
        for a in 0..p {
            let mut da = DVector::zeros(p);
            da[a] = 1.0;
            grads.push(&t * da);
        }
        let mut centroid = vec![0.0; self.dim_embed];
        for &v in el {
            for (c, x) in centroid.iter_mut().zip(self.node(v)) {
                *c += x / (p + 1) as f64;
            }
        }
        Ok(ElementGeometry {
            measure,
            grads,
            centroid,
            jacobian: jac,
        })
    }

    /// Total length or area.
    pub fn measure(&self) -> f64 {
        (0..self.n_elements())
            .map(|e| self.element_geometry(e).map(|g| g.measure).unwrap_or(0.0))
            .sum()
    }

    /// Nodes that lie on exactly one element facet (free boundary), sorted.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        let mut facets: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        for el in self.elements() {
            for skip in 0..el.len() {
                let mut f: Vec<usize> = el
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != skip)
                    .map(|(_, &v)| v)
                    .collect();
                f.sort_unstable();
                *facets.entry(f).or_insert(0) += 1;
            }
        }
        let mut out: Vec<usize> = facets
            .into_iter()
            .filter(|(_, c)| *c == 1)
            .flat_map(|(f, _)| f)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// SHA-256 over dimensions, coordinates and connectivity.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.dim_param as u64).to_le_bytes());
        h.update((self.dim_embed as u64).to_le_bytes());
        h.update((self.n_nodes() as u64).to_le_bytes());
        for x in &self.coords {
            h.update(x.to_le_bytes());
        }
        h.update((self.n_elements() as u64).to_le_bytes());
        for &v in &self.elements {
            h.update((v as u64).to_le_bytes());
        }
        h.finalize().into()
    }

    /// Smallest and largest element diameter.
    pub fn size_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for el in self.elements() {
            let mut d = 0.0f64;
            for i in 0..el.len() {
                for j in i + 1..el.len() {
                    d = d.max(dist(self.node(el[i]), self.node(el[j])));
                }
            }
            lo = lo.min(d);
            hi = hi.max(d);
        }
        (lo, hi)
    }
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
