//! Binary field container.
//!
//! Layout (little-endian): magic `SPDEF1`; SHA-256 of the mesh; Matérn
//! `σ, ℓ, ν` as f64 and `d` as u32; SPDE `κ, β, τ` as f64; rational degree
//! u32; node count u64; lumped mass; `Q_t` triplets; a u8 flag, followed when
//! set by `F_r`: scale, `λ₁`, the right and left `(α, β)` factor lists; then
//! nodal `τ` and the triplets of `L`. Triplets are a u64 count then
//! `(u64, u64, f64)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{GaussianField, MaternParams};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::rational::{Factor, OperatorFactors};
use crate::sparse::SparseMatrix;

const MAGIC: &[u8; 6] = b"SPDEF1";

fn write_triplets<W: Write>(w: &mut W, a: &SparseMatrix) -> Result<()> {
    w.write_u64::<LE>(a.nnz() as u64)?;
    for (i, j, v) in a.triplets() {
        w.write_u64::<LE>(i as u64)?;
        w.write_u64::<LE>(j as u64)?;
        w.write_f64::<LE>(v)?;
    }
    Ok(())
}

fn read_len<R: Read>(r: &mut R, limit: u64, what: &str) -> Result<usize> {
    let n = r.read_u64::<LE>()?;
    if n > limit {
        return Err(Error::Format(format!("{what} count {n} exceeds {limit}")));
    }
    Ok(n as usize)
}

fn read_triplets<R: Read>(r: &mut R, n: usize) -> Result<SparseMatrix> {
    let nnz = read_len(r, (n as u64).saturating_mul(n as u64), "triplet")?;
    let mut t = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        let i = r.read_u64::<LE>()? as usize;
        let j = r.read_u64::<LE>()? as usize;
        t.push((i, j, r.read_f64::<LE>()?));
    }
    SparseMatrix::from_triplets(&t, (n, n)).map_err(|e| Error::Format(e.to_string()))
}

fn write_factors<W: Write>(w: &mut W, fs: &[Factor]) -> Result<()> {
    w.write_u64::<LE>(fs.len() as u64)?;
    for f in fs {
        w.write_f64::<LE>(f.alpha)?;
        w.write_f64::<LE>(f.beta)?;
    }
    Ok(())
}

fn read_factors<R: Read>(r: &mut R) -> Result<Vec<Factor>> {
    let n = read_len(r, 1024, "factor")?;
    (0..n)
        .map(|_| {
            Ok(Factor {
                alpha: r.read_f64::<LE>()?,
                beta: r.read_f64::<LE>()?,
            })
        })
        .collect()
}

pub fn save_field(field: &GaussianField, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(field.mesh_hash())?;
    let m = field.matern();
    w.write_f64::<LE>(m.sigma)?;
    w.write_f64::<LE>(m.ell)?;
    w.write_f64::<LE>(m.nu)?;
    w.write_u32::<LE>(m.dim as u32)?;
    let p = field.params();
    w.write_f64::<LE>(p.kappa)?;
    w.write_f64::<LE>(p.beta)?;
    w.write_f64::<LE>(p.tau)?;
    w.write_u32::<LE>(field.degree() as u32)?;
    w.write_u64::<LE>(field.dim() as u64)?;
    for &v in field.lumped_mass() {
        w.write_f64::<LE>(v)?;
    }
    write_triplets(&mut w, field.q_t())?;
    match field.factors() {
        None => w.write_u8(0)?,
        Some(f) => {
            w.write_u8(1)?;
            w.write_f64::<LE>(f.scale)?;
            w.write_f64::<LE>(f.lambda1)?;
            write_factors(&mut w, &f.right)?;
            write_factors(&mut w, &f.left)?;
        }
    }
    for &t in field.tau() {
        w.write_f64::<LE>(t)?;
    }
    write_triplets(&mut w, field.operator())?;
    w.flush()?;
    Ok(())
}

/// Reads a field and checks that it was built on `mesh`.
pub fn load_field(path: &Path, mesh: &Mesh) -> Result<GaussianField> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected SPDEF1",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut hash = [0u8; 32];
    r.read_exact(&mut hash)?;
    if hash != mesh.content_hash() {
        return Err(Error::Format("field was built on a different mesh".into()));
    }
    let sigma = r.read_f64::<LE>()?;
    let ell = r.read_f64::<LE>()?;
    let nu = r.read_f64::<LE>()?;
    let dim = r.read_u32::<LE>()? as usize;
    let matern = MaternParams::new(sigma, ell, nu, dim).map_err(|e| Error::Format(e.to_string()))?;
    // κ, β, τ are derived from the Matérn triple; stored for other readers.
    for _ in 0..3 {
        r.read_f64::<LE>()?;
    }
    let degree = r.read_u32::<LE>()? as usize;
    let n = read_len(&mut r, mesh.n_nodes() as u64, "node")?;
    if n != mesh.n_nodes() {
        return Err(Error::Format(format!("{n} nodes stored, mesh has {}", mesh.n_nodes())));
    }
    let mass = (0..n)
        .map(|_| r.read_f64::<LE>())
        .collect::<std::io::Result<Vec<_>>>()?;
    let q_t = read_triplets(&mut r, n)?;
    let stored = match r.read_u8()? {
        0 => None,
        1 => {
            let scale = r.read_f64::<LE>()?;
            let lambda1 = r.read_f64::<LE>()?;
            Some((scale, lambda1, read_factors(&mut r)?, read_factors(&mut r)?))
        }
        f => return Err(Error::Format(format!("unknown factor flag {f}"))),
    };
    let tau = (0..n)
        .map(|_| r.read_f64::<LE>())
        .collect::<std::io::Result<Vec<_>>>()?;
    let l = read_triplets(&mut r, n)?;
    let factors = stored.map(|(scale, lambda1, right, left)| {
        OperatorFactors::from_parts(mass.clone(), l.clone(), scale, right, left, lambda1)
    });
    GaussianField::from_parts(matern, mass, tau, l, q_t, factors, degree, hash)
}
