use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use super::Mesh;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    /// One line of strictly increasing coordinates.
    Interval,
    /// Object File Format with triangular faces.
    Off,
}

impl MeshFormat {
    /// `.off` files are OFF, anything else is read as an interval file.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("off") => MeshFormat::Off,
            _ => MeshFormat::Interval,
        }
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<Mesh> {
    let text = std::fs::read_to_string(path)?;
    match format {
        MeshFormat::Interval => parse_interval(path, &text),
        MeshFormat::Off => parse_off(path, &text),
    }
}

fn parse_interval(path: &Path, text: &str) -> Result<Mesh> {
    let mut found: Option<(usize, Vec<f64>)> = None;
    for (ln, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if found.is_some() {
            return Err(parse_err(path, ln + 1, "interval files hold a single line"));
        }
        let xs = t
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| parse_err(path, ln + 1, format!("bad coordinate `{s}`: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        found = Some((ln + 1, xs));
    }
    let (ln, xs) = found.ok_or_else(|| parse_err(path, 0, "no coordinates"))?;
    if xs.len() < 2 {
        return Err(parse_err(path, ln, "need at least two nodes"));
    }
    if let Some(k) = xs.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(parse_err(
            path,
            ln,
            format!("coordinates not strictly increasing at position {}", k + 1),
        ));
    }
    interval_mesh(&xs)
}

/// Interval mesh through the given increasing coordinates, with endpoints
/// labelled `left` and `right`.
pub(crate) fn interval_mesh(xs: &[f64]) -> Result<Mesh> {
    let nodes = xs.iter().map(|&x| vec![x]).collect();
    let elems = (0..xs.len() - 1).map(|i| vec![i, i + 1]).collect();
    let mut m = Mesh::new(1, 1, nodes, elems)?;
    m.set_boundary("left", vec![0])?;
    m.set_boundary("right", vec![xs.len() - 1])?;
    Ok(m)
}

fn next_count<'a>(it: &mut impl Iterator<Item = (usize, &'a str)>, path: &Path, what: &str) -> Result<usize> {
    let (ln, t) = it
        .next()
        .ok_or_else(|| parse_err(path, 0, format!("unexpected end of file reading {what}")))?;
    t.parse::<usize>()
        .map_err(|e| parse_err(path, ln, format!("bad {what} `{t}`: {e}")))
}

fn parse_off(path: &Path, text: &str) -> Result<Mesh> {
    // Tokens with their line numbers, comments stripped.
    let mut tokens: Vec<(usize, &str)> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("");
        tokens.extend(body.split_whitespace().map(|t| (ln + 1, t)));
    }
    let mut it = tokens.into_iter();
    match it.next() {
        Some((_, "OFF")) => {}
        Some((ln, t)) => return Err(parse_err(path, ln, format!("expected `OFF`, found `{t}`"))),
        None => return Err(parse_err(path, 0, "empty file")),
    }
    let nv = next_count(&mut it, path, "vertex count")?;
    let nf = next_count(&mut it, path, "face count")?;
    next_count(&mut it, path, "edge count")?;
    let mut nodes = Vec::with_capacity(nv);
    for _ in 0..nv {
        let mut x = [0.0; 3];
        for c in x.iter_mut() {
            let (ln, t) = it
                .next()
                .ok_or_else(|| parse_err(path, 0, "unexpected end of file in vertices"))?;
            *c = t
                .parse()
                .map_err(|e| parse_err(path, ln, format!("bad coordinate `{t}`: {e}")))?;
        }
        nodes.push(x.to_vec());
    }
    let mut elems = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, t) = it
            .next()
            .ok_or_else(|| parse_err(path, 0, "unexpected end of file in faces"))?;
        if t != "3" {
            return Err(parse_err(
                path,
                ln,
                format!("only triangles supported, face has `{t}` vertices"),
            ));
        }
        let mut f = Vec::with_capacity(3);
        for _ in 0..3 {
            let (ln, t) = it
                .next()
                .ok_or_else(|| parse_err(path, ln, "unexpected end of file in face"))?;
            f.push(
                t.parse::<usize>()
                    .map_err(|e| parse_err(path, ln, format!("bad vertex index `{t}`: {e}")))?,
            );
        }
        elems.push(f);
    }
    // Planar meshes in the z = 0 plane are treated as 2D domains.
    let flat = nodes.iter().all(|x| x[2] == 0.0);
    if flat {
        nodes.iter_mut().for_each(|x| x.truncate(2));
    }
    Mesh::new(2, if flat { 2 } else { 3 }, nodes, elems)
}

/// Reads `label: i1 i2 ...` lines and attaches them to `mesh`.
pub fn load_boundary_sidecar(mesh: &mut Mesh, path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path)?;
    let mut sets: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (ln, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let (label, rest) = t
            .split_once(':')
            .ok_or_else(|| parse_err(path, ln + 1, "expected `label: i1 i2 ...`"))?;
        let label = label.trim();
        if label.is_empty() {
            return Err(parse_err(path, ln + 1, "empty label"));
        }
        let ids = rest
            .split_whitespace()
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|e| parse_err(path, ln + 1, format!("bad node index `{s}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= mesh.n_nodes()) {
            return Err(parse_err(
                path,
                ln + 1,
                format!("node {bad} out of range ({} nodes)", mesh.n_nodes()),
            ));
        }
        sets.entry(label.to_string()).or_default().extend(ids);
    }
    for (label, ids) in sets {
        mesh.set_boundary(&label, ids)?;
    }
    Ok(())
}

pub fn write_boundary_sidecar(mesh: &Mesh, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for label in mesh.boundary_labels() {
        let ids: Vec<String> = mesh.boundary(label).unwrap().iter().map(|i| i.to_string()).collect();
        writeln!(w, "{label}: {}", ids.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a triangle mesh as OFF (interval meshes are rejected).
pub fn write_off(mesh: &Mesh, path: &Path) -> Result<()> {
    if mesh.dim_param() != 2 {
        return Err(Error::Format("OFF output needs a triangle mesh".into()));
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "OFF")?;
    writeln!(w, "{} {} 0", mesh.n_nodes(), mesh.n_elements())?;
    for x in mesh.nodes() {
        let mut c = [0.0; 3];
        c[..x.len()].copy_from_slice(x);
        writeln!(w, "{:.17e} {:.17e} {:.17e}", c[0], c[1], c[2])?;
    }
    for e in mesh.elements() {
        writeln!(w, "3 {} {} {}", e[0], e[1], e[2])?;
    }
    w.flush()?;
    Ok(())
}
