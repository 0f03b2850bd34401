//! Observation, Dirichlet and output file formats.
//!
//! Observations are CSV with header `x1[,x2[,x3]],y1[,y2,...]`, one row per
//! point. Numeric output is CSV with a header row and 17 significant digits,
//! or legacy ASCII VTK with point data for meshes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gp::ObservationSet;
use crate::mesh::Mesh;
use crate::statfem::DirichletCondition;

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Observation points and readings as read from CSV, before they are tied to
/// a mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationTable {
    pub points: Vec<Vec<f64>>,
    /// `n_y × n_o` readings.
    pub y: DMatrix<f64>,
}

impl ObservationTable {
    pub fn into_observations(self, mesh: &Mesh, sigma_e: f64) -> Result<ObservationSet> {
        ObservationSet::new(mesh, self.points, self.y, sigma_e)
    }
}

pub fn read_observations(path: &Path) -> Result<ObservationTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;
    let header = rdr.headers()?.clone();
    let nx = header.iter().take_while(|h| h.starts_with('x')).count();
    let ny = header.len() - nx;
    let expect = |prefix: char, k: usize, h: &str| h == format!("{prefix}{}", k + 1);
    let header_ok = (1..=3).contains(&nx)
        && ny >= 1
        && header.iter().take(nx).enumerate().all(|(k, h)| expect('x', k, h))
        && header.iter().skip(nx).enumerate().all(|(k, h)| expect('y', k, h));
    if !header_ok {
        return Err(parse_err(path, 1, "header must be x1[,x2[,x3]],y1[,y2,...]"));
    }
    let mut points = Vec::new();
    let mut vals = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let mut row = Vec::with_capacity(rec.len());
        for f in rec.iter() {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(path, line, format!("`{f}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, "non-finite value"));
            }
            row.push(v);
        }
        points.push(row[..nx].to_vec());
        vals.extend_from_slice(&row[nx..]);
    }
    if points.is_empty() {
        return Err(parse_err(path, 2, "no observation rows"));
    }
    let y = DMatrix::from_row_slice(points.len(), ny, &vals);
    Ok(ObservationTable { points, y })
}

pub fn write_observations(path: &Path, points: &[Vec<f64>], y: &DMatrix<f64>) -> Result<()> {
    if points.len() != y.nrows() {
        return Err(Error::DimensionMismatch {
            context: "observation rows",
            expected: points.len(),
            found: y.nrows(),
        });
    }
    let nx = points.first().map_or(0, |p| p.len());
    let mut header: Vec<String> = (1..=nx).map(|k| format!("x{k}")).collect();
    header.extend((1..=y.ncols()).map(|k| format!("y{k}")));
    let rows = points.iter().enumerate().map(|(i, p)| {
        let mut r = p.clone();
        r.extend(y.row(i).iter());
        r
    });
    write_rows(path, &header, rows)
}

/// Formats a value with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a CSV with the given header and numeric rows.
pub fn write_rows<S, I>(path: &Path, header: &[S], rows: I) -> Result<()>
where
    S: AsRef<str>,
    I: IntoIterator<Item = Vec<f64>>,
{
    let f = File::create(path)?;
    write_rows_to(f, header, rows)
}

pub fn write_rows_to<W, S, I>(out: W, header: &[S], rows: I) -> Result<()>
where
    W: Write,
    S: AsRef<str>,
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header.iter().map(|h| h.as_ref()))?;
    for r in rows {
        if r.len() != header.len() {
            return Err(Error::DimensionMismatch {
                context: "CSV row",
                expected: header.len(),
                found: r.len(),
            });
        }
        w.write_record(r.iter().map(|v| fmt_f64(*v)))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one row per node: coordinates then each named field.
pub fn write_node_csv(path: &Path, mesh: &Mesh, fields: &[(&str, &[f64])]) -> Result<()> {
    check_fields(mesh, fields)?;
    let mut header: Vec<String> = (1..=mesh.dim_embed()).map(|k| format!("x{k}")).collect();
    header.extend(fields.iter().map(|(n, _)| n.to_string()));
    let rows = (0..mesh.n_nodes()).map(|i| {
        let mut r = mesh.node(i).to_vec();
        r.extend(fields.iter().map(|(_, v)| v[i]));
        r
    });
    write_rows(path, &header, rows)
}

fn check_fields(mesh: &Mesh, fields: &[(&str, &[f64])]) -> Result<()> {
    for (_, v) in fields {
        if v.len() != mesh.n_nodes() {
            return Err(Error::DimensionMismatch {
                context: "nodal field",
                expected: mesh.n_nodes(),
                found: v.len(),
            });
        }
    }
    Ok(())
}

/// Legacy ASCII VTK unstructured grid with `POINT_DATA` scalars. Triangles
/// are cell type 5, segments type 3.
pub fn write_vtk(path: &Path, mesh: &Mesh, fields: &[(&str, &[f64])]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_vtk_to(&mut w, mesh, fields)?;
    w.flush()?;
    Ok(())
}

pub fn write_vtk_to<W: Write>(w: &mut W, mesh: &Mesh, fields: &[(&str, &[f64])]) -> Result<()> {
    check_fields(mesh, fields)?;
    for (name, _) in fields {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::InvalidParameter(format!(
                "VTK field name `{name}` must be non-empty without whitespace"
            )));
        }
    }
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "spdefem field")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", mesh.n_nodes())?;
    for x in mesh.nodes() {
        let mut c = [0.0; 3];
        c[..x.len()].copy_from_slice(x);
        writeln!(w, "{} {} {}", fmt_f64(c[0]), fmt_f64(c[1]), fmt_f64(c[2]))?;
    }
    let k = mesh.dim_param() + 1;
    writeln!(w, "CELLS {} {}", mesh.n_elements(), mesh.n_elements() * (k + 1))?;
    for e in mesh.elements() {
        let ids: Vec<String> = e.iter().map(|i| i.to_string()).collect();
        writeln!(w, "{k} {}", ids.join(" "))?;
    }
    writeln!(w, "CELL_TYPES {}", mesh.n_elements())?;
    let ty = if k == 3 { 5 } else { 3 };
    for _ in 0..mesh.n_elements() {
        writeln!(w, "{ty}")?;
    }
    if !fields.is_empty() {
        writeln!(w, "POINT_DATA {}", mesh.n_nodes())?;
        for (name, v) in fields {
            writeln!(w, "SCALARS {name} double 1")?;
            writeln!(w, "LOOKUP_TABLE default")?;
            for x in v.iter() {
                writeln!(w, "{}", fmt_f64(*x))?;
            }
        }
    }
    Ok(())
}

/// Dirichlet spec: one `<label> <value>` or `<label> random <value>` per
/// line; `#` starts a comment.
pub fn read_dirichlet(path: &Path) -> Result<Vec<DirichletCondition>> {
    let f = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let toks: Vec<&str> = body.split_whitespace().collect();
        let (label, random, value) = match toks.as_slice() {
            [l, v] => (*l, false, *v),
            [l, "random", v] => (*l, true, *v),
            _ => {
                return Err(parse_err(
                    path,
                    i + 1,
                    "expected `<label> <value>` or `<label> random <value>`",
                ))
            }
        };
        let v: f64 = value
            .parse()
            .map_err(|_| parse_err(path, i + 1, format!("`{value}` is not a number")))?;
        if !v.is_finite() {
            return Err(parse_err(path, i + 1, "non-finite boundary value"));
        }
        out.push(if random {
            DirichletCondition::random(label, v)
        } else {
            DirichletCondition::fixed(label, v)
        });
    }
    if out.is_empty() {
        return Err(parse_err(path, 1, "no Dirichlet conditions"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate;

    #[test]
    fn observations_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("obs.csv");
        let pts = vec![vec![0.1, 0.2], vec![0.3, 0.7], vec![0.9, 0.5]];
        let y = DMatrix::from_row_slice(3, 2, &[1.0, 1.0 / 3.0, -2.5e-17, 4.0, 5.0, 6.0]);
        write_observations(&p, &pts, &y).unwrap();
        let t = read_observations(&p).unwrap();
        assert_eq!(t.points, pts);
        assert_eq!(t.y, y);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("x1,x2,y1,y2\n"));
        let obs = t.into_observations(&generate::unit_square(4).unwrap(), 0.1).unwrap();
        assert_eq!((obs.n_y(), obs.n_o()), (3, 2));
    }

    #[test]
    fn observation_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("obs.csv");
        for (body, line) in [
            ("a,y1\n0,1\n", 1),
            ("x1,y2\n0,1\n", 1),
            ("x1,y1\n0,zz\n", 2),
            ("x1,y1\n0,1\n0.5,inf\n", 3),
            ("x1,y1\n", 2),
        ] {
            std::fs::write(&p, body).unwrap();
            match read_observations(&p) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{body}"),
                other => panic!("{body}: {other:?}"),
            }
        }
        std::fs::write(&p, "x1,y1\n0,1,2\n").unwrap();
        assert!(read_observations(&p).is_err());
    }

    #[test]
    fn csv_full_precision() {
        let mut buf = Vec::new();
        write_rows_to(&mut buf, &["a", "b"], vec![vec![0.1, std::f64::consts::PI]]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next().unwrap(), "a,b");
        let vals: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(vals, vec![0.1, std::f64::consts::PI]);
        assert!(write_rows_to(Vec::new(), &["a"], vec![vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn vtk_layout() {
        let mesh = generate::unit_square(2).unwrap();
        let v: Vec<f64> = (0..mesh.n_nodes()).map(|i| i as f64).collect();
        let mut buf = Vec::new();
        write_vtk_to(&mut buf, &mesh, &[("mean", &v)]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("# vtk DataFile Version 3.0\n"));
        assert!(s.contains(&format!("POINTS {} double", mesh.n_nodes())));
        assert!(s.contains(&format!("CELLS {} {}", mesh.n_elements(), 4 * mesh.n_elements())));
        assert!(s.contains(&format!(
            "POINT_DATA {}\nSCALARS mean double 1\nLOOKUP_TABLE default\n",
            mesh.n_nodes()
        )));
        assert_eq!(s.lines().filter(|l| *l == "5").count(), mesh.n_elements());
        assert!(write_vtk_to(&mut Vec::new(), &mesh, &[("bad name", &v)]).is_err());
        assert!(write_vtk_to(&mut Vec::new(), &mesh, &[("short", &v[1..])]).is_err());
    }

    #[test]
    fn dirichlet_spec() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bc.txt");
        std::fs::write(&p, "# walls\nleft 0.5\n\nright random -1e-2  # noisy\n").unwrap();
        let bc = read_dirichlet(&p).unwrap();
        assert_eq!(bc.len(), 2);
        assert_eq!((bc[0].label.as_str(), bc[0].random), ("left", false));
        assert_eq!((bc[1].label.as_str(), bc[1].random), ("right", true));
        for bad in ["left\n", "left fixed 1\n", "left x\n", "# nothing\n"] {
            std::fs::write(&p, bad).unwrap();
            assert!(matches!(read_dirichlet(&p), Err(Error::Parse { .. })), "{bad}");
        }
    }
}
