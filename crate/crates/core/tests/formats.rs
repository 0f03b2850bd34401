use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use spdefem::gp::{gp_log_marginal, gp_posterior_sparse, ObservationSet};
use spdefem::io::{read_dirichlet, read_observations, write_observations, write_vtk};
use spdefem::mesh::{generate, load_boundary_sidecar, load_mesh, write_boundary_sidecar, write_off, MeshFormat};
use spdefem::spde::{build_field, load_field, save_field, MaternParams};
use spdefem::statfem::assemble_forward;
use spdefem::Error;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn parse_line(e: Error) -> usize {
    match e {
        Error::Parse { line, .. } => line,
        other => panic!("expected a parse error, got {other}"),
    }
}

#[test]
fn off_mesh_with_sidecar_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = generate::unit_square(5).unwrap();
    let off = dir.path().join("sq.off");
    let side = dir.path().join("sq.bnd");
    write_off(&mesh, &off).unwrap();
    write_boundary_sidecar(&mesh, &side).unwrap();

    assert_eq!(MeshFormat::from_path(&off), MeshFormat::Off);
    let mut back = load_mesh(&off, MeshFormat::Off).unwrap();
    load_boundary_sidecar(&mut back, &side).unwrap();
    assert_eq!(back.dim_embed(), 2);
    assert_eq!((back.n_nodes(), back.n_elements()), (mesh.n_nodes(), mesh.n_elements()));
    for i in 0..mesh.n_nodes() {
        assert_eq!(back.node(i), mesh.node(i));
    }
    let labels: Vec<_> = mesh.boundary_labels().collect();
    assert_eq!(back.boundary_labels().collect::<Vec<_>>(), labels);
    for l in labels {
        assert_eq!(back.boundary(l), mesh.boundary(l));
    }
    assert_eq!(back.content_hash(), mesh.content_hash());
}

#[test]
fn manifold_off_keeps_three_coordinates() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = generate::hemisphere(3).unwrap();
    let off = dir.path().join("h.off");
    write_off(&mesh, &off).unwrap();
    let back = load_mesh(&off, MeshFormat::Off).unwrap();
    assert!(back.is_manifold());
    assert!((back.measure() - mesh.measure()).abs() < 1e-13);
}

#[test]
fn sidecar_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let mut mesh = generate::unit_square(2).unwrap();
    let p = write(dir.path(), "b.txt", "# top\nleft: 0 3\nright 2 5\n");
    assert_eq!(parse_line(load_boundary_sidecar(&mut mesh, &p).unwrap_err()), 3);
    let p = write(dir.path(), "c.txt", "left: 0 99\n");
    assert_eq!(parse_line(load_boundary_sidecar(&mut mesh, &p).unwrap_err()), 1);
}

#[test]
fn interval_mesh_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "m.txt", "# nodes\n0, 0.1 0.3,0.7 1\n");
    let m = load_mesh(&p, MeshFormat::from_path(&p)).unwrap();
    assert_eq!(m.n_nodes(), 5);
    assert!((m.measure() - 1.0).abs() < 1e-15);
    let p = write(dir.path(), "bad.txt", "0 0.5\n0.7 1\n");
    assert_eq!(parse_line(load_mesh(&p, MeshFormat::Interval).unwrap_err()), 2);
}

#[test]
fn observations_from_file_match_in_memory() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = generate::interval(0.0, 1.0, 30).unwrap();
    let pts: Vec<Vec<f64>> = (0..7).map(|i| vec![0.05 + 0.13 * i as f64]).collect();
    let y = DMatrix::from_fn(7, 3, |i, j| (i as f64 * 0.7 + j as f64).sin() / 3.0);
    let p = dir.path().join("obs.csv");
    write_observations(&p, &pts, &y).unwrap();
    let table = read_observations(&p).unwrap();
    assert_eq!(table.points, pts);
    assert_eq!(table.y, y);

    let field = build_field(&mesh, &MaternParams::new(1.0, 0.3, 1.3, 1).unwrap(), 3).unwrap();
    let direct = ObservationSet::new(&mesh, pts, y, 0.1).unwrap();
    let loaded = table.into_observations(&mesh, 0.1).unwrap();
    let a = gp_posterior_sparse(&field, &direct).unwrap();
    let b = gp_posterior_sparse(&field, &loaded).unwrap();
    assert_eq!(a.mean(), b.mean());
    assert_eq!(
        gp_log_marginal(&field, &direct).unwrap(),
        gp_log_marginal(&field, &loaded).unwrap()
    );
}

#[test]
fn observation_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cases = [
        ("hdr.csv", "x,y\n0.1,1\n", 1),
        ("order.csv", "y1,x1\n1,0.1\n", 1),
        ("width.csv", "x1,y1\n0.1,1\n0.2\n", 3),
        ("text.csv", "x1,y1\n0.1,1\n0.2,1\n0.3,abc\n", 4),
        ("inf.csv", "x1,x2,y1\n0.1,0.2,inf\n", 2),
        ("empty.csv", "x1,y1\n", 2),
    ];
    for (name, text, line) in cases {
        let p = write(d, name, text);
        let e = read_observations(&p).unwrap_err();
        assert!(e.to_string().contains(name), "{e}");
        assert_eq!(parse_line(e), line, "{name}");
    }
}

#[test]
fn vtk_layout_for_triangles_and_segments() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = generate::hemisphere(2).unwrap();
    let n = mesh.n_nodes();
    let a: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let b = vec![0.5; n];
    let p = dir.path().join("h.vtk");
    write_vtk(&p, &mesh, &[("a", &a), ("b", &b)]).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# vtk DataFile Version 3.0");
    assert_eq!(lines[2], "ASCII");
    assert_eq!(lines[4], format!("POINTS {n} double"));
    for (i, l) in lines[5..5 + n].iter().enumerate() {
        let c: Vec<f64> = l.split(' ').map(|s| s.parse().unwrap()).collect();
        assert_eq!(c, mesh.node(i));
    }
    let ne = mesh.n_elements();
    assert_eq!(lines[5 + n], format!("CELLS {ne} {}", 4 * ne));
    assert!(lines[6 + n].starts_with("3 "));
    assert_eq!(lines[6 + n + ne], format!("CELL_TYPES {ne}"));
    assert_eq!(lines[7 + n + ne], "5");
    assert_eq!(text.matches("SCALARS").count(), 2);
    assert_eq!(lines.len(), 8 + n + 2 * ne + 2 * (n + 2));

    let seg = generate::interval(0.0, 1.0, 4).unwrap();
    let p = dir.path().join("s.vtk");
    write_vtk(&p, &seg, &[("v", &[1.0; 5])]).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.contains("CELLS 4 12\n2 0 1\n"));
    assert!(text.contains("CELL_TYPES 4\n3\n"));
    assert!(write_vtk(&p, &seg, &[("two words", &[1.0; 5])]).is_err());
    assert!(write_vtk(&p, &seg, &[("short", &[1.0; 4])]).is_err());
}

#[test]
fn dirichlet_file_drives_forward_model() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = generate::interval(0.0, 1.0, 10).unwrap();
    let p = write(
        dir.path(),
        "bc.txt",
        "# both ends\nleft 1.5\n\nright random 0.25  # noisy end\n",
    );
    let bc = read_dirichlet(&p).unwrap();
    let fm = assemble_forward(&mesh, &bc, vec![0.0; 11]).unwrap();
    assert_eq!(fm.fixed_nodes(), &[0]);
    assert_eq!(fm.random_nodes(), &[10]);
    assert!(fm.free_nodes().contains(&10));
    assert!((fm.mean()[0] - 1.5).abs() < 1e-14);
    assert!((fm.mean()[10] - 0.25).abs() < 1e-14);
    // Zero source: the mean is linear between the boundary values.
    assert!((fm.mean()[5] - 0.875).abs() < 1e-12);

    let bad = write(dir.path(), "bad.txt", "left 0\nright maybe 1\n");
    assert_eq!(parse_line(read_dirichlet(&bad).unwrap_err()), 2);
    let nan = write(dir.path(), "nan.txt", "left nan\n");
    assert_eq!(parse_line(read_dirichlet(&nan).unwrap_err()), 1);
    let none = write(dir.path(), "none.txt", "# nothing\n");
    assert!(read_dirichlet(&none).is_err());
}

#[test]
fn field_file_round_trips_for_both_exponent_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = generate::unit_square(6).unwrap();
    for (nu, degree) in [(1.0, 0), (0.6, 4), (2.3, 3)] {
        let field = build_field(&mesh, &MaternParams::new(0.8, 0.35, nu, 2).unwrap(), degree).unwrap();
        let p = dir.path().join(format!("f{nu}.bin"));
        save_field(&field, &p).unwrap();
        let back = load_field(&p, &mesh).unwrap();
        assert_eq!(back.is_fractional(), field.is_fractional());
        assert_eq!(back.matern(), field.matern());
        assert_eq!(back.params(), field.params());
        assert_eq!(back.lumped_mass(), field.lumped_mass());
        assert_eq!(back.tau(), field.tau());
        assert_eq!(back.q_t().to_dense(), field.q_t().to_dense());
        let v: Vec<f64> = (0..field.dim()).map(|i| (i as f64).cos()).collect();
        assert_eq!(back.covariance_apply(&v).unwrap(), field.covariance_apply(&v).unwrap());
        assert_eq!(back.sample(3, 9), field.sample(3, 9));
    }
}

#[test]
fn field_file_rejects_foreign_or_damaged_input() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = generate::unit_square(4).unwrap();
    let field = build_field(&mesh, &MaternParams::new(1.0, 0.4, 0.8, 2).unwrap(), 3).unwrap();
    let p = dir.path().join("f.bin");
    save_field(&field, &p).unwrap();

    let other = generate::unit_square(5).unwrap();
    assert!(matches!(load_field(&p, &other), Err(Error::Format(_))));

    let bytes = std::fs::read(&p).unwrap();
    let cut = dir.path().join("cut.bin");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    assert!(load_field(&cut, &mesh).is_err());

    let mut magic = bytes.clone();
    magic[0] = b'X';
    let bad = dir.path().join("magic.bin");
    std::fs::write(&bad, &magic).unwrap();
    assert!(matches!(load_field(&bad, &mesh), Err(Error::Format(_))));
}
