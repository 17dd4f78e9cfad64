//! VTK legacy ASCII (version 3.0) unstructured-grid snapshots: quad cells
//! (type 9), nodal `u`, `alpha`, `kappa_eq`, `gamma` and per-cell
//! `eps_p_eq`, all written with 9 significant digits.

use crate::mesh::Mesh;
use crate::sig9;
use std::fmt::Write as _;

/// Nodal and per-cell snapshot fields.
#[derive(Debug, Clone)]
pub struct SnapshotFields {
    /// Nodal displacements, `[u_x, u_y]` interleaved, length 2·n_nodes.
    pub u: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Nodal sum of the per-surface hardening variables.
    pub kappa_eq: Vec<f64>,
    /// Nodal fatigue variable (quadrature values averaged per node).
    pub gamma: Vec<f64>,
    /// Per-cell equivalent plastic strain.
    pub eps_p_eq: Vec<f64>,
}

pub fn write_vtk(mesh: &Mesh, fields: &SnapshotFields) -> String {
    let n = mesh.coords.len();
    let ne = mesh.elements.len();
    assert_eq!(fields.u.len(), 2 * n);
    assert_eq!(fields.alpha.len(), n);
    assert_eq!(fields.kappa_eq.len(), n);
    assert_eq!(fields.gamma.len(), n);
    assert_eq!(fields.eps_p_eq.len(), ne);
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    s.push_str("cyclic plasticity / phase-field snapshot\n");
    s.push_str("ASCII\n");
    s.push_str("DATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {n} double");
    for p in &mesh.coords {
        let _ = writeln!(s, "{} {} {}", sig9(p[0]), sig9(p[1]), sig9(0.0));
    }
    let _ = writeln!(s, "CELLS {ne} {}", 5 * ne);
    for e in &mesh.elements {
        let _ = writeln!(s, "4 {} {} {} {}", e[0], e[1], e[2], e[3]);
    }
    let _ = writeln!(s, "CELL_TYPES {ne}");
    for _ in 0..ne {
        s.push_str("9\n");
    }
    let _ = writeln!(s, "POINT_DATA {n}");
    s.push_str("VECTORS u double\n");
    for i in 0..n {
        let _ = writeln!(
            s,
            "{} {} {}",
            sig9(fields.u[2 * i]),
            sig9(fields.u[2 * i + 1]),
            sig9(0.0)
        );
    }
    for (name, data) in [
        ("alpha", &fields.alpha),
        ("kappa_eq", &fields.kappa_eq),
        ("gamma", &fields.gamma),
    ] {
        let _ = writeln!(s, "SCALARS {name} double 1");
        s.push_str("LOOKUP_TABLE default\n");
        for v in data.iter() {
            let _ = writeln!(s, "{}", sig9(*v));
        }
    }
    let _ = writeln!(s, "CELL_DATA {ne}");
    s.push_str("SCALARS eps_p_eq double 1\n");
    s.push_str("LOOKUP_TABLE default\n");
    for v in &fields.eps_p_eq {
        let _ = writeln!(s, "{}", sig9(*v));
    }
    s
}

/// Points, connectivity, and fields parsed back from a snapshot.
pub type VtkSnapshot = (Vec<[f64; 3]>, Vec<[usize; 4]>, SnapshotFields);

/// Minimal reader for the writer's own output; used by round-trip tests.
pub fn read_vtk(text: &str) -> Option<VtkSnapshot> {
    let mut lines = text.lines();
    let mut points = vec![];
    let mut cells = vec![];
    let mut u = vec![];
    let mut scalars: Vec<Vec<f64>> = vec![];
    let mut eps = vec![];
    while let Some(line) = lines.next() {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("POINTS") => {
                let n: usize = tok.next()?.parse().ok()?;
                for _ in 0..n {
                    let l = lines.next()?;
                    let mut t = l.split_whitespace();
                    points.push([
                        t.next()?.parse().ok()?,
                        t.next()?.parse().ok()?,
                        t.next()?.parse().ok()?,
                    ]);
                }
            }
            Some("CELLS") => {
                let n: usize = tok.next()?.parse().ok()?;
                for _ in 0..n {
                    let l = lines.next()?;
                    let mut t = l.split_whitespace();
                    if t.next()? != "4" {
                        return None;
                    }
                    cells.push([
                        t.next()?.parse().ok()?,
                        t.next()?.parse().ok()?,
                        t.next()?.parse().ok()?,
                        t.next()?.parse().ok()?,
                    ]);
                }
            }
            Some("VECTORS") => {
                for _ in 0..points.len() {
                    let l = lines.next()?;
                    let mut t = l.split_whitespace();
                    u.push(t.next()?.parse().ok()?);
                    u.push(t.next()?.parse().ok()?);
                    t.next()?; // z component
                }
            }
            Some("SCALARS") => {
                lines.next()?; // LOOKUP_TABLE
                let count = if scalars.len() < 3 {
                    points.len()
                } else {
                    cells.len()
                };
                let mut data = Vec::with_capacity(count);
                for _ in 0..count {
                    data.push(lines.next()?.trim().parse().ok()?);
                }
                if scalars.len() < 3 {
                    scalars.push(data);
                } else {
                    eps = data;
                }
            }
            _ => {}
        }
    }
    if scalars.len() != 3 {
        return None;
    }
    let gamma = scalars.pop()?;
    let kappa_eq = scalars.pop()?;
    let alpha = scalars.pop()?;
    Some((
        points,
        cells,
        SnapshotFields {
            u,
            alpha,
            kappa_eq,
            gamma,
            eps_p_eq: eps,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_rect;

    fn zero_fields(n: usize, ne: usize) -> SnapshotFields {
        SnapshotFields {
            u: vec![0.0; 2 * n],
            alpha: vec![0.0; n],
            kappa_eq: vec![0.0; n],
            gamma: vec![0.0; n],
            eps_p_eq: vec![0.0; ne],
        }
    }

    #[test]
    fn single_element_zero_fields_layout() {
        let mesh = generate_rect(1.0, 1.0, 1, 1);
        let text = write_vtk(&mesh, &zero_fields(4, 1));
        assert!(text.starts_with("# vtk DataFile Version 3.0\n"));
        assert!(text.contains("POINTS 4 double"));
        assert!(text.contains("CELLS 1 5"));
        assert!(text.contains("CELL_TYPES 1\n9\n"));
        assert!(text.contains("SCALARS alpha double 1"));
        assert!(text.contains("SCALARS eps_p_eq double 1"));
        let (pts, cells, f) = read_vtk(&text).unwrap();
        assert_eq!(pts.len(), 4);
        assert_eq!(cells.len(), 1);
        assert!(f.alpha.iter().all(|&v| v == 0.0));
        assert!(f.u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nodal_value_lands_on_the_right_node() {
        let mesh = generate_rect(1.0, 1.0, 1, 1);
        let mut f = zero_fields(4, 1);
        f.alpha[2] = 1.0;
        let (_, _, back) = read_vtk(&write_vtk(&mesh, &f)).unwrap();
        assert_eq!(back.alpha[2], 1.0);
        assert_eq!(back.alpha[0], 0.0);
    }

    #[test]
    fn round_trip_preserves_nine_significant_digits() {
        let mesh = generate_rect(2.0, 1.0, 2, 1);
        let n = mesh.coords.len();
        let ne = mesh.elements.len();
        let mut f = zero_fields(n, ne);
        for i in 0..n {
            f.u[2 * i] = 0.123456789e-3 * (i as f64 + 1.0);
            f.u[2 * i + 1] = -0.987654321e-2 / (i as f64 + 1.0);
            f.alpha[i] = 1.0 / (i as f64 + 3.0);
            f.kappa_eq[i] = 7.77e-5 * i as f64;
            f.gamma[i] = 3.14159265e2 * i as f64;
        }
        for e in 0..ne {
            f.eps_p_eq[e] = 1.23456789e-4 * (e as f64 + 1.0);
        }
        let (_, _, back) = read_vtk(&write_vtk(&mesh, &f)).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-8 * a.abs().max(b.abs()).max(1e-300);
        for i in 0..2 * n {
            assert!(close(f.u[i], back.u[i]));
        }
        for i in 0..n {
            assert!(close(f.alpha[i], back.alpha[i]));
            assert!(close(f.kappa_eq[i], back.kappa_eq[i]));
            assert!(close(f.gamma[i], back.gamma[i]));
        }
        for e in 0..ne {
            assert!(close(f.eps_p_eq[e], back.eps_p_eq[e]));
        }
    }
}
