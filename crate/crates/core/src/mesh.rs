//! Plane quadrilateral meshes: text format, validation, and the built-in
//! generators for the perforated-plate and double-notched specimens.
//!
//! Text format (line oriented, `#` starts a comment, ids are 1-based):
//!
//! ```text
//! $nodes
//! 1 0.0 0.0
//! ...
//! $end
//! $elements
//! 1 1 2 5 4
//! ...
//! $end
//! $nodeset top
//! 3
//! ...
//! $end
//! $edgeset top
//! 3 4
//! ...
//! $end
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: node id {id} out of range (1..={max})")]
    DanglingNode { line: usize, id: usize, max: usize },
    #[error("element {id}: non-positive jacobian (inverted or degenerate)")]
    InvertedElement { id: usize },
    #[error("duplicate element connectivity at element {id}")]
    DuplicateElement { id: usize },
    #[error("mesh has no {0}")]
    Empty(&'static str),
}

/// 4-node quadrilateral mesh with named node and edge sets.
///
/// All indices are 0-based internally; the text format is 1-based.
#[derive(Debug, Clone, Default)]
pub struct Mesh {
    pub coords: Vec<[f64; 2]>,
    pub elements: Vec<[usize; 4]>,
    pub node_sets: BTreeMap<String, Vec<usize>>,
    pub edge_sets: BTreeMap<String, Vec<[usize; 2]>>,
}

impl Mesh {
    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn node_set(&self, name: &str) -> Option<&[usize]> {
        self.node_sets.get(name).map(|v| v.as_slice())
    }

    pub fn edge_set(&self, name: &str) -> Option<&[[usize; 2]]> {
        self.edge_sets.get(name).map(|v| v.as_slice())
    }

    /// Check id ranges, duplicate connectivity, and jacobian positivity at
    /// all 2x2 Gauss points.
    pub fn validate(&self) -> Result<(), MeshError> {
        if self.coords.is_empty() {
            return Err(MeshError::Empty("nodes"));
        }
        if self.elements.is_empty() {
            return Err(MeshError::Empty("elements"));
        }
        let n = self.coords.len();
        let mut seen = std::collections::BTreeSet::new();
        for (e, conn) in self.elements.iter().enumerate() {
            for &i in conn {
                if i >= n {
                    return Err(MeshError::DanglingNode {
                        line: 0,
                        id: i + 1,
                        max: n,
                    });
                }
            }
            let mut key = *conn;
            key.sort_unstable();
            if !seen.insert(key) {
                return Err(MeshError::DuplicateElement { id: e + 1 });
            }
            let xy = self.element_coords(e);
            let g = 1.0 / 3f64.sqrt();
            for &xi in &[-g, g] {
                for &eta in &[-g, g] {
                    let (_, _, detj) = shape_eval(&xy, xi, eta);
                    if detj <= 0.0 {
                        return Err(MeshError::InvertedElement { id: e + 1 });
                    }
                }
            }
        }
        for set in self.node_sets.values() {
            for &i in set {
                if i >= n {
                    return Err(MeshError::DanglingNode {
                        line: 0,
                        id: i + 1,
                        max: n,
                    });
                }
            }
        }
        for set in self.edge_sets.values() {
            for pair in set {
                for &i in pair {
                    if i >= n {
                        return Err(MeshError::DanglingNode {
                            line: 0,
                            id: i + 1,
                            max: n,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn element_coords(&self, e: usize) -> [[f64; 2]; 4] {
        let c = &self.elements[e];
        [
            self.coords[c[0]],
            self.coords[c[1]],
            self.coords[c[2]],
            self.coords[c[3]],
        ]
    }

    /// Parse the text format; the result is validated.
    pub fn parse(text: &str) -> Result<Mesh, MeshError> {
        #[derive(PartialEq)]
        enum Section {
            None,
            Nodes,
            Elements,
            NodeSet(String),
            EdgeSet(String),
        }
        let mut mesh = Mesh::default();
        // Node/element ids must be contiguous 1..=n in file order; sets refer
        // to node ids.
        let mut section = Section::None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('$') {
                let mut words = rest.split_whitespace();
                let head = words.next().unwrap_or("");
                match head {
                    "end" => {
                        if section == Section::None {
                            return Err(MeshError::Syntax {
                                line,
                                msg: "$end outside a section".into(),
                            });
                        }
                        section = Section::None;
                    }
                    "nodes" => section = Section::Nodes,
                    "elements" => section = Section::Elements,
                    "nodeset" | "edgeset" => {
                        let name = words.next().ok_or_else(|| MeshError::Syntax {
                            line,
                            msg: format!("${head} requires a name"),
                        })?;
                        section = if head == "nodeset" {
                            Section::NodeSet(name.to_string())
                        } else {
                            Section::EdgeSet(name.to_string())
                        };
                    }
                    other => {
                        return Err(MeshError::Syntax {
                            line,
                            msg: format!("unknown section ${other}"),
                        })
                    }
                }
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            let parse_id = |s: &str| -> Result<usize, MeshError> {
                s.parse::<usize>()
                    .ok()
                    .filter(|&v| v >= 1)
                    .ok_or_else(|| MeshError::Syntax {
                        line,
                        msg: format!("invalid id `{s}`"),
                    })
            };
            let parse_f = |s: &str| -> Result<f64, MeshError> {
                s.parse::<f64>().map_err(|_| MeshError::Syntax {
                    line,
                    msg: format!("invalid number `{s}`"),
                })
            };
            match &section {
                Section::None => {
                    return Err(MeshError::Syntax {
                        line,
                        msg: "data outside a section".into(),
                    })
                }
                Section::Nodes => {
                    if fields.len() != 3 {
                        return Err(MeshError::Syntax {
                            line,
                            msg: "expected `id x y`".into(),
                        });
                    }
                    let id = parse_id(fields[0])?;
                    if id != mesh.coords.len() + 1 {
                        return Err(MeshError::Syntax {
                            line,
                            msg: format!(
                                "node ids must be sequential; expected {}",
                                mesh.coords.len() + 1
                            ),
                        });
                    }
                    mesh.coords.push([parse_f(fields[1])?, parse_f(fields[2])?]);
                }
                Section::Elements => {
                    if fields.len() != 5 {
                        return Err(MeshError::Syntax {
                            line,
                            msg: "expected `id n1 n2 n3 n4`".into(),
                        });
                    }
                    let id = parse_id(fields[0])?;
                    if id != mesh.elements.len() + 1 {
                        return Err(MeshError::Syntax {
                            line,
                            msg: format!(
                                "element ids must be sequential; expected {}",
                                mesh.elements.len() + 1
                            ),
                        });
                    }
                    let mut conn = [0usize; 4];
                    for (k, f) in fields[1..].iter().enumerate() {
                        let nid = parse_id(f)?;
                        if nid > mesh.coords.len() {
                            return Err(MeshError::DanglingNode {
                                line,
                                id: nid,
                                max: mesh.coords.len(),
                            });
                        }
                        conn[k] = nid - 1;
                    }
                    mesh.elements.push(conn);
                }
                Section::NodeSet(name) => {
                    if fields.len() != 1 {
                        return Err(MeshError::Syntax {
                            line,
                            msg: "expected one node id per line".into(),
                        });
                    }
                    let nid = parse_id(fields[0])?;
                    if nid > mesh.coords.len() {
                        return Err(MeshError::DanglingNode {
                            line,
                            id: nid,
                            max: mesh.coords.len(),
                        });
                    }
                    mesh.node_sets
                        .entry(name.clone())
                        .or_default()
                        .push(nid - 1);
                }
                Section::EdgeSet(name) => {
                    if fields.len() != 2 {
                        return Err(MeshError::Syntax {
                            line,
                            msg: "expected `n_a n_b` per line".into(),
                        });
                    }
                    let mut pair = [0usize; 2];
                    for (k, f) in fields.iter().enumerate() {
                        let nid = parse_id(f)?;
                        if nid > mesh.coords.len() {
                            return Err(MeshError::DanglingNode {
                                line,
                                id: nid,
                                max: mesh.coords.len(),
                            });
                        }
                        pair[k] = nid - 1;
                    }
                    mesh.edge_sets.entry(name.clone()).or_default().push(pair);
                }
            }
        }
        mesh.validate()?;
        Ok(mesh)
    }

    /// Serialize to the text format (canonical form: sections in fixed
    /// order, sets sorted by name).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("$nodes\n");
        for (i, c) in self.coords.iter().enumerate() {
            // Full-precision floats so parse(to_text(m)) is bit-exact.
            let _ = writeln!(out, "{} {} {}", i + 1, c[0], c[1]);
        }
        out.push_str("$end\n$elements\n");
        for (i, e) in self.elements.iter().enumerate() {
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                i + 1,
                e[0] + 1,
                e[1] + 1,
                e[2] + 1,
                e[3] + 1
            );
        }
        out.push_str("$end\n");
        for (name, set) in &self.node_sets {
            let _ = writeln!(out, "$nodeset {name}");
            for &n in set {
                let _ = writeln!(out, "{}", n + 1);
            }
            out.push_str("$end\n");
        }
        for (name, set) in &self.edge_sets {
            let _ = writeln!(out, "$edgeset {name}");
            for pair in set {
                let _ = writeln!(out, "{} {}", pair[0] + 1, pair[1] + 1);
            }
            out.push_str("$end\n");
        }
        out
    }
}

/// Bilinear shape functions on the reference square, evaluated against
/// physical corner coordinates. Returns nodal values, physical gradients and
/// the jacobian determinant.
pub fn shape_eval(xy: &[[f64; 2]; 4], xi: f64, eta: f64) -> ([f64; 4], [[f64; 2]; 4], f64) {
    let n = [
        0.25 * (1.0 - xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 + eta),
        0.25 * (1.0 - xi) * (1.0 + eta),
    ];
    // Parametric gradients dN/d(xi,eta).
    let dn = [
        [-0.25 * (1.0 - eta), -0.25 * (1.0 - xi)],
        [0.25 * (1.0 - eta), -0.25 * (1.0 + xi)],
        [0.25 * (1.0 + eta), 0.25 * (1.0 + xi)],
        [-0.25 * (1.0 + eta), 0.25 * (1.0 - xi)],
    ];
    let mut j = [[0.0f64; 2]; 2];
    for a in 0..4 {
        for r in 0..2 {
            for c in 0..2 {
                j[r][c] += dn[a][r] * xy[a][c];
            }
        }
    }
    let detj = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let inv = [
        [j[1][1] / detj, -j[0][1] / detj],
        [-j[1][0] / detj, j[0][0] / detj],
    ];
    let mut grad = [[0.0f64; 2]; 4];
    for a in 0..4 {
        for c in 0..2 {
            grad[a][c] = inv[0][c] * dn[a][0] + inv[1][c] * dn[a][1];
        }
    }
    (n, grad, detj)
}

/// Quarter plate `[0,w] x [0,h]` with a quarter-circular hole of radius `r`
/// at the origin, meshed as a transfinite O-grid between the hole arc and
/// the outer right-top boundary path. Node sets: `bottom`, `right`, `top`,
/// `left`, `hole`; edge sets: `top`, `right`.
pub fn generate_rect_hole(w: f64, h: f64, r: f64, target_h: f64) -> Mesh {
    assert!(r > 0.0 && r < w.min(h) && target_h > 0.0);
    // Outer path (w,0) -> (w,h) -> (0,h), arc-length parameterized.
    let len1 = h;
    let len2 = w;
    let total = len1 + len2;
    let outer = |s: f64| -> [f64; 2] {
        let d = s * total;
        if d <= len1 {
            [w, d]
        } else {
            [w - (d - len1), h]
        }
    };
    let inner = |s: f64| -> [f64; 2] {
        let th = s * std::f64::consts::FRAC_PI_2;
        [r * th.cos(), r * th.sin()]
    };
    let n_s = ((total / target_h).ceil() as usize).max(4);
    let mean_depth = 0.5 * ((w - r) + (h - r));
    let n_t = ((mean_depth / target_h).ceil() as usize).max(2);
    let mut mesh = Mesh::default();
    // Grade the radial direction toward the hole (finer near the arc).
    let blend = |t: f64| t * t * (3.0 - 2.0 * t) * 0.4 + t * 0.6;
    for it in 0..=n_t {
        let t = blend(it as f64 / n_t as f64);
        for is in 0..=n_s {
            let s = is as f64 / n_s as f64;
            let a = inner(s);
            let b = outer(s);
            mesh.coords
                .push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    let id = |it: usize, is: usize| it * (n_s + 1) + is;
    for it in 0..n_t {
        for is in 0..n_s {
            // Counterclockwise with s increasing and t outward.
            mesh.elements.push([
                id(it, is),
                id(it + 1, is),
                id(it + 1, is + 1),
                id(it, is + 1),
            ]);
        }
    }
    let tol = 1e-9 * total;
    let mut bottom = vec![];
    let mut right = vec![];
    let mut top = vec![];
    let mut left = vec![];
    for (i, c) in mesh.coords.iter().enumerate() {
        if c[1].abs() < tol {
            bottom.push(i);
        }
        if (c[0] - w).abs() < tol {
            right.push(i);
        }
        if (c[1] - h).abs() < tol {
            top.push(i);
        }
        if c[0].abs() < tol {
            left.push(i);
        }
    }
    let hole: Vec<usize> = (0..=n_s).map(|is| id(0, is)).collect();
    // Edge sets along boundary rings for tractions.
    let mut top_edges = vec![];
    let mut right_edges = vec![];
    let split = (len1 / total * n_s as f64).round() as usize;
    for is in 0..n_s {
        let a = id(n_t, is);
        let b = id(n_t, is + 1);
        if is < split {
            right_edges.push([a, b]);
        } else {
            top_edges.push([a, b]);
        }
    }
    mesh.node_sets.insert("bottom".into(), bottom);
    mesh.node_sets.insert("right".into(), right);
    mesh.node_sets.insert("top".into(), top);
    mesh.node_sets.insert("left".into(), left);
    mesh.node_sets.insert("hole".into(), hole);
    mesh.edge_sets.insert("top".into(), top_edges);
    mesh.edge_sets.insert("right".into(), right_edges);
    mesh.validate().expect("generated mesh must validate");
    mesh
}

/// Rectangular strip `[0,w] x [0,h]` with two semicircular notches of radius
/// `r` cut at mid-height on the left and right edges. Structured grid with
/// notch elements removed and the cut boundary snapped onto the circles.
/// Node sets: `bottom`, `top`, `left`, `right`, `notches`.
pub fn generate_double_notched(w: f64, h: f64, r: f64, target_h: f64) -> Mesh {
    assert!(r > 0.0 && 2.0 * r < w && r < h / 2.0 && target_h > 0.0);
    let nx = ((w / target_h).round() as usize).max(4);
    let ny = ((h / target_h).round() as usize).max(4);
    let yc = h / 2.0;
    let inside = |x: f64, y: f64| -> bool {
        let dl = (x * x + (y - yc) * (y - yc)).sqrt();
        let dr = ((x - w) * (x - w) + (y - yc) * (y - yc)).sqrt();
        dl < r || dr < r
    };
    // Structured nodes; nodes inside a notch are pushed radially onto it.
    let mut grid = vec![[0.0f64; 2]; (nx + 1) * (ny + 1)];
    let gid = |i: usize, j: usize| j * (nx + 1) + i;
    for j in 0..=ny {
        for i in 0..=nx {
            let mut x = w * i as f64 / nx as f64;
            let mut y = h * j as f64 / ny as f64;
            let dl = (x * x + (y - yc) * (y - yc)).sqrt();
            let dr = ((x - w) * (x - w) + (y - yc) * (y - yc)).sqrt();
            if dl < r && dl > 0.0 {
                let f = r / dl;
                x *= f;
                y = yc + (y - yc) * f;
            } else if dr < r && dr > 0.0 {
                let f = r / dr;
                x = w + (x - w) * f;
                y = yc + (y - yc) * f;
            }
            grid[gid(i, j)] = [x, y];
        }
    }
    // Keep elements whose (snapped) centroid is outside both notches.
    let mut mesh = Mesh::default();
    let mut remap = vec![usize::MAX; grid.len()];
    let mut kept = vec![];
    for j in 0..ny {
        for i in 0..nx {
            let conn = [gid(i, j), gid(i + 1, j), gid(i + 1, j + 1), gid(i, j + 1)];
            let cx = conn.iter().map(|&n| grid[n][0]).sum::<f64>() / 4.0;
            let cy = conn.iter().map(|&n| grid[n][1]).sum::<f64>() / 4.0;
            if !inside(cx, cy) {
                kept.push(conn);
            }
        }
    }
    for conn in &kept {
        for &n in conn {
            if remap[n] == usize::MAX {
                remap[n] = mesh.coords.len();
                mesh.coords.push(grid[n]);
            }
        }
    }
    for conn in kept {
        mesh.elements.push([
            remap[conn[0]],
            remap[conn[1]],
            remap[conn[2]],
            remap[conn[3]],
        ]);
    }
    let tol = 1e-9 * (w + h);
    let (mut bottom, mut top, mut left, mut right, mut notches) =
        (vec![], vec![], vec![], vec![], vec![]);
    for (i, c) in mesh.coords.iter().enumerate() {
        if c[1].abs() < tol {
            bottom.push(i);
        }
        if (c[1] - h).abs() < tol {
            top.push(i);
        }
        if c[0].abs() < tol {
            left.push(i);
        }
        if (c[0] - w).abs() < tol {
            right.push(i);
        }
        let dl = (c[0] * c[0] + (c[1] - yc) * (c[1] - yc)).sqrt();
        let dr = ((c[0] - w) * (c[0] - w) + (c[1] - yc) * (c[1] - yc)).sqrt();
        if (dl - r).abs() < 1e-6 * r || (dr - r).abs() < 1e-6 * r {
            notches.push(i);
        }
    }
    mesh.node_sets.insert("bottom".into(), bottom);
    mesh.node_sets.insert("top".into(), top);
    mesh.node_sets.insert("left".into(), left);
    mesh.node_sets.insert("right".into(), right);
    mesh.node_sets.insert("notches".into(), notches);
    mesh.validate().expect("generated mesh must validate");
    mesh
}

/// Axis-aligned unit square split into `nx` by `ny` elements; used widely in
/// tests. Node sets: `bottom`, `top`, `left`, `right`; edge set `top`.
pub fn generate_rect(w: f64, h: f64, nx: usize, ny: usize) -> Mesh {
    let mut mesh = Mesh::default();
    let gid = |i: usize, j: usize| j * (nx + 1) + i;
    for j in 0..=ny {
        for i in 0..=nx {
            mesh.coords
                .push([w * i as f64 / nx as f64, h * j as f64 / ny as f64]);
        }
    }
    for j in 0..ny {
        for i in 0..nx {
            mesh.elements
                .push([gid(i, j), gid(i + 1, j), gid(i + 1, j + 1), gid(i, j + 1)]);
        }
    }
    mesh.node_sets
        .insert("bottom".into(), (0..=nx).map(|i| gid(i, 0)).collect());
    mesh.node_sets
        .insert("top".into(), (0..=nx).map(|i| gid(i, ny)).collect());
    mesh.node_sets
        .insert("left".into(), (0..=ny).map(|j| gid(0, j)).collect());
    mesh.node_sets
        .insert("right".into(), (0..=ny).map(|j| gid(nx, j)).collect());
    mesh.edge_sets.insert(
        "top".into(),
        (0..nx).map(|i| [gid(i, ny), gid(i + 1, ny)]).collect(),
    );
    mesh.validate().expect("generated mesh must validate");
    mesh
}

#[cfg(test)]
mod tests {
    use super::*;

    const UNIT_SQUARE: &str = "\
# unit square
$nodes
1 0.0 0.0
2 1.0 0.0
3 1.0 1.0
4 0.0 1.0
$end
$elements
1 1 2 3 4
$end
$nodeset top
3
4
$end
$edgeset top
4 3
$end
";

    #[test]
    fn parse_unit_square() {
        let m = Mesh::parse(UNIT_SQUARE).unwrap();
        assert_eq!(m.n_nodes(), 4);
        assert_eq!(m.n_elements(), 1);
        assert_eq!(m.node_set("top").unwrap(), &[2, 3]);
        assert_eq!(m.edge_set("top").unwrap(), &[[3, 2]]);
    }

    #[test]
    fn dangling_reference_rejected() {
        let bad = UNIT_SQUARE.replace("1 1 2 3 4", "1 1 2 3 99");
        match Mesh::parse(&bad) {
            Err(MeshError::DanglingNode { id: 99, .. }) => {}
            other => panic!("expected dangling-node error, got {other:?}"),
        }
    }

    #[test]
    fn inverted_element_rejected() {
        let bad = UNIT_SQUARE.replace("1 1 2 3 4", "1 1 4 3 2");
        match Mesh::parse(&bad) {
            Err(MeshError::InvertedElement { id: 1 }) => {}
            other => panic!("expected inverted-element error, got {other:?}"),
        }
    }

    #[test]
    fn syntax_error_has_line_number() {
        let bad = UNIT_SQUARE.replace("2 1.0 0.0", "2 1.0");
        match Mesh::parse(&bad) {
            Err(MeshError::Syntax { line: 4, .. }) => {}
            other => panic!("expected syntax error on line 4, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_text() {
        let m = generate_rect(2.0, 1.0, 3, 2);
        let text = m.to_text();
        let m2 = Mesh::parse(&text).unwrap();
        assert_eq!(m.coords.len(), m2.coords.len());
        assert_eq!(m.elements, m2.elements);
        assert_eq!(m.node_sets, m2.node_sets);
        assert_eq!(m.edge_sets, m2.edge_sets);
        for (a, b) in m.coords.iter().zip(&m2.coords) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_values_center_and_corner() {
        let xy = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let (n, _, detj) = shape_eval(&xy, 0.0, 0.0);
        for v in n {
            assert!((v - 0.25).abs() < 1e-15);
        }
        assert!((detj - 0.25).abs() < 1e-15);
        let (n, _, _) = shape_eval(&xy, -1.0, -1.0);
        assert_eq!(n, [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn shape_gradients_translation_invariant() {
        let xy = [[0.2, 0.1], [1.3, 0.2], [1.1, 1.4], [0.1, 1.2]];
        let shifted = xy.map(|c| [c[0] + 5.0, c[1] - 3.0]);
        let (_, g1, d1) = shape_eval(&xy, 0.3, -0.6);
        let (_, g2, d2) = shape_eval(&shifted, 0.3, -0.6);
        assert!((d1 - d2).abs() < 1e-12);
        for a in 0..4 {
            assert!((g1[a][0] - g2[a][0]).abs() < 1e-12);
            assert!((g1[a][1] - g2[a][1]).abs() < 1e-12);
        }
    }

    #[test]
    fn generators_have_named_boundaries() {
        let m = generate_rect_hole(10.0, 10.0, 2.0, 1.0);
        for set in ["bottom", "right", "top", "left", "hole"] {
            assert!(!m.node_set(set).unwrap().is_empty(), "{set} empty");
        }
        assert!(!m.edge_set("top").unwrap().is_empty());
        let m = generate_double_notched(10.0, 20.0, 2.0, 1.0);
        for set in ["bottom", "top", "left", "right", "notches"] {
            assert!(!m.node_set(set).unwrap().is_empty(), "{set} empty");
        }
    }
}
