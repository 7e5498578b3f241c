//! Structured triangular meshes of rectangular multi-region geometries.
//!
//! Every region boundary and every requested alignment coordinate becomes a
//! grid line. The interval between two consecutive required lines is split
//! into equal cells no wider than the uniform spacing implied by `nx`/`ny`,
//! and each cell is cut into two counter-clockwise triangles along the
//! lower-left to upper-right diagonal.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coordinate system of the 2D reduction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Symmetry {
    /// (x, y) cross-section extruded over `depth` metres.
    Cartesian { depth: f64 },
    /// (r, z) half-plane, rotationally symmetric about r = 0.
    Axisymmetric,
}

impl Symmetry {
    pub fn is_axisymmetric(&self) -> bool {
        matches!(self, Symmetry::Axisymmetric)
    }
}

/// Side of the bounding box. `Left`/`Right` are the min/max of the first
/// coordinate (x or r), `Bottom`/`Top` of the second (y or z).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Bottom, Side::Top];

    pub fn name(&self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
            Side::Bottom => "bottom",
            Side::Top => "top",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRect {
    pub label: String,
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl RegionRect {
    pub fn new(label: impl Into<String>, min: [f64; 2], max: [f64; 2]) -> Self {
        RegionRect {
            label: label.into(),
            min,
            max,
        }
    }

    pub fn area(&self) -> f64 {
        (self.max[0] - self.min[0]) * (self.max[1] - self.min[1])
    }

    fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometrySpec {
    pub symmetry: Symmetry,
    pub regions: Vec<RegionRect>,
    /// Label given to any part of the bounding box not covered by `regions`.
    pub background: Option<String>,
    /// Tag per outer side; sides without an entry are tagged with their name.
    pub boundary_tags: BTreeMap<Side, String>,
    /// Coordinates that must appear as vertical (first-coordinate) grid lines.
    pub align_x: Vec<f64>,
    /// Coordinates that must appear as horizontal (second-coordinate) grid lines.
    pub align_y: Vec<f64>,
}

impl GeometrySpec {
    pub fn new(symmetry: Symmetry, regions: Vec<RegionRect>) -> Self {
        GeometrySpec {
            symmetry,
            regions,
            background: None,
            boundary_tags: BTreeMap::new(),
            align_x: Vec::new(),
            align_y: Vec::new(),
        }
    }

    pub fn with_tag(mut self, side: Side, tag: impl Into<String>) -> Self {
        self.boundary_tags.insert(side, tag.into());
        self
    }

    pub fn with_background(mut self, label: impl Into<String>) -> Self {
        self.background = Some(label.into());
        self
    }

    pub fn bounding_box(&self) -> Result<([f64; 2], [f64; 2])> {
        if self.regions.is_empty() {
            return Err(Error::Geometry("geometry has no regions".into()));
        }
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for r in &self.regions {
            for k in 0..2 {
                lo[k] = lo[k].min(r.min[k]);
                hi[k] = hi[k].max(r.max[k]);
            }
        }
        Ok((lo, hi))
    }

    pub fn region(&self, label: &str) -> Option<&RegionRect> {
        self.regions.iter().find(|r| r.label == label)
    }

    pub fn validate(&self) -> Result<()> {
        if let Symmetry::Cartesian { depth } = self.symmetry {
            if !(depth > 0.0) || !depth.is_finite() {
                return Err(Error::Geometry(format!("model depth must be positive, got {depth}")));
            }
        }
        let (lo, hi) = self.bounding_box()?;
        for r in &self.regions {
            if !(r.max[0] > r.min[0] && r.max[1] > r.min[1]) {
                return Err(Error::Geometry(format!("region '{}' is degenerate", r.label)));
            }
            if self.symmetry.is_axisymmetric() && r.min[0] < 0.0 {
                return Err(Error::Geometry(format!(
                    "region '{}' has negative radius in an axisymmetric geometry",
                    r.label
                )));
            }
        }
        for (i, a) in self.regions.iter().enumerate() {
            for b in &self.regions[i + 1..] {
                let w = a.max[0].min(b.max[0]) - a.min[0].max(b.min[0]);
                let h = a.max[1].min(b.max[1]) - a.min[1].max(b.min[1]);
                if w > 0.0 && h > 0.0 {
                    return Err(Error::Geometry(format!(
                        "regions '{}' and '{}' overlap",
                        a.label, b.label
                    )));
                }
            }
        }
        let covered: f64 = self.regions.iter().map(RegionRect::area).sum();
        let total = (hi[0] - lo[0]) * (hi[1] - lo[1]);
        if self.background.is_none() && (covered - total).abs() > 1e-9 * total {
            return Err(Error::Geometry(
                "regions do not tile the bounding box and no background region is set".into(),
            ));
        }
        for &x in &self.align_x {
            if x < lo[0] || x > hi[0] {
                return Err(Error::Geometry(format!("alignment coordinate {x} outside the bounding box")));
            }
        }
        for &y in &self.align_y {
            if y < lo[1] || y > hi[1] {
                return Err(Error::Geometry(format!("alignment coordinate {y} outside the bounding box")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle {
    pub nodes: [usize; 3],
    pub region: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub tag: String,
}

/// Tensor grid the mesh was generated from; used for point location.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Per cell (row-major, x fastest) the two triangles covering it, if kept.
    cells: Vec<Option<[usize; 2]>>,
}

impl Grid {
    /// Cell index `(i, j)` containing `p`, clamped to the grid.
    pub fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let find = |lines: &[f64], v: f64| -> Option<usize> {
            let n = lines.len();
            if v < lines[0] || v > lines[n - 1] {
                return None;
            }
            let k = lines.partition_point(|&l| l <= v);
            Some(k.saturating_sub(1).min(n - 2))
        };
        Some((find(&self.xs, p[0])?, find(&self.ys, p[1])?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub symmetry: Symmetry,
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<Triangle>,
    pub boundary_edges: Vec<BoundaryEdge>,
    pub region_labels: Vec<String>,
    region_index: Vec<Vec<usize>>,
    grid: Option<Grid>,
}

/// Grid lines for one axis: required lines kept exactly, gaps subdivided.
fn axis_lines(lo: f64, hi: f64, n: usize, mut required: Vec<f64>) -> Vec<f64> {
    let width = hi - lo;
    let spacing = width / n as f64;
    let tol = 1e-12 * width;
    required.push(lo);
    required.push(hi);
    required.sort_by(|a, b| a.partial_cmp(b).unwrap());
    required.dedup_by(|b, a| (*b - *a).abs() <= tol);
    let mut lines = vec![required[0]];
    for pair in required.windows(2) {
        let len = pair[1] - pair[0];
        let k = ((len / spacing) - 1e-9).ceil().max(1.0) as usize;
        for s in 1..k {
            lines.push(pair[0] + len * s as f64 / k as f64);
        }
        lines.push(pair[1]);
    }
    lines
}

/// Build the structured mesh of `geometry` with at least `nx` × `ny` cells.
pub fn generate_structured_mesh(geometry: &GeometrySpec, nx: usize, ny: usize) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::Geometry("nx and ny must be at least 1".into()));
    }
    geometry.validate()?;
    let (lo, hi) = geometry.bounding_box()?;

    let mut req_x = geometry.align_x.clone();
    let mut req_y = geometry.align_y.clone();
    for r in &geometry.regions {
        req_x.extend([r.min[0], r.max[0]]);
        req_y.extend([r.min[1], r.max[1]]);
    }
    let xs = axis_lines(lo[0], hi[0], nx, req_x);
    let ys = axis_lines(lo[1], hi[1], ny, req_y);
    let (ncx, ncy) = (xs.len() - 1, ys.len() - 1);
    let stride = xs.len();

    let mut nodes = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            nodes.push([x, y]);
        }
    }

    let mut region_labels: Vec<String> = geometry.regions.iter().map(|r| r.label.clone()).collect();
    let background_id = geometry.background.as_ref().map(|b| {
        if let Some(k) = region_labels.iter().position(|l| l == b) {
            k
        } else {
            region_labels.push(b.clone());
            region_labels.len() - 1
        }
    });

    let mut triangles = Vec::with_capacity(2 * ncx * ncy);
    let mut cells = Vec::with_capacity(ncx * ncy);
    for j in 0..ncy {
        for i in 0..ncx {
            let center = [0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1])];
            let region = geometry
                .regions
                .iter()
                .position(|r| r.contains(center))
                .or(background_id)
                .ok_or_else(|| Error::Geometry(format!("cell at {center:?} lies in no region")))?;
            let n00 = j * stride + i;
            let n10 = n00 + 1;
            let n01 = n00 + stride;
            let n11 = n01 + 1;
            let t = triangles.len();
            triangles.push(Triangle {
                nodes: [n00, n10, n11],
                region,
            });
            triangles.push(Triangle {
                nodes: [n00, n11, n01],
                region,
            });
            cells.push(Some([t, t + 1]));
        }
    }

    let tag = |side: Side| -> String {
        geometry
            .boundary_tags
            .get(&side)
            .cloned()
            .unwrap_or_else(|| side.name().to_string())
    };
    let mut boundary_edges = Vec::new();
    for i in 0..ncx {
        boundary_edges.push(BoundaryEdge {
            nodes: [i, i + 1],
            tag: tag(Side::Bottom),
        });
        let top = ncy * stride;
        boundary_edges.push(BoundaryEdge {
            nodes: [top + i + 1, top + i],
            tag: tag(Side::Top),
        });
    }
    for j in 0..ncy {
        boundary_edges.push(BoundaryEdge {
            nodes: [j * stride + ncx, (j + 1) * stride + ncx],
            tag: tag(Side::Right),
        });
        boundary_edges.push(BoundaryEdge {
            nodes: [(j + 1) * stride, j * stride],
            tag: tag(Side::Left),
        });
    }

    let mut mesh = Mesh {
        symmetry: geometry.symmetry,
        nodes,
        triangles,
        boundary_edges,
        region_labels,
        region_index: Vec::new(),
        grid: Some(Grid { xs, ys, cells }),
    };
    mesh.rebuild_region_index();
    Ok(mesh)
}

impl Mesh {
    fn rebuild_region_index(&mut self) {
        let mut index = vec![Vec::new(); self.region_labels.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            index[tri.region].push(t);
        }
        self.region_index = index;
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn grid(&self) -> Option<&Grid> {
        self.grid.as_ref()
    }

    pub fn region_id(&self, label: &str) -> Option<usize> {
        self.region_labels.iter().position(|l| l == label)
    }

    pub fn require_region(&self, label: &str) -> Result<usize> {
        self.region_id(label)
            .ok_or_else(|| Error::Geometry(format!("mesh has no region '{label}'")))
    }

    /// Triangles carrying `label`; empty if the label is unknown.
    pub fn region_triangles(&self, label: &str) -> &[usize] {
        match self.region_id(label) {
            Some(id) => &self.region_index[id],
            None => &[],
        }
    }

    pub fn region_triangles_by_id(&self, id: usize) -> &[usize] {
        &self.region_index[id]
    }

    pub fn coords(&self, t: usize) -> [[f64; 2]; 3] {
        let n = self.triangles[t].nodes;
        [self.nodes[n[0]], self.nodes[n[1]], self.nodes[n[2]]]
    }

    /// Signed area, positive for counter-clockwise triangles.
    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.coords(t);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    pub fn region_area(&self, label: &str) -> f64 {
        self.region_triangles(label).iter().map(|&t| self.signed_area(t)).sum()
    }

    /// Nodes lying on boundary edges with any of `tags`, sorted and unique.
    pub fn nodes_with_tags(&self, tags: &[&str]) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .boundary_edges
            .iter()
            .filter(|e| tags.contains(&e.tag.as_str()))
            .flat_map(|e| e.nodes)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.boundary_edges.iter().any(|e| e.tag == tag)
    }

    /// Locate `p`, returning the triangle and barycentric coordinates.
    pub fn locate(&self, p: [f64; 2]) -> Option<(usize, [f64; 3])> {
        let grid = self.grid.as_ref()?;
        let (i, j) = grid.cell_of(p)?;
        let tris = grid.cells[j * (grid.xs.len() - 1) + i]?;
        let mut best = None;
        let mut best_min = f64::NEG_INFINITY;
        for t in tris {
            let l = self.barycentric(t, p);
            let m = l[0].min(l[1]).min(l[2]);
            if m > best_min {
                best_min = m;
                best = Some((t, l));
            }
        }
        best
    }

    pub fn barycentric(&self, t: usize, p: [f64; 2]) -> [f64; 3] {
        let [a, b, c] = self.coords(t);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
        let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
        [1.0 - l1 - l2, l1, l2]
    }

    /// Sub-mesh made of the regions for which `keep` holds.
    ///
    /// Edges shared with a dropped triangle become boundary edges tagged
    /// `interface_tag`; nodes are renumbered in their original order.
    pub fn restrict(&self, keep: impl Fn(&str) -> bool, interface_tag: &str) -> Result<Mesh> {
        let kept_region: Vec<bool> = self.region_labels.iter().map(|l| keep(l)).collect();
        let kept_tri: Vec<bool> = self.triangles.iter().map(|t| kept_region[t.region]).collect();
        if !kept_tri.iter().any(|&k| k) {
            return Err(Error::Geometry("restriction removes every triangle".into()));
        }

        let mut owners: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri.nodes[k], tri.nodes[(k + 1) % 3]);
                owners.entry((a.min(b), a.max(b))).or_default().push(t);
            }
        }
        let old_tags: HashMap<(usize, usize), &str> = self
            .boundary_edges
            .iter()
            .map(|e| {
                let (a, b) = (e.nodes[0], e.nodes[1]);
                ((a.min(b), a.max(b)), e.tag.as_str())
            })
            .collect();

        let mut new_index = vec![usize::MAX; self.nodes.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            if kept_tri[t] {
                for &n in &tri.nodes {
                    new_index[n] = 0;
                }
            }
        }
        let mut nodes = Vec::new();
        for (n, slot) in new_index.iter_mut().enumerate() {
            if *slot == 0 {
                *slot = nodes.len();
                nodes.push(self.nodes[n]);
            }
        }

        let mut tri_index = vec![usize::MAX; self.triangles.len()];
        let mut triangles = Vec::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            if kept_tri[t] {
                tri_index[t] = triangles.len();
                triangles.push(Triangle {
                    nodes: tri.nodes.map(|n| new_index[n]),
                    region: tri.region,
                });
            }
        }

        let mut boundary_edges = Vec::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            if !kept_tri[t] {
                continue;
            }
            for k in 0..3 {
                let (a, b) = (tri.nodes[k], tri.nodes[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let others: Vec<usize> = owners[&key].iter().copied().filter(|&o| o != t).collect();
                let tag = if others.is_empty() {
                    old_tags.get(&key).map(|s| s.to_string())
                } else if others.iter().all(|&o| !kept_tri[o]) {
                    Some(interface_tag.to_string())
                } else {
                    None
                };
                if let Some(tag) = tag {
                    boundary_edges.push(BoundaryEdge {
                        nodes: [new_index[a], new_index[b]],
                        tag,
                    });
                }
            }
        }

        let grid = self.grid.as_ref().map(|g| Grid {
            xs: g.xs.clone(),
            ys: g.ys.clone(),
            cells: g
                .cells
                .iter()
                .map(|c| {
                    c.and_then(|[a, b]| {
                        (kept_tri[a] && kept_tri[b]).then(|| [tri_index[a], tri_index[b]])
                    })
                })
                .collect(),
        });

        let mut mesh = Mesh {
            symmetry: self.symmetry,
            nodes,
            triangles,
            boundary_edges,
            region_labels: self.region_labels.clone(),
            region_index: Vec::new(),
            grid,
        };
        mesh.rebuild_region_index();
        Ok(mesh)
    }

    /// Plain-text export: node, triangle and edge tables.
    pub fn write_text<W: Write>(&self, out: W) -> Result<()> {
        self.write_text_with_values(out, &[])
    }

    /// Plain-text export with extra per-node value columns appended to the node table.
    pub fn write_text_with_values<W: Write>(
        &self,
        mut out: W,
        columns: &[(&str, &[f64])],
    ) -> Result<()> {
        if let Some((_, values)) = columns.iter().find(|c| c.1.len() != self.nodes.len()) {
            return Err(Error::Dimension {
                expected: self.nodes.len(),
                got: values.len(),
            });
        }
        let names: Vec<&str> = columns.iter().map(|c| c.0).collect();
        writeln!(out, "# nodes {} : index x y {}", self.nodes.len(), names.join(" "))?;
        for (i, p) in self.nodes.iter().enumerate() {
            write!(out, "{i} {:.17e} {:.17e}", p[0], p[1])?;
            for (_, values) in columns {
                write!(out, " {:.17e}", values[i])?;
            }
            writeln!(out)?;
        }
        writeln!(out, "# triangles {} : index n1 n2 n3 region", self.triangles.len())?;
        for (i, t) in self.triangles.iter().enumerate() {
            writeln!(
                out,
                "{i} {} {} {} {}",
                t.nodes[0], t.nodes[1], t.nodes[2], self.region_labels[t.region]
            )?;
        }
        writeln!(out, "# edges {} : n1 n2 tag", self.boundary_edges.len())?;
        for e in &self.boundary_edges {
            writeln!(out, "{} {} {}", e.nodes[0], e.nodes[1], e.tag)?;
        }
        Ok(())
    }
}
