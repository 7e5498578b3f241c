//! Lowest-order nodal assembly of the 2D vector-potential formulation.
//!
//! Cartesian models carry `A = A_z e_z`, stored per node in Wb/m, with every
//! volume integral multiplied by the model depth. Axisymmetric models carry
//! the modified potential `a' = r A_φ` (Wb), for which the physical test
//! functions are `N_i / r e_φ` and the volume element is `2π r dr dz`.

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Symmetry};
use crate::quadrature::TriangleRule;
use crate::sparse::SparseSystemMatrix;

pub const MU0: f64 = 4.0e-7 * std::f64::consts::PI;

/// Linear material of one region.
///
/// `nu[0]`/`mu[0]` act on the flux-density component along the first
/// coordinate (x or r), `nu[1]`/`mu[1]` on the second (y or z).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub nu: [f64; 2],
    pub mu: [f64; 2],
    pub sigma: f64,
}

impl Material {
    pub fn isotropic(mu: f64, sigma: f64) -> Self {
        Material {
            nu: [1.0 / mu, 1.0 / mu],
            mu: [mu, mu],
            sigma,
        }
    }

    pub fn relative(mu_r: f64, sigma: f64) -> Self {
        Self::isotropic(mu_r * MU0, sigma)
    }

    pub fn anisotropic(mu: [f64; 2], sigma: f64) -> Self {
        Material {
            nu: [1.0 / mu[0], 1.0 / mu[1]],
            mu,
            sigma,
        }
    }

    pub fn validate(&self, label: &str) -> Result<()> {
        if !(self.nu[0] > 0.0 && self.nu[1] > 0.0) || !self.nu.iter().all(|v| v.is_finite()) {
            return Err(Error::Material(format!(
                "region '{label}': reluctivity must be positive, got {:?}",
                self.nu
            )));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::Material(format!(
                "region '{label}': conductivity must be non-negative, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Materials by region label.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MaterialMap {
    regions: BTreeMap<String, Material>,
}

impl MaterialMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, label: impl Into<String>, material: Material) -> &mut Self {
        self.regions.insert(label.into(), material);
        self
    }

    pub fn with(mut self, label: impl Into<String>, material: Material) -> Self {
        self.insert(label, material);
        self
    }

    pub fn get(&self, label: &str) -> Option<&Material> {
        self.regions.get(label)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Material)> {
        self.regions.iter()
    }

    /// Scale every reluctivity by `factor` (and permeability by its inverse).
    pub fn scale_reluctivity(&self, factor: f64) -> Self {
        let regions = self
            .regions
            .iter()
            .map(|(k, m)| {
                let mut m = *m;
                m.nu = m.nu.map(|v| v * factor);
                m.mu = m.mu.map(|v| v / factor);
                (k.clone(), m)
            })
            .collect();
        MaterialMap { regions }
    }

    /// Per-triangle-region material table, checking coverage and validity.
    fn resolve(&self, mesh: &Mesh) -> Result<Vec<Material>> {
        mesh.region_labels
            .iter()
            .enumerate()
            .map(|(id, label)| match self.regions.get(label) {
                Some(m) => {
                    m.validate(label)?;
                    Ok(*m)
                }
                None if mesh.region_triangles_by_id(id).is_empty() => {
                    Ok(Material::isotropic(MU0, 0.0))
                }
                None => Err(Error::Assembly(format!("no material for region '{label}'"))),
            })
            .collect()
    }
}

/// Quadrature settings for integrands that are not plain P1 products.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyOptions {
    pub quadrature_degree: usize,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions {
            quadrature_degree: 8,
        }
    }
}

/// Gradients of the three P1 shape functions and the triangle area.
pub(crate) fn p1_gradients(c: &[[f64; 2]; 3]) -> ([[f64; 2]; 3], f64) {
    let area2 = (c[1][0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[2][0] - c[0][0]) * (c[1][1] - c[0][1]);
    let mut g = [[0.0; 2]; 3];
    for k in 0..3 {
        let (a, b) = (c[(k + 1) % 3], c[(k + 2) % 3]);
        g[k] = [(a[1] - b[1]) / area2, (b[0] - a[0]) / area2];
    }
    (g, 0.5 * area2)
}

/// Physical quadrature point with P1 shape values and weight (Jacobian included).
pub(crate) struct QuadPoint {
    pub p: [f64; 2],
    pub shape: [f64; 3],
    pub weight: f64,
}

pub(crate) fn triangle_points<'r>(
    c: &'r [[f64; 2]; 3],
    rule: &'r TriangleRule,
) -> impl Iterator<Item = QuadPoint> + 'r {
    let area2 = (c[1][0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[2][0] - c[0][0]) * (c[1][1] - c[0][1]);
    rule.points.iter().zip(&rule.weights).map(move |(st, &w)| {
        let (s, t) = (st[0], st[1]);
        QuadPoint {
            p: [
                c[0][0] + s * (c[1][0] - c[0][0]) + t * (c[2][0] - c[0][0]),
                c[0][1] + s * (c[1][1] - c[0][1]) + t * (c[2][1] - c[0][1]),
            ],
            shape: [1.0 - s - t, s, t],
            weight: w * area2,
        }
    })
}

/// Out-of-plane volume factor: depth (Cartesian) or 2π (axisymmetric).
pub fn volume_factor(symmetry: Symmetry) -> f64 {
    match symmetry {
        Symmetry::Cartesian { depth } => depth,
        Symmetry::Axisymmetric => 2.0 * std::f64::consts::PI,
    }
}

/// Stiffness matrix `∫ ν curl w_j · curl w_i dV`.
pub fn assemble_stiffness(
    mesh: &Mesh,
    materials: &MaterialMap,
    options: AssemblyOptions,
) -> Result<SparseSystemMatrix> {
    let table = materials.resolve(mesh)?;
    let rule = TriangleRule::with_degree(options.quadrature_degree);
    let factor = volume_factor(mesh.symmetry);
    let mut triplets = Vec::with_capacity(9 * mesh.num_triangles());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let c = mesh.coords(t);
        let (g, area) = p1_gradients(&c);
        let nu = table[tri.region].nu;
        let weight = match mesh.symmetry {
            Symmetry::Cartesian { .. } => area,
            Symmetry::Axisymmetric => triangle_points(&c, &rule).map(|q| q.weight / q.p[0]).sum(),
        };
        for i in 0..3 {
            for j in i..3 {
                let v = (nu[1] * (g[i][0] * g[j][0]) + nu[0] * (g[i][1] * g[j][1])) * weight * factor;
                triplets.push((tri.nodes[i], tri.nodes[j], v));
                if i != j {
                    triplets.push((tri.nodes[j], tri.nodes[i], v));
                }
            }
        }
    }
    let n = mesh.num_nodes();
    Ok(SparseSystemMatrix::from_triplets(n, n, triplets, true))
}

/// Conductivity-weighted mass matrix `∫ σ w_j · w_i dV`.
pub fn assemble_mass(
    mesh: &Mesh,
    materials: &MaterialMap,
    options: AssemblyOptions,
) -> Result<SparseSystemMatrix> {
    let table = materials.resolve(mesh)?;
    let rule = TriangleRule::with_degree(options.quadrature_degree);
    let mut triplets = Vec::new();
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let sigma = table[tri.region].sigma;
        if sigma == 0.0 {
            continue;
        }
        let c = mesh.coords(t);
        let mut local = [[0.0; 3]; 3];
        match mesh.symmetry {
            Symmetry::Cartesian { depth } => {
                let area = mesh.signed_area(t);
                for (i, row) in local.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        let base = if i == j { 2.0 } else { 1.0 };
                        *v = depth * sigma * area / 12.0 * base;
                    }
                }
            }
            Symmetry::Axisymmetric => {
                let two_pi = 2.0 * std::f64::consts::PI;
                for q in triangle_points(&c, &rule) {
                    let w = two_pi * sigma * q.weight / q.p[0];
                    for i in 0..3 {
                        for j in i..3 {
                            local[i][j] += w * (q.shape[i] * q.shape[j]);
                        }
                    }
                }
            }
        }
        for i in 0..3 {
            for j in i..3 {
                triplets.push((tri.nodes[i], tri.nodes[j], local[i][j]));
                if i != j {
                    triplets.push((tri.nodes[j], tri.nodes[i], local[i][j]));
                }
            }
        }
    }
    let n = mesh.num_nodes();
    Ok(SparseSystemMatrix::from_triplets(n, n, triplets, true))
}

type DensityFn<'a> = Box<dyn Fn([f64; 2]) -> f64 + Sync + 'a>;

/// Winding-direction current density given per region as a function of position (A/m²).
pub struct SourceDensity<'a> {
    terms: Vec<(String, DensityFn<'a>)>,
}

impl<'a> SourceDensity<'a> {
    pub fn new() -> Self {
        SourceDensity { terms: Vec::new() }
    }

    pub fn uniform(label: impl Into<String>, value: f64) -> Self {
        Self::new().with_uniform(label, value)
    }

    pub fn with_uniform(self, label: impl Into<String>, value: f64) -> Self {
        self.with_fn(label, move |_| value)
    }

    pub fn with_fn(
        mut self,
        label: impl Into<String>,
        density: impl Fn([f64; 2]) -> f64 + Sync + 'a,
    ) -> Self {
        self.terms.push((label.into(), Box::new(density)));
        self
    }
}

impl Default for SourceDensity<'_> {
    fn default() -> Self {
        Self::new()
    }
}

/// Load vector `∫ J_s · w_i dV`.
///
/// The density is sampled at Gauss points of the requested degree, so any
/// smooth position-dependent density (including `σ s_j χ`) goes through the
/// same code path.
pub fn assemble_source(
    mesh: &Mesh,
    density: &SourceDensity<'_>,
    options: AssemblyOptions,
) -> Result<Vec<f64>> {
    let rule = TriangleRule::with_degree(options.quadrature_degree);
    let factor = volume_factor(mesh.symmetry);
    let mut q = vec![0.0; mesh.num_nodes()];
    for (label, f) in &density.terms {
        mesh.require_region(label)?;
        for &t in mesh.region_triangles(label) {
            let c = mesh.coords(t);
            let nodes = mesh.triangles[t].nodes;
            for qp in triangle_points(&c, &rule) {
                let j = f(qp.p);
                for k in 0..3 {
                    q[nodes[k]] += factor * j * qp.shape[k] * qp.weight;
                }
            }
        }
    }
    Ok(q)
}

/// Free/fixed partition of the nodal unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    free_index: Vec<Option<usize>>,
    fixed_value: Vec<f64>,
    num_free: usize,
}

impl DofMap {
    pub fn all_free(n: usize) -> Self {
        DofMap {
            free_index: (0..n).map(Some).collect(),
            fixed_value: vec![0.0; n],
            num_free: n,
        }
    }

    /// Fix every node on an edge carrying one of `tags` to `value`.
    pub fn from_tags(mesh: &Mesh, tags: &[&str], value: f64) -> Result<Self> {
        for tag in tags {
            if !mesh.has_tag(tag) {
                return Err(Error::Config(format!("unknown boundary tag '{tag}'")));
            }
        }
        let fixed = mesh.nodes_with_tags(tags);
        let mut map = Self::all_free(mesh.num_nodes());
        for n in fixed {
            map.free_index[n] = None;
            map.fixed_value[n] = value;
        }
        map.renumber();
        Ok(map)
    }

    fn renumber(&mut self) {
        let mut k = 0;
        for slot in self.free_index.iter_mut() {
            if slot.is_some() {
                *slot = Some(k);
                k += 1;
            }
        }
        self.num_free = k;
    }

    pub fn len(&self) -> usize {
        self.free_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.free_index.is_empty()
    }

    pub fn num_free(&self) -> usize {
        self.num_free
    }

    pub fn num_fixed(&self) -> usize {
        self.len() - self.num_free
    }

    pub fn free(&self, node: usize) -> Option<usize> {
        self.free_index[node]
    }

    pub fn fixed_value(&self, node: usize) -> f64 {
        self.fixed_value[node]
    }

    /// Full nodal vector from free-DoF values.
    pub fn expand<T: Copy + From<f64>>(&self, reduced: &[T]) -> Vec<T> {
        assert_eq!(reduced.len(), self.num_free);
        self.free_index
            .iter()
            .enumerate()
            .map(|(n, slot)| match slot {
                Some(k) => reduced[*k],
                None => T::from(self.fixed_value[n]),
            })
            .collect()
    }

    pub fn restrict<T: Copy>(&self, full: &[T]) -> Vec<T> {
        self.free_index
            .iter()
            .zip(full)
            .filter_map(|(slot, v)| slot.map(|_| *v))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSystem {
    pub matrix: SparseSystemMatrix,
    pub rhs: Vec<f64>,
}

/// Eliminate the fixed DoFs of `dofs` from `matrix · a = rhs`.
pub fn eliminate_fixed(matrix: &SparseSystemMatrix, rhs: &[f64], dofs: &DofMap) -> Result<ReducedSystem> {
    matrix.check_dims(dofs.len(), dofs.len())?;
    if rhs.len() != dofs.len() {
        return Err(Error::Dimension {
            expected: dofs.len(),
            got: rhs.len(),
        });
    }
    let mut reduced_rhs = dofs.restrict(rhs);
    let mut triplets = Vec::with_capacity(matrix.nnz());
    for (i, j, v) in matrix.iter() {
        let Some(fi) = dofs.free(i) else { continue };
        match dofs.free(j) {
            Some(fj) => triplets.push((fi, fj, v)),
            None => reduced_rhs[fi] -= v * dofs.fixed_value(j),
        }
    }
    let n = dofs.num_free();
    Ok(ReducedSystem {
        matrix: SparseSystemMatrix::from_triplets(n, n, triplets, matrix.symmetric_flag()),
        rhs: reduced_rhs,
    })
}

/// Impose `value` on every node of edges tagged with `tags`; untagged boundary
/// parts keep the natural (tangential-H = 0) condition.
pub fn apply_dirichlet(
    mesh: &Mesh,
    matrix: &SparseSystemMatrix,
    rhs: &[f64],
    tags: &[&str],
    value: f64,
) -> Result<(ReducedSystem, DofMap)> {
    let dofs = DofMap::from_tags(mesh, tags, value)?;
    let reduced = eliminate_fixed(matrix, rhs, &dofs)?;
    Ok((reduced, dofs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnergyMode {
    /// `½ aᵀ K a` of a real field snapshot.
    Instantaneous,
    /// `¼ Re(aᴴ K a)` of a phasor with amplitude convention.
    PhasorTimeAverage,
}

/// Instantaneous magnetic energy `½ aᵀ K a` (J).
pub fn magnetic_energy(k: &SparseSystemMatrix, a: &[f64]) -> Result<f64> {
    if a.len() != k.ncols() {
        return Err(Error::Dimension {
            expected: k.ncols(),
            got: a.len(),
        });
    }
    Ok(0.5 * k.quadratic_form(a))
}

/// Magnetic energy of a complex field in the requested mode (J).
pub fn magnetic_energy_complex(k: &SparseSystemMatrix, a: &[Complex64], mode: EnergyMode) -> Result<f64> {
    if a.len() != k.ncols() {
        return Err(Error::Dimension {
            expected: k.ncols(),
            got: a.len(),
        });
    }
    match mode {
        EnergyMode::Instantaneous => {
            let re: Vec<f64> = a.iter().map(|z| z.re).collect();
            magnetic_energy(k, &re)
        }
        EnergyMode::PhasorTimeAverage => {
            let s: Complex64 = k.iter().map(|(i, j, v)| a[i].conj() * v * a[j]).sum();
            Ok(0.25 * s.re)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_structured_mesh, GeometrySpec, RegionRect};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// One cell `[0,w]×[0,h]`: triangle 0 is (0,0),(w,0),(w,h), triangle 1 is (0,0),(w,h),(0,h).
    fn single_cell(w: f64, h: f64) -> Mesh {
        let g = GeometrySpec::new(
            Symmetry::Cartesian { depth: 1.0 },
            vec![RegionRect::new("a", [0.0, 0.0], [w, h])],
        );
        generate_structured_mesh(&g, 1, 1).unwrap()
    }

    fn square(symmetry: Symmetry, n: usize) -> Mesh {
        let g = GeometrySpec::new(
            symmetry,
            vec![
                RegionRect::new("iron", [0.1, 0.0], [0.6, 1.0]),
                RegionRect::new("coil", [0.6, 0.0], [1.1, 1.0]),
            ],
        );
        generate_structured_mesh(&g, n, n).unwrap()
    }

    fn mats() -> MaterialMap {
        MaterialMap::new()
            .with("iron", Material::relative(100.0, 2.0e6))
            .with("coil", Material::anisotropic([MU0, 3.0 * MU0], 5.0e7))
    }

    #[test]
    fn right_triangle_stiffness_is_p1_laplace() {
        // Right triangle (0,0),(1,0),(1,1): gradients (-1,0), (1,-1), (0,1); area 1/2.
        let m = single_cell(1.0, 1.0);
        let mats = MaterialMap::new().with("a", Material::isotropic(1.0, 0.0));
        let k = assemble_stiffness(&m, &mats, AssemblyOptions::default()).unwrap();
        let grads = [[-1.0, 0.0], [1.0, -1.0], [0.0, 1.0]];
        let expected_first = |i: usize, j: usize| 0.5 * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
        // Node 1 and edge 0-1 belong to triangle 0 only.
        let tri = m.triangles[0].nodes;
        assert_eq!(tri, [0, 1, 3]);
        assert!((k.get(0, 1) - expected_first(0, 1)).abs() < 1e-15);
        assert!((k.get(1, 1) - expected_first(1, 1)).abs() < 1e-15);
        // Second triangle (0,0),(1,1),(0,1): gradients (0,-1),(1,0),(-1,1).
        let g2 = [[0.0, -1.0], [1.0, 0.0], [-1.0, 1.0]];
        let e2 = |i: usize, j: usize| 0.5 * (g2[i][0] * g2[j][0] + g2[i][1] * g2[j][1]);
        assert!((k.get(0, 0) - (expected_first(0, 0) + e2(0, 0))).abs() < 1e-15);
        assert!((k.get(0, 3) - (expected_first(0, 2) + e2(0, 1))).abs() < 1e-15);
        assert!((k.get(2, 2) - e2(2, 2)).abs() < 1e-15);
    }

    #[test]
    fn constant_potential_is_in_the_kernel() {
        let m = square(Symmetry::Cartesian { depth: 0.3 }, 6);
        let k = assemble_stiffness(&m, &mats(), AssemblyOptions::default()).unwrap();
        let y = k.mul_vec(&vec![1.0; m.num_nodes()]);
        let scale = k.max_abs();
        assert!(y.iter().all(|v| v.abs() < 1e-12 * scale));
    }

    #[test]
    fn stiffness_is_linear_in_reluctivity() {
        let m = square(Symmetry::Axisymmetric, 5);
        let k1 = assemble_stiffness(&m, &mats(), AssemblyOptions::default()).unwrap();
        let k2 = assemble_stiffness(&m, &mats().scale_reluctivity(2.0), AssemblyOptions::default()).unwrap();
        for (i, j, v) in k1.iter() {
            assert_eq!(k2.get(i, j), 2.0 * v);
        }
    }

    #[test]
    fn mass_element_matches_exact_p1_integration() {
        let m = single_cell(2.0, 3.0);
        let mats = MaterialMap::new().with("a", Material::isotropic(MU0, 1.0));
        let mm = assemble_mass(&m, &mats, AssemblyOptions::default()).unwrap();
        // node 1 belongs only to triangle 0 (area 3)
        assert!((mm.get(1, 1) - 3.0 / 12.0 * 2.0).abs() < 1e-15);
        // node 0 belongs to both triangles
        assert!((mm.get(0, 0) - 2.0 * 3.0 / 12.0 * 2.0).abs() < 1e-15);
        assert!((mm.get(0, 1) - 3.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn mass_zero_without_conductivity_and_total_matches_area() {
        let m = square(Symmetry::Cartesian { depth: 0.5 }, 4);
        let none = MaterialMap::new()
            .with("iron", Material::relative(1.0, 0.0))
            .with("coil", Material::relative(1.0, 0.0));
        assert_eq!(assemble_mass(&m, &none, AssemblyOptions::default()).unwrap().nnz(), 0);
        let uniform = MaterialMap::new()
            .with("iron", Material::relative(1.0, 3.0))
            .with("coil", Material::relative(1.0, 3.0));
        let mm = assemble_mass(&m, &uniform, AssemblyOptions::default()).unwrap();
        let total: f64 = mm.iter().map(|(_, _, v)| v).sum();
        assert!((total - 3.0 * 0.5 * 1.0).abs() < 1e-12);
    }

    #[test]
    fn axisymmetric_mass_row_sum_matches_weighted_integral() {
        // Σ_j M_ij summed over i is 2π σ ∫ dA / r = 2π σ h ln(r1/r0) on a rectangle.
        let m = square(Symmetry::Axisymmetric, 8);
        let uniform = MaterialMap::new()
            .with("iron", Material::relative(1.0, 1.0))
            .with("coil", Material::relative(1.0, 1.0));
        let mm = assemble_mass(&m, &uniform, AssemblyOptions { quadrature_degree: 12 }).unwrap();
        let total: f64 = mm.iter().map(|(_, _, v)| v).sum();
        let exact = 2.0 * std::f64::consts::PI * (1.1f64 / 0.1).ln();
        assert!((total - exact).abs() < 1e-6 * exact, "{total} vs {exact}");
    }

    #[test]
    fn negative_conductivity_rejected() {
        let m = square(Symmetry::Cartesian { depth: 1.0 }, 2);
        let bad = mats().with("coil", Material::relative(1.0, -1.0));
        assert!(matches!(assemble_mass(&m, &bad, AssemblyOptions::default()), Err(Error::Material(_))));
        let bad_nu = mats().with("coil", Material::anisotropic([-1.0, 1.0], 0.0));
        assert!(matches!(
            assemble_stiffness(&m, &bad_nu, AssemblyOptions::default()),
            Err(Error::Material(_))
        ));
        let missing = MaterialMap::new().with("iron", Material::relative(1.0, 0.0));
        assert!(matches!(
            assemble_stiffness(&m, &missing, AssemblyOptions::default()),
            Err(Error::Assembly(_))
        ));
    }

    #[test]
    fn source_partition_of_unity() {
        let g = GeometrySpec::new(
            Symmetry::Cartesian { depth: 1.0 },
            vec![
                RegionRect::new("src", [0.0, 0.0], [1e-3, 1e-3]),
                RegionRect::new("air", [1e-3, 0.0], [3e-3, 1e-3]),
            ],
        );
        let m = generate_structured_mesh(&g, 6, 2).unwrap();
        let q = assemble_source(&m, &SourceDensity::uniform("src", 1.0), AssemblyOptions::default()).unwrap();
        let total: f64 = q.iter().sum();
        assert!((total - 1e-6).abs() < 1e-18);
        let zero = assemble_source(&m, &SourceDensity::uniform("src", 0.0), AssemblyOptions::default()).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn source_is_linear_in_regions() {
        let m = square(Symmetry::Axisymmetric, 4);
        let opts = AssemblyOptions::default();
        let qa = assemble_source(&m, &SourceDensity::uniform("iron", 2.0), opts).unwrap();
        let qb = assemble_source(&m, &SourceDensity::uniform("coil", 3.0), opts).unwrap();
        let qab = assemble_source(
            &m,
            &SourceDensity::uniform("iron", 2.0).with_uniform("coil", 3.0),
            opts,
        )
        .unwrap();
        for i in 0..qa.len() {
            assert!((qab[i] - qa[i] - qb[i]).abs() <= 1e-15 * qab[i].abs().max(1.0));
        }
    }

    #[test]
    fn dirichlet_reduction_and_expansion() {
        let m = square(Symmetry::Cartesian { depth: 1.0 }, 4);
        let k = assemble_stiffness(&m, &mats(), AssemblyOptions::default()).unwrap();
        let rhs = vec![0.0; m.num_nodes()];
        let (red, dofs) = apply_dirichlet(&m, &k, &rhs, &["left", "right", "top", "bottom"], 0.0).unwrap();
        let interior = m
            .nodes
            .iter()
            .filter(|p| p[0] > 0.1 && p[0] < 1.1 && p[1] > 0.0 && p[1] < 1.0)
            .count();
        assert_eq!(red.matrix.nrows(), interior);
        assert_eq!(dofs.num_free(), interior);

        let (_, pinned) = apply_dirichlet(&m, &k, &rhs, &["left"], 0.25).unwrap();
        let full = pinned.expand(&vec![1.0; pinned.num_free()]);
        for n in m.nodes_with_tags(&["left"]) {
            assert_eq!(full[n], 0.25);
        }
        assert!(matches!(
            apply_dirichlet(&m, &k, &rhs, &["nowhere"], 0.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn nonzero_dirichlet_lifting_reproduces_linear_field() {
        // Laplace with a = x on left/right (pure Neumann top/bottom): the exact
        // solution is linear and P1 reproduces it.
        let g = GeometrySpec::new(
            Symmetry::Cartesian { depth: 1.0 },
            vec![RegionRect::new("a", [0.0, 0.0], [1.0, 1.0])],
        );
        let m = generate_structured_mesh(&g, 5, 3).unwrap();
        let mats = MaterialMap::new().with("a", Material::isotropic(1.0, 0.0));
        let k = assemble_stiffness(&m, &mats, AssemblyOptions::default()).unwrap();
        let mut dofs = DofMap::from_tags(&m, &["left", "right"], 0.0).unwrap();
        for n in m.nodes_with_tags(&["right"]) {
            dofs.fixed_value[n] = 1.0;
        }
        let red = eliminate_fixed(&k, &vec![0.0; m.num_nodes()], &dofs).unwrap();
        let x = dense_solve(red.matrix.to_dense(), red.rhs.clone());
        let full = dofs.expand(&x);
        for (n, p) in m.nodes.iter().enumerate() {
            assert!((full[n] - p[0]).abs() < 1e-12);
        }
    }

    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap()).unwrap();
            a.swap(c, p);
            b.swap(c, p);
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    fn dense_rank(mut a: Vec<Vec<f64>>, tol: f64) -> usize {
        let (n, m) = (a.len(), a[0].len());
        let mut rank = 0;
        for c in 0..m {
            let Some(p) = (rank..n).max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap()) else {
                break;
            };
            if a[p][c].abs() <= tol {
                continue;
            }
            a.swap(rank, p);
            for r in rank + 1..n {
                let f = a[r][c] / a[rank][c];
                for k in c..m {
                    a[r][k] -= f * a[rank][k];
                }
            }
            rank += 1;
        }
        rank
    }

    #[test]
    fn neumann_stiffness_has_constant_nullspace_only() {
        let m = square(Symmetry::Cartesian { depth: 1.0 }, 3);
        let k = assemble_stiffness(&m, &mats(), AssemblyOptions::default()).unwrap();
        let rank = dense_rank(k.to_dense(), 1e-10 * k.max_abs());
        assert_eq!(rank, m.num_nodes() - 1);
    }

    #[test]
    fn assembled_matrices_symmetric_and_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for symmetry in [Symmetry::Cartesian { depth: 0.2 }, Symmetry::Axisymmetric] {
            let m = square(symmetry, 7);
            let k = assemble_stiffness(&m, &mats(), AssemblyOptions::default()).unwrap();
            let mm = assemble_mass(&m, &mats(), AssemblyOptions::default()).unwrap();
            assert!(k.is_symmetric());
            assert!(mm.is_symmetric());
            for _ in 0..100 {
                let x: Vec<f64> = (0..m.num_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                assert!(k.quadratic_form(&x) >= -1e-12 * k.max_abs());
                assert!(mm.quadratic_form(&x) >= -1e-12 * mm.max_abs());
            }
        }
    }

    #[test]
    fn energy_modes() {
        let m = square(Symmetry::Cartesian { depth: 1.0 }, 3);
        let k = assemble_stiffness(&m, &mats(), AssemblyOptions::default()).unwrap();
        let zero = vec![0.0; m.num_nodes()];
        assert_eq!(magnetic_energy(&k, &zero).unwrap(), 0.0);
        let a: Vec<f64> = m.nodes.iter().map(|p| p[0] * p[1]).collect();
        let a2: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        let w = magnetic_energy(&k, &a).unwrap();
        assert!((magnetic_energy(&k, &a2).unwrap() - 4.0 * w).abs() < 1e-12 * w);
        let ac: Vec<Complex64> = a.iter().map(|&v| Complex64::new(0.0, v)).collect();
        let wp = magnetic_energy_complex(&k, &ac, EnergyMode::PhasorTimeAverage).unwrap();
        assert!((wp - 0.5 * w).abs() < 1e-12 * w);
        assert!(magnetic_energy(&k, &[1.0]).is_err());
    }
}
