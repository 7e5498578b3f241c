//! Homogenized foil-winding model.
//!
//! A foil winding is replaced by a homogeneous anisotropic conductor whose
//! current is driven by a voltage function `u(α)` varying only across the
//! foil stack. `u` is expanded in a [`VoltageBasis`] (hat functions or
//! Legendre polynomials) and couples to the field through the distribution
//! function `χ`, which points along the winding direction and has unit
//! circulation along one turn.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem2d::{assemble_source, triangle_points, AssemblyOptions, Material, SourceDensity};
use crate::mesh::{Mesh, RegionRect, Symmetry};
use crate::quadrature::{LineRule, TriangleRule};
use crate::sparse::SparseSystemMatrix;

/// Direction α perpendicular to the foils.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// Cartesian model, α = x.
    CartesianX,
    /// Cartesian model, α = y.
    CartesianY,
    /// Axisymmetric tube winding, α = r.
    Tube,
    /// Axisymmetric disk winding, α = z.
    Disk,
}

impl Orientation {
    /// Index of the in-plane coordinate that plays the role of α.
    pub fn alpha_axis(self) -> usize {
        match self {
            Orientation::CartesianX | Orientation::Tube => 0,
            Orientation::CartesianY | Orientation::Disk => 1,
        }
    }

    pub fn beta_axis(self) -> usize {
        1 - self.alpha_axis()
    }

    pub fn is_axisymmetric(self) -> bool {
        matches!(self, Orientation::Tube | Orientation::Disk)
    }
}

/// Geometry and material data of one foil-winding region.
#[derive(Debug, Clone, PartialEq)]
pub struct FoilWindingSpec {
    pub region: String,
    pub orientation: Orientation,
    /// The interval L_α.
    pub alpha: [f64; 2],
    /// Extent along the tips direction β.
    pub beta: [f64; 2],
    pub turns: usize,
    pub fill_factor: f64,
    pub sigma_foil: f64,
    pub mu_foil: f64,
    pub mu_insulation: f64,
    /// Model depth (Cartesian only).
    pub depth: f64,
}

impl FoilWindingSpec {
    /// Spec covering the rectangle `rect` with the default non-magnetic foil and insulation.
    pub fn from_region(
        rect: &RegionRect,
        orientation: Orientation,
        turns: usize,
        fill_factor: f64,
        sigma_foil: f64,
        depth: f64,
    ) -> Self {
        let a = orientation.alpha_axis();
        let b = orientation.beta_axis();
        FoilWindingSpec {
            region: rect.label.clone(),
            orientation,
            alpha: [rect.min[a], rect.max[a]],
            beta: [rect.min[b], rect.max[b]],
            turns,
            fill_factor,
            sigma_foil,
            mu_foil: crate::fem2d::MU0,
            mu_insulation: crate::fem2d::MU0,
            depth,
        }
    }

    pub fn alpha_length(&self) -> f64 {
        self.alpha[1] - self.alpha[0]
    }

    /// Extent along the tips direction.
    pub fn transverse_extent(&self) -> f64 {
        self.beta[1] - self.beta[0]
    }

    /// Foil pitch b = L_α / N.
    pub fn foil_width(&self) -> f64 {
        self.alpha_length() / self.turns as f64
    }

    pub fn conductor_width(&self) -> f64 {
        self.fill_factor * self.foil_width()
    }

    pub fn validate(&self) -> Result<()> {
        if self.turns == 0 {
            return Err(Error::Config(format!("foil winding '{}': turns must be at least 1", self.region)));
        }
        if !(self.fill_factor > 0.0 && self.fill_factor <= 1.0) {
            return Err(Error::Config(format!(
                "foil winding '{}': fill_factor must lie in (0, 1], got {}",
                self.region, self.fill_factor
            )));
        }
        if !(self.alpha_length() > 0.0) || !(self.transverse_extent() > 0.0) {
            return Err(Error::Config(format!("foil winding '{}': empty extent", self.region)));
        }
        if self.orientation == Orientation::Tube && !(self.alpha[0] > 0.0) {
            return Err(Error::Config(format!(
                "foil winding '{}': tube windings need a positive inner radius",
                self.region
            )));
        }
        if !(self.sigma_foil >= 0.0) {
            return Err(Error::Config(format!("foil winding '{}': negative conductivity", self.region)));
        }
        if !(self.mu_foil > 0.0 && self.mu_insulation > 0.0) {
            return Err(Error::Config(format!("foil winding '{}': permeabilities must be positive", self.region)));
        }
        if !self.orientation.is_axisymmetric() && !(self.depth > 0.0) {
            return Err(Error::Config(format!("foil winding '{}': depth must be positive", self.region)));
        }
        Ok(())
    }

    fn check_mesh(&self, mesh: &Mesh) -> Result<()> {
        self.validate()?;
        if mesh.symmetry.is_axisymmetric() != self.orientation.is_axisymmetric() {
            return Err(Error::Config(format!(
                "foil winding '{}': orientation {:?} does not match the mesh coordinate system",
                self.region, self.orientation
            )));
        }
        if let Symmetry::Cartesian { depth } = mesh.symmetry {
            if depth != self.depth {
                return Err(Error::Config(format!(
                    "foil winding '{}': depth {} differs from the model depth {depth}",
                    self.region, self.depth
                )));
            }
        }
        mesh.require_region(&self.region)?;
        Ok(())
    }

    fn contains(&self, p: [f64; 2]) -> bool {
        let a = p[self.orientation.alpha_axis()];
        let b = p[self.orientation.beta_axis()];
        let tol_a = 1e-12 * self.alpha_length();
        let tol_b = 1e-12 * self.transverse_extent();
        a >= self.alpha[0] - tol_a
            && a <= self.alpha[1] + tol_a
            && b >= self.beta[0] - tol_b
            && b <= self.beta[1] + tol_b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    Hat,
    Legendre,
}

/// Scalar functions `s_j(α)` spanning the voltage function on L_α.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageBasis {
    pub kind: BasisKind,
    pub n: usize,
    pub interval: [f64; 2],
    /// Optional per-function factors; the spanned space is unchanged.
    scales: Option<Vec<f64>>,
}

impl VoltageBasis {
    pub fn new(kind: BasisKind, n: usize, interval: [f64; 2]) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("voltage basis needs at least one function".into()));
        }
        if !(interval[1] > interval[0]) {
            return Err(Error::Config(format!("empty basis interval {interval:?}")));
        }
        Ok(VoltageBasis {
            kind,
            n,
            interval,
            scales: None,
        })
    }

    pub fn hat(n: usize, interval: [f64; 2]) -> Result<Self> {
        Self::new(BasisKind::Hat, n, interval)
    }

    pub fn legendre(n: usize, interval: [f64; 2]) -> Result<Self> {
        Self::new(BasisKind::Legendre, n, interval)
    }

    /// Same basis with function `j` multiplied by `scales[j]`.
    pub fn with_scales(mut self, scales: Vec<f64>) -> Result<Self> {
        if scales.len() != self.n || scales.iter().any(|&s| s == 0.0 || !s.is_finite()) {
            return Err(Error::Config("basis scales must be n finite nonzero numbers".into()));
        }
        self.scales = Some(scales);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Polynomial degree of each function on one smooth piece.
    pub fn piece_degree(&self) -> usize {
        match self.kind {
            BasisKind::Hat => usize::from(self.n > 1),
            BasisKind::Legendre => self.n - 1,
        }
    }

    /// Hat nodes; for Legendre only the interval ends.
    pub fn breakpoints(&self) -> Vec<f64> {
        let [a, b] = self.interval;
        match self.kind {
            BasisKind::Hat if self.n > 1 => (0..self.n)
                .map(|k| {
                    if k == self.n - 1 {
                        b
                    } else {
                        a + (b - a) * k as f64 / (self.n - 1) as f64
                    }
                })
                .collect(),
            _ => vec![a, b],
        }
    }

    /// Value of `s_j(α)`.
    pub fn eval(&self, j: usize, alpha: f64) -> Result<f64> {
        if j >= self.n {
            return Err(Error::Domain(format!("basis index {j} out of range 0..{}", self.n)));
        }
        let [a, b] = self.interval;
        let tol = 1e-12 * (b - a);
        if !(alpha >= a - tol && alpha <= b + tol) {
            return Err(Error::Domain(format!("α = {alpha} outside [{a}, {b}]")));
        }
        Ok(self.eval_unchecked(j, alpha.clamp(a, b)))
    }

    pub(crate) fn eval_unchecked(&self, j: usize, alpha: f64) -> f64 {
        let [a, b] = self.interval;
        let raw = match self.kind {
            BasisKind::Hat => {
                if self.n == 1 {
                    1.0
                } else {
                    let h = (b - a) / (self.n - 1) as f64;
                    let t = (alpha - a) / h - j as f64;
                    (1.0 - t.abs()).max(0.0)
                }
            }
            BasisKind::Legendre => legendre_value(j, 2.0 * (alpha - a) / (b - a) - 1.0),
        };
        match &self.scales {
            Some(s) => s[j] * raw,
            None => raw,
        }
    }

    /// `∫_{L_α} s_j dα`, exact for the basis degree.
    pub fn integral(&self, j: usize) -> f64 {
        let bp = self.breakpoints();
        let rule = LineRule::with_degree(self.piece_degree());
        bp.windows(2)
            .map(|w| rule.integrate(w[0], w[1], |x| self.eval_unchecked(j, x)))
            .sum()
    }
}

/// Legendre polynomial `P_k(ξ)` by the three-term recurrence.
pub fn legendre_value(k: usize, xi: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let (mut p0, mut p1) = (1.0, xi);
    for m in 1..k {
        let mf = m as f64;
        let p2 = ((2.0 * mf + 1.0) * xi * p1 - mf * p0) / (mf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// Effective material of the foil stack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomogenizedMaterial {
    /// Conductivity along the winding direction.
    pub sigma: f64,
    /// Reluctivity for flux parallel to the foils.
    pub nu_parallel: f64,
    /// Reluctivity for flux across the foils.
    pub nu_perpendicular: f64,
}

impl HomogenizedMaterial {
    /// Region material in the mesh frame for the given foil orientation.
    pub fn to_material(&self, orientation: Orientation) -> Material {
        let mut nu = [self.nu_parallel; 2];
        nu[orientation.alpha_axis()] = self.nu_perpendicular;
        Material {
            nu,
            mu: nu.map(|v| 1.0 / v),
            sigma: self.sigma,
        }
    }
}

/// Laminate mixing rules: arithmetic permeability mean along the layers,
/// harmonic mean across them, conductivity scaled by the fill factor.
pub fn mixing_rules(spec: &FoilWindingSpec) -> Result<HomogenizedMaterial> {
    spec.validate()?;
    let ff = spec.fill_factor;
    let mu_par = ff * spec.mu_foil + (1.0 - ff) * spec.mu_insulation;
    let mu_perp = 1.0 / (ff / spec.mu_foil + (1.0 - ff) / spec.mu_insulation);
    Ok(HomogenizedMaterial {
        sigma: ff * spec.sigma_foil,
        nu_parallel: 1.0 / mu_par,
        nu_perpendicular: 1.0 / mu_perp,
    })
}

/// Winding-direction component of χ at `p`: `1/ℓ_z` or `1/(2π r)`.
pub(crate) fn chi(symmetry: Symmetry, p: [f64; 2]) -> f64 {
    match symmetry {
        Symmetry::Cartesian { depth } => 1.0 / depth,
        Symmetry::Axisymmetric => 1.0 / (2.0 * std::f64::consts::PI * p[0]),
    }
}

/// Distribution function at `point`, returned as its (only) winding-direction component.
pub fn distribution_function(spec: &FoilWindingSpec, point: [f64; 2]) -> Result<f64> {
    spec.validate()?;
    if !spec.contains(point) {
        return Err(Error::Domain(format!(
            "point {point:?} outside foil winding '{}'",
            spec.region
        )));
    }
    let symmetry = if spec.orientation.is_axisymmetric() {
        Symmetry::Axisymmetric
    } else {
        Symmetry::Cartesian { depth: spec.depth }
    };
    Ok(chi(symmetry, point))
}

fn check_basis(spec: &FoilWindingSpec, basis: &VoltageBasis) -> Result<()> {
    let tol = 1e-12 * spec.alpha_length();
    if (basis.interval[0] - spec.alpha[0]).abs() > tol || (basis.interval[1] - spec.alpha[1]).abs() > tol {
        return Err(Error::Config(format!(
            "basis interval {:?} differs from the winding interval {:?}",
            basis.interval, spec.alpha
        )));
    }
    Ok(())
}

/// Artificial current density `σ s_j χ` on the winding region.
pub fn coupling_density<'a>(
    mesh: &Mesh,
    spec: &'a FoilWindingSpec,
    basis: &'a VoltageBasis,
    sigma: f64,
    j: usize,
) -> SourceDensity<'a> {
    let symmetry = mesh.symmetry;
    let axis = spec.orientation.alpha_axis();
    SourceDensity::new().with_fn(spec.region.clone(), move |p| {
        sigma * basis.eval_unchecked(j, p[axis]) * chi(symmetry, p)
    })
}

/// Quadrature options raised to the exactness needed by the polynomial part.
fn raised(options: AssemblyOptions, degree: usize) -> AssemblyOptions {
    AssemblyOptions {
        quadrature_degree: options.quadrature_degree.max(degree),
    }
}

/// Coupling matrix `X_ij = ∫ σ s_j χ · w_i dV` (nodes × basis functions).
///
/// Column `j` is the load vector of the artificial density `σ s_j χ`.
pub fn assemble_coupling(
    mesh: &Mesh,
    spec: &FoilWindingSpec,
    basis: &VoltageBasis,
    options: AssemblyOptions,
) -> Result<SparseSystemMatrix> {
    spec.check_mesh(mesh)?;
    check_basis(spec, basis)?;
    let sigma = mixing_rules(spec)?.sigma;
    let options = raised(options, basis.piece_degree() + 1);
    let mut triplets = Vec::new();
    for j in 0..basis.len() {
        let column = assemble_source(mesh, &coupling_density(mesh, spec, basis, sigma, j), options)?;
        triplets.extend(
            column
                .into_iter()
                .enumerate()
                .filter(|(_, v)| *v != 0.0)
                .map(|(i, v)| (i, j, v)),
        );
    }
    Ok(SparseSystemMatrix::from_triplets(mesh.num_nodes(), basis.len(), triplets, false))
}

/// Conductance matrix `G_ij = ∫ σ χ·χ s_j s_i dV`.
pub fn assemble_conductance(
    mesh: &Mesh,
    spec: &FoilWindingSpec,
    basis: &VoltageBasis,
    options: AssemblyOptions,
) -> Result<SparseSystemMatrix> {
    spec.check_mesh(mesh)?;
    check_basis(spec, basis)?;
    let sigma = mixing_rules(spec)?.sigma;
    let options = raised(options, 2 * basis.piece_degree());
    let rule = TriangleRule::with_degree(options.quadrature_degree);
    let axis = spec.orientation.alpha_axis();
    let n = basis.len();
    let mut g = vec![vec![0.0; n]; n];
    let mut s = vec![0.0; n];
    for &t in mesh.region_triangles(&spec.region) {
        let c = mesh.coords(t);
        for qp in triangle_points(&c, &rule) {
            let x = chi(mesh.symmetry, qp.p);
            let dv = match mesh.symmetry {
                Symmetry::Cartesian { depth } => depth,
                Symmetry::Axisymmetric => 2.0 * std::f64::consts::PI * qp.p[0],
            };
            let w = sigma * x * x * dv * qp.weight;
            for (j, sj) in s.iter_mut().enumerate() {
                *sj = basis.eval_unchecked(j, qp.p[axis]);
            }
            for i in 0..n {
                for j in i..n {
                    g[i][j] += w * (s[i] * s[j]);
                }
            }
        }
    }
    let mut triplets = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in i..n {
            triplets.push((i, j, g[i][j]));
            if i != j {
                triplets.push((j, i, g[i][j]));
            }
        }
    }
    Ok(SparseSystemMatrix::from_triplets(n, n, triplets, true))
}

/// Turn vector `c_i = (1/b) ∫_{L_α} s_i dα`.
pub fn assemble_cvec(spec: &FoilWindingSpec, basis: &VoltageBasis) -> Result<Vec<f64>> {
    spec.validate()?;
    check_basis(spec, basis)?;
    let b = spec.foil_width();
    Ok((0..basis.len()).map(|i| basis.integral(i) / b).collect())
}

/// All homogenized objects of one winding.
#[derive(Debug, Clone, PartialEq)]
pub struct FoilBlock {
    pub spec: FoilWindingSpec,
    pub basis: VoltageBasis,
    pub coupling: SparseSystemMatrix,
    pub conductance: SparseSystemMatrix,
    pub cvec: Vec<f64>,
}

impl FoilBlock {
    pub fn assemble(
        mesh: &Mesh,
        spec: &FoilWindingSpec,
        basis: &VoltageBasis,
        options: AssemblyOptions,
    ) -> Result<Self> {
        Ok(FoilBlock {
            spec: spec.clone(),
            basis: basis.clone(),
            coupling: assemble_coupling(mesh, spec, basis, options)?,
            conductance: assemble_conductance(mesh, spec, basis, options)?,
            cvec: assemble_cvec(spec, basis)?,
        })
    }
}
