//! Reference models that do not use the homogenization: every foil turn is
//! meshed as a solid conductor in series with the others. Also hosts the
//! convergence-study harness comparing homogenized runs with a reference.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem2d::{
    assemble_mass, assemble_source, assemble_stiffness, magnetic_energy_complex, triangle_points, AssemblyOptions,
    DofMap, EnergyMode, Material, MaterialMap, SourceDensity,
};
use crate::foilwinding::{chi, BasisKind, FoilWindingSpec, VoltageBasis};
use crate::linsolve::LinearSystem;
use crate::mesh::{generate_structured_mesh, GeometrySpec, Mesh, RegionRect, Symmetry};
use crate::quadrature::TriangleRule;
use crate::solver::{AssembledSystem, Drive, FoilDevice, SolutionState};

/// Skin depth `√(2/(2πf μ σ))` in metres.
pub fn skin_depth(sigma: f64, mu: f64, frequency: f64) -> Result<f64> {
    if !(sigma > 0.0 && mu > 0.0 && frequency > 0.0) {
        return Err(Error::Domain(format!(
            "skin depth needs positive σ, μ and f (got {sigma}, {mu}, {frequency})"
        )));
    }
    Ok((2.0 / (2.0 * std::f64::consts::PI * frequency * mu * sigma)).sqrt())
}

/// A field problem containing one foil winding, shared by the homogenized
/// and resolved solves.
#[derive(Debug, Clone)]
pub struct WindingCase {
    /// Geometry including the winding envelope as a region.
    pub geometry: GeometrySpec,
    pub materials: MaterialMap,
    pub winding: FoilWindingSpec,
    /// Regions removed after meshing (their interface gets the natural condition).
    pub exterior: Vec<String>,
    pub dirichlet: Vec<String>,
    pub frequency: f64,
    /// Imposed terminal current amplitude (A).
    pub current: f64,
    pub options: AssemblyOptions,
}

/// Voltage-basis variant of a study point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BasisVariant {
    /// Hat functions with their breakpoints injected as grid lines.
    Hat,
    Legendre,
    /// Hat functions on a mesh ignoring the breakpoints, integrated with a
    /// low-order rule.
    HatUnaligned,
}

impl BasisVariant {
    pub fn label(self) -> &'static str {
        match self {
            BasisVariant::Hat => "hat",
            BasisVariant::Legendre => "legendre",
            BasisVariant::HatUnaligned => "hat-unaligned",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hat" => Ok(BasisVariant::Hat),
            "legendre" => Ok(BasisVariant::Legendre),
            "hat-unaligned" => Ok(BasisVariant::HatUnaligned),
            _ => Err(Error::Config(format!(
                "unknown basis kind '{s}' (expected hat, legendre or hat-unaligned)"
            ))),
        }
    }

    fn kind(self) -> BasisKind {
        match self {
            BasisVariant::Legendre => BasisKind::Legendre,
            _ => BasisKind::Hat,
        }
    }
}

/// Quadrature degree used by the unaligned hat variant.
const UNALIGNED_QUADRATURE: usize = 2;

/// Result of one homogenized solve.
#[derive(Debug, Clone)]
pub struct HomogenizedSolution {
    pub system: AssembledSystem,
    pub state: SolutionState<Complex64>,
    pub energy: f64,
    pub impedance: Complex64,
}

fn mesh_case(geometry: &GeometrySpec, exterior: &[String], nx: usize, ny: usize) -> Result<Mesh> {
    let mesh = generate_structured_mesh(geometry, nx, ny)?;
    if exterior.is_empty() {
        return Ok(mesh);
    }
    for label in exterior {
        mesh.require_region(label)?;
    }
    mesh.restrict(|l| !exterior.iter().any(|e| e == l), "interface")
}

impl WindingCase {
    fn omega(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.frequency
    }

    fn dirichlet_tags(&self) -> Vec<&str> {
        self.dirichlet.iter().map(String::as_str).collect()
    }

    /// Homogenized solve on an `nx × ny` grid with `n` voltage functions.
    pub fn solve_homogenized(
        &self,
        nx: usize,
        ny: usize,
        variant: BasisVariant,
        n: usize,
    ) -> Result<HomogenizedSolution> {
        let basis = VoltageBasis::new(variant.kind(), n, self.winding.alpha)?;
        let mut geometry = self.geometry.clone();
        let mut options = self.options;
        match variant {
            BasisVariant::Hat => {
                let lines = if self.winding.orientation.alpha_axis() == 0 {
                    &mut geometry.align_x
                } else {
                    &mut geometry.align_y
                };
                lines.extend(basis.breakpoints());
            }
            BasisVariant::HatUnaligned => options.quadrature_degree = UNALIGNED_QUADRATURE,
            BasisVariant::Legendre => {}
        }
        let mesh = mesh_case(&geometry, &self.exterior, nx, ny)?;
        let device = FoilDevice {
            name: "winding".into(),
            spec: self.winding.clone(),
            basis,
        };
        let system = AssembledSystem::assemble(&mesh, &self.materials, &[device], &[], &self.dirichlet_tags(), options)?;
        let state = system.solve_frequency(self.omega(), &[Drive::Current(Complex64::new(self.current, 0.0))])?;
        let energy = system.phasor_energy(&state.a)?;
        let impedance = state.devices[0].v / state.devices[0].i;
        Ok(HomogenizedSolution {
            system,
            state,
            energy,
            impedance,
        })
    }
}

/// Winding with every turn meshed as its own solid conductor.
#[derive(Debug, Clone)]
pub struct ResolvedFoilModel {
    pub case: WindingCase,
}

/// Outcome of a resolved solve.
#[derive(Debug, Clone)]
pub struct ResolvedSolution {
    pub mesh: Mesh,
    pub a: Vec<Complex64>,
    /// Voltage of each turn.
    pub turn_voltages: Vec<Complex64>,
    pub current: Complex64,
    pub voltage: Complex64,
    pub energy: f64,
    pub impedance: Complex64,
    pub num_field_dofs: usize,
    pub warnings: Vec<String>,
}

impl ResolvedFoilModel {
    pub fn new(case: WindingCase) -> Result<Self> {
        case.winding.validate()?;
        let envelope = case
            .geometry
            .region(&case.winding.region)
            .ok_or_else(|| Error::Geometry(format!("no region '{}' in the geometry", case.winding.region)))?;
        let (a, b) = (case.winding.orientation.alpha_axis(), case.winding.orientation.beta_axis());
        let tol = 1e-12 * case.winding.alpha_length();
        if (envelope.min[a] - case.winding.alpha[0]).abs() > tol
            || (envelope.max[a] - case.winding.alpha[1]).abs() > tol
            || (envelope.min[b] - case.winding.beta[0]).abs() > tol * 1e3
            || (envelope.max[b] - case.winding.beta[1]).abs() > tol * 1e3
        {
            return Err(Error::Geometry("winding extent differs from its region rectangle".into()));
        }
        Ok(ResolvedFoilModel { case })
    }

    /// Conductor rectangles `[lo, hi]` along α, one per turn, centred in their pitch.
    pub fn turn_intervals(&self) -> Vec<[f64; 2]> {
        let w = &self.case.winding;
        let b = w.foil_width();
        let gap = b - w.conductor_width();
        (0..w.turns)
            .map(|k| {
                let lo = w.alpha[0] + k as f64 * b + 0.5 * gap;
                [lo, lo + w.conductor_width()]
            })
            .collect()
    }

    fn turn_label(k: usize) -> String {
        format!("turn_{k}")
    }

    /// Geometry with the envelope replaced by turn and insulation rectangles.
    pub fn geometry(&self) -> GeometrySpec {
        let w = &self.case.winding;
        let (a, b) = (w.orientation.alpha_axis(), w.orientation.beta_axis());
        let rect = |label: String, lo: f64, hi: f64| {
            let mut min = [0.0; 2];
            let mut max = [0.0; 2];
            min[a] = lo;
            max[a] = hi;
            min[b] = w.beta[0];
            max[b] = w.beta[1];
            RegionRect::new(label, min, max)
        };
        let mut g = self.case.geometry.clone();
        g.regions.retain(|r| r.label != w.region);
        let turns = self.turn_intervals();
        let mut edges = vec![w.alpha[0]];
        for (k, t) in turns.iter().enumerate() {
            g.regions.push(rect(Self::turn_label(k), t[0], t[1]));
            edges.extend_from_slice(t);
        }
        edges.push(w.alpha[1]);
        let tol = 1e-12 * w.alpha_length();
        for (j, pair) in edges.chunks(2).enumerate() {
            if pair[1] - pair[0] > tol {
                g.regions.push(rect(format!("insulation_{j}"), pair[0], pair[1]));
            }
        }
        g
    }

    fn materials(&self) -> MaterialMap {
        let w = &self.case.winding;
        let mut m = self.case.materials.clone();
        for k in 0..w.turns {
            m.insert(Self::turn_label(k), Material::isotropic(w.mu_foil, w.sigma_foil));
        }
        for j in 0..=w.turns {
            m.insert(format!("insulation_{j}"), Material::isotropic(w.mu_insulation, 0.0));
        }
        m
    }

    /// Solve with the case's imposed current on an `nx × ny` grid (refined
    /// as needed so every turn and insulation layer gets its own cells).
    pub fn solve(&self, nx: usize, ny: usize) -> Result<ResolvedSolution> {
        let case = &self.case;
        let w = &case.winding;
        let mesh = mesh_case(&self.geometry(), &case.exterior, nx, ny)?;
        let materials = self.materials();
        let options = case.options;
        let k = assemble_stiffness(&mesh, &materials, options)?;
        let m = assemble_mass(&mesh, &materials, options)?;
        let tags = case.dirichlet_tags();
        let dofs = DofMap::from_tags(&mesh, &tags, 0.0)?;
        let warnings = self.resolution_warnings(&mesh);

        let symmetry = mesh.symmetry;
        let sigma = w.sigma_foil;
        let rule = TriangleRule::with_degree(options.quadrature_degree);
        let mut columns = Vec::with_capacity(w.turns);
        let mut conductances = Vec::with_capacity(w.turns);
        for t in 0..w.turns {
            let label = Self::turn_label(t);
            let density = SourceDensity::new().with_fn(label.clone(), move |p| sigma * chi(symmetry, p));
            columns.push(dofs.restrict(&assemble_source(&mesh, &density, options)?));
            let mut g = 0.0;
            for &tri in mesh.region_triangles(&label) {
                for q in triangle_points(&mesh.coords(tri), &rule) {
                    let x = chi(symmetry, q.p);
                    let dv = match symmetry {
                        Symmetry::Cartesian { depth } => depth,
                        Symmetry::Axisymmetric => 2.0 * std::f64::consts::PI * q.p[0],
                    };
                    g += sigma * x * x * dv * q.weight;
                }
            }
            conductances.push(g);
        }

        let omega = case.omega();
        let jw = Complex64::new(0.0, omega);
        let fs = if omega > 0.0 { 1.0 / jw } else { Complex64::new(1.0, 0.0) };
        let nf = dofs.num_free();
        let c = |x: f64| Complex64::new(x, 0.0);
        let mut sys = LinearSystem::<Complex64>::new(nf + w.turns).with_core(nf);
        for (i, j, v) in k.iter() {
            if let (Some(fi), Some(fj)) = (dofs.free(i), dofs.free(j)) {
                sys.add(fi, fj, c(v));
            }
        }
        for (i, j, v) in m.iter() {
            if let (Some(fi), Some(fj)) = (dofs.free(i), dofs.free(j)) {
                sys.add(fi, fj, jw * v);
            }
        }
        let current = Complex64::new(case.current, 0.0);
        for (t, (col, g)) in columns.iter().zip(&conductances).enumerate() {
            let row = nf + t;
            for (r, &x) in col.iter().enumerate() {
                if x != 0.0 {
                    sys.add(r, row, c(-x));
                    sys.add(row, r, -jw * fs * x);
                }
            }
            sys.add(row, row, fs * *g);
            sys.add_rhs(row, fs * current);
        }
        let x = sys.solve()?;
        let a = dofs.expand(&x[..nf]);
        let turn_voltages = x[nf..].to_vec();
        let voltage: Complex64 = turn_voltages.iter().sum();
        let energy = magnetic_energy_complex(&k, &a, EnergyMode::PhasorTimeAverage)?;
        Ok(ResolvedSolution {
            mesh,
            a,
            turn_voltages,
            current,
            voltage,
            energy,
            impedance: voltage / current,
            num_field_dofs: nf,
            warnings,
        })
    }

    fn resolution_warnings(&self, mesh: &Mesh) -> Vec<String> {
        let w = &self.case.winding;
        let Some(grid) = mesh.grid() else { return Vec::new() };
        let lines = if w.orientation.alpha_axis() == 0 { &grid.xs } else { &grid.ys };
        let widest = self
            .turn_intervals()
            .iter()
            .map(|t| {
                lines
                    .windows(2)
                    .filter(|p| p[0] >= t[0] - 1e-15 && p[1] <= t[1] + 1e-15)
                    .map(|p| p[1] - p[0])
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        let mut out = Vec::new();
        if widest > 0.5 * w.conductor_width() * (1.0 + 1e-9) {
            out.push(format!(
                "resolved mesh has {:.2} elements across a conductor (need at least 2)",
                w.conductor_width() / widest
            ));
        }
        if self.case.frequency > 0.0 {
            if let Ok(delta) = skin_depth(w.sigma_foil, w.mu_foil, self.case.frequency) {
                if delta < w.conductor_width() && widest > delta / 4.0 {
                    out.push(format!(
                        "resolved mesh has {:.2} elements per skin depth (need at least 4)",
                        delta / widest
                    ));
                }
            }
        }
        out
    }
}

/// Reference energy source for a convergence study.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    /// Resolved-foil oracle on the given grid.
    Resolved { nx: usize, ny: usize },
    /// Homogenized solve on a finer grid with many Legendre functions.
    SelfReference { nx: usize, ny: usize, n: usize },
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub nx: usize,
    pub ny: usize,
    pub n_a: usize,
    pub n_u: usize,
    pub variant: BasisVariant,
    pub energy: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyTable {
    pub reference_energy: f64,
    pub rows: Vec<StudyRow>,
}

impl StudyTable {
    pub fn find(&self, nx: usize, ny: usize, variant: BasisVariant, n: usize) -> Option<&StudyRow> {
        self.rows
            .iter()
            .find(|r| r.nx == nx && r.ny == ny && r.variant == variant && r.n_u == n)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "N_a [-],N_u [-],kind [-],W [J],rel_error [-]")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{:.16e},{:.16e}",
                r.n_a,
                r.n_u,
                r.variant.label(),
                r.energy,
                r.rel_error
            )?;
        }
        Ok(())
    }
}

/// Compute the reference energy of `case`.
pub fn reference_energy(case: &WindingCase, reference: &Reference) -> Result<f64> {
    match *reference {
        Reference::Resolved { nx, ny } => Ok(ResolvedFoilModel::new(case.clone())?.solve(nx, ny)?.energy),
        Reference::SelfReference { nx, ny, n } => {
            Ok(case.solve_homogenized(nx, ny, BasisVariant::Legendre, n)?.energy)
        }
        Reference::Value(w) => Ok(w),
    }
}

/// Energy error table over mesh levels × basis variants × basis sizes.
///
/// Points run in parallel; rows come back in the nested input order.
pub fn convergence_study(
    case: &WindingCase,
    levels: &[(usize, usize)],
    variants: &[BasisVariant],
    counts: &[usize],
    reference: &Reference,
) -> Result<StudyTable> {
    let mut points = Vec::new();
    for &(nx, ny) in levels {
        for &v in variants {
            for &n in counts {
                points.push((nx, ny, v, n));
            }
        }
    }
    let (reference_energy, rows) = rayon::join(
        || reference_energy(case, reference),
        || {
            points
                .par_iter()
                .map(|&(nx, ny, variant, n)| {
                    let sol = case.solve_homogenized(nx, ny, variant, n)?;
                    Ok((nx, ny, sol.system.num_field_dofs(), n, variant, sol.energy))
                })
                .collect::<Result<Vec<_>>>()
        },
    );
    let reference_energy = reference_energy?;
    if !(reference_energy.abs() > 0.0) {
        return Err(Error::Numerical("reference energy is zero".into()));
    }
    let rows = rows?
        .into_iter()
        .map(|(nx, ny, n_a, n_u, variant, energy)| StudyRow {
            nx,
            ny,
            n_a,
            n_u,
            variant,
            energy,
            rel_error: ((energy - reference_energy) / reference_energy).abs(),
        })
        .collect();
    Ok(StudyTable {
        reference_energy,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem2d::MU0;
    use crate::foilwinding::Orientation;
    use crate::mesh::Symmetry;

    /// Stand-alone winding-only domain with flux walls on every side.
    fn bar_case(turns: usize, ff: f64, frequency: f64) -> WindingCase {
        let depth = 0.5;
        let rect = RegionRect::new("winding", [0.0, 0.0], [0.4e-3, 4e-3]);
        let winding = FoilWindingSpec::from_region(&rect, Orientation::CartesianX, turns, ff, 5.7e7, depth);
        WindingCase {
            geometry: GeometrySpec::new(Symmetry::Cartesian { depth }, vec![rect]),
            materials: MaterialMap::new(),
            winding,
            exterior: vec![],
            dirichlet: ["left", "right", "bottom", "top"].map(String::from).to_vec(),
            frequency,
            current: 1.0,
            options: AssemblyOptions::default(),
        }
    }

    #[test]
    fn skin_depth_values() {
        let d = skin_depth(5.7e7, MU0, 5e4).unwrap();
        assert!((d - 0.2981e-3).abs() < 0.0001e-3, "{d}");
        let d4 = skin_depth(5.7e7, MU0, 2e5).unwrap();
        assert!((d / d4 - 2.0).abs() < 1e-12);
        assert!((d / 0.018e-3 - 16.6).abs() < 0.05);
        assert!(matches!(skin_depth(0.0, MU0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn turn_layout() {
        let model = ResolvedFoilModel::new(bar_case(4, 0.5, 50.0)).unwrap();
        let t = model.turn_intervals();
        assert_eq!(t.len(), 4);
        let b = 0.1e-3;
        assert!((t[0][0] - 0.25 * b).abs() < 1e-18);
        assert!((t[3][1] - (4.0 * b - 0.25 * b)).abs() < 1e-18);
        let g = model.geometry();
        assert_eq!(g.regions.len(), 9);
        g.validate().unwrap();
    }

    #[test]
    fn single_turn_dc_resistance() {
        let case = bar_case(1, 1.0, 0.01);
        let sol = ResolvedFoilModel::new(case).unwrap().solve(4, 8).unwrap();
        let r_dc = 0.5 / (5.7e7 * 0.4e-3 * 4e-3);
        assert!((sol.impedance.re / r_dc - 1.0).abs() < 1e-3);
    }

    #[test]
    fn dc_energy_scales_with_turns_squared() {
        let one = ResolvedFoilModel::new(bar_case(1, 1.0, 0.01)).unwrap().solve(16, 16).unwrap();
        let four = ResolvedFoilModel::new(bar_case(4, 1.0, 0.01)).unwrap().solve(16, 16).unwrap();
        assert!((four.energy / one.energy - 16.0).abs() < 1e-6 * 16.0);
        assert!((four.impedance.re / one.impedance.re - 16.0).abs() < 1e-6 * 16.0);
    }

    #[test]
    fn resolved_impedance_is_inductive_and_lossy() {
        let sol = ResolvedFoilModel::new(bar_case(4, 0.9, 5e4)).unwrap().solve(40, 40).unwrap();
        assert!(sol.impedance.re > 0.0 && sol.impedance.im > 0.0);
        assert!(sol.warnings.is_empty(), "{:?}", sol.warnings);
        let coarse = ResolvedFoilModel::new(bar_case(4, 0.9, 5e4)).unwrap().solve(4, 4).unwrap();
        assert!(!coarse.warnings.is_empty());
    }

    #[test]
    fn n1_rows_match_between_kinds() {
        let case = bar_case(4, 0.9, 5e4);
        let table = convergence_study(
            &case,
            &[(8, 16)],
            &[BasisVariant::Hat, BasisVariant::Legendre],
            &[1],
            &Reference::Value(1.0),
        )
        .unwrap();
        assert_eq!(table.rows[0].energy, table.rows[1].energy);
        assert_eq!(table.rows[0].n_a, table.rows[1].n_a);
        let mut csv = Vec::new();
        table.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("N_a [-],N_u [-],kind [-],W [J],rel_error [-]\n"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn unknown_variant_is_rejected() {
        assert!(BasisVariant::parse("spline").is_err());
        assert_eq!(BasisVariant::parse("hat-unaligned").unwrap(), BasisVariant::HatUnaligned);
    }
}
