//! Run configurations (TOML) and the commands behind the `foilfem` binary.
//!
//! A configuration describes one field problem and exactly one analysis:
//!
//! ```toml
//! [geometry]
//! symmetry = { kind = "cartesian", depth = 0.5 }
//! nx = 40
//! ny = 80
//! dirichlet = ["left", "right", "bottom", "top"]
//! regions = [{ label = "winding", min = [0.0, 0.0], max = [2e-3, 4e-3] }]
//!
//! [[foil_windings]]
//! name = "1"
//! region = "winding"
//! orientation = "cartesian-x"
//! turns = 100
//! fill_factor = 0.9
//! sigma = 5.7e7
//! basis = { kind = "legendre", n = 4 }
//!
//! [analysis]
//! kind = "frequency"
//! frequency = 5e4
//! drives = { "1" = { current = 1.0 } }
//! ```
//!
//! All quantities are SI (m, S/m, Hz, s, Ω, F, A, V).

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::Deserialize;

use crate::circuit::{ElementKind, Netlist, StrandedWindingSpec};
use crate::error::{Error, Result};
use crate::fem2d::{AssemblyOptions, Material, MaterialMap, MU0};
use crate::foilwinding::{FoilWindingSpec, Orientation, VoltageBasis};
use crate::mesh::{GeometrySpec, RegionRect, Side, Symmetry};
use crate::oracle::{convergence_study, BasisVariant, Reference, ResolvedFoilModel, WindingCase};
use crate::solver::{alpha_samples, AssembledSystem, Drive, FoilDevice, StrandedDevice};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub materials: BTreeMap<String, MaterialConfig>,
    #[serde(default)]
    pub foil_windings: Vec<FoilConfig>,
    #[serde(default)]
    pub stranded_windings: Vec<StrandedConfig>,
    pub analysis: AnalysisConfig,
    pub netlist: Option<Netlist>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default = "default_quadrature")]
    pub quadrature_degree: usize,
}

fn default_quadrature() -> usize {
    AssemblyOptions::default().quadrature_degree
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub symmetry: Symmetry,
    pub regions: Vec<RegionRect>,
    pub background: Option<String>,
    /// Regions removed after meshing; their interface is a natural boundary.
    #[serde(default)]
    pub exterior: Vec<String>,
    #[serde(default)]
    pub boundary_tags: BTreeMap<Side, String>,
    #[serde(default)]
    pub dirichlet: Vec<String>,
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
pub enum Permeability {
    Isotropic(f64),
    Anisotropic([f64; 2]),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    #[serde(default = "unit_permeability")]
    pub mu_r: Permeability,
    #[serde(default)]
    pub sigma: f64,
}

fn unit_permeability() -> Permeability {
    Permeability::Isotropic(1.0)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub kind: String,
    pub n: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoilConfig {
    pub name: String,
    pub region: String,
    pub orientation: Orientation,
    pub turns: usize,
    pub fill_factor: f64,
    pub sigma: f64,
    #[serde(default = "one")]
    pub mu_r_foil: f64,
    #[serde(default = "one")]
    pub mu_r_insulation: f64,
    pub basis: BasisConfig,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrandedConfig {
    pub name: String,
    pub region: String,
    pub turns: usize,
    pub fill_factor: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveConfig {
    pub current: Option<f64>,
    pub voltage: Option<f64>,
    #[serde(default)]
    pub phase_deg: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ReferenceConfig {
    Resolved { nx: usize, ny: usize },
    SelfReference { nx: usize, ny: usize, n: usize },
    Value { energy: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AnalysisConfig {
    Frequency {
        frequency: f64,
        drives: BTreeMap<String, DriveConfig>,
        /// Number of α samples for the pointwise current-constraint check.
        #[serde(default)]
        constraint_samples: usize,
    },
    Transient {
        #[serde(default)]
        t0: f64,
        t_end: f64,
        dt: f64,
    },
    Study {
        frequency: f64,
        #[serde(default = "one")]
        current: f64,
        levels: Vec<[usize; 2]>,
        kinds: Vec<String>,
        counts: Vec<usize>,
        reference: ReferenceConfig,
    },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: Option<PathBuf>,
    /// Write the mesh with the solved potential (`field.txt`).
    #[serde(default)]
    pub field_dump: bool,
}

impl MaterialConfig {
    fn material(&self) -> Material {
        let sigma = self.sigma;
        match self.mu_r {
            Permeability::Isotropic(m) => Material::relative(m, sigma),
            Permeability::Anisotropic([a, b]) => Material::anisotropic([a * MU0, b * MU0], sigma),
        }
    }
}

fn field_err(path: &str, e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{path}: {m}")),
        Error::Geometry(m) => Error::Geometry(format!("{path}: {m}")),
        Error::Material(m) => Error::Material(format!("{path}: {m}")),
        Error::Netlist(m) => Error::Netlist(format!("{path}: {m}")),
        other => other,
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn symmetry(&self) -> Symmetry {
        self.geometry.symmetry
    }

    fn depth(&self) -> f64 {
        match self.geometry.symmetry {
            Symmetry::Cartesian { depth } => depth,
            Symmetry::Axisymmetric => 0.0,
        }
    }

    pub fn geometry_spec(&self) -> GeometrySpec {
        let g = &self.geometry;
        GeometrySpec {
            symmetry: g.symmetry,
            regions: g.regions.clone(),
            background: g.background.clone(),
            boundary_tags: g.boundary_tags.clone(),
            align_x: Vec::new(),
            align_y: Vec::new(),
        }
    }

    pub fn material_map(&self) -> MaterialMap {
        let mut m = MaterialMap::new();
        for (label, mat) in &self.materials {
            m.insert(label.clone(), mat.material());
        }
        m
    }

    pub fn options(&self) -> AssemblyOptions {
        AssemblyOptions {
            quadrature_degree: self.quadrature_degree,
        }
    }

    pub fn foil_spec(&self, k: usize) -> Result<FoilWindingSpec> {
        let f = &self.foil_windings[k];
        let path = format!("foil_windings[{k}]");
        let rect = self
            .geometry
            .regions
            .iter()
            .find(|r| r.label == f.region)
            .ok_or_else(|| Error::Config(format!("{path}.region: no geometry region '{}'", f.region)))?;
        let mut spec = FoilWindingSpec::from_region(rect, f.orientation, f.turns, f.fill_factor, f.sigma, self.depth());
        spec.mu_foil = f.mu_r_foil * MU0;
        spec.mu_insulation = f.mu_r_insulation * MU0;
        spec.validate().map_err(|e| field_err(&path, e))?;
        Ok(spec)
    }

    pub fn foil_basis(&self, k: usize, spec: &FoilWindingSpec) -> Result<VoltageBasis> {
        let b = &self.foil_windings[k].basis;
        let path = format!("foil_windings[{k}].basis");
        let variant = BasisVariant::parse(&b.kind).map_err(|e| field_err(&format!("{path}.kind"), e))?;
        if variant == BasisVariant::HatUnaligned {
            return Err(Error::Config(format!("{path}.kind: 'hat-unaligned' is only available in studies")));
        }
        let kind = if variant == BasisVariant::Legendre {
            crate::foilwinding::BasisKind::Legendre
        } else {
            crate::foilwinding::BasisKind::Hat
        };
        VoltageBasis::new(kind, b.n, spec.alpha).map_err(|e| field_err(&format!("{path}.n"), e))
    }

    fn stranded_spec(&self, k: usize) -> Result<StrandedWindingSpec> {
        let s = &self.stranded_windings[k];
        let spec = StrandedWindingSpec {
            region: s.region.clone(),
            turns: s.turns,
            fill_factor: s.fill_factor,
            sigma: s.sigma,
        };
        spec.validate().map_err(|e| field_err(&format!("stranded_windings[{k}]"), e))?;
        Ok(spec)
    }

    /// Checks that can be made without meshing.
    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        if g.nx == 0 || g.ny == 0 {
            return Err(Error::Config("geometry.nx, geometry.ny: must be at least 1".into()));
        }
        self.geometry_spec().validate().map_err(|e| field_err("geometry", e))?;
        let labels: Vec<&str> = g
            .regions
            .iter()
            .map(|r| r.label.as_str())
            .chain(g.background.as_deref())
            .collect();
        for (k, ext) in g.exterior.iter().enumerate() {
            if !labels.contains(&ext.as_str()) {
                return Err(Error::Config(format!("geometry.exterior[{k}]: unknown region '{ext}'")));
            }
        }
        for (label, m) in &self.materials {
            if !labels.contains(&label.as_str()) {
                return Err(Error::Config(format!("materials.{label}: no such region")));
            }
            m.material().validate(label).map_err(|e| field_err(&format!("materials.{label}"), e))?;
        }
        if self.quadrature_degree == 0 {
            return Err(Error::Config("quadrature_degree: must be at least 1".into()));
        }
        for k in 0..self.foil_windings.len() {
            let spec = self.foil_spec(k)?;
            self.foil_basis(k, &spec)?;
        }
        for k in 0..self.stranded_windings.len() {
            let s = self.stranded_spec(k)?;
            if !labels.contains(&s.region.as_str()) {
                return Err(Error::Config(format!("stranded_windings[{k}].region: no region '{}'", s.region)));
            }
        }
        let names: Vec<&str> = self
            .foil_windings
            .iter()
            .map(|f| f.name.as_str())
            .chain(self.stranded_windings.iter().map(|s| s.name.as_str()))
            .collect();
        match &self.analysis {
            AnalysisConfig::Frequency { frequency, drives, .. } => {
                if !(*frequency >= 0.0) {
                    return Err(Error::Config("analysis.frequency: must be non-negative".into()));
                }
                for name in &names {
                    let d = drives
                        .get(*name)
                        .ok_or_else(|| Error::Config(format!("analysis.drives: no drive for device '{name}'")))?;
                    if d.current.is_some() == d.voltage.is_some() {
                        return Err(Error::Config(format!(
                            "analysis.drives.{name}: give exactly one of current or voltage"
                        )));
                    }
                }
                for name in drives.keys() {
                    if !names.contains(&name.as_str()) {
                        return Err(Error::Config(format!("analysis.drives.{name}: unknown device")));
                    }
                }
            }
            AnalysisConfig::Transient { t0, t_end, dt } => {
                if !(*dt > 0.0) {
                    return Err(Error::Config("analysis.dt: must be positive".into()));
                }
                if !(t_end > t0) {
                    return Err(Error::Config("analysis.t_end: must exceed analysis.t0".into()));
                }
                let net = self
                    .netlist
                    .as_ref()
                    .ok_or_else(|| Error::Config("netlist: a transient analysis needs a netlist".into()))?;
                crate::circuit::Mna::new(net).map_err(|e| field_err("netlist", e))?;
                for e in &net.elements {
                    if let ElementKind::Port { device } = &e.kind {
                        if !names.contains(&device.as_str()) {
                            return Err(Error::Config(format!(
                                "netlist.elements.{}: unknown device '{device}'",
                                e.name
                            )));
                        }
                    }
                }
            }
            AnalysisConfig::Study {
                frequency,
                levels,
                kinds,
                counts,
                ..
            } => {
                if self.foil_windings.len() != 1 || !self.stranded_windings.is_empty() {
                    return Err(Error::Config("analysis: a study needs exactly one foil winding and no other device".into()));
                }
                if !(*frequency >= 0.0) {
                    return Err(Error::Config("analysis.frequency: must be non-negative".into()));
                }
                if levels.is_empty() || kinds.is_empty() || counts.is_empty() {
                    return Err(Error::Config("analysis: levels, kinds and counts must be non-empty".into()));
                }
                for (k, kind) in kinds.iter().enumerate() {
                    BasisVariant::parse(kind).map_err(|e| field_err(&format!("analysis.kinds[{k}]"), e))?;
                }
                if counts.contains(&0) || levels.iter().any(|l| l[0] == 0 || l[1] == 0) {
                    return Err(Error::Config("analysis: counts and levels must be positive".into()));
                }
            }
        }
        Ok(())
    }

    fn dirichlet(&self) -> Vec<&str> {
        self.geometry.dirichlet.iter().map(String::as_str).collect()
    }

    /// Mesh and assemble the configured field problem.
    pub fn assemble(&self) -> Result<AssembledSystem> {
        let mut geometry = self.geometry_spec();
        let mut foils = Vec::new();
        for k in 0..self.foil_windings.len() {
            let spec = self.foil_spec(k)?;
            let basis = self.foil_basis(k, &spec)?;
            if basis.kind == crate::foilwinding::BasisKind::Hat {
                let lines = if spec.orientation.alpha_axis() == 0 {
                    &mut geometry.align_x
                } else {
                    &mut geometry.align_y
                };
                lines.extend(basis.breakpoints());
            }
            foils.push(FoilDevice {
                name: self.foil_windings[k].name.clone(),
                spec,
                basis,
            });
        }
        let stranded = (0..self.stranded_windings.len())
            .map(|k| {
                Ok(StrandedDevice {
                    name: self.stranded_windings[k].name.clone(),
                    spec: self.stranded_spec(k)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut mesh = crate::mesh::generate_structured_mesh(&geometry, self.geometry.nx, self.geometry.ny)?;
        if !self.geometry.exterior.is_empty() {
            let ext = &self.geometry.exterior;
            mesh = mesh.restrict(|l| !ext.iter().any(|e| e == l), "interface")?;
        }
        AssembledSystem::assemble(&mesh, &self.material_map(), &foils, &stranded, &self.dirichlet(), self.options())
    }

    /// Single-winding case used by studies and the oracle command.
    pub fn winding_case(&self, frequency: f64, current: f64) -> Result<WindingCase> {
        if self.foil_windings.len() != 1 {
            return Err(Error::Config("foil_windings: exactly one foil winding is required".into()));
        }
        Ok(WindingCase {
            geometry: self.geometry_spec(),
            materials: self.material_map(),
            winding: self.foil_spec(0)?,
            exterior: self.geometry.exterior.clone(),
            dirichlet: self.geometry.dirichlet.clone(),
            frequency,
            current,
            options: self.options(),
        })
    }

    fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.output.directory.clone())
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

/// Format a number for CSV output (17 significant digits, scientific).
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<fs::File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(fs::File::create(dir.join(name))?))
}

/// Rows of `solution.csv`: (quantity, unit, value).
fn write_solution(dir: &Path, rows: &[(String, &str, Complex64)]) -> Result<PathBuf> {
    let mut out = create(dir, "solution.csv")?;
    writeln!(out, "quantity,unit,real,imag")?;
    for (q, unit, v) in rows {
        writeln!(out, "{q},{unit},{},{}", fmt_num(v.re), fmt_num(v.im))?;
    }
    out.flush()?;
    Ok(dir.join("solution.csv"))
}

fn real(v: f64) -> Complex64 {
    Complex64::new(v, 0.0)
}

/// `run`: frequency or transient analysis; returns the files written.
pub fn run(cfg: &RunConfig, output_dir: Option<&Path>) -> Result<Vec<PathBuf>> {
    let dir = cfg.output_dir(output_dir);
    match &cfg.analysis {
        AnalysisConfig::Frequency {
            frequency,
            drives,
            constraint_samples,
        } => {
            let system = cfg.assemble()?;
            let drive_list: Vec<Drive> = system
                .device_names()
                .iter()
                .map(|name| {
                    let d = drives[*name];
                    let phase = Complex64::from_polar(1.0, d.phase_deg.to_radians());
                    match (d.current, d.voltage) {
                        (Some(i), _) => Drive::Current(phase * i),
                        (_, Some(v)) => Drive::Voltage(phase * v),
                        _ => unreachable!("validated"),
                    }
                })
                .collect();
            let omega = 2.0 * std::f64::consts::PI * frequency;
            let state = system.solve_frequency(omega, &drive_list)?;
            let mut rows: Vec<(String, &str, Complex64)> = vec![
                ("f".into(), "Hz", real(*frequency)),
                ("N_a".into(), "-", real(system.num_field_dofs() as f64)),
                ("N_u".into(), "-", real(system.num_voltage_dofs() as f64)),
                ("W".into(), "J", real(system.phasor_energy(&state.a)?)),
            ];
            for d in &state.devices {
                rows.push((format!("V_{}", d.name), "V", d.v));
                rows.push((format!("I_{}", d.name), "A", d.i));
                rows.push((format!("Z_{}", d.name), "Ohm", d.v / d.i));
            }
            for f in &system.foils {
                rows.push((
                    format!("galerkin_residual_{}", f.name),
                    "-",
                    real(system.constraint_galerkin_residual(&state, &f.name)?),
                ));
                if *constraint_samples > 0 {
                    let samples = alpha_samples(&f.block.spec, *constraint_samples);
                    let r = system.check_current_constraint(&state, &f.name, &samples)?;
                    rows.push((format!("constraint_residual_{}", f.name), "-", real(r)));
                }
            }
            let mut files = vec![write_solution(&dir, &rows)?];
            if cfg.output.field_dump {
                let mut out = create(&dir, "field.txt")?;
                let re: Vec<f64> = state.a.iter().map(|z| z.re).collect();
                let im: Vec<f64> = state.a.iter().map(|z| z.im).collect();
                system
                    .mesh
                    .write_text_with_values(&mut out, &[("a_re", re.as_slice()), ("a_im", im.as_slice())])?;
                out.flush()?;
                files.push(dir.join("field.txt"));
            }
            Ok(files)
        }
        AnalysisConfig::Transient { t0, t_end, dt } => {
            let system = cfg.assemble()?;
            let netlist = cfg.netlist.as_ref().expect("validated");
            let run = system.solve_transient(netlist, *t0, *t_end, *dt, None)?;
            let mut files = Vec::new();

            let elements = &run.mna.netlist.elements;
            let of_kind = |pred: fn(&ElementKind) -> bool| -> Vec<usize> {
                (0..elements.len()).filter(|&k| pred(&elements[k].kind)).collect()
            };
            let sources = of_kind(|k| matches!(k, ElementKind::VoltageSource { .. }));
            let ports = of_kind(|k| matches!(k, ElementKind::Port { .. }));
            let passive = of_kind(|k| matches!(k, ElementKind::Resistor { .. } | ElementKind::Capacitor { .. }));
            let label = |k: usize| match &elements[k].kind {
                ElementKind::Port { device } => device.clone(),
                _ => elements[k].name.clone(),
            };
            // Source and device quantities come first, followed by the
            // post-processed branch quantities of the remaining elements.
            let mut columns: Vec<(usize, bool)> = Vec::new();
            columns.extend(sources.iter().map(|&k| (k, true)));
            columns.extend(ports.iter().map(|&k| (k, true)));
            columns.extend(ports.iter().map(|&k| (k, false)));
            columns.extend(sources.iter().map(|&k| (k, false)));
            for &k in &passive {
                columns.extend([(k, true), (k, false)]);
            }
            let mut out = create(&dir, "timeseries.csv")?;
            let mut header = vec!["t [s]".to_string()];
            for &(k, voltage) in &columns {
                header.push(if voltage {
                    format!("V_{} [V]", label(k))
                } else {
                    format!("I_{} [A]", label(k))
                });
            }
            header.push("W [J]".into());
            writeln!(out, "{}", header.join(","))?;
            for (s, state) in run.states.iter().enumerate() {
                let q = run.element_quantities(s);
                let mut line = vec![fmt_num(state.time.unwrap_or(0.0))];
                for &(k, voltage) in &columns {
                    line.push(fmt_num(if voltage { q[k].1 } else { q[k].2 }));
                }
                line.push(fmt_num(system.instantaneous_energy(&state.a)?));
                writeln!(out, "{}", line.join(","))?;
            }
            out.flush()?;
            files.push(dir.join("timeseries.csv"));

            let mut out = create(&dir, "energy_balance.csv")?;
            writeln!(
                out,
                "t [s],source [J],resistive [J],eddy [J],field_change [J],capacitor_change [J],defect [J]"
            )?;
            for (e, s) in run.energy.iter().zip(run.states.iter().skip(1)) {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    fmt_num(s.time.unwrap_or(0.0)),
                    fmt_num(e.source),
                    fmt_num(e.resistive),
                    fmt_num(e.eddy),
                    fmt_num(e.field_change),
                    fmt_num(e.capacitor_change),
                    fmt_num(e.defect)
                )?;
            }
            out.flush()?;
            files.push(dir.join("energy_balance.csv"));

            let (kcl, kvl) = run.kirchhoff_residuals()?;
            let rows = vec![
                ("steps".to_string(), "-", real(run.energy.len() as f64)),
                ("dt".to_string(), "s", real(run.dt)),
                ("kcl_residual".to_string(), "A", real(kcl)),
                ("kvl_residual".to_string(), "V", real(kvl)),
                ("energy_defect".to_string(), "J", real(run.energy.iter().map(|e| e.defect).sum())),
            ];
            files.push(write_solution(&dir, &rows)?);
            Ok(files)
        }
        AnalysisConfig::Study { .. } => study(cfg, output_dir),
    }
}

/// `study`: convergence table against the configured reference.
pub fn study(cfg: &RunConfig, output_dir: Option<&Path>) -> Result<Vec<PathBuf>> {
    let AnalysisConfig::Study {
        frequency,
        current,
        levels,
        kinds,
        counts,
        reference,
    } = &cfg.analysis
    else {
        return Err(Error::Config("analysis.kind: the study command needs kind = \"study\"".into()));
    };
    let case = cfg.winding_case(*frequency, *current)?;
    let variants = kinds.iter().map(|k| BasisVariant::parse(k)).collect::<Result<Vec<_>>>()?;
    let levels: Vec<(usize, usize)> = levels.iter().map(|l| (l[0], l[1])).collect();
    let reference = match *reference {
        ReferenceConfig::Resolved { nx, ny } => Reference::Resolved { nx, ny },
        ReferenceConfig::SelfReference { nx, ny, n } => Reference::SelfReference { nx, ny, n },
        ReferenceConfig::Value { energy } => Reference::Value(energy),
    };
    let table = convergence_study(&case, &levels, &variants, counts, &reference)?;
    let dir = cfg.output_dir(output_dir);
    let mut out = create(&dir, "convergence.csv")?;
    table.write_csv(&mut out)?;
    out.flush()?;
    Ok(vec![dir.join("convergence.csv")])
}

/// `oracle`: resolved-foil solve of the configured single-winding case.
pub fn oracle(cfg: &RunConfig, output_dir: Option<&Path>) -> Result<Vec<PathBuf>> {
    let (frequency, current, nx, ny) = match &cfg.analysis {
        AnalysisConfig::Study {
            frequency,
            current,
            reference: ReferenceConfig::Resolved { nx, ny },
            ..
        } => (*frequency, *current, *nx, *ny),
        AnalysisConfig::Study { frequency, current, .. } => (*frequency, *current, cfg.geometry.nx, cfg.geometry.ny),
        AnalysisConfig::Frequency { frequency, drives, .. } => {
            let name = &cfg.foil_windings.first().ok_or_else(|| Error::Config("foil_windings: none given".into()))?.name;
            let i = drives[name]
                .current
                .ok_or_else(|| Error::Config(format!("analysis.drives.{name}: the oracle needs a current drive")))?;
            (*frequency, i, cfg.geometry.nx, cfg.geometry.ny)
        }
        AnalysisConfig::Transient { .. } => {
            return Err(Error::Config("analysis.kind: the oracle command needs a frequency or study analysis".into()))
        }
    };
    let model = ResolvedFoilModel::new(cfg.winding_case(frequency, current)?)?;
    let sol = model.solve(nx, ny)?;
    for w in &sol.warnings {
        eprintln!("warning: {w}");
    }
    let rows = vec![
        ("f".to_string(), "Hz", real(frequency)),
        ("N_a".to_string(), "-", real(sol.num_field_dofs as f64)),
        ("turns".to_string(), "-", real(sol.turn_voltages.len() as f64)),
        ("W_ref".to_string(), "J", real(sol.energy)),
        ("V".to_string(), "V", sol.voltage),
        ("I".to_string(), "A", sol.current),
        ("Z_ref".to_string(), "Ohm", sol.impedance),
    ];
    let dir = cfg.output_dir(output_dir);
    let mut out = create(&dir, "oracle.csv")?;
    writeln!(out, "quantity,unit,real,imag")?;
    for (q, unit, v) in rows {
        writeln!(out, "{q},{unit},{},{}", fmt_num(v.re), fmt_num(v.im))?;
    }
    out.flush()?;
    Ok(vec![dir.join("oracle.csv")])
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
[geometry]
symmetry = { kind = "cartesian", depth = 0.5 }
nx = 6
ny = 12
dirichlet = ["left", "right", "bottom", "top"]
regions = [{ label = "winding", min = [0.0, 0.0], max = [2e-3, 4e-3] }]

[[foil_windings]]
name = "1"
region = "winding"
orientation = "cartesian-x"
turns = 100
fill_factor = 0.9
sigma = 5.7e7
basis = { kind = "legendre", n = 3 }

[analysis]
kind = "frequency"
frequency = 5e4
drives = { "1" = { current = 1.0 } }
constraint_samples = 4
"#;

    #[test]
    fn parses_and_runs() {
        let cfg = RunConfig::from_toml(SMALL).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = run(&cfg, Some(dir.path())).unwrap();
        let text = fs::read_to_string(&files[0]).unwrap();
        assert!(text.starts_with("quantity,unit,real,imag\n"));
        assert!(text.contains("\nZ_1,Ohm,"));
    }

    #[test]
    fn negative_fill_factor_names_field() {
        let bad = SMALL.replace("fill_factor = 0.9", "fill_factor = -0.9");
        let err = RunConfig::from_toml(&bad).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let msg = err.to_string();
        assert!(msg.contains("foil_windings[0]") && msg.contains("fill_factor"), "{msg}");
    }

    #[test]
    fn syntax_errors_report_location() {
        let err = RunConfig::from_toml("[geometry\nnx = 1").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_drive_device() {
        let bad = SMALL.replace(r#"drives = { "1" = { current = 1.0 } }"#, r#"drives = { "2" = { current = 1.0 } }"#);
        assert!(RunConfig::from_toml(&bad).is_err());
    }
}
