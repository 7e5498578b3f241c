//! Coupled field, winding and circuit solves.
//!
//! Field unknowns are the free nodal potentials; each foil winding adds its
//! voltage-function coefficients `u`, and each device (foil or stranded
//! winding) carries a terminal current `i`. Device currents flow into the
//! positive terminal, so `Re(v·conj(i))` is the power absorbed by the device.

use num_complex::Complex64;

use crate::circuit::{ElementKind, Mna, Netlist, StrandedCoupling, StrandedWindingSpec, stranded_coupling};
use crate::error::{Error, Result};
use crate::fem2d::{
    assemble_mass, assemble_stiffness, magnetic_energy, magnetic_energy_complex, AssemblyOptions, DofMap,
    EnergyMode, Material, MaterialMap, MU0,
};
use crate::foilwinding::{mixing_rules, FoilBlock, FoilWindingSpec, VoltageBasis};
use crate::linsolve::{Factorization, LinearSystem};
use crate::mesh::{Mesh, Symmetry};
use crate::quadrature::gauss_legendre;
use crate::sparse::SparseSystemMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct FoilDevice {
    pub name: String,
    pub spec: FoilWindingSpec,
    pub basis: VoltageBasis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrandedDevice {
    pub name: String,
    pub spec: StrandedWindingSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoilEntry {
    pub name: String,
    pub block: FoilBlock,
    /// Coupling rows restricted to the free field unknowns.
    coupling_free: SparseSystemMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrandedEntry {
    pub name: String,
    pub spec: StrandedWindingSpec,
    pub coupling: StrandedCoupling,
    coupling_free: Vec<f64>,
}

/// Every matrix of one field problem, ready for frequency or time stepping.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledSystem {
    pub mesh: Mesh,
    pub materials: MaterialMap,
    pub stiffness: SparseSystemMatrix,
    pub mass: SparseSystemMatrix,
    /// Load vector of imposed source currents (zero unless set).
    pub source: Vec<f64>,
    pub dofs: DofMap,
    pub foils: Vec<FoilEntry>,
    pub stranded: Vec<StrandedEntry>,
    stiffness_free: SparseSystemMatrix,
    mass_free: SparseSystemMatrix,
}

fn restrict_square(m: &SparseSystemMatrix, dofs: &DofMap) -> SparseSystemMatrix {
    let t = m
        .iter()
        .filter_map(|(i, j, v)| Some((dofs.free(i)?, dofs.free(j)?, v)))
        .collect();
    SparseSystemMatrix::from_triplets(dofs.num_free(), dofs.num_free(), t, m.symmetric_flag())
}

fn restrict_rows(m: &SparseSystemMatrix, dofs: &DofMap) -> SparseSystemMatrix {
    let t = m.iter().filter_map(|(i, j, v)| Some((dofs.free(i)?, j, v))).collect();
    SparseSystemMatrix::from_triplets(dofs.num_free(), m.ncols(), t, false)
}

impl AssembledSystem {
    /// Assemble the field problem.
    ///
    /// Foil regions receive their homogenized material; stranded regions are
    /// made non-conducting (their current is imposed). Nodes on edges tagged
    /// with any of `dirichlet` are held at zero potential.
    pub fn assemble(
        mesh: &Mesh,
        materials: &MaterialMap,
        foils: &[FoilDevice],
        stranded: &[StrandedDevice],
        dirichlet: &[&str],
        options: AssemblyOptions,
    ) -> Result<Self> {
        let mut names: Vec<&str> = foils.iter().map(|f| f.name.as_str()).collect();
        names.extend(stranded.iter().map(|s| s.name.as_str()));
        let mut sorted = names.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("device name '{}' used twice", w[0])));
        }

        let mut effective = materials.clone();
        for f in foils {
            effective.insert(f.spec.region.clone(), mixing_rules(&f.spec)?.to_material(f.spec.orientation));
        }
        for s in stranded {
            let mut m = materials.get(&s.spec.region).copied().unwrap_or(Material::isotropic(MU0, 0.0));
            m.sigma = 0.0;
            effective.insert(s.spec.region.clone(), m);
        }
        let stiffness = assemble_stiffness(mesh, &effective, options)?;
        let mass = assemble_mass(mesh, &effective, options)?;
        let dofs = DofMap::from_tags(mesh, dirichlet, 0.0)?;

        let foils = foils
            .iter()
            .map(|f| {
                let block = FoilBlock::assemble(mesh, &f.spec, &f.basis, options)?;
                let coupling_free = restrict_rows(&block.coupling, &dofs);
                Ok(FoilEntry {
                    name: f.name.clone(),
                    block,
                    coupling_free,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let stranded = stranded
            .iter()
            .map(|s| {
                let coupling = stranded_coupling(mesh, &s.spec, options)?;
                let coupling_free = dofs.restrict(&coupling.coupling);
                Ok(StrandedEntry {
                    name: s.name.clone(),
                    spec: s.spec.clone(),
                    coupling,
                    coupling_free,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(AssembledSystem {
            mesh: mesh.clone(),
            materials: effective,
            stiffness_free: restrict_square(&stiffness, &dofs),
            mass_free: restrict_square(&mass, &dofs),
            stiffness,
            mass,
            source: vec![0.0; mesh.num_nodes()],
            dofs,
            foils,
            stranded,
        })
    }

    /// Replace the imposed source load vector (full nodal length).
    pub fn with_source(mut self, source: Vec<f64>) -> Result<Self> {
        if source.len() != self.mesh.num_nodes() {
            return Err(Error::Dimension {
                expected: self.mesh.num_nodes(),
                got: source.len(),
            });
        }
        self.source = source;
        Ok(self)
    }

    pub fn num_field_dofs(&self) -> usize {
        self.dofs.num_free()
    }

    pub fn num_voltage_dofs(&self) -> usize {
        self.foils.iter().map(|f| f.block.basis.len()).sum()
    }

    pub fn num_devices(&self) -> usize {
        self.foils.len() + self.stranded.len()
    }

    /// Device names: foils first, then stranded windings.
    pub fn device_names(&self) -> Vec<&str> {
        self.foils
            .iter()
            .map(|f| f.name.as_str())
            .chain(self.stranded.iter().map(|s| s.name.as_str()))
            .collect()
    }

    pub fn device_index(&self, name: &str) -> Option<usize> {
        self.device_names().iter().position(|n| *n == name)
    }

    fn u_offsets(&self, base: usize) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.foils.len());
        let mut k = base;
        for f in &self.foils {
            off.push(k);
            k += f.block.basis.len();
        }
        off
    }

    fn nullspace_check(&self, has_mass: bool) -> Result<()> {
        if self.dofs.num_fixed() == 0 && !has_mass {
            return Err(Error::Solver(
                "singular system: the constant potential lies in the nullspace (no Dirichlet boundary and no conducting region to fix the gauge)"
                    .into(),
            ));
        }
        Ok(())
    }

    fn source_free(&self) -> Vec<f64> {
        self.dofs.restrict(&self.source)
    }

    /// Time-average magnetic energy of a phasor state (J).
    pub fn phasor_energy(&self, a: &[Complex64]) -> Result<f64> {
        magnetic_energy_complex(&self.stiffness, a, EnergyMode::PhasorTimeAverage)
    }

    pub fn instantaneous_energy(&self, a: &[f64]) -> Result<f64> {
        magnetic_energy(&self.stiffness, a)
    }
}

/// Terminal condition of one device in a frequency-domain solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Drive {
    Current(Complex64),
    Voltage(Complex64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceState<T> {
    pub name: String,
    /// Voltage-function coefficients (empty for stranded windings).
    pub u: Vec<T>,
    pub i: T,
    pub v: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionState<T> {
    /// Nodal potentials on the full mesh (Dirichlet nodes included).
    pub a: Vec<T>,
    pub devices: Vec<DeviceState<T>>,
    /// Circuit unknowns (node voltages, then branch currents); empty without a netlist.
    pub circuit: Vec<T>,
    pub time: Option<f64>,
    pub frequency: Option<f64>,
}

impl<T: Copy> SolutionState<T> {
    pub fn device(&self, name: &str) -> Option<&DeviceState<T>> {
        self.devices.iter().find(|d| d.name == name)
    }
}

impl SolutionState<Complex64> {
    pub fn impedance(&self, device: &str) -> Option<Complex64> {
        self.device(device).map(|d| d.v / d.i)
    }
}

/// Layout of the frequency-domain unknown vector.
struct FrequencyLayout {
    u: Vec<usize>,
    current: Vec<Option<usize>>,
    size: usize,
}

impl AssembledSystem {
    fn frequency_layout(&self, drives: &[Drive]) -> FrequencyLayout {
        let nf = self.num_field_dofs();
        let u = self.u_offsets(nf);
        let mut size = nf + self.num_voltage_dofs();
        let current = drives
            .iter()
            .map(|d| match d {
                Drive::Voltage(_) => {
                    size += 1;
                    Some(size - 1)
                }
                Drive::Current(_) => None,
            })
            .collect();
        FrequencyLayout { u, current, size }
    }

    /// Frequency-domain block system for the given drive modes.
    ///
    /// For `ω > 0` the winding rows are scaled by `1/(jω)` and the port rows
    /// by `-1/(jω)`, which makes the matrix complex symmetric.
    pub fn frequency_system(&self, omega: f64, drives: &[Drive]) -> Result<LinearSystem<Complex64>> {
        if drives.len() != self.num_devices() {
            return Err(Error::Dimension {
                expected: self.num_devices(),
                got: drives.len(),
            });
        }
        if !(omega >= 0.0) || !omega.is_finite() {
            return Err(Error::Config(format!("angular frequency must be non-negative, got {omega}")));
        }
        self.nullspace_check(omega > 0.0 && self.mass_free.max_abs() > 0.0)?;
        let layout = self.frequency_layout(drives);
        let jw = Complex64::new(0.0, omega);
        let (fs, ps) = if omega > 0.0 {
            (1.0 / jw, -1.0 / jw)
        } else {
            (Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0))
        };
        let mut sys = LinearSystem::<Complex64>::new(layout.size).with_core(self.num_field_dofs());
        let c = |x: f64| Complex64::new(x, 0.0);

        for (i, j, v) in self.stiffness_free.iter() {
            sys.add(i, j, c(v));
        }
        for (i, j, v) in self.mass_free.iter() {
            sys.add(i, j, jw * v);
        }
        for (r, v) in self.source_free().into_iter().enumerate() {
            sys.add_rhs(r, c(v));
        }
        for (f, entry) in self.foils.iter().enumerate() {
            let off = layout.u[f];
            let block = &entry.block;
            for (r, j, x) in entry.coupling_free.iter() {
                sys.add(r, off + j, c(-x));
                sys.add(off + j, r, -jw * fs * x);
            }
            for (i, j, g) in block.conductance.iter() {
                sys.add(off + i, off + j, fs * g);
            }
            match (drives[f], layout.current[f]) {
                (Drive::Voltage(v), Some(ic)) => {
                    for (k, &ck) in block.cvec.iter().enumerate() {
                        sys.add(off + k, ic, -fs * ck);
                        sys.add(ic, off + k, ps * ck);
                    }
                    sys.add_rhs(ic, ps * v);
                }
                (Drive::Current(i), _) => {
                    for (k, &ck) in block.cvec.iter().enumerate() {
                        sys.add_rhs(off + k, fs * ck * i);
                    }
                }
                _ => unreachable!(),
            }
        }
        for (s, entry) in self.stranded.iter().enumerate() {
            let d = self.foils.len() + s;
            let p = &entry.coupling_free;
            match (drives[d], layout.current[d]) {
                (Drive::Voltage(v), Some(ic)) => {
                    for (r, &pr) in p.iter().enumerate() {
                        sys.add(r, ic, c(-pr));
                        sys.add(ic, r, ps * jw * pr);
                    }
                    sys.add(ic, ic, ps * entry.coupling.resistance);
                    sys.add_rhs(ic, ps * v);
                }
                (Drive::Current(i), _) => {
                    for (r, &pr) in p.iter().enumerate() {
                        sys.add_rhs(r, pr * i);
                    }
                }
                _ => unreachable!(),
            }
        }
        Ok(sys)
    }

    fn frequency_state(&self, omega: f64, drives: &[Drive], x: &[Complex64]) -> SolutionState<Complex64> {
        let layout = self.frequency_layout(drives);
        let nf = self.num_field_dofs();
        let a = self.dofs.expand(&x[..nf]);
        let jw = Complex64::new(0.0, omega);
        let mut devices = Vec::with_capacity(self.num_devices());
        for (f, entry) in self.foils.iter().enumerate() {
            let off = layout.u[f];
            let u = x[off..off + entry.block.basis.len()].to_vec();
            let v_from_u: Complex64 = entry.block.cvec.iter().zip(&u).map(|(c, u)| *u * *c).sum();
            let (i, v) = match (drives[f], layout.current[f]) {
                (Drive::Voltage(v), Some(ic)) => (x[ic], v),
                (Drive::Current(i), _) => (i, v_from_u),
                _ => unreachable!(),
            };
            devices.push(DeviceState {
                name: entry.name.clone(),
                u,
                i,
                v,
            });
        }
        for (s, entry) in self.stranded.iter().enumerate() {
            let d = self.foils.len() + s;
            let (i, v) = match (drives[d], layout.current[d]) {
                (Drive::Voltage(v), Some(ic)) => (x[ic], v),
                (Drive::Current(i), _) => {
                    let flux: Complex64 = entry.coupling_free.iter().zip(&x[..nf]).map(|(p, a)| *a * *p).sum();
                    (i, i * entry.coupling.resistance + jw * flux)
                }
                _ => unreachable!(),
            };
            devices.push(DeviceState {
                name: entry.name.clone(),
                u: Vec::new(),
                i,
                v,
            });
        }
        SolutionState {
            a,
            devices,
            circuit: Vec::new(),
            time: None,
            frequency: Some(omega / (2.0 * std::f64::consts::PI)),
        }
    }

    /// Time-harmonic solve at angular frequency `omega` with one drive per device.
    pub fn solve_frequency(&self, omega: f64, drives: &[Drive]) -> Result<SolutionState<Complex64>> {
        let sys = self.frequency_system(omega, drives)?;
        let x = sys.solve().map_err(|e| match e {
            Error::Solver(m) if omega == 0.0 => Error::Solver(format!(
                "{m}; at zero frequency the field block needs a Dirichlet boundary to remove the constant nullspace"
            )),
            other => other,
        })?;
        Ok(self.frequency_state(omega, drives, &x))
    }

    /// Open-circuit impedance matrix `Z_kl = v_k / i_l` over all devices.
    pub fn impedance_matrix(&self, omega: f64) -> Result<Vec<Vec<Complex64>>> {
        let n = self.num_devices();
        let zero = Complex64::new(0.0, 0.0);
        let base = vec![Drive::Current(zero); n];
        let fact = self.frequency_system(omega, &base)?.factorize()?;
        let mut z = vec![vec![zero; n]; n];
        for l in 0..n {
            let mut drives = base.clone();
            drives[l] = Drive::Current(Complex64::new(1.0, 0.0));
            let rhs = self.frequency_system(omega, &drives)?.rhs;
            let x = fact.solve(&rhs)?;
            let state = self.frequency_state(omega, &drives, &x);
            for k in 0..n {
                z[k][l] = state.devices[k].v;
            }
        }
        Ok(z)
    }

    /// Galerkin residual `max_k |(G u − jω Xᵀ a − c i)_k| / |c·i|` of a foil's constraint rows.
    pub fn constraint_galerkin_residual(&self, state: &SolutionState<Complex64>, foil: &str) -> Result<f64> {
        let (f, entry) = self.foil_entry(foil)?;
        let omega = 2.0 * std::f64::consts::PI * state.frequency.unwrap_or(0.0);
        let d = &state.devices[f];
        let b = &entry.block;
        let gu = mul_real(&b.conductance, &d.u);
        let xa = mul_real(&b.coupling.transpose(), &state.a);
        let jw = Complex64::new(0.0, omega);
        let scale = b.cvec.iter().map(|c| (c * d.i).norm()).fold(0.0, f64::max);
        let worst = (0..b.basis.len())
            .map(|k| (gu[k] - jw * xa[k] - b.cvec[k] * d.i).norm())
            .fold(0.0, f64::max);
        Ok(if scale > 0.0 { worst / scale } else { worst })
    }

    fn foil_entry(&self, name: &str) -> Result<(usize, &FoilEntry)> {
        self.foils
            .iter()
            .enumerate()
            .find(|(_, f)| f.name == name)
            .ok_or_else(|| Error::Config(format!("no foil winding named '{name}'")))
    }

    /// Pointwise current constraint on surfaces of constant α.
    ///
    /// For each sample α the current per unit α through Γ(α) is integrated
    /// along the β line and compared with `i/b`. Returns the largest relative
    /// deviation, or the absolute one if `i = 0`.
    pub fn check_current_constraint(
        &self,
        state: &SolutionState<Complex64>,
        foil: &str,
        samples: &[f64],
    ) -> Result<f64> {
        let (f, entry) = self.foil_entry(foil)?;
        let spec = &entry.block.spec;
        let basis = &entry.block.basis;
        let d = &state.devices[f];
        let omega = 2.0 * std::f64::consts::PI * state.frequency.unwrap_or(0.0);
        let jw = Complex64::new(0.0, omega);
        let sigma = mixing_rules(spec)?.sigma;
        let grid = self
            .mesh
            .grid()
            .ok_or_else(|| Error::Geometry("constraint check needs a structured mesh".into()))?;
        let (gx, gw) = gauss_legendre(6);
        let ax = spec.orientation.alpha_axis();
        let bx = spec.orientation.beta_axis();
        let target = d.i / spec.foil_width();
        let mut worst = 0.0f64;
        for &alpha in samples {
            if alpha < spec.alpha[0] || alpha > spec.alpha[1] {
                return Err(Error::Domain(format!(
                    "sample α = {alpha} outside [{}, {}]",
                    spec.alpha[0], spec.alpha[1]
                )));
            }
            let u: Complex64 = (0..basis.len()).map(|j| d.u[j] * basis.eval_unchecked(j, alpha)).sum();
            let mut cuts = segment_cuts(grid.xs.as_slice(), grid.ys.as_slice(), ax, alpha, spec.beta);
            cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            cuts.dedup_by(|b, a| (*b - *a).abs() < 1e-14 * (spec.beta[1] - spec.beta[0]));
            let mut integral = Complex64::new(0.0, 0.0);
            for seg in cuts.windows(2) {
                let (lo, hi) = (seg[0], seg[1]);
                for (x, w) in gx.iter().zip(&gw) {
                    let beta = lo + 0.5 * (x + 1.0) * (hi - lo);
                    let mut p = [0.0; 2];
                    p[ax] = alpha;
                    p[bx] = beta;
                    let (t, l) = self
                        .mesh
                        .locate(p)
                        .ok_or_else(|| Error::Domain(format!("point {p:?} outside the mesh")))?;
                    let nodes = self.mesh.triangles[t].nodes;
                    let a: Complex64 = (0..3).map(|k| state.a[nodes[k]] * l[k]).sum();
                    let value = match self.mesh.symmetry {
                        Symmetry::Cartesian { depth } => -jw * a + u / depth,
                        Symmetry::Axisymmetric => {
                            let r = p[0];
                            -jw * a / r + u / (2.0 * std::f64::consts::PI * r)
                        }
                    };
                    integral += value * (sigma * 0.5 * (hi - lo) * w);
                }
            }
            let dev = (integral - target).norm();
            worst = worst.max(if target.norm() > 0.0 { dev / target.norm() } else { dev });
        }
        Ok(worst)
    }
}

/// Breakpoints of the line `coord[ax] = alpha`, `coord[1-ax] ∈ beta`, at grid
/// lines and at the cell diagonals of the structured triangulation.
fn segment_cuts(xs: &[f64], ys: &[f64], ax: usize, alpha: f64, beta: [f64; 2]) -> Vec<f64> {
    let (along, across) = if ax == 0 { (ys, xs) } else { (xs, ys) };
    let mut cuts = vec![beta[0], beta[1]];
    cuts.extend(along.iter().copied().filter(|&v| v > beta[0] && v < beta[1]));
    let k = across.partition_point(|&v| v <= alpha).saturating_sub(1).min(across.len() - 2);
    let s = (alpha - across[k]) / (across[k + 1] - across[k]);
    for w in along.windows(2) {
        let c = w[0] + s * (w[1] - w[0]);
        if c > beta[0] && c < beta[1] {
            cuts.push(c);
        }
    }
    cuts
}

fn mul_real(m: &SparseSystemMatrix, x: &[Complex64]) -> Vec<Complex64> {
    let mut y = vec![Complex64::new(0.0, 0.0); m.nrows()];
    for (i, j, v) in m.iter() {
        y[i] += x[j] * v;
    }
    y
}

/// Energy bookkeeping of one backward-Euler step (J).
///
/// `defect = source − resistive − eddy − field_change − capacitor_change`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepEnergy {
    pub source: f64,
    pub resistive: f64,
    pub eddy: f64,
    pub field_change: f64,
    pub capacitor_change: f64,
    pub defect: f64,
}

#[derive(Debug, Clone)]
pub struct TransientRun {
    pub mna: Mna,
    pub dt: f64,
    /// States at `t0, t0 + dt, …`; the first entry is the initial state.
    pub states: Vec<SolutionState<f64>>,
    /// Energy balance of each step (`energy[k]` covers `states[k] → states[k+1]`).
    pub energy: Vec<StepEnergy>,
}

struct TransientLayout {
    u: Vec<usize>,
    circuit: usize,
    /// Branch unknown of the port of each device.
    port: Vec<usize>,
    size: usize,
}

impl AssembledSystem {
    fn transient_layout(&self, mna: &Mna) -> Result<TransientLayout> {
        let nf = self.num_field_dofs();
        let u = self.u_offsets(nf);
        let circuit = nf + self.num_voltage_dofs();
        let port = self
            .device_names()
            .iter()
            .map(|name| {
                mna.port(name)
                    .map(|(_, b)| circuit + b)
                    .ok_or_else(|| Error::Netlist(format!("device '{name}' has no port in the netlist")))
            })
            .collect::<Result<Vec<_>>>()?;
        for (name, _) in mna.ports() {
            if self.device_index(name).is_none() {
                return Err(Error::Netlist(format!("port refers to unknown device '{name}'")));
            }
        }
        Ok(TransientLayout {
            u,
            circuit,
            port,
            size: circuit + mna.size(),
        })
    }

    /// Backward-Euler matrix (`dt = Some`) or operating-point matrix (`None`).
    fn transient_matrix(&self, mna: &Mna, layout: &TransientLayout, dt: Option<f64>) -> LinearSystem<f64> {
        let ih = dt.map_or(0.0, |h| 1.0 / h);
        let mut sys = LinearSystem::<f64>::new(layout.size).with_core(self.num_field_dofs());
        for (i, j, v) in self.stiffness_free.iter() {
            sys.add(i, j, v);
        }
        if ih > 0.0 {
            for (i, j, v) in self.mass_free.iter() {
                sys.add(i, j, v * ih);
            }
        }
        for (f, entry) in self.foils.iter().enumerate() {
            let off = layout.u[f];
            let b = &entry.block;
            for (r, j, x) in entry.coupling_free.iter() {
                sys.add(r, off + j, -x);
                sys.add(off + j, r, -x * ih);
            }
            for (i, j, g) in b.conductance.iter() {
                sys.add(off + i, off + j, g);
            }
            let port = layout.port[f];
            for (k, &ck) in b.cvec.iter().enumerate() {
                sys.add(off + k, port, -ck);
                sys.add(port, off + k, -ck);
            }
        }
        for (s, entry) in self.stranded.iter().enumerate() {
            let port = layout.port[self.foils.len() + s];
            for (r, &p) in entry.coupling_free.iter().enumerate() {
                sys.add(r, port, -p);
                sys.add(port, r, -p * ih);
            }
            sys.add(port, port, -entry.coupling.resistance);
        }
        let base = layout.circuit;
        mna.stamp(dt, |i, j, v| sys.add(base + i, base + j, v));
        sys
    }

    fn transient_rhs(
        &self,
        mna: &Mna,
        layout: &TransientLayout,
        t: f64,
        dt: Option<f64>,
        previous: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        let mut rhs = vec![0.0; layout.size];
        let nf = self.num_field_dofs();
        for (r, v) in self.source_free().into_iter().enumerate() {
            rhs[r] += v;
        }
        let base = layout.circuit;
        let prev_circuit = previous.map(|p| &p[base..]);
        if let (Some(h), Some(prev)) = (dt, previous) {
            let a_prev = &prev[..nf];
            let ma = self.mass_free.mul_vec(a_prev);
            for (r, v) in ma.into_iter().enumerate() {
                rhs[r] += v / h;
            }
            for (f, entry) in self.foils.iter().enumerate() {
                let xa = entry.coupling_free.mul_vec_transposed(a_prev);
                for (k, v) in xa.into_iter().enumerate() {
                    rhs[layout.u[f] + k] -= v / h;
                }
            }
            for (s, entry) in self.stranded.iter().enumerate() {
                let flux: f64 = entry.coupling_free.iter().zip(a_prev).map(|(p, a)| p * a).sum();
                rhs[layout.port[self.foils.len() + s]] -= flux / h;
            }
        }
        let circuit_rhs = mna.rhs(t, dt, prev_circuit)?;
        for (k, v) in circuit_rhs.into_iter().enumerate() {
            rhs[base + k] += v;
        }
        Ok(rhs)
    }

    fn transient_state(
        &self,
        layout: &TransientLayout,
        x: &[f64],
        previous: Option<&[f64]>,
        dt: Option<f64>,
        t: f64,
    ) -> SolutionState<f64> {
        let nf = self.num_field_dofs();
        let mut devices = Vec::with_capacity(self.num_devices());
        for (f, entry) in self.foils.iter().enumerate() {
            let off = layout.u[f];
            let u = x[off..off + entry.block.basis.len()].to_vec();
            let v = entry.block.cvec.iter().zip(&u).map(|(c, u)| c * u).sum();
            devices.push(DeviceState {
                name: entry.name.clone(),
                u,
                i: x[layout.port[f]],
                v,
            });
        }
        for (s, entry) in self.stranded.iter().enumerate() {
            let i = x[layout.port[self.foils.len() + s]];
            let mut v = entry.coupling.resistance * i;
            if let (Some(h), Some(prev)) = (dt, previous) {
                let dflux: f64 = entry
                    .coupling_free
                    .iter()
                    .zip(x[..nf].iter().zip(&prev[..nf]))
                    .map(|(p, (a, ak))| p * (a - ak))
                    .sum();
                v += dflux / h;
            }
            devices.push(DeviceState {
                name: entry.name.clone(),
                u: Vec::new(),
                i,
                v,
            });
        }
        SolutionState {
            a: self.dofs.expand(&x[..nf]),
            devices,
            circuit: x[layout.circuit..].to_vec(),
            time: Some(t),
            frequency: None,
        }
    }

    fn pack(&self, layout: &TransientLayout, state: &SolutionState<f64>) -> Result<Vec<f64>> {
        let mut x = vec![0.0; layout.size];
        let a = self.dofs.restrict(&state.a);
        if a.len() != self.num_field_dofs() || state.devices.len() != self.num_devices() {
            return Err(Error::Dimension {
                expected: self.num_field_dofs(),
                got: a.len(),
            });
        }
        x[..a.len()].copy_from_slice(&a);
        for (f, entry) in self.foils.iter().enumerate() {
            let u = &state.devices[f].u;
            if u.len() != entry.block.basis.len() {
                return Err(Error::Dimension {
                    expected: entry.block.basis.len(),
                    got: u.len(),
                });
            }
            x[layout.u[f]..layout.u[f] + u.len()].copy_from_slice(u);
        }
        if state.circuit.len() != layout.size - layout.circuit {
            return Err(Error::Dimension {
                expected: layout.size - layout.circuit,
                got: state.circuit.len(),
            });
        }
        x[layout.circuit..].copy_from_slice(&state.circuit);
        Ok(x)
    }

    /// Operating point at `t0`: time derivatives zero, capacitors open.
    pub fn operating_point(&self, netlist: &Netlist, t0: f64) -> Result<SolutionState<f64>> {
        let mna = Mna::new(netlist)?;
        let layout = self.transient_layout(&mna)?;
        self.nullspace_check(false)?;
        let sys = self.transient_matrix(&mna, &layout, None);
        let rhs = self.transient_rhs(&mna, &layout, t0, None, None)?;
        let x = sys.factorize()?.solve(&rhs)?;
        Ok(self.transient_state(&layout, &x, None, None, t0))
    }

    /// Backward-Euler integration from `t0` to `t_end` with fixed step `dt`.
    ///
    /// Without an initial state the operating point at `t0` is used. The
    /// system matrix is factorized once.
    pub fn solve_transient(
        &self,
        netlist: &Netlist,
        t0: f64,
        t_end: f64,
        dt: f64,
        initial: Option<SolutionState<f64>>,
    ) -> Result<TransientRun> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Config(format!("time step must be positive, got {dt}")));
        }
        if !(t_end > t0) {
            return Err(Error::Config(format!("t_end ({t_end}) must exceed t0 ({t0})")));
        }
        let mna = Mna::new(netlist)?;
        let layout = self.transient_layout(&mna)?;
        let initial = match initial {
            Some(s) => s,
            None => self.operating_point(netlist, t0)?,
        };
        let mut x = self.pack(&layout, &initial)?;
        let steps = (((t_end - t0) / dt) - 1e-9).ceil() as usize;
        let fact: Factorization<f64> = self.transient_matrix(&mna, &layout, Some(dt)).factorize()?;

        let mut states = Vec::with_capacity(steps + 1);
        let mut energy = Vec::with_capacity(steps);
        let mut w_prev = self.instantaneous_energy(&initial.a)?;
        states.push(initial);
        for k in 1..=steps {
            let t = t0 + k as f64 * dt;
            let rhs = self.transient_rhs(&mna, &layout, t, Some(dt), Some(&x))?;
            let next = fact.solve(&rhs)?;
            let state = self.transient_state(&layout, &next, Some(&x), Some(dt), t);
            self.check_port_relations(&mna, &state)?;
            let w = self.instantaneous_energy(&state.a)?;
            energy.push(self.step_energy(&mna, &layout, &x, &next, &state, dt, t, w - w_prev)?);
            w_prev = w;
            states.push(state);
            x = next;
        }
        Ok(TransientRun { mna, dt, states, energy })
    }

    /// Rejects a step whose foil terminal voltage drifts from `cᵀu`.
    fn check_port_relations(&self, mna: &Mna, state: &SolutionState<f64>) -> Result<()> {
        for (f, entry) in self.foils.iter().enumerate() {
            let d = &state.devices[f];
            let (k, _) = mna.port(&entry.name).expect("layout checked every port");
            let terminal = mna.element_voltage(k, &state.circuit);
            let scale: f64 = entry.block.cvec.iter().zip(&d.u).map(|(c, u)| (c * u).abs()).sum();
            let drift = (terminal - d.v).abs();
            if !drift.is_finite() || drift > 1e-9 * scale.max(terminal.abs()).max(f64::MIN_POSITIVE) {
                return Err(Error::Numerical(format!(
                    "foil winding '{}': terminal voltage drifts from cᵀu by {drift:.3e} V at t = {:e} s",
                    entry.name,
                    state.time.unwrap_or(0.0)
                )));
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn step_energy(
        &self,
        mna: &Mna,
        layout: &TransientLayout,
        x_prev: &[f64],
        x: &[f64],
        state: &SolutionState<f64>,
        h: f64,
        t: f64,
        field_change: f64,
    ) -> Result<StepEnergy> {
        let nf = self.num_field_dofs();
        let base = layout.circuit;
        let (cp, cx) = (&x_prev[base..], &x[base..]);
        let mut source = 0.0;
        let mut resistive = 0.0;
        let mut capacitor_change = 0.0;
        for (k, e) in mna.netlist.elements.iter().enumerate() {
            match &e.kind {
                ElementKind::VoltageSource { waveform } => {
                    source -= h * waveform.value(t)? * cx[mna.branch_of(k).unwrap()];
                }
                ElementKind::Resistor { resistance } => {
                    let v = mna.element_voltage(k, cx);
                    resistive += h * v * v / resistance;
                }
                ElementKind::Capacitor { capacitance } => {
                    let (v1, v0) = (mna.element_voltage(k, cx), mna.element_voltage(k, cp));
                    capacitor_change += 0.5 * capacitance * (v1 * v1 - v0 * v0);
                }
                ElementKind::Port { .. } => {}
            }
        }
        for entry in &self.stranded {
            let i = state.device(&entry.name).unwrap().i;
            resistive += h * entry.coupling.resistance * i * i;
        }
        let adot: Vec<f64> = (0..nf).map(|r| (x[r] - x_prev[r]) / h).collect();
        let mut eddy = self.mass_free.quadratic_form(&adot);
        for (f, entry) in self.foils.iter().enumerate() {
            let u = &x[layout.u[f]..layout.u[f] + entry.block.basis.len()];
            let xu = entry.coupling_free.mul_vec(u);
            let cross: f64 = adot.iter().zip(&xu).map(|(a, b)| a * b).sum();
            eddy += entry.block.conductance.quadratic_form(u) - 2.0 * cross;
        }
        eddy *= h;
        Ok(StepEnergy {
            source,
            resistive,
            eddy,
            field_change,
            capacitor_change,
            defect: source - resistive - eddy - field_change - capacitor_change,
        })
    }
}

impl TransientRun {
    /// Voltage across and current through every circuit element at step `k`,
    /// as `(element name, voltage, current)`.
    pub fn element_quantities(&self, k: usize) -> Vec<(String, f64, f64)> {
        let x = &self.states[k].circuit;
        let prev = if k > 0 { Some(self.states[k - 1].circuit.as_slice()) } else { None };
        let dt = prev.map(|_| self.dt);
        self.mna
            .netlist
            .elements
            .iter()
            .enumerate()
            .map(|(e, el)| {
                let v = match &el.kind {
                    ElementKind::Port { device } => self.states[k].device(device).map_or(0.0, |d| d.v),
                    _ => self.mna.element_voltage(e, x),
                };
                (el.name.clone(), v, self.mna.element_current(e, x, dt, prev))
            })
            .collect()
    }

    /// Largest KCL and KVL residuals of the post-processed circuit quantities
    /// over all steps after the first.
    pub fn kirchhoff_residuals(&self) -> Result<(f64, f64)> {
        let mut kcl = 0.0f64;
        let mut kvl = 0.0f64;
        for k in 1..self.states.len() {
            let s = &self.states[k];
            let prev = &self.states[k - 1].circuit;
            kcl = kcl.max(self.mna.kcl_residual(&s.circuit, Some(self.dt), Some(prev)));
            let t = s.time.unwrap_or(0.0);
            let r = self
                .mna
                .kvl_residual(&s.circuit, t, |name| s.device(name).map_or(f64::NAN, |d| d.v))?;
            kvl = kvl.max(r);
        }
        Ok((kcl, kvl))
    }

    /// Sum of the energy-balance defects of the steps ending in `(t_a, t_b]`.
    pub fn defect_between(&self, t_a: f64, t_b: f64) -> f64 {
        let eps = 1e-9 * self.dt;
        self.energy
            .iter()
            .zip(self.states.iter().skip(1))
            .filter(|(_, s)| {
                let t = s.time.unwrap_or(0.0);
                t > t_a + eps && t <= t_b + eps
            })
            .map(|(e, _)| e.defect)
            .sum()
    }
}

/// Midpoints of `n` equal sub-intervals of the winding's α range.
pub fn alpha_samples(spec: &FoilWindingSpec, n: usize) -> Vec<f64> {
    let len = spec.alpha_length();
    (0..n).map(|k| spec.alpha[0] + len * (k as f64 + 0.5) / n as f64).collect()
}
