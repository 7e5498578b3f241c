//! External circuit: netlists, modified nodal analysis stamps, stranded
//! winding ports and source waveforms.
//!
//! Unknown layout of the circuit block: node voltages of every non-ground
//! node (in order of first appearance), then one branch current per voltage
//! source and per field port (in netlist order). Branch currents flow into
//! the first (positive) terminal and through the element to the second.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem2d::{assemble_source, AssemblyOptions, SourceDensity};
use crate::mesh::{Mesh, Symmetry};

/// Square wave `2⌊t/T − 1/4⌋ − ⌊2(t/T − 1/4)⌋ + 1`, high on (T/4, 3T/4) mod T.
pub fn square_wave(t: f64, period: f64) -> Result<f64> {
    if !(period > 0.0) {
        return Err(Error::Config(format!("square wave period must be positive, got {period}")));
    }
    let s = t / period - 0.25;
    Ok(2.0 * s.floor() - (2.0 * s).floor() + 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Waveform {
    Constant { value: f64 },
    Square { period: f64, amplitude: f64 },
    Sine { amplitude: f64, frequency: f64 },
}

impl Waveform {
    pub fn value(&self, t: f64) -> Result<f64> {
        match *self {
            Waveform::Constant { value } => Ok(value),
            Waveform::Square { period, amplitude } => {
                // Time grids like t0 + k·dt land a few ulps off the switching
                // instants; those samples take the value at the instant itself.
                let half = 2.0 * (t / period - 0.25);
                let snapped = if (half - half.round()).abs() < 1e-9 {
                    (half.round() / 2.0 + 0.25) * period
                } else {
                    t
                };
                Ok(amplitude * square_wave(snapped, period)?)
            }
            Waveform::Sine { amplitude, frequency } => {
                Ok(amplitude * (2.0 * std::f64::consts::PI * frequency * t).sin())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ElementKind {
    Resistor { resistance: f64 },
    Capacitor { capacitance: f64 },
    VoltageSource { waveform: Waveform },
    /// Terminal pair of a field device (foil or stranded winding) by name.
    Port { device: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub name: String,
    pub nodes: [String; 2],
    #[serde(flatten)]
    pub kind: ElementKind,
}

impl Element {
    pub fn new(name: &str, a: &str, b: &str, kind: ElementKind) -> Self {
        Element {
            name: name.to_string(),
            nodes: [a.to_string(), b.to_string()],
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Netlist {
    #[serde(default = "default_ground")]
    pub ground: String,
    pub elements: Vec<Element>,
}

fn default_ground() -> String {
    "0".to_string()
}

/// Small union-find over node indices.
struct Dsu(Vec<usize>);

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu((0..n).collect())
    }
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }
    /// Returns false if `a` and `b` were already joined.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra] = rb;
        true
    }
}

/// Index bookkeeping for the MNA block of a validated netlist.
#[derive(Debug, Clone)]
pub struct Mna {
    pub netlist: Netlist,
    node_names: Vec<String>,
    node_index: BTreeMap<String, usize>,
    /// Branch-current index (within the branch block) per element.
    branch: Vec<Option<usize>>,
    num_branches: usize,
}

impl Mna {
    pub fn new(netlist: &Netlist) -> Result<Self> {
        let mut node_names = Vec::new();
        let mut node_index = BTreeMap::new();
        let mut names_seen = BTreeMap::new();
        for e in &netlist.elements {
            if names_seen.insert(e.name.clone(), ()).is_some() {
                return Err(Error::Netlist(format!("duplicate element name '{}'", e.name)));
            }
            if e.nodes[0] == e.nodes[1] {
                return Err(Error::Netlist(format!("element '{}' is shorted onto one node", e.name)));
            }
            match e.kind {
                ElementKind::Resistor { resistance: v } | ElementKind::Capacitor { capacitance: v }
                    if (!(v > 0.0) || !v.is_finite()) => {
                        return Err(Error::Netlist(format!("element '{}' needs a positive value", e.name)));
                    }
                _ => {}
            }
            for n in &e.nodes {
                if *n != netlist.ground && !node_index.contains_key(n) {
                    node_index.insert(n.clone(), node_names.len());
                    node_names.push(n.clone());
                }
            }
        }
        let mut devices = BTreeMap::new();
        for e in &netlist.elements {
            if let ElementKind::Port { device } = &e.kind {
                if devices.insert(device.clone(), ()).is_some() {
                    return Err(Error::Netlist(format!("device '{device}' is connected by more than one port")));
                }
            }
        }

        // Connectivity to ground and voltage-source loops. Index n = ground.
        let n = node_names.len();
        let id = |name: &str| -> usize { node_index.get(name).copied().unwrap_or(n) };
        let touches_ground = netlist.elements.iter().any(|e| e.nodes.contains(&netlist.ground));
        if !touches_ground {
            return Err(Error::Netlist(format!("no element connects to ground '{}'", netlist.ground)));
        }
        let mut all = Dsu::new(n + 1);
        let mut sources = Dsu::new(n + 1);
        for e in &netlist.elements {
            let (a, b) = (id(&e.nodes[0]), id(&e.nodes[1]));
            all.union(a, b);
            if matches!(e.kind, ElementKind::VoltageSource { .. }) && !sources.union(a, b) {
                return Err(Error::Netlist(format!("voltage source '{}' closes a loop of voltage sources", e.name)));
            }
        }
        let g = all.find(n);
        for (k, name) in node_names.iter().enumerate() {
            if all.find(k) != g {
                return Err(Error::Netlist(format!("node '{name}' is floating (no path to ground)")));
            }
        }

        let mut branch = Vec::with_capacity(netlist.elements.len());
        let mut num_branches = 0;
        for e in &netlist.elements {
            match e.kind {
                ElementKind::VoltageSource { .. } | ElementKind::Port { .. } => {
                    branch.push(Some(num_branches));
                    num_branches += 1;
                }
                _ => branch.push(None),
            }
        }
        Ok(Mna {
            netlist: netlist.clone(),
            node_names,
            node_index,
            branch,
            num_branches,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_names.len()
    }

    pub fn num_branches(&self) -> usize {
        self.num_branches
    }

    pub fn size(&self) -> usize {
        self.num_nodes() + self.num_branches
    }

    pub fn node_names(&self) -> &[String] {
        &self.node_names
    }

    /// Unknown index of a node voltage (`None` for ground).
    pub fn node(&self, name: &str) -> Option<usize> {
        self.node_index.get(name).copied()
    }

    /// Unknown index of the branch current of element `k`.
    pub fn branch_of(&self, k: usize) -> Option<usize> {
        self.branch[k].map(|b| self.num_nodes() + b)
    }

    /// Element index and branch unknown of the port attached to `device`.
    pub fn port(&self, device: &str) -> Option<(usize, usize)> {
        self.netlist.elements.iter().enumerate().find_map(|(k, e)| match &e.kind {
            ElementKind::Port { device: d } if d == device => Some((k, self.branch_of(k).unwrap())),
            _ => None,
        })
    }

    pub fn ports(&self) -> impl Iterator<Item = (&str, usize)> + '_ {
        self.netlist.elements.iter().enumerate().filter_map(|(k, e)| match &e.kind {
            ElementKind::Port { device } => Some((device.as_str(), self.branch_of(k).unwrap())),
            _ => None,
        })
    }

    fn terminals(&self, k: usize) -> (Option<usize>, Option<usize>) {
        let e = &self.netlist.elements[k];
        (self.node(&e.nodes[0]), self.node(&e.nodes[1]))
    }

    /// Voltage across element `k` (positive minus negative terminal).
    pub fn element_voltage(&self, k: usize, x: &[f64]) -> f64 {
        let (p, n) = self.terminals(k);
        p.map_or(0.0, |i| x[i]) - n.map_or(0.0, |i| x[i])
    }

    /// Matrix stamps. With `dt = Some(h)` capacitors enter as backward-Euler
    /// companions `C/h`; with `None` they are open (operating point).
    ///
    /// Port rows receive `+1/-1` on the terminal voltages only; the field
    /// device adds its own voltage terms to those rows.
    pub fn stamp(&self, dt: Option<f64>, mut add: impl FnMut(usize, usize, f64)) {
        let mut conductance = |p: Option<usize>, n: Option<usize>, g: f64| {
            if let Some(p) = p {
                add(p, p, g);
            }
            if let Some(n) = n {
                add(n, n, g);
            }
            if let (Some(p), Some(n)) = (p, n) {
                add(p, n, -g);
                add(n, p, -g);
            }
        };
        for (k, e) in self.netlist.elements.iter().enumerate() {
            let (p, n) = self.terminals(k);
            match &e.kind {
                ElementKind::Resistor { resistance } => conductance(p, n, 1.0 / resistance),
                ElementKind::Capacitor { capacitance } => {
                    if let Some(h) = dt {
                        conductance(p, n, capacitance / h)
                    }
                }
                _ => {}
            }
        }
        for (k, _) in self.netlist.elements.iter().enumerate() {
            let Some(b) = self.branch_of(k) else { continue };
            let (p, n) = self.terminals(k);
            if let Some(p) = p {
                add(p, b, 1.0);
                add(b, p, 1.0);
            }
            if let Some(n) = n {
                add(n, b, -1.0);
                add(b, n, -1.0);
            }
        }
    }

    /// Right-hand side at time `t`; `previous` holds the circuit unknowns of
    /// the last step for the capacitor history terms.
    pub fn rhs(&self, t: f64, dt: Option<f64>, previous: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut rhs = vec![0.0; self.size()];
        for (k, e) in self.netlist.elements.iter().enumerate() {
            match &e.kind {
                ElementKind::VoltageSource { waveform } => {
                    rhs[self.branch_of(k).unwrap()] = waveform.value(t)?;
                }
                ElementKind::Capacitor { capacitance } => {
                    if let (Some(h), Some(prev)) = (dt, previous) {
                        let (p, n) = self.terminals(k);
                        let i_hist = capacitance / h * self.element_voltage(k, prev);
                        if let Some(p) = p {
                            rhs[p] += i_hist;
                        }
                        if let Some(n) = n {
                            rhs[n] -= i_hist;
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(rhs)
    }

    /// Current through element `k` from positive to negative terminal.
    ///
    /// Capacitor currents use the backward-Euler difference with `previous`.
    pub fn element_current(&self, k: usize, x: &[f64], dt: Option<f64>, previous: Option<&[f64]>) -> f64 {
        match &self.netlist.elements[k].kind {
            ElementKind::Resistor { resistance } => self.element_voltage(k, x) / resistance,
            ElementKind::Capacitor { capacitance } => match (dt, previous) {
                (Some(h), Some(prev)) => {
                    capacitance * (self.element_voltage(k, x) - self.element_voltage(k, prev)) / h
                }
                _ => 0.0,
            },
            _ => x[self.branch_of(k).unwrap()],
        }
    }

    /// Largest Kirchhoff current-law residual over all nodes.
    pub fn kcl_residual(&self, x: &[f64], dt: Option<f64>, previous: Option<&[f64]>) -> f64 {
        let mut sums = vec![0.0; self.num_nodes()];
        for k in 0..self.netlist.elements.len() {
            let i = self.element_current(k, x, dt, previous);
            let (p, n) = self.terminals(k);
            if let Some(p) = p {
                sums[p] += i;
            }
            if let Some(n) = n {
                sums[n] -= i;
            }
        }
        sums.iter().map(|s| s.abs()).fold(0.0, f64::max)
    }

    /// Largest Kirchhoff voltage-law residual over the fundamental loops of a
    /// spanning tree of the netlist.
    ///
    /// Loop sums use constitutive element voltages: the waveform value for
    /// voltage sources, `device_voltage(name)` for field ports and terminal
    /// differences for resistors and capacitors.
    pub fn kvl_residual(&self, x: &[f64], t: f64, device_voltage: impl Fn(&str) -> f64) -> Result<f64> {
        let n = self.num_nodes();
        let idx = |name: &str| self.node(name).unwrap_or(n);
        let mut tree = Dsu::new(n + 1);
        let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n + 1];
        let mut chords = Vec::new();
        for (k, e) in self.netlist.elements.iter().enumerate() {
            let (a, b) = (idx(&e.nodes[0]), idx(&e.nodes[1]));
            let v = match &e.kind {
                ElementKind::VoltageSource { waveform } => waveform.value(t)?,
                ElementKind::Port { device } => device_voltage(device),
                _ => self.element_voltage(k, x),
            };
            if tree.union(a, b) {
                adjacency[a].push((b, v));
                adjacency[b].push((a, -v));
            } else {
                chords.push((a, b, v));
            }
        }
        let mut potential = vec![f64::NAN; n + 1];
        potential[n] = 0.0;
        let mut stack = vec![n];
        while let Some(u) = stack.pop() {
            for &(w, v) in &adjacency[u] {
                if potential[w].is_nan() {
                    potential[w] = potential[u] - v;
                    stack.push(w);
                }
            }
        }
        Ok(chords
            .iter()
            .map(|&(a, b, v)| (potential[a] - potential[b] - v).abs())
            .fold(0.0, f64::max))
    }
}

/// Wire winding with imposed uniform turn density.
#[derive(Debug, Clone, PartialEq)]
pub struct StrandedWindingSpec {
    pub region: String,
    pub turns: usize,
    pub fill_factor: f64,
    pub sigma: f64,
}

impl StrandedWindingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.turns == 0 {
            return Err(Error::Config(format!("stranded winding '{}': turns must be at least 1", self.region)));
        }
        if !(self.fill_factor > 0.0 && self.fill_factor <= 1.0) {
            return Err(Error::Config(format!(
                "stranded winding '{}': fill_factor must lie in (0, 1], got {}",
                self.region, self.fill_factor
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config(format!("stranded winding '{}': conductivity must be positive", self.region)));
        }
        Ok(())
    }
}

/// Field coupling of a stranded winding: `q = P i`, `v = R i + Pᵀ da/dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct StrandedCoupling {
    pub coupling: Vec<f64>,
    pub resistance: f64,
    pub area: f64,
}

pub fn stranded_coupling(
    mesh: &Mesh,
    spec: &StrandedWindingSpec,
    options: AssemblyOptions,
) -> Result<StrandedCoupling> {
    spec.validate()?;
    mesh.require_region(&spec.region)?;
    let area = mesh.region_area(&spec.region);
    if !(area > 0.0) {
        return Err(Error::Geometry(format!("stranded winding '{}' has zero area", spec.region)));
    }
    let turns = spec.turns as f64;
    let coupling = assemble_source(mesh, &SourceDensity::uniform(spec.region.clone(), turns / area), options)?;
    let mean_length = match mesh.symmetry {
        Symmetry::Cartesian { depth } => depth,
        Symmetry::Axisymmetric => {
            let tris = mesh.region_triangles(&spec.region);
            let moment: f64 = tris
                .iter()
                .map(|&t| {
                    let c = mesh.coords(t);
                    mesh.signed_area(t) * (c[0][0] + c[1][0] + c[2][0]) / 3.0
                })
                .sum();
            2.0 * std::f64::consts::PI * moment / area
        }
    };
    let resistance = turns * turns * mean_length / (spec.sigma * spec.fill_factor * area);
    Ok(StrandedCoupling {
        coupling,
        resistance,
        area,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linsolve::LinearSystem;
    use crate::mesh::{generate_structured_mesh, GeometrySpec, RegionRect};

    #[test]
    fn square_wave_samples() {
        let t = 0.02;
        assert_eq!(square_wave(0.5 * t, t).unwrap(), 1.0);
        assert_eq!(square_wave(t, t).unwrap(), 0.0);
        assert_eq!(square_wave(0.0, t).unwrap(), 0.0);
        assert_eq!(square_wave(0.3 * t, t).unwrap(), 1.0);
        assert_eq!(square_wave(0.8 * t, t).unwrap(), 0.0);
        assert!(square_wave(0.1, 0.0).is_err());
    }

    #[test]
    fn sampled_square_wave_switches_on_grid_points() {
        let w = Waveform::Square {
            period: 0.02,
            amplitude: 2.0,
        };
        for dt in [2e-4, 1e-4, 5e-5] {
            let steps = (0.06 / dt) as usize;
            for k in 0..=steps {
                let t = k as f64 * dt;
                let exact = (k as f64 * dt / 0.02 * 4.0).round() as i64;
                let v = w.value(t).unwrap();
                if (t / 0.02 * 4.0 - exact as f64).abs() < 1e-6 {
                    // switching instants take the value after the switch
                    let expected = if exact.rem_euclid(4) == 1 { 2.0 } else if exact.rem_euclid(4) == 3 { 0.0 } else { v };
                    assert_eq!(v, expected, "t = {t}");
                }
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn square_wave_periodic_and_binary(s in -3.0f64..3.0) {
            let t = 0.02;
            let v = square_wave(s * t, t).unwrap();
            proptest::prop_assert!(v == 0.0 || v == 1.0);
            // shift by an exactly representable number of periods
            let w = square_wave(s * t + 4.0 * t, t).unwrap();
            let phase = (s - 0.25).rem_euclid(0.5);
            if phase > 1e-9 && phase < 0.5 - 1e-9 {
                proptest::prop_assert_eq!(v, w);
            }
        }
    }

    fn solve_dc(mna: &Mna) -> Vec<f64> {
        let mut sys = LinearSystem::<f64>::new(mna.size());
        mna.stamp(None, |i, j, v| sys.add(i, j, v));
        sys.rhs = mna.rhs(0.0, None, None).unwrap();
        sys.solve().unwrap()
    }

    #[test]
    fn resistive_divider() {
        let net = Netlist {
            ground: "0".into(),
            elements: vec![
                Element::new("V", "in", "0", ElementKind::VoltageSource { waveform: Waveform::Constant { value: 9.0 } }),
                Element::new("R1", "in", "mid", ElementKind::Resistor { resistance: 1e3 }),
                Element::new("R2", "mid", "0", ElementKind::Resistor { resistance: 2e3 }),
            ],
        };
        let mna = Mna::new(&net).unwrap();
        let x = solve_dc(&mna);
        assert!((x[mna.node("mid").unwrap()] - 6.0).abs() < 1e-12);
        assert!(mna.kcl_residual(&x, None, None) < 1e-15);
        assert!(mna.kvl_residual(&x, 0.0, |_| 0.0).unwrap() < 1e-15);
    }

    #[test]
    fn rc_backward_euler_step() {
        let (r, c, v, dt) = (100.0, 1e-6, 2.0, 1e-5);
        let net = Netlist {
            ground: "0".into(),
            elements: vec![
                Element::new("V", "in", "0", ElementKind::VoltageSource { waveform: Waveform::Constant { value: v } }),
                Element::new("R", "in", "out", ElementKind::Resistor { resistance: r }),
                Element::new("C", "out", "0", ElementKind::Capacitor { capacitance: c }),
            ],
        };
        let mna = Mna::new(&net).unwrap();
        let mut prev = vec![0.0; mna.size()];
        let out = mna.node("out").unwrap();
        prev[out] = 0.5;
        let mut sys = LinearSystem::<f64>::new(mna.size());
        mna.stamp(Some(dt), |i, j, val| sys.add(i, j, val));
        sys.rhs = mna.rhs(dt, Some(dt), Some(&prev)).unwrap();
        let x = sys.solve().unwrap();
        let k = dt / (r * c);
        let expected = (0.5 + k * v) / (1.0 + k);
        assert!((x[out] - expected).abs() < 1e-13);
        assert!(mna.kcl_residual(&x, Some(dt), Some(&prev)) < 1e-15);
    }

    fn vs(a: &str, b: &str) -> Element {
        let waveform = Waveform::Constant { value: 1.0 };
        Element::new(&format!("V{a}{b}"), a, b, ElementKind::VoltageSource { waveform })
    }

    #[test]
    fn netlist_errors() {
        let floating = Netlist {
            ground: "0".into(),
            elements: vec![
                vs("1", "0"),
                Element::new("R", "1", "0", ElementKind::Resistor { resistance: 1.0 }),
                Element::new("R2", "5", "6", ElementKind::Resistor { resistance: 1.0 }),
            ],
        };
        assert!(matches!(Mna::new(&floating), Err(Error::Netlist(_))));
        let source_loop = Netlist {
            ground: "0".into(),
            elements: vec![vs("1", "0"), vs("2", "1"), vs("2", "0")],
        };
        assert!(matches!(Mna::new(&source_loop), Err(Error::Netlist(_))));
        let no_ground = Netlist {
            ground: "0".into(),
            elements: vec![Element::new("R", "1", "2", ElementKind::Resistor { resistance: 1.0 })],
        };
        assert!(Mna::new(&no_ground).is_err());
    }

    #[test]
    fn rc_stamps_symmetric() {
        let net = Netlist {
            ground: "0".into(),
            elements: vec![
                Element::new("R", "a", "b", ElementKind::Resistor { resistance: 3.0 }),
                Element::new("C", "b", "0", ElementKind::Capacitor { capacitance: 1e-3 }),
                Element::new("R2", "a", "0", ElementKind::Resistor { resistance: 5.0 }),
            ],
        };
        let mna = Mna::new(&net).unwrap();
        let mut sys = LinearSystem::<f64>::new(mna.size());
        mna.stamp(Some(1e-4), |i, j, v| sys.add(i, j, v));
        let d = sys.to_dense();
        for i in 0..d.len() {
            for j in 0..d.len() {
                assert_eq!(d[i][j], d[j][i]);
            }
        }
    }

    fn bar_mesh(symmetry: Symmetry) -> Mesh {
        let g = GeometrySpec::new(
            symmetry,
            vec![
                RegionRect::new("coil", [0.01, 0.0], [0.02, 0.03]),
                RegionRect::new("air", [0.02, 0.0], [0.05, 0.03]),
            ],
        );
        generate_structured_mesh(&g, 10, 6).unwrap()
    }

    #[test]
    fn stranded_ampere_turns_and_resistance() {
        let mesh = bar_mesh(Symmetry::Cartesian { depth: 0.7 });
        let spec = StrandedWindingSpec {
            region: "coil".into(),
            turns: 1,
            fill_factor: 1.0,
            sigma: 5.7e7,
        };
        let sc = stranded_coupling(&mesh, &spec, AssemblyOptions::default()).unwrap();
        let area = 0.01 * 0.03;
        assert!((sc.resistance - 0.7 / (5.7e7 * area)).abs() < 1e-12 * sc.resistance);
        let total: f64 = sc.coupling.iter().sum();
        assert!((total - 0.7).abs() < 1e-12);

        let many = StrandedWindingSpec {
            turns: 500,
            fill_factor: 0.8,
            ..spec.clone()
        };
        let sm = stranded_coupling(&mesh, &many, AssemblyOptions::default()).unwrap();
        let total: f64 = sm.coupling.iter().sum();
        assert!((total - 500.0 * 0.7).abs() < 1e-9);
        let ratio = sm.resistance / sc.resistance;
        assert!((ratio - 500.0 * 500.0 / 0.8).abs() < 1e-6 * ratio);
    }

    #[test]
    fn stranded_axisymmetric_mean_turn() {
        let mesh = bar_mesh(Symmetry::Axisymmetric);
        let spec = StrandedWindingSpec {
            region: "coil".into(),
            turns: 10,
            fill_factor: 0.5,
            sigma: 1e7,
        };
        let sc = stranded_coupling(&mesh, &spec, AssemblyOptions::default()).unwrap();
        let area = 0.01 * 0.03;
        let expected = 100.0 * 2.0 * std::f64::consts::PI * 0.015 / (1e7 * 0.5 * area);
        assert!((sc.resistance - expected).abs() < 1e-12 * expected);
        let total: f64 = sc.coupling.iter().sum();
        assert!((total - 10.0 * 2.0 * std::f64::consts::PI).abs() < 1e-10);
        let bad = StrandedWindingSpec { region: "nope".into(), ..spec };
        assert!(stranded_coupling(&mesh, &bad, AssemblyOptions::default()).is_err());
    }
}
