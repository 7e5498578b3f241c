use num_complex::Complex64;

use foilfem::fem2d::{AssemblyOptions, MaterialMap};
use foilfem::foilwinding::{FoilWindingSpec, Orientation};
use foilfem::mesh::{GeometrySpec, RegionRect, Symmetry};
use foilfem::oracle::{convergence_study, BasisVariant, Reference, ResolvedFoilModel, WindingCase};

/// Stand-alone winding with flux walls; `turns` foils of 18 µm copper in 20 µm pitch.
fn bar(turns: usize, frequency: f64) -> WindingCase {
    let depth = 0.5;
    let rect = RegionRect::new("winding", [0.0, 0.0], [turns as f64 * 20e-6, 4e-3]);
    WindingCase {
        geometry: GeometrySpec::new(Symmetry::Cartesian { depth }, vec![rect.clone()]),
        materials: MaterialMap::new(),
        winding: FoilWindingSpec::from_region(&rect, Orientation::CartesianX, turns, 0.9, 5.7e7, depth),
        exterior: vec![],
        dirichlet: ["left", "right", "bottom", "top"].map(String::from).to_vec(),
        frequency,
        current: 1.0,
        options: AssemblyOptions::default(),
    }
}

#[test]
fn resolved_impedance_is_passive_and_inductive() {
    for f in [1e2, 1e3, 5e4, 2e5] {
        let model = ResolvedFoilModel::new(bar(5, f)).unwrap();
        assert_eq!(model.turn_intervals().len(), 5);
        let z = model.solve(40, 80).unwrap().impedance;
        assert!(z.re > 0.0 && z.im > 0.0, "f = {f}: Z = {z}");
    }
}

/// The DC resistance is reproduced for any turn count. The energy differs
/// by the field energy of the insulation layers, which falls off as `1/N²`.
#[test]
fn dc_homogenized_matches_resolved() {
    let mut energy_errors = Vec::new();
    for turns in [2, 4, 8, 16] {
        let case = bar(turns, 0.01);
        let resolved = ResolvedFoilModel::new(case.clone()).unwrap().solve(10 * turns, 80).unwrap();
        for variant in [BasisVariant::Legendre, BasisVariant::Hat] {
            let hom = case.solve_homogenized(4 * turns, 80, variant, 2).unwrap();
            let dr = (hom.impedance.re - resolved.impedance.re).abs() / resolved.impedance.re;
            let dw = (hom.energy - resolved.energy).abs() / resolved.energy;
            assert!(dr < 1e-9, "N = {turns}, {variant:?}: R differs by {dr:.2e}");
            if turns >= 8 {
                assert!(dw < 5e-3, "N = {turns}, {variant:?}: W differs by {dw:.2e}");
            }
            if variant == BasisVariant::Legendre {
                energy_errors.push(dw);
            }
        }
    }
    for w in energy_errors.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.5..4.5).contains(&ratio), "{energy_errors:?}");
    }
}

#[test]
fn resolved_energy_settles_under_refinement() {
    let model = ResolvedFoilModel::new(bar(8, 5e4)).unwrap();
    let w1 = model.solve(40, 80).unwrap().energy;
    let w2 = model.solve(80, 160).unwrap().energy;
    let w3 = model.solve(160, 320).unwrap().energy;
    assert!((w3 - w2).abs() < (w2 - w1).abs(), "{w1} {w2} {w3}");
    assert!((w3 - w2).abs() / w3 < 1e-3);
}

#[test]
fn homogenized_error_decreases_with_mesh_level() {
    let case = bar(8, 5e4);
    let reference = Reference::Resolved { nx: 160, ny: 320 };
    let levels = [(4, 20), (8, 40), (16, 80), (32, 160)];
    let table = convergence_study(&case, &levels, &[BasisVariant::Legendre], &[3], &reference).unwrap();
    let errors: Vec<f64> = table.rows.iter().map(|r| r.rel_error).collect();
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
    let n_a: Vec<usize> = table.rows.iter().map(|r| r.n_a).collect();
    assert!(n_a.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn voltage_is_the_sum_of_turn_voltages() {
    let sol = ResolvedFoilModel::new(bar(6, 1e4)).unwrap().solve(30, 40).unwrap();
    let sum: Complex64 = sol.turn_voltages.iter().sum();
    assert!((sum - sol.voltage).norm() <= 1e-12 * sol.voltage.norm());
    assert!((sol.impedance - sol.voltage / sol.current).norm() <= 1e-12 * sol.impedance.norm());
}
