//! Bundled defaults against the published vehicle and battery specifications.

use flybat_core::dynamics::VehicleParams;
use flybat_core::powertrain::BatteryPack;
use flybat_core::scenario::Scenario;

#[test]
fn vehicle_specifications() {
    let main = VehicleParams::main_quadcopter();
    assert_eq!((main.prop_diameter, main.arm_length, main.mass, main.max_thrust), (0.203, 0.165, 0.820, 27.0));
    let fb = VehicleParams::flying_battery();
    assert_eq!((fb.prop_diameter, fb.arm_length, fb.mass, fb.max_thrust), (0.076, 0.058, 0.320, 8.0));
}

#[test]
fn battery_specifications() {
    let p = BatteryPack::primary();
    assert_eq!((p.cell_count, p.capacity_ah, p.mass), (3, 2.2, 0.190));
    let s = BatteryPack::secondary();
    assert_eq!((s.cell_count, s.capacity_ah, s.mass), (3, 1.5, 0.135));
}

#[test]
fn default_scenario_uses_the_specifications() {
    let s = Scenario::default();
    let main = s.main_params().unwrap();
    assert_eq!(main.mass, 0.820);
    assert_eq!(s.fb_params().mass, 0.320);
    assert_eq!(s.primary_pack().unwrap(), BatteryPack::primary());
    assert_eq!(s.secondary_pack().unwrap(), BatteryPack::secondary());
    assert_eq!(s.docking.mu, 0.5);
    assert_eq!(s.sim.dt, 1e-3);
}

#[test]
fn base_mass_and_fraction() {
    let main = VehicleParams::main_quadcopter();
    let battery = BatteryPack::primary().mass;
    assert!((main.mass - battery - 0.630).abs() < 1e-12);
    assert!((battery / main.mass - 0.2317).abs() < 1e-4);
}
