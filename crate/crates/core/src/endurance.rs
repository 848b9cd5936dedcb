//! Hover endurance as a function of battery mass fraction.
//!
//! With battery energy proportional to battery mass and hover power
//! proportional to total mass^(3/2), flight time at fixed non-battery mass
//! `m0` is proportional to `phi * sqrt(1 - phi)`, which peaks at `phi = 2/3`.

use thiserror::Error;

use crate::powertrain::hover_power;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnduranceError {
    #[error("battery mass fraction must lie in [0, 1), got {0}")]
    BadFraction(f64),
    #[error("{0} must be positive, got {1}")]
    NonPositive(&'static str, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnduranceInputs {
    /// Mass of everything except the battery, kg.
    pub m0: f64,
    /// Battery mass as a fraction of total mass.
    pub phi: f64,
    /// Battery energy density, Wh/kg.
    pub gamma: f64,
    /// Powertrain constant, W/kg^(3/2).
    pub k_p: f64,
}

impl EnduranceInputs {
    pub fn validate(&self) -> Result<(), EnduranceError> {
        if !(0.0..1.0).contains(&self.phi) {
            return Err(EnduranceError::BadFraction(self.phi));
        }
        for (name, v) in [("m0", self.m0), ("gamma", self.gamma), ("k_p", self.k_p)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(EnduranceError::NonPositive(name, v));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnduranceReport {
    /// Seconds.
    pub flight_time: f64,
    pub total_mass: f64,
    pub battery_mass: f64,
    pub hover_power: f64,
    /// Flight time relative to the optimum at the same m0, gamma, k_p.
    pub normalized_time: f64,
}

/// Unnormalised shape `phi * sqrt(1 - phi)`.
pub fn fraction_shape(phi: f64) -> f64 {
    phi * (1.0 - phi).sqrt()
}

pub fn optimal_phi() -> f64 {
    2.0 / 3.0
}

pub fn normalized_time(phi: f64) -> f64 {
    fraction_shape(phi) / fraction_shape(optimal_phi())
}

pub fn flight_time(inputs: &EnduranceInputs) -> Result<EnduranceReport, EnduranceError> {
    inputs.validate()?;
    let EnduranceInputs { m0, phi, gamma, k_p } = *inputs;
    let battery_mass = phi / (1.0 - phi) * m0;
    let total_mass = m0 / (1.0 - phi);
    let power = hover_power(total_mass, k_p);
    Ok(EnduranceReport {
        flight_time: gamma * battery_mass * 3600.0 / power,
        total_mass,
        battery_mass,
        hover_power: power,
        normalized_time: normalized_time(phi),
    })
}

/// `(phi, normalized_time)` for each grid point.
pub fn normalized_curve(phi_grid: &[f64]) -> Result<Vec<(f64, f64)>, EnduranceError> {
    phi_grid
        .iter()
        .map(|&phi| {
            if (0.0..1.0).contains(&phi) {
                Ok((phi, normalized_time(phi)))
            } else {
                Err(EnduranceError::BadFraction(phi))
            }
        })
        .collect()
}

/// 512 evenly spaced fractions in `[0, 0.999]`.
pub fn default_phi_grid() -> Vec<f64> {
    let n = 512;
    (0..n).map(|i| 0.999 * i as f64 / (n - 1) as f64).collect()
}

/// Golden-section search for the maximiser of a unimodal function on `[lo, hi]`.
pub fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignComparison {
    /// Calibrated gamma / k_p, (Wh/kg) / (W/kg^1.5).
    pub energy_power_ratio: f64,
    pub observed_time: f64,
    pub observed_normalized: f64,
    pub optimal_time: f64,
    pub optimal_battery_mass: f64,
    pub optimal_total_mass: f64,
}

/// Calibrates the energy/power ratio from one observed flight and projects
/// the flight time of a design carrying the optimal battery fraction at the
/// same non-battery mass. Only `m0` and `phi` of `solo` are used.
pub fn design_comparison(solo: &EnduranceInputs, solo_observed_time: f64) -> Result<DesignComparison, EnduranceError> {
    if !(solo_observed_time > 0.0 && solo_observed_time.is_finite()) {
        return Err(EnduranceError::NonPositive("observed flight time", solo_observed_time));
    }
    if !(0.0..1.0).contains(&solo.phi) || solo.phi == 0.0 {
        return Err(EnduranceError::BadFraction(solo.phi));
    }
    if !(solo.m0 > 0.0) {
        return Err(EnduranceError::NonPositive("m0", solo.m0));
    }
    let m0 = solo.m0;
    let battery_mass = solo.phi / (1.0 - solo.phi) * m0;
    let total_mass = m0 / (1.0 - solo.phi);
    // T = (gamma / k_p) * 3600 * m_batt / m_total^1.5
    let ratio = solo_observed_time * total_mass.powf(1.5) / (3600.0 * battery_mass);
    let phi_opt = optimal_phi();
    let observed_normalized = normalized_time(solo.phi);
    Ok(DesignComparison {
        energy_power_ratio: ratio,
        observed_time: solo_observed_time,
        observed_normalized,
        optimal_time: solo_observed_time / observed_normalized,
        optimal_battery_mass: phi_opt / (1.0 - phi_opt) * m0,
        optimal_total_mass: m0 / (1.0 - phi_opt),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Energy density and powertrain constant of the 820 g vehicle whose
    /// 24.42 Wh, 190 g pack lasts 12 minutes.
    fn calibrated(phi: f64) -> EnduranceInputs {
        let gamma = 24.42 / 0.190;
        let k_p = 24.42 * 3600.0 / 720.0 / 0.820f64.powf(1.5);
        EnduranceInputs { m0: 0.63, phi, gamma, k_p }
    }

    #[test]
    fn no_battery_no_flight() {
        let r = flight_time(&calibrated(0.0)).unwrap();
        assert_eq!(r.flight_time, 0.0);
        assert_eq!(r.normalized_time, 0.0);
    }

    #[test]
    fn optimal_design_masses() {
        let r = flight_time(&calibrated(2.0 / 3.0)).unwrap();
        assert_relative_eq!(r.battery_mass, 1.26, epsilon = 1e-12);
        assert_relative_eq!(r.total_mass, 1.89, epsilon = 1e-12);
        assert_relative_eq!(r.normalized_time, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn calibration_closure_twelve_minutes() {
        let r = flight_time(&calibrated(0.2317)).unwrap();
        assert!((r.flight_time - 720.0).abs() / 720.0 < 0.01, "{}", r.flight_time);
    }

    #[test]
    fn rejects_full_fraction() {
        assert_eq!(flight_time(&calibrated(1.0)), Err(EnduranceError::BadFraction(1.0)));
        assert!(normalized_curve(&[0.5, 1.0]).is_err());
    }

    #[test]
    fn curve_values() {
        let c = normalized_curve(&[2.0 / 3.0, 0.0, 0.2317]).unwrap();
        assert_eq!(c[0].1, 1.0);
        assert_eq!(c[1].1, 0.0);
        let direct = 0.2317 * (1.0f64 - 0.2317).sqrt() / ((2.0f64 / 3.0) * (1.0f64 / 3.0).sqrt());
        assert_relative_eq!(c[2].1, direct, epsilon = 1e-15);
        assert!((c[2].1 - 0.5277).abs() < 1e-4);
    }

    #[test]
    fn optimum_analytic_and_numeric() {
        assert!((optimal_phi() - 0.666_666_666_666_666_6).abs() < 1e-9);
        let numeric = golden_section_max(fraction_shape, 0.0, 0.999_999, 1e-10);
        assert!((numeric - optimal_phi()).abs() < 1e-6);
        let h = 1e-6;
        let slope = (fraction_shape(2.0 / 3.0 + h) - fraction_shape(2.0 / 3.0 - h)) / (2.0 * h);
        assert!(slope.abs() < 1e-6);
    }

    #[test]
    fn default_grid_peak() {
        let curve = normalized_curve(&default_phi_grid()).unwrap();
        assert_eq!(curve.len(), 512);
        let (phi, _) = curve.iter().copied().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert!((phi - 0.666).abs() <= 0.002, "{phi}");
    }

    #[test]
    fn design_comparison_projection() {
        let d = design_comparison(&calibrated(0.2317), 720.0).unwrap();
        assert_relative_eq!(d.optimal_time, 720.0 / normalized_time(0.2317), epsilon = 1e-9);
        assert!((d.optimal_time - 1364.0).abs() < 2.0, "{}", d.optimal_time);
        assert_relative_eq!(d.optimal_battery_mass, 1.26, epsilon = 1e-12);
        assert_relative_eq!(d.optimal_total_mass, 1.89, epsilon = 1e-12);

        let doubled = design_comparison(&calibrated(0.2317), 1440.0).unwrap();
        assert_relative_eq!(doubled.optimal_time, 2.0 * d.optimal_time, epsilon = 1e-9);

        let fixed = design_comparison(&calibrated(2.0 / 3.0), 900.0).unwrap();
        assert_relative_eq!(fixed.optimal_time, 900.0, epsilon = 1e-12);
    }

    #[test]
    fn calibrated_ratio_reproduces_observation() {
        let inputs = calibrated(0.2317);
        let d = design_comparison(&inputs, 720.0).unwrap();
        let k_p = 100.0;
        let again = flight_time(&EnduranceInputs { gamma: d.energy_power_ratio * k_p, k_p, ..inputs }).unwrap();
        assert_relative_eq!(again.flight_time, 720.0, epsilon = 1e-9);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        #[test]
        fn shape_unimodal_on_dense_grid() {
            let n = 100_000;
            let grid: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
            for w in grid.windows(2) {
                let (a, b) = (w[0], w[1]);
                if b <= 2.0 / 3.0 {
                    assert!(fraction_shape(b) > fraction_shape(a), "not increasing at {a}");
                } else if a >= 2.0 / 3.0 {
                    assert!(fraction_shape(b) < fraction_shape(a), "not decreasing at {a}");
                }
            }
        }

        proptest! {
            #[test]
            fn normalized_independent_of_scale(m0 in 0.01f64..50.0, gamma in 1.0f64..1000.0, k_p in 1.0f64..1000.0) {
                for phi in default_phi_grid() {
                    let r = flight_time(&EnduranceInputs { m0, phi, gamma, k_p }).unwrap();
                    prop_assert_eq!(r.normalized_time.to_bits(), normalized_time(phi).to_bits());
                }
            }

            #[test]
            fn flight_time_inverse_sqrt_m0(a in 0.05f64..20.0, b in 0.05f64..20.0, phi in 0.01f64..0.99) {
                let base = EnduranceInputs { m0: a, phi, gamma: 150.0, k_p: 160.0 };
                let ta = flight_time(&base).unwrap().flight_time;
                let tb = flight_time(&EnduranceInputs { m0: b, ..base }).unwrap().flight_time;
                prop_assert!((ta / tb - (b / a).sqrt()).abs() < 1e-9 * (b / a).sqrt());
            }
        }
    }
}
