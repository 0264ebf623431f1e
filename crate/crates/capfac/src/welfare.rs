//! Social welfare, the optimal facility location, and approximation ratios.
//!
//! Welfare at `s` is the sum of equilibrium utilities. The optimal location
//! solver exploits the structure of the problem: some optimum serves a
//! contiguous block of `min(n,k)` agents (in sorted location order) with the
//! facility at that block's median. The solver slides the window, takes each
//! window's lower median as a candidate, and re-scores every candidate with
//! the true equilibrium welfare, so the returned value is always achievable
//! even when equidistant agents outside the window grab slots. Welfare ties
//! between candidates resolve toward the later window.
//!
//! [`optimal_location_with_oracle`] additionally compares against a grid
//! brute force; if the grid ever beats the window candidates it returns the
//! grid optimum and reports a structure-violation diagnostic.

use crate::audit::GridSpec;
use crate::error::Error;
use crate::mechanism::{evaluate, Mechanism};
use crate::model::{resolve_equilibrium, Instance, Location};
use crate::rational::{format_rational, Rational};
use num_traits::Zero;
use serde::{ser::SerializeStruct, Serialize, Serializer};
use std::cmp::Ordering;

/// Sum of all agents' equilibrium utilities at facility location `s`.
pub fn welfare(instance: &Instance, s: Location) -> Rational {
    resolve_equilibrium(instance, s).utilities().iter().sum()
}

/// A welfare-maximizing facility location and its welfare.
pub fn optimal_location(instance: &Instance) -> (Location, Rational) {
    let mut sorted = instance.locations().to_vec();
    sorted.sort_unstable();
    let window = instance.capacity().min(instance.n());
    let mut best: Option<(Location, Rational)> = None;
    for start in 0..=(sorted.len() - window) {
        let candidate = sorted[start + window.div_ceil(2) - 1];
        let value = welfare(instance, candidate);
        let better = match &best {
            None => true,
            Some((_, incumbent)) => value >= *incumbent,
        };
        if better {
            best = Some((candidate, value));
        }
    }
    best.expect("instance has at least one agent")
}

/// Window optimum versus grid optimum when the grid found strictly more.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StructureDiagnostic {
    pub window_location: Location,
    #[serde(with = "crate::rational::serde_rational")]
    pub window_welfare: Rational,
    pub grid_location: Location,
    #[serde(with = "crate::rational::serde_rational")]
    pub grid_welfare: Rational,
}

/// Optimal location cross-checked against a grid brute force.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CheckedOptimum {
    pub location: Location,
    #[serde(with = "crate::rational::serde_rational")]
    pub welfare: Rational,
    pub diagnostic: Option<StructureDiagnostic>,
}

/// Runs the window solver and a full scan of the grid points. Returns the
/// window optimum when it is at least as good (the expected case); falls
/// back to the grid optimum with a diagnostic otherwise.
pub fn optimal_location_with_oracle(instance: &Instance, grid: &GridSpec) -> CheckedOptimum {
    let (window_location, window_welfare) = optimal_location(instance);
    let mut grid_best: Option<(Location, Rational)> = None;
    for &s in grid.points() {
        let value = welfare(instance, s);
        let better = match &grid_best {
            None => true,
            Some((_, incumbent)) => value > *incumbent,
        };
        if better {
            grid_best = Some((s, value));
        }
    }
    let (grid_location, grid_welfare) = grid_best.expect("grid has at least one point");
    if grid_welfare > window_welfare {
        CheckedOptimum {
            location: grid_location,
            welfare: grid_welfare,
            diagnostic: Some(StructureDiagnostic {
                window_location,
                window_welfare,
                grid_location,
                grid_welfare,
            }),
        }
    } else {
        CheckedOptimum {
            location: window_location,
            welfare: window_welfare,
            diagnostic: None,
        }
    }
}

/// An exact approximation ratio, or the flag for a zero-welfare mechanism
/// outcome. Ordered so worst-case searches can rank the flagged value above
/// every finite ratio.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RatioValue {
    Finite(Rational),
    Infinite,
}

impl RatioValue {
    pub fn as_finite(&self) -> Option<Rational> {
        match self {
            RatioValue::Finite(v) => Some(*v),
            RatioValue::Infinite => None,
        }
    }

    pub fn to_display(&self) -> String {
        match self {
            RatioValue::Finite(v) => format_rational(v),
            RatioValue::Infinite => "inf".into(),
        }
    }
}

impl Ord for RatioValue {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (RatioValue::Infinite, RatioValue::Infinite) => Ordering::Equal,
            (RatioValue::Infinite, RatioValue::Finite(_)) => Ordering::Greater,
            (RatioValue::Finite(_), RatioValue::Infinite) => Ordering::Less,
            (RatioValue::Finite(a), RatioValue::Finite(b)) => a.cmp(b),
        }
    }
}

impl PartialOrd for RatioValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Serialize for RatioValue {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&self.to_display())
    }
}

/// Mechanism welfare, optimal welfare, and their exact ratio for one
/// instance under truthful reporting.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WelfareReport {
    pub mechanism_location: Location,
    pub mechanism_welfare: Rational,
    pub optimal_location: Location,
    pub optimal_welfare: Rational,
    pub ratio: RatioValue,
}

impl Serialize for WelfareReport {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        let mut st = ser.serialize_struct("WelfareReport", 5)?;
        st.serialize_field("mechanism_location", &self.mechanism_location)?;
        st.serialize_field(
            "mechanism_welfare",
            &format_rational(&self.mechanism_welfare),
        )?;
        st.serialize_field("optimal_location", &self.optimal_location)?;
        st.serialize_field("optimal_welfare", &format_rational(&self.optimal_welfare))?;
        st.serialize_field("ratio", &self.ratio)?;
        st.end()
    }
}

/// Evaluates the mechanism on the instance's locations as truthful reports
/// and compares against the optimum.
pub fn ratio_report<M: Mechanism>(
    instance: &Instance,
    mechanism: &M,
) -> Result<WelfareReport, Error> {
    let mechanism_location = evaluate(mechanism, instance.locations())?;
    let mechanism_welfare = welfare(instance, mechanism_location);
    let (opt_location, optimal_welfare) = optimal_location(instance);
    let ratio = if mechanism_welfare.is_zero() {
        RatioValue::Infinite
    } else {
        RatioValue::Finite(optimal_welfare / mechanism_welfare)
    };
    Ok(WelfareReport {
        mechanism_location,
        mechanism_welfare,
        optimal_location: opt_location,
        optimal_welfare,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::MechanismSpec;
    use crate::rational::rational;
    use crate::rng::SplitMix64;

    fn loc(n: i128, d: i128) -> Location {
        Location::from_ratio(n, d).unwrap()
    }

    fn inst(points: &[(i128, i128)], k: usize) -> Instance {
        Instance::new(points.iter().map(|&(n, d)| loc(n, d)).collect(), k).unwrap()
    }

    // Independent oracle: best welfare over every grid point with
    // denominator up to `max_denom`.
    fn dense_grid_optimum(instance: &Instance, max_denom: u32) -> Rational {
        let mut best = Rational::from_integer(0);
        for q in 1..=max_denom {
            for j in 0..=q {
                let value = welfare(instance, loc(j as i128, q as i128));
                if value > best {
                    best = value;
                }
            }
        }
        best
    }

    #[test]
    fn welfare_examples() {
        let a = inst(&[(0, 1), (0, 1), (1, 1)], 2);
        assert_eq!(welfare(&a, loc(0, 1)), rational(2, 1));
        let b = inst(&[(0, 1), (0, 1), (1, 1)], 3);
        assert_eq!(welfare(&b, loc(0, 1)), rational(2, 1));
        // Frozen from the equilibrium resolver: utilities 17/20 + 19/20.
        let c = inst(&[(1, 5), (2, 5), (9, 10)], 2);
        assert_eq!(welfare(&c, loc(7, 20)), rational(9, 5));
    }

    #[test]
    fn optimal_of_clustered_pair() {
        let instance = inst(&[(0, 1), (0, 1), (1, 1)], 2);
        let (s, value) = optimal_location(&instance);
        assert_eq!((s, value), (loc(0, 1), rational(2, 1)));
        assert_eq!(dense_grid_optimum(&instance, 12), rational(2, 1));
    }

    #[test]
    fn optimal_at_full_capacity_is_the_median() {
        let instance = inst(&[(1, 10), (3, 5), (9, 10)], 3);
        let (s, _) = optimal_location(&instance);
        assert_eq!(s, loc(3, 5));
        // Even n: the lower median.
        let even = inst(&[(0, 1), (1, 4), (3, 4), (1, 1)], 4);
        let (s_even, w_even) = optimal_location(&even);
        assert_eq!(welfare(&even, loc(1, 4)), w_even);
        assert!(s_even == loc(1, 4) || s_even == loc(3, 4));
    }

    #[test]
    fn single_agent_optimum_is_its_peak() {
        let instance = inst(&[(2, 7)], 1);
        assert_eq!(optimal_location(&instance), (loc(2, 7), rational(1, 1)));
    }

    #[test]
    fn oracle_check_has_no_diagnostic_on_clean_instances() {
        let grid = GridSpec::new(60).unwrap();
        let instance = inst(&[(0, 1), (1, 2), (5, 6), (1, 1)], 2);
        let checked = optimal_location_with_oracle(&instance, &grid);
        assert!(checked.diagnostic.is_none());
        assert_eq!(checked.welfare, optimal_location(&instance).1);
    }

    #[test]
    fn window_optimum_matches_grid_oracle_on_random_instances() {
        let mut rng = SplitMix64::new(0x0B0E);
        let grid = GridSpec::new(60).unwrap();
        for _ in 0..60 {
            let n = rng.range_inclusive(1, 8);
            let k = rng.range_inclusive(1, n);
            let locations: Vec<Location> = (0..n).map(|_| loc(rng.below(61) as i128, 60)).collect();
            let instance = Instance::new(locations, k).unwrap();
            let (s, value) = optimal_location(&instance);
            let checked = optimal_location_with_oracle(&instance, &grid);
            assert_eq!(checked.welfare, value, "window vs grid on {instance:?}");
            assert!(checked.diagnostic.is_none());
            // Local optimality: nudging the optimum never helps.
            for nudge in [-1i128, 1] {
                let moved = s.value() + rational(nudge, 60);
                if let Ok(candidate) = Location::new(moved) {
                    assert!(welfare(&instance, candidate) <= value);
                }
            }
        }
    }

    #[test]
    fn optimum_bounded_by_capacity() {
        let mut rng = SplitMix64::new(0xCA9);
        for _ in 0..50 {
            let n = rng.range_inclusive(1, 6);
            let k = rng.range_inclusive(1, n);
            let locations: Vec<Location> = (0..n).map(|_| loc(rng.below(13) as i128, 12)).collect();
            let instance = Instance::new(locations, k).unwrap();
            let (_, value) = optimal_location(&instance);
            assert!(value <= Rational::from_integer(k.min(n) as i128));
            assert!(value >= Rational::from_integer(1));
        }
    }

    #[test]
    fn median_ratio_on_matching_instance_is_one() {
        let instance = inst(&[(0, 1), (0, 1), (1, 1)], 2);
        let report = ratio_report(&instance, &MechanismSpec::Median).unwrap();
        assert_eq!(report.mechanism_location, loc(0, 1));
        assert_eq!(report.mechanism_welfare, rational(2, 1));
        assert_eq!(report.optimal_welfare, rational(2, 1));
        assert_eq!(report.ratio, RatioValue::Finite(rational(1, 1)));
    }

    #[test]
    fn near_median_cluster_with_capacity_two() {
        // Frozen from exact evaluation: mechanism and optimum both serve a
        // pair at distance 1/100, so the ratio is exactly 1.
        let instance = inst(&[(0, 1), (49, 100), (1, 2), (51, 100), (1, 1)], 2);
        let report = ratio_report(&instance, &MechanismSpec::Median).unwrap();
        assert_eq!(report.mechanism_welfare, rational(199, 100));
        assert_eq!(report.optimal_welfare, rational(199, 100));
        assert_eq!(report.ratio, RatioValue::Finite(rational(1, 1)));
        assert_eq!(dense_grid_optimum(&instance, 100), rational(199, 100));
    }

    #[test]
    fn zero_welfare_mechanism_flags_infinite_ratio() {
        let instance = inst(&[(1, 1), (1, 1)], 1);
        let report = ratio_report(&instance, &MechanismSpec::Constant(loc(0, 1))).unwrap();
        assert_eq!(report.mechanism_welfare, rational(0, 1));
        assert_eq!(report.ratio, RatioValue::Infinite);
        assert!(RatioValue::Infinite > RatioValue::Finite(rational(1000, 1)));
    }

    #[test]
    fn ratio_at_least_one_with_equality_iff_optimal() {
        let mut rng = SplitMix64::new(0x0A11);
        for _ in 0..40 {
            let n = rng.range_inclusive(1, 6);
            let k = rng.range_inclusive(1, n);
            let locations: Vec<Location> = (0..n).map(|_| loc(rng.below(9) as i128, 8)).collect();
            let instance = Instance::new(locations, k).unwrap();
            let report = ratio_report(&instance, &MechanismSpec::Median).unwrap();
            let ratio = report.ratio.as_finite().expect("median welfare > 0");
            assert!(ratio >= rational(1, 1));
            assert_eq!(
                ratio == rational(1, 1),
                report.mechanism_welfare == report.optimal_welfare
            );
        }
    }

    #[test]
    fn report_serializes_rationals_as_strings() {
        let instance = inst(&[(0, 1), (0, 1), (1, 1)], 2);
        let report = ratio_report(&instance, &MechanismSpec::Median).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        assert_eq!(
            json,
            r#"{"mechanism_location":"0","mechanism_welfare":"2","optimal_location":"0","optimal_welfare":"2","ratio":"1"}"#
        );
    }
}
