//! Approximation bounds: closed forms, adversarial constructions, and
//! empirical worst-case ratio search.
//!
//! [`dic_lower_bound`] is the floor on the worst-case ratio any DIC
//! mechanism can achieve; [`median_upper_bound`] is the median mechanism's
//! guarantee. The two coincide at `2k/(k+1)` for small `k`, where the median
//! is optimal among DIC mechanisms.
//!
//! [`optimal_not_dic_witness`] builds the two-scenario instance showing the
//! welfare-optimal rule is manipulable for `2 <= k <= n-1`, and
//! [`relocation_lower_bound_report`] builds the clustered profile whose
//! agents relocate to the endpoints while an uncompromising mechanism's
//! output stays pinned. [`worst_case_search`] maximizes the exact ratio over
//! a grid and then locally refines; every value it reports is realized by a
//! concrete instance, so the result is a certified lower bound on the true
//! worst case.

use crate::audit::GridSpec;
use crate::error::Error;
use crate::mechanism::{Mechanism, MechanismSpec};
use crate::model::{agent_utility, Instance, Location};
use crate::par;
use crate::rational::{format_rational, Rational};
use crate::welfare::{ratio_report, RatioValue, WelfareReport};
use num_traits::Zero;
use serde::{ser::SerializeStruct, Serialize, Serializer};

/// Best approximation ratio any DIC mechanism can guarantee:
/// `2k/(k+1)` for `k <= ceil((n-1)/2)`, else `max{(n-1)/(k+1), 1}`.
pub fn dic_lower_bound(n: usize, k: usize) -> Rational {
    assert!(n >= 2, "lower bound needs n >= 2");
    assert!(k >= 1 && k <= n, "capacity {k} outside 1..={n}");
    if k <= n / 2 {
        Rational::new(2 * k as i128, k as i128 + 1)
    } else {
        Rational::new(n as i128 - 1, k as i128 + 1).max(Rational::from_integer(1))
    }
}

/// The median mechanism's guarantee: `2k/(k+1)` for `k <= floor((n+1)/2)`,
/// and beyond that the minimum with `1 + 2(n-k+1)/(3k-2n-2)`. The second
/// expression is a valid bound only where its denominator is positive;
/// below that it degenerates (zero or negative denominator) and the first
/// expression carries alone.
pub fn median_upper_bound(n: usize, k: usize) -> Result<Rational, Error> {
    if n < 5 {
        return Err(Error::DomainError(format!(
            "median upper bound needs n >= 5, got {n}"
        )));
    }
    if k == 0 || k > n {
        return Err(Error::DomainError(format!("capacity {k} outside 1..={n}")));
    }
    let base = Rational::new(2 * k as i128, k as i128 + 1);
    if k <= n.div_ceil(2) {
        return Ok(base);
    }
    let denom = 3 * k as i128 - 2 * n as i128 - 2;
    if denom <= 0 {
        return Ok(base);
    }
    let tighter = Rational::from_integer(1) + Rational::new(2 * (n as i128 - k as i128 + 1), denom);
    Ok(base.min(tighter))
}

/// The two-scenario manipulation of the welfare-optimal rule.
///
/// Agents split into `floor(n/k)` groups of size `k` (plus a remainder
/// group) at evenly spaced points `y_t = t/(floor(n/k)+1)`; each group has
/// one agent displaced to `y_t - t*eps`. In the truthful scenario the
/// displaced agent of group 1 sits at `y_1 - 3*eps`, the optimum moves to
/// the second group, and that agent gets zero. Reporting `y_1 - eps`
/// instead reproduces the deviating scenario, where the optimum is `y_1`
/// and the agent gets `1 - eps`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OptimalDeviationWitness {
    /// Scenario with the displaced agent truly at `y_1 - 3*eps`.
    pub truthful_instance: Instance,
    /// Scenario matching the deviating report profile (`y_1 - eps`).
    pub deviating_instance: Instance,
    /// The manipulating agent (group 1's displaced agent).
    pub agent: usize,
    pub truthful_facility: Location,
    pub truthful_utility: Rational,
    pub deviation_report: Location,
    pub deviating_facility: Location,
    pub deviating_utility: Rational,
    /// True when the utilities are exactly `0` and `1 - eps`.
    pub confirmed: bool,
}

impl OptimalDeviationWitness {
    pub fn gain(&self) -> Rational {
        self.deviating_utility - self.truthful_utility
    }
}

impl Serialize for OptimalDeviationWitness {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        let mut st = ser.serialize_struct("OptimalDeviationWitness", 9)?;
        st.serialize_field("truthful_instance", &self.truthful_instance)?;
        st.serialize_field("deviating_instance", &self.deviating_instance)?;
        st.serialize_field("agent", &(self.agent + 1))?;
        st.serialize_field("truthful_facility", &self.truthful_facility)?;
        st.serialize_field("truthful_utility", &format_rational(&self.truthful_utility))?;
        st.serialize_field("deviation_report", &self.deviation_report)?;
        st.serialize_field("deviating_facility", &self.deviating_facility)?;
        st.serialize_field(
            "deviating_utility",
            &format_rational(&self.deviating_utility),
        )?;
        st.serialize_field("confirmed", &self.confirmed)?;
        st.end()
    }
}

/// Default displacement: small enough that every constructed point is
/// strictly ordered and interior.
pub fn default_displacement(n: usize, k: usize) -> Rational {
    let groups = (n / k) as i128 + 1;
    Rational::new(1, 4 * groups * n as i128)
}

pub fn optimal_not_dic_witness(
    n: usize,
    k: usize,
    eps: Rational,
) -> Result<OptimalDeviationWitness, Error> {
    if k < 2 || k + 1 > n {
        return Err(Error::DomainError(format!(
            "optimal mechanism is incentive compatible for k in {{1, n}}; need 2 <= k <= n-1, got k={k}, n={n}"
        )));
    }
    let groups = n / k;
    let spacing = Rational::new(1, groups as i128 + 1);
    if eps <= Rational::zero() || Rational::from_integer(3 * (groups as i128 + 1)) * eps >= spacing
    {
        return Err(Error::DomainError(format!(
            "displacement {} too large for {} groups",
            format_rational(&eps),
            groups
        )));
    }

    // Group t occupies y_t; its first agent is displaced by t*eps.
    let mut base_locations: Vec<Location> = Vec::with_capacity(n);
    let mut remaining = n;
    let mut t = 1i128;
    while remaining > 0 {
        let group_size = remaining.min(k);
        let y_t = spacing * Rational::from_integer(t);
        base_locations.push(Location::new(y_t - Rational::from_integer(t) * eps)?);
        for _ in 1..group_size {
            base_locations.push(Location::new(y_t)?);
        }
        remaining -= group_size;
        t += 1;
    }

    let agent = 0usize;
    let y_1 = spacing;
    let deviation_report = Location::new(y_1 - eps)?;
    let truthful_location = Location::new(y_1 - Rational::from_integer(3) * eps)?;

    let mut deviating_locations = base_locations.clone();
    deviating_locations[agent] = deviation_report;
    let deviating_instance = Instance::new(deviating_locations, k)?;

    let mut truthful_locations = base_locations;
    truthful_locations[agent] = truthful_location;
    let truthful_instance = Instance::new(truthful_locations, k)?;

    let (truthful_facility, _) = crate::welfare::optimal_location(&truthful_instance);
    let truthful_utility = agent_utility(&truthful_instance, truthful_facility, agent);
    let (deviating_facility, _) = crate::welfare::optimal_location(&deviating_instance);
    let deviating_utility = agent_utility(&deviating_instance, deviating_facility, agent);

    let confirmed =
        truthful_utility.is_zero() && deviating_utility == Rational::from_integer(1) - eps;
    Ok(OptimalDeviationWitness {
        truthful_instance,
        deviating_instance,
        agent,
        truthful_facility,
        truthful_utility,
        deviation_report,
        deviating_facility,
        deviating_utility,
        confirmed,
    })
}

/// Clustered profile, its endpoint relocation, and the realized ratio of a
/// mechanism whose output the relocation is supposed to pin.
#[derive(Clone, Debug, Serialize)]
pub struct PinnedRatioReport {
    pub clustered: Instance,
    pub clustered_output: Location,
    pub relocated: Instance,
    pub relocated_output: Location,
    /// Output unchanged by the relocation, as the uncompromising property
    /// forces for any GMM.
    pub pinned: bool,
    pub report: WelfareReport,
    #[serde(with = "crate::rational::serde_rational")]
    pub lower_bound: Rational,
}

/// Builds `n` distinct locations inside `(1/2 - eps/2, 1/2 + eps/2)`,
/// relocates everyone strictly below the mechanism's output to 0 and
/// everyone strictly above to 1, and scores the mechanism on the relocated
/// profile against [`dic_lower_bound`].
pub fn relocation_lower_bound_report<M: Mechanism>(
    mechanism: &M,
    n: usize,
    k: usize,
    eps: Rational,
) -> Result<PinnedRatioReport, Error> {
    if n < 2 {
        return Err(Error::DomainError(format!(
            "relocation construction needs n >= 2, got {n}"
        )));
    }
    if eps <= Rational::zero() || eps >= Rational::from_integer(1) {
        return Err(Error::DomainError(format!(
            "cluster width {} outside (0,1)",
            format_rational(&eps)
        )));
    }
    mechanism.check_arity(n)?;
    let half = Rational::new(1, 2);
    let lo = half - eps / Rational::from_integer(2);
    let step = eps / Rational::from_integer(n as i128 + 1);
    let clustered_locations: Vec<Location> = (1..=n)
        .map(|i| Location::new(lo + step * Rational::from_integer(i as i128)))
        .collect::<Result<_, _>>()?;
    let clustered = Instance::new(clustered_locations.clone(), k)?;
    let clustered_output = mechanism.locate(&clustered_locations);

    let relocated_locations: Vec<Location> = clustered_locations
        .iter()
        .map(|&x| {
            if x < clustered_output {
                Location::ZERO
            } else if x > clustered_output {
                Location::ONE
            } else {
                x
            }
        })
        .collect();
    let relocated = Instance::new(relocated_locations.clone(), k)?;
    let relocated_output = mechanism.locate(&relocated_locations);
    let pinned = relocated_output == clustered_output;
    let report = ratio_report(&relocated, mechanism)?;
    Ok(PinnedRatioReport {
        clustered,
        clustered_output,
        relocated,
        relocated_output,
        pinned,
        report,
        lower_bound: dic_lower_bound(n, k),
    })
}

/// The profile maximizing the exact ratio, with its full report.
#[derive(Clone, Debug, Serialize)]
pub struct WorstCase {
    pub instance: Instance,
    pub ratio: RatioValue,
    pub report: WelfareReport,
    /// Denominator of the finest grid the incumbent was refined on.
    pub final_denominator: u32,
}

fn ratio_of(instance: &Instance, mechanism: &impl Mechanism) -> (RatioValue, WelfareReport) {
    let report = ratio_report(instance, mechanism).expect("arity checked by caller");
    (report.ratio, report)
}

/// Exhaustive grid maximization of the ratio followed by `refine_steps`
/// rounds of local refinement: each round doubles the denominator and
/// rescans a +/- 2/q window around the incumbent coordinates. Every scanned
/// profile's ratio is exact and realized, so the maximum is a certified
/// lower bound on the true worst case. Ties keep the lexicographically
/// first profile.
pub fn worst_case_search<M: Mechanism>(
    mechanism: &M,
    n: usize,
    k: usize,
    grid: &GridSpec,
    refine_steps: u32,
    budget: u64,
) -> Result<WorstCase, Error> {
    mechanism.check_arity(n)?;
    if k == 0 || k > n {
        return Err(Error::DomainError(format!("capacity {k} outside 1..={n}")));
    }
    let profiles = grid.profile_count(n);
    if profiles > budget as u128 {
        return Err(Error::BudgetExceeded {
            required: profiles,
            budget,
        });
    }

    let best = par::max_by_index(profiles as usize, |p| {
        let locations = grid.decode_profile(p, n);
        let instance = Instance::new(locations, k).expect("grid profile is valid");
        Some(ratio_of(&instance, mechanism).0)
    })
    .expect("at least one profile");
    let mut incumbent = Instance::new(grid.decode_profile(best.0, n), k).unwrap();
    let mut incumbent_ratio = best.1;

    let mut q = grid.denominator();
    for _ in 0..refine_steps {
        let window = Rational::new(2, q as i128);
        let fine = GridSpec::new(q * 2)?;
        // Per-agent candidate points within the window around the incumbent.
        let candidates: Vec<Vec<Location>> = incumbent
            .locations()
            .iter()
            .map(|&x| {
                fine.points()
                    .iter()
                    .copied()
                    .filter(|&p| {
                        let d = crate::model::distance(p, x);
                        d <= window
                    })
                    .collect()
            })
            .collect();
        let mut total: u128 = 1;
        for c in &candidates {
            total = total.saturating_mul(c.len() as u128);
        }
        if total > budget as u128 {
            return Err(Error::BudgetExceeded {
                required: total,
                budget,
            });
        }
        let decode = |index: usize| -> Vec<Location> {
            let mut rest = index;
            let mut out = vec![Location::ZERO; n];
            for i in (0..n).rev() {
                let base = candidates[i].len();
                out[i] = candidates[i][rest % base];
                rest /= base;
            }
            out
        };
        if let Some((idx, ratio)) = par::max_by_index(total as usize, |p| {
            let instance = Instance::new(decode(p), k).expect("refined profile is valid");
            Some(ratio_of(&instance, mechanism).0)
        }) {
            if ratio > incumbent_ratio {
                incumbent = Instance::new(decode(idx), k).unwrap();
                incumbent_ratio = ratio;
            }
        }
        q *= 2;
    }

    let (ratio, report) = ratio_of(&incumbent, mechanism);
    debug_assert_eq!(ratio, incumbent_ratio);
    Ok(WorstCase {
        instance: incumbent,
        ratio,
        report,
        final_denominator: q,
    })
}

/// One row of the bound curve for a given capacity.
#[derive(Clone, Debug, Serialize)]
pub struct BoundRow {
    pub k: usize,
    #[serde(with = "crate::rational::serde_rational")]
    pub lower_bound: Rational,
    pub upper_bound: Option<String>,
    pub empirical: Option<RatioValue>,
    /// Distance of the empirical value below the DIC lower bound it
    /// approaches (only when both are finite).
    pub gap: Option<String>,
    pub witness: Option<Instance>,
}

/// Theoretical bounds and (budget permitting) empirical median worst-case
/// ratios for every capacity `k = 1..n`.
#[derive(Clone, Debug, Serialize)]
pub struct BoundCurve {
    pub n: usize,
    pub rows: Vec<BoundRow>,
}

impl BoundCurve {
    /// CSV with header, comma delimiter, LF line endings. The witness
    /// profile is JSON, CSV-quoted.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,lower_bound,upper_bound,empirical,witness_profile\n");
        for row in &self.rows {
            let upper = row.upper_bound.clone().unwrap_or_default();
            let empirical = row
                .empirical
                .as_ref()
                .map(|r| r.to_display())
                .unwrap_or_default();
            let witness = row
                .witness
                .as_ref()
                .map(|w| csv_quote(&serde_json::to_string(w).expect("instance serializes")))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.k,
                format_rational(&row.lower_bound),
                upper,
                empirical,
                witness
            ));
        }
        out
    }
}

fn csv_quote(field: &str) -> String {
    format!("\"{}\"", field.replace('"', "\"\""))
}

/// Closed-form bound columns for `k = 1..n` plus the empirical median
/// worst-case series wherever the grid search fits the budget.
pub fn ratio_curve(
    n: usize,
    grid: &GridSpec,
    refine_steps: u32,
    budget: u64,
) -> Result<BoundCurve, Error> {
    if n < 2 {
        return Err(Error::DomainError(format!(
            "bound curve needs n >= 2, got {n}"
        )));
    }
    let searchable = grid.profile_count(n) <= budget as u128;
    let mut rows = Vec::with_capacity(n);
    for k in 1..=n {
        let lower_bound = dic_lower_bound(n, k);
        let upper_bound = median_upper_bound(n, k).ok().map(|u| format_rational(&u));
        let (empirical, witness) = if searchable {
            let found =
                worst_case_search(&MechanismSpec::Median, n, k, grid, refine_steps, budget)?;
            (Some(found.ratio), Some(found.instance))
        } else {
            (None, None)
        };
        let gap = match &empirical {
            Some(RatioValue::Finite(e)) => Some(format_rational(&(lower_bound - e))),
            _ => None,
        };
        rows.push(BoundRow {
            k,
            lower_bound,
            upper_bound,
            empirical,
            gap,
            witness,
        });
    }
    Ok(BoundCurve { n, rows })
}
