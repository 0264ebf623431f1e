//! Location-only mechanisms and the uncompromising property.
//!
//! A mechanism maps a profile of reported locations to a facility location.
//! The central family is the generalized median mechanisms: a threshold
//! `a_S` for every subset `S` of agents, evaluated as
//! `min over S of max(max_{i in S} x_i, a_S)` (the empty-set term is just
//! `a_S`). Named families (median, constant, dictator) evaluate in closed
//! form and also admit explicit threshold-table encodings; the snap-dictator
//! (facility snaps to whichever of two targets is closer to one agent's
//! report) is the canonical mechanism that is *not* a GMM.
//!
//! [`TableMechanism`] represents an arbitrary function from grid report
//! profiles to grid locations. Tables are only defined on their grid, which
//! is all the grid audits need; they populate the non-GMM side of the
//! DIC/uncompromising equivalence experiments.

use crate::audit::{AuditVerdict, GridSpec};
use crate::error::Error;
use crate::model::Location;
use crate::par;
use crate::rational::{format_rational, parse_rational, Rational};
use crate::rng::SplitMix64;
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use std::collections::BTreeMap;

/// Explicit threshold tables keep all `2^n` subsets in memory; past this
/// the named families must be evaluated in closed form.
pub const EXPLICIT_GMM_BOUND: usize = 16;

/// Anything that maps report profiles to a facility location.
pub trait Mechanism: Sync {
    /// Checks that the mechanism is defined for `n` reports.
    fn check_arity(&self, n: usize) -> Result<(), Error>;

    /// Facility location for a report profile. Callers must have passed
    /// `check_arity`; table mechanisms additionally require every report to
    /// lie on their grid.
    fn locate(&self, reports: &[Location]) -> Location;

    /// Short human-readable description for witnesses and reports.
    fn describe(&self) -> String;
}

/// Validated evaluation: the public entry point for one-off calls.
pub fn evaluate<M: Mechanism + ?Sized>(
    mechanism: &M,
    reports: &[Location],
) -> Result<Location, Error> {
    mechanism.check_arity(reports.len())?;
    Ok(mechanism.locate(reports))
}

/// A generalized median mechanism as an explicit threshold table.
///
/// `thresholds[mask]` is `a_S` for the subset whose members are the set
/// bits of `mask` (bit `i` is agent id `i`). The table is total, including
/// the empty set at index 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GmmSpec {
    n: usize,
    thresholds: Vec<Rational>,
}

impl GmmSpec {
    pub fn new(n: usize, thresholds: Vec<Rational>) -> Result<Self, Error> {
        if n == 0 || n > EXPLICIT_GMM_BOUND {
            return Err(Error::InstanceTooLarge {
                n,
                bound: EXPLICIT_GMM_BOUND,
            });
        }
        if thresholds.len() != 1 << n {
            return Err(Error::DomainError(format!(
                "threshold table has {} entries, expected {}",
                thresholds.len(),
                1 << n
            )));
        }
        for t in &thresholds {
            if *t < Rational::from_integer(0) || *t > Rational::from_integer(1) {
                return Err(Error::InvalidLocation(format_rational(t)));
            }
        }
        Ok(GmmSpec { n, thresholds })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn threshold(&self, subset_mask: usize) -> Rational {
        self.thresholds[subset_mask]
    }

    /// `min over S of max(max_{i in S} x_i, a_S)`.
    pub fn evaluate(&self, reports: &[Location]) -> Location {
        debug_assert_eq!(reports.len(), self.n);
        let size = 1usize << self.n;
        let mut best = self.thresholds[0];
        let mut max_report = vec![Rational::from_integer(0); size];
        for mask in 1..size {
            let low_bit = mask & mask.wrapping_neg();
            let agent = low_bit.trailing_zeros() as usize;
            let rest = mask ^ low_bit;
            let report = reports[agent].value();
            max_report[mask] = if rest == 0 {
                report
            } else {
                max_report[rest].max(report)
            };
            let term = max_report[mask].max(self.thresholds[mask]);
            if term < best {
                best = term;
            }
        }
        Location::new_unchecked(best)
    }

    /// A table with every threshold drawn uniformly from the grid points.
    pub fn random(n: usize, grid: &GridSpec, rng: &mut SplitMix64) -> Result<Self, Error> {
        if n == 0 || n > EXPLICIT_GMM_BOUND {
            return Err(Error::InstanceTooLarge {
                n,
                bound: EXPLICIT_GMM_BOUND,
            });
        }
        let points = grid.points();
        let thresholds = (0..1usize << n)
            .map(|_| points[rng.below(points.len())].value())
            .collect();
        GmmSpec::new(n, thresholds)
    }
}

impl Mechanism for GmmSpec {
    fn check_arity(&self, n: usize) -> Result<(), Error> {
        if n == self.n {
            Ok(())
        } else {
            Err(Error::ArityMismatch {
                expected: self.n,
                got: n,
            })
        }
    }

    fn locate(&self, reports: &[Location]) -> Location {
        self.evaluate(reports)
    }

    fn describe(&self) -> String {
        format!("gmm(n={})", self.n)
    }
}

/// A location-only mechanism: an explicit GMM or a named family.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MechanismSpec {
    /// The `floor((n+1)/2)`-th smallest report.
    Median,
    /// Always outputs `s`.
    Constant(Location),
    /// Coincides with one agent's report (0-based id).
    Dictator(usize),
    /// Snaps to whichever target is closer to the agent's report, first
    /// target on ties. Defaults to targets (1/4, 3/4). Not a GMM.
    SnapDictator {
        agent: usize,
        targets: (Location, Location),
    },
    Gmm(GmmSpec),
}

impl MechanismSpec {
    pub fn snap_dictator(agent: usize) -> Self {
        MechanismSpec::SnapDictator {
            agent,
            targets: (
                Location::new_unchecked(Rational::new(1, 4)),
                Location::new_unchecked(Rational::new(3, 4)),
            ),
        }
    }
}

impl Mechanism for MechanismSpec {
    fn check_arity(&self, n: usize) -> Result<(), Error> {
        match self {
            MechanismSpec::Median | MechanismSpec::Constant(_) => {
                if n == 0 {
                    Err(Error::ArityMismatch {
                        expected: 1,
                        got: 0,
                    })
                } else {
                    Ok(())
                }
            }
            MechanismSpec::Dictator(agent) | MechanismSpec::SnapDictator { agent, .. } => {
                if *agent < n {
                    Ok(())
                } else {
                    Err(Error::ArityMismatch {
                        expected: agent + 1,
                        got: n,
                    })
                }
            }
            MechanismSpec::Gmm(spec) => spec.check_arity(n),
        }
    }

    fn locate(&self, reports: &[Location]) -> Location {
        match self {
            MechanismSpec::Median => {
                let mut sorted = reports.to_vec();
                sorted.sort_unstable();
                sorted[sorted.len().div_ceil(2) - 1]
            }
            MechanismSpec::Constant(s) => *s,
            MechanismSpec::Dictator(agent) => reports[*agent],
            MechanismSpec::SnapDictator { agent, targets } => {
                let report = reports[*agent];
                let (a, b) = *targets;
                if crate::model::distance(a, report) <= crate::model::distance(b, report) {
                    a
                } else {
                    b
                }
            }
            MechanismSpec::Gmm(spec) => spec.evaluate(reports),
        }
    }

    fn describe(&self) -> String {
        match self {
            MechanismSpec::Median => "median".into(),
            MechanismSpec::Constant(s) => format!("constant({s})"),
            MechanismSpec::Dictator(agent) => format!("dictator(agent {})", agent + 1),
            MechanismSpec::SnapDictator { agent, targets } => {
                format!(
                    "snap_dictator(agent {}, targets {}, {})",
                    agent + 1,
                    targets.0,
                    targets.1
                )
            }
            MechanismSpec::Gmm(spec) => spec.describe(),
        }
    }
}

/// Threshold-table encoding of a named family, for checking the encodings
/// against their closed forms. Only median, constant and dictator encode;
/// the snap-dictator has no GMM table.
pub fn gmm_encoding(spec: &MechanismSpec, n: usize) -> Result<GmmSpec, Error> {
    if n == 0 || n > EXPLICIT_GMM_BOUND {
        return Err(Error::InstanceTooLarge {
            n,
            bound: EXPLICIT_GMM_BOUND,
        });
    }
    spec.check_arity(n)?;
    let one = Rational::from_integer(1);
    let zero = Rational::from_integer(0);
    let size = 1usize << n;
    let thresholds = match spec {
        MechanismSpec::Median => {
            let pivot = n.div_ceil(2);
            (0..size)
                .map(|mask| {
                    if mask.count_ones() < pivot as u32 {
                        one
                    } else {
                        zero
                    }
                })
                .collect()
        }
        MechanismSpec::Constant(s) => (0..size)
            .map(|mask| if mask == 0 { s.value() } else { one })
            .collect(),
        MechanismSpec::Dictator(agent) => (0..size)
            .map(|mask| if mask == 1usize << agent { zero } else { one })
            .collect(),
        _ => {
            return Err(Error::DomainError(format!(
                "{} has no threshold-table encoding",
                spec.describe()
            )))
        }
    };
    GmmSpec::new(n, thresholds)
}

/// An arbitrary function from grid report profiles to locations, defined
/// only on its grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TableMechanism {
    grid: GridSpec,
    n: usize,
    outputs: Vec<Location>,
}

impl TableMechanism {
    pub fn new(grid: GridSpec, n: usize, outputs: Vec<Location>) -> Result<Self, Error> {
        let expected = (grid.len() as u128).checked_pow(n as u32);
        if n == 0 || expected != Some(outputs.len() as u128) {
            return Err(Error::DomainError(format!(
                "table has {} outputs, expected {}^{}",
                outputs.len(),
                grid.len(),
                n
            )));
        }
        Ok(TableMechanism { grid, n, outputs })
    }

    /// Uniformly random outputs over the grid points.
    pub fn random(grid: &GridSpec, n: usize, rng: &mut SplitMix64) -> Self {
        let count = grid.len().pow(n as u32);
        let outputs = (0..count)
            .map(|_| grid.points()[rng.below(grid.len())])
            .collect();
        TableMechanism {
            grid: grid.clone(),
            n,
            outputs,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn profile_index(&self, reports: &[Location]) -> usize {
        let mut index = 0usize;
        for report in reports {
            let pos = self
                .grid
                .position(*report)
                .expect("table mechanism evaluated off its grid");
            index = index * self.grid.len() + pos;
        }
        index
    }
}

impl Mechanism for TableMechanism {
    fn check_arity(&self, n: usize) -> Result<(), Error> {
        if n == self.n {
            Ok(())
        } else {
            Err(Error::ArityMismatch {
                expected: self.n,
                got: n,
            })
        }
    }

    fn locate(&self, reports: &[Location]) -> Location {
        self.outputs[self.profile_index(reports)]
    }

    fn describe(&self) -> String {
        format!("table(n={}, q={})", self.n, self.grid.denominator())
    }
}

/// Witness that a mechanism is not uncompromising: at `profile` the output
/// is `output`, yet the deviating agent moved it to `moved_to` while
/// staying on their own side of `output`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct UncompromisingWitness {
    pub profile: Vec<Location>,
    pub agent: usize,
    pub deviation: Location,
    pub output: Location,
    pub moved_to: Location,
}

/// Exhaustive grid check of the uncompromising property: whenever
/// `M(x) = s` and `x_i > s`, every report `x_i' >= s` must keep the output
/// at `s` (symmetrically below). Failure witnesses are true violations;
/// passing is complete only over the grid.
pub fn is_uncompromising_on_grid<M: Mechanism + ?Sized>(
    mechanism: &M,
    n: usize,
    grid_denominator: u32,
    budget: u64,
) -> Result<AuditVerdict<UncompromisingWitness>, Error> {
    mechanism.check_arity(n)?;
    let grid = GridSpec::new(grid_denominator)?;
    let points = grid.points();
    let base = points.len();
    let profiles = (base as u128)
        .checked_pow(n as u32)
        .ok_or(Error::BudgetExceeded {
            required: u128::MAX,
            budget,
        })?;
    let per_profile = (n * base) as u128;
    let required = profiles * per_profile;
    if required > budget as u128 {
        return Err(Error::BudgetExceeded { required, budget });
    }

    let scan_profile = |p: usize| -> Option<(u64, UncompromisingWitness)> {
        let profile = grid.decode_profile(p, n);
        let output = mechanism.locate(&profile);
        let mut deviated = profile.clone();
        for agent in 0..n {
            let own = profile[agent];
            if own == output {
                continue;
            }
            for (d_idx, &deviation) in points.iter().enumerate() {
                let same_side = if own > output {
                    deviation >= output
                } else {
                    deviation <= output
                };
                if !same_side {
                    continue;
                }
                deviated[agent] = deviation;
                let moved_to = mechanism.locate(&deviated);
                if moved_to != output {
                    let position =
                        p as u64 * per_profile as u64 + (agent * base + d_idx) as u64 + 1;
                    return Some((
                        position,
                        UncompromisingWitness {
                            profile: profile.clone(),
                            agent,
                            deviation,
                            output,
                            moved_to,
                        },
                    ));
                }
            }
            deviated[agent] = own;
        }
        None
    };

    match par::find_map_first(profiles as usize, scan_profile) {
        Some((position, witness)) => Ok(AuditVerdict::failed(position, witness)),
        None => Ok(AuditVerdict::passed(required as u64)),
    }
}

// ---------------------------------------------------------------------------
// JSON representation
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
enum MechanismRepr {
    Median,
    Constant {
        s: String,
    },
    Dictator {
        agent: usize,
    },
    SnapDictator {
        agent: usize,
        #[serde(default = "default_targets")]
        targets: (String, String),
    },
    Gmm {
        n: usize,
        a: BTreeMap<String, String>,
    },
}

fn default_targets() -> (String, String) {
    ("1/4".into(), "3/4".into())
}

/// Subset key: member ids ascending, 1-based. Digits concatenate for
/// `n <= 9` ("123" is {1,2,3}); comma-separated otherwise.
fn subset_key(mask: usize, n: usize) -> String {
    let ids: Vec<String> = (0..n)
        .filter(|i| mask & (1 << i) != 0)
        .map(|i| (i + 1).to_string())
        .collect();
    if n <= 9 {
        ids.concat()
    } else {
        ids.join(",")
    }
}

fn parse_subset_key(key: &str, n: usize) -> Result<usize, Error> {
    let bad = || Error::DomainError(format!("bad subset key '{key}'"));
    let mut mask = 0usize;
    let ids: Vec<usize> = if key.is_empty() {
        Vec::new()
    } else if key.contains(',') {
        key.split(',')
            .map(|part| part.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?
    } else {
        key.chars()
            .map(|c| c.to_digit(10).map(|d| d as usize).ok_or_else(bad))
            .collect::<Result<_, _>>()?
    };
    for id in ids {
        if id == 0 || id > n {
            return Err(bad());
        }
        let bit = 1usize << (id - 1);
        if mask & bit != 0 {
            return Err(bad());
        }
        mask |= bit;
    }
    Ok(mask)
}

impl Serialize for MechanismSpec {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        let repr = match self {
            MechanismSpec::Median => MechanismRepr::Median,
            MechanismSpec::Constant(s) => MechanismRepr::Constant { s: s.to_string() },
            MechanismSpec::Dictator(agent) => MechanismRepr::Dictator { agent: agent + 1 },
            MechanismSpec::SnapDictator { agent, targets } => MechanismRepr::SnapDictator {
                agent: agent + 1,
                targets: (targets.0.to_string(), targets.1.to_string()),
            },
            MechanismSpec::Gmm(spec) => {
                let mut a = BTreeMap::new();
                for mask in 0..1usize << spec.n() {
                    a.insert(
                        subset_key(mask, spec.n()),
                        format_rational(&spec.threshold(mask)),
                    );
                }
                MechanismRepr::Gmm { n: spec.n(), a }
            }
        };
        repr.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for MechanismSpec {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let repr = MechanismRepr::deserialize(de)?;
        let parse_loc = |text: &str| Location::parse(text).map_err(de::Error::custom);
        Ok(match repr {
            MechanismRepr::Median => MechanismSpec::Median,
            MechanismRepr::Constant { s } => MechanismSpec::Constant(parse_loc(&s)?),
            MechanismRepr::Dictator { agent } => {
                if agent == 0 {
                    return Err(de::Error::custom("agent ids are 1-based"));
                }
                MechanismSpec::Dictator(agent - 1)
            }
            MechanismRepr::SnapDictator { agent, targets } => {
                if agent == 0 {
                    return Err(de::Error::custom("agent ids are 1-based"));
                }
                MechanismSpec::SnapDictator {
                    agent: agent - 1,
                    targets: (parse_loc(&targets.0)?, parse_loc(&targets.1)?),
                }
            }
            MechanismRepr::Gmm { n, a } => {
                if n == 0 || n > EXPLICIT_GMM_BOUND {
                    return Err(de::Error::custom(format!(
                        "gmm n={n} outside 1..={EXPLICIT_GMM_BOUND}"
                    )));
                }
                let size = 1usize << n;
                if a.len() != size {
                    return Err(de::Error::custom(format!(
                        "gmm table has {} subsets, expected {size}",
                        a.len()
                    )));
                }
                let mut thresholds = vec![None; size];
                for (key, value) in &a {
                    let mask = parse_subset_key(key, n).map_err(de::Error::custom)?;
                    if thresholds[mask].is_some() {
                        return Err(de::Error::custom(format!("duplicate subset '{key}'")));
                    }
                    thresholds[mask] = Some(parse_rational(value).map_err(de::Error::custom)?);
                }
                let table: Vec<Rational> = thresholds
                    .into_iter()
                    .collect::<Option<_>>()
                    .ok_or_else(|| de::Error::custom("gmm table is missing subsets"))?;
                MechanismSpec::Gmm(GmmSpec::new(n, table).map_err(de::Error::custom)?)
            }
        })
    }
}
