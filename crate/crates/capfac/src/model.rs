//! Domain types, the induced travel/stay subgame, and its equilibrium.
//!
//! An instance is a profile of agent locations on `[0,1]` plus a capacity
//! `k`. Once a facility location `s` is fixed, each agent chooses to travel
//! or stay; travelers are served in priority order (closer first, ties by
//! ascending agent id) up to capacity. A served agent gets `1 - d(s, x_i)`,
//! a traveling-but-unserved agent pays `-d(s, x_i)`, a staying agent gets 0.
//!
//! The equilibrium of that subgame is essentially unique: the `k` closest
//! agents travel and are served, everyone else stays. [`resolve_equilibrium`]
//! returns that canonical outcome directly; [`enumerate_subgame_equilibria`]
//! brute-forces all `2^n` action profiles and exists to validate the
//! shortcut (every equilibrium yields the same utility vector).
//!
//! Agent ids are 0-based indices into the location list throughout the
//! library; the JSON interfaces are 1-based.

use crate::error::Error;
use crate::rational::{format_rational, parse_rational, Rational};
use num_traits::Zero;
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;

/// Largest `n` for which the `2^n` equilibrium enumeration will run.
pub const EXHAUSTIVE_BOUND: usize = 12;

/// A point on the unit interval, exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Location(Rational);

impl Location {
    pub fn new(value: Rational) -> Result<Self, Error> {
        if value < Rational::zero() || value > Rational::from_integer(1) {
            return Err(Error::InvalidLocation(format_rational(&value)));
        }
        Ok(Location(value))
    }

    /// For values already known to lie in `[0,1]` (grid points, medians of
    /// valid locations, min/max combinations of valid thresholds).
    pub(crate) fn new_unchecked(value: Rational) -> Self {
        debug_assert!(value >= Rational::zero() && value <= Rational::from_integer(1));
        Location(value)
    }

    pub fn from_ratio(numer: i128, denom: i128) -> Result<Self, Error> {
        Location::new(Rational::new(numer, denom))
    }

    pub fn parse(text: &str) -> Result<Self, Error> {
        Location::new(parse_rational(text)?)
    }

    pub fn value(&self) -> Rational {
        self.0
    }

    pub const ZERO: Location = Location(Rational::new_raw(0, 1));
    pub const ONE: Location = Location(Rational::new_raw(1, 1));
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_rational(&self.0))
    }
}

impl Serialize for Location {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&format_rational(&self.0))
    }
}

impl<'de> Deserialize<'de> for Location {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let text = String::deserialize(de)?;
        Location::parse(&text).map_err(de::Error::custom)
    }
}

/// Exact distance `|a - b|`.
pub fn distance(a: Location, b: Location) -> Rational {
    let d = a.value() - b.value();
    if d < Rational::zero() {
        -d
    } else {
        d
    }
}

/// An agent location profile plus the facility capacity.
///
/// Locations are indexed by agent id (0-based here, 1-based in JSON); they
/// need not be sorted or distinct. Capacity satisfies `1 <= k <= n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    locations: Vec<Location>,
    capacity: usize,
}

impl Instance {
    pub fn new(locations: Vec<Location>, capacity: usize) -> Result<Self, Error> {
        if locations.is_empty() {
            return Err(Error::InvalidInstance("no agents".into()));
        }
        if capacity == 0 || capacity > locations.len() {
            return Err(Error::InvalidInstance(format!(
                "capacity {} outside 1..={}",
                capacity,
                locations.len()
            )));
        }
        Ok(Instance {
            locations,
            capacity,
        })
    }

    pub fn n(&self) -> usize {
        self.locations.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn location(&self, agent: usize) -> Location {
        self.locations[agent]
    }
}

impl Serialize for Instance {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = ser.serialize_struct("Instance", 2)?;
        st.serialize_field("locations", &self.locations)?;
        st.serialize_field("k", &self.capacity)?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for Instance {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            locations: Vec<Location>,
            k: usize,
        }
        let raw = Raw::deserialize(de)?;
        Instance::new(raw.locations, raw.k).map_err(de::Error::custom)
    }
}

/// One agent's move in the induced subgame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Action {
    Stay,
    Travel,
}

/// A full action profile of the subgame, indexed by agent id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ActionProfile(pub Vec<Action>);

impl ActionProfile {
    pub fn travelers(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, a)| **a == Action::Travel)
            .map(|(i, _)| i)
    }
}

/// The serving order at a facility location: closer agents first,
/// equidistant agents by ascending id. A strict total order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Priority {
    order: Vec<usize>,
}

impl Priority {
    /// Agent ids from highest to lowest priority.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// True when `a` is served before `b`.
    pub fn precedes(&self, a: usize, b: usize) -> bool {
        let rank = |agent| self.order.iter().position(|&i| i == agent).unwrap();
        rank(a) < rank(b)
    }
}

/// Distance-based serving order at `s` with ascending-id tie-breaking.
pub fn priority(instance: &Instance, s: Location) -> Priority {
    let mut order: Vec<usize> = (0..instance.n()).collect();
    order.sort_by(|&a, &b| {
        distance(s, instance.location(a))
            .cmp(&distance(s, instance.location(b)))
            .then(a.cmp(&b))
    });
    Priority { order }
}

/// The canonical equilibrium outcome: who is served and every agent's
/// ex-post utility.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EquilibriumOutcome {
    served: Vec<usize>,
    utilities: Vec<Rational>,
}

impl EquilibriumOutcome {
    /// Served agent ids in ascending order; always exactly
    /// `min(n, k)` of them.
    pub fn served(&self) -> &[usize] {
        &self.served
    }

    pub fn is_served(&self, agent: usize) -> bool {
        self.served.binary_search(&agent).is_ok()
    }

    /// Per-agent ex-post utilities, indexed by agent id.
    pub fn utilities(&self) -> &[Rational] {
        &self.utilities
    }

    pub fn utility(&self, agent: usize) -> Rational {
        self.utilities[agent]
    }
}

impl Serialize for EquilibriumOutcome {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = ser.serialize_struct("EquilibriumOutcome", 2)?;
        let served_one_based: Vec<usize> = self.served.iter().map(|i| i + 1).collect();
        st.serialize_field("served", &served_one_based)?;
        let utilities: Vec<String> = self.utilities.iter().map(format_rational).collect();
        st.serialize_field("utilities", &utilities)?;
        st.end()
    }
}

/// Resolves the subgame at facility location `s` to its canonical
/// equilibrium: the `min(n,k)` highest-priority agents are served.
pub fn resolve_equilibrium(instance: &Instance, s: Location) -> EquilibriumOutcome {
    let k = instance.capacity().min(instance.n());
    let prio = priority(instance, s);
    let mut served: Vec<usize> = prio.order()[..k].to_vec();
    served.sort_unstable();
    let utilities = (0..instance.n())
        .map(|i| {
            if served.binary_search(&i).is_ok() {
                Rational::from_integer(1) - distance(s, instance.location(i))
            } else {
                Rational::zero()
            }
        })
        .collect();
    EquilibriumOutcome { served, utilities }
}

/// One agent's equilibrium utility at `s`, without building the full
/// outcome. Used by the audit inner loops.
pub fn agent_utility(instance: &Instance, s: Location, agent: usize) -> Rational {
    utility_at(instance.locations(), agent, s, instance.capacity())
}

/// Rank-counting route to a single utility: the agent is served exactly
/// when fewer than `k` others are strictly closer or tie with a lower id.
pub(crate) fn utility_at(locations: &[Location], agent: usize, s: Location, k: usize) -> Rational {
    let d = distance(s, locations[agent]);
    let mut ahead = 0usize;
    for (j, &xj) in locations.iter().enumerate() {
        if j == agent {
            continue;
        }
        let dj = distance(s, xj);
        if dj < d || (dj == d && j < agent) {
            ahead += 1;
            if ahead >= k {
                return Rational::zero();
            }
        }
    }
    Rational::from_integer(1) - d
}

/// Payoff of `agent` under an arbitrary action profile of the subgame.
fn subgame_payoff(
    instance: &Instance,
    s: Location,
    profile: &ActionProfile,
    agent: usize,
) -> Rational {
    if profile.0[agent] == Action::Stay {
        return Rational::zero();
    }
    let k = instance.capacity().min(instance.n());
    let d = distance(s, instance.location(agent));
    let mut ahead = 0usize;
    for j in profile.travelers() {
        if j == agent {
            continue;
        }
        let dj = distance(s, instance.location(j));
        if dj < d || (dj == d && j < agent) {
            ahead += 1;
        }
    }
    if ahead < k {
        Rational::from_integer(1) - d
    } else {
        -d
    }
}

/// All pure ex-post Nash equilibria of the subgame, by brute force over the
/// `2^n` action profiles. Exists to validate [`resolve_equilibrium`].
pub fn enumerate_subgame_equilibria(
    instance: &Instance,
    s: Location,
) -> Result<Vec<ActionProfile>, Error> {
    let n = instance.n();
    if n > EXHAUSTIVE_BOUND {
        return Err(Error::InstanceTooLarge {
            n,
            bound: EXHAUSTIVE_BOUND,
        });
    }
    let mut equilibria = Vec::new();
    for mask in 0u32..(1 << n) {
        let profile = ActionProfile(
            (0..n)
                .map(|i| {
                    if mask & (1 << i) != 0 {
                        Action::Travel
                    } else {
                        Action::Stay
                    }
                })
                .collect(),
        );
        let is_equilibrium = (0..n).all(|agent| {
            let mut flipped = profile.clone();
            flipped.0[agent] = match profile.0[agent] {
                Action::Stay => Action::Travel,
                Action::Travel => Action::Stay,
            };
            subgame_payoff(instance, s, &profile, agent)
                >= subgame_payoff(instance, s, &flipped, agent)
        });
        if is_equilibrium {
            equilibria.push(profile);
        }
    }
    Ok(equilibria)
}

/// Served set and utility vector realized by an action profile, for
/// comparing enumerated equilibria against the canonical outcome.
pub fn profile_outcome(
    instance: &Instance,
    s: Location,
    profile: &ActionProfile,
) -> (Vec<usize>, Vec<Rational>) {
    let k = instance.capacity().min(instance.n());
    let prio = priority(instance, s);
    let mut served: Vec<usize> = prio
        .order()
        .iter()
        .copied()
        .filter(|&i| profile.0[i] == Action::Travel)
        .take(k)
        .collect();
    served.sort_unstable();
    let utilities = (0..instance.n())
        .map(|i| subgame_payoff(instance, s, profile, i))
        .collect();
    (served, utilities)
}

/// Agent `agent`'s equilibrium utility sampled at each grid point.
/// The grid must be sorted ascending.
pub fn utility_curve(instance: &Instance, agent: usize, grid: &[Location]) -> Vec<Rational> {
    debug_assert!(grid.windows(2).all(|w| w[0] <= w[1]), "grid must be sorted");
    grid.iter()
        .map(|&s| resolve_equilibrium(instance, s).utility(agent))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::rational;
    use crate::rng::SplitMix64;
    use num_integer::Integer;

    fn loc(n: i128, d: i128) -> Location {
        Location::from_ratio(n, d).unwrap()
    }

    fn inst(points: &[(i128, i128)], k: usize) -> Instance {
        Instance::new(points.iter().map(|&(n, d)| loc(n, d)).collect(), k).unwrap()
    }

    #[test]
    fn distance_examples() {
        assert_eq!(distance(loc(1, 4), loc(3, 4)), rational(1, 2));
        assert_eq!(distance(loc(3, 7), loc(3, 7)), rational(0, 1));
        assert_eq!(distance(loc(3, 4), loc(3, 8)), rational(3, 8));
    }

    #[test]
    fn location_rejects_out_of_range() {
        assert!(Location::new(rational(-1, 10)).is_err());
        assert!(Location::new(rational(11, 10)).is_err());
        assert!(Location::parse("1").is_ok());
    }

    #[test]
    fn instance_validates_capacity() {
        assert!(Instance::new(vec![loc(0, 1)], 0).is_err());
        assert!(Instance::new(vec![loc(0, 1)], 2).is_err());
        assert!(Instance::new(vec![], 1).is_err());
    }

    // Pairwise oracle: the claimed order must satisfy the defining relation
    // of the priority (distance, then id) between every pair.
    fn assert_priority_consistent(instance: &Instance, s: Location, prio: &Priority) {
        let order = prio.order();
        assert_eq!(order.len(), instance.n());
        for a in 0..order.len() {
            for b in (a + 1)..order.len() {
                let (i, j) = (order[a], order[b]);
                let (di, dj) = (
                    distance(s, instance.location(i)),
                    distance(s, instance.location(j)),
                );
                assert!(
                    di < dj || (di == dj && i < j),
                    "order {order:?} violates priority between {i} and {j}"
                );
            }
        }
    }

    #[test]
    fn priority_sorts_by_distance_then_id() {
        let instance = inst(&[(1, 5), (2, 5), (9, 10)], 2);
        let s = loc(7, 20);
        let prio = priority(&instance, s);
        assert_eq!(prio.order(), &[1, 0, 2]);
        assert_priority_consistent(&instance, s, &prio);

        let tied = inst(&[(1, 4), (1, 4)], 1);
        assert_eq!(priority(&tied, loc(1, 2)).order(), &[0, 1]);

        // Agent at 1/4 precedes the agent at 3/8 when s = 1/4.
        let example = inst(&[(1, 4), (3, 8)], 1);
        assert!(priority(&example, loc(1, 4)).precedes(0, 1));
    }

    #[test]
    fn resolver_matches_exhaustive_enumeration_on_fixed_instance() {
        // Oracle first: enumerate all 8 action profiles and check the
        // resolver agrees with every equilibrium.
        let instance = inst(&[(1, 5), (2, 5), (9, 10)], 2);
        let s = loc(7, 20);
        let outcome = resolve_equilibrium(&instance, s);
        let equilibria = enumerate_subgame_equilibria(&instance, s).unwrap();
        assert_eq!(equilibria.len(), 1);
        let (served, utilities) = profile_outcome(&instance, s, &equilibria[0]);
        assert_eq!(outcome.served(), served.as_slice());
        assert_eq!(outcome.utilities(), utilities.as_slice());

        // Frozen from the enumeration oracle.
        assert_eq!(outcome.served(), &[0, 1]);
        assert_eq!(
            outcome.utilities(),
            &[rational(17, 20), rational(19, 20), rational(0, 1)]
        );
    }

    #[test]
    fn capacity_n_serves_everyone() {
        let instance = inst(&[(0, 1), (1, 2), (1, 1)], 3);
        let s = loc(1, 4);
        let outcome = resolve_equilibrium(&instance, s);
        assert_eq!(outcome.served(), &[0, 1, 2]);
        for i in 0..3 {
            assert_eq!(
                outcome.utility(i),
                Rational::from_integer(1) - distance(s, instance.location(i))
            );
        }
    }

    #[test]
    fn colocated_agents_crowd_out_the_farther_one() {
        // Three agents at 1/4 outrank the agent at 3/8 for any k < 4.
        for k in 1..4 {
            let instance = inst(&[(1, 4), (1, 4), (1, 4), (3, 8)], k);
            let outcome = resolve_equilibrium(&instance, loc(1, 4));
            assert!(!outcome.is_served(3));
            assert_eq!(outcome.utility(3), rational(0, 1));
        }
    }

    #[test]
    fn unique_equilibrium_when_travel_strictly_dominates() {
        let instance = inst(&[(1, 5), (2, 5), (9, 10)], 3);
        let equilibria = enumerate_subgame_equilibria(&instance, loc(1, 2)).unwrap();
        assert_eq!(equilibria.len(), 1);
        assert!(equilibria[0].0.iter().all(|a| *a == Action::Travel));
    }

    #[test]
    fn boundary_distance_creates_equivalent_equilibria() {
        // Served agent at distance exactly 1 is indifferent: both action
        // choices are equilibria, with identical utility vectors.
        let instance = inst(&[(0, 1)], 1);
        let s = Location::ONE;
        let equilibria = enumerate_subgame_equilibria(&instance, s).unwrap();
        assert_eq!(equilibria.len(), 2);
        for eq in &equilibria {
            let (_, utilities) = profile_outcome(&instance, s, eq);
            assert_eq!(utilities, vec![rational(0, 1)]);
        }
        assert_eq!(
            resolve_equilibrium(&instance, s).utilities(),
            &[rational(0, 1)]
        );
    }

    #[test]
    fn enumeration_rejects_large_instances() {
        let instance = Instance::new(vec![loc(1, 2); 13], 2).unwrap();
        assert_eq!(
            enumerate_subgame_equilibria(&instance, loc(0, 1)),
            Err(Error::InstanceTooLarge { n: 13, bound: 12 })
        );
    }

    fn grid(q: i128) -> Vec<Location> {
        (0..=q).map(|j| loc(j, q)).collect()
    }

    #[test]
    fn utility_curve_examples() {
        // k = n: the curve is 1 - d(s, x_i), peaked at x_i.
        let instance = inst(&[(1, 4), (3, 4)], 2);
        let g = grid(4);
        let curve = utility_curve(&instance, 0, &g);
        for (point, value) in g.iter().zip(&curve) {
            assert_eq!(
                *value,
                Rational::from_integer(1) - distance(*point, loc(1, 4))
            );
        }

        let crowded = inst(&[(0, 1), (0, 1), (1, 1)], 1);
        assert_eq!(
            utility_curve(&crowded, 2, &[loc(0, 1), loc(1, 2), loc(1, 1)]),
            vec![rational(0, 1), rational(0, 1), rational(1, 1)]
        );
    }

    fn random_instance(rng: &mut SplitMix64, max_n: usize, q: i128) -> Instance {
        let n = rng.range_inclusive(1, max_n);
        let k = rng.range_inclusive(1, n);
        let locations = (0..n)
            .map(|_| loc(rng.below(q as usize + 1) as i128, q))
            .collect();
        Instance::new(locations, k).unwrap()
    }

    #[test]
    fn resolver_agrees_with_enumerator_on_random_instances() {
        let mut rng = SplitMix64::new(0xC0FFEE);
        for _ in 0..120 {
            let instance = random_instance(&mut rng, 5, 6);
            for s in grid(6) {
                let outcome = resolve_equilibrium(&instance, s);
                let k = instance.capacity().min(instance.n());
                assert_eq!(outcome.served().len(), k);
                let equilibria = enumerate_subgame_equilibria(&instance, s).unwrap();
                assert!(!equilibria.is_empty());
                let boundary = outcome
                    .served()
                    .iter()
                    .any(|&i| outcome.utility(i) == rational(0, 1));
                for eq in &equilibria {
                    let (served, utilities) = profile_outcome(&instance, s, eq);
                    assert_eq!(utilities, outcome.utilities(), "utility invariance");
                    if !boundary {
                        assert_eq!(served, outcome.served(), "served set unique");
                    } else {
                        // Equilibria differ only in zero-utility members.
                        for &i in &served {
                            assert!(outcome.is_served(i) || outcome.utility(i) == rational(0, 1));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn utility_curves_weakly_single_peaked_on_random_instances() {
        let mut rng = SplitMix64::new(0xBEEF);
        let g = grid(6);
        for _ in 0..150 {
            let instance = random_instance(&mut rng, 5, 6);
            for agent in 0..instance.n() {
                let x = instance.location(agent);
                let curve = utility_curve(&instance, agent, &g);
                for w in 0..g.len() - 1 {
                    let (s, s_next) = (g[w], g[w + 1]);
                    if s_next <= x {
                        assert!(curve[w] <= curve[w + 1], "rising side dips");
                    }
                    if s >= x {
                        assert!(curve[w] >= curve[w + 1], "falling side rises");
                    }
                }
            }
        }
    }

    #[test]
    fn rank_counting_utility_agrees_with_the_resolver() {
        // Two routes to the same number: sorting the full priority order
        // versus counting who is ahead.
        let mut rng = SplitMix64::new(0x2207);
        for _ in 0..200 {
            let instance = random_instance(&mut rng, 6, 8);
            for s in grid(8) {
                let outcome = resolve_equilibrium(&instance, s);
                for agent in 0..instance.n() {
                    assert_eq!(
                        agent_utility(&instance, s, agent),
                        outcome.utility(agent),
                        "{instance:?} at s={s}"
                    );
                }
            }
        }
    }

    #[test]
    fn exact_arithmetic_denominators_divide_input_lcm() {
        let mut rng = SplitMix64::new(0xFEED);
        for _ in 0..200 {
            let denoms = [
                2 + rng.below(29) as i128,
                2 + rng.below(29) as i128,
                2 + rng.below(29) as i128,
            ];
            let points: Vec<Location> = denoms
                .iter()
                .map(|&d| loc(rng.below(d as usize + 1) as i128, d))
                .collect();
            let lcm = denoms.iter().fold(1i128, |acc, &d| acc.lcm(&d));
            let d = distance(points[0], points[1]);
            assert_eq!(lcm % d.denom(), 0, "distance denominator divides lcm");
            let instance = Instance::new(points.clone(), 2).unwrap();
            let outcome = resolve_equilibrium(&instance, points[2]);
            for u in outcome.utilities() {
                assert_eq!(lcm % u.denom(), 0, "utility denominator divides lcm");
            }
        }
    }

    #[test]
    fn instance_json_round_trip() {
        let text = r#"{"locations":["1/4","0.375","1"],"k":2}"#;
        let instance: Instance = serde_json::from_str(text).unwrap();
        assert_eq!(instance.location(1), loc(3, 8));
        let emitted = serde_json::to_string(&instance).unwrap();
        assert_eq!(emitted, r#"{"locations":["1/4","3/8","1"],"k":2}"#);
        let again: Instance = serde_json::from_str(&emitted).unwrap();
        assert_eq!(again, instance);
    }
}
