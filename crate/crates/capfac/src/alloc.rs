//! Location-allocation mechanisms: the facility location *and* the served
//! set are chosen from reports.
//!
//! Excludability changes the strategic picture. A location-only mechanism
//! leaves serving to the equilibrium, which depends on true locations; a
//! location-allocation mechanism pins the served set to the reports, so an
//! agent can misreport purely to get allocated. Under allocation-anonymity
//! (an agent with a unique report is allocated independently of its label)
//! no such mechanism is DIC once capacity binds. [`impossibility_sweep`]
//! verifies that exhaustively on a two-point grid by enumerating every
//! table, filtering the allocation-anonymous ones, and failing each in a
//! DIC audit; [`proof_replay`] exhibits the two-case deviation argument on
//! any given candidate.
//!
//! Mechanisms here are extensional: total tables from grid report profiles
//! to a pair `(s, A)` with `0 < |A| <= k`.

use crate::audit::{AuditVerdict, DicWitness};
use crate::error::Error;
use crate::model::{distance, Location};
use crate::par;
use crate::rational::Rational;
use num_traits::Zero;
use serde::{ser::SerializeStruct, Serialize, Serializer};

/// Enough for the full `(3, 2)` sweep on a two-point grid
/// (`12^8` tables) with headroom.
pub const DEFAULT_SWEEP_BUDGET: u64 = 1_000_000_000;

/// A set of agent ids as a bitmask (bit `i` is agent id `i`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgentSet(u64);

impl AgentSet {
    pub fn from_mask(mask: u64) -> Self {
        AgentSet(mask)
    }

    pub fn from_ids<I: IntoIterator<Item = usize>>(ids: I) -> Self {
        AgentSet(ids.into_iter().fold(0, |m, i| m | (1 << i)))
    }

    pub fn contains(&self, agent: usize) -> bool {
        self.0 & (1 << agent) != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn mask(&self) -> u64 {
        self.0
    }

    pub fn ids(&self) -> Vec<usize> {
        (0..64).filter(|i| self.contains(*i)).collect()
    }
}

impl Serialize for AgentSet {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        let one_based: Vec<usize> = self.ids().iter().map(|i| i + 1).collect();
        one_based.serialize(ser)
    }
}

/// True when the agent's location differs from every other agent's.
pub fn is_i_identifiable(profile: &[Location], agent: usize) -> bool {
    profile
        .iter()
        .enumerate()
        .all(|(j, &x)| j == agent || x != profile[agent])
}

/// One table row: a report profile and the chosen `(s, A)`.
#[derive(Clone, Debug, Serialize)]
pub struct TableEntry {
    pub profile: Vec<Location>,
    pub location: Location,
    pub allocated: AgentSet,
}

/// A total table from grid report profiles to `(s, A)` pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocationAllocationMechanism {
    points: Vec<Location>,
    n: usize,
    k: usize,
    table: Vec<Option<(Location, AgentSet)>>,
}

impl LocationAllocationMechanism {
    /// Builds the table by evaluating `rule` on every grid profile.
    pub fn total(
        points: Vec<Location>,
        n: usize,
        k: usize,
        rule: impl Fn(&[Location]) -> (Location, AgentSet),
    ) -> Result<Self, Error> {
        let mut mech = LocationAllocationMechanism::empty(points, n, k)?;
        let count = mech.profile_count();
        for p in 0..count {
            let profile = mech.decode_profile(p);
            let (location, allocated) = rule(&profile);
            mech.validate_pair(&allocated)?;
            mech.table[p] = Some((location, allocated));
        }
        Ok(mech)
    }

    fn empty(points: Vec<Location>, n: usize, k: usize) -> Result<Self, Error> {
        if points.is_empty() || points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::DomainError(
                "grid points must be sorted and distinct".into(),
            ));
        }
        if n == 0 || n > 64 || k == 0 || k > n {
            return Err(Error::DomainError(format!(
                "allocation mechanism needs 1 <= k <= n <= 64, got n={n}, k={k}"
            )));
        }
        let count = (points.len() as u128).pow(n as u32);
        if count > u32::MAX as u128 {
            return Err(Error::DomainError("grid domain too large".into()));
        }
        Ok(LocationAllocationMechanism {
            points,
            n,
            k,
            table: vec![None; count as usize],
        })
    }

    fn validate_pair(&self, allocated: &AgentSet) -> Result<(), Error> {
        if allocated.is_empty() || allocated.len() > self.k || allocated.mask() >> self.n != 0 {
            return Err(Error::DomainError(format!(
                "allocation {:?} outside 0 < |A| <= {}",
                allocated.ids(),
                self.k
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn points(&self) -> &[Location] {
        &self.points
    }

    pub fn profile_count(&self) -> usize {
        self.table.len()
    }

    pub fn decode_profile(&self, index: usize) -> Vec<Location> {
        let mut out = vec![self.points[0]; self.n];
        let mut rest = index;
        for slot in out.iter_mut().rev() {
            *slot = self.points[rest % self.points.len()];
            rest /= self.points.len();
        }
        out
    }

    pub fn profile_index(&self, profile: &[Location]) -> Result<usize, Error> {
        let mut index = 0usize;
        for &x in profile {
            let pos = self
                .points
                .binary_search(&x)
                .map_err(|_| Error::DomainIncomplete(format!("{x} is not a grid point")))?;
            index = index * self.points.len() + pos;
        }
        Ok(index)
    }

    /// `(s, A)` for a report profile.
    pub fn output(&self, profile: &[Location]) -> Result<(Location, AgentSet), Error> {
        let index = self.profile_index(profile)?;
        self.table[index].ok_or_else(|| {
            Error::DomainIncomplete(format!(
                "{:?}",
                profile.iter().map(|x| x.to_string()).collect::<Vec<_>>()
            ))
        })
    }

    pub fn entries(&self) -> Vec<TableEntry> {
        (0..self.profile_count())
            .filter_map(|p| {
                self.table[p].map(|(location, allocated)| TableEntry {
                    profile: self.decode_profile(p),
                    location,
                    allocated,
                })
            })
            .collect()
    }
}

impl Serialize for LocationAllocationMechanism {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        let mut st = ser.serialize_struct("LocationAllocationMechanism", 4)?;
        st.serialize_field("n", &self.n)?;
        st.serialize_field("k", &self.k)?;
        st.serialize_field("grid", &self.points)?;
        st.serialize_field("entries", &self.entries())?;
        st.end()
    }
}

/// Serves the `k` reports closest to the median report; ties by distance,
/// then report value, then agent id. The value-before-id tie-break makes
/// the allocation depend on reports only through their multiset, so the
/// table is allocation-anonymous.
pub fn closest_allocation_table(
    points: Vec<Location>,
    n: usize,
    k: usize,
) -> Result<LocationAllocationMechanism, Error> {
    LocationAllocationMechanism::total(points, n, k, |profile| {
        let mut sorted = profile.to_vec();
        sorted.sort_unstable();
        let s = sorted[sorted.len().div_ceil(2) - 1];
        let mut order: Vec<usize> = (0..profile.len()).collect();
        order.sort_by(|&a, &b| {
            distance(s, profile[a])
                .cmp(&distance(s, profile[b]))
                .then(profile[a].cmp(&profile[b]))
                .then(a.cmp(&b))
        });
        (s, AgentSet::from_ids(order.into_iter().take(k)))
    })
}

/// Always allocates agents `1..=k` and reads the location off agent 1's
/// report. DIC (nobody outside can ever join; insiders only hurt
/// themselves) but flagrantly label-dependent.
pub fn dictatorial_allocation_table(
    points: Vec<Location>,
    n: usize,
    k: usize,
) -> Result<LocationAllocationMechanism, Error> {
    let fixed = AgentSet::from_ids(0..k);
    LocationAllocationMechanism::total(points, n, k, |profile| (profile[0], fixed))
}

/// Median location with the equilibrium served set computed from reports
/// as if they were true locations (distance then id). Mimics the
/// location-only median on the grid.
pub fn equilibrium_mimic_table(
    points: Vec<Location>,
    n: usize,
    k: usize,
) -> Result<LocationAllocationMechanism, Error> {
    LocationAllocationMechanism::total(points, n, k, |profile| {
        let mut sorted = profile.to_vec();
        sorted.sort_unstable();
        let s = sorted[sorted.len().div_ceil(2) - 1];
        let mut order: Vec<usize> = (0..profile.len()).collect();
        order.sort_by(|&a, &b| {
            distance(s, profile[a])
                .cmp(&distance(s, profile[b]))
                .then(a.cmp(&b))
        });
        (s, AgentSet::from_ids(order.into_iter().take(k)))
    })
}

/// A violation of allocation-anonymity: agent `agent` holds the unique
/// report in `profile`, yet after swapping reports with `other` the
/// membership does not carry over.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnonymityWitness {
    pub profile: Vec<Location>,
    pub agent: usize,
    pub other: usize,
    pub swapped_profile: Vec<Location>,
    pub allocated_before: bool,
    pub allocated_after: bool,
}

impl Serialize for AnonymityWitness {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        let mut st = ser.serialize_struct("AnonymityWitness", 6)?;
        st.serialize_field("profile", &self.profile)?;
        st.serialize_field("agent", &(self.agent + 1))?;
        st.serialize_field("other", &(self.other + 1))?;
        st.serialize_field("swapped_profile", &self.swapped_profile)?;
        st.serialize_field("allocated_before", &self.allocated_before)?;
        st.serialize_field("allocated_after", &self.allocated_after)?;
        st.end()
    }
}

/// Checks allocation-anonymity on every i-identifiable grid profile: the
/// identifiable agent's membership must follow its report through any swap
/// with another agent.
pub fn check_allocation_anonymous(
    mechanism: &LocationAllocationMechanism,
) -> Result<AuditVerdict<AnonymityWitness>, Error> {
    let n = mechanism.n();
    let mut checked: u64 = 0;
    for p in 0..mechanism.profile_count() {
        let profile = mechanism.decode_profile(p);
        let (_, allocated) = mechanism.output(&profile)?;
        for agent in 0..n {
            if !is_i_identifiable(&profile, agent) {
                continue;
            }
            for other in 0..n {
                if other == agent {
                    continue;
                }
                checked += 1;
                let mut swapped = profile.clone();
                swapped.swap(agent, other);
                let (_, swapped_alloc) = mechanism.output(&swapped)?;
                let before = allocated.contains(agent);
                let after = swapped_alloc.contains(other);
                if before != after {
                    return Ok(AuditVerdict::failed(
                        checked,
                        AnonymityWitness {
                            profile,
                            agent,
                            other,
                            swapped_profile: swapped,
                            allocated_before: before,
                            allocated_after: after,
                        },
                    ));
                }
            }
        }
    }
    Ok(AuditVerdict::passed(checked))
}

fn alloc_utility(
    mechanism: &LocationAllocationMechanism,
    reports: &[Location],
    agent: usize,
    true_location: Location,
) -> Result<Rational, Error> {
    let (s, allocated) = mechanism.output(reports)?;
    Ok(if allocated.contains(agent) {
        Rational::from_integer(1) - distance(s, true_location)
    } else {
        Rational::zero()
    })
}

/// DIC audit for a location-allocation table: utilities flow through both
/// the location and the allocation, which depend only on reports, so a
/// violation found at any others-true profile holds at all of them. Scan
/// order matches the location-only audit.
pub fn audit_dic_alloc(
    mechanism: &LocationAllocationMechanism,
) -> Result<AuditVerdict<DicWitness>, Error> {
    let n = mechanism.n();
    let g = mechanism.points().len();
    let others = (g as u64).pow(n as u32 - 1);
    let per_pair = others * others;
    let total = n as u64 * (g as u64) * (g as u64) * per_pair;

    let mut reports = vec![Location::ZERO; n];
    for agent in 0..n {
        for (own_idx, &own) in mechanism.points().iter().enumerate() {
            for (dev_idx, &dev) in mechanism.points().iter().enumerate() {
                for others_idx in 0..others {
                    decode_others(
                        mechanism.points(),
                        others_idx as usize,
                        agent,
                        own,
                        &mut reports,
                    );
                    let truthful = alloc_utility(mechanism, &reports, agent, own)?;
                    reports[agent] = dev;
                    let deviating = alloc_utility(mechanism, &reports, agent, own)?;
                    if deviating > truthful {
                        // Utilities do not involve the others' true
                        // locations, so the lexicographically first true
                        // profile completes the witness.
                        let others_true = vec![mechanism.points()[0]; n - 1];
                        let mut others_reports = Vec::with_capacity(n - 1);
                        for (j, &r) in reports.iter().enumerate() {
                            if j != agent {
                                others_reports.push(r);
                            }
                        }
                        let position = ((agent * g + own_idx) * g + dev_idx) as u64 * per_pair
                            + others_idx * others
                            + 1;
                        return Ok(AuditVerdict::failed(
                            position,
                            DicWitness {
                                agent,
                                true_location: own,
                                deviation: dev,
                                others_reports,
                                others_true,
                                truthful_utility: truthful,
                                deviating_utility: deviating,
                            },
                        ));
                    }
                }
            }
        }
    }
    Ok(AuditVerdict::passed(total))
}

/// Re-evaluates a claimed allocation DIC violation from scratch.
pub fn verify_alloc_witness(mechanism: &LocationAllocationMechanism, witness: &DicWitness) -> bool {
    let truthful = alloc_utility(
        mechanism,
        &witness.truthful_reports(),
        witness.agent,
        witness.true_location,
    );
    let deviating = alloc_utility(
        mechanism,
        &witness.deviating_reports(),
        witness.agent,
        witness.true_location,
    );
    match (truthful, deviating) {
        (Ok(t), Ok(d)) => t == witness.truthful_utility && d == witness.deviating_utility && d > t,
        _ => false,
    }
}

fn decode_others(
    points: &[Location],
    others_index: usize,
    agent: usize,
    own: Location,
    buf: &mut [Location],
) {
    let mut rest = others_index;
    for slot in (0..buf.len()).rev() {
        if slot == agent {
            continue;
        }
        buf[slot] = points[rest % points.len()];
        rest /= points.len();
    }
    buf[agent] = own;
}

/// The two-case deviation argument replayed on a candidate mechanism.
///
/// At the all-3/4 profile some agent `i*` is allocated and some `j*` is
/// not. If `j*` reporting 1/2 gets allocated, that deviation is profitable
/// from the all-3/4 world (case 1). Otherwise anonymity forces `i*` out of
/// the allocation in the mirrored world where `i*` truly sits at 1/2, and
/// reporting 3/4 buys `i*` back in (case 2).
#[derive(Clone, Debug, Serialize)]
pub struct ProofReplay {
    pub case: u8,
    pub witness: DicWitness,
    pub base_location: Location,
    pub base_allocated: AgentSet,
    pub deviated_location: Location,
    pub deviated_allocated: AgentSet,
    /// The witness re-verifies against the table.
    pub verified: bool,
}

pub fn proof_replay(mechanism: &LocationAllocationMechanism) -> Result<ProofReplay, Error> {
    let n = mechanism.n();
    if mechanism.k() >= n {
        return Err(Error::DomainError(format!(
            "impossibility needs k < n, got k={}, n={n}",
            mechanism.k()
        )));
    }
    let half = Location::new(Rational::new(1, 2))?;
    let three_quarters = Location::new(Rational::new(3, 4))?;
    for required in [half, three_quarters] {
        if mechanism.points().binary_search(&required).is_err() {
            return Err(Error::DomainError(format!("grid must include {required}")));
        }
    }

    let base_profile = vec![three_quarters; n];
    let (base_location, base_allocated) = mechanism.output(&base_profile)?;
    let allocated_star = (0..n)
        .find(|&i| base_allocated.contains(i))
        .expect("allocation is nonempty");
    let excluded_star = (0..n)
        .find(|&i| !base_allocated.contains(i))
        .expect("|A| <= k < n");

    let mut deviated_profile = base_profile.clone();
    deviated_profile[excluded_star] = half;
    let (deviated_location, deviated_allocated) = mechanism.output(&deviated_profile)?;

    let (case, witness) = if deviated_allocated.contains(excluded_star) {
        // Case 1: j* (truly at 3/4) profits by reporting 1/2.
        let others = vec![three_quarters; n - 1];
        (
            1u8,
            DicWitness {
                agent: excluded_star,
                true_location: three_quarters,
                deviation: half,
                others_reports: others.clone(),
                others_true: others,
                truthful_utility: Rational::zero(),
                deviating_utility: Rational::from_integer(1)
                    - distance(deviated_location, three_quarters),
            },
        )
    } else {
        // Case 2: i* (truly at 1/2) profits by reporting 3/4.
        let mut mirrored = base_profile.clone();
        mirrored[allocated_star] = half;
        let truthful = alloc_utility(mechanism, &mirrored, allocated_star, half)?;
        let others = vec![three_quarters; n - 1];
        (
            2u8,
            DicWitness {
                agent: allocated_star,
                true_location: half,
                deviation: three_quarters,
                others_reports: others.clone(),
                others_true: others,
                truthful_utility: truthful,
                deviating_utility: Rational::from_integer(1) - distance(base_location, half),
            },
        )
    };
    let verified = verify_alloc_witness(mechanism, &witness);
    Ok(ProofReplay {
        case,
        witness,
        base_location,
        base_allocated,
        deviated_location,
        deviated_allocated,
        verified,
    })
}

/// A replayed deviation for one enumerated table, kept as an example in the
/// sweep report.
#[derive(Clone, Debug, Serialize)]
pub struct SweepExample {
    pub table_index: u64,
    pub mechanism: LocationAllocationMechanism,
    pub replay: ProofReplay,
}

/// Full enumeration of `(s, A)` tables on a two-point grid.
#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    pub n: usize,
    pub k: usize,
    pub grid: Vec<Location>,
    /// Tables scanned: `(g * #allowed sets)^(g^n)`, the closed-form count
    /// of assignments.
    pub enumerated: u64,
    pub anonymous: u64,
    pub dic_passing_anonymous: u64,
    pub case1: u64,
    pub case2: u64,
    pub case1_example: Option<SweepExample>,
    pub case2_example: Option<SweepExample>,
}

struct SweepAccumulator {
    anonymous: u64,
    dic_passing: u64,
    case1: u64,
    case2: u64,
    case1_first: Option<u64>,
    case2_first: Option<u64>,
    dic_passing_first: Option<u64>,
}

impl SweepAccumulator {
    fn merge(mut self, other: SweepAccumulator) -> SweepAccumulator {
        self.anonymous += other.anonymous;
        self.dic_passing += other.dic_passing;
        self.case1 += other.case1;
        self.case2 += other.case2;
        self.case1_first = merge_min(self.case1_first, other.case1_first);
        self.case2_first = merge_min(self.case2_first, other.case2_first);
        self.dic_passing_first = merge_min(self.dic_passing_first, other.dic_passing_first);
        self
    }
}

fn merge_min(a: Option<u64>, b: Option<u64>) -> Option<u64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Precomputed structure for scanning raw table encodings without
/// allocating per table.
struct SweepFrame {
    n: usize,
    g: usize,
    profile_total: usize,
    choices: u64,
    sets: Vec<u64>,
    /// (profile, agent i, swapped profile, agent j) anonymity constraints.
    constraints: Vec<(u32, u8, u32, u8)>,
    /// (truthful profile, deviating profile, agent, own report index).
    deviations: Vec<(u32, u32, u8, u8)>,
    /// utility rank by (location index * g + own report index) * 2 + allocated.
    ranks: Vec<u8>,
}

impl SweepFrame {
    fn build(points: &[Location], n: usize, k: usize) -> SweepFrame {
        let g = points.len();
        let profile_total = g.pow(n as u32);
        let sets: Vec<u64> = (1u64..1 << n)
            .filter(|m| m.count_ones() as usize <= k)
            .collect();
        let choices = (g as u64) * sets.len() as u64;

        let decode = |index: usize| -> Vec<usize> {
            let mut out = vec![0usize; n];
            let mut rest = index;
            for slot in out.iter_mut().rev() {
                *slot = rest % g;
                rest /= g;
            }
            out
        };
        let encode = |digits: &[usize]| -> usize { digits.iter().fold(0, |a, &d| a * g + d) };

        let mut constraints = Vec::new();
        for p in 0..profile_total {
            let digits = decode(p);
            for i in 0..n {
                if digits
                    .iter()
                    .enumerate()
                    .any(|(j, &d)| j != i && d == digits[i])
                {
                    continue;
                }
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let mut swapped = digits.clone();
                    swapped.swap(i, j);
                    constraints.push((p as u32, i as u8, encode(&swapped) as u32, j as u8));
                }
            }
        }

        // DIC deviations with the others'-true quantifier collapsed: the
        // utility of a table mechanism never reads others' true locations.
        let others_total = g.pow(n as u32 - 1);
        let mut deviations = Vec::new();
        for agent in 0..n {
            for own in 0..g {
                for dev in 0..g {
                    if dev == own {
                        continue;
                    }
                    for others in 0..others_total {
                        let mut digits = vec![0usize; n];
                        let mut rest = others;
                        for slot in (0..n).rev() {
                            if slot == agent {
                                continue;
                            }
                            digits[slot] = rest % g;
                            rest /= g;
                        }
                        digits[agent] = own;
                        let truthful = encode(&digits);
                        digits[agent] = dev;
                        let deviating = encode(&digits);
                        deviations.push((
                            truthful as u32,
                            deviating as u32,
                            agent as u8,
                            own as u8,
                        ));
                    }
                }
            }
        }

        // Utility values come from a fixed small set; comparing ranks is
        // comparing utilities.
        let mut values: Vec<Rational> = vec![Rational::zero()];
        for &s in points {
            for &x in points {
                values.push(Rational::from_integer(1) - distance(s, x));
            }
        }
        values.sort();
        values.dedup();
        let rank_of = |v: &Rational| values.binary_search(v).unwrap() as u8;
        let mut ranks = vec![0u8; g * g * 2];
        for s in 0..g {
            for x in 0..g {
                let served = Rational::from_integer(1) - distance(points[s], points[x]);
                ranks[(s * g + x) * 2] = rank_of(&Rational::zero());
                ranks[(s * g + x) * 2 + 1] = rank_of(&served);
            }
        }

        SweepFrame {
            n,
            g,
            profile_total,
            choices,
            sets,
            constraints,
            deviations,
            ranks,
        }
    }

    fn total_tables(&self) -> u128 {
        (self.choices as u128).pow(self.profile_total as u32)
    }

    fn decode_table(&self, mut index: u64, out: &mut [(u8, u64)]) {
        for slot in out.iter_mut().rev() {
            let digit = index % self.choices;
            index /= self.choices;
            let s_idx = (digit / self.sets.len() as u64) as u8;
            let set = self.sets[(digit % self.sets.len() as u64) as usize];
            *slot = (s_idx, set);
        }
    }

    fn is_anonymous(&self, table: &[(u8, u64)]) -> bool {
        self.constraints
            .iter()
            .all(|&(p, i, q, j)| (table[p as usize].1 >> i) & 1 == (table[q as usize].1 >> j) & 1)
    }

    fn has_dic_violation(&self, table: &[(u8, u64)]) -> bool {
        self.deviations.iter().any(|&(pt, pd, agent, own)| {
            let (st, at) = table[pt as usize];
            let (sd, ad) = table[pd as usize];
            let rt = self.ranks
                [(st as usize * self.g + own as usize) * 2 + ((at >> agent) & 1) as usize];
            let rd = self.ranks
                [(sd as usize * self.g + own as usize) * 2 + ((ad >> agent) & 1) as usize];
            rd > rt
        })
    }

    /// Case of the two-case replay: 1 when the excluded agent's 1/2 report
    /// gets it allocated, 2 otherwise. Requires the all-3/4 and deviated
    /// profile indices.
    fn replay_case(
        &self,
        table: &[(u8, u64)],
        base_profile: usize,
        deviated_profiles: &[usize],
    ) -> u8 {
        let (_, allocated) = table[base_profile];
        let excluded = (0..self.n)
            .find(|&i| (allocated >> i) & 1 == 0)
            .expect("|A| <= k < n");
        let (_, deviated_alloc) = table[deviated_profiles[excluded]];
        if (deviated_alloc >> excluded) & 1 == 1 {
            1
        } else {
            2
        }
    }

    fn rebuild_mechanism(
        &self,
        points: &[Location],
        k: usize,
        index: u64,
    ) -> LocationAllocationMechanism {
        let mut raw = vec![(0u8, 0u64); self.profile_total];
        self.decode_table(index, &mut raw);
        LocationAllocationMechanism::total(points.to_vec(), self.n, k, |profile| {
            let idx = profile.iter().fold(0usize, |a, &x| {
                a * self.g + points.binary_search(&x).unwrap()
            });
            (points[raw[idx].0 as usize], AgentSet::from_mask(raw[idx].1))
        })
        .expect("enumerated table is valid")
    }
}

/// Enumerates every `(s, A)` table on the two-point grid `{1/2, 3/4}`,
/// counts the allocation-anonymous ones, and audits each of those for DIC.
/// The impossibility holds exactly when `dic_passing_anonymous == 0`.
pub fn impossibility_sweep(n: usize, k: usize, budget: u64) -> Result<SweepReport, Error> {
    if k >= n {
        return Err(Error::DomainError(format!(
            "impossibility needs k < n, got k={k}, n={n}"
        )));
    }
    let points = vec![
        Location::new(Rational::new(1, 2))?,
        Location::new(Rational::new(3, 4))?,
    ];
    let frame = SweepFrame::build(&points, n, k);
    let total = frame.total_tables();
    if total > budget as u128 {
        return Err(Error::BudgetExceeded {
            required: total,
            budget,
        });
    }
    let total = total as u64;

    // Base (all 3/4) and per-agent deviated (agent at 1/2) profile indices.
    let g = frame.g;
    let all_hi: usize = (0..n).fold(0, |a, _| a * g + 1);
    let deviated: Vec<usize> = (0..n)
        .map(|agent| (0..n).fold(0, |a, slot| a * g + if slot == agent { 0 } else { 1 }))
        .collect();

    let chunks = 4096u64.min(total).max(1);
    let chunk_size = total.div_ceil(chunks);
    let scan_chunk = |chunk: usize| -> SweepAccumulator {
        let start = chunk as u64 * chunk_size;
        let end = (start + chunk_size).min(total);
        let mut acc = SweepAccumulator {
            anonymous: 0,
            dic_passing: 0,
            case1: 0,
            case2: 0,
            case1_first: None,
            case2_first: None,
            dic_passing_first: None,
        };
        let mut table = vec![(0u8, 0u64); frame.profile_total];
        for index in start..end {
            frame.decode_table(index, &mut table);
            if !frame.is_anonymous(&table) {
                continue;
            }
            acc.anonymous += 1;
            match frame.replay_case(&table, all_hi, &deviated) {
                1 => {
                    acc.case1 += 1;
                    acc.case1_first = merge_min(acc.case1_first, Some(index));
                }
                _ => {
                    acc.case2 += 1;
                    acc.case2_first = merge_min(acc.case2_first, Some(index));
                }
            }
            if !frame.has_dic_violation(&table) {
                acc.dic_passing += 1;
                acc.dic_passing_first = merge_min(acc.dic_passing_first, Some(index));
            }
        }
        acc
    };

    let acc = par::map_reduce(chunks as usize, scan_chunk, SweepAccumulator::merge)
        .expect("at least one chunk");

    let example = |index: Option<u64>| -> Option<SweepExample> {
        index.map(|i| {
            let mechanism = frame.rebuild_mechanism(&points, k, i);
            let replay = proof_replay(&mechanism).expect("grid contains 1/2 and 3/4");
            SweepExample {
                table_index: i,
                mechanism,
                replay,
            }
        })
    };
    let case1_example = example(acc.case1_first);
    let case2_example = example(acc.case2_first);

    Ok(SweepReport {
        n,
        k,
        grid: points,
        enumerated: total,
        anonymous: acc.anonymous,
        dic_passing_anonymous: acc.dic_passing,
        case1: acc.case1,
        case2: acc.case2,
        case1_example,
        case2_example,
    })
}

/// Proof replay on the natural anonymous candidate plus, budget
/// permitting, the exhaustive sweep.
#[derive(Clone, Debug, Serialize)]
pub struct ImpossibilityReport {
    pub n: usize,
    pub k: usize,
    pub candidate_replay: ProofReplay,
    pub sweep: Option<SweepReport>,
}

pub fn impossibility_demonstration(
    n: usize,
    k: usize,
    budget: u64,
) -> Result<ImpossibilityReport, Error> {
    if k >= n {
        return Err(Error::DomainError(format!(
            "impossibility needs k < n, got k={k}, n={n}"
        )));
    }
    let points = vec![
        Location::new(Rational::new(1, 2))?,
        Location::new(Rational::new(3, 4))?,
    ];
    let candidate = closest_allocation_table(points, n, k)?;
    let candidate_replay = proof_replay(&candidate)?;
    let frame_total = SweepFrame::build(candidate.points(), n, k).total_tables();
    let sweep = if frame_total <= budget as u128 {
        Some(impossibility_sweep(n, k, budget)?)
    } else {
        None
    };
    Ok(ImpossibilityReport {
        n,
        k,
        candidate_replay,
        sweep,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::{audit_dic, GridSpec};
    use crate::mechanism::MechanismSpec;
    use crate::rational::rational;

    fn loc(n: i128, d: i128) -> Location {
        Location::from_ratio(n, d).unwrap()
    }

    fn five_points() -> Vec<Location> {
        vec![loc(0, 1), loc(1, 4), loc(1, 2), loc(3, 4), loc(1, 1)]
    }

    fn two_points() -> Vec<Location> {
        vec![loc(1, 2), loc(3, 4)]
    }

    #[test]
    fn identifiability_examples() {
        let profile = vec![loc(3, 4), loc(3, 4), loc(1, 2)];
        assert!(is_i_identifiable(&profile, 2));
        assert!(!is_i_identifiable(&profile, 0));
        let all_same = vec![loc(3, 4); 3];
        for agent in 0..3 {
            assert!(!is_i_identifiable(&all_same, agent));
        }
        assert!(is_i_identifiable(&[loc(1, 2)], 0));
    }

    #[test]
    fn closest_allocation_is_anonymous() {
        let mech = closest_allocation_table(five_points(), 3, 2).unwrap();
        let verdict = check_allocation_anonymous(&mech).unwrap();
        assert!(verdict.passed, "witness: {:?}", verdict.witness);
    }

    #[test]
    fn fixed_allocation_fails_anonymity_but_passes_dic() {
        let mech = dictatorial_allocation_table(two_points(), 3, 2).unwrap();
        let anonymity = check_allocation_anonymous(&mech).unwrap();
        assert!(!anonymity.passed);
        let witness = anonymity.witness.unwrap();
        assert_ne!(witness.allocated_before, witness.allocated_after);

        let dic = audit_dic_alloc(&mech).unwrap();
        assert!(dic.passed);
    }

    #[test]
    fn single_agent_table_is_trivially_anonymous() {
        let mech = closest_allocation_table(two_points(), 1, 1).unwrap();
        assert!(check_allocation_anonymous(&mech).unwrap().passed);
    }

    #[test]
    fn anonymous_tables_fail_dic_on_the_wide_grid() {
        let mech = closest_allocation_table(five_points(), 3, 2).unwrap();
        let verdict = audit_dic_alloc(&mech).unwrap();
        assert!(!verdict.passed);
        let witness = verdict.witness.unwrap();
        assert!(verify_alloc_witness(&mech, &witness));
    }

    #[test]
    fn full_allocation_reduces_to_location_only_dic() {
        // k = n: the table allocates everyone and the location is the
        // median, so the audit coincides with the location-only audit.
        let grid = GridSpec::new(4).unwrap();
        let points = grid.points().to_vec();
        let mech = LocationAllocationMechanism::total(points, 3, 3, |profile| {
            let mut sorted = profile.to_vec();
            sorted.sort_unstable();
            (sorted[1], AgentSet::from_ids(0..3))
        })
        .unwrap();
        assert!(audit_dic_alloc(&mech).unwrap().passed);
        assert!(
            audit_dic(&MechanismSpec::Median, 3, 3, &grid, 100_000_000)
                .unwrap()
                .passed
        );
    }

    #[test]
    fn replay_exhibits_a_verified_violation() {
        let mech = closest_allocation_table(two_points(), 3, 2).unwrap();
        let replay = proof_replay(&mech).unwrap();
        assert!(replay.verified);
        assert!(replay.witness.gain() > rational(0, 1));
        assert!(verify_alloc_witness(&mech, &replay.witness));
    }

    #[test]
    fn replay_rejects_nonbinding_capacity() {
        let mech = closest_allocation_table(two_points(), 2, 2).unwrap();
        assert!(proof_replay(&mech).is_err());
    }

    #[test]
    fn mimic_table_is_anonymous_here_and_fails_dic_while_median_passes() {
        // The revelation-principle gap, concretely: the location-only
        // median is DIC on this grid, while the table that mimics it
        // (median location, report-based equilibrium allocation) is
        // allocation-anonymous on the two-point grid yet fails the
        // allocation audit.
        let mech = equilibrium_mimic_table(two_points(), 3, 2).unwrap();
        assert!(check_allocation_anonymous(&mech).unwrap().passed);
        assert!(!audit_dic_alloc(&mech).unwrap().passed);

        let grid = GridSpec::new(4).unwrap();
        assert!(
            audit_dic(&MechanismSpec::Median, 3, 2, &grid, 100_000_000)
                .unwrap()
                .passed
        );
    }

    #[test]
    fn sweep_counts_small_case() {
        // n=2, k=1 on the two-point grid: 2 profiles... with n=2 every
        // profile has both agents identifiable or neither; closed forms
        // are small enough to verify by hand: choices = 2 * 2 = 4 per
        // profile, 4 profiles, 256 tables.
        let report = impossibility_sweep(2, 1, 1_000_000).unwrap();
        assert_eq!(report.enumerated, 256);
        assert!(report.anonymous > 0);
        assert_eq!(report.dic_passing_anonymous, 0);
        assert_eq!(report.case1 + report.case2, report.anonymous);
        let example = report.case1_example.or(report.case2_example).unwrap();
        assert!(example.replay.verified);
    }

    #[test]
    fn sweep_budget_is_enforced() {
        assert!(matches!(
            impossibility_sweep(3, 2, 1000),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn demonstration_includes_candidate_replay() {
        let report = impossibility_demonstration(2, 1, 1_000_000).unwrap();
        assert!(report.candidate_replay.verified);
        assert!(report.sweep.is_some());
        assert!(impossibility_demonstration(3, 3, 1_000_000).is_err());
    }

    #[test]
    fn audit_verdict_is_insensitive_to_the_others_true_quantifier() {
        // Allocation-table utilities never read others' true locations, so
        // the audit verdict must equal a scan over reports alone. Checked
        // on arbitrary (not necessarily anonymous) random tables.
        let points = two_points();
        let sets: Vec<AgentSet> = (1u64..8)
            .filter(|m| m.count_ones() <= 2)
            .map(AgentSet::from_mask)
            .collect();
        let mut rng = crate::rng::SplitMix64::new(0x1AB1E);
        for _ in 0..40 {
            let digits: Vec<(Location, AgentSet)> = (0..8)
                .map(|_| (points[rng.below(2)], sets[rng.below(sets.len())]))
                .collect();
            let mech = LocationAllocationMechanism::total(points.clone(), 3, 2, |profile| {
                let idx = profile
                    .iter()
                    .fold(0usize, |a, &x| a * 2 + usize::from(x != loc(1, 2)));
                digits[idx]
            })
            .unwrap();

            let mut collapsed_violation = false;
            'outer: for agent in 0..3 {
                for &own in &points {
                    for &dev in &points {
                        for oa in &points {
                            for ob in &points {
                                let mut reports = [own, *oa, *ob];
                                reports.swap(0, agent);
                                let truthful = alloc_utility(&mech, &reports, agent, own).unwrap();
                                reports[agent] = dev;
                                let deviating = alloc_utility(&mech, &reports, agent, own).unwrap();
                                if deviating > truthful {
                                    collapsed_violation = true;
                                    break 'outer;
                                }
                            }
                        }
                    }
                }
            }
            let full = audit_dic_alloc(&mech).unwrap();
            assert_eq!(full.passed, !collapsed_violation, "{:?}", mech.entries());
        }
    }

    #[test]
    fn table_output_requires_grid_profiles() {
        let mech = closest_allocation_table(two_points(), 2, 1).unwrap();
        let err = mech.output(&[loc(1, 3), loc(1, 2)]).unwrap_err();
        assert!(matches!(err, Error::DomainIncomplete(_)));
    }
}
