//! Brute-force incentive-compatibility audits over rational grids.
//!
//! A mechanism is DIC when no agent can ever gain ex post from misreporting:
//! for every true location `x_i`, deviation `x_i'`, others' reports and
//! others' true locations, the truthful equilibrium utility weakly beats the
//! deviating one. The audits quantify all four over a finite grid, so a
//! failure witness is a true violation while a pass is complete only over
//! the grid.
//!
//! Scan order is pinned for determinism: agents ascending, then `x_i`,
//! `x_i'`, others' reports and others' true locations in lexicographic grid
//! order; the first violation in that order is the witness, whether the
//! scan runs sequentially or in parallel.

use crate::error::Error;
use crate::mechanism::{GmmSpec, Mechanism, TableMechanism};
use crate::model::Location;
use crate::par;
use crate::rational::{format_rational, Rational};
use crate::rng::SplitMix64;
use serde::{ser::SerializeStruct, Serialize, Serializer};

/// Covers the default audit scope (up to 4 agents on a denominator-6 grid:
/// `4 * 7^8` quadruples). Larger scans need an explicit budget.
pub const DEFAULT_AUDIT_BUDGET: u64 = 25_000_000;

/// The evenly spaced rational points `{0, 1/q, ..., 1}` the audits
/// quantify over.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridSpec {
    denominator: u32,
    points: Vec<Location>,
}

impl GridSpec {
    pub fn new(denominator: u32) -> Result<Self, Error> {
        if denominator == 0 {
            return Err(Error::DomainError("grid denominator must be >= 1".into()));
        }
        let points = (0..=denominator)
            .map(|j| Location::new_unchecked(Rational::new(j as i128, denominator as i128)))
            .collect();
        Ok(GridSpec {
            denominator,
            points,
        })
    }

    pub fn denominator(&self) -> u32 {
        self.denominator
    }

    pub fn points(&self) -> &[Location] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn position(&self, point: Location) -> Option<usize> {
        self.points.binary_search(&point).ok()
    }

    /// Number of profiles of the given length, exact.
    pub fn profile_count(&self, len: usize) -> u128 {
        (self.len() as u128).saturating_pow(len as u32)
    }

    /// Profile at `index` in lexicographic order (agent 0's report is the
    /// most significant digit).
    pub fn decode_profile(&self, index: usize, len: usize) -> Vec<Location> {
        let mut out = vec![self.points[0]; len];
        let mut rest = index;
        for slot in out.iter_mut().rev() {
            *slot = self.points[rest % self.len()];
            rest /= self.len();
        }
        debug_assert_eq!(rest, 0);
        out
    }

    /// Writes the profile at `others_index` into `buf` (length `n`),
    /// skipping position `agent`, which is set to `own`.
    fn decode_others_into(
        &self,
        others_index: usize,
        agent: usize,
        own: Location,
        buf: &mut [Location],
    ) {
        let mut rest = others_index;
        for slot_id in (0..buf.len()).rev() {
            if slot_id == agent {
                continue;
            }
            buf[slot_id] = self.points[rest % self.len()];
            rest /= self.len();
        }
        buf[agent] = own;
    }

    fn others_profile(&self, others_index: usize, count: usize) -> Vec<Location> {
        self.decode_profile(others_index, count)
    }
}

/// Outcome of an exhaustive audit. `instances_checked` is the 1-based
/// position of the witness in the nominal scan order, or the total size of
/// the scan space when the audit passed; either way it is deterministic.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AuditVerdict<W> {
    pub passed: bool,
    pub witness: Option<W>,
    pub instances_checked: u64,
}

impl<W> AuditVerdict<W> {
    pub(crate) fn passed(total: u64) -> Self {
        AuditVerdict {
            passed: true,
            witness: None,
            instances_checked: total,
        }
    }

    pub(crate) fn failed(position: u64, witness: W) -> Self {
        AuditVerdict {
            passed: false,
            witness: Some(witness),
            instances_checked: position,
        }
    }
}

/// A profitable deviation: with others reporting `others_reports` and truly
/// located at `others_true`, the agent truly at `true_location` gains by
/// reporting `deviation` instead of the truth.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DicWitness {
    pub agent: usize,
    pub true_location: Location,
    pub deviation: Location,
    pub others_reports: Vec<Location>,
    pub others_true: Vec<Location>,
    pub truthful_utility: Rational,
    pub deviating_utility: Rational,
}

impl DicWitness {
    pub fn gain(&self) -> Rational {
        self.deviating_utility - self.truthful_utility
    }

    fn insert_own(&self, others: &[Location], own: Location) -> Vec<Location> {
        let mut full = Vec::with_capacity(others.len() + 1);
        full.extend_from_slice(&others[..self.agent]);
        full.push(own);
        full.extend_from_slice(&others[self.agent..]);
        full
    }

    /// Full report profile under truthful reporting.
    pub fn truthful_reports(&self) -> Vec<Location> {
        self.insert_own(&self.others_reports, self.true_location)
    }

    /// Full report profile under the deviation.
    pub fn deviating_reports(&self) -> Vec<Location> {
        self.insert_own(&self.others_reports, self.deviation)
    }

    /// Full true location profile.
    pub fn true_profile(&self) -> Vec<Location> {
        self.insert_own(&self.others_true, self.true_location)
    }
}

impl Serialize for DicWitness {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        let mut st = ser.serialize_struct("DicWitness", 7)?;
        st.serialize_field("agent", &(self.agent + 1))?;
        st.serialize_field("true_location", &self.true_location)?;
        st.serialize_field("deviation", &self.deviation)?;
        st.serialize_field("others_reports", &self.others_reports)?;
        st.serialize_field("others_true", &self.others_true)?;
        st.serialize_field("truthful_utility", &format_rational(&self.truthful_utility))?;
        st.serialize_field(
            "deviating_utility",
            &format_rational(&self.deviating_utility),
        )?;
        st.end()
    }
}

use crate::model::utility_at as capped_utility;

/// Re-evaluates a claimed violation from scratch. True when the recorded
/// utilities are exactly what the mechanism and equilibrium produce and the
/// deviation is strictly profitable.
pub fn verify_dic_witness<M: Mechanism + ?Sized>(
    mechanism: &M,
    k: usize,
    witness: &DicWitness,
) -> bool {
    let truthful_s = mechanism.locate(&witness.truthful_reports());
    let deviating_s = mechanism.locate(&witness.deviating_reports());
    let profile = witness.true_profile();
    let truthful = capped_utility(&profile, witness.agent, truthful_s, k);
    let deviating = capped_utility(&profile, witness.agent, deviating_s, k);
    truthful == witness.truthful_utility
        && deviating == witness.deviating_utility
        && deviating > truthful
}

struct CellTables {
    /// Output id for every (others-report index, own-report index) pair.
    output_ids: Vec<u16>,
    /// Distinct facility locations, indexed by output id.
    outputs: Vec<Location>,
}

fn build_cell_tables<M: Mechanism + ?Sized>(
    mechanism: &M,
    grid: &GridSpec,
    n: usize,
    agent: usize,
    others_count: usize,
) -> CellTables {
    let base = grid.len();
    let mut outputs: Vec<Location> = Vec::new();
    let mut output_ids = vec![0u16; others_count * base];
    let mut reports = vec![Location::ZERO; n];
    for others_index in 0..others_count {
        grid.decode_others_into(others_index, agent, Location::ZERO, &mut reports);
        for (r_idx, &report) in grid.points().iter().enumerate() {
            reports[agent] = report;
            let s = mechanism.locate(&reports);
            let id = match outputs.iter().position(|&o| o == s) {
                Some(id) => id,
                None => {
                    outputs.push(s);
                    outputs.len() - 1
                }
            };
            output_ids[others_index * base + r_idx] = id as u16;
        }
    }
    CellTables {
        output_ids,
        outputs,
    }
}

fn product(parts: &[u128]) -> u128 {
    parts
        .iter()
        .try_fold(1u128, |acc, &p| acc.checked_mul(p))
        .unwrap_or(u128::MAX)
}

fn within_budget(total: u128, budget: u64) -> Result<(), Error> {
    if total > budget as u128 {
        Err(Error::BudgetExceeded {
            required: total,
            budget,
        })
    } else {
        Ok(())
    }
}

/// Exhaustive DIC audit at capacity `k`: scans every
/// `(agent, x_i, x_i', others' reports, others' true)` grid quadruple.
pub fn audit_dic<M: Mechanism + ?Sized>(
    mechanism: &M,
    n: usize,
    k: usize,
    grid: &GridSpec,
    budget: u64,
) -> Result<AuditVerdict<DicWitness>, Error> {
    mechanism.check_arity(n)?;
    if k == 0 || k > n {
        return Err(Error::DomainError(format!("capacity {k} outside 1..={n}")));
    }
    let base = grid.len();
    let others_count = grid.profile_count(n - 1);
    let per_cell = product(&[base as u128, others_count, others_count]);
    let total = product(&[n as u128, base as u128, per_cell]);
    within_budget(total, budget)?;

    let others_len = others_count as usize;
    let cells = n * base;
    let scan_cell = |cell: usize| -> Option<(u64, DicWitness)> {
        let agent = cell / base;
        let own_idx = cell % base;
        let own = grid.points()[own_idx];
        let tables = build_cell_tables(mechanism, grid, n, agent, others_len);

        // Utility of `agent` (truly at `own`) for every candidate facility
        // and every true profile of the others.
        let mut utilities: Vec<Vec<Rational>> =
            vec![Vec::with_capacity(others_len); tables.outputs.len()];
        let mut profile = vec![Location::ZERO; n];
        for others_true in 0..others_len {
            grid.decode_others_into(others_true, agent, own, &mut profile);
            for (s_id, &s) in tables.outputs.iter().enumerate() {
                utilities[s_id].push(capped_utility(&profile, agent, s, k));
            }
        }

        for (dev_idx, &deviation) in grid.points().iter().enumerate() {
            for reports_idx in 0..others_len {
                let truthful_id = tables.output_ids[reports_idx * base + own_idx] as usize;
                let deviating_id = tables.output_ids[reports_idx * base + dev_idx] as usize;
                if truthful_id == deviating_id {
                    continue;
                }
                let truthful_u = &utilities[truthful_id];
                let deviating_u = &utilities[deviating_id];
                for true_idx in 0..others_len {
                    if deviating_u[true_idx] > truthful_u[true_idx] {
                        let position = cell as u64 * per_cell as u64
                            + ((dev_idx as u64 * others_len as u64 + reports_idx as u64)
                                * others_len as u64
                                + true_idx as u64)
                            + 1;
                        return Some((
                            position,
                            DicWitness {
                                agent,
                                true_location: own,
                                deviation,
                                others_reports: grid.others_profile(reports_idx, n - 1),
                                others_true: grid.others_profile(true_idx, n - 1),
                                truthful_utility: truthful_u[true_idx],
                                deviating_utility: deviating_u[true_idx],
                            },
                        ));
                    }
                }
            }
        }
        None
    };

    match par::find_map_first(cells, scan_cell) {
        Some((position, witness)) => Ok(AuditVerdict::failed(position, witness)),
        None => Ok(AuditVerdict::passed(total as u64)),
    }
}

/// DIC audit at `k = n`, where everyone is served and the others' true
/// locations drop out: a violation is a deviation that strictly shortens
/// the agent's distance to the facility.
pub fn audit_dic_at_capacity_n<M: Mechanism + ?Sized>(
    mechanism: &M,
    n: usize,
    grid: &GridSpec,
    budget: u64,
) -> Result<AuditVerdict<DicWitness>, Error> {
    mechanism.check_arity(n)?;
    let base = grid.len();
    let others_count = grid.profile_count(n - 1);
    let per_cell = product(&[base as u128, others_count]);
    let total = product(&[n as u128, base as u128, per_cell]);
    within_budget(total, budget)?;

    let others_len = others_count as usize;
    let cells = n * base;
    let scan_cell = |cell: usize| -> Option<(u64, DicWitness)> {
        let agent = cell / base;
        let own_idx = cell % base;
        let own = grid.points()[own_idx];
        let tables = build_cell_tables(mechanism, grid, n, agent, others_len);
        let dist: Vec<Rational> = tables
            .outputs
            .iter()
            .map(|&s| crate::model::distance(s, own))
            .collect();

        for (dev_idx, &deviation) in grid.points().iter().enumerate() {
            for reports_idx in 0..others_len {
                let truthful_id = tables.output_ids[reports_idx * base + own_idx] as usize;
                let deviating_id = tables.output_ids[reports_idx * base + dev_idx] as usize;
                if deviating_id != truthful_id && dist[deviating_id] < dist[truthful_id] {
                    let position = cell as u64 * per_cell as u64
                        + (dev_idx as u64 * others_len as u64 + reports_idx as u64)
                        + 1;
                    let others = grid.others_profile(reports_idx, n - 1);
                    return Some((
                        position,
                        DicWitness {
                            agent,
                            true_location: own,
                            deviation,
                            others_reports: others.clone(),
                            others_true: others,
                            truthful_utility: Rational::from_integer(1) - dist[truthful_id],
                            deviating_utility: Rational::from_integer(1) - dist[deviating_id],
                        },
                    ));
                }
            }
        }
        None
    };

    match par::find_map_first(cells, scan_cell) {
        Some((position, witness)) => Ok(AuditVerdict::failed(position, witness)),
        None => Ok(AuditVerdict::passed(total as u64)),
    }
}

/// Restricted audit where the others report truthfully (their reports and
/// true locations coincide). Strictly weaker than [`audit_dic`]; exposed for
/// exploration only.
pub fn audit_dic_truthful_others<M: Mechanism + ?Sized>(
    mechanism: &M,
    n: usize,
    k: usize,
    grid: &GridSpec,
    budget: u64,
) -> Result<AuditVerdict<DicWitness>, Error> {
    mechanism.check_arity(n)?;
    if k == 0 || k > n {
        return Err(Error::DomainError(format!("capacity {k} outside 1..={n}")));
    }
    let base = grid.len();
    let others_count = grid.profile_count(n - 1);
    let per_cell = product(&[base as u128, others_count]);
    let total = product(&[n as u128, base as u128, per_cell]);
    within_budget(total, budget)?;

    let others_len = others_count as usize;
    let cells = n * base;
    let scan_cell = |cell: usize| -> Option<(u64, DicWitness)> {
        let agent = cell / base;
        let own_idx = cell % base;
        let own = grid.points()[own_idx];
        let tables = build_cell_tables(mechanism, grid, n, agent, others_len);

        let mut profile = vec![Location::ZERO; n];
        for (dev_idx, &deviation) in grid.points().iter().enumerate() {
            for others_idx in 0..others_len {
                let truthful_id = tables.output_ids[others_idx * base + own_idx] as usize;
                let deviating_id = tables.output_ids[others_idx * base + dev_idx] as usize;
                if truthful_id == deviating_id {
                    continue;
                }
                grid.decode_others_into(others_idx, agent, own, &mut profile);
                let truthful = capped_utility(&profile, agent, tables.outputs[truthful_id], k);
                let deviating = capped_utility(&profile, agent, tables.outputs[deviating_id], k);
                if deviating > truthful {
                    let position = cell as u64 * per_cell as u64
                        + (dev_idx as u64 * others_len as u64 + others_idx as u64)
                        + 1;
                    let others = grid.others_profile(others_idx, n - 1);
                    return Some((
                        position,
                        DicWitness {
                            agent,
                            true_location: own,
                            deviation,
                            others_reports: others.clone(),
                            others_true: others,
                            truthful_utility: truthful,
                            deviating_utility: deviating,
                        },
                    ));
                }
            }
        }
        None
    };

    match par::find_map_first(cells, scan_cell) {
        Some((position, witness)) => Ok(AuditVerdict::failed(position, witness)),
        None => Ok(AuditVerdict::passed(total as u64)),
    }
}

/// One sampled mechanism that contradicted the DIC/GMM equivalence; any
/// anomaly falsifies the implementation, not the theorem.
#[derive(Clone, Debug, Serialize)]
pub struct EquivalenceAnomaly {
    pub mechanism: String,
    pub expected_dic: bool,
    pub witness: Option<DicWitness>,
}

/// Outcome of the sampled two-sided equivalence check.
#[derive(Clone, Debug, Serialize)]
pub struct EquivalenceSummary {
    pub gmm_sampled: usize,
    pub gmm_dic_pass: usize,
    pub table_sampled: usize,
    pub table_dic_fail: usize,
    pub anomalies: Vec<EquivalenceAnomaly>,
}

impl EquivalenceSummary {
    pub fn clean(&self) -> bool {
        self.anomalies.is_empty()
            && self.gmm_dic_pass == self.gmm_sampled
            && self.table_dic_fail == self.table_sampled
    }
}

/// Samples `samples` random explicit GMMs (all must pass [`audit_dic`]) and
/// `samples` random table mechanisms failing the uncompromising grid check
/// (all must fail it).
pub fn equivalence_experiment(
    n: usize,
    k: usize,
    grid: &GridSpec,
    seed: u64,
    samples: usize,
    audit_budget: u64,
) -> Result<EquivalenceSummary, Error> {
    if k >= n {
        return Err(Error::DomainError(format!(
            "equivalence experiment needs k < n, got k={k}, n={n}"
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let mut summary = EquivalenceSummary {
        gmm_sampled: 0,
        gmm_dic_pass: 0,
        table_sampled: 0,
        table_dic_fail: 0,
        anomalies: Vec::new(),
    };

    for _ in 0..samples {
        let gmm = GmmSpec::random(n, grid, &mut rng)?;
        summary.gmm_sampled += 1;
        let verdict = audit_dic(&gmm, n, k, grid, audit_budget)?;
        if verdict.passed {
            summary.gmm_dic_pass += 1;
        } else {
            summary.anomalies.push(EquivalenceAnomaly {
                mechanism: gmm.describe(),
                expected_dic: true,
                witness: verdict.witness,
            });
        }
    }

    let mut attempts = 0usize;
    for _ in 0..samples {
        let table = loop {
            attempts += 1;
            if attempts > samples * 100 {
                return Err(Error::DomainError(
                    "could not sample a non-uncompromising table mechanism".into(),
                ));
            }
            let candidate = TableMechanism::random(grid, n, &mut rng);
            let uncompromising =
                is_uncompromising(&candidate, n, grid.denominator(), audit_budget)?;
            if !uncompromising.passed {
                break candidate;
            }
        };
        summary.table_sampled += 1;
        let verdict = audit_dic(&table, n, k, grid, audit_budget)?;
        if verdict.passed {
            summary.anomalies.push(EquivalenceAnomaly {
                mechanism: table.describe(),
                expected_dic: false,
                witness: None,
            });
        } else {
            summary.table_dic_fail += 1;
        }
    }

    Ok(summary)
}

use crate::mechanism::is_uncompromising_on_grid as is_uncompromising;
