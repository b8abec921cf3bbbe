//! GHZ correlations on particles that never met.
//!
//! Each GHZ particle is Bell-measured together with one half of a singlet; the
//! other halves sit at remote stations and are measured along x or y at the
//! same time. No rotation is applied and no message is sent. Instead, the
//! remote outcome is sign-corrected afterwards according to the Bell result.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{self, EfficiencyModel, GameError, QuestionPattern};
use crate::qsim::{self, BellIndex, PauliAxis, QsimError, Sign, StateVector, EXACT_TOL};
use crate::rng::{derive_trial_seed, RandomSource};

/// Sites 0..3 hold the GHZ particles at A, B, C.
pub const GHZ_SITES: [usize; 3] = [0, 1, 2];
/// Local singlet halves, Bell-measured with the GHZ particle at the same station.
pub const LOCAL_SITES: [usize; 3] = [3, 4, 5];
/// Remote singlet halves at A', B', C'.
pub const REMOTE_SITES: [usize; 3] = [6, 7, 8];
pub const BELL_PAIRS: [(usize, usize); 3] = [(0, 3), (1, 4), (2, 5)];
/// Detectors that must all fire for a usable event.
pub const PARTICLES: usize = 9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TeleportError {
    #[error("no consistent sign correction for Bell outcome {bell} and axis {axis}")]
    InconsistentCorrection { bell: BellIndex, axis: PauliAxis },
    #[error("summary needs at least one trial record")]
    NoRecords,
    #[error(transparent)]
    Qsim(#[from] QsimError),
    #[error(transparent)]
    Game(#[from] GameError),
}

/// GHZ on sites 0..3 and singlets on (3,6), (4,7), (5,8).
pub fn build_setup() -> Result<StateVector, TeleportError> {
    let singlet = qsim::make_singlet();
    let mut state = qsim::make_ghz();
    for _ in 0..3 {
        state = qsim::tensor_product(&state, &singlet)?;
    }
    // tensor order is 0,1,2 | 3,4 | 5,6 | 7,8
    Ok(state.permute_sites(&[0, 1, 2, 3, 6, 4, 7, 5, 8])?)
}

/// Whether the remote outcome must be negated, per Bell outcome and axis.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionRule {
    flips: BTreeMap<(BellIndex, PauliAxis), bool>,
}

impl CorrectionRule {
    pub fn flip(&self, bell: BellIndex, axis: PauliAxis) -> bool {
        self.flips[&(bell, axis)]
    }

    pub fn correct(&self, bell: BellIndex, axis: PauliAxis, raw: Sign) -> Sign {
        if self.flip(bell, axis) {
            -raw
        } else {
            raw
        }
    }

    pub fn flip_count(&self, axis: PauliAxis) -> usize {
        BellIndex::ALL.iter().filter(|&&b| self.flip(b, axis)).count()
    }
}

/// Derives the correction rule by teleporting axis eigenstates.
///
/// For each Bell outcome and axis, a source prepared in either eigenstate is
/// teleported through a singlet; the remote expectation must come out as
/// exactly the source eigenvalue (no flip) or its negative (flip), and both
/// eigenstates must agree.
pub fn derive_correction_rule() -> Result<CorrectionRule, TeleportError> {
    let singlet = qsim::make_singlet();
    let mut flips = BTreeMap::new();
    for axis in PauliAxis::ALL {
        let remote = qsim::ProductObservable::single(2, axis);
        for bell in BellIndex::ALL {
            let mut verdict = None;
            for source in Sign::BOTH {
                let state = qsim::tensor_product(&StateVector::pauli_eigenstate(axis, source), &singlet)?;
                let branch = qsim::bell_branches(&state, 0, 1)?
                    .into_iter()
                    .find(|b| b.outcome == bell)
                    .ok_or(TeleportError::InconsistentCorrection { bell, axis })?;
                let e = qsim::expectation_product(&branch.state, &remote)?;
                let flip = if (e - source.as_f64()).abs() < 1e-10 {
                    false
                } else if (e + source.as_f64()).abs() < 1e-10 {
                    true
                } else {
                    return Err(TeleportError::InconsistentCorrection { bell, axis });
                };
                if verdict.is_some_and(|v| v != flip) {
                    return Err(TeleportError::InconsistentCorrection { bell, axis });
                }
                verdict = Some(flip);
            }
            flips.insert((bell, axis), verdict.expect("two sources checked"));
        }
    }
    let rule = CorrectionRule { flips };
    for axis in PauliAxis::ALL {
        if rule.flip_count(axis) != 2 {
            return Err(TeleportError::InconsistentCorrection {
                bell: BellIndex::PhiPlus,
                axis,
            });
        }
    }
    Ok(rule)
}

/// Order in which the six local and three remote measurements are applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementOrder {
    #[default]
    BellFirst,
    RemoteFirst,
    /// Station by station: Bell at A, remote A', Bell at B, ...
    Interleaved,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeleportTrialRecord {
    pub trial_index: u64,
    pub pattern: QuestionPattern,
    pub bell_outcomes: [BellIndex; 3],
    pub raw_outcomes: [Sign; 3],
    pub corrected_outcomes: [Sign; 3],
    pub raw_win: bool,
    pub win: bool,
}

/// Cached setup state and correction rule.
#[derive(Clone, Debug)]
pub struct Teleporter {
    setup: StateVector,
    rule: CorrectionRule,
}

impl Teleporter {
    pub fn new() -> Result<Self, TeleportError> {
        Ok(Self {
            setup: build_setup()?,
            rule: derive_correction_rule()?,
        })
    }

    pub fn setup(&self) -> &StateVector {
        &self.setup
    }

    pub fn rule(&self) -> &CorrectionRule {
        &self.rule
    }

    fn station_bell(&self, state: &mut StateVector, station: usize, rnd: &mut RandomSource) -> BellIndex {
        let (g, l) = BELL_PAIRS[station];
        let (b, s) = qsim::bell_measure(state, g, l, rnd).expect("layout sites are valid");
        *state = s;
        b
    }

    fn station_remote(&self, state: &mut StateVector, station: usize, axis: PauliAxis, rnd: &mut RandomSource) -> Sign {
        let (o, s) = qsim::measure_pauli(state, REMOTE_SITES[station], axis, rnd).expect("layout sites are valid");
        *state = s;
        o
    }

    #[allow(clippy::needless_range_loop)]
    pub fn run_trial(
        &self,
        pattern: QuestionPattern,
        rnd: &mut RandomSource,
        order: MeasurementOrder,
    ) -> TeleportTrialRecord {
        let axes = pattern.questions().map(|q| q.axis());
        let mut state = self.setup.clone();
        let mut bells = [BellIndex::PhiPlus; 3];
        let mut raw = [Sign::Plus; 3];
        match order {
            MeasurementOrder::BellFirst => {
                for k in 0..3 {
                    bells[k] = self.station_bell(&mut state, k, rnd);
                }
                for k in 0..3 {
                    raw[k] = self.station_remote(&mut state, k, axes[k], rnd);
                }
            }
            MeasurementOrder::RemoteFirst => {
                for k in 0..3 {
                    raw[k] = self.station_remote(&mut state, k, axes[k], rnd);
                }
                for k in 0..3 {
                    bells[k] = self.station_bell(&mut state, k, rnd);
                }
            }
            MeasurementOrder::Interleaved => {
                for k in 0..3 {
                    bells[k] = self.station_bell(&mut state, k, rnd);
                    raw[k] = self.station_remote(&mut state, k, axes[k], rnd);
                }
            }
        }
        let corrected = [0, 1, 2].map(|k| self.rule.correct(bells[k], axes[k], raw[k]));
        TeleportTrialRecord {
            trial_index: 0,
            pattern,
            bell_outcomes: bells,
            raw_outcomes: raw,
            corrected_outcomes: corrected,
            raw_win: Sign::product(raw) == pattern.target(),
            win: Sign::product(corrected) == pattern.target(),
        }
    }

    /// Seeded batch with uniformly drawn patterns, records in index order.
    pub fn run_trials(&self, trials: u64, master_seed: u64, order: MeasurementOrder) -> Vec<TeleportTrialRecord> {
        (0..trials)
            .into_par_iter()
            .map(|i| {
                let base = RandomSource::new(derive_trial_seed(master_seed, i));
                let pattern = game::draw_pattern(&mut base.fork(0));
                let mut rnd = base.fork(1);
                let mut rec = self.run_trial(pattern, &mut rnd, order);
                rec.trial_index = i;
                rec
            })
            .collect()
    }

    /// Conditions the setup on every Bell-outcome triple and computes the exact
    /// probability that corrected (and raw) remote outcomes meet the target.
    pub fn condition_on_bell_triples(&self, pattern: QuestionPattern) -> Vec<BellCell> {
        let axes: Vec<(usize, PauliAxis)> = REMOTE_SITES
            .iter()
            .zip(pattern.questions())
            .map(|(&s, q)| (s, q.axis()))
            .collect();
        let mut cells = Vec::with_capacity(64);
        for index in 0..64 {
            let bells = bell_triple_from_index(index);
            let mut state = self.setup.clone();
            let mut probability = 1.0;
            for (k, &(g, l)) in BELL_PAIRS.iter().enumerate() {
                match qsim::bell_branches(&state, g, l)
                    .expect("layout sites are valid")
                    .into_iter()
                    .find(|b| b.outcome == bells[k])
                {
                    Some(b) => {
                        probability *= b.probability;
                        state = b.state;
                    }
                    None => {
                        probability = 0.0;
                        break;
                    }
                }
            }
            let (mut corrected_success, mut raw_success) = (0.0, 0.0);
            if probability > 0.0 {
                let dist = qsim::joint_distribution(&state, &axes).expect("layout sites are valid");
                for (outcomes, p) in dist {
                    let raw = Sign::product(outcomes.iter().copied());
                    let corrected = Sign::product((0..3).map(|k| self.rule.correct(bells[k], axes[k].1, outcomes[k])));
                    if raw == pattern.target() {
                        raw_success += p;
                    }
                    if corrected == pattern.target() {
                        corrected_success += p;
                    }
                }
            }
            cells.push(BellCell {
                pattern,
                bell_outcomes: bells,
                probability,
                corrected_success,
                raw_success,
            });
        }
        cells
    }
}

/// Exact statistics conditioned on one Bell-outcome triple.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BellCell {
    pub pattern: QuestionPattern,
    pub bell_outcomes: [BellIndex; 3],
    pub probability: f64,
    pub corrected_success: f64,
    pub raw_success: f64,
}

impl BellCell {
    pub fn corrected_is_certain(&self) -> bool {
        (self.corrected_success - 1.0).abs() < EXACT_TOL
    }
}

pub fn bell_triple_index(bells: [BellIndex; 3]) -> usize {
    bells[0].ordinal() + 4 * bells[1].ordinal() + 16 * bells[2].ordinal()
}

pub fn bell_triple_from_index(index: usize) -> [BellIndex; 3] {
    [
        BellIndex::ALL[index % 4],
        BellIndex::ALL[(index / 4) % 4],
        BellIndex::ALL[(index / 16) % 4],
    ]
}

fn shared_teleporter() -> &'static Teleporter {
    static CELL: OnceLock<Teleporter> = OnceLock::new();
    CELL.get_or_init(|| Teleporter::new().expect("teleport conventions are consistent"))
}

/// One trial with Bell measurements first.
pub fn run_trial(pattern: QuestionPattern, rnd: &mut RandomSource) -> TeleportTrialRecord {
    shared_teleporter().run_trial(pattern, rnd, MeasurementOrder::BellFirst)
}

pub fn run_trials(trials: u64, master_seed: u64) -> Vec<TeleportTrialRecord> {
    shared_teleporter().run_trials(trials, master_seed, MeasurementOrder::BellFirst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeleportPatternStats {
    pub pattern: QuestionPattern,
    pub trials: u64,
    pub corrected_successes: u64,
    pub corrected_rate: f64,
    pub raw_successes: u64,
    pub raw_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeleportSummary {
    pub trials: u64,
    pub corrected_rate: f64,
    pub raw_rate: f64,
    /// Binomial standard error of `raw_rate` around 1/2.
    pub raw_standard_error: f64,
    pub per_pattern: Vec<TeleportPatternStats>,
    /// Counts per Bell triple, indexed by `bell_triple_index`.
    pub bell_histogram: Vec<u64>,
    /// Largest deviation of a histogram cell from n/64, in binomial standard errors.
    pub bell_histogram_max_sigma: f64,
}

pub fn summarize(records: &[TeleportTrialRecord]) -> Result<TeleportSummary, TeleportError> {
    if records.is_empty() {
        return Err(TeleportError::NoRecords);
    }
    let n = records.len() as u64;
    let mut per = QuestionPattern::ALL.map(|p| (p, 0u64, 0u64, 0u64));
    let mut hist = vec![0u64; 64];
    for r in records {
        let slot = &mut per[r.pattern.ordinal()];
        slot.1 += 1;
        slot.2 += u64::from(r.win);
        slot.3 += u64::from(r.raw_win);
        hist[bell_triple_index(r.bell_outcomes)] += 1;
    }
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let corrected: u64 = per.iter().map(|p| p.2).sum();
    let raw: u64 = per.iter().map(|p| p.3).sum();
    let cell_p = 1.0 / 64.0;
    let cell_sd = (n as f64 * cell_p * (1.0 - cell_p)).sqrt();
    let max_sigma = hist
        .iter()
        .map(|&c| (c as f64 - n as f64 * cell_p).abs() / cell_sd)
        .fold(0.0, f64::max);
    Ok(TeleportSummary {
        trials: n,
        corrected_rate: ratio(corrected, n),
        raw_rate: ratio(raw, n),
        raw_standard_error: game::binomial_standard_error(0.5, n),
        per_pattern: per
            .iter()
            .map(|&(pattern, t, c, r)| TeleportPatternStats {
                pattern,
                trials: t,
                corrected_successes: c,
                corrected_rate: ratio(c, t),
                raw_successes: r,
                raw_rate: ratio(r, t),
            })
            .collect(),
        bell_histogram: hist,
        bell_histogram_max_sigma: max_sigma,
    })
}

impl TeleportSummary {
    /// `pattern,trials,corrected_rate,raw_rate` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pattern,trials,corrected_rate,raw_rate\n");
        for p in &self.per_pattern {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.pattern, p.trials, p.corrected_rate, p.raw_rate
            ));
        }
        out
    }
}

/// Fraction of trials in which all nine detectors fire.
pub fn coincidence_rate(model: &EfficiencyModel, trials: u64, master_seed: u64) -> Result<f64, TeleportError> {
    if trials == 0 {
        return Err(GameError::NoTrials.into());
    }
    let hits: u64 = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rnd = RandomSource::new(derive_trial_seed(master_seed, i)).fork(2);
            let all = (0..PARTICLES).fold(true, |acc, _| model.detects(&mut rnd) && acc);
            u64::from(all)
        })
        .sum();
    Ok(hits as f64 / trials as f64)
}
