//! The three-player game: referee, strategies, detector efficiency, and a
//! seeded Monte Carlo harness.
//!
//! Players are isolated by construction. The referee hands each player handle
//! only its own question and its own random stream; anything else a team
//! shares has to be created in [`Strategy::setup`] before questions are drawn.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::rc::Rc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qsim::{self, PauliAxis, Sign, StateVector};
use crate::rng::{derive_trial_seed, RandomSource};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("detector efficiency {0} is outside [0, 1]")]
    EfficiencyOutOfRange(f64),
    #[error("pattern weights must be finite, non-negative and not all zero")]
    BadWeights,
    #[error("an experiment needs at least one trial")]
    NoTrials,
    #[error("mixture weights must be finite, non-negative and not all zero")]
    BadMixture,
}

/// The question a single player receives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Question {
    X,
    Y,
}

impl Question {
    pub fn axis(self) -> PauliAxis {
        match self {
            Question::X => PauliAxis::X,
            Question::Y => PauliAxis::Y,
        }
    }
}

/// One of the four legal question assignments, in player order A, B, C.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QuestionPattern {
    XXX,
    XYY,
    YXY,
    YYX,
}

impl QuestionPattern {
    pub const ALL: [QuestionPattern; 4] = [
        QuestionPattern::XXX,
        QuestionPattern::XYY,
        QuestionPattern::YXY,
        QuestionPattern::YYX,
    ];

    pub fn questions(self) -> [Question; 3] {
        use Question::*;
        match self {
            QuestionPattern::XXX => [X, X, X],
            QuestionPattern::XYY => [X, Y, Y],
            QuestionPattern::YXY => [Y, X, Y],
            QuestionPattern::YYX => [Y, Y, X],
        }
    }

    /// Required product of the three answers.
    pub fn target(self) -> Sign {
        match self {
            QuestionPattern::XXX => Sign::Minus,
            _ => Sign::Plus,
        }
    }

    pub fn ordinal(self) -> usize {
        self as usize
    }
}

impl fmt::Display for QuestionPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            QuestionPattern::XXX => "XXX",
            QuestionPattern::XYY => "XYY",
            QuestionPattern::YXY => "YXY",
            QuestionPattern::YYX => "YYX",
        };
        f.pad(name)
    }
}

/// Answers of players A, B and C.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnswerTriple(pub [Sign; 3]);

impl AnswerTriple {
    pub fn new(a: Sign, b: Sign, c: Sign) -> Self {
        Self([a, b, c])
    }

    pub fn product(self) -> Sign {
        Sign::product(self.0)
    }
}

/// Referee predicate: product −1 for XXX, +1 for the one-X patterns.
pub fn wins(pattern: QuestionPattern, answers: AnswerTriple) -> bool {
    answers.product() == pattern.target()
}

/// Uniform draw over the four patterns.
pub fn draw_pattern(rnd: &mut RandomSource) -> QuestionPattern {
    QuestionPattern::ALL[rnd.below(4)]
}

/// Relative frequencies of the four patterns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternWeights([f64; 4]);

impl PatternWeights {
    pub fn uniform() -> Self {
        Self([0.25; 4])
    }

    pub fn new(weights: [f64; 4]) -> Result<Self, GameError> {
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || total <= 0.0 {
            return Err(GameError::BadWeights);
        }
        Ok(Self(weights.map(|w| w / total)))
    }

    pub fn weight(&self, pattern: QuestionPattern) -> f64 {
        self.0[pattern.ordinal()]
    }

    fn is_uniform(&self) -> bool {
        self.0 == [0.25; 4]
    }

    pub fn draw(&self, rnd: &mut RandomSource) -> QuestionPattern {
        if self.is_uniform() {
            return draw_pattern(rnd);
        }
        let u = rnd.uniform();
        let mut acc = 0.0;
        for p in QuestionPattern::ALL {
            acc += self.weight(p);
            if u < acc {
                return p;
            }
        }
        // rounding left a sliver past the last cumulative weight
        *QuestionPattern::ALL
            .iter()
            .rev()
            .find(|p| self.weight(**p) > 0.0)
            .expect("weights are not all zero")
    }
}

impl Default for PatternWeights {
    fn default() -> Self {
        Self::uniform()
    }
}

/// Pre-agreed answers for every player and question.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DeterministicTable {
    pub x_a: Sign,
    pub y_a: Sign,
    pub x_b: Sign,
    pub y_b: Sign,
    pub x_c: Sign,
    pub y_c: Sign,
}

impl DeterministicTable {
    /// Table number `index` in lexicographic order over `(X_A, Y_A, X_B, Y_B, X_C, Y_C)`
    /// with +1 before −1.
    pub fn from_index(index: u8) -> Self {
        assert!(index < 64, "table index {index} out of range");
        let bit = |k: u8| Sign::from_bit(index & (1 << (5 - k)) != 0);
        Self::from_signs([bit(0), bit(1), bit(2), bit(3), bit(4), bit(5)])
    }

    pub fn from_signs(s: [Sign; 6]) -> Self {
        Self {
            x_a: s[0],
            y_a: s[1],
            x_b: s[2],
            y_b: s[3],
            x_c: s[4],
            y_c: s[5],
        }
    }

    pub fn signs(&self) -> [Sign; 6] {
        [self.x_a, self.y_a, self.x_b, self.y_b, self.x_c, self.y_c]
    }

    pub fn all() -> impl Iterator<Item = DeterministicTable> {
        (0..64u8).map(Self::from_index)
    }

    pub fn entry(&self, player: usize, question: Question) -> Sign {
        match (player, question) {
            (0, Question::X) => self.x_a,
            (0, Question::Y) => self.y_a,
            (1, Question::X) => self.x_b,
            (1, Question::Y) => self.y_b,
            (2, Question::X) => self.x_c,
            (2, Question::Y) => self.y_c,
            _ => panic!("player {player} does not exist"),
        }
    }

    /// Number of patterns this table wins.
    pub fn patterns_won(&self) -> usize {
        QuestionPattern::ALL
            .iter()
            .filter(|&&p| wins(p, play_deterministic(self, p)))
            .count()
    }

    /// Expected win rate under the given pattern weights.
    pub fn expected_rate(&self, weights: &PatternWeights) -> f64 {
        QuestionPattern::ALL
            .iter()
            .filter(|&&p| wins(p, play_deterministic(self, p)))
            .map(|&p| weights.weight(p))
            .sum()
    }
}

pub fn play_deterministic(table: &DeterministicTable, pattern: QuestionPattern) -> AnswerTriple {
    let q = pattern.questions();
    AnswerTriple([table.entry(0, q[0]), table.entry(1, q[1]), table.entry(2, q[2])])
}

/// Result of evaluating every deterministic table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeterministicScan {
    pub best_rate: f64,
    /// All maximizers, in lexicographic table order.
    pub argmax_tables: Vec<DeterministicTable>,
    /// Count of tables per expected win rate, keyed by the number of patterns won.
    pub histogram: BTreeMap<usize, usize>,
}

impl DeterministicScan {
    /// Histogram keyed by expected rate (uniform weights).
    pub fn rate_histogram(&self) -> Vec<(f64, usize)> {
        self.histogram
            .iter()
            .map(|(&won, &count)| (won as f64 / 4.0, count))
            .collect()
    }
}

/// Evaluates all 64 tables against all four patterns under uniform weights.
pub fn scan_deterministic() -> DeterministicScan {
    let mut histogram = BTreeMap::new();
    let mut best = 0usize;
    let mut argmax = Vec::new();
    for table in DeterministicTable::all() {
        let won = table.patterns_won();
        *histogram.entry(won).or_insert(0) += 1;
        if won > best {
            best = won;
            argmax.clear();
        }
        if won == best {
            argmax.push(table);
        }
    }
    DeterministicScan {
        best_rate: best as f64 / 4.0,
        argmax_tables: argmax,
        histogram,
    }
}

/// Exact expected win rate of a shared-randomness mixture of tables.
pub fn mixture_expected_rate(
    mixture: &[(DeterministicTable, f64)],
    weights: &PatternWeights,
) -> Result<f64, GameError> {
    let total: f64 = mixture.iter().map(|(_, w)| w).sum();
    if mixture.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) || total <= 0.0 {
        return Err(GameError::BadMixture);
    }
    Ok(mixture.iter().map(|(t, w)| w / total * t.expected_rate(weights)).sum())
}

/// Exact expected win rate when each player answers independently at random.
///
/// `private[p][q]` is the probability that player `p` answers +1 to question
/// `q` (0 = X, 1 = Y).
pub fn private_randomness_expected_rate(private: &[[f64; 2]; 3], weights: &PatternWeights) -> f64 {
    QuestionPattern::ALL
        .iter()
        .map(|&p| {
            let q = p.questions();
            // E[a·b·c] factorizes over independent players.
            let mean_product: f64 = (0..3)
                .map(|i| {
                    let plus = private[i][q[i] as usize];
                    2.0 * plus - 1.0
                })
                .product();
            let win = 0.5 * (1.0 + p.target().as_f64() * mean_product);
            weights.weight(p) * win
        })
        .sum()
}

/// What a player reports back to the referee.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reply {
    Detected(Sign),
    /// The player's detector fired nothing; the referee applies the fill rule.
    NoDetection,
}

/// One isolated player for one trial.
pub trait Player {
    fn answer(&mut self, question: Question, rnd: &mut RandomSource) -> Reply;
}

/// The three player handles of one trial, in order A, B, C.
pub struct Team {
    pub players: [Box<dyn Player>; 3],
}

/// A team strategy. `setup` runs once per trial, before questions are drawn,
/// and may use `shared` for pre-agreed randomness.
pub trait Strategy: Send + Sync {
    fn name(&self) -> String;

    fn setup(&self, shared: &mut RandomSource) -> Team;

    /// Whether answers come from measurements, and so are subject to detector losses.
    fn measures(&self) -> bool {
        false
    }
}

impl<S: Strategy + ?Sized> Strategy for Box<S> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn setup(&self, shared: &mut RandomSource) -> Team {
        (**self).setup(shared)
    }
    fn measures(&self) -> bool {
        (**self).measures()
    }
}

struct TablePlayer {
    player: usize,
    table: DeterministicTable,
}

impl Player for TablePlayer {
    fn answer(&mut self, question: Question, _rnd: &mut RandomSource) -> Reply {
        Reply::Detected(self.table.entry(self.player, question))
    }
}

fn table_team(table: DeterministicTable) -> Team {
    Team {
        players: [0, 1, 2].map(|player| Box::new(TablePlayer { player, table }) as Box<dyn Player>),
    }
}

/// Every player answers from a fixed table.
#[derive(Clone, Debug)]
pub struct DeterministicStrategy {
    pub table: DeterministicTable,
}

impl Strategy for DeterministicStrategy {
    fn name(&self) -> String {
        let s: Vec<String> = self.table.signs().iter().map(|s| s.value().to_string()).collect();
        format!("classical-table[{}]", s.join(","))
    }

    fn setup(&self, _shared: &mut RandomSource) -> Team {
        table_team(self.table)
    }
}

/// A table picked per trial with shared randomness.
#[derive(Clone, Debug)]
pub struct MixtureStrategy {
    tables: Vec<(DeterministicTable, f64)>,
}

impl MixtureStrategy {
    pub fn new(tables: Vec<(DeterministicTable, f64)>) -> Result<Self, GameError> {
        let total: f64 = tables.iter().map(|(_, w)| w).sum();
        if tables.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) || total <= 0.0 {
            return Err(GameError::BadMixture);
        }
        Ok(Self {
            tables: tables.into_iter().map(|(t, w)| (t, w / total)).collect(),
        })
    }
}

impl Strategy for MixtureStrategy {
    fn name(&self) -> String {
        format!("classical-mixture[{}]", self.tables.len())
    }

    fn setup(&self, shared: &mut RandomSource) -> Team {
        let u = shared.uniform();
        let mut acc = 0.0;
        let mut chosen = self.tables.last().expect("non-empty mixture").0;
        for (t, w) in &self.tables {
            acc += w;
            if u < acc {
                chosen = *t;
                break;
            }
        }
        table_team(chosen)
    }
}

struct CoinPlayer;

impl Player for CoinPlayer {
    fn answer(&mut self, _question: Question, rnd: &mut RandomSource) -> Reply {
        Reply::Detected(rnd.sign())
    }
}

/// Every answer is a private fair coin.
#[derive(Clone, Copy, Debug, Default)]
pub struct RandomStrategy;

impl Strategy for RandomStrategy {
    fn name(&self) -> String {
        "random".into()
    }

    fn setup(&self, _shared: &mut RandomSource) -> Team {
        Team {
            players: [0, 1, 2].map(|_| Box::new(CoinPlayer) as Box<dyn Player>),
        }
    }
}

struct QuantumPlayer {
    site: usize,
    state: Rc<RefCell<StateVector>>,
}

impl Player for QuantumPlayer {
    fn answer(&mut self, question: Question, rnd: &mut RandomSource) -> Reply {
        let mut state = self.state.borrow_mut();
        let (outcome, collapsed) = qsim::measure_pauli(&state, self.site, question.axis(), rnd)
            .expect("GHZ site index is valid and the state is normalized");
        *state = collapsed;
        Reply::Detected(outcome)
    }
}

/// Each player measures σx or σy on its own particle of a fresh GHZ triple.
#[derive(Clone, Copy, Debug, Default)]
pub struct QuantumStrategy;

pub fn quantum_strategy() -> QuantumStrategy {
    QuantumStrategy
}

impl Strategy for QuantumStrategy {
    fn name(&self) -> String {
        "quantum".into()
    }

    fn setup(&self, _shared: &mut RandomSource) -> Team {
        let state = Rc::new(RefCell::new(qsim::make_ghz()));
        Team {
            players: [0, 1, 2].map(|site| {
                Box::new(QuantumPlayer {
                    site,
                    state: Rc::clone(&state),
                }) as Box<dyn Player>
            }),
        }
    }

    fn measures(&self) -> bool {
        true
    }
}

/// How an undetected answer is replaced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillRule {
    #[default]
    RandomSign,
}

/// Independent per-player detection with a common efficiency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyModel {
    eta: f64,
    pub fill_rule: FillRule,
}

impl EfficiencyModel {
    pub fn new(eta: f64) -> Result<Self, GameError> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(GameError::EfficiencyOutOfRange(eta));
        }
        Ok(Self {
            eta,
            fill_rule: FillRule::RandomSign,
        })
    }

    pub fn perfect() -> Self {
        Self {
            eta: 1.0,
            fill_rule: FillRule::RandomSign,
        }
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// One detection event.
    pub fn detects(&self, rnd: &mut RandomSource) -> bool {
        rnd.uniform() < self.eta
    }
}

// Stream tags; players get PLAYER_STREAM + index, the referee's fill draws
// FILL_STREAM + index, and detection wrappers fork DETECT_STREAM off the
// player's own stream.
const PATTERN_STREAM: u64 = 0;
const SHARED_STREAM: u64 = 1;
const PLAYER_STREAM: u64 = 16;
const FILL_STREAM: u64 = 32;
const DETECT_STREAM: u64 = 48;

struct LossyPlayer {
    inner: Box<dyn Player>,
    model: EfficiencyModel,
}

impl Player for LossyPlayer {
    fn answer(&mut self, question: Question, rnd: &mut RandomSource) -> Reply {
        let mut detector = rnd.fork(DETECT_STREAM);
        if self.model.detects(&mut detector) {
            self.inner.answer(question, rnd)
        } else {
            Reply::NoDetection
        }
    }
}

/// A measuring strategy run through lossy detectors.
pub struct LossyStrategy<S> {
    inner: S,
    model: EfficiencyModel,
}

impl<S: Strategy> Strategy for LossyStrategy<S> {
    fn name(&self) -> String {
        format!("{}@eta={}", self.inner.name(), self.model.eta)
    }

    fn setup(&self, shared: &mut RandomSource) -> Team {
        let Team { players } = self.inner.setup(shared);
        let model = self.model;
        Team {
            players: players.map(|inner| Box::new(LossyPlayer { inner, model }) as Box<dyn Player>),
        }
    }

    fn measures(&self) -> bool {
        true
    }
}

/// Wraps every player of a measuring strategy in a detector of efficiency
/// `eta`. Strategies that perform no measurement are returned unchanged.
pub fn apply_detection<S: Strategy + 'static>(strategy: S, model: EfficiencyModel) -> Box<dyn Strategy> {
    if strategy.measures() {
        Box::new(LossyStrategy { inner: strategy, model })
    } else {
        Box::new(strategy)
    }
}

/// `eta³ + (1 − eta³)/2`.
pub fn theoretical_win_rate(eta: f64) -> Result<f64, GameError> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(GameError::EfficiencyOutOfRange(eta));
    }
    let all_detected = eta.powi(3);
    Ok(all_detected + 0.5 * (1.0 - all_detected))
}

/// One refereed round.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_index: u64,
    pub seed: u64,
    pub pattern: QuestionPattern,
    pub answers: AnswerTriple,
    pub detections: [bool; 3],
    pub win: bool,
}

impl TrialRecord {
    pub fn detected_count(&self) -> usize {
        self.detections.iter().filter(|d| **d).count()
    }
}

/// Plays trial `trial_index` of an experiment seeded with `master_seed`.
pub fn play_trial(
    strategy: &dyn Strategy,
    weights: &PatternWeights,
    master_seed: u64,
    trial_index: u64,
) -> TrialRecord {
    let seed = derive_trial_seed(master_seed, trial_index);
    let base = RandomSource::new(seed);
    let pattern = weights.draw(&mut base.fork(PATTERN_STREAM));
    let mut team = strategy.setup(&mut base.fork(SHARED_STREAM));
    let questions = pattern.questions();
    let mut answers = [Sign::Plus; 3];
    let mut detections = [true; 3];
    for (i, player) in team.players.iter_mut().enumerate() {
        let mut own = base.fork(PLAYER_STREAM + i as u64);
        match player.answer(questions[i], &mut own) {
            Reply::Detected(s) => answers[i] = s,
            Reply::NoDetection => {
                detections[i] = false;
                answers[i] = base.fork(FILL_STREAM + i as u64).sign();
            }
        }
    }
    let answers = AnswerTriple(answers);
    TrialRecord {
        trial_index,
        seed,
        pattern,
        answers,
        detections,
        win: wins(pattern, answers),
    }
}

/// Per-pattern tallies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternStats {
    pub pattern: QuestionPattern,
    pub trials: u64,
    pub wins: u64,
    pub win_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub strategy: String,
    pub trials: u64,
    pub wins: u64,
    pub win_rate: f64,
    /// Binomial standard error of `win_rate`.
    pub standard_error: f64,
    pub per_pattern: Vec<PatternStats>,
    pub triple_detection_rate: f64,
    pub master_seed: u64,
}

impl ExperimentReport {
    pub fn pattern(&self, pattern: QuestionPattern) -> &PatternStats {
        &self.per_pattern[pattern.ordinal()]
    }

    /// Aggregates trial records. Order of records does not matter.
    pub fn from_records(strategy: String, master_seed: u64, records: &[TrialRecord]) -> Self {
        let trials = records.len() as u64;
        let mut per = QuestionPattern::ALL.map(|p| (p, 0u64, 0u64));
        let mut wins = 0u64;
        let mut triple = 0u64;
        for r in records {
            let slot = &mut per[r.pattern.ordinal()];
            slot.1 += 1;
            if r.win {
                slot.2 += 1;
                wins += 1;
            }
            if r.detected_count() == 3 {
                triple += 1;
            }
        }
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let win_rate = ratio(wins, trials);
        Self {
            strategy,
            trials,
            wins,
            win_rate,
            standard_error: binomial_standard_error(win_rate, trials),
            per_pattern: per
                .iter()
                .map(|&(pattern, t, w)| PatternStats {
                    pattern,
                    trials: t,
                    wins: w,
                    win_rate: ratio(w, t),
                })
                .collect(),
            triple_detection_rate: ratio(triple, trials),
            master_seed,
        }
    }
}

/// `sqrt(p(1−p)/n)`.
pub fn binomial_standard_error(p: f64, n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (p * (1.0 - p) / n as f64).sqrt()
}

/// True when `observed` lies within `k` binomial standard errors of `expected`
/// (the error computed from `expected`).
pub fn within_sigma(observed: f64, expected: f64, n: u64, k: f64) -> bool {
    (observed - expected).abs() <= k * binomial_standard_error(expected, n) + 1e-12
}

/// Runs `trials` independent rounds with uniform patterns.
pub fn run_experiment(strategy: &dyn Strategy, trials: u64, master_seed: u64) -> Result<ExperimentReport, GameError> {
    run_experiment_with(strategy, trials, master_seed, &PatternWeights::uniform()).map(|(r, _)| r)
}

/// Like [`run_experiment`], with explicit pattern weights, also returning the
/// trial records in index order.
pub fn run_experiment_with(
    strategy: &dyn Strategy,
    trials: u64,
    master_seed: u64,
    weights: &PatternWeights,
) -> Result<(ExperimentReport, Vec<TrialRecord>), GameError> {
    if trials == 0 {
        return Err(GameError::NoTrials);
    }
    let records: Vec<TrialRecord> = (0..trials)
        .into_par_iter()
        .map(|i| play_trial(strategy, weights, master_seed, i))
        .collect();
    let report = ExperimentReport::from_records(strategy.name(), master_seed, &records);
    Ok((report, records))
}
