//! The instruction-kit local hidden variable model.
//!
//! Each particle triple carries, for every player and axis, one of "up",
//! "down" or "be not detected". Exactly one entry is "be not detected", so the
//! two patterns that would query it never produce a triple detection, and the
//! remaining two patterns are answered correctly.

use serde::{Deserialize, Serialize};

use crate::game::{
    self, ExperimentReport, GameError, PatternWeights, Player, Question, QuestionPattern, Reply, Strategy, Team,
    TrialRecord,
};
use crate::qsim::Sign;
use crate::rng::RandomSource;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionEntry {
    Plus,
    Minus,
    NotDetected,
}

impl InstructionEntry {
    const ALL: [InstructionEntry; 3] = [
        InstructionEntry::Plus,
        InstructionEntry::Minus,
        InstructionEntry::NotDetected,
    ];

    pub fn sign(self) -> Option<Sign> {
        match self {
            InstructionEntry::Plus => Some(Sign::Plus),
            InstructionEntry::Minus => Some(Sign::Minus),
            InstructionEntry::NotDetected => None,
        }
    }
}

impl From<Sign> for InstructionEntry {
    fn from(s: Sign) -> Self {
        match s {
            Sign::Plus => InstructionEntry::Plus,
            Sign::Minus => InstructionEntry::Minus,
        }
    }
}

/// Instructions indexed by player (A, B, C) and question (X, Y).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InstructionKit {
    pub entries: [[InstructionEntry; 2]; 3],
}

impl InstructionKit {
    pub fn entry(&self, player: usize, question: Question) -> InstructionEntry {
        self.entries[player][question as usize]
    }

    /// Every `(player, question)` whose instruction is "be not detected".
    pub fn silent_entries(&self) -> Vec<(usize, Question)> {
        let mut out = Vec::new();
        for (p, row) in self.entries.iter().enumerate() {
            for (q, e) in [Question::X, Question::Y].into_iter().zip(row) {
                if *e == InstructionEntry::NotDetected {
                    out.push((p, q));
                }
            }
        }
        out
    }

    /// True when the pattern asks some player a question it will not answer.
    pub fn pattern_hits_silence(&self, pattern: QuestionPattern) -> bool {
        pattern
            .questions()
            .iter()
            .enumerate()
            .any(|(p, &q)| self.entry(p, q) == InstructionEntry::NotDetected)
    }

    /// Probability of a triple detection under the given pattern weights.
    pub fn triple_detection_probability(&self, weights: &PatternWeights) -> f64 {
        QuestionPattern::ALL
            .iter()
            .filter(|&&p| !self.pattern_hits_silence(p))
            .map(|&p| weights.weight(p))
            .sum()
    }
}

/// Exactly one silent entry, and every pattern that avoids it meets its target.
pub fn kit_is_admissible(kit: &InstructionKit) -> bool {
    if kit.silent_entries().len() != 1 {
        return false;
    }
    QuestionPattern::ALL
        .iter()
        .filter(|&&p| !kit.pattern_hits_silence(p))
        .all(|&p| {
            let q = p.questions();
            let signs = (0..3).map(|i| kit.entry(i, q[i]).sign().expect("pattern avoids the silent entry"));
            Sign::product(signs) == p.target()
        })
}

/// All admissible kits in lexicographic order over
/// `(A.X, A.Y, B.X, B.Y, C.X, C.Y)` with `Plus < Minus < NotDetected`.
pub fn enumerate_kits() -> Vec<InstructionKit> {
    (0..729usize)
        .map(|mut n| {
            let mut flat = [InstructionEntry::Plus; 6];
            for slot in flat.iter_mut().rev() {
                *slot = InstructionEntry::ALL[n % 3];
                n /= 3;
            }
            InstructionKit {
                entries: [[flat[0], flat[1]], [flat[2], flat[3]], [flat[4], flat[5]]],
            }
        })
        .filter(kit_is_admissible)
        .collect()
}

/// Each player's reply when following its instructions.
pub fn play_with_kit(kit: &InstructionKit, pattern: QuestionPattern) -> [Reply; 3] {
    let q = pattern.questions();
    [0, 1, 2].map(|p| match kit.entry(p, q[p]).sign() {
        Some(s) => Reply::Detected(s),
        None => Reply::NoDetection,
    })
}

struct KitPlayer {
    player: usize,
    kit: InstructionKit,
}

impl Player for KitPlayer {
    fn answer(&mut self, question: Question, _rnd: &mut RandomSource) -> Reply {
        match self.kit.entry(self.player, question).sign() {
            Some(s) => Reply::Detected(s),
            None => Reply::NoDetection,
        }
    }
}

/// Draws a fresh kit uniformly from all admissible kits every trial.
#[derive(Clone, Debug)]
pub struct LhvStrategy {
    kits: Vec<InstructionKit>,
}

impl LhvStrategy {
    pub fn new() -> Self {
        Self { kits: enumerate_kits() }
    }

    pub fn kits(&self) -> &[InstructionKit] {
        &self.kits
    }
}

impl Default for LhvStrategy {
    fn default() -> Self {
        Self::new()
    }
}

impl Strategy for LhvStrategy {
    fn name(&self) -> String {
        "lhv".into()
    }

    fn setup(&self, shared: &mut RandomSource) -> Team {
        let kit = self.kits[shared.below(self.kits.len())];
        Team {
            players: [0, 1, 2].map(|player| Box::new(KitPlayer { player, kit }) as Box<dyn Player>),
        }
    }
}

/// Number of trials by how many of the three particles were detected.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub triple: u64,
    pub double: u64,
    pub single: u64,
    pub null: u64,
}

impl DetectionCounts {
    pub fn from_records(records: &[TrialRecord]) -> Self {
        let mut c = Self::default();
        for r in records {
            match r.detected_count() {
                3 => c.triple += 1,
                2 => c.double += 1,
                1 => c.single += 1,
                _ => c.null += 1,
            }
        }
        c
    }
}

/// Experiment report extended with detection statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LhvReport {
    #[serde(flatten)]
    pub experiment: ExperimentReport,
    /// Win rate among triple-detected trials.
    pub conditional_win_rate: f64,
    pub triple_detections: u64,
    pub double_detections: u64,
    pub single_detections: u64,
    pub null_detections: u64,
}

impl LhvReport {
    pub fn from_records(experiment: ExperimentReport, records: &[TrialRecord]) -> Self {
        let counts = DetectionCounts::from_records(records);
        let triple_wins = records.iter().filter(|r| r.detected_count() == 3 && r.win).count() as u64;
        let conditional_win_rate = if counts.triple == 0 {
            0.0
        } else {
            triple_wins as f64 / counts.triple as f64
        };
        Self {
            experiment,
            conditional_win_rate,
            triple_detections: counts.triple,
            double_detections: counts.double,
            single_detections: counts.single,
            null_detections: counts.null,
        }
    }
}

/// Plays the kit model against uniformly drawn patterns.
///
/// Undetected answers are filled with a fair random sign, the same rule the
/// lossy quantum team uses, so `win_rate` is comparable across models.
pub fn lhv_statistics(trials: u64, master_seed: u64) -> Result<(LhvReport, Vec<TrialRecord>), GameError> {
    let strategy = LhvStrategy::new();
    let (report, records) = game::run_experiment_with(&strategy, trials, master_seed, &PatternWeights::uniform())?;
    Ok((LhvReport::from_records(report, &records), records))
}
