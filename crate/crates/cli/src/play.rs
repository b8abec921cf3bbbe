//! Interactive mode: the human is player A on a quantum team.
//!
//! Each round the referee draws a pattern and shows the human only their own
//! question. The human either types an answer or measures their particle of a
//! fresh GHZ triple; B and C always measure theirs afterwards.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use ghz_core::game::{self, AnswerTriple, Question, QuestionPattern};
use ghz_core::qsim::{self, StateVector};
use ghz_core::rng::derive_trial_seed;
use ghz_core::{RandomSource, Sign};
use serde::Serialize;

use crate::{CliError, Format, RunConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Choice {
    Measure,
    Answer(Sign),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Input {
    Choice(Choice),
    Quit,
}

/// Empty input measures, like pressing the "measure" key.
pub fn parse_input(line: &str) -> Option<Input> {
    match line.trim().to_ascii_lowercase().as_str() {
        "" | "m" | "measure" => Some(Input::Choice(Choice::Measure)),
        "+1" | "1" | "+" => Some(Input::Choice(Choice::Answer(Sign::Plus))),
        "-1" | "-" => Some(Input::Choice(Choice::Answer(Sign::Minus))),
        "q" | "quit" | "exit" => Some(Input::Quit),
        _ => None,
    }
}

/// Wins and streaks for one answering mode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ModeStats {
    pub rounds: u64,
    pub wins: u64,
    pub current_streak: u64,
    pub best_streak: u64,
}

impl ModeStats {
    fn record(&mut self, win: bool) {
        self.rounds += 1;
        if win {
            self.wins += 1;
            self.current_streak += 1;
            self.best_streak = self.best_streak.max(self.current_streak);
        } else {
            self.current_streak = 0;
        }
    }

    pub fn win_rate(&self) -> f64 {
        if self.rounds == 0 {
            0.0
        } else {
            self.wins as f64 / self.rounds as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SessionReport {
    pub master_seed: u64,
    pub rounds: u64,
    pub finished: bool,
    pub measured: ModeStats,
    pub free: ModeStats,
}

impl SessionReport {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} after {} rounds (seed {})",
            if self.finished {
                "session complete"
            } else {
                "session stopped"
            },
            self.rounds,
            self.master_seed
        );
        for (label, m) in [("measured", &self.measured), ("free", &self.free)] {
            let _ = writeln!(
                out,
                "  {label:<8} rounds {:>5}  wins {:>5}  rate {:.4} (se {:.4})  best streak {}",
                m.rounds,
                m.wins,
                m.win_rate(),
                game::binomial_standard_error(m.win_rate(), m.rounds),
                m.best_streak
            );
        }
        out
    }
}

/// A round waiting for player A's answer.
#[derive(Clone, Debug)]
pub struct Round {
    pub index: u64,
    pub pattern: QuestionPattern,
    state: StateVector,
    rnd: RandomSource,
}

impl Round {
    pub fn question(&self) -> Question {
        self.pattern.questions()[0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoundResult {
    pub pattern: QuestionPattern,
    pub choice: Choice,
    pub answers: AnswerTriple,
    pub win: bool,
}

/// Game state without any I/O.
#[derive(Clone, Debug)]
pub struct PlaySession {
    master_seed: u64,
    next_round: u64,
    measured: ModeStats,
    free: ModeStats,
}

impl PlaySession {
    pub fn new(master_seed: u64) -> Self {
        Self {
            master_seed,
            next_round: 0,
            measured: ModeStats::default(),
            free: ModeStats::default(),
        }
    }

    pub fn begin_round(&mut self) -> Round {
        let index = self.next_round;
        self.next_round += 1;
        let rnd = RandomSource::new(derive_trial_seed(self.master_seed, index));
        let pattern = game::draw_pattern(&mut rnd.fork(0));
        Round {
            index,
            pattern,
            state: qsim::make_ghz(),
            rnd,
        }
    }

    pub fn resolve(&mut self, round: Round, choice: Choice) -> RoundResult {
        let Round {
            pattern,
            mut state,
            rnd,
            ..
        } = round;
        let questions = pattern.questions();
        let mut answers = [Sign::Plus; 3];
        answers[0] = match choice {
            Choice::Answer(s) => s,
            Choice::Measure => measure(&mut state, 0, questions[0], &mut rnd.fork(16)),
        };
        for site in 1..3 {
            answers[site] = measure(&mut state, site, questions[site], &mut rnd.fork(16 + site as u64));
        }
        let answers = AnswerTriple(answers);
        let win = game::wins(pattern, answers);
        match choice {
            Choice::Measure => self.measured.record(win),
            Choice::Answer(_) => self.free.record(win),
        }
        RoundResult {
            pattern,
            choice,
            answers,
            win,
        }
    }

    pub fn report(&self, finished: bool) -> SessionReport {
        SessionReport {
            master_seed: self.master_seed,
            rounds: self.measured.rounds + self.free.rounds,
            finished,
            measured: self.measured,
            free: self.free,
        }
    }
}

fn measure(state: &mut StateVector, site: usize, q: Question, rnd: &mut RandomSource) -> Sign {
    let (o, next) = qsim::measure_pauli(state, site, q.axis(), rnd).expect("GHZ sites 0..3 are valid");
    *state = next;
    o
}

/// Drives a session over line-based input until the round limit, `q`, or end
/// of input. Returns the final report as written.
pub fn run_session(cfg: &RunConfig, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<String, CliError> {
    let io = |e: std::io::Error| CliError::Internal(e.to_string());
    let mut session = PlaySession::new(cfg.seed);
    writeln!(
        out,
        "You are player A. Answer +1 or -1 yourself, press Enter (or m) to measure your particle, q to quit."
    )
    .map_err(io)?;
    let mut finished = true;
    'rounds: for _ in 0..cfg.trials {
        let round = session.begin_round();
        let choice = loop {
            write!(
                out,
                "round {}: your question is {} > ",
                round.index + 1,
                round.question().axis()
            )
            .map_err(io)?;
            out.flush().map_err(io)?;
            let mut line = String::new();
            if input.read_line(&mut line).map_err(io)? == 0 {
                finished = false;
                writeln!(out).map_err(io)?;
                break 'rounds;
            }
            match parse_input(&line) {
                Some(Input::Choice(c)) => break c,
                Some(Input::Quit) => {
                    finished = false;
                    break 'rounds;
                }
                None => writeln!(out, "  type +1, -1, m, or q").map_err(io)?,
            }
        };
        let r = session.resolve(round, choice);
        let [a, b, c] = r.answers.0;
        writeln!(
            out,
            "  pattern {}: A={a} B={b} C={c}, product {} (target {}) {}",
            r.pattern,
            r.answers.product(),
            r.pattern.target(),
            if r.win { "WIN" } else { "lose" }
        )
        .map_err(io)?;
    }
    let report = session.report(finished);
    let text = match cfg.format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))?;
            s.push('\n');
            s
        }
        _ => report.render_text(),
    };
    out.write_all(text.as_bytes()).map_err(io)?;
    out.flush().map_err(io)?;
    Ok(text)
}
