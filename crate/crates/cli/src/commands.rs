use std::fmt::Write as _;
use std::fs;

use clap::ValueEnum;
use ghz_core::game::{
    self, apply_detection, quantum_strategy, DeterministicStrategy, DeterministicTable, EfficiencyModel,
    ExperimentReport, QuestionPattern, RandomStrategy, Strategy as _, TrialRecord,
};
use ghz_core::lhv::{self, LhvReport};
use ghz_core::logic::{self, ParitySystem, ProofReport};
use ghz_core::teleport::{self, MeasurementOrder, TeleportSummary, TeleportTrialRecord, Teleporter};
use ghz_core::tsvf;
use ghz_core::Sign;
use serde::Serialize;

use crate::{CliError, Format, Order, ProveTarget, RunConfig};

/// Standard errors allowed between an estimate and its reference value.
const SIGMAS: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StrategyChoice {
    Quantum,
    ClassicalBest,
    ClassicalTable,
    Lhv,
    Random,
}

/// One statistical comparison, with everything needed to audit it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub observed: f64,
    pub expected: f64,
    pub trials: u64,
    /// Binomial standard error at the expected rate. Zero means exact equality.
    pub standard_error: f64,
    pub bound_sigmas: f64,
    pub pass: bool,
}

impl Check {
    pub fn binomial(name: &str, observed: f64, expected: f64, trials: u64) -> Self {
        Self {
            name: name.into(),
            observed,
            expected,
            trials,
            standard_error: game::binomial_standard_error(expected, trials),
            bound_sigmas: SIGMAS,
            pass: game::within_sigma(observed, expected, trials, SIGMAS),
        }
    }

    pub fn exact(name: &str, observed: f64, expected: f64, trials: u64) -> Self {
        Self {
            name: name.into(),
            observed,
            expected,
            trials,
            standard_error: 0.0,
            bound_sigmas: SIGMAS,
            pass: observed == expected,
        }
    }

    fn line(&self) -> String {
        format!(
            "check {}: observed {:.6}, expected {:.6} (n = {}, se = {:.6}, bound {} se) {}",
            self.name,
            self.observed,
            self.expected,
            self.trials,
            self.standard_error,
            self.bound_sigmas,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

fn unsupported(format: Format, command: &str) -> CliError {
    CliError::Invalid(format!(
        "{command} does not support --format {}",
        format.to_possible_value().expect("no skipped variants").get_name()
    ))
}

fn json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(internal)?;
    s.push('\n');
    Ok(s)
}

fn jsonl<T: Serialize>(rows: &[T]) -> Result<String, CliError> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).map_err(internal)?);
        out.push('\n');
    }
    Ok(out)
}

fn csv_table<R: Serialize>(rows: impl IntoIterator<Item = R>) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(internal)?;
    }
    let bytes = w.into_inner().map_err(internal)?;
    String::from_utf8(bytes).map_err(internal)
}

#[derive(Serialize)]
struct GameOutput<'a, R> {
    #[serde(flatten)]
    report: &'a R,
    eta: f64,
    detection_applied: bool,
    checks: Vec<Check>,
}

#[derive(Serialize)]
struct PatternRow {
    pattern: String,
    trials: u64,
    wins: u64,
    win_rate: f64,
}

pub(crate) fn game(cfg: &RunConfig, choice: StrategyChoice, table: Option<&[Sign]>) -> Result<String, CliError> {
    if table.is_some() && choice != StrategyChoice::ClassicalTable {
        return Err(invalid("--table only applies to --strategy classical-table"));
    }
    let model = EfficiencyModel::new(cfg.eta).map_err(invalid)?;
    let n = cfg.trials;
    if choice == StrategyChoice::Lhv {
        let (report, records) = lhv::lhv_statistics(n, cfg.seed).map_err(internal)?;
        let checks = vec![
            Check::binomial("triple_detection_rate", report.experiment.triple_detection_rate, 0.5, n),
            Check::exact(
                "conditional_win_rate",
                report.conditional_win_rate,
                1.0,
                report.triple_detections,
            ),
            Check::exact("single_detections", report.single_detections as f64, 0.0, n),
            Check::exact("null_detections", report.null_detections as f64, 0.0, n),
        ];
        return finish_game(cfg, &report, &report.experiment, &records, false, checks, Some(&report));
    }
    let (strategy, expected): (Box<dyn game::Strategy>, f64) = match choice {
        StrategyChoice::Quantum => (
            apply_detection(quantum_strategy(), model),
            game::theoretical_win_rate(cfg.eta).map_err(invalid)?,
        ),
        StrategyChoice::ClassicalBest => {
            let table = game::scan_deterministic().argmax_tables[0];
            (Box::new(DeterministicStrategy { table }), 0.75)
        }
        StrategyChoice::ClassicalTable => {
            let signs = table.ok_or_else(|| invalid("classical-table needs --table with six signs"))?;
            let signs: [Sign; 6] = signs
                .try_into()
                .map_err(|_| invalid("--table takes exactly six signs"))?;
            let table = DeterministicTable::from_signs(signs);
            let rate = table.expected_rate(&game::PatternWeights::uniform());
            (Box::new(DeterministicStrategy { table }), rate)
        }
        StrategyChoice::Random => (Box::new(RandomStrategy), 0.5),
        StrategyChoice::Lhv => unreachable!("handled above"),
    };
    let measures = strategy.measures();
    let (report, records) =
        game::run_experiment_with(&strategy, n, cfg.seed, &game::PatternWeights::uniform()).map_err(internal)?;
    let check = if expected == 0.0 || expected == 1.0 {
        Check::exact("win_rate", report.win_rate, expected, n)
    } else {
        Check::binomial("win_rate", report.win_rate, expected, n)
    };
    finish_game(cfg, &report, &report, &records, measures, vec![check], None)
}

fn finish_game<R: Serialize>(
    cfg: &RunConfig,
    full: &R,
    report: &ExperimentReport,
    records: &[TrialRecord],
    detection_applied: bool,
    checks: Vec<Check>,
    lhv: Option<&LhvReport>,
) -> Result<String, CliError> {
    match cfg.format {
        Format::Json => json(&GameOutput {
            report: full,
            eta: cfg.eta,
            detection_applied,
            checks,
        }),
        Format::Jsonl => jsonl(records),
        Format::Csv => csv_table(report.per_pattern.iter().map(|p| PatternRow {
            pattern: p.pattern.to_string(),
            trials: p.trials,
            wins: p.wins,
            win_rate: p.win_rate,
        })),
        Format::Text => {
            let mut out = String::new();
            let _ = writeln!(out, "strategy: {}", report.strategy);
            let _ = writeln!(
                out,
                "trials: {}  seed: {}  eta: {}",
                report.trials, report.master_seed, cfg.eta
            );
            if !detection_applied && cfg.eta < 1.0 {
                let _ = writeln!(out, "(no measurement is made, so the detector model does not apply)");
            }
            let _ = writeln!(
                out,
                "wins: {}  win_rate: {:.6}  standard_error: {:.6}",
                report.wins, report.win_rate, report.standard_error
            );
            let _ = writeln!(out, "pattern  trials  wins  win_rate");
            for p in &report.per_pattern {
                let _ = writeln!(
                    out,
                    "{:<7}  {:>6}  {:>4}  {:.6}",
                    p.pattern, p.trials, p.wins, p.win_rate
                );
            }
            let _ = writeln!(out, "triple_detection_rate: {:.6}", report.triple_detection_rate);
            if let Some(l) = lhv {
                let _ = writeln!(
                    out,
                    "detections: triple {}  double {}  single {}  null {}",
                    l.triple_detections, l.double_detections, l.single_detections, l.null_detections
                );
                let _ = writeln!(out, "conditional_win_rate: {:.6}", l.conditional_win_rate);
            }
            for c in &checks {
                let _ = writeln!(out, "{}", c.line());
            }
            Ok(out)
        }
    }
}

#[derive(Clone, Debug, Serialize)]
struct SweepRow {
    eta: f64,
    empirical: f64,
    theoretical: f64,
    trials: u64,
    standard_error: f64,
    within_bound: bool,
}

#[derive(Serialize)]
struct SweepOutput<'a> {
    master_seed: u64,
    trials_per_point: u64,
    bound_sigmas: f64,
    points: &'a [SweepRow],
}

pub(crate) fn sweep(cfg: &RunConfig, grid: &[f64]) -> Result<String, CliError> {
    if grid.is_empty() {
        return Err(invalid("--grid is empty"));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &eta in grid {
        let model = EfficiencyModel::new(eta).map_err(invalid)?;
        let strategy = apply_detection(quantum_strategy(), model);
        let report = game::run_experiment(&strategy, cfg.trials, cfg.seed).map_err(internal)?;
        let theoretical = game::theoretical_win_rate(eta).map_err(invalid)?;
        let check = Check::binomial("win_rate", report.win_rate, theoretical, cfg.trials);
        rows.push(SweepRow {
            eta,
            empirical: report.win_rate,
            theoretical,
            trials: cfg.trials,
            standard_error: check.standard_error,
            within_bound: check.pass,
        });
    }
    match cfg.format {
        Format::Csv => csv_table(&rows),
        Format::Json => json(&SweepOutput {
            master_seed: cfg.seed,
            trials_per_point: cfg.trials,
            bound_sigmas: SIGMAS,
            points: &rows,
        }),
        Format::Jsonl => jsonl(&rows),
        Format::Text => {
            let mut out = String::new();
            let _ = writeln!(
                out,
                "quantum team, {} trials per point, seed {}, bound {} se",
                cfg.trials, cfg.seed, SIGMAS
            );
            let _ = writeln!(out, "eta       empirical  theoretical  std_err   within");
            for r in &rows {
                let _ = writeln!(
                    out,
                    "{:<8}  {:.6}   {:.6}     {:.6}  {}",
                    r.eta,
                    r.empirical,
                    r.theoretical,
                    r.standard_error,
                    if r.within_bound { "yes" } else { "NO" }
                );
            }
            Ok(out)
        }
    }
}

pub(crate) fn prove(cfg: &RunConfig, target: &ProveTarget) -> Result<String, CliError> {
    let report: ProofReport = match target {
        ProveTarget::Classical => logic::prove(
            "pre-agreed answers against the four winning conditions",
            logic::build_classical_game_system(),
        ),
        ProveTarget::Stapp { outcomes } => {
            let triple = game::AnswerTriple(three(outcomes)?);
            let system = logic::build_stapp_system(triple).map_err(invalid)?;
            let [a, b, c] = triple.0;
            logic::prove(
                &format!("counterfactual y values given x outcomes A={a} B={b} C={c}"),
                system,
            )
        }
        ProveTarget::File { path } => {
            let text = fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
            let system = ParitySystem::from_text(&text).map_err(invalid)?;
            logic::prove(&path.display().to_string(), system)
        }
    };
    match cfg.format {
        Format::Text => Ok(report.render_text()),
        Format::Json => json(&report),
        other => Err(unsupported(other, "prove")),
    }
}

fn three(signs: &[Sign]) -> Result<[Sign; 3], CliError> {
    signs.try_into().map_err(|_| invalid("expected exactly three signs"))
}

#[derive(Serialize)]
struct TeleportOutput<'a> {
    master_seed: u64,
    order: MeasurementOrder,
    #[serde(flatten)]
    summary: &'a TeleportSummary,
    exhaustive_cells: usize,
    exhaustive_cells_certain: usize,
    checks: Vec<Check>,
}

pub(crate) fn teleport(cfg: &RunConfig, order: Order) -> Result<String, CliError> {
    let order = match order {
        Order::BellFirst => MeasurementOrder::BellFirst,
        Order::RemoteFirst => MeasurementOrder::RemoteFirst,
        Order::Interleaved => MeasurementOrder::Interleaved,
    };
    let teleporter = Teleporter::new().map_err(internal)?;
    let records: Vec<TeleportTrialRecord> = teleporter.run_trials(cfg.trials, cfg.seed, order);
    if cfg.format == Format::Jsonl {
        return jsonl(&records);
    }
    let summary = teleport::summarize(&records).map_err(internal)?;
    if cfg.format == Format::Csv {
        return Ok(summary.to_csv());
    }
    let cells: Vec<_> = QuestionPattern::ALL
        .iter()
        .flat_map(|&p| teleporter.condition_on_bell_triples(p))
        .collect();
    let certain = cells.iter().filter(|c| c.corrected_is_certain()).count();
    let n = summary.trials;
    let mut checks = vec![
        Check::exact("corrected_rate", summary.corrected_rate, 1.0, n),
        Check::binomial("raw_rate", summary.raw_rate, 0.5, n),
    ];
    checks.push(Check {
        // measured in cell standard errors, hence the unit error
        name: "bell_histogram_max_deviation_in_se".into(),
        observed: summary.bell_histogram_max_sigma,
        expected: 0.0,
        trials: n,
        standard_error: 1.0,
        bound_sigmas: SIGMAS,
        pass: summary.bell_histogram_max_sigma <= SIGMAS,
    });
    if cfg.eta < 1.0 {
        let model = EfficiencyModel::new(cfg.eta).map_err(invalid)?;
        let rate = teleport::coincidence_rate(&model, n, cfg.seed).map_err(internal)?;
        checks.push(Check::binomial("nine_detector_coincidence", rate, cfg.eta.powi(9), n));
    }
    match cfg.format {
        Format::Json => json(&TeleportOutput {
            master_seed: cfg.seed,
            order,
            summary: &summary,
            exhaustive_cells: cells.len(),
            exhaustive_cells_certain: certain,
            checks,
        }),
        _ => {
            let mut out = String::new();
            let _ = writeln!(
                out,
                "entanglement swapping: {} trials, seed {}, order {:?}",
                n, cfg.seed, order
            );
            let _ = writeln!(out, "corrected success: {:.6}", summary.corrected_rate);
            let _ = writeln!(
                out,
                "raw success: {:.6} (se {:.6})",
                summary.raw_rate, summary.raw_standard_error
            );
            let _ = writeln!(out, "pattern  trials  corrected  raw");
            for p in &summary.per_pattern {
                let _ = writeln!(
                    out,
                    "{:<7}  {:>6}  {:.6}   {:.6}",
                    p.pattern, p.trials, p.corrected_rate, p.raw_rate
                );
            }
            let (lo, hi) = summary
                .bell_histogram
                .iter()
                .fold((u64::MAX, 0), |(lo, hi), &c| (lo.min(c), hi.max(c)));
            let _ = writeln!(
                out,
                "Bell triples: 64 cells, counts {lo}..{hi}, max deviation {:.3} se",
                summary.bell_histogram_max_sigma
            );
            let _ = writeln!(out, "exhaustive conditioning: {certain}/{} cells certain", cells.len());
            for c in &checks {
                let _ = writeln!(out, "{}", c.line());
            }
            Ok(out)
        }
    }
}

pub(crate) fn elements(cfg: &RunConfig, outcomes: &[Sign]) -> Result<String, CliError> {
    let outcomes = three(outcomes)?;
    if Sign::product(outcomes) != Sign::Minus {
        return Err(invalid(
            "the x outcomes must multiply to -1; any other triple never occurs for this state",
        ));
    }
    let report = tsvf::elements_report(outcomes).map_err(internal)?;
    match cfg.format {
        Format::Text => Ok(report.render_text()),
        Format::Json => json(&report),
        other => Err(unsupported(other, "elements")),
    }
}
