//! ±1 parity constraint systems.
//!
//! A constraint says that the product of some ±1 variables equals a target
//! sign. Mapping +1 to bit 0 and −1 to bit 1 turns each constraint into a
//! linear equation over GF(2), so inconsistency always has a short witness: a
//! set of constraints whose variables cancel in pairs while their targets
//! multiply to −1.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use fixedbitset::FixedBitSet;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::AnswerTriple;
use crate::qsim::Sign;

/// Exhaustive search refuses systems larger than this.
pub const MAX_ENUMERATION_VARS: usize = 24;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LogicError {
    #[error("variable `{0}` is declared twice")]
    DuplicateVariable(String),
    #[error("variable `{0}` is not declared")]
    UndeclaredVariable(String),
    #[error("a constraint needs at least one variable")]
    EmptyConstraint,
    #[error("{0} variables exceed the enumeration limit of {MAX_ENUMERATION_VARS}")]
    TooManyVariables(usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("actual outcomes must multiply to -1, got {0}")]
    InconsistentOutcomes(Sign),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VarId(pub String);

impl VarId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for VarId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Product of `vars` equals `target`. Repeated variables cancel pairwise.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParityConstraint {
    pub vars: Vec<VarId>,
    pub target: Sign,
}

impl ParityConstraint {
    pub fn render(&self) -> String {
        let lhs: Vec<&str> = self.vars.iter().map(VarId::as_str).collect();
        format!("{} = {}", lhs.join(" * "), self.target)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParitySystem {
    variables: Vec<VarId>,
    constraints: Vec<ParityConstraint>,
}

impl ParitySystem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, name: &str) -> Result<(), LogicError> {
        if self.index_of(name).is_some() {
            return Err(LogicError::DuplicateVariable(name.into()));
        }
        self.variables.push(VarId(name.into()));
        Ok(())
    }

    pub fn add_constraint(&mut self, vars: &[&str], target: Sign) -> Result<(), LogicError> {
        if vars.is_empty() {
            return Err(LogicError::EmptyConstraint);
        }
        if let Some(missing) = vars.iter().find(|v| self.index_of(v).is_none()) {
            return Err(LogicError::UndeclaredVariable((*missing).into()));
        }
        self.constraints.push(ParityConstraint {
            vars: vars.iter().map(|v| VarId((*v).into())).collect(),
            target,
        });
        Ok(())
    }

    pub fn variables(&self) -> &[VarId] {
        &self.variables
    }

    pub fn constraints(&self) -> &[ParityConstraint] {
        &self.constraints
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.0 == name)
    }

    /// Copy of the system with constraint `index` removed.
    pub fn without_constraint(&self, index: usize) -> Self {
        let mut s = self.clone();
        s.constraints.remove(index);
        s
    }

    /// Variable parity of each constraint after pairwise cancellation.
    fn rows(&self) -> Vec<FixedBitSet> {
        self.constraints
            .iter()
            .map(|c| {
                let mut row = FixedBitSet::with_capacity(self.variables.len());
                for v in &c.vars {
                    row.toggle(self.index_of(v.as_str()).expect("declared"));
                }
                row
            })
            .collect()
    }

    /// Whether constraint `index` holds under `values` (declaration order).
    pub fn constraint_holds(&self, index: usize, values: &[Sign]) -> bool {
        let c = &self.constraints[index];
        let product = Sign::product(
            c.vars
                .iter()
                .map(|v| values[self.index_of(v.as_str()).expect("declared")]),
        );
        product == c.target
    }

    pub fn satisfied_count(&self, values: &[Sign]) -> usize {
        (0..self.constraints.len())
            .filter(|&i| self.constraint_holds(i, values))
            .count()
    }

    /// Plain-text form: `VAR name` lines, then `CON a b ... => +1|-1` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for v in &self.variables {
            let _ = writeln!(out, "VAR {v}");
        }
        for c in &self.constraints {
            let lhs: Vec<&str> = c.vars.iter().map(VarId::as_str).collect();
            let _ = writeln!(out, "CON {} => {}", lhs.join(" "), c.target);
        }
        out
    }

    /// Parses the plain-text form. Blank lines and `#` comments are ignored.
    pub fn from_text(text: &str) -> Result<Self, LogicError> {
        let mut sys = Self::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |e: LogicError| match e {
                LogicError::Parse { .. } => e,
                other => LogicError::Parse {
                    line: n + 1,
                    message: other.to_string(),
                },
            };
            let parse_err = |message: &str| LogicError::Parse {
                line: n + 1,
                message: message.into(),
            };
            let mut words = line.split_whitespace();
            match words.next() {
                Some("VAR") => {
                    let name = words.next().ok_or_else(|| parse_err("VAR needs a name"))?;
                    if words.next().is_some() {
                        return Err(parse_err("VAR takes exactly one name"));
                    }
                    sys.add_variable(name).map_err(at)?;
                }
                Some("CON") => {
                    let rest: Vec<&str> = words.collect();
                    let arrow = rest
                        .iter()
                        .position(|w| *w == "=>")
                        .ok_or_else(|| parse_err("CON needs `=> +1` or `=> -1`"))?;
                    let target = match rest.get(arrow + 1..) {
                        Some(["+1"]) | Some(["1"]) => Sign::Plus,
                        Some(["-1"]) => Sign::Minus,
                        _ => return Err(parse_err("target must be +1 or -1")),
                    };
                    sys.add_constraint(&rest[..arrow], target).map_err(at)?;
                }
                Some(other) => return Err(parse_err(&format!("unknown directive `{other}`"))),
                None => unreachable!(),
            }
        }
        Ok(sys)
    }
}

/// Variable values in declaration order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment(pub Vec<(VarId, Sign)>);

impl Assignment {
    pub fn get(&self, name: &str) -> Option<Sign> {
        self.0.iter().find(|(v, _)| v.0 == name).map(|(_, s)| *s)
    }

    pub fn values(&self) -> Vec<Sign> {
        self.0.iter().map(|(_, s)| *s).collect()
    }

    fn from_values(system: &ParitySystem, values: impl IntoIterator<Item = Sign>) -> Self {
        Self(system.variables.iter().cloned().zip(values).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum SolveResult {
    Sat {
        assignment: Assignment,
    },
    /// Indices of original constraints whose product is `+1 = −1`.
    Unsat {
        certificate: Vec<usize>,
    },
}

impl SolveResult {
    pub fn is_sat(&self) -> bool {
        matches!(self, SolveResult::Sat { .. })
    }

    /// Checks a satisfying assignment or an inconsistency certificate.
    pub fn verify(&self, system: &ParitySystem) -> bool {
        match self {
            SolveResult::Sat { assignment } => {
                let values = assignment.values();
                values.len() == system.variables.len()
                    && (0..system.constraints.len()).all(|i| system.constraint_holds(i, &values))
            }
            SolveResult::Unsat { certificate } => verify_certificate(system, certificate),
        }
    }
}

/// True iff multiplying the cited constraints cancels every variable and
/// leaves target product −1.
pub fn verify_certificate(system: &ParitySystem, certificate: &[usize]) -> bool {
    if certificate.is_empty() || certificate.iter().any(|&i| i >= system.constraints.len()) {
        return false;
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut target = Sign::Plus;
    for &i in certificate {
        let c = &system.constraints[i];
        for v in &c.vars {
            *counts.entry(v.as_str()).or_default() += 1;
        }
        target = target * c.target;
    }
    counts.values().all(|n| n % 2 == 0) && target == Sign::Minus
}

/// Gauss-Jordan elimination over GF(2) with row provenance.
struct Elimination {
    /// `(pivot column, row bits, rhs, original constraints combined)`
    pivots: Vec<(usize, FixedBitSet, bool, FixedBitSet)>,
    conflict: Option<FixedBitSet>,
}

fn eliminate(system: &ParitySystem) -> Elimination {
    let m = system.constraints.len();
    let mut pivots: Vec<(usize, FixedBitSet, bool, FixedBitSet)> = Vec::new();
    for (i, mut row) in system.rows().into_iter().enumerate() {
        let mut rhs = system.constraints[i].target.bit();
        let mut combo = FixedBitSet::with_capacity(m);
        combo.insert(i);
        for (col, prow, prhs, pcombo) in &pivots {
            if row.contains(*col) {
                row.symmetric_difference_with(prow);
                rhs ^= *prhs;
                combo.symmetric_difference_with(pcombo);
            }
        }
        match row.minimum() {
            None if rhs => {
                return Elimination {
                    pivots,
                    conflict: Some(combo),
                }
            }
            None => {}
            Some(col) => {
                for (_, prow, prhs, pcombo) in pivots.iter_mut() {
                    if prow.contains(col) {
                        prow.symmetric_difference_with(&row);
                        *prhs ^= rhs;
                        pcombo.symmetric_difference_with(&combo);
                    }
                }
                pivots.push((col, row, rhs, combo));
            }
        }
    }
    Elimination { pivots, conflict: None }
}

/// Rank of the constraint rows over GF(2).
pub fn gf2_rank(system: &ParitySystem) -> usize {
    // Rank ignores right-hand sides, so solve the homogeneous system.
    let mut homogeneous = system.clone();
    homogeneous.constraints.iter_mut().for_each(|c| c.target = Sign::Plus);
    eliminate(&homogeneous).pivots.len()
}

/// Solves by Gaussian elimination over GF(2).
///
/// Satisfiable systems get the assignment with every free variable at +1;
/// inconsistent ones get the original constraints whose sum is `0 = 1`.
pub fn solve_gf2(system: &ParitySystem) -> SolveResult {
    let elim = eliminate(system);
    if let Some(combo) = elim.conflict {
        return SolveResult::Unsat {
            certificate: combo.ones().collect(),
        };
    }
    let mut values = vec![Sign::Plus; system.variables.len()];
    for (col, _, rhs, _) in &elim.pivots {
        // Rows are fully reduced, so a pivot row holds its pivot and free columns only.
        values[*col] = Sign::from_bit(*rhs);
    }
    SolveResult::Sat {
        assignment: Assignment::from_values(system, values),
    }
}

/// Exhaustive search over all `2^n` assignments.
///
/// Returns the lexicographically first satisfying assignment in declaration
/// order, +1 before −1. Inconsistent systems get the elimination certificate.
pub fn solve_enumerate(system: &ParitySystem) -> Result<SolveResult, LogicError> {
    let n = system.variables.len();
    if n > MAX_ENUMERATION_VARS {
        return Err(LogicError::TooManyVariables(n));
    }
    // Variable i lives at bit n-1-i so that counting up is lexicographic.
    let masks: Vec<(u32, bool)> = system
        .rows()
        .iter()
        .zip(&system.constraints)
        .map(|(row, c)| (row.ones().fold(0u32, |m, i| m | 1 << (n - 1 - i)), c.target.bit()))
        .collect();
    let found = (0..1u64 << n).into_par_iter().find_first(|&a| {
        let a = a as u32;
        masks.iter().all(|&(m, t)| ((a & m).count_ones() & 1 == 1) == t)
    });
    match found {
        Some(a) => {
            let values = (0..n).map(|i| Sign::from_bit(a & (1 << (n - 1 - i)) != 0));
            Ok(SolveResult::Sat {
                assignment: Assignment::from_values(system, values),
            })
        }
        None => match solve_gf2(system) {
            unsat @ SolveResult::Unsat { .. } => Ok(unsat),
            SolveResult::Sat { .. } => unreachable!("elimination found a solution the search missed"),
        },
    }
}

/// Enumeration when small enough, elimination otherwise.
pub fn solve(system: &ParitySystem) -> SolveResult {
    match solve_enumerate(system) {
        Ok(r) => r,
        Err(_) => solve_gf2(system),
    }
}

/// Re-solves the system once per constraint with that constraint removed.
pub fn drop_one_analysis(system: &ParitySystem) -> BTreeMap<usize, SolveResult> {
    (0..system.constraints.len())
        .map(|i| (i, solve(&system.without_constraint(i))))
        .collect()
}

/// The six pre-agreed answers and the four winning conditions.
pub fn build_classical_game_system() -> ParitySystem {
    let mut s = ParitySystem::new();
    for v in ["X_A", "Y_A", "X_B", "Y_B", "X_C", "Y_C"] {
        s.add_variable(v).expect("fresh names");
    }
    let constraints: [(&[&str], Sign); 4] = [
        (&["X_A", "X_B", "X_C"], Sign::Minus),
        (&["X_A", "Y_B", "Y_C"], Sign::Plus),
        (&["Y_A", "X_B", "Y_C"], Sign::Plus),
        (&["Y_A", "Y_B", "X_C"], Sign::Plus),
    ];
    for (vars, t) in constraints {
        s.add_constraint(vars, t).expect("declared");
    }
    s
}

/// The counterfactual-worlds system for an actual all-x outcome triple.
///
/// Each world replaces two x measurements by y measurements; locality keeps
/// the third x outcome from the actual world, and the extended locality
/// principle equates the y outcome of a player across the two worlds in
/// which it measures y.
pub fn build_stapp_system(actual_x: AnswerTriple) -> Result<ParitySystem, LogicError> {
    let product = actual_x.product();
    if product != Sign::Minus {
        return Err(LogicError::InconsistentOutcomes(product));
    }
    let [ax, bx, cx] = actual_x.0;
    let mut s = ParitySystem::new();
    for v in [
        "sigmaB_y@CFW1",
        "sigmaC_y@CFW1",
        "sigmaA_y@CFW2",
        "sigmaC_y@CFW2",
        "sigmaA_y@CFW3",
        "sigmaB_y@CFW3",
    ] {
        s.add_variable(v).expect("fresh names");
    }
    // x·y·y = +1 means y·y equals the kept x outcome.
    s.add_constraint(&["sigmaB_y@CFW1", "sigmaC_y@CFW1"], ax)?;
    s.add_constraint(&["sigmaA_y@CFW2", "sigmaC_y@CFW2"], bx)?;
    s.add_constraint(&["sigmaA_y@CFW3", "sigmaB_y@CFW3"], cx)?;
    s.add_constraint(&["sigmaC_y@CFW1", "sigmaC_y@CFW2"], Sign::Plus)?;
    s.add_constraint(&["sigmaB_y@CFW1", "sigmaB_y@CFW3"], Sign::Plus)?;
    s.add_constraint(&["sigmaA_y@CFW2", "sigmaA_y@CFW3"], Sign::Plus)?;
    Ok(s)
}

/// A solved system with its drop-one analysis.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ProofReport {
    pub title: String,
    pub system: ParitySystem,
    pub result: SolveResult,
    pub certificate_verified: bool,
    pub gf2_rank: usize,
    pub drop_one: BTreeMap<usize, SolveResult>,
}

pub fn prove(title: &str, system: ParitySystem) -> ProofReport {
    let result = solve(&system);
    let certificate_verified = result.verify(&system);
    ProofReport {
        title: title.into(),
        gf2_rank: gf2_rank(&system),
        drop_one: drop_one_analysis(&system),
        result,
        certificate_verified,
        system,
    }
}

impl ProofReport {
    /// Human-readable proof.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let sys = &self.system;
        let _ = writeln!(out, "{}", self.title);
        let _ = writeln!(
            out,
            "{} variables, {} constraints, GF(2) rank {}",
            sys.variables.len(),
            sys.constraints.len(),
            self.gf2_rank
        );
        for (i, c) in sys.constraints.iter().enumerate() {
            let _ = writeln!(out, "  [{i}] {}", c.render());
        }
        match &self.result {
            SolveResult::Sat { assignment } => {
                let _ = writeln!(out, "verdict: SAT");
                let _ = writeln!(out, "  {}", render_assignment(assignment));
            }
            SolveResult::Unsat { certificate } => {
                let _ = writeln!(out, "verdict: UNSAT");
                let cited: Vec<String> = certificate.iter().map(|i| format!("[{i}]")).collect();
                let _ = writeln!(out, "certificate: multiply {}", cited.join(" "));
                let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                let mut seen = BTreeSet::new();
                for &i in certificate {
                    for v in &sys.constraints[i].vars {
                        *counts.entry(v.as_str()).or_default() += 1;
                        seen.insert(v.as_str());
                    }
                }
                let occurrences: Vec<String> = sys
                    .variables
                    .iter()
                    .filter(|v| seen.contains(v.as_str()))
                    .map(|v| format!("{v}^{}", counts[v.as_str()]))
                    .collect();
                let rhs = Sign::product(certificate.iter().map(|&i| sys.constraints[i].target));
                let _ = writeln!(
                    out,
                    "  left side:  {} = +1 (every exponent even)",
                    occurrences.join(" ")
                );
                let _ = writeln!(out, "  right side: product of targets = {rhs}");
                let _ = writeln!(out, "  +1 = {rhs} is a contradiction");
                let _ = writeln!(
                    out,
                    "  certificate check: {}",
                    if self.certificate_verified { "ok" } else { "FAILED" }
                );
            }
        }
        let _ = writeln!(out, "drop-one analysis:");
        for (i, r) in &self.drop_one {
            match r {
                SolveResult::Sat { assignment } => {
                    let _ = writeln!(out, "  without [{i}]: SAT  {}", render_assignment(assignment));
                }
                SolveResult::Unsat { .. } => {
                    let _ = writeln!(out, "  without [{i}]: UNSAT");
                }
            }
        }
        out
    }
}

fn render_assignment(a: &Assignment) -> String {
    a.0.iter()
        .map(|(v, s)| format!("{v}={s}"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys(vars: &[&str], cons: &[(&[&str], Sign)]) -> ParitySystem {
        let mut s = ParitySystem::new();
        for v in vars {
            s.add_variable(v).unwrap();
        }
        for (c, t) in cons {
            s.add_constraint(c, *t).unwrap();
        }
        s
    }

    #[test]
    fn simple_sat() {
        let s = sys(&["x", "y"], &[(&["x", "y"], Sign::Plus)]);
        let r = solve_enumerate(&s).unwrap();
        let SolveResult::Sat { assignment } = &r else { panic!() };
        assert_eq!(assignment.get("x"), Some(Sign::Plus));
        assert_eq!(assignment.get("y"), Some(Sign::Plus));
        assert!(r.verify(&s));
    }

    #[test]
    fn direct_contradiction() {
        let s = sys(&["x"], &[(&["x"], Sign::Plus), (&["x"], Sign::Minus)]);
        assert_eq!(
            solve_enumerate(&s).unwrap(),
            SolveResult::Unsat {
                certificate: vec![0, 1]
            }
        );
        assert_eq!(
            solve_gf2(&s),
            SolveResult::Unsat {
                certificate: vec![0, 1]
            }
        );
    }

    #[test]
    fn repeats_cancel() {
        // x·x·y = -1 is y = -1
        let s = sys(&["x", "y"], &[(&["x", "x", "y"], Sign::Minus)]);
        let SolveResult::Sat { assignment } = solve_enumerate(&s).unwrap() else {
            panic!()
        };
        assert_eq!(assignment.get("x"), Some(Sign::Plus));
        assert_eq!(assignment.get("y"), Some(Sign::Minus));
        // x·x = -1 alone is unsatisfiable
        let s = sys(&["x"], &[(&["x", "x"], Sign::Minus)]);
        let r = solve_gf2(&s);
        assert_eq!(r, SolveResult::Unsat { certificate: vec![0] });
        assert!(r.verify(&s));
    }

    #[test]
    fn declaration_errors() {
        let mut s = ParitySystem::new();
        s.add_variable("a").unwrap();
        assert_eq!(s.add_variable("a"), Err(LogicError::DuplicateVariable("a".into())));
        assert_eq!(
            s.add_constraint(&["b"], Sign::Plus),
            Err(LogicError::UndeclaredVariable("b".into()))
        );
        assert_eq!(s.add_constraint(&[], Sign::Plus), Err(LogicError::EmptyConstraint));
    }

    #[test]
    fn enumeration_limit() {
        let mut s = ParitySystem::new();
        for i in 0..25 {
            s.add_variable(&format!("v{i}")).unwrap();
        }
        assert_eq!(solve_enumerate(&s), Err(LogicError::TooManyVariables(25)));
        assert!(solve(&s).is_sat());
    }

    #[test]
    fn stapp_rejects_positive_product() {
        use Sign::*;
        assert_eq!(
            build_stapp_system(AnswerTriple::new(Plus, Plus, Plus)),
            Err(LogicError::InconsistentOutcomes(Plus))
        );
    }

    #[test]
    fn text_parse_errors() {
        assert!(matches!(
            ParitySystem::from_text("VAR a\nCON a => 0"),
            Err(LogicError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            ParitySystem::from_text("CON a => +1"),
            Err(LogicError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            ParitySystem::from_text("FOO"),
            Err(LogicError::Parse { line: 1, .. })
        ));
        let s = ParitySystem::from_text("# comment\nVAR a\n\nVAR b\nCON a b => -1\n").unwrap();
        assert_eq!(s.constraints().len(), 1);
        assert_eq!(s.constraints()[0].target, Sign::Minus);
    }

    #[test]
    fn certificate_rejects_garbage() {
        let s = build_classical_game_system();
        assert!(!verify_certificate(&s, &[]));
        assert!(!verify_certificate(&s, &[0, 1]));
        assert!(!verify_certificate(&s, &[9]));
        assert!(verify_certificate(&s, &[0, 1, 2, 3]));
    }
}
