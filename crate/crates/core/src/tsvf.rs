//! Inference between a preparation and a later measurement.
//!
//! With the state fixed at `t1` and single-site outcomes fixed at `t2`, the
//! probability of outcome `o` for an intermediate measurement of a product
//! observable `O` is
//!
//! ```text
//! P(o) = N_o / (N_+ + N_-),   N_o = ‖Π_post (I + o·O)/2 |pre⟩‖²
//! ```
//!
//! An observable whose outcome is certain under this rule is an element of
//! reality. Such elements need not obey the product rule.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{Question, QuestionPattern};
use crate::qsim::{self, Amplitude, PauliAxis, ProductObservable, QsimError, Sign, StateVector, IMPOSSIBLE_BRANCH};
use crate::rng::{derive_trial_seed, RandomSource};

/// Certainty threshold for declaring an element of reality.
pub const CERTAINTY: f64 = 1.0 - 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TsvfError {
    #[error("post-selection has zero probability given the preparation")]
    ImpossiblePostselection,
    #[error("post-selection lists site {0} twice")]
    RepeatedPostSite(usize),
    #[error("ensemble must post-select x on sites 0, 1, 2 with outcome product -1")]
    MalformedEnsemble,
    #[error("observable {0} is not certain for this ensemble")]
    NotCertain(String),
    #[error(transparent)]
    Qsim(#[from] QsimError),
}

/// A single-site outcome fixed at the final time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostSelection {
    pub site: usize,
    pub axis: PauliAxis,
    pub outcome: Sign,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrePostEnsemble {
    pre: StateVector,
    post: Vec<PostSelection>,
}

impl PrePostEnsemble {
    pub fn new(pre: StateVector, post: Vec<PostSelection>) -> Result<Self, TsvfError> {
        let mut seen = std::collections::BTreeSet::new();
        for p in &post {
            pre.check_site(p.site)?;
            if !seen.insert(p.site) {
                return Err(TsvfError::RepeatedPostSite(p.site));
            }
        }
        let ens = Self { pre, post };
        let reach = qsim_norm(&ens.post_project(ens.pre.amplitudes().to_vec()));
        if reach <= IMPOSSIBLE_BRANCH {
            return Err(TsvfError::ImpossiblePostselection);
        }
        Ok(ens)
    }

    /// GHZ prepared, x measured on all three sites with the given outcomes.
    pub fn ghz_with_x_outcomes(outcomes: [Sign; 3]) -> Result<Self, TsvfError> {
        let post = (0..3)
            .map(|site| PostSelection {
                site,
                axis: PauliAxis::X,
                outcome: outcomes[site],
            })
            .collect();
        Self::new(qsim::make_ghz(), post)
    }

    pub fn pre(&self) -> &StateVector {
        &self.pre
    }

    pub fn post(&self) -> &[PostSelection] {
        &self.post
    }

    fn post_project(&self, mut amps: Vec<Amplitude>) -> Vec<Amplitude> {
        for p in &self.post {
            amps = ProductObservable::single(p.site, p.axis).project(&amps, p.outcome);
        }
        amps
    }

    /// The x outcomes on sites 0, 1, 2, if that is exactly what is post-selected.
    fn x_outcomes(&self) -> Option<[Sign; 3]> {
        let mut out = [None; 3];
        for p in &self.post {
            if p.axis != PauliAxis::X || p.site > 2 {
                return None;
            }
            out[p.site] = Some(p.outcome);
        }
        Some([out[0]?, out[1]?, out[2]?])
    }
}

fn qsim_norm(amps: &[Amplitude]) -> f64 {
    amps.iter().map(|a| a.norm_sqr()).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblDistribution {
    pub observable: String,
    pub plus: f64,
    pub minus: f64,
}

impl AblDistribution {
    pub fn probability(&self, outcome: Sign) -> f64 {
        match outcome {
            Sign::Plus => self.plus,
            Sign::Minus => self.minus,
        }
    }
}

pub fn abl_distribution(ens: &PrePostEnsemble, obs: &ProductObservable) -> Result<AblDistribution, TsvfError> {
    for &(s, _) in obs.factors() {
        ens.pre.check_site(s)?;
    }
    let weight = |o: Sign| qsim_norm(&ens.post_project(obs.project(ens.pre.amplitudes(), o)));
    let (n_plus, n_minus) = (weight(Sign::Plus), weight(Sign::Minus));
    let total = n_plus + n_minus;
    if total <= IMPOSSIBLE_BRANCH {
        return Err(TsvfError::ImpossiblePostselection);
    }
    Ok(AblDistribution {
        observable: obs.label(),
        plus: n_plus / total,
        minus: n_minus / total,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ElementOfReality {
    pub observable: String,
    pub value: Sign,
    pub certainty: f64,
}

pub fn element_of_reality(
    ens: &PrePostEnsemble,
    obs: &ProductObservable,
) -> Result<Option<ElementOfReality>, TsvfError> {
    let d = abl_distribution(ens, obs)?;
    Ok(Sign::BOTH
        .into_iter()
        .find(|&s| d.probability(s) >= CERTAINTY)
        .map(|value| ElementOfReality {
            observable: d.observable.clone(),
            value,
            certainty: d.probability(value),
        }))
}

/// σ_a σ_b σ_c for a question pattern.
pub fn pattern_observable(pattern: QuestionPattern) -> ProductObservable {
    let factors = pattern
        .questions()
        .iter()
        .enumerate()
        .map(|(site, q)| (site, q.axis()))
        .collect();
    ProductObservable::new(factors).expect("three distinct sites")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionalCheck {
    pub observable: String,
    pub target: Sign,
    pub expectation: f64,
    /// Born probability of the target outcome when measuring the product.
    pub target_probability: f64,
    pub deterministic: bool,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionalsReport {
    pub checks: Vec<ConditionalCheck>,
    /// `(i, j, commute)` for each pair of the four products.
    pub commutation: Vec<(usize, usize, bool)>,
    pub all_hold: bool,
}

/// Checks the four three-site products of a preparation: expectation,
/// determinism of a product measurement, and pairwise commutation on the state.
pub fn conditionals_check(pre: &StateVector) -> Result<ConditionalsReport, TsvfError> {
    let observables: Vec<ProductObservable> = QuestionPattern::ALL.iter().map(|&p| pattern_observable(p)).collect();
    let mut checks = Vec::new();
    for (p, obs) in QuestionPattern::ALL.iter().zip(&observables) {
        let expectation = qsim::expectation_product(pre, obs)?;
        let branches = qsim::product_branches(pre, obs)?;
        let target_probability = branches
            .iter()
            .find(|b| b.outcome == p.target())
            .map_or(0.0, |b| b.probability);
        let deterministic = branches.len() == 1;
        checks.push(ConditionalCheck {
            observable: obs.label(),
            target: p.target(),
            expectation,
            target_probability,
            deterministic,
            holds: deterministic && (target_probability - 1.0).abs() < qsim::EXACT_TOL,
        });
    }
    let mut commutation = Vec::new();
    for i in 0..observables.len() {
        for j in i + 1..observables.len() {
            commutation.push((i, j, qsim::commutes_on_state(pre, &observables[i], &observables[j])?));
        }
    }
    let all_hold = checks.iter().all(|c| c.holds) && commutation.iter().all(|c| c.2);
    Ok(ConditionalsReport {
        checks,
        commutation,
        all_hold,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProductRuleReport {
    pub post_outcomes: [Sign; 3],
    /// Elements for σAyσBy, σAyσCy, σByσCy.
    pub pairwise: Vec<ElementOfReality>,
    pub pairwise_product: Sign,
    pub six_factor: ElementOfReality,
    pub violated: bool,
}

/// The three pairwise σy products as observables.
pub fn pairwise_y_observables() -> [ProductObservable; 3] {
    [(0, 1), (0, 2), (1, 2)]
        .map(|(a, b)| ProductObservable::new(vec![(a, PauliAxis::Y), (b, PauliAxis::Y)]).expect("distinct sites"))
}

/// σAy σBy · σAy σCy · σBy σCy as one observable.
pub fn six_factor_observable() -> ProductObservable {
    let y = PauliAxis::Y;
    ProductObservable::with_repeats(vec![(0, y), (1, y), (0, y), (2, y), (1, y), (2, y)]).expect("reduces to identity")
}

pub fn product_rule_report(ens: &PrePostEnsemble) -> Result<ProductRuleReport, TsvfError> {
    let post_outcomes = ens.x_outcomes().ok_or(TsvfError::MalformedEnsemble)?;
    if Sign::product(post_outcomes) != Sign::Minus {
        return Err(TsvfError::MalformedEnsemble);
    }
    let pairwise = pairwise_y_observables()
        .iter()
        .map(|o| element_of_reality(ens, o)?.ok_or_else(|| TsvfError::NotCertain(o.label())))
        .collect::<Result<Vec<_>, _>>()?;
    let pairwise_product = Sign::product(pairwise.iter().map(|e| e.value));
    let six = six_factor_observable();
    let six_factor = element_of_reality(ens, &six)?.ok_or_else(|| TsvfError::NotCertain(six.label()))?;
    Ok(ProductRuleReport {
        post_outcomes,
        violated: pairwise_product != six_factor.value,
        pairwise,
        pairwise_product,
        six_factor,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SequentialPatternCheck {
    pub pattern: QuestionPattern,
    pub trials: u64,
    pub matches: u64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneralizedElementsReport {
    pub patterns: Vec<SequentialPatternCheck>,
    /// Per site: whether σx and σy commute on the preparation. Any `false`
    /// means the four relations cannot be realized in one run.
    pub x_y_commute_per_site: Vec<bool>,
    pub jointly_measurable: bool,
}

/// Measures the three sites one at a time for each pattern and checks the
/// product of the separate outcomes against the pattern's target.
pub fn generalized_elements_check(
    pre: &StateVector,
    trials: u64,
    master_seed: u64,
) -> Result<GeneralizedElementsReport, TsvfError> {
    let mut patterns = Vec::new();
    for (k, pattern) in QuestionPattern::ALL.into_iter().enumerate() {
        let mut matches = 0;
        for i in 0..trials {
            let mut rnd = RandomSource::new(derive_trial_seed(master_seed, i)).fork(k as u64);
            let mut state = pre.clone();
            let mut outcomes = [Sign::Plus; 3];
            for (site, q) in pattern.questions().into_iter().enumerate() {
                let (o, s) = qsim::measure_pauli(&state, site, q.axis(), &mut rnd)?;
                outcomes[site] = o;
                state = s;
            }
            matches += u64::from(Sign::product(outcomes) == pattern.target());
        }
        patterns.push(SequentialPatternCheck {
            pattern,
            trials,
            matches,
            holds: matches == trials,
        });
    }
    let x_y_commute_per_site = (0..pre.num_sites().min(3))
        .map(|site| {
            qsim::commutes_on_state(
                pre,
                &ProductObservable::single(site, Question::X.axis()),
                &ProductObservable::single(site, Question::Y.axis()),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let jointly_measurable = x_y_commute_per_site.iter().all(|c| *c);
    Ok(GeneralizedElementsReport {
        patterns,
        x_y_commute_per_site,
        jointly_measurable,
    })
}

/// Everything the `elements` command prints.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ElementsReport {
    pub conditionals: ConditionalsReport,
    pub distributions: Vec<AblDistribution>,
    pub product_rule: ProductRuleReport,
}

pub fn elements_report(post_outcomes: [Sign; 3]) -> Result<ElementsReport, TsvfError> {
    let ens = PrePostEnsemble::ghz_with_x_outcomes(post_outcomes)?;
    let conditionals = conditionals_check(ens.pre())?;
    let mut distributions = Vec::new();
    for o in pairwise_y_observables().iter().chain([&six_factor_observable()]) {
        distributions.push(abl_distribution(&ens, o)?);
    }
    Ok(ElementsReport {
        conditionals,
        distributions,
        product_rule: product_rule_report(&ens)?,
    })
}

impl ElementsReport {
    pub fn render_text(&self) -> String {
        let site = |label: &str| -> String {
            label
                .split(' ')
                .map(|f| {
                    let (axis, s) = f.split_at(1);
                    let name = match s {
                        "0" => "A",
                        "1" => "B",
                        "2" => "C",
                        other => other,
                    };
                    format!("s{name}{}", axis.to_lowercase())
                })
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut out = String::new();
        let [a, b, c] = self.product_rule.post_outcomes;
        let _ = writeln!(out, "preparation: GHZ; final x outcomes A={a} B={b} C={c}");
        let _ = writeln!(out, "conditionals from the preparation alone:");
        for ch in &self.conditionals.checks {
            let _ = writeln!(
                out,
                "  {{{}}} = {}  expectation {:+.12}  P(target) {:.12}  {}",
                site(&ch.observable),
                ch.target,
                ch.expectation,
                ch.target_probability,
                if ch.holds { "ok" } else { "FAILED" }
            );
        }
        let commuting = self.conditionals.commutation.iter().filter(|c| c.2).count();
        let _ = writeln!(
            out,
            "  {commuting}/{} pairs of products commute on the state",
            self.conditionals.commutation.len()
        );
        let _ = writeln!(out, "ABL probabilities at an intermediate time:");
        for d in &self.distributions {
            let _ = writeln!(
                out,
                "  {{{}}}: P(+1) = {:.12}  P(-1) = {:.12}",
                site(&d.observable),
                d.plus,
                d.minus
            );
        }
        let _ = writeln!(out, "elements of reality:");
        for e in &self.product_rule.pairwise {
            let _ = writeln!(
                out,
                "  {{{}}} = {}  (certainty {:.12})",
                site(&e.observable),
                e.value,
                e.certainty
            );
        }
        let _ = writeln!(
            out,
            "product of the three values: {}",
            self.product_rule.pairwise_product
        );
        let six = &self.product_rule.six_factor;
        let _ = writeln!(
            out,
            "element for the product operator {{{}}} = {}",
            site(&six.observable),
            six.value
        );
        let _ = writeln!(
            out,
            "product rule: {}",
            if self.product_rule.violated {
                "VIOLATED"
            } else {
                "holds"
            }
        );
        out
    }
}
