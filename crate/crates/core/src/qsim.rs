//! Dense statevector engine for a handful of spin-1/2 sites.
//!
//! Basis index bit `k` holds site `k`; bit value 0 is spin-up along z and 1 is
//! spin-down. Pauli conventions are the usual ones, with σy|↑⟩ = i|↓⟩ and
//! σy|↓⟩ = −i|↑⟩.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::ops::{Mul, Neg};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RandomSource;

pub type Amplitude = Complex64;

/// Largest state the engine will build (4096 amplitudes).
pub const DEFAULT_MAX_SITES: usize = 12;
/// Tolerance for exact algebraic identities.
pub const EXACT_TOL: f64 = 1e-12;
/// Tolerance for derived operator norms.
pub const OPERATOR_TOL: f64 = 1e-10;
/// Branches less likely than this are never selected.
pub const IMPOSSIBLE_BRANCH: f64 = 1e-15;

const ZERO: Amplitude = Complex64::new(0.0, 0.0);
const I: Amplitude = Complex64::new(0.0, 1.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QsimError {
    #[error("state would need {requested} sites, the cap is {max}")]
    TooManySites { requested: usize, max: usize },
    #[error("site {site} is out of range for a {num_sites}-site state")]
    SiteOutOfRange { site: usize, num_sites: usize },
    #[error("site {0} is listed more than once")]
    RepeatedSite(usize),
    #[error("expected {expected} amplitudes, got {got}")]
    BadLength { expected: usize, got: usize },
    #[error("amplitude {0} is not finite")]
    NonFinite(usize),
    #[error("state has squared norm {0}, expected 1")]
    NotNormalized(f64),
    #[error("product reduces to a non-Hermitian operator")]
    NonHermitian,
    #[error("every measurement branch has zero probability")]
    NoBranch,
}

pub type Result<T> = std::result::Result<T, QsimError>;

/// A ±1 measurement outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Sign {
    Plus,
    Minus,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("{0} is not a sign, expected 1 or -1")]
pub struct InvalidSign(pub i64);

impl Sign {
    pub const BOTH: [Sign; 2] = [Sign::Plus, Sign::Minus];

    pub fn value(self) -> i8 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.value())
    }

    /// Maps +1 to bit 0 and −1 to bit 1.
    pub fn bit(self) -> bool {
        self == Sign::Minus
    }

    pub fn from_bit(bit: bool) -> Self {
        if bit {
            Sign::Minus
        } else {
            Sign::Plus
        }
    }

    pub fn product<I: IntoIterator<Item = Sign>>(signs: I) -> Sign {
        signs.into_iter().fold(Sign::Plus, |acc, s| acc * s)
    }
}

impl Mul for Sign {
    type Output = Sign;
    fn mul(self, rhs: Sign) -> Sign {
        if self == rhs {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }
}

impl Neg for Sign {
    type Output = Sign;
    fn neg(self) -> Sign {
        Sign::from_bit(!self.bit())
    }
}

impl From<Sign> for i8 {
    fn from(s: Sign) -> i8 {
        s.value()
    }
}

impl TryFrom<i8> for Sign {
    type Error = InvalidSign;
    fn try_from(v: i8) -> std::result::Result<Self, InvalidSign> {
        Sign::try_from(i64::from(v))
    }
}

impl TryFrom<i64> for Sign {
    type Error = InvalidSign;
    fn try_from(v: i64) -> std::result::Result<Self, InvalidSign> {
        match v {
            1 => Ok(Sign::Plus),
            -1 => Ok(Sign::Minus),
            other => Err(InvalidSign(other)),
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Plus => "+1",
            Sign::Minus => "-1",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PauliAxis {
    X,
    Y,
    Z,
}

impl PauliAxis {
    pub const ALL: [PauliAxis; 3] = [PauliAxis::X, PauliAxis::Y, PauliAxis::Z];

    /// Product of two Paulis as `(power of i, result)`, `None` meaning identity.
    fn compose(self, rhs: PauliAxis) -> (u8, Option<PauliAxis>) {
        use PauliAxis::*;
        match (self, rhs) {
            (a, b) if a == b => (0, None),
            (X, Y) => (1, Some(Z)),
            (Y, Z) => (1, Some(X)),
            (Z, X) => (1, Some(Y)),
            (Y, X) => (3, Some(Z)),
            (Z, Y) => (3, Some(X)),
            (X, Z) => (3, Some(Y)),
            _ => unreachable!(),
        }
    }
}

impl fmt::Display for PauliAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PauliAxis::X => "X",
            PauliAxis::Y => "Y",
            PauliAxis::Z => "Z",
        })
    }
}

/// Normalized amplitudes over `num_sites` two-level sites.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    num_sites: usize,
    amps: Vec<Amplitude>,
}

impl StateVector {
    pub fn from_amplitudes(num_sites: usize, amps: Vec<Amplitude>) -> Result<Self> {
        Self::check_size(num_sites, DEFAULT_MAX_SITES)?;
        let expected = 1usize << num_sites;
        if amps.len() != expected {
            return Err(QsimError::BadLength {
                expected,
                got: amps.len(),
            });
        }
        if let Some(i) = amps.iter().position(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(QsimError::NonFinite(i));
        }
        let norm = norm_sqr(&amps);
        if (norm - 1.0).abs() > EXACT_TOL {
            return Err(QsimError::NotNormalized(norm));
        }
        Ok(Self { num_sites, amps })
    }

    /// Computational basis state `|index⟩`.
    pub fn basis_state(num_sites: usize, index: usize) -> Result<Self> {
        Self::check_size(num_sites, DEFAULT_MAX_SITES)?;
        let mut amps = vec![ZERO; 1 << num_sites];
        let dim = amps.len();
        *amps.get_mut(index).ok_or(QsimError::BadLength {
            expected: dim,
            got: index,
        })? = Complex64::new(1.0, 0.0);
        Ok(Self { num_sites, amps })
    }

    /// Single-site eigenstate of `axis` with eigenvalue `sign`.
    pub fn pauli_eigenstate(axis: PauliAxis, sign: Sign) -> Self {
        let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
        let amps = match (axis, sign) {
            (PauliAxis::Z, Sign::Plus) => vec![Complex64::new(1.0, 0.0), ZERO],
            (PauliAxis::Z, Sign::Minus) => vec![ZERO, Complex64::new(1.0, 0.0)],
            (PauliAxis::X, s) => vec![h, h * s.as_f64()],
            (PauliAxis::Y, s) => vec![h, I * h * s.as_f64()],
        };
        Self { num_sites: 1, amps }
    }

    fn check_size(num_sites: usize, max: usize) -> Result<()> {
        if num_sites == 0 || num_sites > max {
            return Err(QsimError::TooManySites {
                requested: num_sites,
                max,
            });
        }
        Ok(())
    }

    /// Renormalizes a projected amplitude vector of known squared norm.
    fn from_projection(num_sites: usize, mut amps: Vec<Amplitude>, norm_sqr: f64) -> Self {
        let scale = 1.0 / norm_sqr.sqrt();
        amps.iter_mut().for_each(|a| *a *= scale);
        Self { num_sites, amps }
    }

    pub fn num_sites(&self) -> usize {
        self.num_sites
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitude(&self, index: usize) -> Amplitude {
        self.amps[index]
    }

    pub fn amplitudes(&self) -> &[Amplitude] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.amps)
    }

    pub fn check_site(&self, site: usize) -> Result<()> {
        if site >= self.num_sites {
            return Err(QsimError::SiteOutOfRange {
                site,
                num_sites: self.num_sites,
            });
        }
        Ok(())
    }

    fn check_distinct_sites(&self, sites: impl IntoIterator<Item = usize>) -> Result<()> {
        let mut seen = 0usize;
        for s in sites {
            self.check_site(s)?;
            if seen & (1 << s) != 0 {
                return Err(QsimError::RepeatedSite(s));
            }
            seen |= 1 << s;
        }
        Ok(())
    }

    /// Moves old site `k` to position `new_position[k]`.
    pub fn permute_sites(&self, new_position: &[usize]) -> Result<Self> {
        if new_position.len() != self.num_sites {
            return Err(QsimError::BadLength {
                expected: self.num_sites,
                got: new_position.len(),
            });
        }
        self.check_distinct_sites(new_position.iter().copied())?;
        let mut amps = vec![ZERO; self.amps.len()];
        for (i, a) in self.amps.iter().enumerate() {
            let j = new_position
                .iter()
                .enumerate()
                .filter(|(old, _)| i & (1 << old) != 0)
                .fold(0usize, |acc, (_, &new)| acc | (1 << new));
            amps[j] = *a;
        }
        Ok(Self {
            num_sites: self.num_sites,
            amps,
        })
    }

    /// Text dump, one `bitstring re im` line per basis state.
    ///
    /// The bitstring lists site 0 first; values carry 15 significant digits.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, a) in self.amps.iter().enumerate() {
            let bits: String = (0..self.num_sites)
                .map(|k| if i & (1 << k) != 0 { '1' } else { '0' })
                .collect();
            out.push_str(&format!("{bits} {:.14e} {:.14e}\n", a.re, a.im));
        }
        out
    }
}

fn norm_sqr(amps: &[Amplitude]) -> f64 {
    amps.iter().map(|a| a.norm_sqr()).sum()
}

fn inner(a: &[Amplitude], b: &[Amplitude]) -> Amplitude {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn apply_pauli_in_place(amps: &mut [Amplitude], site: usize, axis: PauliAxis) {
    let mask = 1usize << site;
    for i in 0..amps.len() {
        if i & mask != 0 {
            continue;
        }
        let j = i | mask;
        match axis {
            PauliAxis::X => amps.swap(i, j),
            PauliAxis::Y => {
                let (up, down) = (amps[i], amps[j]);
                amps[j] = I * up;
                amps[i] = -I * down;
            }
            PauliAxis::Z => amps[j] = -amps[j],
        }
    }
}

/// `(ψ + s·σψ)/2` for a single-site Pauli.
fn project_pauli(amps: &[Amplitude], site: usize, axis: PauliAxis, sign: Sign) -> Vec<Amplitude> {
    let mut flipped = amps.to_vec();
    apply_pauli_in_place(&mut flipped, site, axis);
    let s = sign.as_f64();
    amps.iter().zip(&flipped).map(|(a, b)| (a + b * s) * 0.5).collect()
}

/// A tensor product of single-site Paulis, measured as one ±1 observable.
///
/// Factors multiply left to right. Repeated sites are allowed only through
/// [`ProductObservable::with_repeats`], and only when the product reduces to a
/// Hermitian operator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProductObservable {
    factors: Vec<(usize, PauliAxis)>,
    sign: Sign,
    reduced: Vec<(usize, PauliAxis)>,
}

impl ProductObservable {
    /// Product over pairwise distinct sites.
    pub fn new(factors: Vec<(usize, PauliAxis)>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for &(s, _) in &factors {
            if !seen.insert(s) {
                return Err(QsimError::RepeatedSite(s));
            }
        }
        Self::with_repeats(factors)
    }

    pub fn single(site: usize, axis: PauliAxis) -> Self {
        Self {
            factors: vec![(site, axis)],
            sign: Sign::Plus,
            reduced: vec![(site, axis)],
        }
    }

    pub fn with_repeats(factors: Vec<(usize, PauliAxis)>) -> Result<Self> {
        let mut per_site: BTreeMap<usize, Option<PauliAxis>> = BTreeMap::new();
        let mut phase = 0u8;
        for &(site, axis) in &factors {
            let slot = per_site.entry(site).or_insert(None);
            *slot = match *slot {
                None => Some(axis),
                Some(prev) => {
                    let (p, r) = prev.compose(axis);
                    phase = (phase + p) % 4;
                    r
                }
            };
        }
        let sign = match phase {
            0 => Sign::Plus,
            2 => Sign::Minus,
            _ => return Err(QsimError::NonHermitian),
        };
        let reduced = per_site.into_iter().filter_map(|(s, a)| a.map(|a| (s, a))).collect();
        Ok(Self { factors, sign, reduced })
    }

    pub fn factors(&self) -> &[(usize, PauliAxis)] {
        &self.factors
    }

    /// True when the operator is ± the identity.
    pub fn is_scalar(&self) -> bool {
        self.reduced.is_empty()
    }

    /// `(sign, distinct-site factors)` with the operator equal to their signed product.
    pub fn reduced(&self) -> (Sign, &[(usize, PauliAxis)]) {
        (self.sign, &self.reduced)
    }

    fn check_against(&self, state: &StateVector) -> Result<()> {
        self.factors.iter().try_for_each(|&(s, _)| state.check_site(s))
    }

    /// `O|ψ⟩` without normalization.
    pub fn apply(&self, amps: &[Amplitude]) -> Vec<Amplitude> {
        let mut out = amps.to_vec();
        for &(site, axis) in self.reduced.iter().rev() {
            apply_pauli_in_place(&mut out, site, axis);
        }
        if self.sign == Sign::Minus {
            out.iter_mut().for_each(|a| *a = -*a);
        }
        out
    }

    /// `(I + s·O)/2 |ψ⟩`.
    pub fn project(&self, amps: &[Amplitude], sign: Sign) -> Vec<Amplitude> {
        let o = self.apply(amps);
        let s = sign.as_f64();
        amps.iter().zip(&o).map(|(a, b)| (a + b * s) * 0.5).collect()
    }

    /// Label such as `X0 Y1 Y2`, listing factors as given.
    pub fn label(&self) -> String {
        if self.factors.is_empty() {
            return "I".to_string();
        }
        self.factors
            .iter()
            .map(|(s, a)| format!("{a}{s}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl fmt::Display for ProductObservable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Bell basis on an ordered site pair `(s1, s2)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BellIndex {
    /// (|↑↑⟩ + |↓↓⟩)/√2
    PhiPlus,
    /// (|↑↑⟩ − |↓↓⟩)/√2
    PhiMinus,
    /// (|↑↓⟩ + |↓↑⟩)/√2
    PsiPlus,
    /// (|↑↓⟩ − |↓↑⟩)/√2
    PsiMinus,
}

impl BellIndex {
    pub const ALL: [BellIndex; 4] = [
        BellIndex::PhiPlus,
        BellIndex::PhiMinus,
        BellIndex::PsiPlus,
        BellIndex::PsiMinus,
    ];

    /// Coefficients over local basis `|b1 b2⟩`, indexed by `b1 + 2·b2`.
    pub fn coefficients(self) -> [f64; 4] {
        let h = FRAC_1_SQRT_2;
        match self {
            BellIndex::PhiPlus => [h, 0.0, 0.0, h],
            BellIndex::PhiMinus => [h, 0.0, 0.0, -h],
            BellIndex::PsiPlus => [0.0, h, h, 0.0],
            BellIndex::PsiMinus => [0.0, -h, h, 0.0],
        }
    }

    pub fn ordinal(self) -> usize {
        self as usize
    }
}

impl fmt::Display for BellIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BellIndex::PhiPlus => "phi+",
            BellIndex::PhiMinus => "phi-",
            BellIndex::PsiPlus => "psi+",
            BellIndex::PsiMinus => "psi-",
        })
    }
}

/// One possible outcome of a projective measurement together with its
/// probability and the renormalized post-measurement state.
#[derive(Clone, Debug)]
pub struct Branch<T> {
    pub outcome: T,
    pub probability: f64,
    pub state: StateVector,
}

fn sample_branch<T>(branches: Vec<Branch<T>>, rnd: &mut RandomSource) -> Result<(T, StateVector)> {
    let total: f64 = branches.iter().map(|b| b.probability).sum();
    let u = rnd.uniform() * total;
    let mut acc = 0.0;
    let n = branches.len();
    for (k, b) in branches.into_iter().enumerate() {
        acc += b.probability;
        if u < acc || k + 1 == n {
            return Ok((b.outcome, b.state));
        }
    }
    Err(QsimError::NoBranch)
}

/// The three-site state (|↑↑↑⟩ − |↓↓↓⟩)/√2.
pub fn make_ghz() -> StateVector {
    let mut amps = vec![ZERO; 8];
    amps[0] = Complex64::new(FRAC_1_SQRT_2, 0.0);
    amps[7] = Complex64::new(-FRAC_1_SQRT_2, 0.0);
    StateVector { num_sites: 3, amps }
}

/// The two-site singlet (|↑↓⟩ − |↓↑⟩)/√2, site 0 written first.
pub fn make_singlet() -> StateVector {
    let mut amps = vec![ZERO; 4];
    // |↑↓⟩ has site 1 down: index 0b10.
    amps[0b10] = Complex64::new(FRAC_1_SQRT_2, 0.0);
    amps[0b01] = Complex64::new(-FRAC_1_SQRT_2, 0.0);
    StateVector { num_sites: 2, amps }
}

/// `a ⊗ b`, with `a` on the low sites.
pub fn tensor_product(a: &StateVector, b: &StateVector) -> Result<StateVector> {
    tensor_product_capped(a, b, DEFAULT_MAX_SITES)
}

pub fn tensor_product_capped(a: &StateVector, b: &StateVector, max_sites: usize) -> Result<StateVector> {
    let n = a.num_sites + b.num_sites;
    StateVector::check_size(n, max_sites)?;
    let mut amps = Vec::with_capacity(1 << n);
    for bb in &b.amps {
        for aa in &a.amps {
            amps.push(aa * bb);
        }
    }
    Ok(StateVector { num_sites: n, amps })
}

/// All non-negligible outcomes of measuring a product observable.
pub fn product_branches(state: &StateVector, obs: &ProductObservable) -> Result<Vec<Branch<Sign>>> {
    obs.check_against(state)?;
    let branches = Sign::BOTH
        .into_iter()
        .filter_map(|s| {
            let projected = obs.project(&state.amps, s);
            let p = norm_sqr(&projected);
            (p >= IMPOSSIBLE_BRANCH).then(|| Branch {
                outcome: s,
                probability: p,
                state: StateVector::from_projection(state.num_sites, projected, p),
            })
        })
        .collect();
    Ok(branches)
}

pub fn pauli_branches(state: &StateVector, site: usize, axis: PauliAxis) -> Result<Vec<Branch<Sign>>> {
    product_branches(state, &ProductObservable::single(site, axis))
}

/// Born-rule measurement of a single-site Pauli; returns the outcome and the
/// collapsed state.
pub fn measure_pauli(
    state: &StateVector,
    site: usize,
    axis: PauliAxis,
    rnd: &mut RandomSource,
) -> Result<(Sign, StateVector)> {
    sample_branch(pauli_branches(state, site, axis)?, rnd)
}

/// Projective measurement onto the ±1 eigenspaces of a product observable.
pub fn measure_product(
    state: &StateVector,
    obs: &ProductObservable,
    rnd: &mut RandomSource,
) -> Result<(Sign, StateVector)> {
    sample_branch(product_branches(state, obs)?, rnd)
}

/// `⟨ψ|O|ψ⟩`.
pub fn expectation_product(state: &StateVector, obs: &ProductObservable) -> Result<f64> {
    obs.check_against(state)?;
    Ok(inner(&state.amps, &obs.apply(&state.amps)).re)
}

pub fn bell_branches(state: &StateVector, s1: usize, s2: usize) -> Result<Vec<Branch<BellIndex>>> {
    state.check_distinct_sites([s1, s2])?;
    let (m1, m2) = (1usize << s1, 1usize << s2);
    let offsets = [0, m1, m2, m1 | m2];
    let mut branches = Vec::new();
    for bell in BellIndex::ALL {
        let coeff = bell.coefficients();
        let mut amps = vec![ZERO; state.amps.len()];
        for rest in (0..state.amps.len()).filter(|i| i & (m1 | m2) == 0) {
            let overlap: Amplitude = offsets.iter().zip(coeff).map(|(&o, c)| state.amps[rest | o] * c).sum();
            for (&o, c) in offsets.iter().zip(coeff) {
                amps[rest | o] = overlap * c;
            }
        }
        let p = norm_sqr(&amps);
        if p >= IMPOSSIBLE_BRANCH {
            branches.push(Branch {
                outcome: bell,
                probability: p,
                state: StateVector::from_projection(state.num_sites, amps, p),
            });
        }
    }
    Ok(branches)
}

/// Bell-basis measurement on `(s1, s2)`.
pub fn bell_measure(
    state: &StateVector,
    s1: usize,
    s2: usize,
    rnd: &mut RandomSource,
) -> Result<(BellIndex, StateVector)> {
    sample_branch(bell_branches(state, s1, s2)?, rnd)
}

/// Exact Born probabilities for every outcome tuple of single-site Pauli
/// measurements on distinct sites. Tuples follow the order of `axes`.
pub fn joint_distribution(state: &StateVector, axes: &[(usize, PauliAxis)]) -> Result<BTreeMap<Vec<Sign>, f64>> {
    state.check_distinct_sites(axes.iter().map(|&(s, _)| s))?;
    let mut out = BTreeMap::new();
    let mut prefix = Vec::with_capacity(axes.len());
    descend(&state.amps, axes, &mut prefix, &mut out);
    Ok(out)
}

fn descend(
    amps: &[Amplitude],
    axes: &[(usize, PauliAxis)],
    prefix: &mut Vec<Sign>,
    out: &mut BTreeMap<Vec<Sign>, f64>,
) {
    let Some((&(site, axis), rest)) = axes.split_first() else {
        out.insert(prefix.clone(), norm_sqr(amps));
        return;
    };
    for s in Sign::BOTH {
        let projected = project_pauli(amps, site, axis, s);
        prefix.push(s);
        descend(&projected, rest, prefix, out);
        prefix.pop();
    }
}

/// Partial trace onto `sites`; `sites[k]` becomes bit `k` of the reduced index.
pub fn reduced_density(state: &StateVector, sites: &[usize]) -> Result<DensityMatrix> {
    state.check_distinct_sites(sites.iter().copied())?;
    let k = sites.len();
    let dim = 1usize << k;
    let kept_mask: usize = sites.iter().map(|s| 1usize << s).sum();
    let spread = |sub: usize| -> usize {
        sites
            .iter()
            .enumerate()
            .filter(|(j, _)| sub & (1 << j) != 0)
            .fold(0, |acc, (_, s)| acc | (1 << s))
    };
    let offsets: Vec<usize> = (0..dim).map(spread).collect();
    let mut rho = DMatrix::<Complex64>::zeros(dim, dim);
    let mut v = vec![ZERO; dim];
    for rest in (0..state.amps.len()).filter(|i| i & kept_mask == 0) {
        for (slot, &o) in v.iter_mut().zip(&offsets) {
            *slot = state.amps[rest | o];
        }
        for a in 0..dim {
            for b in 0..dim {
                rho[(a, b)] += v[a] * v[b].conj();
            }
        }
    }
    Ok(DensityMatrix { entries: rho })
}

/// True iff `‖(O1·O2 − O2·O1)|ψ⟩‖` is below the operator tolerance.
pub fn commutes_on_state(state: &StateVector, o1: &ProductObservable, o2: &ProductObservable) -> Result<bool> {
    o1.check_against(state)?;
    o2.check_against(state)?;
    let a = o1.apply(&o2.apply(&state.amps));
    let b = o2.apply(&o1.apply(&state.amps));
    let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).norm_sqr()).sum();
    Ok(diff.sqrt() < OPERATOR_TOL)
}

/// A reduced density matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    entries: DMatrix<Complex64>,
}

impl DensityMatrix {
    pub fn from_matrix(entries: DMatrix<Complex64>) -> Self {
        Self { entries }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        let scale = Complex64::new(1.0 / dim as f64, 0.0);
        Self {
            entries: DMatrix::identity(dim, dim) * scale,
        }
    }

    /// Probability-weighted sum of several density matrices of equal size.
    pub fn weighted_sum(parts: &[(f64, DensityMatrix)]) -> Option<Self> {
        let dim = parts.first()?.1.dim();
        let mut acc = DMatrix::<Complex64>::zeros(dim, dim);
        for (w, m) in parts {
            if m.dim() != dim {
                return None;
            }
            acc += &m.entries * Complex64::new(*w, 0.0);
        }
        Some(Self { entries: acc })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.entries[(row, col)]
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn trace(&self) -> Complex64 {
        self.entries.trace()
    }

    pub fn max_abs_diff(&self, other: &DensityMatrix) -> f64 {
        (&self.entries - &other.entries)
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.max_abs_diff(&Self {
            entries: self.entries.adjoint(),
        }) <= tol
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let herm = (&self.entries + self.entries.adjoint()) * Complex64::new(0.5, 0.0);
        let mut ev: Vec<f64> = herm.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Hermitian, unit trace and positive semidefinite.
    pub fn is_valid(&self) -> bool {
        self.is_hermitian(EXACT_TOL)
            && (self.trace() - Complex64::new(1.0, 0.0)).norm() <= EXACT_TOL
            && self.eigenvalues().iter().all(|&e| e >= -OPERATOR_TOL)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < EXACT_TOL
    }

    #[test]
    fn ghz_amplitudes() {
        let g = make_ghz();
        assert!(close(g.amplitude(0).re, FRAC_1_SQRT_2));
        assert!(close(g.amplitude(7).re, -FRAC_1_SQRT_2));
        for i in 1..7 {
            assert_eq!(g.amplitude(i), ZERO);
        }
        assert!(close(g.norm_sqr(), 1.0));
    }

    #[test]
    fn singlet_amplitudes() {
        let s = make_singlet();
        // site 0 up, site 1 down
        assert!(close(s.amplitude(0b10).re, FRAC_1_SQRT_2));
        assert!(close(s.amplitude(0b01).re, -FRAC_1_SQRT_2));
        assert_eq!(s.amplitude(0), ZERO);
        assert_eq!(s.amplitude(3), ZERO);
    }

    #[test]
    fn singlet_is_psi_minus() {
        let b = bell_branches(&make_singlet(), 0, 1).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].outcome, BellIndex::PsiMinus);
        assert!(close(b[0].probability, 1.0));
    }

    #[test]
    fn bell_basis_orthonormal() {
        for a in BellIndex::ALL {
            for b in BellIndex::ALL {
                let d: f64 = a.coefficients().iter().zip(b.coefficients()).map(|(x, y)| x * y).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!(close(d, expect), "{a} {b}");
            }
        }
    }

    #[test]
    fn from_amplitudes_validates() {
        let bad = StateVector::from_amplitudes(1, vec![Complex64::new(1.0, 0.0); 2]);
        assert!(matches!(bad, Err(QsimError::NotNormalized(_))));
        let short = StateVector::from_amplitudes(2, vec![Complex64::new(1.0, 0.0)]);
        assert!(matches!(short, Err(QsimError::BadLength { .. })));
        let nan = StateVector::from_amplitudes(1, vec![Complex64::new(f64::NAN, 0.0), ZERO]);
        assert!(matches!(nan, Err(QsimError::NonFinite(0))));
    }

    #[test]
    fn tensor_cap() {
        let g = make_ghz();
        let big = tensor_product(&g, &g).unwrap();
        let big = tensor_product(&big, &g).unwrap();
        assert_eq!(big.num_sites(), 9);
        let twelve = tensor_product(&big, &make_ghz()).unwrap();
        assert_eq!(twelve.dim(), 4096);
        let up = StateVector::pauli_eigenstate(PauliAxis::Z, Sign::Plus);
        assert_eq!(
            tensor_product(&twelve, &up).unwrap_err(),
            QsimError::TooManySites { requested: 13, max: 12 }
        );
        assert!(tensor_product_capped(&make_ghz(), &up, 3).is_err());
    }

    #[test]
    fn tensor_ghz_singlet_amplitude() {
        let t = tensor_product(&make_ghz(), &make_singlet()).unwrap();
        // ↑↑↑ on sites 0..3, ↑↓ on sites 3,4: site 4 down.
        assert!(close(t.amplitude(1 << 4).re, 0.5));
        assert!(close(t.norm_sqr(), 1.0));
    }

    #[test]
    fn eigenstate_measurement_is_certain() {
        let up = StateVector::pauli_eigenstate(PauliAxis::Z, Sign::Plus);
        let b = pauli_branches(&up, 0, PauliAxis::Z).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].outcome, Sign::Plus);
        for axis in PauliAxis::ALL {
            for s in Sign::BOTH {
                let e = StateVector::pauli_eigenstate(axis, s);
                let v = expectation_product(&e, &ProductObservable::single(0, axis)).unwrap();
                assert!(close(v, s.as_f64()));
            }
        }
    }

    #[test]
    fn repeated_factor_reduction() {
        let six = ProductObservable::with_repeats(vec![
            (0, PauliAxis::Y),
            (1, PauliAxis::Y),
            (0, PauliAxis::Y),
            (2, PauliAxis::Y),
            (1, PauliAxis::Y),
            (2, PauliAxis::Y),
        ])
        .unwrap();
        assert!(six.is_scalar());
        assert_eq!(six.reduced().0, Sign::Plus);
        // XY = iZ is not Hermitian; XYZ... X·Y·Z = i·Z·Z = i I.
        assert_eq!(
            ProductObservable::with_repeats(vec![(0, PauliAxis::X), (0, PauliAxis::Y)]),
            Err(QsimError::NonHermitian)
        );
        // X·Y·X·Y = (iZ)(iZ) = −I
        let neg = ProductObservable::with_repeats(vec![
            (0, PauliAxis::X),
            (0, PauliAxis::Y),
            (0, PauliAxis::X),
            (0, PauliAxis::Y),
        ])
        .unwrap();
        assert!(neg.is_scalar());
        assert_eq!(neg.reduced().0, Sign::Minus);
        assert!(ProductObservable::new(vec![(0, PauliAxis::X), (0, PauliAxis::X)]).is_err());
    }

    #[test]
    fn out_of_range_sites_rejected() {
        let g = make_ghz();
        let mut r = RandomSource::new(0);
        assert!(matches!(
            measure_pauli(&g, 3, PauliAxis::X, &mut r),
            Err(QsimError::SiteOutOfRange { site: 3, num_sites: 3 })
        ));
        assert!(matches!(
            bell_measure(&g, 1, 1, &mut r),
            Err(QsimError::RepeatedSite(1))
        ));
        assert!(joint_distribution(&g, &[(0, PauliAxis::X), (0, PauliAxis::Y)]).is_err());
        assert!(reduced_density(&g, &[5]).is_err());
    }

    #[test]
    fn anticommuting_paulis_on_up() {
        let up = StateVector::pauli_eigenstate(PauliAxis::Z, Sign::Plus);
        let x = ProductObservable::single(0, PauliAxis::X);
        let y = ProductObservable::single(0, PauliAxis::Y);
        assert!(!commutes_on_state(&up, &x, &y).unwrap());
        assert!(commutes_on_state(&up, &x, &x).unwrap());
    }

    #[test]
    fn permute_and_dump() {
        let s = StateVector::basis_state(3, 0b001).unwrap();
        let p = s.permute_sites(&[2, 0, 1]).unwrap();
        assert_eq!(p.amplitude(0b100), Complex64::new(1.0, 0.0));
        let dump = make_singlet().dump();
        let lines: Vec<&str> = dump.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "10 -7.07106781186548e-1 0.00000000000000e0");
        assert_eq!(lines[2], "01 7.07106781186548e-1 0.00000000000000e0");
    }

    #[test]
    fn sign_algebra() {
        assert_eq!(Sign::Minus * Sign::Minus, Sign::Plus);
        assert_eq!(-Sign::Plus, Sign::Minus);
        assert_eq!(Sign::product([Sign::Plus, Sign::Plus, Sign::Minus]), Sign::Minus);
        assert_eq!(Sign::try_from(-1i8), Ok(Sign::Minus));
        assert!(Sign::try_from(0i8).is_err());
        assert_eq!(serde_json::to_string(&Sign::Minus).unwrap(), "-1");
    }

    #[test]
    fn density_helpers() {
        let m = DensityMatrix::maximally_mixed(2);
        assert!(m.is_valid());
        let avg = DensityMatrix::weighted_sum(&[(0.5, m.clone()), (0.5, m.clone())]).unwrap();
        assert!(avg.max_abs_diff(&m) < EXACT_TOL);
        let ev = m.eigenvalues();
        assert!(close(ev[0], 0.5) && close(ev[1], 0.5));
    }
}
