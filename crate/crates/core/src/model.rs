//! Binary states, feature maps, the exponential-family model, and the
//! brute-force enumeration oracle used as ground truth in statistical tests.
//!
//! The model is `q(x|λ) = exp(λ·φ(x))` over `x ∈ {0,1}^d`, with natural
//! parameters `λ ∈ R^J` and a feature map `φ: {0,1}^d → R^J`. The default
//! feature map is [`PairFeatures`]: all first and second moments `x_i x_k`
//! over ordered index pairs `i ≤ k`, giving `J = d(d+1)/2`. The sign of `λ`
//! is stored as given; no hidden negation is applied anywhere.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard cap on enumeration dimension unless overridden: 2^20 states.
pub const DEFAULT_ORACLE_CAP: usize = 20;

/// A point in {0,1}^d, packed into one machine word. Supports d ≤ 64.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct BitState {
    word: u64,
    len: u8,
}

impl BitState {
    /// All-zeros state of dimension `d`.
    pub fn zeros(d: usize) -> Self {
        assert!(d >= 1 && d <= 64, "BitState dimension must be in 1..=64");
        BitState { word: 0, len: d as u8 }
    }

    /// State from the low `d` bits of `word`; bit `i` is `x_{i+1}`.
    pub fn from_word(word: u64, d: usize) -> Self {
        let mut s = Self::zeros(d);
        s.word = word & Self::mask(d);
        s
    }

    /// State with the given enumeration index (identical to `from_word`).
    pub fn from_index(index: usize, d: usize) -> Self {
        Self::from_word(index as u64, d)
    }

    /// Build from explicit 0/1 entries.
    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        if bits.is_empty() || bits.len() > 64 {
            return Err(Error::InvalidConfig(format!(
                "bit-state length {} outside 1..=64",
                bits.len()
            )));
        }
        let mut word = 0u64;
        for (i, &b) in bits.iter().enumerate() {
            match b {
                0 => {}
                1 => word |= 1 << i,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "bit-state entry {other} at position {i} is not 0 or 1"
                    )))
                }
            }
        }
        Ok(BitState { word, len: bits.len() as u8 })
    }

    fn mask(d: usize) -> u64 {
        if d == 64 {
            u64::MAX
        } else {
            (1u64 << d) - 1
        }
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn bit(&self, i: usize) -> bool {
        debug_assert!(i < self.len());
        (self.word >> i) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        debug_assert!(i < self.len());
        if value {
            self.word |= 1 << i;
        } else {
            self.word &= !(1 << i);
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        debug_assert!(i < self.len());
        self.word ^= 1 << i;
    }

    /// XOR a flip mask onto the state (low `d` bits of `mask`).
    #[inline]
    pub fn flip_mask(&mut self, mask: u64) {
        self.word ^= mask & Self::mask(self.len());
    }

    /// Enumeration index of the state in 0..2^d.
    pub fn index(&self) -> usize {
        self.word as usize
    }

    /// Draw all bits uniformly at random.
    pub fn random_uniform<R: Rng>(d: usize, rng: &mut R) -> Self {
        Self::from_word(rng.random::<u64>(), d)
    }

    pub fn ones_count(&self) -> u32 {
        self.word.count_ones()
    }
}

impl std::fmt::Display for BitState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for i in 0..self.len() {
            write!(f, "{}", if self.bit(i) { '1' } else { '0' })?;
        }
        Ok(())
    }
}

impl std::fmt::Debug for BitState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BitState({self})")
    }
}

impl std::str::FromStr for BitState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.is_empty() || s.len() > 64 {
            return Err(Error::ObservationFormat(format!(
                "bit-string length {} outside 1..=64",
                s.len()
            )));
        }
        let mut word = 0u64;
        for (i, c) in s.chars().enumerate() {
            match c {
                '0' => {}
                '1' => word |= 1 << i,
                other => {
                    return Err(Error::ObservationFormat(format!(
                        "invalid character {other:?} at position {i} in bit-string"
                    )))
                }
            }
        }
        Ok(BitState { word, len: s.len() as u8 })
    }
}

/// A feature map φ: {0,1}^d → R^J with index bookkeeping.
///
/// Implementations beyond [`PairFeatures`] can be registered by the caller;
/// annealing schedules, the solver, and the samplers are generic over this
/// trait.
pub trait FeatureSet: Send + Sync {
    /// State dimension d.
    fn dim(&self) -> usize;

    /// Number of features J.
    fn len(&self) -> usize;

    /// φ_j(x).
    fn eval(&self, j: usize, x: &BitState) -> f64;

    /// Fill `out` (length J) with the full feature vector.
    fn eval_into(&self, x: &BitState, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.len());
        for (j, slot) in out.iter_mut().enumerate() {
            *slot = self.eval(j, x);
        }
    }

    /// Allocating convenience for `eval_into`.
    fn eval_vec(&self, x: &BitState) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(x, &mut out);
        out
    }

    /// λ·φ(x) without materializing the feature vector.
    fn weighted_sum(&self, lambda: &[f64], x: &BitState) -> f64 {
        debug_assert_eq!(lambda.len(), self.len());
        (0..self.len()).map(|j| lambda[j] * self.eval(j, x)).sum()
    }

    /// Partial sum λ·φ(x) over the first `count` features, used by
    /// one-constraint-per-step annealing schedules.
    fn weighted_prefix_sum(&self, lambda: &[f64], count: usize, x: &BitState) -> f64 {
        (0..count).map(|j| lambda[j] * self.eval(j, x)).sum()
    }

    /// Short human-readable descriptor for feature j.
    fn describe(&self, j: usize) -> String;
}

/// The default first-and-second-moment feature set.
///
/// The flat index enumerates ordered pairs `(i, k)` with `i ≤ k` in row-major
/// order: `(0,0), (0,1), ..., (0,d-1), (1,1), ...`. For `d = 2` this is the
/// ordering `[x1, x1·x2, x2]`. The ordering is frozen; file formats depend
/// on it. Since bits are idempotent, the diagonal features `(i,i)` are the
/// first moments.
#[derive(Clone, Debug)]
pub struct PairFeatures {
    d: usize,
    pairs: Vec<(usize, usize)>,
}

impl PairFeatures {
    pub fn new(d: usize) -> Self {
        assert!(d >= 1 && d <= 64, "PairFeatures dimension must be in 1..=64");
        let mut pairs = Vec::with_capacity(d * (d + 1) / 2);
        for i in 0..d {
            for k in i..d {
                pairs.push((i, k));
            }
        }
        PairFeatures { d, pairs }
    }

    /// The index pair `(i, k)` of flat feature `j`.
    pub fn pair(&self, j: usize) -> (usize, usize) {
        self.pairs[j]
    }

    /// Flat index of the feature `x_i·x_k` (requires `i ≤ k`).
    pub fn index_of(&self, i: usize, k: usize) -> usize {
        assert!(i <= k && k < self.d);
        i * self.d - (i * i - i) / 2 + (k - i)
    }

    /// Flat indices of the diagonal (first-moment) features.
    pub fn diagonal_indices(&self) -> Vec<usize> {
        (0..self.d).map(|i| self.index_of(i, i)).collect()
    }

    /// Expand a parameter vector into the symmetric d×d matrix Λ with
    /// `Λ_ik = λ_(i,k)` for `i ≤ k`, mirrored below the diagonal.
    pub fn matrix_of(&self, lambda: &ParamVector) -> Result<Vec<Vec<f64>>> {
        if lambda.len() != self.len() {
            return Err(Error::DimensionMismatch {
                context: "matrix_of",
                expected: self.len(),
                actual: lambda.len(),
            });
        }
        let mut mat = vec![vec![0.0; self.d]; self.d];
        for (j, &(i, k)) in self.pairs.iter().enumerate() {
            mat[i][k] = lambda.values()[j];
            mat[k][i] = lambda.values()[j];
        }
        Ok(mat)
    }

    /// Read a symmetric matrix back into the flat parameter layout.
    pub fn from_matrix(&self, mat: &[Vec<f64>]) -> Result<ParamVector> {
        if mat.len() != self.d || mat.iter().any(|row| row.len() != self.d) {
            return Err(Error::DimensionMismatch {
                context: "from_matrix",
                expected: self.d,
                actual: mat.len(),
            });
        }
        for i in 0..self.d {
            for k in (i + 1)..self.d {
                if mat[i][k] != mat[k][i] {
                    return Err(Error::InvalidConfig(format!(
                        "matrix is not symmetric at ({i},{k})"
                    )));
                }
            }
        }
        let values = self.pairs.iter().map(|&(i, k)| mat[i][k]).collect();
        ParamVector::new(values)
    }

    /// Check the moment-vector constraints specific to this feature set:
    /// all entries in [0,1] and every cross moment bounded by its diagonals
    /// (since `x_i x_k ≤ x_i`).
    pub fn validate_moments(&self, m: &MomentVector) -> Result<()> {
        if m.len() != self.len() {
            return Err(Error::DimensionMismatch {
                context: "validate_moments",
                expected: self.len(),
                actual: m.len(),
            });
        }
        let v = m.values();
        const TOL: f64 = 1e-12;
        for (j, &(i, k)) in self.pairs.iter().enumerate() {
            if !(-TOL..=1.0 + TOL).contains(&v[j]) {
                return Err(Error::InvalidConfig(format!(
                    "moment {j} = {} outside [0,1]",
                    v[j]
                )));
            }
            if i != k {
                let bound = v[self.index_of(i, i)].min(v[self.index_of(k, k)]);
                if v[j] > bound + TOL {
                    return Err(Error::InvalidConfig(format!(
                        "cross moment ({i},{k}) = {} exceeds min of its diagonals {bound}",
                        v[j]
                    )));
                }
            }
        }
        Ok(())
    }
}

impl FeatureSet for PairFeatures {
    fn dim(&self) -> usize {
        self.d
    }

    fn len(&self) -> usize {
        self.pairs.len()
    }

    #[inline]
    fn eval(&self, j: usize, x: &BitState) -> f64 {
        let (i, k) = self.pairs[j];
        (x.bit(i) && x.bit(k)) as u8 as f64
    }

    fn eval_into(&self, x: &BitState, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.pairs.len());
        let mut j = 0;
        for i in 0..self.d {
            let bi = x.bit(i);
            for k in i..self.d {
                out[j] = (bi && x.bit(k)) as u8 as f64;
                j += 1;
            }
        }
    }

    fn weighted_sum(&self, lambda: &[f64], x: &BitState) -> f64 {
        debug_assert_eq!(lambda.len(), self.pairs.len());
        let mut s = 0.0;
        let mut base = 0;
        for i in 0..self.d {
            if x.bit(i) {
                for k in i..self.d {
                    if x.bit(k) {
                        s += lambda[base + (k - i)];
                    }
                }
            }
            base += self.d - i;
        }
        s
    }

    fn weighted_prefix_sum(&self, lambda: &[f64], count: usize, x: &BitState) -> f64 {
        let mut s = 0.0;
        for (j, &(i, k)) in self.pairs[..count].iter().enumerate() {
            if x.bit(i) && x.bit(k) {
                s += lambda[j];
            }
        }
        s
    }

    fn describe(&self, j: usize) -> String {
        let (i, k) = self.pairs[j];
        if i == k {
            format!("x{}", i + 1)
        } else {
            format!("x{}*x{}", i + 1, k + 1)
        }
    }
}

/// Natural parameters λ ∈ R^J. Entries are always finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for (index, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { context: "ParamVector", index });
            }
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(j: usize) -> Self {
        ParamVector(vec![0.0; j])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Draw entries i.i.d. uniformly from [lo, hi].
    pub fn random_uniform<R: Rng>(j: usize, lo: f64, hi: f64, rng: &mut R) -> Self {
        ParamVector((0..j).map(|_| rng.random_range(lo..hi)).collect())
    }
}

/// Target moments m ∈ R^J.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MomentVector(Vec<f64>);

impl MomentVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for (index, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { context: "MomentVector", index });
            }
        }
        Ok(MomentVector(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// ‖self − other‖∞.
    pub fn sup_distance(&self, other: &MomentVector) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// log q(x|λ) = λ·φ(x), the log of the unnormalized density.
pub fn log_q(x: &BitState, lambda: &ParamVector, features: &dyn FeatureSet) -> Result<f64> {
    if lambda.len() != features.len() {
        return Err(Error::DimensionMismatch {
            context: "log_q parameters",
            expected: features.len(),
            actual: lambda.len(),
        });
    }
    if x.len() != features.dim() {
        return Err(Error::DimensionMismatch {
            context: "log_q state",
            expected: features.dim(),
            actual: x.len(),
        });
    }
    Ok(features.weighted_sum(lambda.values(), x))
}

/// Brute-force enumeration over all 2^d states: exact partition function,
/// moments, entropy, and sampling. Cost is exponential in d, so the
/// dimension is capped (default [`DEFAULT_ORACLE_CAP`]).
pub struct Oracle<'a> {
    features: &'a dyn FeatureSet,
    cap: usize,
}

impl<'a> Oracle<'a> {
    pub fn new(features: &'a dyn FeatureSet) -> Self {
        Oracle { features, cap: DEFAULT_ORACLE_CAP }
    }

    pub fn with_cap(features: &'a dyn FeatureSet, cap: usize) -> Self {
        Oracle { features, cap }
    }

    fn check_dims(&self, lambda: &ParamVector) -> Result<usize> {
        let d = self.features.dim();
        if lambda.len() != self.features.len() {
            return Err(Error::DimensionMismatch {
                context: "oracle parameters",
                expected: self.features.len(),
                actual: lambda.len(),
            });
        }
        if d > self.cap {
            return Err(Error::OracleCapExceeded { d, cap: self.cap, cost: 1u128 << d });
        }
        Ok(d)
    }

    /// All log-weights λ·φ(x) in enumeration order.
    fn log_weights(&self, lambda: &ParamVector) -> Result<Vec<f64>> {
        let d = self.check_dims(lambda)?;
        let n = 1usize << d;
        let mut out = Vec::with_capacity(n);
        for idx in 0..n {
            let x = BitState::from_index(idx, d);
            out.push(self.features.weighted_sum(lambda.values(), &x));
        }
        Ok(out)
    }

    /// Z(λ) = Σ_x exp(λ·φ(x)); strictly positive.
    pub fn partition(&self, lambda: &ParamVector) -> Result<f64> {
        Ok(self.log_partition(lambda)?.exp())
    }

    /// log Z(λ), computed by stable log-sum-exp.
    pub fn log_partition(&self, lambda: &ParamVector) -> Result<f64> {
        let lw = self.log_weights(lambda)?;
        Ok(crate::smc::log_sum_exp(&lw))
    }

    /// Exact moments m = Π(φ|λ).
    pub fn moments(&self, lambda: &ParamVector) -> Result<MomentVector> {
        let lw = self.log_weights(lambda)?;
        let log_z = crate::smc::log_sum_exp(&lw);
        let d = self.features.dim();
        let j = self.features.len();
        let mut acc = vec![0.0; j];
        let mut feat = vec![0.0; j];
        for (idx, &l) in lw.iter().enumerate() {
            let p = (l - log_z).exp();
            let x = BitState::from_index(idx, d);
            self.features.eval_into(&x, &mut feat);
            for (a, f) in acc.iter_mut().zip(feat.iter()) {
                *a += p * f;
            }
        }
        MomentVector::new(acc)
    }

    /// Shannon entropy of π(·|λ) in nats; lies in [0, d·log 2].
    pub fn entropy(&self, lambda: &ParamVector) -> Result<f64> {
        let lw = self.log_weights(lambda)?;
        let log_z = crate::smc::log_sum_exp(&lw);
        // H = log Z − Σ_x p(x)·log q(x)
        let mean_log_q: f64 = lw.iter().map(|&l| (l - log_z).exp() * l).sum();
        Ok(log_z - mean_log_q)
    }

    /// Exact sampler with a precomputed cumulative table.
    pub fn sampler(&self, lambda: &ParamVector) -> Result<OracleSampler> {
        let lw = self.log_weights(lambda)?;
        let log_z = crate::smc::log_sum_exp(&lw);
        let mut cumulative = Vec::with_capacity(lw.len());
        let mut acc = 0.0;
        for &l in &lw {
            acc += (l - log_z).exp();
            cumulative.push(acc);
        }
        Ok(OracleSampler { cumulative, d: self.features.dim() })
    }
}

/// Draws exact samples from π(·|λ) by inverse CDF over the enumerated states.
pub struct OracleSampler {
    cumulative: Vec<f64>,
    d: usize,
}

impl OracleSampler {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> BitState {
        let u: f64 = rng.random();
        let idx = self.cumulative.partition_point(|&c| c <= u);
        BitState::from_index(idx.min(self.cumulative.len() - 1), self.d)
    }

    pub fn sample_many<R: Rng>(&self, count: usize, rng: &mut R) -> Vec<BitState> {
        (0..count).map(|_| self.sample(rng)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamSeed;
    use proptest::prelude::*;

    fn pv(values: &[f64]) -> ParamVector {
        ParamVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn bitstate_roundtrip_and_validation() {
        let s = BitState::from_bits(&[1, 0, 1, 1]).unwrap();
        assert_eq!(s.to_string(), "1011");
        assert_eq!("1011".parse::<BitState>().unwrap(), s);
        assert_eq!(s.index(), 0b1101);
        assert!(BitState::from_bits(&[0, 2]).is_err());
        assert!("01x1".parse::<BitState>().is_err());
        assert!("".parse::<BitState>().is_err());
    }

    #[test]
    fn pair_ordering_matches_frozen_convention() {
        let feats = PairFeatures::new(2);
        assert_eq!(feats.len(), 3);
        assert_eq!(feats.pair(0), (0, 0));
        assert_eq!(feats.pair(1), (0, 1));
        assert_eq!(feats.pair(2), (1, 1));
        assert_eq!(feats.describe(1), "x1*x2");
        let feats4 = PairFeatures::new(4);
        for j in 0..feats4.len() {
            let (i, k) = feats4.pair(j);
            assert_eq!(feats4.index_of(i, k), j);
        }
        assert_eq!(feats4.diagonal_indices(), vec![0, 4, 7, 9]);
    }

    #[test]
    fn log_q_examples() {
        let feats = PairFeatures::new(2);
        let x11 = BitState::from_bits(&[1, 1]).unwrap();
        let x10 = BitState::from_bits(&[1, 0]).unwrap();
        // zero parameters
        assert_eq!(log_q(&x11, &ParamVector::zeros(3), &feats).unwrap(), 0.0);
        let lam = pv(&[0.5, -1.0, 0.25]);
        assert!((log_q(&x11, &lam, &feats).unwrap() - (-0.25)).abs() < 1e-15);
        assert!((log_q(&x10, &lam, &feats).unwrap() - 0.5).abs() < 1e-15);
        // dimension mismatch is a configuration error
        assert!(log_q(&x11, &ParamVector::zeros(2), &feats).is_err());
    }

    #[test]
    fn partition_examples() {
        let feats2 = PairFeatures::new(2);
        let oracle2 = Oracle::new(&feats2);
        assert!((oracle2.partition(&ParamVector::zeros(3)).unwrap() - 4.0).abs() < 1e-12);

        let feats1 = PairFeatures::new(1);
        let oracle1 = Oracle::new(&feats1);
        let z1 = oracle1.partition(&pv(&[1.0])).unwrap();
        assert!((z1 - (1.0 + 1f64.exp())).abs() < 1e-12);

        // brute-force sum over the 4 states, written out independently
        let lam = pv(&[0.5, -1.0, 0.25]);
        let expect = 1.0 + 0.5f64.exp() + 0.25f64.exp() + (-0.25f64).exp();
        assert!((oracle2.partition(&lam).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 4.71155).abs() < 1e-5);
    }

    #[test]
    fn moments_examples() {
        let feats2 = PairFeatures::new(2);
        let oracle2 = Oracle::new(&feats2);
        let m0 = oracle2.moments(&ParamVector::zeros(3)).unwrap();
        assert!((m0.values()[0] - 0.5).abs() < 1e-12);
        assert!((m0.values()[1] - 0.25).abs() < 1e-12);
        assert!((m0.values()[2] - 0.5).abs() < 1e-12);

        let feats1 = PairFeatures::new(1);
        let m1 = Oracle::new(&feats1).moments(&pv(&[1.0])).unwrap();
        let e = 1f64.exp();
        assert!((m1.values()[0] - e / (1.0 + e)).abs() < 1e-12);
        assert!((m1.values()[0] - 0.73106).abs() < 1e-5);

        // entrywise from the 4-state table: q(00)=1, q(10)=e^0.5, q(01)=e^0.25, q(11)=e^-0.25
        let lam = pv(&[0.5, -1.0, 0.25]);
        let (q10, q01, q11) = (0.5f64.exp(), 0.25f64.exp(), (-0.25f64).exp());
        let z = 1.0 + q10 + q01 + q11;
        let m = oracle2.moments(&lam).unwrap();
        assert!((m.values()[0] - (q10 + q11) / z).abs() < 1e-12);
        assert!((m.values()[1] - q11 / z).abs() < 1e-12);
        assert!((m.values()[2] - (q01 + q11) / z).abs() < 1e-12);
        feats2.validate_moments(&m).unwrap();
    }

    #[test]
    fn entropy_examples() {
        let feats4 = PairFeatures::new(4);
        let h = Oracle::new(&feats4).entropy(&ParamVector::zeros(10)).unwrap();
        assert!((h - 4.0 * std::f64::consts::LN_2).abs() < 1e-12);

        // near point mass: -50 on both diagonal features of d=2
        let feats2 = PairFeatures::new(2);
        let lam = pv(&[-50.0, 0.0, -50.0]);
        let h0 = Oracle::new(&feats2).entropy(&lam).unwrap();
        assert!(h0.abs() < 1e-12, "entropy {h0} not near zero");

        // enumerated probabilities
        let lam = pv(&[0.5, -1.0, 0.25]);
        let (q10, q01, q11) = (0.5f64.exp(), 0.25f64.exp(), (-0.25f64).exp());
        let z = 1.0 + q10 + q01 + q11;
        let expect: f64 = [1.0, q10, q01, q11]
            .iter()
            .map(|q| {
                let p = q / z;
                -p * p.ln()
            })
            .sum();
        let h2 = Oracle::new(&feats2).entropy(&lam).unwrap();
        assert!((h2 - expect).abs() < 1e-12);
        assert!(h2 > 0.0 && h2 < 2.0 * std::f64::consts::LN_2);
    }

    #[test]
    fn oracle_cap_is_enforced_and_configurable() {
        let feats = PairFeatures::new(10);
        let lam = ParamVector::zeros(55);
        let err = Oracle::with_cap(&feats, 9).partition(&lam).unwrap_err();
        match err {
            Error::OracleCapExceeded { d, cap, cost } => {
                assert_eq!((d, cap, cost), (10, 9, 1024));
            }
            other => panic!("unexpected error {other:?}"),
        }
        assert!(Oracle::with_cap(&feats, 10).partition(&lam).is_ok());
    }

    #[test]
    fn sampler_uniform_chi_square() {
        let feats = PairFeatures::new(2);
        let sampler = Oracle::new(&feats).sampler(&ParamVector::zeros(3)).unwrap();
        let mut rng = StreamSeed::new(11).rng(0);
        let n = 100_000usize;
        let mut counts = [0u64; 4];
        for _ in 0..n {
            counts[sampler.sample(&mut rng).index()] += 1;
        }
        let expected = n as f64 / 4.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // chi-square(3) critical value at level 0.001
        assert!(chi2 < 16.266, "chi2 = {chi2}");
    }

    #[test]
    fn sampler_logistic_frequency() {
        let feats = PairFeatures::new(1);
        let sampler = Oracle::new(&feats).sampler(&pv(&[1.0])).unwrap();
        let mut rng = StreamSeed::new(5).rng(0);
        let n = 100_000usize;
        let ones = (0..n).filter(|_| sampler.sample(&mut rng).bit(0)).count();
        let p = 1f64.exp() / (1.0 + 1f64.exp());
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((ones as f64 / n as f64 - p).abs() < 4.0 * se);
    }

    #[test]
    fn sampler_is_deterministic() {
        let feats = PairFeatures::new(3);
        let mut rng = StreamSeed::new(99).rng(7);
        let lam = ParamVector::random_uniform(6, -1.0, 1.0, &mut rng);
        let sampler = Oracle::new(&feats).sampler(&lam).unwrap();
        let a = sampler.sample_many(64, &mut StreamSeed::new(1).rng(0));
        let b = sampler.sample_many(64, &mut StreamSeed::new(1).rng(0));
        assert_eq!(a, b);
    }

    #[test]
    fn matrix_round_trip() {
        let feats = PairFeatures::new(3);
        let mut rng = StreamSeed::new(3).rng(0);
        let lam = ParamVector::random_uniform(6, -2.0, 2.0, &mut rng);
        let mat = feats.matrix_of(&lam).unwrap();
        for i in 0..3 {
            for k in 0..3 {
                assert_eq!(mat[i][k], mat[k][i]);
            }
        }
        assert_eq!(feats.from_matrix(&mat).unwrap(), lam);

        let mut bad = mat.clone();
        bad[0][1] += 1.0;
        assert!(feats.from_matrix(&bad).is_err());
    }

    #[test]
    fn param_vector_rejects_non_finite() {
        assert!(ParamVector::new(vec![0.0, f64::NAN]).is_err());
        assert!(ParamVector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn partition_bounds() {
        let feats = PairFeatures::new(4);
        let mut rng = StreamSeed::new(21).rng(0);
        for _ in 0..20 {
            let lam = ParamVector::random_uniform(10, -3.0, 3.0, &mut rng);
            let oracle = Oracle::new(&feats);
            let z = oracle.partition(&lam).unwrap();
            let max_lq = (0..16)
                .map(|i| {
                    feats.weighted_sum(lam.values(), &BitState::from_index(i, 4))
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(z >= max_lq.exp() * (1.0 - 1e-12));
            assert!(z <= 16.0 * max_lq.exp() * (1.0 + 1e-12));
        }
    }

    proptest! {
        // λ·φ(x) agrees with the Λ-matrix quadratic form read over i ≤ k.
        #[test]
        fn quadratic_form_matches_features(d in 1usize..=6, seed in 0u64..1000) {
            let feats = PairFeatures::new(d);
            let j = feats.len();
            let mut rng = StreamSeed::new(seed).rng(0);
            let lam = ParamVector::random_uniform(j, -2.0, 2.0, &mut rng);
            let mat = feats.matrix_of(&lam).unwrap();
            for idx in 0..(1usize << d) {
                let x = BitState::from_index(idx, d);
                let via_features = feats.weighted_sum(lam.values(), &x);
                let mut via_matrix = 0.0;
                for i in 0..d {
                    for k in i..d {
                        if x.bit(i) && x.bit(k) {
                            via_matrix += mat[i][k];
                        }
                    }
                }
                prop_assert!((via_features - via_matrix).abs() < 1e-12);
            }
        }

        // log q is linear in λ: log_q(x, λ+μ) = log_q(x, λ) + log_q(x, μ).
        #[test]
        fn log_q_shift_property(seed in 0u64..1000) {
            let feats = PairFeatures::new(4);
            let mut rng = StreamSeed::new(seed).rng(1);
            let a = ParamVector::random_uniform(10, -3.0, 3.0, &mut rng);
            let b = ParamVector::random_uniform(10, -3.0, 3.0, &mut rng);
            let sum = ParamVector::new(
                a.values().iter().zip(b.values()).map(|(x, y)| x + y).collect(),
            ).unwrap();
            for idx in 0..16 {
                let x = BitState::from_index(idx, 4);
                let lhs = log_q(&x, &sum, &feats).unwrap();
                let rhs = log_q(&x, &a, &feats).unwrap() + log_q(&x, &b, &feats).unwrap();
                prop_assert!((lhs - rhs).abs() < 1e-12);
            }
        }
    }
}
