//! Exposure codes and interlaced view-sampling plans.
//!
//! A view `i` integrates `K` micro-projections whose angular indices are
//! `(i*K + k) mod N_theta` for `k in 0..K`. All uniqueness reasoning is done on
//! these integer indices; radians are derived values only.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_integer::Integer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The length-52 fluttered-shutter code from coded-exposure photography.
pub const RASKAR_52: &str = include_str!("../assets/raskar52.txt");

/// Which family of exposure code to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodeKind {
    /// `(1, 0, ..., 0)`: a single short exposure per view.
    Snapshot,
    /// `(1, 1, ..., 1)`: the shutter stays open for the whole view.
    Boxcar,
    /// Caller-supplied bits.
    Custom,
}

/// A binary exposure code `c` together with its normalizer `cbar = sum(c)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ExposureCode {
    bits: Vec<bool>,
    cbar: usize,
}

impl ExposureCode {
    pub fn new(bits: Vec<bool>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::InvalidCode("code length must be at least 1".into()));
        }
        let cbar = bits.iter().filter(|&&b| b).count();
        if cbar == 0 {
            return Err(Error::InvalidCode(
                "all-zero code collects no photons; the blank scan cannot be normalized".into(),
            ));
        }
        Ok(Self { bits, cbar })
    }

    pub fn build(kind: CodeKind, length: usize, custom_bits: Option<&[bool]>) -> Result<Self> {
        if length == 0 {
            return Err(Error::InvalidCode("code length must be at least 1".into()));
        }
        match kind {
            CodeKind::Snapshot => {
                let mut bits = vec![false; length];
                bits[0] = true;
                Self::new(bits)
            }
            CodeKind::Boxcar => Self::new(vec![true; length]),
            CodeKind::Custom => {
                let bits = custom_bits
                    .ok_or_else(|| Error::InvalidCode("custom code requires bits".into()))?;
                if bits.len() != length {
                    return Err(Error::InvalidCode(format!(
                        "custom code has {} bits, expected {length}",
                        bits.len()
                    )));
                }
                Self::new(bits.to_vec())
            }
        }
    }

    pub fn snapshot(length: usize) -> Result<Self> {
        Self::build(CodeKind::Snapshot, length, None)
    }

    pub fn boxcar(length: usize) -> Result<Self> {
        Self::build(CodeKind::Boxcar, length, None)
    }

    /// The fluttered code, repeated to reach `length` (a multiple of 52).
    pub fn raskar(length: usize) -> Result<Self> {
        let base: ExposureCode = RASKAR_52.trim().parse()?;
        if length == 0 || length % base.len() != 0 {
            return Err(Error::InvalidCode(format!(
                "fluttered code length must be a positive multiple of {}, got {length}",
                base.len()
            )));
        }
        let bits = base
            .bits
            .iter()
            .copied()
            .cycle()
            .take(length)
            .collect();
        Self::new(bits)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn cbar(&self) -> usize {
        self.cbar
    }

    /// Offsets `k` with `c_k = 1`.
    pub fn open_chops(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(k, &b)| b.then_some(k))
    }
}

impl fmt::Display for ExposureCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for ExposureCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .trim()
            .chars()
            .map(|ch| match ch {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::InvalidCode(format!("unexpected character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(bits)
    }
}

/// Parses a code asset: one code per line, blank lines ignored.
pub fn parse_code_asset(text: &str) -> Result<Vec<ExposureCode>> {
    text.lines()
        .filter(|line| !line.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// Result of the integer uniqueness check on view angles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AngleCheck {
    pub unique: bool,
    /// First pair `(earlier, later)` of views whose start angles coincide modulo pi.
    pub collision: Option<(usize, usize)>,
}

/// The parameters a plan is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanParams {
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub m_theta: usize,
}

/// Interlaced view-sampling plan with `N_theta = m*K - n` micro-angles in `[0, pi)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PlanParams", into = "PlanParams")]
pub struct SamplingPlan {
    k: usize,
    m: usize,
    n: usize,
    n_theta: usize,
    m_theta: usize,
    gcd: usize,
}

impl SamplingPlan {
    pub fn new(k: usize, m: usize, n: usize, m_theta: usize) -> Result<Self> {
        if k == 0 || m == 0 || n == 0 {
            return Err(Error::InvalidPlan(format!(
                "K, m and n must be positive (K={k}, m={m}, n={n})"
            )));
        }
        if m_theta == 0 {
            return Err(Error::InvalidPlan("M_theta must be at least 1".into()));
        }
        let mk = m
            .checked_mul(k)
            .ok_or_else(|| Error::InvalidPlan("m*K overflows".into()))?;
        if mk <= n {
            return Err(Error::InvalidPlan(format!(
                "N_theta = m*K - n = {m}*{k} - {n} is not positive"
            )));
        }
        let n_theta = mk - n;
        Ok(Self {
            k,
            m,
            n,
            n_theta,
            m_theta,
            gcd: k.gcd(&n_theta),
        })
    }

    /// Builds a plan for a prescribed micro-angle count, choosing the smallest
    /// `m` with `m*K > N_theta`.
    pub fn with_micro_count(k: usize, n_theta: usize, m_theta: usize) -> Result<Self> {
        if k == 0 || n_theta == 0 {
            return Err(Error::InvalidPlan("K and N_theta must be positive".into()));
        }
        let m = n_theta / k + 1;
        Self::new(k, m, m * k - n_theta, m_theta)
    }

    /// Like [`with_micro_count`](Self::with_micro_count) but searches upward in `m`
    /// until `gcd(K, n) = 1`, which guarantees `gcd(K, N_theta) = 1`.
    pub fn coprime_with_micro_count(k: usize, n_theta: usize, m_theta: usize) -> Result<Self> {
        if k == 0 || n_theta == 0 {
            return Err(Error::InvalidPlan("K and N_theta must be positive".into()));
        }
        if k.gcd(&n_theta) != 1 {
            return Err(Error::InvalidPlan(format!(
                "gcd(K={k}, N_theta={n_theta}) != 1; no co-prime decomposition exists"
            )));
        }
        let mut m = n_theta / k + 1;
        loop {
            let n = m * k - n_theta;
            if k.gcd(&n) == 1 {
                return Self::new(k, m, n, m_theta);
            }
            m += 1;
        }
    }

    pub fn params(&self) -> PlanParams {
        PlanParams {
            k: self.k,
            m: self.m,
            n: self.n,
            m_theta: self.m_theta,
        }
    }

    pub fn code_length(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn m_theta(&self) -> usize {
        self.m_theta
    }

    pub fn gcd(&self) -> usize {
        self.gcd
    }

    /// Largest view count for which start angles cannot repeat.
    pub fn max_unique_views(&self) -> usize {
        self.n_theta / self.gcd
    }

    /// True when `gcd(K, N_theta) = 1` and `M_theta <= N_theta`.
    pub fn is_unique_angle(&self) -> bool {
        self.gcd == 1 && self.m_theta <= self.n_theta
    }

    /// True when no two views share a start angle (also covers flagged plans
    /// whose `M_theta` respects `N_theta / gcd`).
    pub fn has_distinct_views(&self) -> bool {
        self.m_theta <= self.max_unique_views()
    }

    pub fn micro_step_rad(&self) -> f64 {
        PI / self.n_theta as f64
    }

    pub fn blur_angle_rad(&self) -> f64 {
        self.k as f64 * PI / self.n_theta as f64
    }

    pub fn blur_angle_deg(&self) -> f64 {
        self.k as f64 * 180.0 / self.n_theta as f64
    }

    /// Unwrapped start angles `theta_i = pi*i*K / N_theta`.
    pub fn view_angles_rad(&self) -> Vec<f64> {
        (0..self.m_theta)
            .map(|i| PI * (i * self.k) as f64 / self.n_theta as f64)
            .collect()
    }

    pub fn span_rad(&self) -> f64 {
        (self.m_theta - 1) as f64 * self.blur_angle_rad()
    }

    pub fn span_deg(&self) -> f64 {
        (self.m_theta - 1) as f64 * self.blur_angle_deg()
    }

    /// Index of micro-angle `(i*K + k) mod N_theta`.
    pub fn micro_index(&self, view: usize, chop: usize) -> usize {
        debug_assert!(chop < self.k);
        ((view % self.n_theta) * (self.k % self.n_theta) + chop) % self.n_theta
    }

    /// Micro-angles `pi*j / N_theta`, `j in 0..N_theta`.
    pub fn micro_angles_rad(&self) -> Vec<f64> {
        (0..self.n_theta)
            .map(|j| PI * j as f64 / self.n_theta as f64)
            .collect()
    }

    /// Start angle of each view folded into `[0, pi)`: the micro-angle of its first chop.
    pub fn nominal_view_angles_rad(&self) -> Vec<f64> {
        (0..self.m_theta)
            .map(|i| PI * self.micro_index(i, 0) as f64 / self.n_theta as f64)
            .collect()
    }

    pub fn check_unique_angles(&self) -> AngleCheck {
        let mut first_view = vec![usize::MAX; self.n_theta];
        for i in 0..self.m_theta {
            let j = self.micro_index(i, 0);
            if first_view[j] != usize::MAX {
                return AngleCheck {
                    unique: false,
                    collision: Some((first_view[j], i)),
                };
            }
            first_view[j] = i;
        }
        AngleCheck {
            unique: true,
            collision: None,
        }
    }

    /// Checks that a code can be paired with this plan.
    pub fn check_code(&self, code: &ExposureCode) -> Result<()> {
        if code.len() != self.k {
            return Err(Error::InvalidCode(format!(
                "code length {} does not match plan code length K={}",
                code.len(),
                self.k
            )));
        }
        Ok(())
    }
}

impl TryFrom<PlanParams> for SamplingPlan {
    type Error = Error;

    fn try_from(p: PlanParams) -> Result<Self> {
        Self::new(p.k, p.m, p.n, p.m_theta)
    }
}

impl From<SamplingPlan> for PlanParams {
    fn from(plan: SamplingPlan) -> Self {
        plan.params()
    }
}
