//! Smoothness and dimension arithmetic for compositional regression functions:
//! intrinsic smoothness `p*` and dimension `t*`, the convergence-rate
//! exponent, and the network sizes that guarantee the rate.

use std::cmp::Ordering;
use std::fmt;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Hölder smoothness degree; `+∞` is exact, so `∞ ∧ 1 = 1` holds without rounding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Smoothness {
    Finite(f64),
    Infinite,
}

impl Smoothness {
    pub fn finite(p: f64) -> Result<Self> {
        if p > 0.0 && p.is_finite() {
            Ok(Smoothness::Finite(p))
        } else if p == f64::INFINITY {
            Ok(Smoothness::Infinite)
        } else {
            Err(Error::Domain(format!("smoothness must be positive, got {p}")))
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Smoothness::Infinite)
    }

    /// `f64::INFINITY` for the infinite case.
    pub fn value(self) -> f64 {
        match self {
            Smoothness::Finite(p) => p,
            Smoothness::Infinite => f64::INFINITY,
        }
    }

    /// `p ∧ 1`.
    pub fn min_one(self) -> f64 {
        match self {
            Smoothness::Finite(p) => p.min(1.0),
            Smoothness::Infinite => 1.0,
        }
    }

    fn mul(self, factor: f64) -> Smoothness {
        match self {
            Smoothness::Finite(p) => Smoothness::Finite(p * factor),
            Smoothness::Infinite => Smoothness::Infinite,
        }
    }

    /// `⌊p⌋ + 1` with `⌊p⌋` the largest integer strictly below `p`; `None` for `∞`.
    pub fn ceil(self) -> Option<u128> {
        match self {
            Smoothness::Finite(p) => {
                let f = p.floor();
                let strict_floor = if f == p { f - 1.0 } else { f };
                Some((strict_floor + 1.0) as u128)
            }
            Smoothness::Infinite => None,
        }
    }
}

impl fmt::Display for Smoothness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Smoothness::Finite(p) => write!(f, "{p}"),
            Smoothness::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Smoothness {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Smoothness::Finite(p) => s.serialize_f64(*p),
            Smoothness::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Smoothness {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct Visitor;
        impl de::Visitor<'_> for Visitor {
            type Value = Smoothness;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a positive number or \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Smoothness, E> {
                Smoothness::finite(v).map_err(E::custom)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Smoothness, E> {
                self.visit_f64(v as f64)
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Smoothness, E> {
                self.visit_f64(v as f64)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Smoothness, E> {
                match v.to_ascii_lowercase().as_str() {
                    "inf" | "infinity" | "+inf" | "∞" => Ok(Smoothness::Infinite),
                    _ => Err(E::custom(format!("unrecognized smoothness {v:?}"))),
                }
            }
        }
        d.deserialize_any(Visitor)
    }
}

/// Layer dimensions `d_0..d_{L*+1}`, active variables `t_0..t_{L*}` and
/// smoothness `p_0..p_{L*}` of a compositional function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositionalSpec {
    pub l_star: usize,
    pub dims: Vec<usize>,
    pub active_vars: Vec<usize>,
    pub smoothness: Vec<Smoothness>,
}

impl CompositionalSpec {
    pub fn new(dims: Vec<usize>, active_vars: Vec<usize>, smoothness: Vec<Smoothness>) -> Result<Self> {
        let l_star = active_vars.len().saturating_sub(1);
        let spec = Self { l_star, dims, active_vars, smoothness };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let layers = self.l_star + 1;
        if self.active_vars.len() != layers || self.smoothness.len() != layers || self.dims.len() != layers + 1 {
            return Err(Error::Domain(format!(
                "L* = {} needs {} dims, {layers} active counts and {layers} smoothness values",
                self.l_star,
                layers + 1
            )));
        }
        if self.dims[layers] != 1 {
            return Err(Error::Domain("the last dimension must be 1".into()));
        }
        for i in 0..layers {
            let t = self.active_vars[i];
            if t == 0 || t > self.dims[i] {
                return Err(Error::Domain(format!("layer {i}: t = {t} must lie in [1, d_{i} = {}]", self.dims[i])));
            }
            if let Smoothness::Finite(p) = self.smoothness[i] {
                if !(p > 0.0 && p.is_finite()) {
                    return Err(Error::Domain(format!("layer {i}: smoothness must be positive")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicSummary {
    pub p_star_per_layer: Vec<Smoothness>,
    pub i_star: usize,
    pub p_star: Smoothness,
    pub t_star: usize,
    pub rate_exponent: f64,
    pub lw_exponent: f64,
    /// `L* + Σ L_i`; absent when some layer has infinite smoothness.
    pub min_depth: Option<u128>,
    /// `max_i q W_i d_{i+1}`; absent when some layer has infinite smoothness
    /// or the value overflows.
    pub min_width: Option<u128>,
    pub infinite_smoothness: bool,
}

/// Per-layer depth `216⌈p⌉² + 1`.
pub fn layer_depth(p: Smoothness) -> Option<u128> {
    let c = p.ceil()?;
    c.checked_mul(c)?.checked_mul(216)?.checked_add(1)
}

/// Per-layer width `81 (⌈p⌉ + t + 2)^{t+1} 3^{t+1}`.
pub fn layer_width(p: Smoothness, t: usize) -> Option<u128> {
    let c = p.ceil()?;
    let e = u32::try_from(t + 1).ok()?;
    let base = c.checked_add(t as u128 + 2)?;
    base.checked_pow(e)?.checked_mul(3u128.checked_pow(e)?)?.checked_mul(81)
}

pub fn intrinsic_summary(spec: &CompositionalSpec, q: usize) -> Result<IntrinsicSummary> {
    spec.validate()?;
    if q == 0 {
        return Err(Error::Domain("q must be at least 1".into()));
    }
    let layers = spec.l_star + 1;
    let p_star_per_layer: Vec<Smoothness> = (0..layers)
        .map(|i| {
            let tail: f64 = spec.smoothness[i + 1..].iter().map(|p| p.min_one()).product();
            spec.smoothness[i].mul(tail)
        })
        .collect();
    // ties go to the lowest index
    let ratio = |i: usize| p_star_per_layer[i].value() / spec.active_vars[i] as f64;
    let i_star = (1..layers).fold(0, |best, i| match ratio(i).partial_cmp(&ratio(best)) {
        Some(Ordering::Less) => i,
        _ => best,
    });
    let p_star = p_star_per_layer[i_star];
    let t_star = spec.active_vars[i_star];
    let (rate_exponent, lw_exponent) = exponents(p_star, t_star);

    let infinite_smoothness = spec.smoothness.iter().any(|p| p.is_infinite());
    let min_depth = (0..layers)
        .try_fold(spec.l_star as u128, |acc, i| acc.checked_add(layer_depth(spec.smoothness[i])?));
    let min_width = (0..layers).try_fold(0u128, |acc, i| {
        let w = layer_width(spec.smoothness[i], spec.active_vars[i])?
            .checked_mul(q as u128)?
            .checked_mul(spec.dims[i + 1] as u128)?;
        Some(acc.max(w))
    });
    Ok(IntrinsicSummary {
        p_star_per_layer,
        i_star,
        p_star,
        t_star,
        rate_exponent,
        lw_exponent,
        min_depth,
        min_width,
        infinite_smoothness,
    })
}

fn exponents(p_star: Smoothness, t_star: usize) -> (f64, f64) {
    let t = t_star as f64;
    match p_star {
        Smoothness::Finite(p) => (p / (2.0 * p + t), t / (2.0 * (2.0 * p + t))),
        Smoothness::Infinite => (0.5, 0.0),
    }
}

/// Smoothness of `g₁ ∘ g₂`: `min{p₁p₂, p₁, p₂}`.
pub fn composition_smoothness(p1: Smoothness, p2: Smoothness) -> Result<Smoothness> {
    for p in [p1, p2] {
        if let Smoothness::Finite(v) = p {
            if !(v > 0.0) {
                return Err(Error::Domain(format!("smoothness must be positive, got {v}")));
            }
        }
    }
    Ok(match (p1, p2) {
        (Smoothness::Infinite, other) | (other, Smoothness::Infinite) => other,
        (Smoothness::Finite(a), Smoothness::Finite(b)) => Smoothness::Finite((a * b).min(a).min(b)),
    })
}

/// Smoothness of the whole composition, folding from the innermost layer out.
pub fn composed_smoothness(spec: &CompositionalSpec) -> Result<Smoothness> {
    spec.smoothness[1..]
        .iter()
        .try_fold(spec.smoothness[0], |inner, &outer| composition_smoothness(outer, inner))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub exponent: f64,
    pub description: String,
}

/// Estimation-error exponent `p*/(2p* + t*)`: the first stage converges at `n^{-exponent}`.
pub fn rate(p_star: Smoothness, t_star: usize) -> Result<Rate> {
    if t_star == 0 {
        return Err(Error::Domain("t* must be at least 1".into()));
    }
    if let Smoothness::Finite(p) = p_star {
        if !(p > 0.0) {
            return Err(Error::Domain(format!("p* must be positive, got {p}")));
        }
    }
    let (exponent, _) = exponents(p_star, t_star);
    let description = match p_star {
        Smoothness::Finite(p) => format!("n^(-{p}/(2*{p}+{t_star})) = n^(-{exponent})"),
        Smoothness::Infinite => "n^(-1/2) (infinite smoothness limit)".to_string(),
    };
    Ok(Rate { exponent, description })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn fin(p: f64) -> Smoothness {
        Smoothness::Finite(p)
    }

    #[test]
    fn classical_single_layer() {
        for (p, d) in [(2.0, 4), (0.5, 1), (3.5, 7)] {
            let spec = CompositionalSpec::new(vec![d, 1], vec![d], vec![fin(p)]).unwrap();
            let s = intrinsic_summary(&spec, 1).unwrap();
            assert_eq!(s.p_star, fin(p));
            assert_eq!(s.t_star, d);
        }
    }

    #[test]
    fn additive_model() {
        let d = 5;
        for (ph, pg) in [(2.0, 3.0), (4.0, 1.5), (1.0, 1.0), (2.5, 2.5)] {
            let spec =
                CompositionalSpec::new(vec![d, d, 1, 1], vec![1, d, 1], vec![fin(ph), Smoothness::Infinite, fin(pg)])
                    .unwrap();
            let s = intrinsic_summary(&spec, 1).unwrap();
            assert_eq!(s.p_star, fin(ph.min(pg)));
            assert_eq!(s.t_star, 1);
            assert!(s.infinite_smoothness);
            assert_eq!(s.min_depth, None);
        }
    }

    #[test]
    fn production_function() {
        let d = 3;
        let spec =
            CompositionalSpec::new(vec![d, d, 1], vec![1, d], vec![Smoothness::Infinite, Smoothness::Infinite]).unwrap();
        let s = intrinsic_summary(&spec, 1).unwrap();
        assert_eq!(s.p_star, Smoothness::Infinite);
        assert_eq!(s.t_star, 1);
        assert_eq!(s.i_star, 0);
        assert_eq!(s.rate_exponent, 0.5);
        assert_eq!(s.min_width, None);
    }

    #[test]
    fn minimal_sizes() {
        let spec = CompositionalSpec::new(vec![1, 1], vec![1], vec![fin(1.0)]).unwrap();
        let s = intrinsic_summary(&spec, 1).unwrap();
        assert_eq!(s.min_depth, Some(217));
        assert_eq!(s.min_width, Some(11664));
        assert!(!s.infinite_smoothness);
        assert_eq!(layer_depth(fin(1.5)), Some(216 * 4 + 1));
        assert_eq!(layer_width(fin(2.0), 2), Some(81 * 6u128.pow(3) * 27));
    }

    #[test]
    fn strict_ceiling() {
        assert_eq!(fin(1.0).ceil(), Some(1));
        assert_eq!(fin(1.5).ceil(), Some(2));
        assert_eq!(fin(2.0).ceil(), Some(2));
        assert_eq!(fin(0.3).ceil(), Some(1));
        assert_eq!(Smoothness::Infinite.ceil(), None);
    }

    #[test]
    fn rate_values() {
        assert!((rate(fin(1.0), 1).unwrap().exponent - 1.0 / 3.0).abs() < 1e-15);
        assert!((rate(fin(2.0), 1).unwrap().exponent - 0.4).abs() < 1e-15);
        assert!((rate(fin(2.0), 4).unwrap().exponent - 0.25).abs() < 1e-15);
        assert_eq!(rate(Smoothness::Infinite, 3).unwrap().exponent, 0.5);
        assert!((rate(fin(1e9), 3).unwrap().exponent - 0.5).abs() < 1e-8);
        assert!(rate(fin(1.0), 0).is_err());
    }

    #[test]
    fn composition_values() {
        assert_eq!(composition_smoothness(fin(2.0), fin(3.0)).unwrap(), fin(2.0));
        assert_eq!(composition_smoothness(fin(0.5), fin(0.5)).unwrap(), fin(0.25));
        assert_eq!(composition_smoothness(Smoothness::Infinite, fin(0.7)).unwrap(), fin(0.7));
        assert!(composition_smoothness(fin(-1.0), fin(1.0)).is_err());
    }

    #[test]
    fn invalid_specs() {
        assert!(CompositionalSpec::new(vec![2, 2], vec![3], vec![fin(1.0)]).is_err());
        assert!(CompositionalSpec::new(vec![2, 2], vec![2], vec![fin(1.0)]).is_err());
        assert!(CompositionalSpec::new(vec![2, 1], vec![2], vec![fin(0.0)]).is_err());
        assert!(CompositionalSpec::new(vec![2, 1], vec![2, 1], vec![fin(1.0)]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let spec =
            CompositionalSpec::new(vec![4, 4, 1, 1], vec![1, 4, 1], vec![fin(2.0), Smoothness::Infinite, fin(3.0)])
                .unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"inf\""));
        assert_eq!(serde_json::from_str::<CompositionalSpec>(&json).unwrap(), spec);
        let summary = intrinsic_summary(&spec, 1).unwrap();
        let back: IntrinsicSummary = serde_json::from_str(&serde_json::to_string(&summary).unwrap()).unwrap();
        assert_eq!(back, summary);
        assert!(serde_json::from_str::<Smoothness>("\"fast\"").is_err());
        assert!(serde_json::from_str::<Smoothness>("-2").is_err());
        assert_eq!(serde_json::from_str::<Smoothness>("3").unwrap(), fin(3.0));
    }

    fn random_spec(rng: &mut RngStream) -> CompositionalSpec {
        let layers = 1 + rng.below(4);
        let mut dims: Vec<usize> = (0..layers).map(|_| 1 + rng.below(6)).collect();
        dims.push(1);
        let t = (0..layers).map(|i| 1 + rng.below(dims[i])).collect();
        let p = (0..layers).map(|_| fin(rng.uniform_range(0.1, 4.0))).collect();
        CompositionalSpec::new(dims, t, p).unwrap()
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn p_star_bounded_by_each_layer(seed in 0u64..100_000) {
                let spec = random_spec(&mut RngStream::new(seed, 0));
                let s = intrinsic_summary(&spec, 1).unwrap();
                for (pi_star, pi) in s.p_star_per_layer.iter().zip(&spec.smoothness) {
                    prop_assert!(pi_star.value() <= pi.value() * (1.0 + 1e-12));
                }
                prop_assert!(s.p_star.value() <= spec.smoothness[s.i_star].value() * (1.0 + 1e-12));
                prop_assert_eq!(s.p_star, s.p_star_per_layer[s.i_star]);
                prop_assert_eq!(s.t_star, spec.active_vars[s.i_star]);
                prop_assert!(s.rate_exponent > 0.0 && s.rate_exponent <= 0.5);
            }

            #[test]
            fn composed_smoothness_below_p_star(seed in 0u64..100_000) {
                let spec = random_spec(&mut RngStream::new(seed, 0));
                let s = intrinsic_summary(&spec, 1).unwrap();
                let ph = composed_smoothness(&spec).unwrap();
                prop_assert!(ph.value() <= s.p_star.value() * (1.0 + 1e-12));
            }

            #[test]
            fn rate_monotone(p in 0.1f64..10.0, dp in 0.01f64..5.0, t in 1usize..10) {
                let base = rate(fin(p), t).unwrap().exponent;
                prop_assert!(rate(fin(p + dp), t).unwrap().exponent > base);
                prop_assert!(rate(fin(p), t + 1).unwrap().exponent < base);
            }

            #[test]
            fn non_minimal_layers_permute_freely(seed in 0u64..100_000) {
                // with every p ≥ 1 the tail factors are 1, so layers may be reordered
                let mut rng = RngStream::new(seed, 0);
                let layers = 2 + rng.below(3);
                let d = 6;
                let mut dims = vec![d; layers];
                dims.push(1);
                let t: Vec<usize> = (0..layers).map(|_| 1 + rng.below(d)).collect();
                let p: Vec<Smoothness> = (0..layers).map(|_| fin(rng.uniform_range(1.0, 5.0))).collect();
                let spec = CompositionalSpec::new(dims.clone(), t.clone(), p.clone()).unwrap();
                let s = intrinsic_summary(&spec, 1).unwrap();
                let mut order: Vec<usize> = (0..layers).filter(|&i| i != s.i_star).collect();
                rng.shuffle(&mut order);
                let mut new_t = t.clone();
                let mut new_p = p.clone();
                let slots: Vec<usize> = (0..layers).filter(|&i| i != s.i_star).collect();
                for (slot, src) in slots.iter().zip(&order) {
                    new_t[*slot] = t[*src];
                    new_p[*slot] = p[*src];
                }
                let permuted = intrinsic_summary(&CompositionalSpec::new(dims, new_t, new_p).unwrap(), 1).unwrap();
                prop_assert_eq!(permuted.p_star, s.p_star);
                prop_assert_eq!(permuted.t_star, s.t_star);
            }
        }
    }
}
