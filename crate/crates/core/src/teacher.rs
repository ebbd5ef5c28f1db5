//! Teacher descriptions, unit-norm embedding vectors and attack pricing.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{dot, normalize_slice};

/// Allowed deviation of a teacher vector's norm from 1.
pub const UNIT_NORM_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum TeacherSource {
    /// Deterministic teacher over a synthetic world.
    Simulated { seed: u64 },
    /// Previously harvested embeddings only.
    Cache { path: String },
    /// Remote embedding API. `credentials_env` names the environment
    /// variable holding the key; keys never live in config files.
    Live {
        endpoint: String,
        model: String,
        credentials_env: String,
        provider: Provider,
    },
}

/// Wire dialect of a live embedding API.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    OpenAi,
    Cohere,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherSpec {
    pub name: String,
    pub dim: usize,
    pub max_tokens: usize,
    /// Price in micro-dollars per million tokens (0.13 USD = 130_000).
    pub price_micros_per_million: u64,
    /// Whether the provider distinguishes queries from documents.
    pub input_type: bool,
    pub source: TeacherSource,
}

impl TeacherSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.max_tokens == 0 {
            return Err(Error::invalid(alloc::format!(
                "teacher {:?} needs positive dim and max_tokens",
                self.name
            )));
        }
        Ok(())
    }

    /// Price per million tokens in dollars.
    pub fn price_per_million(&self) -> f64 {
        self.price_micros_per_million as f64 / 1e6
    }

    /// Converts a dollar price to the stored micro-dollar form.
    pub fn micros_from_dollars(dollars: f64) -> Result<u64> {
        if !(dollars >= 0.0) || !dollars.is_finite() {
            return Err(Error::invalid("price must be a non-negative number"));
        }
        Ok(libm::round(dollars * 1e6) as u64)
    }

    /// text-embedding-3-large: 3072 dims, 8192 tokens, $0.13 / 1M tokens.
    pub fn openai() -> Self {
        Self {
            name: "openai".into(),
            dim: 3072,
            max_tokens: 8192,
            price_micros_per_million: 130_000,
            input_type: false,
            source: TeacherSource::Live {
                endpoint: "https://api.openai.com".into(),
                model: "text-embedding-3-large".into(),
                credentials_env: "OPENAI_API_KEY".into(),
                provider: Provider::OpenAi,
            },
        }
    }

    /// embed-english-v3.0: 1024 dims, 512 tokens, $0.10 / 1M tokens.
    pub fn cohere() -> Self {
        Self {
            name: "cohere".into(),
            dim: 1024,
            max_tokens: 512,
            price_micros_per_million: 100_000,
            input_type: true,
            source: TeacherSource::Live {
                endpoint: "https://api.cohere.com".into(),
                model: "embed-english-v3.0".into(),
                credentials_env: "COHERE_API_KEY".into(),
                provider: Provider::Cohere,
            },
        }
    }

    /// Simulated stand-in for the OpenAI teacher at 1/32 of its width.
    pub fn sim_openai(seed: u64) -> Self {
        Self {
            name: "sim-openai".into(),
            dim: 96,
            source: TeacherSource::Simulated { seed },
            ..Self::openai()
        }
    }

    /// Simulated stand-in for the Cohere teacher at 1/32 of its width.
    pub fn sim_cohere(seed: u64) -> Self {
        Self {
            name: "sim-cohere".into(),
            dim: 32,
            source: TeacherSource::Simulated { seed },
            ..Self::cohere()
        }
    }

    /// Looks up a built-in spec by name.
    pub fn builtin(name: &str, seed: u64) -> Option<Self> {
        match name {
            "openai" => Some(Self::openai()),
            "cohere" => Some(Self::cohere()),
            "sim-openai" => Some(Self::sim_openai(seed)),
            "sim-cohere" => Some(Self::sim_cohere(seed)),
            _ => None,
        }
    }
}

/// Money in whole cents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cents(pub u64);

impl core::fmt::Display for Cents {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "${}.{:02}", self.0 / 100, self.0 % 100)
    }
}

/// Cost of embedding `token_count` tokens, rounded half-up to cents.
pub fn estimate_cost(spec: &TeacherSpec, token_count: i64) -> Result<Cents> {
    if token_count < 0 {
        return Err(Error::invalid("token count must be non-negative"));
    }
    // tokens · µ$ / 1e6 tokens = µ$; cents = µ$ / 1e4
    let scaled = token_count as u128 * spec.price_micros_per_million as u128;
    let cents = (scaled + 5_000_000_000) / 10_000_000_000;
    Ok(Cents(cents as u64))
}

/// A unit-norm embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Normalizes `values` to unit length.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("embedding"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "embedding" });
        }
        normalize_slice(&mut values)?;
        Ok(Self { values })
    }

    /// Accepts values that are already unit norm within [`UNIT_NORM_TOL`].
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        let n = libm::sqrt(dot(&values, &values));
        if values.is_empty() || !((n - 1.0).abs() <= UNIT_NORM_TOL) {
            return Err(Error::invalid(alloc::format!("vector norm {n} is not 1")));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.values, &other.values)
    }
}

/// Concatenation of two unit vectors, renormalized (a division by √2).
pub fn concat_teachers(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<EmbeddingVector> {
    let mut v = Vec::with_capacity(a.dim() + b.dim());
    v.extend_from_slice(a.values());
    v.extend_from_slice(b.values());
    EmbeddingVector::normalized(v)
}

/// Display name for a concatenated teacher.
pub fn concat_name(a: &str, b: &str) -> String {
    let mut s = a.to_string();
    s.push('+');
    s.push_str(b);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn cost_examples() {
        assert_eq!(estimate_cost(&TeacherSpec::openai(), 1_000_000).unwrap(), Cents(13));
        assert_eq!(estimate_cost(&TeacherSpec::cohere(), 1_000_000).unwrap(), Cents(10));
        assert_eq!(estimate_cost(&TeacherSpec::openai(), 0).unwrap(), Cents(0));
        assert_eq!(estimate_cost(&TeacherSpec::cohere(), 2_500_000).unwrap(), Cents(25));
        assert!(estimate_cost(&TeacherSpec::cohere(), -1).is_err());
        assert_eq!(Cents(13).to_string(), "$0.13");
        assert_eq!(Cents(12345).to_string(), "$123.45");
    }

    #[test]
    fn cost_rounds_half_up() {
        // 50_000 tokens at $0.10/M = 0.5 cents
        assert_eq!(estimate_cost(&TeacherSpec::cohere(), 50_000).unwrap(), Cents(1));
        assert_eq!(estimate_cost(&TeacherSpec::cohere(), 49_999).unwrap(), Cents(0));
    }

    #[test]
    fn concat_examples() {
        let a = EmbeddingVector::from_unit(vec![1.0, 0.0]).unwrap();
        let c = concat_teachers(&a, &a).unwrap();
        let h = core::f64::consts::FRAC_1_SQRT_2;
        for (got, want) in c.values().iter().zip([h, 0.0, h, 0.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_cosine_is_mean_of_halves() {
        let v = |x: &[f64]| EmbeddingVector::normalized(x.to_vec()).unwrap();
        let (a1, b1) = (v(&[1.0, 2.0, -1.0]), v(&[0.3, 0.1]));
        let (a2, b2) = (v(&[-0.5, 2.0, 1.0]), v(&[1.0, -4.0]));
        let c1 = concat_teachers(&a1, &b1).unwrap();
        let c2 = concat_teachers(&a2, &b2).unwrap();
        assert!((c1.values().iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        let want = 0.5 * (a1.cosine(&a2) + b1.cosine(&b2));
        assert!((c1.cosine(&c2) - want).abs() < 1e-12);
    }

    #[test]
    fn unit_checks() {
        assert!(EmbeddingVector::from_unit(vec![0.6, 0.8]).is_ok());
        assert!(EmbeddingVector::from_unit(vec![0.6, 0.9]).is_err());
        assert!(EmbeddingVector::normalized(vec![0.0, 0.0]).is_err());
        let r = EmbeddingVector::normalized(vec![0.999, 0.0]).unwrap();
        assert!((r.values()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn builtins_mirror_published_shapes() {
        assert_eq!(TeacherSpec::openai().dim, 3072);
        assert_eq!(TeacherSpec::cohere().max_tokens, 512);
        assert_eq!(TeacherSpec::sim_openai(0).dim * 32, 3072);
        assert_eq!(TeacherSpec::sim_cohere(0).dim * 32, 1024);
        assert!(TeacherSpec::builtin("sim-cohere", 1).unwrap().input_type);
        assert!(TeacherSpec::builtin("nope", 1).is_none());
    }
}
