//! TOML configuration. Every key is optional; command-line flags override it.
//!
//! ```toml
//! [bm25]
//! k1 = 1.5
//! b = 0.75
//! remove_stopwords = false
//!
//! [fusion]
//! w_dense = 0.4
//! w_lex = 0.2
//! w_multi = 0.4
//!
//! [pipeline]
//! k = 50
//! depth = 50
//! workers = 4
//!
//! [review]
//! n = 203
//! seed = 42
//!
//! [service]
//! bind = "127.0.0.1"
//! port = 8080
//! token = "change-me"
//! ```

use std::path::Path;

use anyhow::{Context, Result};
use harmoniser_core::hybrid::FusionWeights;
use harmoniser_core::lexical::{Analyzer, Bm25Params};
use serde::Deserialize;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub bm25: Bm25Section,
    pub fusion: FusionSection,
    pub pipeline: PipelineSection,
    pub review: ReviewSection,
    pub service: ServiceSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bm25Section {
    pub k1: f64,
    pub b: f64,
    pub remove_stopwords: bool,
}

impl Default for Bm25Section {
    fn default() -> Self {
        let p = Bm25Params::default();
        Self {
            k1: p.k1,
            b: p.b,
            remove_stopwords: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub w_dense: f64,
    pub w_lex: f64,
    pub w_multi: f64,
}

impl Default for FusionSection {
    fn default() -> Self {
        let w = FusionWeights::default();
        Self {
            w_dense: w.w_dense,
            w_lex: w.w_lex,
            w_multi: w.w_multi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub k: usize,
    pub depth: usize,
    pub workers: usize,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            k: 50,
            depth: harmoniser_core::pipeline::DEFAULT_RERANK_DEPTH,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReviewSection {
    pub n: usize,
    pub seed: u64,
}

impl Default for ReviewSection {
    fn default() -> Self {
        Self { n: 203, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    pub bind: String,
    pub port: u16,
    pub token: Option<String>,
}

impl Default for ServiceSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            token: None,
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    pub fn bm25_params(&self) -> Result<Bm25Params> {
        Ok(Bm25Params::new(self.bm25.k1, self.bm25.b)?)
    }

    pub fn analyzer(&self) -> Analyzer {
        Analyzer {
            remove_stopwords: self.bm25.remove_stopwords,
        }
    }

    pub fn fusion_weights(&self) -> Result<FusionWeights> {
        let f = &self.fusion;
        Ok(FusionWeights::new(f.w_dense, f.w_lex, f.w_multi)?)
    }
}
