//! Pluggable external services: text generation, embeddings, detection,
//! vision-language checks and image operations.
//!
//! Each service has an HTTP client (selected by an environment variable
//! holding its base URL) and a deterministic offline stub.

pub mod http;
pub mod stub;

use serde::{Deserialize, Serialize};

use crate::config::ProviderUrls;
use crate::error::Result;
use crate::tensor::Tensor;

pub const ENV_TEXTGEN: &str = "EF_TEXTGEN_URL";
pub const ENV_EMBED: &str = "EF_EMBED_URL";
pub const ENV_EMBED2: &str = "EF_EMBED2_URL";
pub const ENV_DETECT: &str = "EF_DETECT_URL";
pub const ENV_VLM: &str = "EF_VLM_URL";
pub const ENV_IMAGEOP: &str = "EF_IMAGEOP_URL";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub seed: u64,
}

pub trait TextGenerator: Send + Sync {
    fn generate(&self, req: &GenerateRequest) -> Result<String>;
}

/// An embedding tagged with the provider that produced it. Vectors from
/// different providers are never compared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub provider: String,
}

pub trait Embedder: Send + Sync {
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector>;
    fn embed_image(&self, image: &Tensor) -> Result<EmbeddingVector>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub present: bool,
    pub score: f64,
}

/// Open-vocabulary presence check for an object phrase.
pub trait Detector: Send + Sync {
    fn detect(&self, image: &Tensor, query: &str) -> Result<Detection>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VlmVerdict {
    pub consistent: bool,
    pub score: f64,
}

/// Judges whether an edited image follows an instruction.
pub trait VisionLanguageJudge: Send + Sync {
    fn judge(&self, before: &Tensor, after: &Tensor, instruction: &str) -> Result<VlmVerdict>;
}

/// Named image operation over one or more images.
pub trait ImageOp: Send + Sync {
    fn apply(&self, op: &str, inputs: &[Tensor], params: &serde_json::Value) -> Result<Tensor>;
}

/// The full set of providers a pipeline run uses.
pub struct Providers {
    pub textgen: Box<dyn TextGenerator>,
    pub clip: Box<dyn Embedder>,
    pub dino: Box<dyn Embedder>,
    pub detector: Option<Box<dyn Detector>>,
    pub vlm: Option<Box<dyn VisionLanguageJudge>>,
    pub imageop: Box<dyn ImageOp>,
}

impl Providers {
    /// Deterministic offline providers, detector and judge included.
    pub fn stubs() -> Self {
        Self {
            textgen: Box::new(stub::StubTextGenerator),
            clip: Box::new(stub::ConceptEmbedder),
            dino: Box::new(stub::PixelEmbedder),
            detector: Some(Box::new(stub::StubDetector)),
            vlm: Some(Box::new(stub::StubJudge)),
            imageop: Box::new(stub::FillImageOp),
        }
    }

    /// HTTP providers for every service whose URL variable is set, stubs
    /// for the rest. The optional detector and judge are only enabled when
    /// their URLs are set.
    pub fn from_env() -> Self {
        Self::resolve(&ProviderUrls::default())
    }

    /// Like [`Providers::from_env`], falling back to `urls` for services
    /// whose variable is unset.
    pub fn resolve(urls: &ProviderUrls) -> Self {
        let pick = |k: &str, fallback: &Option<String>| {
            std::env::var(k)
                .ok()
                .or_else(|| fallback.clone())
                .filter(|v| !v.trim().is_empty())
        };
        let stubs = Self::stubs();
        Self {
            textgen: match pick(ENV_TEXTGEN, &urls.textgen) {
                Some(u) => Box::new(http::HttpTextGenerator::new(&u)),
                None => stubs.textgen,
            },
            clip: match pick(ENV_EMBED, &urls.embed) {
                Some(u) => Box::new(http::HttpEmbedder::new(&u)),
                None => stubs.clip,
            },
            dino: match pick(ENV_EMBED2, &urls.embed2) {
                Some(u) => Box::new(http::HttpEmbedder::new(&u)),
                None => stubs.dino,
            },
            detector: pick(ENV_DETECT, &urls.detect).map(|u| Box::new(http::HttpDetector::new(&u)) as Box<dyn Detector>),
            vlm: pick(ENV_VLM, &urls.vlm).map(|u| Box::new(http::HttpJudge::new(&u)) as Box<dyn VisionLanguageJudge>),
            imageop: match pick(ENV_IMAGEOP, &urls.imageop) {
                Some(u) => Box::new(http::HttpImageOp::new(&u)),
                None => stubs.imageop,
            },
        }
    }
}
