//! Blocking JSON-over-HTTP clients for the provider endpoints.
//!
//! | service   | request                                   | response                          |
//! |-----------|-------------------------------------------|-----------------------------------|
//! | generate  | `POST /generate {prompt, max_tokens, temperature, seed}` | `{text}`               |
//! | embed     | `POST /embed/text {text}`, `POST /embed/image {png}` | `{vector, provider_tag}` |
//! | detect    | `POST /detect {png, query}`               | `{present, score}`                |
//! | vlm       | `POST /vlm {before, after, instruction}`  | `{consistent, score}`             |
//! | imageop   | `POST /imageop {op, inputs, params}`      | `{png}`                           |
//!
//! Images travel as base64-encoded PNG. Any transport or decoding failure
//! surfaces as [`Error::Provider`].

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::image::{decode_png_base64, encode_png_base64};
use crate::tensor::Tensor;

use super::{
    Detection, Detector, Embedder, EmbeddingVector, GenerateRequest, ImageOp, TextGenerator,
    VisionLanguageJudge, VlmVerdict,
};

struct Client {
    base: String,
    agent: ureq::Agent,
}

impl Client {
    fn new(base: &str) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        Self {
            base: base.trim_end_matches('/').to_string(),
            agent,
        }
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R> {
        let url = format!("{}{path}", self.base);
        let mut resp = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| Error::Provider(format!("POST {url}: {e}")))?;
        resp.body_mut()
            .read_json::<R>()
            .map_err(|e| Error::Provider(format!("POST {url}: bad response body: {e}")))
    }
}

pub struct HttpTextGenerator(Client);

impl HttpTextGenerator {
    pub fn new(base: &str) -> Self {
        Self(Client::new(base))
    }
}

#[derive(Deserialize)]
struct TextResponse {
    text: String,
}

impl TextGenerator for HttpTextGenerator {
    fn generate(&self, req: &GenerateRequest) -> Result<String> {
        Ok(self.0.post::<_, TextResponse>("/generate", req)?.text)
    }
}

pub struct HttpEmbedder(Client);

impl HttpEmbedder {
    pub fn new(base: &str) -> Self {
        Self(Client::new(base))
    }
}

#[derive(Deserialize)]
struct EmbedResponse {
    vector: Vec<f64>,
    provider_tag: String,
}

impl From<EmbedResponse> for EmbeddingVector {
    fn from(r: EmbedResponse) -> Self {
        EmbeddingVector {
            values: r.vector,
            provider: r.provider_tag,
        }
    }
}

impl Embedder for HttpEmbedder {
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        Ok(self.0.post::<_, EmbedResponse>("/embed/text", &json!({ "text": text }))?.into())
    }

    fn embed_image(&self, image: &Tensor) -> Result<EmbeddingVector> {
        let png = encode_png_base64(image)?;
        Ok(self.0.post::<_, EmbedResponse>("/embed/image", &json!({ "png": png }))?.into())
    }
}

pub struct HttpDetector(Client);

impl HttpDetector {
    pub fn new(base: &str) -> Self {
        Self(Client::new(base))
    }
}

impl Detector for HttpDetector {
    fn detect(&self, image: &Tensor, query: &str) -> Result<Detection> {
        let png = encode_png_base64(image)?;
        self.0.post("/detect", &json!({ "png": png, "query": query }))
    }
}

pub struct HttpJudge(Client);

impl HttpJudge {
    pub fn new(base: &str) -> Self {
        Self(Client::new(base))
    }
}

impl VisionLanguageJudge for HttpJudge {
    fn judge(&self, before: &Tensor, after: &Tensor, instruction: &str) -> Result<VlmVerdict> {
        let body = json!({
            "before": encode_png_base64(before)?,
            "after": encode_png_base64(after)?,
            "instruction": instruction,
        });
        self.0.post("/vlm", &body)
    }
}

pub struct HttpImageOp(Client);

impl HttpImageOp {
    pub fn new(base: &str) -> Self {
        Self(Client::new(base))
    }
}

#[derive(Deserialize)]
struct PngResponse {
    png: String,
}

impl ImageOp for HttpImageOp {
    fn apply(&self, op: &str, inputs: &[Tensor], params: &serde_json::Value) -> Result<Tensor> {
        let inputs = inputs
            .iter()
            .map(encode_png_base64)
            .collect::<Result<Vec<_>>>()?;
        let body = json!({ "op": op, "inputs": inputs, "params": params });
        let resp: PngResponse = self.0.post("/imageop", &body)?;
        decode_png_base64(&resp.png).map_err(|e| Error::Provider(format!("imageop returned bad png: {e}")))
    }
}
