// SPDX-License-Identifier: MIT OR Apache-2.0

//! HTTP client for a model server speaking the JSON wire protocol.
//!
//! Logits cross the wire as 32-bit floats; softmax happens here in `f64`.
//! Transport failures are returned to the caller as-is, never retried.

use std::time::Duration;

use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{
    ForwardRequest, ForwardResponse, GenerateRequest, GenerateResponse, InfoResponse, Need,
    TokenizeRequest, TokenizeResponse,
};
use super::{
    AttentionStack, Backend, BackendDescriptor, Capabilities, LayerDistributionStack, LogitMatrix,
    Sampling,
};
use crate::error::{Error, Result};
use crate::types::{DistributionMatrix, TokenId, TokenSequence};

#[derive(Debug, Clone)]
pub struct RemoteBackend {
    base: String,
    client: Client,
    descriptor: BackendDescriptor,
}

impl RemoteBackend {
    /// Connects to `base_url` and reads the model description from `/v1/info`.
    pub fn connect(base_url: &str) -> Result<Self> {
        Self::connect_with_timeout(base_url, Duration::from_secs(300))
    }

    pub fn connect_with_timeout(base_url: &str, timeout: Duration) -> Result<Self> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let base = base_url.trim_end_matches('/').to_owned();
        let info: InfoResponse = decode(
            client
                .get(format!("{base}/v1/info"))
                .send()
                .map_err(|e| Error::Transport(format!("{base}: {e}")))?,
        )?;
        if info.vocab_size == 0 || info.num_layers == 0 {
            return Err(Error::Protocol(format!(
                "server reports vocab_size {} and num_layers {}",
                info.vocab_size, info.num_layers
            )));
        }
        let descriptor = BackendDescriptor {
            model_name: info.model_name,
            vocab_size: info.vocab_size,
            num_layers: info.num_layers,
            num_heads: info.num_heads,
            context: None,
            capabilities: Capabilities::ALL,
        };
        Ok(Self {
            base,
            client,
            descriptor,
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp> {
        let url = format!("{}{path}", self.base);
        let resp = self
            .client
            .post(&url)
            .json(body)
            .send()
            .map_err(|e| Error::Transport(format!("{url}: {e}")))?;
        decode(resp)
    }

    fn forward(&self, tokens: &TokenSequence, need: Need) -> Result<ForwardResponse> {
        tokens.validate(self.descriptor.vocab_size)?;
        let resp: ForwardResponse = self.post(
            "/v1/forward",
            &ForwardRequest {
                tokens: tokens.ids().to_vec(),
                need,
            },
        )?;
        self.check_matrix(&resp.logits, tokens.len(), "logits")?;
        Ok(resp)
    }

    fn check_matrix(&self, m: &LogitMatrix, n: usize, what: &str) -> Result<()> {
        if m.len() != n {
            return Err(Error::Protocol(format!(
                "{what}: {} rows for {n} tokens",
                m.len()
            )));
        }
        let v = self.descriptor.vocab_size;
        if let Some(row) = m.iter().find(|r| r.len() != v) {
            return Err(Error::Protocol(format!(
                "{what}: row of width {} for vocabulary of {v}",
                row.len()
            )));
        }
        Ok(())
    }
}

fn decode<T: DeserializeOwned>(resp: Response) -> Result<T> {
    let status = resp.status();
    if status == StatusCode::PAYLOAD_TOO_LARGE {
        return Err(Error::Transport(format!(
            "server rejected request as too large ({status})"
        )));
    }
    if !status.is_success() {
        let body = resp.text().unwrap_or_default();
        return Err(Error::Transport(format!(
            "server answered {status}: {body}"
        )));
    }
    let bytes = resp.bytes().map_err(|e| Error::Transport(e.to_string()))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Protocol(e.to_string()))
}

impl Backend for RemoteBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn logits(&self, tokens: &TokenSequence) -> Result<LogitMatrix> {
        Ok(self.forward(tokens, Need::logits_only())?.logits)
    }

    fn attentions(&self, tokens: &TokenSequence) -> Result<AttentionStack> {
        let resp = self.forward(
            tokens,
            Need {
                attentions: true,
                ..Need::logits_only()
            },
        )?;
        let weights = resp
            .attentions
            .ok_or_else(|| Error::Protocol("attentions missing from response".into()))?;
        if weights.len() != self.descriptor.num_layers {
            return Err(Error::Protocol(format!(
                "{} attention layers, server advertises {}",
                weights.len(),
                self.descriptor.num_layers
            )));
        }
        AttentionStack::new(weights)
    }

    fn layer_distributions(&self, tokens: &TokenSequence) -> Result<LayerDistributionStack> {
        let resp = self.forward(
            tokens,
            Need {
                layer_logits: true,
                ..Need::logits_only()
            },
        )?;
        let layers = resp
            .layer_logits
            .ok_or_else(|| Error::Protocol("layer_logits missing from response".into()))?;
        if layers.len() != self.descriptor.num_layers {
            return Err(Error::Protocol(format!(
                "{} layers of logits, server advertises {}",
                layers.len(),
                self.descriptor.num_layers
            )));
        }
        for layer in &layers {
            self.check_matrix(layer, tokens.len(), "layer_logits")?;
        }
        Ok(LayerDistributionStack::new(
            layers
                .iter()
                .map(|l| DistributionMatrix::from_logits(l))
                .collect(),
        ))
    }

    fn generate(
        &self,
        tokens: &TokenSequence,
        max_new: usize,
        sampling: &Sampling,
    ) -> Result<TokenSequence> {
        if max_new == 0 {
            return Err(Error::Config("max_new must be at least 1".into()));
        }
        tokens.validate(self.descriptor.vocab_size)?;
        let resp: GenerateResponse = self.post(
            "/v1/generate",
            &GenerateRequest {
                tokens: tokens.ids().to_vec(),
                max_new_tokens: max_new,
                temperature: sampling.temperature,
                top_p: sampling.top_p,
                seed: sampling.seed,
            },
        )?;
        if resp.tokens.len() != max_new {
            return Err(Error::Protocol(format!(
                "asked for {max_new} new tokens, got {}",
                resp.tokens.len()
            )));
        }
        let new = if resp.texts.len() == resp.tokens.len() {
            TokenSequence::with_texts(resp.tokens, resp.texts)?
        } else {
            TokenSequence::new(resp.tokens)?
        };
        new.validate(self.descriptor.vocab_size)
            .map_err(|e| Error::Protocol(e.to_string()))?;
        Ok(tokens.concat(&new))
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        let resp: TokenizeResponse = self.post(
            "/v1/tokenize",
            &TokenizeRequest {
                text: text.to_owned(),
            },
        )?;
        if resp.tokens.is_empty() {
            return Err(Error::InvalidTokens(format!("{text:?} has no tokens")));
        }
        let seq = if resp.texts.len() == resp.tokens.len() {
            TokenSequence::with_texts(resp.tokens, resp.texts)?
        } else {
            TokenSequence::new(resp.tokens)?
        };
        seq.validate(self.descriptor.vocab_size)
            .map_err(|e| Error::Protocol(e.to_string()))?;
        Ok(seq)
    }

    fn space_token(&self) -> Result<TokenId> {
        Ok(self.tokenize(" ")?.ids()[0])
    }
}
