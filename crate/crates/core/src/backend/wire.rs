// SPDX-License-Identifier: MIT OR Apache-2.0

//! Request and response bodies of the model-server protocol.
//!
//! | endpoint            | request             | response             |
//! |---------------------|---------------------|----------------------|
//! | `GET /v1/info`      |                     | [`InfoResponse`]     |
//! | `POST /v1/tokenize` | [`TokenizeRequest`] | [`TokenizeResponse`] |
//! | `POST /v1/forward`  | [`ForwardRequest`]  | [`ForwardResponse`]  |
//! | `POST /v1/generate` | [`GenerateRequest`] | [`GenerateResponse`] |

use serde::{Deserialize, Serialize};

use crate::types::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Need {
    pub logits: bool,
    #[serde(default)]
    pub attentions: bool,
    #[serde(default)]
    pub layer_logits: bool,
}

impl Need {
    pub fn logits_only() -> Self {
        Self {
            logits: true,
            attentions: false,
            layer_logits: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardRequest {
    pub tokens: Vec<TokenId>,
    pub need: Need,
}

/// Logits `[n][V]`, attentions `[L][H][n][n]`, layer logits `[L][n][V]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardResponse {
    pub logits: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attentions: Option<Vec<Vec<Vec<Vec<f64>>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_logits: Option<Vec<Vec<Vec<f64>>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub tokens: Vec<TokenId>,
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub seed: u64,
}

/// Only the newly generated tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub tokens: Vec<TokenId>,
    #[serde(default)]
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoResponse {
    pub vocab_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub model_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizeRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizeResponse {
    pub tokens: Vec<TokenId>,
    #[serde(default)]
    pub texts: Vec<String>,
}
