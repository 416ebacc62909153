// SPDX-License-Identifier: Apache-2.0

//! HS256 bearer tokens with `iss` and `exp` claims.

use std::time::{SystemTime, UNIX_EPOCH};

use jsonwebtoken::{decode, encode, Algorithm, DecodingKey, EncodingKey, Header, Validation};
use serde::{Deserialize, Serialize};

/// Environment variable holding the shared signing secret.
pub const SECRET_ENV: &str = "SHELLGATE_SECRET";
pub const DEFAULT_ISSUER: &str = "shellgate";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claims {
    pub iss: String,
    pub exp: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum AuthError {
    #[error("environment variable {SECRET_ENV} is not set or empty")]
    MissingSecret,
    #[error("missing bearer token")]
    MissingToken,
    #[error("invalid token: {0}")]
    Invalid(String),
}

#[derive(Clone)]
pub struct Auth {
    decoding: DecodingKey,
    validation: Validation,
}

impl std::fmt::Debug for Auth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Auth").finish_non_exhaustive()
    }
}

impl Auth {
    pub fn new(secret: &[u8], issuer: &str) -> Result<Self, AuthError> {
        if secret.is_empty() {
            return Err(AuthError::MissingSecret);
        }
        let mut validation = Validation::new(Algorithm::HS256);
        validation.leeway = 0;
        validation.set_issuer(&[issuer]);
        validation.set_required_spec_claims(&["exp", "iss"]);
        Ok(Auth {
            decoding: DecodingKey::from_secret(secret),
            validation,
        })
    }

    /// Reads the secret from [`SECRET_ENV`].
    pub fn from_env(issuer: &str) -> Result<Self, AuthError> {
        let secret = std::env::var(SECRET_ENV).map_err(|_| AuthError::MissingSecret)?;
        Self::new(secret.as_bytes(), issuer)
    }

    pub fn verify(&self, token: &str) -> Result<Claims, AuthError> {
        decode::<Claims>(token, &self.decoding, &self.validation)
            .map(|d| d.claims)
            .map_err(|e| AuthError::Invalid(e.to_string()))
    }

    /// Checks an `Authorization` header value.
    pub fn verify_header(&self, header: Option<&str>) -> Result<Claims, AuthError> {
        let token = header
            .and_then(|h| h.strip_prefix("Bearer "))
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .ok_or(AuthError::MissingToken)?;
        self.verify(token)
    }
}

pub fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Signs a token valid for `ttl_secs` from now.
pub fn mint_token(secret: &[u8], issuer: &str, ttl_secs: u64) -> Result<String, AuthError> {
    mint_token_with_exp(secret, issuer, now_secs() + ttl_secs)
}

pub fn mint_token_with_exp(secret: &[u8], issuer: &str, exp: u64) -> Result<String, AuthError> {
    if secret.is_empty() {
        return Err(AuthError::MissingSecret);
    }
    let claims = Claims {
        iss: issuer.to_string(),
        exp,
    };
    encode(
        &Header::new(Algorithm::HS256),
        &claims,
        &EncodingKey::from_secret(secret),
    )
    .map_err(|e| AuthError::Invalid(e.to_string()))
}
