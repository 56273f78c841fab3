//! Newline-delimited JSON wire protocol for external velocity providers.
//!
//! One JSON object per line, UTF-8. Requests:
//! `{"type":"velocity_batch","id":7,"t":[0.5],"x":[[0.0]]}`
//! Responses:
//! `{"type":"velocity_batch","id":7,"v":[[...]]}` or
//! `{"type":"error","id":7,"message":"..."}`
//!
//! Floats use the shortest round-trip representation, so
//! `decode(encode(x)) == x` bit-exactly.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{OssError, Result};
use crate::field::VelocityProvider;

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityRequest {
    pub id: u64,
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VelocityResponse {
    Batch { id: u64, v: Vec<Vec<f64>> },
    Error { id: u64, message: String },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type")]
enum RequestWire {
    #[serde(rename = "velocity_batch")]
    VelocityBatch {
        id: u64,
        t: Vec<f64>,
        x: Vec<Vec<f64>>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type")]
enum ResponseWire {
    #[serde(rename = "velocity_batch")]
    VelocityBatch { id: u64, v: Vec<Vec<f64>> },
    #[serde(rename = "error")]
    Error { id: u64, message: String },
}

/// One newline-terminated request line.
pub fn encode_request(r: &VelocityRequest) -> Result<String> {
    if r.t.iter().any(|v| !v.is_finite())
        || r.x.iter().any(|row| row.iter().any(|v| !v.is_finite()))
    {
        return Err(OssError::invalid("request vectors must be finite"));
    }
    let wire = RequestWire::VelocityBatch {
        id: r.id,
        t: r.t.clone(),
        x: r.x.clone(),
    };
    let mut line = serde_json::to_string(&wire).map_err(|e| OssError::internal(e.to_string()))?;
    line.push('\n');
    Ok(line)
}

pub fn decode_request(line: &str) -> Result<VelocityRequest> {
    let wire: RequestWire = serde_json::from_str(line)
        .map_err(|e| OssError::protocol(format!("malformed request: {e}"), line.trim_end()))?;
    let RequestWire::VelocityBatch { id, t, x } = wire;
    if t.len() != x.len() {
        return Err(OssError::protocol(
            format!("request carries {} times but {} states", t.len(), x.len()),
            line.trim_end(),
        ));
    }
    Ok(VelocityRequest { id, t, x })
}

/// One newline-terminated response line.
pub fn encode_response(r: &VelocityResponse) -> Result<String> {
    let wire = match r {
        VelocityResponse::Batch { id, v } => ResponseWire::VelocityBatch {
            id: *id,
            v: v.clone(),
        },
        VelocityResponse::Error { id, message } => ResponseWire::Error {
            id: *id,
            message: message.clone(),
        },
    };
    let mut line = serde_json::to_string(&wire).map_err(|e| OssError::internal(e.to_string()))?;
    line.push('\n');
    Ok(line)
}

pub fn decode_response(line: &str) -> Result<VelocityResponse> {
    let wire: ResponseWire = serde_json::from_str(line)
        .map_err(|e| OssError::protocol(format!("malformed response: {e}"), line.trim_end()))?;
    Ok(match wire {
        ResponseWire::VelocityBatch { id, v } => VelocityResponse::Batch { id, v },
        ResponseWire::Error { id, message } => VelocityResponse::Error { id, message },
    })
}

/// Unwrap a batch response, enforcing id, batch length, and vector dimension.
pub fn expect_batch(
    resp: VelocityResponse,
    expected_id: u64,
    expected_len: usize,
    dim: usize,
    line: &str,
) -> Result<Vec<Vec<f64>>> {
    match resp {
        VelocityResponse::Error { id, message } => Err(OssError::provider(format!(
            "remote provider reported an error for request {id}: {message}"
        ))),
        VelocityResponse::Batch { id, v } => {
            if id != expected_id {
                return Err(OssError::protocol(
                    format!("response id {id} does not match request id {expected_id}"),
                    line.trim_end(),
                ));
            }
            if v.len() != expected_len {
                return Err(OssError::protocol(
                    format!(
                        "response carries {} vectors, expected {expected_len}",
                        v.len()
                    ),
                    line.trim_end(),
                ));
            }
            for (i, row) in v.iter().enumerate() {
                if row.len() != dim {
                    return Err(OssError::protocol(
                        format!(
                            "response vector {i} has dimension {}, expected {dim}",
                            row.len()
                        ),
                        line.trim_end(),
                    ));
                }
            }
            Ok(v)
        }
    }
}

/// Serve a provider over stdio-style streams until EOF. Malformed lines get
/// an error response (id 0 when the id cannot be recovered) and the loop
/// keeps going; evaluation failures are reported per request.
pub fn serve(
    provider: &mut dyn VelocityProvider,
    reader: impl BufRead,
    mut writer: impl Write,
) -> Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match decode_request(&line) {
            Ok(req) => match provider.velocity_batch(&req.x, &req.t) {
                Ok(v) => VelocityResponse::Batch { id: req.id, v },
                Err(e) => VelocityResponse::Error {
                    id: req.id,
                    message: e.to_string(),
                },
            },
            Err(e) => VelocityResponse::Error {
                id: 0,
                message: e.to_string(),
            },
        };
        writer.write_all(encode_response(&reply)?.as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}
