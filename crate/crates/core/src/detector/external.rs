//! Child-process backend speaking line-delimited JSON over stdin/stdout.
//! The wire format is documented in `docs/protocol.md`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{DetectError, DetectRequest, DetectorBackend};
use crate::geometry::{BBox, Detection};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireRegion {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub frame_idx: u64,
    pub region: WireRegion,
    pub input_size: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WireResponse {
    #[serde(default)]
    pub detections: Vec<WireBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl From<&DetectRequest> for WireRequest {
    fn from(r: &DetectRequest) -> Self {
        WireRequest {
            frame_idx: r.frame_idx,
            region: WireRegion {
                x: r.region.x,
                y: r.region.y,
                w: r.region.w,
                h: r.region.h,
            },
            input_size: r.input_size,
        }
    }
}

impl WireResponse {
    /// Converts to detections, rejecting invalid boxes or confidences.
    pub fn into_detections(self, frame_idx: u64) -> Result<Vec<Detection>, DetectError> {
        if let Some(e) = self.error {
            return Err(DetectError::new(frame_idx, e));
        }
        self.detections
            .into_iter()
            .map(|b| {
                let d = Detection::new(BBox::new(b.x, b.y, b.w, b.h), b.confidence);
                if d.is_valid() {
                    Ok(d)
                } else {
                    Err(DetectError::new(frame_idx, format!("invalid detection {b:?}")))
                }
            })
            .collect()
    }
}

struct Pipe {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Runs a detector program as a child process. Requests are serialised, so
/// concurrent callers queue on the pipe.
pub struct ExternalDetector {
    pipe: Mutex<Pipe>,
}

impl ExternalDetector {
    /// Starts `command` through `sh -c`.
    pub fn spawn(command: &str) -> std::io::Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child
            .stdin
            .take()
            .ok_or_else(|| std::io::Error::other("child stdin unavailable"))?;
        let stdout = child
            .stdout
            .take()
            .ok_or_else(|| std::io::Error::other("child stdout unavailable"))?;
        Ok(Self {
            pipe: Mutex::new(Pipe {
                child,
                stdin,
                stdout: BufReader::new(stdout),
            }),
        })
    }
}

impl DetectorBackend for ExternalDetector {
    fn detect(&self, request: &DetectRequest) -> Result<Vec<Detection>, DetectError> {
        let frame = request.frame_idx;
        let fail = |e: &dyn std::fmt::Display| DetectError::new(frame, e.to_string());
        let mut line = serde_json::to_string(&WireRequest::from(request)).map_err(|e| fail(&e))?;
        line.push('\n');

        let mut pipe = self
            .pipe
            .lock()
            .map_err(|_| DetectError::new(frame, "detector pipe poisoned"))?;
        pipe.stdin.write_all(line.as_bytes()).map_err(|e| fail(&e))?;
        pipe.stdin.flush().map_err(|e| fail(&e))?;
        let mut reply = String::new();
        let n = pipe.stdout.read_line(&mut reply).map_err(|e| fail(&e))?;
        if n == 0 {
            return Err(DetectError::new(frame, "detector process closed its output"));
        }
        let response: WireResponse = serde_json::from_str(reply.trim_end()).map_err(|e| fail(&e))?;
        response.into_detections(frame)
    }
}

impl Drop for ExternalDetector {
    fn drop(&mut self) {
        if let Ok(pipe) = self.pipe.get_mut() {
            let _ = pipe.child.kill();
            let _ = pipe.child.wait();
        }
    }
}
