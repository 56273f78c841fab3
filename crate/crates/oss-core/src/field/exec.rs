//! Velocity provider backed by a child process speaking the wire protocol
//! on its standard input/output.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use crate::error::{OssError, Result};
use crate::field::protocol::{decode_response, encode_request, expect_batch, VelocityRequest};
use crate::field::{check_batch_args, VelocityProvider};

/// One connection to an external provider process. One in-flight batch at a
/// time; open additional connections for concurrent callers.
pub struct ExecProvider {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    dim: usize,
    next_id: u64,
    command: String,
}

impl ExecProvider {
    /// Spawn `command` through `sh -c` and attach to its stdio.
    pub fn spawn(command: &str, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(OssError::invalid("exec provider dim must be >= 1"));
        }
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| OssError::provider_caused(format!("failed to spawn {command:?}"), e))?;
        let stdin = child
            .stdin
            .take()
            .ok_or_else(|| OssError::provider("child stdin unavailable"))?;
        let stdout = child
            .stdout
            .take()
            .ok_or_else(|| OssError::provider("child stdout unavailable"))?;
        Ok(ExecProvider {
            child,
            stdin,
            stdout: BufReader::new(stdout),
            dim,
            next_id: 1,
            command: command.to_string(),
        })
    }
}

impl VelocityProvider for ExecProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity_batch(&mut self, states: &[Vec<f64>], times: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_batch_args(self.dim, states, times)?;
        if states.is_empty() {
            return Ok(Vec::new());
        }
        let id = self.next_id;
        self.next_id += 1;
        let req = VelocityRequest {
            id,
            t: times.to_vec(),
            x: states.to_vec(),
        };
        let line = encode_request(&req)?;
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| {
                OssError::provider_caused(format!("writing to provider {:?}", self.command), e)
            })?;

        let mut reply = String::new();
        let n = self.stdout.read_line(&mut reply).map_err(|e| {
            OssError::provider_caused(format!("reading from provider {:?}", self.command), e)
        })?;
        if n == 0 {
            return Err(OssError::provider(format!(
                "provider {:?} closed its stdout before answering request {id}",
                self.command
            )));
        }
        let resp = decode_response(&reply)?;
        expect_batch(resp, id, states.len(), self.dim, &reply)
    }
}

impl Drop for ExecProvider {
    fn drop(&mut self) {
        // Closing stdin lets well-behaved children exit on EOF.
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
