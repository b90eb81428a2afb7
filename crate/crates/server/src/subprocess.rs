//! Out-of-process models. A worker program reads and writes frames on
//! stdio: a 4-byte big-endian length followed by that many bytes of JSON.
//!
//! Requests are `{"op":"describe"}` and `{"op":"execute","inputs":{...}}`.
//! Replies are `{"description":...}`, `{"outputs":...}` or `{"error":"..."}`.
//! Each execution runs in a fresh worker process.

use std::io::{self, Read, Write};
use std::process::Stdio;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::process::Command;

use ump_core::jobs::{ExecutionContext, ExecutionError, ProcessExecutor};
use ump_core::protocol::{Inputs, Outputs, ProcessDescription};

/// Frames larger than this are rejected.
pub const MAX_FRAME: usize = 64 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Describe,
    Execute { inputs: Inputs },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Reply {
    Description(ProcessDescription),
    Outputs(Outputs),
    Error(String),
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub fn write_frame<T: Serialize>(w: &mut impl Write, value: &T) -> io::Result<()> {
    let bytes = serde_json::to_vec(value).map_err(|e| invalid(e.to_string()))?;
    w.write_all(&(bytes.len() as u32).to_be_bytes())?;
    w.write_all(&bytes)?;
    w.flush()
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_frame<T: for<'de> Deserialize<'de>>(r: &mut impl Read) -> io::Result<Option<T>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(invalid(format!("frame of {len} bytes exceeds limit")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    serde_json::from_slice(&buf).map(Some).map_err(|e| invalid(e.to_string()))
}

/// Worker side: answers requests until the input closes.
pub fn serve_stdio(
    mut input: impl Read,
    mut output: impl Write,
    description: &ProcessDescription,
    mut run: impl FnMut(Inputs) -> Result<Outputs, String>,
) -> io::Result<()> {
    while let Some(req) = read_frame::<Request>(&mut input)? {
        let reply = match req {
            Request::Describe => Reply::Description(description.clone()),
            Request::Execute { inputs } => match run(inputs) {
                Ok(outputs) => Reply::Outputs(outputs),
                Err(e) => Reply::Error(e),
            },
        };
        write_frame(&mut output, &reply)?;
    }
    Ok(())
}

/// Runs each execution in a freshly spawned worker.
#[derive(Debug, Clone)]
pub struct SubprocessExecutor {
    command: Vec<String>,
}

impl SubprocessExecutor {
    pub fn new(command: Vec<String>) -> Result<Self, String> {
        if command.is_empty() {
            return Err("worker command is empty".into());
        }
        Ok(Self { command })
    }

    async fn exchange(&self, req: &Request, ctx: Option<&ExecutionContext>) -> Result<Reply, ExecutionError> {
        let failed = |what: &str, e: io::Error| ExecutionError::Failed(format!("worker {}: {what}: {e}", self.command[0]));
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .kill_on_drop(true)
            .spawn()
            .map_err(|e| failed("spawn", e))?;
        let mut frame = Vec::new();
        write_frame(&mut frame, req).map_err(|e| failed("encode", e))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        stdin.write_all(&frame).await.map_err(|e| failed("write", e))?;
        drop(stdin);
        let mut stdout = child.stdout.take().expect("piped stdout");

        let read = async {
            let mut buf = Vec::new();
            stdout.read_to_end(&mut buf).await.map(|_| buf)
        };
        tokio::pin!(read);
        let buf = loop {
            tokio::select! {
                out = &mut read => break out.map_err(|e| failed("read", e))?,
                _ = tokio::time::sleep(Duration::from_millis(20)) => {
                    if ctx.is_some_and(|c| c.is_cancelled()) {
                        let _ = child.kill().await;
                        return Err(ExecutionError::Cancelled);
                    }
                }
            }
        };
        let _ = child.wait().await;
        read_frame::<Reply>(&mut buf.as_slice())
            .map_err(|e| failed("decode", e))?
            .ok_or_else(|| ExecutionError::Failed(format!("worker {} exited without replying", self.command[0])))
    }

    pub async fn describe(&self) -> Result<ProcessDescription, ExecutionError> {
        match self.exchange(&Request::Describe, None).await? {
            Reply::Description(d) => Ok(d),
            Reply::Error(e) => Err(ExecutionError::Failed(e)),
            Reply::Outputs(_) => Err(ExecutionError::Failed("worker answered describe with outputs".into())),
        }
    }
}

#[async_trait]
impl ProcessExecutor for SubprocessExecutor {
    async fn execute(&self, inputs: Inputs, ctx: ExecutionContext) -> Result<Outputs, ExecutionError> {
        match self.exchange(&Request::Execute { inputs }, Some(&ctx)).await? {
            Reply::Outputs(outputs) => Ok(outputs),
            Reply::Error(e) => Err(ExecutionError::Failed(e)),
            Reply::Description(_) => Err(ExecutionError::Failed("worker answered execute with a description".into())),
        }
    }
}
