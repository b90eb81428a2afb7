use std::io::{IsTerminal, Read};
use std::path::Path;
use std::time::Duration;

use serde_json::Value;

use ump_core::jobs::JobState;
use ump_core::protocol::{ExecuteRequest, Inputs};
use ump_server::client::Executed;
use ump_server::ProcessClient;

use crate::args::{AdminArgs, AdminCommand, ClientArgs, ClientCommand, Connection};
use crate::Failure;

fn connect(conn: &Connection) -> Result<ProcessClient, Failure> {
    ProcessClient::new(&conn.url, conn.token.clone(), Some(Duration::from_millis(conn.timeout_ms)))
        .map_err(|e| Failure::Usage(format!("--url: {e}")))
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("value serializes"));
}

/// Prints a raw JSON body unchanged in --json mode, pretty otherwise.
fn print_body(body: &[u8], json: bool) -> Result<(), Failure> {
    if json {
        println!("{}", String::from_utf8_lossy(body));
        return Ok(());
    }
    let value: Value = serde_json::from_slice(body).map_err(|e| Failure::Local(format!("unreadable results: {e}")))?;
    print_json(&value);
    Ok(())
}

/// Accepts either an inputs map or a full execute request.
pub fn parse_request(text: &str) -> Result<ExecuteRequest, String> {
    if text.trim().is_empty() {
        return Ok(ExecuteRequest::default());
    }
    let value: Value = serde_json::from_str(text).map_err(|e| format!("inputs are not JSON: {e}"))?;
    let is_request = value.get("inputs").is_some_and(Value::is_object);
    if is_request {
        serde_json::from_value(value).map_err(|e| format!("bad execute request: {e}"))
    } else {
        let inputs: Inputs = serde_json::from_value(value).map_err(|e| format!("inputs must be a JSON object: {e}"))?;
        Ok(ExecuteRequest::new(inputs))
    }
}

fn read_request(path: Option<&Path>) -> Result<ExecuteRequest, Failure> {
    let mut text = String::new();
    match path {
        Some(p) if p.as_os_str() != "-" => {
            text = std::fs::read_to_string(p).map_err(|e| Failure::Local(format!("{}: {e}", p.display())))?;
        }
        Some(_) => {
            std::io::stdin()
                .read_to_string(&mut text)
                .map_err(|e| Failure::Local(format!("stdin: {e}")))?;
        }
        None if !std::io::stdin().is_terminal() => {
            std::io::stdin()
                .read_to_string(&mut text)
                .map_err(|e| Failure::Local(format!("stdin: {e}")))?;
        }
        None => {}
    }
    parse_request(&text).map_err(Failure::Usage)
}

fn describe_job(job: &ump_core::Job) -> String {
    let mut line = format!("{}  {}  {}  {}%", job.job_id, job.process_id, job.state, job.progress);
    if !job.message.is_empty() {
        line.push_str(&format!("  {}", job.message));
    }
    line
}

pub async fn client(args: ClientArgs, json: bool) -> Result<(), Failure> {
    let c = connect(&args.conn)?;
    match args.command {
        ClientCommand::Processes { limit, offset } => {
            let list = match limit {
                Some(limit) => c.processes(limit, offset).await?,
                None => {
                    let all: Vec<_> = c.all_processes().await?.into_iter().skip(offset).collect();
                    let total = all.len() + offset;
                    ump_core::protocol::ProcessList { processes: all, total }
                }
            };
            if json {
                print_json(&list);
            } else {
                for p in &list.processes {
                    println!("{:<32} {:<8} {}", p.id, p.version, p.title);
                }
            }
        }
        ClientCommand::Describe { process } => {
            let (desc, stale) = c.describe(&process).await?;
            if stale && !json {
                eprintln!("warning: provider unreachable, description may be stale");
            }
            print_json(&desc);
        }
        ClientCommand::Execute {
            process,
            inputs,
            asynchronous,
            wait,
            poll_ms,
        } => {
            let mut req = read_request(inputs.as_deref())?;
            req.prefer_async |= asynchronous;
            match c.execute(&process, &req, 0).await? {
                Executed::Sync { body, .. } => print_body(&body, json)?,
                Executed::Accepted { job, .. } if !wait => {
                    if json {
                        print_json(&job);
                    } else {
                        println!("{}", describe_job(&job));
                    }
                }
                Executed::Accepted { job, .. } => {
                    let id = job.job_id.to_string();
                    let done = c.wait(&id, Duration::from_millis(poll_ms.max(1))).await?;
                    if done.state != JobState::Successful {
                        if json {
                            print_json(&done);
                        }
                        return Err(Failure::RemoteState(format!("job {id} ended {}: {}", done.state, done.message)));
                    }
                    let (body, _) = c.results(&id).await?;
                    print_body(&body, json)?;
                }
            }
        }
        ClientCommand::Status { job } => {
            let job = c.status(&job).await?;
            if json {
                print_json(&job);
            } else {
                println!("{}", describe_job(&job));
            }
        }
        ClientCommand::Results { job } => {
            let (body, _) = c.results(&job).await?;
            print_body(&body, json)?;
        }
        ClientCommand::Jobs { process, state } => {
            let mut query = Vec::new();
            if let Some(p) = &process {
                query.push(("processId", p.as_str()));
            }
            if let Some(s) = &state {
                query.push(("state", s.as_str()));
            }
            let list = c.jobs(&query).await?;
            if json {
                print_json(&list);
            } else {
                for job in &list.jobs {
                    println!("{}", describe_job(job));
                }
            }
        }
        ClientCommand::Dismiss { job } => {
            let job = c.dismiss(&job).await?;
            if json {
                print_json(&job);
            } else {
                println!("{}", describe_job(&job));
            }
        }
    }
    Ok(())
}

pub async fn admin(args: AdminArgs, json: bool) -> Result<(), Failure> {
    let c = connect(&args.conn)?;
    match args.command {
        AdminCommand::Sweep { now } => {
            let outcome = c.sweep(now.as_deref()).await?;
            if json {
                print_json(&outcome);
            } else {
                println!("purged {} result(s) as of {}", outcome["purged"], outcome["now"].as_str().unwrap_or("?"));
            }
        }
        AdminCommand::Usage { subject } => {
            let report = c.usage(subject.as_deref()).await?;
            if json {
                print_json(&report);
            } else {
                println!("{:<24} {:>6} {:>16}", "SUBJECT", "RUNS", "COMPUTE SECONDS");
                for s in &report.subjects {
                    println!("{:<24} {:>6} {:>16.6}", s.subject, s.runs, s.total_compute_seconds);
                }
            }
        }
    }
    Ok(())
}
