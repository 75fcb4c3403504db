#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

#[derive(Debug, Clone)]
pub struct SeenRequest {
    pub path: String,
    pub user_id: String,
    pub authorization: Option<String>,
}

pub struct Reply {
    pub status: u16,
    pub body: String,
    pub retry_after: Option<u64>,
}

impl Reply {
    pub fn ok(body: &str) -> Self {
        Reply {
            status: 200,
            body: body.into(),
            retry_after: None,
        }
    }

    pub fn status(status: u16) -> Self {
        Reply {
            status,
            body: String::new(),
            retry_after: None,
        }
    }
}

/// A one-connection-per-request HTTP/1.1 server on a loopback port.
pub struct MockService {
    pub url: String,
    pub seen: Arc<Mutex<Vec<SeenRequest>>>,
}

impl MockService {
    pub fn start<F>(handler: F) -> Self
    where
        F: Fn(&SeenRequest, usize) -> Reply + Send + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/score", listener.local_addr().unwrap());
        let seen: Arc<Mutex<Vec<SeenRequest>>> = Arc::default();
        let log = Arc::clone(&seen);
        thread::spawn(move || {
            let mut per_user: BTreeMap<String, usize> = BTreeMap::new();
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut line = String::new();
                if reader.read_line(&mut line).is_err() {
                    continue;
                }
                let target = line.split_whitespace().nth(1).unwrap_or("").to_string();
                let mut authorization = None;
                loop {
                    let mut h = String::new();
                    if reader.read_line(&mut h).unwrap_or(0) == 0 || h.trim().is_empty() {
                        break;
                    }
                    if let Some((k, v)) = h.split_once(':') {
                        if k.eq_ignore_ascii_case("authorization") {
                            authorization = Some(v.trim().to_string());
                        }
                    }
                }
                let (path, query) = target.split_once('?').unwrap_or((&target, ""));
                let user_id = query
                    .split('&')
                    .find_map(|kv| kv.strip_prefix("user_id="))
                    .unwrap_or("")
                    .to_string();
                let req = SeenRequest {
                    path: path.to_string(),
                    user_id: user_id.clone(),
                    authorization,
                };
                let n = per_user.entry(user_id).or_default();
                let reply = handler(&req, *n);
                *n += 1;
                log.lock().unwrap().push(req);
                let mut head = format!(
                    "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
                    reply.status,
                    reply.body.len()
                );
                if let Some(s) = reply.retry_after {
                    head.push_str(&format!("Retry-After: {s}\r\n"));
                }
                head.push_str("\r\n");
                let _ = stream.write_all(head.as_bytes());
                let _ = stream.write_all(reply.body.as_bytes());
            }
        });
        MockService { url, seen }
    }

    pub fn requests(&self) -> Vec<SeenRequest> {
        self.seen.lock().unwrap().clone()
    }
}
