//! Test doubles: a minimal HTTP server speaking just enough of the
//! Bitcoin Core JSON-RPC surface (getblockcount / getblockhash / getblock)
//! and the historical-rates endpoint shape to exercise the clients.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;

use chainview::model::{serialize_block, Block};

pub struct StubServer {
    pub url: String,
}

pub struct StubConfig {
    /// Canned chain served over RPC, height order.
    pub blocks: Vec<Block>,
    /// Expected value of the Authorization header, e.g. "Basic dXNlcjpwdw==".
    pub auth: Option<String>,
    /// date -> rate served under /rates.
    pub rates: HashMap<String, f64>,
}

impl StubServer {
    /// Spawn a server thread; it lives for the rest of the test process.
    pub fn spawn(config: StubConfig) -> StubServer {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub server");
        let addr = listener.local_addr().unwrap();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let _ = handle(stream, &config);
            }
        });
        StubServer {
            url: format!("http://{addr}"),
        }
    }

    pub fn rates_url(&self) -> String {
        format!("{}/rates", self.url)
    }
}

struct Request {
    method: String,
    path: String,
    authorization: Option<String>,
    body: Vec<u8>,
}

fn read_request(stream: &mut TcpStream) -> std::io::Result<Request> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();

    let mut content_length = 0usize;
    let mut authorization = None;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            match name.to_ascii_lowercase().as_str() {
                "content-length" => content_length = value.trim().parse().unwrap_or(0),
                "authorization" => authorization = Some(value.trim().to_string()),
                _ => {}
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    Ok(Request {
        method,
        path,
        authorization,
        body,
    })
}

fn respond(stream: &mut TcpStream, status: &str, body: &str) -> std::io::Result<()> {
    write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    stream.flush()
}

fn handle(mut stream: TcpStream, config: &StubConfig) -> std::io::Result<()> {
    let request = read_request(&mut stream)?;

    if let Some(expected) = &config.auth {
        if request.authorization.as_deref() != Some(expected.as_str()) {
            return respond(&mut stream, "401 Unauthorized", "");
        }
    }

    if request.method == "GET" && request.path.starts_with("/rates") {
        return handle_rates(&mut stream, &request, config);
    }
    if request.method == "POST" {
        return handle_rpc(&mut stream, &request, config);
    }
    respond(&mut stream, "404 Not Found", "")
}

fn handle_rates(stream: &mut TcpStream, request: &Request, config: &StubConfig) -> std::io::Result<()> {
    // /rates?start=YYYY-MM-DD&end=YYYY-MM-DD
    let query = request.path.split_once('?').map(|(_, q)| q).unwrap_or("");
    let mut start = None;
    let mut end = None;
    for pair in query.split('&') {
        match pair.split_once('=') {
            Some(("start", v)) => start = Some(v.to_string()),
            Some(("end", v)) => end = Some(v.to_string()),
            _ => {}
        }
    }
    let mut bpi = serde_json::Map::new();
    if let (Some(start), Some(end)) = (start, end) {
        let mut dates: Vec<&String> = config
            .rates
            .keys()
            .filter(|d| **d >= start && **d <= end)
            .collect();
        dates.sort();
        for date in dates {
            bpi.insert(
                date.clone(),
                serde_json::Value::from(config.rates[date]),
            );
        }
    }
    let body = serde_json::json!({ "bpi": bpi }).to_string();
    respond(stream, "200 OK", &body)
}

fn handle_rpc(stream: &mut TcpStream, request: &Request, config: &StubConfig) -> std::io::Result<()> {
    let parsed: serde_json::Value = match serde_json::from_slice(&request.body) {
        Ok(v) => v,
        Err(_) => return respond(stream, "400 Bad Request", ""),
    };
    let method = parsed.get("method").and_then(|m| m.as_str()).unwrap_or("");
    let params = parsed.get("params").cloned().unwrap_or(serde_json::json!([]));
    let id = parsed.get("id").cloned().unwrap_or(serde_json::Value::Null);

    let reply = |result: serde_json::Value| {
        serde_json::json!({ "result": result, "error": null, "id": id }).to_string()
    };
    let reply_error = |code: i64, message: &str| {
        serde_json::json!({
            "result": null,
            "error": { "code": code, "message": message },
            "id": parsed.get("id").cloned().unwrap_or(serde_json::Value::Null),
        })
        .to_string()
    };

    match method {
        "getblockcount" => respond(
            stream,
            "200 OK",
            &reply(serde_json::Value::from(config.blocks.len() as u64 - 1)),
        ),
        "getblockhash" => {
            let height = params
                .get(0)
                .and_then(|v| v.as_u64())
                .unwrap_or(u64::MAX);
            match config.blocks.get(height as usize) {
                Some(block) => respond(
                    stream,
                    "200 OK",
                    &reply(serde_json::Value::from(block.hash.to_hex())),
                ),
                None => respond(
                    stream,
                    "500 Internal Server Error",
                    &reply_error(-8, "Block height out of range"),
                ),
            }
        }
        "getblock" => {
            let hash = params.get(0).and_then(|v| v.as_str()).unwrap_or("");
            match config.blocks.iter().find(|b| b.hash.to_hex() == hash) {
                Some(block) => respond(
                    stream,
                    "200 OK",
                    &reply(serde_json::Value::from(hex::encode(serialize_block(block)))),
                ),
                None => respond(
                    stream,
                    "500 Internal Server Error",
                    &reply_error(-5, "Block not found"),
                ),
            }
        }
        _ => respond(
            stream,
            "500 Internal Server Error",
            &reply_error(-32601, "Method not found"),
        ),
    }
}
