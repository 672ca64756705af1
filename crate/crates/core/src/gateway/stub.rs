//! Reference decision server for tests and offline demos.
//!
//! In reference mode it answers with the admissible candidate of lowest
//! predicted time.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use tiny_http::{Header, Request, Response, Server};

use super::{BackendVerdict, DecisionPrompt};

#[derive(Debug, Clone)]
pub enum StubMode {
    Reference,
    /// Sleep before answering like `Reference`.
    Delay(Duration),
    /// Always answer with this status and body.
    Fixed {
        status: u16,
        body: Vec<u8>,
    },
}

pub fn reference_verdict(prompt: &DecisionPrompt) -> Option<BackendVerdict> {
    let best = prompt
        .manifest
        .iter()
        .filter(|m| prompt.constraints.admits(&m.edges))
        .min_by(|a, b| a.predicted_time_s.total_cmp(&b.predicted_time_s))?;
    Some(BackendVerdict {
        chosen_candidate_id: best.id.clone(),
        rationale: format!(
            "{} is the admissible alternative with the lowest predicted travel time.",
            best.id
        ),
    })
}

fn json_header() -> Header {
    Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).unwrap()
}

fn respond(mut request: Request, mode: &StubMode) {
    let (status, body) = match mode {
        StubMode::Fixed { status, body } => (*status, body.clone()),
        StubMode::Reference | StubMode::Delay(_) => {
            if let StubMode::Delay(d) = mode {
                std::thread::sleep(*d);
            }
            let mut raw = Vec::new();
            let parsed = request
                .as_reader()
                .read_to_end(&mut raw)
                .ok()
                .and_then(|_| serde_json::from_slice::<DecisionPrompt>(&raw).ok());
            match parsed.as_ref().map(reference_verdict) {
                Some(Some(v)) => (200, serde_json::to_vec(&v).unwrap()),
                Some(None) => (422, br#"{"error":"no admissible candidate"}"#.to_vec()),
                None => (400, br#"{"error":"invalid request"}"#.to_vec()),
            }
        }
    };
    let response = Response::from_data(body)
        .with_status_code(status)
        .with_header(json_header());
    let _ = request.respond(response);
}

/// Stub server on a background thread; stops when dropped.
pub struct StubServer {
    server: Arc<Server>,
    addr: String,
    served: Arc<AtomicUsize>,
    worker: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Bind to an ephemeral localhost port.
    pub fn start(mode: StubMode) -> std::io::Result<Self> {
        Self::bind("127.0.0.1:0", mode)
    }

    pub fn bind(addr: &str, mode: StubMode) -> std::io::Result<Self> {
        let server = Arc::new(Server::http(addr).map_err(std::io::Error::other)?);
        let addr = server
            .server_addr()
            .to_ip()
            .map(|a| a.to_string())
            .ok_or_else(|| std::io::Error::other("stub server has no IP address"))?;
        let served = Arc::new(AtomicUsize::new(0));
        let worker = {
            let server = Arc::clone(&server);
            let served = Arc::clone(&served);
            std::thread::spawn(move || {
                for request in server.incoming_requests() {
                    served.fetch_add(1, Ordering::SeqCst);
                    let mode = mode.clone();
                    std::thread::spawn(move || respond(request, &mode));
                }
            })
        };
        Ok(StubServer {
            server,
            addr,
            served,
            worker: Some(worker),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}/decide", self.addr)
    }

    pub fn requests_served(&self) -> usize {
        self.served.load(Ordering::SeqCst)
    }

    /// Block until the server thread exits.
    pub fn join(mut self) {
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}
