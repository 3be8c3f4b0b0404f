//! In-process HTTP server speaking the backend protocol with the procedural
//! mock behind it. Used by `synthset serve-mock` and the HTTP client tests.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use tiny_http::{Header, Method, Response, Server};

use super::mock::{FaultProfile, MockBackend, MOCK_MODEL};
use super::wire::{
    self, DetectBody, DetectResponse, ErrorResponse, ImageResponse, WireDetection, WireRequest,
};
use super::{synthesize, SynthRequest};
use crate::error::{Error, Result};
use crate::quality::{detect, BlobDetector, DetectionBackend, OracleDetector};

#[derive(Debug, Default)]
pub struct ServerState {
    pub fault: FaultProfile,
    /// Answer this many requests with 503 before serving normally.
    pub fail_first: AtomicUsize,
    pub served: AtomicUsize,
}

pub struct MockServer {
    server: Arc<Server>,
    addr: SocketAddr,
    pub state: Arc<ServerState>,
    thread: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(bind: &str, fault: FaultProfile) -> Result<MockServer> {
        Self::start_with(
            bind,
            ServerState {
                fault,
                ..Default::default()
            },
        )
    }

    pub fn start_with(bind: &str, state: ServerState) -> Result<MockServer> {
        let server =
            Server::http(bind).map_err(|e| Error::Config(format!("cannot bind {bind}: {e}")))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::Config("server has no IP address".into()))?;
        let server = Arc::new(server);
        let state = Arc::new(state);
        let thread = {
            let server = Arc::clone(&server);
            let state = Arc::clone(&state);
            std::thread::spawn(move || {
                for request in server.incoming_requests() {
                    handle(request, &state);
                }
            })
        };
        Ok(MockServer {
            server,
            addr,
            state,
            thread: Some(thread),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Serve until the process exits.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn json_response(status: u16, body: String) -> Response<std::io::Cursor<Vec<u8>>> {
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    Response::from_string(body)
        .with_status_code(status)
        .with_header(header)
}

fn handle(mut request: tiny_http::Request, state: &ServerState) {
    let mut body = String::new();
    let (status, text) = if request.as_reader().read_to_string(&mut body).is_err() {
        (400, error_body("body is not UTF-8"))
    } else if state
        .fail_first
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok()
    {
        (503, error_body("injected failure"))
    } else if *request.method() != Method::Post {
        (405, error_body("only POST is supported"))
    } else {
        match route(request.url(), &body, state) {
            Ok(text) => (200, text),
            Err(e @ (Error::Protocol(_) | Error::Request(_) | Error::Input(_))) => {
                (400, error_body(&e.to_string()))
            }
            Err(e) => (500, error_body(&e.to_string())),
        }
    };
    state.served.fetch_add(1, Ordering::SeqCst);
    let _ = request.respond(json_response(status, text));
}

fn error_body(msg: &str) -> String {
    serde_json::to_string(&ErrorResponse {
        error: msg.to_string(),
    })
    .expect("plain data")
}

fn route(path: &str, body: &str, state: &ServerState) -> Result<String> {
    match path {
        wire::TXT2IMG_PATH | wire::IMG2IMG_PATH => {
            let wire_req = WireRequest::parse(path, body)?;
            let req = SynthRequest::from_wire(&wire_req, None)?;
            let backend = MockBackend::new(state.fault);
            let (image, _) = synthesize(&backend, &req)?;
            Ok(serde_json::to_string(&ImageResponse {
                image: wire::image_to_b64(&image)?,
                model: MOCK_MODEL.to_string(),
            })?)
        }
        wire::DETECT_PATH => {
            let req: DetectBody = serde_json::from_str(body)
                .map_err(|e| Error::Protocol(format!("bad detect body: {e}")))?;
            let image = wire::image_from_b64(&req.image)?;
            let detector: &dyn DetectionBackend =
                if image.metadata.contains_key(super::mock::GT_KEY) {
                    &OracleDetector
                } else {
                    &BlobDetector::default()
                };
            let detections = detect(detector, &image)?;
            Ok(serde_json::to_string(&DetectResponse {
                detections: detections.iter().map(WireDetection::from).collect(),
            })?)
        }
        other => Err(Error::Request(format!("no such endpoint {other}"))),
    }
}
