//! The HTTP client against an in-test service that wraps the in-process
//! mock, so both sides of the wire protocol are exercised.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use ecot_core::annotators::{
    endpoints, Annotator, AnnotatorError, CorrectRequest, CorrectResponse, DescribeRequest, DetectRequest,
    ErrorBody, FixtureSet, GripperRequest, HttpBackend, HttpConfig, MockBackend, PlanAnnotation, PlanRequest,
};
use ecot_core::chain::{parse, serialize};
use ecot_core::data::write_dataset;
use ecot_core::intervention::{correct, RemoteCorrector, RuleCorrector};
use ecot_core::pipeline::{run, BackendMode, PipelineConfig};
use ecot_core::synth::{generate, SynthConfig};
use serde::de::DeserializeOwned;
use serde::Serialize;
use tiny_http::{Header, Response, Server};

#[derive(Default)]
struct Faults {
    /// Answer this many requests with 503 before serving.
    unavailable: AtomicUsize,
    /// Answer this many plan requests with a plan missing a step.
    short_plans: AtomicUsize,
}

struct Service {
    url: String,
    faults: Arc<Faults>,
    served: Arc<AtomicUsize>,
}

fn take(counter: &AtomicUsize) -> bool {
    counter.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1)).is_ok()
}

fn reply<T: Serialize>(status: u16, body: &T) -> Response<std::io::Cursor<Vec<u8>>> {
    let header = Header::from_bytes("Content-Type", "application/json").unwrap();
    Response::from_data(serde_json::to_vec(body).unwrap()).with_status_code(status).with_header(header)
}

fn handle<Req: DeserializeOwned, Resp: Serialize>(
    body: &str,
    f: impl FnOnce(Req) -> Result<Resp, AnnotatorError>,
) -> Response<std::io::Cursor<Vec<u8>>> {
    let req: Req = match serde_json::from_str(body) {
        Ok(r) => r,
        Err(e) => {
            return reply(400, &ErrorBody { error: "bad_request".into(), detail: e.to_string() });
        }
    };
    match f(req) {
        Ok(resp) => reply(200, &resp),
        Err(e) => {
            let (status, body) = e.to_wire();
            reply(status, &body)
        }
    }
}

fn serve(fixtures: FixtureSet) -> Service {
    let server = Arc::new(Server::http("127.0.0.1:0").unwrap());
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let mock = Arc::new(MockBackend::new(fixtures));
    let faults = Arc::new(Faults::default());
    let served = Arc::new(AtomicUsize::new(0));
    for _ in 0..4 {
        let (server, mock, faults, served) = (server.clone(), mock.clone(), faults.clone(), served.clone());
        std::thread::spawn(move || {
            for mut request in server.incoming_requests() {
                served.fetch_add(1, Ordering::SeqCst);
                let mut body = String::new();
                let _ = request.as_reader().read_to_string(&mut body);
                let response = if take(&faults.unavailable) {
                    reply(503, &ErrorBody { error: "unavailable".into(), detail: "warming up".into() })
                } else {
                    match request.url() {
                        endpoints::HEALTH => reply(200, &serde_json::json!({"status": "ok"})),
                        endpoints::DESCRIBE => handle(&body, |r: DescribeRequest| mock.describe(&r)),
                        endpoints::DETECT => handle(&body, |r: DetectRequest| mock.detect(&r)),
                        endpoints::GRIPPER => handle(&body, |r: GripperRequest| mock.detect_gripper(&r)),
                        endpoints::PLAN => handle(&body, |r: PlanRequest| {
                            let mut plan = mock.plan(&r)?;
                            if take(&faults.short_plans) {
                                plan.per_step.pop();
                            }
                            Ok(plan)
                        }),
                        endpoints::CORRECT => handle(&body, |r: CorrectRequest| {
                            let chain = parse(&r.chain).map_err(|e| AnnotatorError::Protocol(e.to_string()))?;
                            let (fixed, _) = correct(&chain, &r.feedback, &RuleCorrector)
                                .map_err(|e| AnnotatorError::Protocol(e.to_string()))?;
                            Ok(CorrectResponse { chain: serialize(&fixed) })
                        }),
                        _ => reply(404, &ErrorBody { error: "not_found".into(), detail: request.url().into() }),
                    }
                };
                let _ = request.respond(response);
            }
        });
    }
    Service { url, faults, served }
}

fn client(url: &str) -> HttpBackend {
    HttpBackend::new(HttpConfig { url: url.into(), backoff_ms: 1, ..HttpConfig::default() })
}

fn plan_request(moves: &[&str]) -> PlanRequest {
    PlanRequest {
        instruction: "put the red cup on the white plate".into(),
        caption: "a red cup and a white plate are on the wooden table.".into(),
        moves: moves.iter().map(|m| m.to_string()).collect(),
        steps: moves.len(),
        seed: 3,
    }
}

#[test]
fn http_answers_equal_in_process_answers() {
    let corpus = generate(&SynthConfig { trajectories: 2, ..Default::default() });
    let service = serve(corpus.fixtures.clone());
    let http = client(&service.url);
    let local = MockBackend::new(corpus.fixtures);
    http.health().unwrap();

    for step in corpus.trajectories[0].steps.iter().take(6) {
        let d = DescribeRequest::new(step.image_ref.clone(), Some("put the red cup on the plate"), 7);
        assert_eq!(http.describe(&d).unwrap(), local.describe(&d).unwrap());
        let caption = local.describe(&d).unwrap().caption;
        let r = DetectRequest { image_ref: step.image_ref.clone(), text: caption, seed: 7 };
        assert_eq!(http.detect(&r).unwrap(), local.detect(&r).unwrap());
        let g = GripperRequest { image_ref: step.image_ref.clone(), seed: 7 };
        assert_eq!(http.detect_gripper(&g).unwrap(), local.detect_gripper(&g).unwrap());
    }
    let p = plan_request(&["move forward", "move down", "close gripper", "move up", "open gripper"]);
    let remote: PlanAnnotation = http.plan(&p).unwrap();
    assert_eq!(remote, local.plan(&p).unwrap());
}

#[test]
fn unavailable_service_is_retried() {
    let service = serve(FixtureSet::default());
    service.faults.unavailable.store(2, Ordering::SeqCst);
    let http = client(&service.url);
    let req = DescribeRequest::new("a.png", None, 0);
    http.describe(&req).unwrap();
    assert_eq!(service.served.load(Ordering::SeqCst), 3);

    service.faults.unavailable.store(3, Ordering::SeqCst);
    match http.describe(&req) {
        Err(AnnotatorError::BackendUnavailable(m)) => assert!(m.contains("3 attempts"), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn refusals_carry_the_error_code() {
    let service = serve(FixtureSet::default());
    let http = client(&service.url);
    let mut bad = plan_request(&["move up", "stop"]);
    bad.steps = 3;
    match http.plan(&bad) {
        Err(AnnotatorError::BackendRefusal { status, error, .. }) => {
            assert_eq!((status, error.as_str()), (422, "length_mismatch"));
        }
        other => panic!("{other:?}"),
    }
    // refusals are not retried
    assert_eq!(service.served.load(Ordering::SeqCst), 1);

    let invalid = plan_request(&["move sideways"]);
    assert!(matches!(
        http.plan(&invalid),
        Err(AnnotatorError::BackendRefusal { status: 422, ref error, .. }) if error == "invalid_move"
    ));
}

#[test]
fn malformed_plans_are_requested_again() {
    let service = serve(FixtureSet::default());
    let http = client(&service.url);
    let req = plan_request(&["move up", "move up", "stop"]);
    service.faults.short_plans.store(1, Ordering::SeqCst);
    assert_eq!(http.plan(&req).unwrap().per_step.len(), 3);
    service.faults.short_plans.store(5, Ordering::SeqCst);
    assert!(matches!(http.plan(&req), Err(AnnotatorError::MalformedPlan(_))));
}

#[test]
fn remote_corrector_round_trip() {
    let service = serve(FixtureSet::default());
    let chain = parse(
        "TASK: wipe the table PLAN: 1. wipe SUBTASK REASONING: dirty SUBTASK: wipe MOVE REASONING: go MOVE: move left \
         GRIPPER POSITION: [[1, 2]] VISIBLE OBJECTS: sponge [1, 2, 3, 4]",
    )
    .unwrap();
    let remote = RemoteCorrector { backend: client(&service.url), seed: 0 };
    let (fixed, horizon) = correct(&chain, "stop", &remote).unwrap();
    assert_eq!(horizon, 5);
    assert!(fixed.movement.is_stop());
    assert_eq!(fixed.task, chain.task);
}

#[test]
fn pipeline_output_is_the_same_over_http() {
    let corpus = generate(&SynthConfig { trajectories: 4, ..Default::default() });
    let service = serve(corpus.fixtures.clone());
    let dir = tempfile::tempdir().unwrap();
    let dataset = dir.path().join("d.jsonl");
    write_dataset(&corpus.trajectories, &dataset).unwrap();
    let fixtures = dir.path().join("f.json");
    corpus.fixtures.save(&fixtures).unwrap();

    let local = PipelineConfig {
        dataset: dataset.clone(),
        output: dir.path().join("local.jsonl"),
        fixtures: Some(fixtures),
        ..Default::default()
    };
    let remote = PipelineConfig {
        backend: BackendMode::Bridge,
        bridge_url: service.url.clone(),
        output: dir.path().join("remote.jsonl"),
        parallelism: 3,
        ..local.clone()
    };
    let a = run(&local).unwrap();
    let b = run(&remote).unwrap();
    assert_eq!(a.annotated, b.annotated);
    assert_eq!(std::fs::read(&local.output).unwrap(), std::fs::read(&remote.output).unwrap());
}
