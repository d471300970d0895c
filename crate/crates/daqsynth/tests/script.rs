use daqsynth::script::{load_script, record_wrap};
use daqsynth_core::llm::{
    parse_script, ChatBackend, ChatMessage, ChatRequest, ChatResponse, LlmError, ModelConfig, ScriptedBackend,
};
use daqsynth_core::testbench::sha256_hex;

fn request(text: &str) -> ChatRequest {
    ChatRequest::new(&ModelConfig::designer(), &[ChatMessage::user(text)])
}

#[test]
fn recorded_script_replays_the_same_responses() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("script.jsonl");
    let mut recorder = record_wrap(ScriptedBackend::from_responses(["first", "second\nline"]), &path).unwrap();
    let a = recorder.send(&request("one")).unwrap();
    let b = recorder.send(&request("two")).unwrap();
    assert_eq!(recorder.recorded(), 2);

    let entries = parse_script(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(entries.len(), 2);
    assert_eq!(entries[0].request_digest.as_deref(), Some(sha256_hex(request("one").to_json().as_bytes()).as_str()));

    let mut replay = load_script(&path).unwrap();
    assert_eq!(replay.send(&request("x")).unwrap(), a);
    assert_eq!(replay.send(&request("y")).unwrap(), b);
    assert!(matches!(replay.send(&request("z")), Err(LlmError::ScriptUnderrun { served: 2 })));
}

struct Failing;

impl ChatBackend for Failing {
    fn send(&mut self, _: &ChatRequest) -> Result<ChatResponse, LlmError> {
        Err(LlmError::Transport {
            status: Some(500),
            message: String::from("down"),
        })
    }
}

#[test]
fn failed_calls_are_not_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("script.jsonl");
    let mut recorder = record_wrap(Failing, &path).unwrap();
    assert!(recorder.send(&request("one")).is_err());
    assert_eq!(recorder.recorded(), 0);
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "");
}

#[test]
fn empty_script_underruns_on_first_call() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.jsonl");
    std::fs::write(&path, "").unwrap();
    let mut backend = load_script(&path).unwrap();
    assert!(matches!(backend.send(&request("x")), Err(LlmError::ScriptUnderrun { served: 0 })));
}

#[test]
fn malformed_script_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(&path, "{\"response\":\"a\"}\n{\"response\":\n").unwrap();
    assert!(matches!(load_script(&path), Err(LlmError::ScriptParse { line: 2, .. })));
}

#[test]
fn missing_script_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_script(&dir.path().join("nope.jsonl")), Err(LlmError::Io(_))));
}
