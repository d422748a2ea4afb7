use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;

use prompt_logic::backend::BackendMode;
use prompt_logic::formalizer::{split_request_prompts, FewShotExemplar};
use prompt_logic::report::{run_pipeline, RunConfig};

/// Formalizes each prompt `needN a b c` as `Ca ∧ Cb ∧ Cc`.
fn echo_reply(user_text: &str) -> String {
    let prompts = split_request_prompts(&FewShotExemplar::default(), user_text).expect("formalization request");
    let mut out = String::new();
    for (i, p) in prompts.iter().enumerate() {
        let k = i + 1;
        let atoms: Vec<&str> = p.split_whitespace().skip(1).collect();
        out.push_str(&format!("Formalization of P{k}\n"));
        for a in &atoms {
            out.push_str(&format!("C{a}: requirement {a}.\n"));
        }
        let conj: Vec<String> = atoms.iter().map(|a| format!("C{a}")).collect();
        out.push_str(&format!("We can formalize P{k} as: P{k} → ({})\n", conj.join(" ∧ ")));
    }
    out
}

fn serve_echo() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                }
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).unwrap();
                let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
                let reply = echo_reply(req["messages"][1]["content"].as_str().unwrap());
                let payload = serde_json::json!({"choices": [{"message": {"content": reply}}]}).to_string();
                let _ = write!(
                    stream,
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                    payload.len()
                );
            });
        }
    });
    url
}

fn write_sessions(path: &Path) {
    let sessions: [(&str, &str, &str, &[&str], &str); 6] = [
        ("a1", "u1", "1", &["1 2", "1 2 3", "1 2 4"], "success"),
        ("a2", "u2", "1", &["1", "1 5", "1 5", "2 6 7"], "failure"),
        ("a3", "u3", "1", &["3 4", "3 4 5"], "success"),
        ("b1", "u1", "2", &["1 2 3", "1 2", "1 8"], "failure"),
        ("b2", "u2", "2", &["4", "4 5", "4 5 6", "4 5 9"], "success"),
        ("b3", "u3", "2", &["2 3", "2 3 4"], "success"),
    ];
    let mut out = String::new();
    for (sid, user, task, prompts, outcome) in sessions {
        for (i, atoms) in prompts.iter().enumerate() {
            let mut rec = serde_json::json!({
                "session_id": sid, "user_id": user, "task_id": task,
                "index": i + 1, "text": format!("need{i} {atoms}"),
            });
            if i + 1 == prompts.len() {
                rec["outcome"] = outcome.into();
            }
            out.push_str(&rec.to_string());
            out.push('\n');
        }
    }
    std::fs::write(path, out).unwrap();
}

fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn recorded_run_replays_identically() {
    let work = tempfile::tempdir().unwrap();
    let sessions = work.path().join("sessions.jsonl");
    write_sessions(&sessions);
    let config_path = work.path().join("config.json");
    let url = serve_echo();
    std::fs::write(&config_path, serde_json::json!({"base_url": url, "api_key": "stub", "concurrency": 2}).to_string())
        .unwrap();
    let fixtures = work.path().join("recorded");

    let live_out = work.path().join("live");
    let mut record = RunConfig::new(&sessions, &live_out);
    record.mode = BackendMode::Record;
    record.config_path = Some(config_path);
    record.fixture_dir = Some(fixtures.clone());
    let recorded = run_pipeline(&record).unwrap();
    assert_eq!(recorded.manifest.network_calls, 6);
    assert_eq!(recorded.manifest.counts.transitions, 12);

    let replay_out = work.path().join("replay");
    let mut replay = RunConfig::new(&sessions, &replay_out);
    replay.fixture_dir = Some(fixtures);
    let replayed = run_pipeline(&replay).unwrap();
    assert_eq!(replayed.manifest.network_calls, 0);

    let (mut a, mut b) = (artifacts(&live_out), artifacts(&replay_out));
    a.remove("manifest.json");
    b.remove("manifest.json");
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (name, bytes) in &a {
        assert!(bytes == &b[name], "{name} differs between record and replay");
    }
    assert_eq!(recorded.manifest.counts, replayed.manifest.counts);
}
