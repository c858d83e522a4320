mod common;

use std::io::Write;

use common::*;
use modpipe_core::log::{decode_line, encode_line, read_log, DecisionLog, LogError};
use modpipe_core::pipeline::{ModerationConfig, ModerationDecision};

fn decisions(n: usize) -> Vec<ModerationDecision> {
    let e = engine(
        ModerationConfig::default(),
        store(&[]),
        Some(pool(0.9, 1.0)),
    );
    (0..n)
        .map(|i| {
            let item = with_tags(scene(&format!("d{i}"), i as u64), &["sports"], 5);
            e.moderate(&item, real(), NOW).unwrap().decision
        })
        .collect()
}

#[test]
fn line_round_trip() {
    let d = &decisions(1)[0];
    let line = encode_line(7, d);
    assert!(line.ends_with('\n'));
    let (seq, back) = decode_line(line.trim_end()).unwrap();
    assert_eq!(seq, 7);
    assert_eq!(&back, d);
    let tampered = line.trim_end().replacen("TRUSTWORTHY", "UNTRUSTWORTHY", 1);
    assert_eq!(decode_line(&tampered).unwrap_err(), "checksum mismatch");
}

#[test]
fn file_log_reopens_with_same_content() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("decisions.jsonl");
    let ds = decisions(5);
    {
        let (mut log, rec) = DecisionLog::open(&path).unwrap();
        assert_eq!(rec.records, 0);
        for d in &ds {
            log.append(d.clone()).unwrap();
        }
        assert_eq!(std::fs::read(&path).unwrap(), log.to_bytes());
    }
    let (log, rec) = DecisionLog::open(&path).unwrap();
    assert_eq!((rec.records, rec.discarded_bytes), (5, 0));
    assert_eq!(log.entries(), &ds[..]);
    assert_eq!(read_log(&path).unwrap(), ds);
}

#[test]
fn torn_tail_is_discarded_and_appends_continue() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("decisions.jsonl");
    let ds = decisions(4);
    {
        let (mut log, _) = DecisionLog::open(&path).unwrap();
        for d in &ds[..3] {
            log.append(d.clone()).unwrap();
        }
    }
    let full = encode_line(3, &ds[3]);
    let mut f = std::fs::OpenOptions::new()
        .append(true)
        .open(&path)
        .unwrap();
    f.write_all(&full.as_bytes()[..full.len() / 2]).unwrap();
    drop(f);
    assert_eq!(read_log(&path).unwrap().len(), 3);

    let (mut log, rec) = DecisionLog::open(&path).unwrap();
    assert_eq!(rec.records, 3);
    assert_eq!(rec.discarded_bytes, (full.len() / 2) as u64);
    log.append(ds[3].clone()).unwrap();
    drop(log);
    let (log, rec) = DecisionLog::open(&path).unwrap();
    assert_eq!((rec.records, rec.discarded_bytes), (4, 0));
    assert_eq!(log.entries(), &ds[..]);
}

#[test]
fn corrupt_final_line_with_newline_counts_as_torn() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("decisions.jsonl");
    let ds = decisions(2);
    let mut bytes = encode_line(0, &ds[0]).into_bytes();
    let mut second = encode_line(1, &ds[1]).into_bytes();
    let n = second.len();
    second[n / 2] ^= 0x20;
    bytes.extend(second);
    std::fs::write(&path, &bytes).unwrap();
    let (log, rec) = DecisionLog::open(&path).unwrap();
    assert_eq!(log.len(), 1);
    assert_eq!(rec.discarded_bytes, n as u64);
}

#[test]
fn corruption_before_the_tail_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("decisions.jsonl");
    let ds = decisions(3);
    let mut lines: Vec<String> = ds
        .iter()
        .enumerate()
        .map(|(i, d)| encode_line(i as u64, d))
        .collect();
    lines[1] = lines[1].replacen("\"seq\":1", "\"seq\":5", 1);
    std::fs::write(&path, lines.concat()).unwrap();
    assert!(matches!(
        DecisionLog::open(&path),
        Err(LogError::Corrupt { line: 2, .. })
    ));
}

#[test]
fn history_is_append_only() {
    let mut log = DecisionLog::in_memory();
    let ds = decisions(2);
    log.append(ds[0].clone()).unwrap();
    let mut later = ds[0].clone();
    later.decided_at += 10;
    log.append(later.clone()).unwrap();
    log.append(ds[1].clone()).unwrap();
    assert_eq!(log.history("d0").len(), 2);
    assert_eq!(log.latest("d0"), Some(&later));
    assert_eq!(log.history("d0")[0], &ds[0]);
    let latest: Vec<_> = log
        .latest_per_item()
        .into_iter()
        .map(|d| d.decided_at)
        .collect();
    assert_eq!(latest, vec![NOW + 10, NOW]);
}
