use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde_json::json;

use super::{Detector, DetectorError, DetectorVerdict};
use crate::model::{ContentItem, GroundTruth};

/// External detector speaking JSON over stdio. The child receives one JSON
/// object on stdin (`id`, `modality`, `origin`, `payload_b64`,
/// `marker_block_b64`) and must print one [`DetectorVerdict`] object on
/// stdout. Reported latency is wall-clock time.
#[derive(Debug, Clone)]
pub struct SubprocessDetector {
    id: String,
    program: String,
    args: Vec<String>,
    timeout: Duration,
}

impl SubprocessDetector {
    pub fn new(id: impl Into<String>, program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            id: id.into(),
            program: program.into(),
            args,
            timeout: Duration::from_secs(5),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn request(item: &ContentItem) -> Vec<u8> {
        let body = json!({
            "id": item.id,
            "modality": item.modality,
            "origin": item.origin,
            "payload_b64": STANDARD.encode(&item.payload),
            "marker_block_b64": item.marker_block.as_ref().map(|b| STANDARD.encode(b)),
        });
        let mut out = serde_json::to_vec(&body).expect("request serializes");
        out.push(b'\n');
        out
    }
}

impl Detector for SubprocessDetector {
    fn id(&self) -> &str {
        &self.id
    }

    fn detect(
        &self,
        item: &ContentItem,
        _truth: Option<GroundTruth>,
    ) -> Result<DetectorVerdict, DetectorError> {
        let failed = |e: std::io::Error| DetectorError::Failed(format!("{}: {e}", self.program));
        let start = Instant::now();
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(failed)?;
        let request = Self::request(item);
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = std::thread::spawn(move || {
            let _ = stdin.write_all(&request);
        });
        let mut stdout = child.stdout.take().expect("piped stdout");
        let reader = std::thread::spawn(move || {
            let mut buf = Vec::new();
            stdout.read_to_end(&mut buf).map(|_| buf)
        });
        let status = loop {
            if let Some(status) = child.try_wait().map_err(failed)? {
                break status;
            }
            if start.elapsed() > self.timeout {
                let _ = child.kill();
                let _ = child.wait();
                return Err(DetectorError::Timeout {
                    budget_ms: self.timeout.as_secs_f64() * 1000.0,
                });
            }
            std::thread::sleep(Duration::from_millis(1));
        };
        let _ = writer.join();
        let out = reader
            .join()
            .map_err(|_| DetectorError::Failed("reader thread panicked".into()))?
            .map_err(failed)?;
        if !status.success() {
            return Err(DetectorError::Failed(format!(
                "{} exited with {status}",
                self.program
            )));
        }
        let line = String::from_utf8_lossy(&out);
        let line = line
            .lines()
            .find(|l| !l.trim().is_empty())
            .unwrap_or_default();
        let mut v: DetectorVerdict =
            serde_json::from_str(line).map_err(|e| DetectorError::InvalidVerdict(e.to_string()))?;
        v.detector_id = self.id.clone();
        v.latency_ms = start.elapsed().as_secs_f64() * 1000.0;
        Ok(v)
    }
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;

    fn sh(script: &str) -> SubprocessDetector {
        SubprocessDetector::new("ext", "sh", vec!["-c".into(), script.into()])
    }

    #[test]
    fn reads_one_verdict() {
        let d = sh(r#"cat > /dev/null; echo '{"detector_id":"x","confidence_fake":0.25}'"#);
        let v = d.detect(&ContentItem::text("a", "hi"), None).unwrap();
        assert_eq!(v.detector_id, "ext");
        assert_eq!(v.confidence_fake, 0.25);
    }

    #[test]
    fn child_sees_the_request() {
        let d = sh(
            r#"grep -q '"payload_b64":"aGk="' && echo '{"detector_id":"x","confidence_fake":1}'"#,
        );
        assert_eq!(
            d.detect(&ContentItem::text("a", "hi"), None)
                .unwrap()
                .confidence_fake,
            1.0
        );
    }

    #[test]
    fn failures_are_reported() {
        let item = ContentItem::text("a", "hi");
        assert!(matches!(
            sh("exit 3").detect(&item, None),
            Err(DetectorError::Failed(_))
        ));
        assert!(matches!(
            sh("echo nope").detect(&item, None),
            Err(DetectorError::InvalidVerdict(_))
        ));
        let slow = sh("sleep 5").with_timeout(Duration::from_millis(50));
        assert!(matches!(
            slow.detect(&item, None),
            Err(DetectorError::Timeout { .. })
        ));
        let missing = SubprocessDetector::new("m", "/nonexistent/detector", vec![]);
        assert!(matches!(
            missing.detect(&item, None),
            Err(DetectorError::Failed(_))
        ));
    }
}
