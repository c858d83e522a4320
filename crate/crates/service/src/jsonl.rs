use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Append-only file of JSON lines. A final line that is unterminated or does
/// not parse is a torn write and gets cut off on open; anything earlier that
/// does not parse is corruption.
#[derive(Debug)]
pub(crate) struct JsonlFile {
    file: File,
    len: u64,
}

impl JsonlFile {
    pub fn open<T: DeserializeOwned>(path: &Path) -> io::Result<(Self, Vec<T>)> {
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)?;
        let mut text = String::new();
        file.read_to_string(&mut text).map_err(|e| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{}: {e}", path.display()),
            )
        })?;
        let mut records = Vec::new();
        let mut good = 0usize;
        let mut rest = text.as_str();
        let mut line_no = 0;
        while !rest.is_empty() {
            line_no += 1;
            let (line, next, terminated) = match rest.find('\n') {
                Some(i) => (&rest[..i], &rest[i + 1..], true),
                None => (rest, "", false),
            };
            let parsed = serde_json::from_str::<T>(line);
            match parsed {
                Ok(v) if terminated => {
                    records.push(v);
                    good += line.len() + 1;
                }
                _ if next.is_empty() => break,
                Err(e) => {
                    return Err(io::Error::new(
                        io::ErrorKind::InvalidData,
                        format!("{} line {line_no}: {e}", path.display()),
                    ))
                }
                Ok(_) => unreachable!("only the last line can be unterminated"),
            }
            rest = next;
        }
        if good < text.len() {
            log::warn!(
                "{}: discarding {} byte torn tail",
                path.display(),
                text.len() - good
            );
            file.set_len(good as u64)?;
        }
        file.seek(SeekFrom::End(0))?;
        Ok((
            Self {
                file,
                len: good as u64,
            },
            records,
        ))
    }

    /// Writes one line and syncs it. A failed write is rolled back so the
    /// file never keeps half a record.
    pub fn append<T: Serialize>(&mut self, value: &T) -> io::Result<()> {
        let mut line = serde_json::to_string(value).map_err(io::Error::other)?;
        line.push('\n');
        let res = self
            .file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.sync_data());
        match res {
            Ok(()) => {
                self.len += line.len() as u64;
                Ok(())
            }
            Err(e) => {
                let _ = self.file.set_len(self.len);
                Err(e)
            }
        }
    }
}
