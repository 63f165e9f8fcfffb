//! Streaming WET (WARC text conversion) reader and writer.
//!
//! A WARC record is a version line, header lines terminated by an empty
//! CRLF line, exactly `Content-Length` body bytes, and two trailing CRLFs.
//! The reader holds one record in memory at a time, so archive size does
//! not affect the memory footprint.

use std::io::{BufRead, Write};

use super::ParseError;

/// A text conversion record extracted from a WET file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WetRecord {
    pub target_uri: String,
    pub warc_date: String,
    /// Body decoded as UTF-8; invalid sequences are replaced, never fatal.
    pub body: String,
    /// Declared body length in bytes (before any lossy decoding).
    pub byte_length: u64,
}

/// Pulls conversion records out of an uncompressed WET byte stream.
///
/// Non-conversion records (warcinfo, metadata, ...) are parsed for framing
/// and skipped; [`WetReader::records_skipped`] counts them.
pub struct WetReader<R: BufRead> {
    input: R,
    offset: u64,
    records_skipped: u64,
    done: bool,
}

impl<R: BufRead> WetReader<R> {
    pub fn new(input: R) -> Self {
        WetReader { input, offset: 0, records_skipped: 0, done: false }
    }

    pub fn records_skipped(&self) -> u64 {
        self.records_skipped
    }

    /// Bytes consumed from the underlying stream so far.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    fn malformed(&self, reason: impl Into<String>) -> ParseError {
        ParseError::Malformed { offset: self.offset, reason: reason.into() }
    }

    fn read_line(&mut self) -> Result<Option<String>, ParseError> {
        let mut raw = Vec::new();
        let n = self
            .input
            .read_until(b'\n', &mut raw)
            .map_err(|e| ParseError::Io { offset: self.offset, source: e })?;
        if n == 0 {
            return Ok(None);
        }
        self.offset += n as u64;
        if raw.ends_with(b"\n") {
            raw.pop();
            if raw.ends_with(b"\r") {
                raw.pop();
            }
        }
        Ok(Some(String::from_utf8_lossy(&raw).into_owned()))
    }

    /// Parses the next record of any type. `Ok(None)` is clean end of
    /// stream; blank lines between records are tolerated.
    fn next_raw(&mut self) -> Result<Option<RawRecord>, ParseError> {
        let version = loop {
            match self.read_line()? {
                None => return Ok(None),
                Some(line) if line.is_empty() => continue,
                Some(line) => break line,
            }
        };
        if !version.starts_with("WARC/") {
            return Err(self.malformed(format!("expected WARC version line, got {version:?}")));
        }

        let mut warc_type = None;
        let mut target_uri = None;
        let mut date = None;
        let mut content_length: Option<u64> = None;
        loop {
            let line = match self.read_line()? {
                None => {
                    return Err(ParseError::Truncated {
                        offset: self.offset,
                        reason: "stream ended inside record headers".into(),
                    })
                }
                Some(l) => l,
            };
            if line.is_empty() {
                break;
            }
            let (name, value) = line
                .split_once(':')
                .ok_or_else(|| self.malformed(format!("header without colon: {line:?}")))?;
            let value = value.trim();
            match name.trim().to_ascii_lowercase().as_str() {
                "warc-type" => warc_type = Some(value.to_string()),
                "warc-target-uri" => target_uri = Some(value.to_string()),
                "warc-date" => date = Some(value.to_string()),
                "content-length" => {
                    content_length = Some(value.parse().map_err(|_| {
                        self.malformed(format!("unparseable Content-Length {value:?}"))
                    })?)
                }
                _ => {}
            }
        }

        let length =
            content_length.ok_or_else(|| self.malformed("record without Content-Length"))?;
        let mut body = vec![0u8; length as usize];
        self.input
            .read_exact(&mut body)
            .map_err(|e| ParseError::Truncated {
                offset: self.offset,
                reason: format!("body shorter than declared {length} bytes: {e}"),
            })?;
        self.offset += length;

        let mut trailer = [0u8; 4];
        self.input
            .read_exact(&mut trailer)
            .map_err(|_| ParseError::Truncated {
                offset: self.offset,
                reason: "missing record trailer".into(),
            })?;
        self.offset += 4;
        if trailer != *b"\r\n\r\n" {
            return Err(self.malformed("record not followed by two CRLFs"));
        }

        Ok(Some(RawRecord { warc_type, target_uri, date, body, length }))
    }
}

struct RawRecord {
    warc_type: Option<String>,
    target_uri: Option<String>,
    date: Option<String>,
    body: Vec<u8>,
    length: u64,
}

impl<R: BufRead> Iterator for WetReader<R> {
    type Item = Result<WetRecord, ParseError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            match self.next_raw() {
                Ok(None) => {
                    self.done = true;
                    return None;
                }
                Ok(Some(raw)) => {
                    if raw.warc_type.as_deref() != Some("conversion") {
                        self.records_skipped += 1;
                        continue;
                    }
                    return Some(Ok(WetRecord {
                        target_uri: raw.target_uri.unwrap_or_default(),
                        warc_date: raw.date.unwrap_or_default(),
                        body: String::from_utf8_lossy(&raw.body).into_owned(),
                        byte_length: raw.length,
                    }));
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WetWriteError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Writes records in the same framing the reader accepts.
pub struct WetWriter<W: Write> {
    out: W,
}

impl<W: Write> WetWriter<W> {
    pub fn new(out: W) -> Self {
        WetWriter { out }
    }

    pub fn write_conversion(&mut self, record: &WetRecord) -> Result<(), WetWriteError> {
        self.write_record("conversion", Some(record), record.body.as_bytes())
    }

    /// Writes a non-conversion record (warcinfo, metadata) so fixtures can
    /// exercise the reader's skipping path.
    pub fn write_other(&mut self, warc_type: &str, body: &[u8]) -> Result<(), WetWriteError> {
        self.write_record(warc_type, None, body)
    }

    fn write_record(
        &mut self,
        warc_type: &str,
        record: Option<&WetRecord>,
        body: &[u8],
    ) -> Result<(), WetWriteError> {
        write!(self.out, "WARC/1.0\r\n")?;
        write!(self.out, "WARC-Type: {warc_type}\r\n")?;
        if let Some(r) = record {
            write!(self.out, "WARC-Target-URI: {}\r\n", r.target_uri)?;
            write!(self.out, "WARC-Date: {}\r\n", r.warc_date)?;
        }
        write!(self.out, "Content-Length: {}\r\n", body.len())?;
        write!(self.out, "\r\n")?;
        self.out.write_all(body)?;
        write!(self.out, "\r\n\r\n")?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(uri: &str, body: &str) -> WetRecord {
        WetRecord {
            target_uri: uri.to_string(),
            warc_date: "2018-08-12T07:21:30Z".to_string(),
            body: body.to_string(),
            byte_length: body.len() as u64,
        }
    }

    fn write_all(records: &[WetRecord]) -> Vec<u8> {
        let mut w = WetWriter::new(Vec::new());
        for r in records {
            w.write_conversion(r).unwrap();
        }
        w.into_inner()
    }

    #[test]
    fn parses_single_record() {
        let bytes = write_all(&[record("https://example.cz/", "Dobrý den.\nNa shledanou.")]);
        let parsed: Vec<_> = WetReader::new(&bytes[..]).map(|r| r.unwrap()).collect();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].target_uri, "https://example.cz/");
        assert_eq!(parsed[0].body, "Dobrý den.\nNa shledanou.");
        assert_eq!(parsed[0].byte_length, "Dobrý den.\nNa shledanou.".len() as u64);
    }

    #[test]
    fn skips_non_conversion_records() {
        let mut w = WetWriter::new(Vec::new());
        w.write_other("warcinfo", b"software: test\r\n").unwrap();
        w.write_conversion(&record("https://a.cz/", "Text.")).unwrap();
        w.write_other("metadata", b"fetch-time: 1ms").unwrap();
        w.write_conversion(&record("https://b.cz/", "Jiný text.")).unwrap();
        let bytes = w.into_inner();

        let mut reader = WetReader::new(&bytes[..]);
        let parsed: Vec<_> = reader.by_ref().map(|r| r.unwrap()).collect();
        assert_eq!(parsed.len(), 2);
        assert_eq!(reader.records_skipped(), 2);
        assert_eq!(parsed[0].target_uri, "https://a.cz/");
        assert_eq!(parsed[1].target_uri, "https://b.cz/");
    }

    #[test]
    fn body_may_contain_blank_lines_and_crlf() {
        // Content-Length framing means bodies with things that look like
        // record boundaries still parse.
        let body = "První.\r\n\r\nWARC/1.0\r\nDruhá.";
        let bytes = write_all(&[record("https://a.cz/", body), record("https://b.cz/", "X.")]);
        let parsed: Vec<_> = WetReader::new(&bytes[..]).map(|r| r.unwrap()).collect();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].body, body);
    }

    #[test]
    fn truncated_body_reports_offset() {
        let mut bytes = write_all(&[record("https://a.cz/", "Dlouhý text záznamu.")]);
        bytes.truncate(bytes.len() - 10);
        let err = WetReader::new(&bytes[..]).next().unwrap().unwrap_err();
        match err {
            ParseError::Truncated { offset, .. } => assert!(offset > 0),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn garbage_version_line_is_malformed() {
        let bytes = b"HTTP/1.1 200 OK\r\n\r\n".to_vec();
        let err = WetReader::new(&bytes[..]).next().unwrap().unwrap_err();
        assert!(matches!(err, ParseError::Malformed { .. }));
    }

    #[test]
    fn bad_content_length_is_malformed() {
        let bytes =
            b"WARC/1.0\r\nWARC-Type: conversion\r\nContent-Length: many\r\n\r\n".to_vec();
        let err = WetReader::new(&bytes[..]).next().unwrap().unwrap_err();
        assert!(matches!(err, ParseError::Malformed { .. }));
    }

    #[test]
    fn missing_content_length_is_malformed() {
        let bytes = b"WARC/1.0\r\nWARC-Type: conversion\r\n\r\nbody".to_vec();
        let err = WetReader::new(&bytes[..]).next().unwrap().unwrap_err();
        assert!(matches!(err, ParseError::Malformed { .. }));
    }

    #[test]
    fn invalid_utf8_body_is_replaced_not_fatal() {
        let mut w = WetWriter::new(Vec::new());
        write!(w.out, "WARC/1.0\r\nWARC-Type: conversion\r\nContent-Length: 4\r\n\r\n").unwrap();
        w.out.write_all(&[b'a', 0xff, 0xfe, b'b']).unwrap();
        write!(w.out, "\r\n\r\n").unwrap();
        let bytes = w.into_inner();
        let parsed: Vec<_> = WetReader::new(&bytes[..]).map(|r| r.unwrap()).collect();
        assert_eq!(parsed[0].body, "a\u{fffd}\u{fffd}b");
        assert_eq!(parsed[0].byte_length, 4);
    }

    proptest! {
        #[test]
        fn round_trip_preserves_records(
            bodies in proptest::collection::vec(".{0,200}", 1..8),
            uris in proptest::collection::vec("[a-z]{1,10}", 1..8),
        ) {
            let records: Vec<WetRecord> = bodies
                .iter()
                .zip(uris.iter().cycle())
                .map(|(b, u)| record(&format!("https://{u}.cz/"), b))
                .collect();
            let bytes = write_all(&records);
            let parsed: Vec<WetRecord> =
                WetReader::new(&bytes[..]).map(|r| r.unwrap()).collect();
            prop_assert_eq!(parsed, records);
        }
    }
}
