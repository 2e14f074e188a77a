//! Streaming WARC/1.0 and WARC/1.1 reader.
//!
//! Input may be plain or a concatenation of gzip members (one per record,
//! as Common Crawl ships them). Byte offsets in errors refer to the
//! decompressed stream.

use std::io::{self, BufRead, BufReader, Read};

use chrono::{DateTime, Utc};
use flate2::read::{GzDecoder, MultiGzDecoder};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WarcError {
    #[error("I/O error at byte {offset}: {source}")]
    Io { offset: u64, source: io::Error },
    #[error("bad WARC version line at byte {offset}: {line:?}")]
    BadVersion { offset: u64, line: String },
    #[error("record at byte {offset} is missing mandatory header {header}")]
    MissingHeader { offset: u64, header: &'static str },
    #[error("malformed header at byte {offset}: {line:?}")]
    MalformedHeader { offset: u64, line: String },
    #[error("record at byte {offset} declares {expected} payload bytes but only {actual} remain")]
    TruncatedRecord { offset: u64, expected: u64, actual: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarcRecord {
    /// Byte offset of the version line.
    pub offset: u64,
    pub record_type: String,
    pub target_uri: Option<String>,
    pub warc_date: DateTime<Utc>,
    pub content_type: Option<String>,
    pub headers: Vec<(String, String)>,
    pub payload: Vec<u8>,
}

impl WarcRecord {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }
}

/// Sequential record reader; stops after the first error.
pub struct WarcReader<R> {
    inner: R,
    offset: u64,
    failed: bool,
}

impl WarcReader<Box<dyn BufRead + Send>> {
    /// Sniffs the gzip magic and wraps the input accordingly.
    pub fn open<R: Read + Send + 'static>(reader: R) -> io::Result<Self> {
        let mut buf = BufReader::new(reader);
        let head = buf.fill_buf()?;
        let gz = head.len() >= 2 && head[0] == 0x1f && head[1] == 0x8b;
        let inner: Box<dyn BufRead + Send> =
            if gz { Box::new(BufReader::new(MultiGzDecoder::new(buf))) } else { Box::new(buf) };
        Ok(WarcReader::new(inner))
    }
}

impl<R: BufRead> WarcReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, offset: 0, failed: false }
    }

    fn read_line(&mut self) -> Result<Option<String>, WarcError> {
        let mut raw = Vec::new();
        let n = self
            .inner
            .read_until(b'\n', &mut raw)
            .map_err(|source| WarcError::Io { offset: self.offset, source })?;
        if n == 0 {
            return Ok(None);
        }
        self.offset += n as u64;
        while raw.last().is_some_and(|b| *b == b'\n' || *b == b'\r') {
            raw.pop();
        }
        Ok(Some(String::from_utf8_lossy(&raw).into_owned()))
    }

    fn next_record(&mut self) -> Result<Option<WarcRecord>, WarcError> {
        // skip blank separator lines between records
        let (start, version) = loop {
            let start = self.offset;
            match self.read_line()? {
                None => return Ok(None),
                Some(l) if l.trim().is_empty() => continue,
                Some(l) => break (start, l),
            }
        };
        if !matches!(version.trim(), "WARC/1.0" | "WARC/1.1") {
            return Err(WarcError::BadVersion { offset: start, line: version });
        }
        let mut headers = Vec::new();
        loop {
            let line_offset = self.offset;
            let Some(line) = self.read_line()? else {
                return Err(WarcError::TruncatedRecord { offset: start, expected: 0, actual: 0 });
            };
            if line.is_empty() {
                break;
            }
            if line.starts_with([' ', '\t']) {
                // folded continuation line
                match headers.last_mut() {
                    Some((_, v)) => {
                        let v: &mut String = v;
                        v.push(' ');
                        v.push_str(line.trim());
                        continue;
                    }
                    None => return Err(WarcError::MalformedHeader { offset: line_offset, line }),
                }
            }
            let Some((k, v)) = line.split_once(':') else {
                return Err(WarcError::MalformedHeader { offset: line_offset, line });
            };
            headers.push((k.trim().to_string(), v.trim().to_string()));
        }
        let get = |name: &str| {
            headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.clone())
        };
        let missing = |header| WarcError::MissingHeader { offset: start, header };
        let record_type = get("WARC-Type").ok_or(missing("WARC-Type"))?;
        get("WARC-Record-ID").ok_or(missing("WARC-Record-ID"))?;
        let date = get("WARC-Date").ok_or(missing("WARC-Date"))?;
        let warc_date = DateTime::parse_from_rfc3339(&date)
            .map(|d| d.with_timezone(&Utc))
            .map_err(|_| WarcError::MalformedHeader { offset: start, line: format!("WARC-Date: {date}") })?;
        let len_text = get("Content-Length").ok_or(missing("Content-Length"))?;
        let expected: u64 = len_text.parse().map_err(|_| WarcError::MalformedHeader {
            offset: start,
            line: format!("Content-Length: {len_text}"),
        })?;

        let mut payload = Vec::with_capacity(expected.min(1 << 24) as usize);
        let got = (&mut self.inner)
            .take(expected)
            .read_to_end(&mut payload)
            .map_err(|source| WarcError::Io { offset: self.offset, source })? as u64;
        self.offset += got;
        if got < expected {
            return Err(WarcError::TruncatedRecord { offset: start, expected, actual: got });
        }
        Ok(Some(WarcRecord {
            offset: start,
            target_uri: get("WARC-Target-URI"),
            content_type: get("Content-Type"),
            record_type,
            warc_date,
            headers,
            payload,
        }))
    }
}

impl<R: BufRead> Iterator for WarcReader<R> {
    type Item = Result<WarcRecord, WarcError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        match self.next_record() {
            Ok(r) => r.map(Ok),
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

/// An HTML page recovered from a `response` record.
#[derive(Debug, Clone, PartialEq)]
pub struct HtmlCapture {
    pub url: String,
    pub timestamp: DateTime<Utc>,
    pub html: Vec<u8>,
    /// Charset from the HTTP `Content-Type`, if any.
    pub http_charset: Option<String>,
}

struct HttpResponse<'a> {
    content_type: Option<String>,
    content_encoding: Option<String>,
    chunked: bool,
    body: &'a [u8],
}

fn parse_http_response(payload: &[u8]) -> Option<HttpResponse<'_>> {
    let split = payload.windows(4).position(|w| w == b"\r\n\r\n").map(|p| (p, p + 4)).or_else(|| {
        payload.windows(2).position(|w| w == b"\n\n").map(|p| (p, p + 2))
    })?;
    let head = String::from_utf8_lossy(&payload[..split.0]);
    let mut lines = head.lines();
    if !lines.next()?.starts_with("HTTP/") {
        return None;
    }
    let mut resp =
        HttpResponse { content_type: None, content_encoding: None, chunked: false, body: &payload[split.1..] };
    for line in lines {
        let Some((k, v)) = line.split_once(':') else { continue };
        let v = v.trim().to_string();
        match k.trim().to_ascii_lowercase().as_str() {
            "content-type" => resp.content_type = Some(v),
            "content-encoding" => resp.content_encoding = Some(v.to_ascii_lowercase()),
            "transfer-encoding" => resp.chunked = v.to_ascii_lowercase().contains("chunked"),
            _ => {}
        }
    }
    Some(resp)
}

fn dechunk(body: &[u8]) -> Option<Vec<u8>> {
    let mut out = Vec::new();
    let mut rest = body;
    loop {
        let eol = rest.windows(2).position(|w| w == b"\r\n")?;
        let size_text = std::str::from_utf8(&rest[..eol]).ok()?;
        let size = usize::from_str_radix(size_text.split(';').next()?.trim(), 16).ok()?;
        rest = &rest[eol + 2..];
        if size == 0 {
            return Some(out);
        }
        out.extend_from_slice(rest.get(..size)?);
        rest = rest.get(size + 2..).unwrap_or(&[]);
    }
}

pub fn charset_param(content_type: &str) -> Option<String> {
    content_type.split(';').skip(1).find_map(|p| {
        let (k, v) = p.split_once('=')?;
        k.trim()
            .eq_ignore_ascii_case("charset")
            .then(|| v.trim().trim_matches(|c| c == '"' || c == '\'').to_ascii_lowercase())
    })
}

fn is_html_type(content_type: &str) -> bool {
    let mime = content_type.split(';').next().unwrap_or("").trim().to_ascii_lowercase();
    mime == "text/html" || mime == "application/xhtml+xml"
}

/// Converts a record into an HTML capture, or `None` for anything other
/// than an HTML `response`.
pub fn html_capture(record: &WarcRecord) -> Option<HtmlCapture> {
    if !record.record_type.eq_ignore_ascii_case("response") {
        return None;
    }
    let url = record.target_uri.clone()?;
    let resp = parse_http_response(&record.payload)?;
    let ct = resp.content_type.as_deref()?;
    if !is_html_type(ct) {
        return None;
    }
    let mut body = if resp.chunked { dechunk(resp.body)? } else { resp.body.to_vec() };
    if matches!(resp.content_encoding.as_deref(), Some("gzip") | Some("x-gzip")) {
        let mut decoded = Vec::new();
        GzDecoder::new(body.as_slice()).read_to_end(&mut decoded).ok()?;
        body = decoded;
    }
    Some(HtmlCapture { url, timestamp: record.warc_date, html: body, http_charset: charset_param(ct) })
}

/// Yields HTML captures from a WARC stream, skipping every other record.
pub fn ingest_warc<R: BufRead>(reader: WarcReader<R>) -> impl Iterator<Item = Result<HtmlCapture, WarcError>> {
    reader.filter_map(|r| match r {
        Ok(rec) => html_capture(&rec).map(Ok),
        Err(e) => Some(Err(e)),
    })
}

/// Builds one record; used for fixtures and by tests.
pub fn write_record(record_type: &str, uri: &str, date: &str, content_type: &str, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(b"WARC/1.0\r\n");
    out.extend_from_slice(format!("WARC-Type: {record_type}\r\n").as_bytes());
    out.extend_from_slice(format!("WARC-Record-ID: <urn:uuid:{:032x}>\r\n", xxhash_rust::xxh3::xxh3_128(payload)).as_bytes());
    out.extend_from_slice(format!("WARC-Date: {date}\r\n").as_bytes());
    out.extend_from_slice(format!("WARC-Target-URI: {uri}\r\n").as_bytes());
    out.extend_from_slice(format!("Content-Type: {content_type}\r\n").as_bytes());
    out.extend_from_slice(format!("Content-Length: {}\r\n\r\n", payload.len()).as_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(b"\r\n\r\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn http(body: &str) -> Vec<u8> {
        format!("HTTP/1.1 200 OK\r\nContent-Type: text/html; charset=UTF-8\r\n\r\n{body}").into_bytes()
    }

    fn archive() -> Vec<u8> {
        let mut a = write_record("request", "https://e.com/", "2023-01-01T00:00:00Z", "application/http; msgtype=request", b"GET / HTTP/1.1\r\n\r\n");
        a.extend(write_record("response", "https://e.com/", "2023-01-01T00:00:01Z", "application/http; msgtype=response", &http("<html>hi</html>")));
        a
    }

    #[test]
    fn one_response_among_two_records() {
        let caps: Vec<_> = ingest_warc(WarcReader::new(archive().as_slice())).collect::<Result<_, _>>().unwrap();
        assert_eq!(caps.len(), 1);
        assert_eq!(caps[0].url, "https://e.com/");
        assert_eq!(caps[0].html, b"<html>hi</html>");
        assert_eq!(caps[0].http_charset.as_deref(), Some("utf-8"));
    }

    #[test]
    fn no_responses_is_empty() {
        let a = write_record("warcinfo", "", "2023-01-01T00:00:00Z", "application/warc-fields", b"software: x\r\n");
        assert_eq!(ingest_warc(WarcReader::new(a.as_slice())).count(), 0);
        assert_eq!(ingest_warc(WarcReader::new(&b""[..])).count(), 0);
    }

    #[test]
    fn truncated_payload() {
        let mut a = archive();
        a.truncate(a.len() - 10);
        let errs: Vec<_> = WarcReader::new(a.as_slice()).filter_map(Result::err).collect();
        assert!(matches!(errs.as_slice(), [WarcError::TruncatedRecord { .. }]));
    }

    #[test]
    fn missing_header_reports_offset() {
        let first = write_record("request", "https://e.com/", "2023-01-01T00:00:00Z", "x", b"abc");
        let offset = first.len() as u64;
        let mut a = first;
        a.extend_from_slice(b"WARC/1.0\r\nWARC-Type: response\r\nContent-Length: 0\r\n\r\n");
        let err = WarcReader::new(a.as_slice()).find_map(Result::err).unwrap();
        match err {
            WarcError::MissingHeader { offset: o, header } => {
                assert_eq!(o, offset);
                assert_eq!(header, "WARC-Record-ID");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gzip_members() {
        let mut gz = Vec::new();
        for rec in [
            write_record("request", "https://e.com/", "2023-01-01T00:00:00Z", "x", b"q"),
            write_record("response", "https://e.com/p", "2023-01-01T00:00:00Z", "application/http", &http("<p>x</p>")),
        ] {
            let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
            enc.write_all(&rec).unwrap();
            gz.extend(enc.finish().unwrap());
        }
        let reader = WarcReader::open(std::io::Cursor::new(gz)).unwrap();
        let caps: Vec<_> = ingest_warc(reader).collect::<Result<_, _>>().unwrap();
        assert_eq!(caps.len(), 1);
        assert_eq!(caps[0].url, "https://e.com/p");
    }

    #[test]
    fn non_html_response_skipped() {
        let body = b"HTTP/1.1 200 OK\r\nContent-Type: image/png\r\n\r\n\x89PNG";
        let a = write_record("response", "https://e.com/x.png", "2023-01-01T00:00:00Z", "application/http", body);
        assert_eq!(ingest_warc(WarcReader::new(a.as_slice())).count(), 0);
    }

    #[test]
    fn chunked_body() {
        let body = b"HTTP/1.1 200 OK\r\nContent-Type: text/html\r\nTransfer-Encoding: chunked\r\n\r\n3\r\n<p>\r\n2\r\nok\r\n0\r\n\r\n";
        let a = write_record("response", "https://e.com/", "2023-01-01T00:00:00Z", "application/http", body);
        let cap = ingest_warc(WarcReader::new(a.as_slice())).next().unwrap().unwrap();
        assert_eq!(cap.html, b"<p>ok");
    }
}
