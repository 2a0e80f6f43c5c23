//! Constant-memory record streams.

use std::fmt;
use std::io::{self, BufRead};
use std::path::Path;
use std::str::FromStr;

use super::convert::parse_record_line;
use super::{Message, SchemaRegistry};

/// How records are laid out in a byte stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WireFormat {
    /// One record per line.
    #[default]
    Ndjson,
    /// A single top-level JSON array of records.
    JsonArray,
}

impl WireFormat {
    /// `.json` files are arrays, anything else is line-delimited.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => WireFormat::JsonArray,
            _ => WireFormat::Ndjson,
        }
    }
}

impl FromStr for WireFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ndjson" | "jsonl" => Ok(WireFormat::Ndjson),
            "json" | "jsonArray" | "json-array" => Ok(WireFormat::JsonArray),
            other => Err(format!("unknown format `{other}` (expected ndjson or jsonArray)")),
        }
    }
}

impl fmt::Display for WireFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WireFormat::Ndjson => "ndjson",
            WireFormat::JsonArray => "jsonArray",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ArrayState {
    Start,
    Inside,
    Done,
}

/// Yields the raw bytes of one record at a time, reusing a single buffer.
pub struct RecordReader<R> {
    reader: R,
    format: WireFormat,
    buf: Vec<u8>,
    position: usize,
    state: ArrayState,
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(reader: R, format: WireFormat) -> Self {
        Self {
            reader,
            format,
            buf: Vec::new(),
            position: 0,
            state: ArrayState::Start,
        }
    }

    /// The next record with its 1-based line (or array element) number.
    pub fn next_record(&mut self) -> io::Result<Option<(usize, &[u8])>> {
        match self.format {
            WireFormat::Ndjson => self.next_line(),
            WireFormat::JsonArray => self.next_element(),
        }
    }

    fn next_line(&mut self) -> io::Result<Option<(usize, &[u8])>> {
        loop {
            self.buf.clear();
            if self.reader.read_until(b'\n', &mut self.buf)? == 0 {
                return Ok(None);
            }
            self.position += 1;
            let line = self.buf.trim_ascii();
            if !line.is_empty() {
                let start = line.as_ptr() as usize - self.buf.as_ptr() as usize;
                let end = start + line.len();
                return Ok(Some((self.position, &self.buf[start..end])));
            }
        }
    }

    fn peek(&mut self) -> io::Result<Option<u8>> {
        Ok(self.reader.fill_buf()?.first().copied())
    }

    fn skip_whitespace(&mut self) -> io::Result<()> {
        while let Some(b) = self.peek()? {
            if !b.is_ascii_whitespace() {
                break;
            }
            self.reader.consume(1);
        }
        Ok(())
    }

    fn next_element(&mut self) -> io::Result<Option<(usize, &[u8])>> {
        let invalid = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
        if self.state == ArrayState::Start {
            self.skip_whitespace()?;
            match self.peek()? {
                None => {
                    self.state = ArrayState::Done;
                    return Ok(None);
                }
                Some(b'[') => {
                    self.reader.consume(1);
                    self.state = ArrayState::Inside;
                }
                Some(_) => {
                    self.state = ArrayState::Done;
                    return Err(invalid("expected a top-level JSON array"));
                }
            }
        }
        if self.state == ArrayState::Done {
            return Ok(None);
        }
        self.skip_whitespace()?;
        if self.peek()? == Some(b',') && self.position > 0 {
            self.reader.consume(1);
            self.skip_whitespace()?;
        }
        match self.peek()? {
            None => {
                self.state = ArrayState::Done;
                return Err(invalid("unterminated JSON array"));
            }
            Some(b']') => {
                self.reader.consume(1);
                self.state = ArrayState::Done;
                return Ok(None);
            }
            Some(_) => {}
        }
        self.buf.clear();
        self.position += 1;
        let (mut depth, mut in_str, mut escaped) = (0usize, false, false);
        loop {
            let chunk = self.reader.fill_buf()?;
            if chunk.is_empty() {
                self.state = ArrayState::Done;
                break;
            }
            let mut used = 0;
            let mut finished = false;
            for &b in chunk {
                if in_str {
                    used += 1;
                    if escaped {
                        escaped = false;
                    } else if b == b'\\' {
                        escaped = true;
                    } else if b == b'"' {
                        in_str = false;
                    }
                    continue;
                }
                match b {
                    b'"' => in_str = true,
                    b'{' | b'[' => depth += 1,
                    b'}' | b']' if depth > 0 => {
                        depth -= 1;
                        if depth == 0 {
                            used += 1;
                            finished = true;
                            break;
                        }
                    }
                    b',' | b']' if depth == 0 => {
                        finished = true;
                        break;
                    }
                    _ => {}
                }
                used += 1;
            }
            self.buf.extend_from_slice(&chunk[..used]);
            self.reader.consume(used);
            if finished {
                break;
            }
        }
        let elem = self.buf.trim_ascii_end();
        Ok(Some((self.position, elem)))
    }
}

/// A record that could not be converted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for StreamError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "record {}: {}", self.line, self.message)
    }
}

/// Keeps the first few errors for reporting; the rest are only counted.
const KEPT_ERRORS: usize = 16;

/// Iterator of messages; bad records are skipped and counted.
pub struct MessageStream<R> {
    records: RecordReader<R>,
    registry: SchemaRegistry,
    error_count: usize,
    errors: Vec<StreamError>,
    failed: bool,
}

/// Streams messages out of `reader`, one record at a time.
pub fn stream_parse<R: BufRead>(
    reader: R,
    registry: SchemaRegistry,
    format: WireFormat,
) -> MessageStream<R> {
    MessageStream {
        records: RecordReader::new(reader, format),
        registry,
        error_count: 0,
        errors: Vec::new(),
        failed: false,
    }
}

impl<R> MessageStream<R> {
    pub fn error_count(&self) -> usize {
        self.error_count
    }

    pub fn errors(&self) -> &[StreamError] {
        &self.errors
    }

    fn note(&mut self, line: usize, message: String) {
        self.error_count += 1;
        if self.errors.len() < KEPT_ERRORS {
            self.errors.push(StreamError { line, message });
        }
    }
}

impl<R: BufRead> Iterator for MessageStream<R> {
    type Item = Message;

    fn next(&mut self) -> Option<Message> {
        if self.failed {
            return None;
        }
        loop {
            let (line, result) = match self.records.next_record() {
                Ok(Some((line, bytes))) => {
                    let parsed = std::str::from_utf8(bytes)
                        .map_err(|e| e.to_string())
                        .and_then(|s| parse_record_line(s, &self.registry).map_err(|e| e.to_string()));
                    (line, parsed)
                }
                Ok(None) => return None,
                Err(e) => {
                    self.failed = true;
                    let line = self.records.position;
                    self.note(line, e.to_string());
                    return None;
                }
            };
            match result {
                Ok(m) => return Some(m),
                Err(e) => self.note(line, e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ORDER: &str = r#"{"id":"m1","objecttype":"order","ORDERKEY":1,"CUSTKEY":2,"OTOTALPRICE":3.5,"OPRIORITY":"1-URGENT","SHIPPRIORITY":0}"#;

    fn order(id: &str) -> String {
        ORDER.replace("\"m1\"", &format!("\"{id}\""))
    }

    fn ids(s: MessageStream<&[u8]>) -> Vec<String> {
        s.map(|m| m.id.to_string()).collect()
    }

    #[test]
    fn lines_in_order() {
        let text = format!("{}\n{}\n\n{}", order("a"), order("b"), order("c"));
        let s = stream_parse(text.as_bytes(), SchemaRegistry::tpch(), WireFormat::Ndjson);
        assert_eq!(ids(s), ["a", "b", "c"]);
    }

    #[test]
    fn malformed_line_is_skipped_and_counted() {
        let text = format!("{}\n{{\"id\": oops\n{}\n", order("a"), order("c"));
        let mut s = stream_parse(text.as_bytes(), SchemaRegistry::tpch(), WireFormat::Ndjson);
        let got: Vec<String> = s.by_ref().map(|m| m.id.to_string()).collect();
        assert_eq!(got, ["a", "c"]);
        assert_eq!(s.error_count(), 1);
        assert_eq!(s.errors()[0].line, 2);
    }

    #[test]
    fn empty_input() {
        for f in [WireFormat::Ndjson, WireFormat::JsonArray] {
            let s = stream_parse(&b""[..], SchemaRegistry::tpch(), f);
            assert!(ids(s).is_empty());
        }
        let s = stream_parse(&b" [ ] "[..], SchemaRegistry::tpch(), WireFormat::JsonArray);
        assert!(ids(s).is_empty());
    }

    #[test]
    fn array_elements() {
        let text = format!("[\n  {},\n  {} , {}\n]\n", order("a"), order("b]"), order("c,"));
        let s = stream_parse(text.as_bytes(), SchemaRegistry::tpch(), WireFormat::JsonArray);
        assert_eq!(ids(s), ["a", "b]", "c,"]);
    }

    #[test]
    fn array_of_arrays_and_small_buffers() {
        let nation = r#"{"id":"n0","objecttype":"nation","NATIONKEY":0,"NNAME":"A","NREGIONKEY":0,"NCOMMENT":"x \"q\" ]"}"#;
        let cust = r#"{"id":"c1","objecttype":"customer","CUSTKEY":1,"CNAME":"n","CNATIONKEY":0,"CPHONE":"p","ACCTBAL":1.0,"CMKTSEGMENT":"s"}"#;
        let text = format!("[[{cust},{nation}],[{}]]", cust.replace("c1", "c2"));
        let reader = io::BufReader::with_capacity(7, text.as_bytes());
        let msgs: Vec<Message> =
            stream_parse(reader, SchemaRegistry::tpch(), WireFormat::JsonArray).collect();
        assert_eq!(msgs.len(), 2);
        assert_eq!(msgs[0].body.relation("nation").unwrap().len(), 1);
        assert!(msgs[1].body.relation("nation").is_none());
    }

    #[test]
    fn truncated_array_reports_error() {
        let text = format!("[{}, {}", order("a"), &order("b")[..20]);
        let mut s = stream_parse(text.as_bytes(), SchemaRegistry::tpch(), WireFormat::JsonArray);
        assert_eq!(s.by_ref().count(), 1);
        assert_eq!(s.error_count(), 1);
    }

    #[test]
    fn format_names() {
        assert_eq!("jsonArray".parse::<WireFormat>().unwrap(), WireFormat::JsonArray);
        assert_eq!(WireFormat::from_path(Path::new("x.ndjson")), WireFormat::Ndjson);
        assert_eq!(WireFormat::from_path(Path::new("x.json")), WireFormat::JsonArray);
        assert!("xml".parse::<WireFormat>().is_err());
    }
}
