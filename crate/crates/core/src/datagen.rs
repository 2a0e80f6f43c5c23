//! Deterministic TPC-H style order and customer/nation records.
//!
//! Distributions are approximations: uniform priorities, uniform prices and
//! balances in fixed ranges, uniform nation keys. Everything is derived from a
//! single `u64` seed, so the same spec always yields the same bytes.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cdm::WireFormat;

pub const PRIORITIES: [&str; 5] = ["1-URGENT", "2-HIGH", "3-MEDIUM", "4-NOT SPECIFIED", "5-LOW"];
pub const SEGMENTS: [&str; 5] = ["AUTOMOBILE", "BUILDING", "FURNITURE", "HOUSEHOLD", "MACHINERY"];
pub const REGIONS: [&str; 5] = ["AFRICA", "AMERICA", "ASIA", "EUROPE", "MIDDLE EAST"];

/// TPC-H nations with their region keys.
pub const NATIONS: [(&str, i64); 25] = [
    ("ALGERIA", 0),
    ("ARGENTINA", 1),
    ("BRAZIL", 1),
    ("CANADA", 1),
    ("EGYPT", 4),
    ("ETHIOPIA", 0),
    ("FRANCE", 3),
    ("GERMANY", 3),
    ("INDIA", 2),
    ("INDONESIA", 2),
    ("IRAN", 4),
    ("IRAQ", 4),
    ("JAPAN", 2),
    ("JORDAN", 4),
    ("KENYA", 0),
    ("MOROCCO", 0),
    ("MOZAMBIQUE", 0),
    ("PERU", 1),
    ("CHINA", 2),
    ("ROMANIA", 3),
    ("SAUDI ARABIA", 4),
    ("VIETNAM", 2),
    ("RUSSIA", 3),
    ("UNITED KINGDOM", 3),
    ("UNITED STATES", 1),
];

/// Price range in cents.
pub const PRICE_CENTS: (i64, i64) = (100_000, 50_000_000);
/// Account balance range in cents.
pub const BALANCE_CENTS: (i64, i64) = (-99_999, 999_999);
/// Target serialized size of one order record, newline excluded.
pub const ORDER_BYTES: usize = 4096;

const POOL_LEN: usize = 2 * ORDER_BYTES;
const WORDS: [&str; 16] = [
    "furiously", "carefully", "ironic", "deposits", "packages", "sleep", "quickly", "final",
    "accounts", "regular", "express", "pending", "requests", "blithely", "bold", "theodolites",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenKind {
    Orders,
    CustomerNation,
}

impl FromStr for GenKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "orders" | "order" => Ok(GenKind::Orders),
            "customerNation" | "customer-nation" | "customers" => Ok(GenKind::CustomerNation),
            other => Err(format!("unknown kind `{other}` (expected orders or customerNation)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GenSpec {
    pub kind: GenKind,
    pub count: u64,
    pub seed: u64,
    pub format: WireFormat,
}

impl GenSpec {
    pub fn new(kind: GenKind, count: u64, seed: u64) -> Self {
        Self {
            kind,
            count,
            seed,
            format: WireFormat::Ndjson,
        }
    }

    pub fn with_format(mut self, format: WireFormat) -> Self {
        self.format = format;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderRecord {
    pub id: String,
    pub objecttype: &'static str,
    #[serde(rename = "ORDERKEY")]
    pub order_key: i64,
    #[serde(rename = "CUSTKEY")]
    pub cust_key: i64,
    #[serde(rename = "OTOTALPRICE")]
    pub total_price: f64,
    #[serde(rename = "OPRIORITY")]
    pub priority: &'static str,
    #[serde(rename = "SHIPPRIORITY")]
    pub ship_priority: i64,
    pub padding: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CustomerRecord {
    pub id: String,
    pub objecttype: &'static str,
    #[serde(rename = "CUSTKEY")]
    pub cust_key: i64,
    #[serde(rename = "CNAME")]
    pub name: String,
    #[serde(rename = "CNATIONKEY")]
    pub nation_key: i64,
    #[serde(rename = "CPHONE")]
    pub phone: String,
    #[serde(rename = "ACCTBAL")]
    pub acct_bal: f64,
    #[serde(rename = "CMKTSEGMENT")]
    pub segment: &'static str,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NationRecord {
    pub id: String,
    pub objecttype: &'static str,
    #[serde(rename = "NATIONKEY")]
    pub nation_key: i64,
    #[serde(rename = "NNAME")]
    pub name: String,
    #[serde(rename = "NREGIONKEY")]
    pub region_key: i64,
    #[serde(rename = "NCOMMENT")]
    pub comment: String,
}

/// The constant 25-row nation table.
pub fn nation_table() -> Vec<NationRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6e61_7469_6f6e);
    NATIONS
        .iter()
        .enumerate()
        .map(|(k, (name, region))| NationRecord {
            id: format!("n{k}"),
            objecttype: "nation",
            nation_key: k as i64,
            name: name.to_string(),
            region_key: *region,
            comment: sentence(&mut rng, 8),
        })
        .collect()
}

fn sentence(rng: &mut ChaCha8Rng, words: usize) -> String {
    (0..words)
        .map(|_| WORDS[rng.gen_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

fn cents(rng: &mut ChaCha8Rng, (lo, hi): (i64, i64)) -> f64 {
    rng.gen_range(lo..=hi) as f64 / 100.0
}

/// Sparse like TPC-H: eight keys used out of every 32.
pub fn order_key(i: u64) -> i64 {
    ((i / 8) * 32 + i % 8 + 1) as i64
}

/// Infinite stream of order records; take `count` of them.
pub struct OrderGenerator {
    rng: ChaCha8Rng,
    pool: String,
    next: u64,
    customers: i64,
}

impl OrderGenerator {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pool = String::with_capacity(POOL_LEN + 16);
        while pool.len() < POOL_LEN {
            pool.push_str(WORDS[rng.gen_range(0..WORDS.len())]);
            pool.push(' ');
        }
        Self {
            rng,
            pool,
            next: 0,
            customers: 150_000,
        }
    }

    fn padding(&mut self, len: usize) -> String {
        let start = self.rng.gen_range(0..self.pool.len() - len);
        self.pool[start..start + len].to_string()
    }
}

impl Iterator for OrderGenerator {
    type Item = OrderRecord;

    fn next(&mut self) -> Option<OrderRecord> {
        let i = self.next;
        self.next += 1;
        let mut rec = OrderRecord {
            id: format!("o{i}"),
            objecttype: "order",
            order_key: order_key(i),
            cust_key: self.rng.gen_range(1..=self.customers),
            total_price: cents(&mut self.rng, PRICE_CENTS),
            priority: PRIORITIES[self.rng.gen_range(0..PRIORITIES.len())],
            ship_priority: 0,
            padding: String::new(),
        };
        let base = serde_json::to_vec(&rec).expect("serializable").len();
        rec.padding = self.padding(ORDER_BYTES.saturating_sub(base));
        Some(rec)
    }
}

/// Infinite stream of customers.
pub struct CustomerGenerator {
    rng: ChaCha8Rng,
    next: u64,
}

impl CustomerGenerator {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            next: 0,
        }
    }
}

impl Iterator for CustomerGenerator {
    type Item = CustomerRecord;

    fn next(&mut self) -> Option<CustomerRecord> {
        let i = self.next;
        self.next += 1;
        let nation_key = self.rng.gen_range(0..25i64);
        let phone = format!(
            "{}-{:03}-{:03}-{:04}",
            nation_key + 10,
            self.rng.gen_range(100..1000),
            self.rng.gen_range(100..1000),
            self.rng.gen_range(1000..10000)
        );
        Some(CustomerRecord {
            id: format!("c{i}"),
            objecttype: "customer",
            cust_key: i as i64 + 1,
            name: format!("Customer#{:09}", i + 1),
            nation_key,
            phone,
            acct_bal: cents(&mut self.rng, BALANCE_CENTS),
            segment: SEGMENTS[self.rng.gen_range(0..SEGMENTS.len())],
        })
    }
}

/// Serialized records of one spec, one `Vec<u8>` per record, no separators.
pub fn record_lines(kind: GenKind, seed: u64) -> Box<dyn Iterator<Item = Vec<u8>> + Send> {
    match kind {
        GenKind::Orders => Box::new(
            OrderGenerator::new(seed).map(|r| serde_json::to_vec(&r).expect("serializable")),
        ),
        GenKind::CustomerNation => {
            let nations = nation_table();
            let mut tail = Vec::new();
            for n in &nations {
                tail.push(b',');
                serde_json::to_writer(&mut tail, n).expect("serializable");
            }
            tail.push(b']');
            Box::new(CustomerGenerator::new(seed).map(move |c| {
                let mut line = Vec::with_capacity(tail.len() + 256);
                line.push(b'[');
                serde_json::to_writer(&mut line, &c).expect("serializable");
                line.extend_from_slice(&tail);
                line
            }))
        }
    }
}

/// Writes `spec.count` records in the spec's format.
pub fn write_records<W: Write>(spec: &GenSpec, out: W) -> io::Result<()> {
    write_lines(record_lines(spec.kind, spec.seed).take(spec.count as usize), spec.format, out)
}

fn write_lines<W: Write>(
    lines: impl Iterator<Item = Vec<u8>>,
    format: WireFormat,
    mut out: W,
) -> io::Result<()> {
    match format {
        WireFormat::Ndjson => {
            for l in lines {
                out.write_all(&l)?;
                out.write_all(b"\n")?;
            }
        }
        WireFormat::JsonArray => {
            out.write_all(b"[")?;
            for (i, l) in lines.enumerate() {
                out.write_all(if i == 0 { b"\n" } else { b",\n" })?;
                out.write_all(&l)?;
            }
            out.write_all(b"\n]\n")?;
        }
    }
    out.flush()
}

pub fn gen_orders(spec: &GenSpec, path: &Path) -> io::Result<()> {
    let spec = GenSpec {
        kind: GenKind::Orders,
        ..*spec
    };
    write_records(&spec, BufWriter::new(File::create(path)?))
}

pub fn gen_customer_nation(spec: &GenSpec, path: &Path) -> io::Result<()> {
    let spec = GenSpec {
        kind: GenKind::CustomerNation,
        ..*spec
    };
    write_records(&spec, BufWriter::new(File::create(path)?))
}

/// Generated records as a byte stream in NDJSON form, never materialized.
pub struct GeneratedReader {
    lines: Box<dyn Iterator<Item = Vec<u8>> + Send>,
    current: Vec<u8>,
    offset: usize,
}

impl GeneratedReader {
    pub fn new(kind: GenKind, count: u64, seed: u64) -> Self {
        Self {
            lines: Box::new(record_lines(kind, seed).take(count as usize)),
            current: Vec::new(),
            offset: 0,
        }
    }
}

impl Read for GeneratedReader {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if self.offset == self.current.len() {
            match self.lines.next() {
                Some(mut l) => {
                    l.push(b'\n');
                    self.current = l;
                    self.offset = 0;
                }
                None => return Ok(0),
            }
        }
        let n = buf.len().min(self.current.len() - self.offset);
        buf[..n].copy_from_slice(&self.current[self.offset..self.offset + n]);
        self.offset += n;
        Ok(n)
    }
}

fn tbl_reader(path: &Path) -> io::Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new()
        .delimiter(b'|')
        .has_headers(false)
        .flexible(true)
        .from_reader(File::open(path)?))
}

fn field<'a>(row: &'a csv::StringRecord, i: usize, path: &Path) -> io::Result<&'a str> {
    row.get(i).ok_or_else(|| {
        io::Error::new(
            io::ErrorKind::InvalidData,
            format!("{}: row has no column {i}", path.display()),
        )
    })
}

fn number<T: FromStr>(s: &str, path: &Path) -> io::Result<T> {
    s.trim().parse().map_err(|_| {
        io::Error::new(
            io::ErrorKind::InvalidData,
            format!("{}: `{s}` is not a number", path.display()),
        )
    })
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, e)
}

fn known(choices: &[&'static str], s: &str) -> Option<&'static str> {
    choices.iter().copied().find(|c| *c == s)
}

/// Converts an official `orders.tbl` into order records (padded like
/// generated ones).
pub fn import_orders_tbl(tbl: &Path, format: WireFormat, out: &Path) -> io::Result<u64> {
    let mut pad = OrderGenerator::new(0);
    let mut rows = tbl_reader(tbl)?;
    let mut lines = Vec::new();
    for (i, row) in rows.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let priority = field(&row, 5, tbl)?;
        let priority = known(&PRIORITIES, priority.trim()).ok_or_else(|| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{}: unknown priority `{priority}`", tbl.display()),
            )
        })?;
        let mut rec = OrderRecord {
            id: format!("o{i}"),
            objecttype: "order",
            order_key: number(field(&row, 0, tbl)?, tbl)?,
            cust_key: number(field(&row, 1, tbl)?, tbl)?,
            total_price: number(field(&row, 3, tbl)?, tbl)?,
            priority,
            ship_priority: number(field(&row, 7, tbl)?, tbl)?,
            padding: String::new(),
        };
        let base = serde_json::to_vec(&rec)?.len();
        rec.padding = pad.padding(ORDER_BYTES.saturating_sub(base));
        lines.push(serde_json::to_vec(&rec)?);
    }
    let n = lines.len() as u64;
    write_lines(lines.into_iter(), format, BufWriter::new(File::create(out)?))?;
    Ok(n)
}

/// Converts official `customer.tbl` and `nation.tbl` into customer/nation
/// bundles.
pub fn import_customer_tbl(
    customer: &Path,
    nation: &Path,
    format: WireFormat,
    out: &Path,
) -> io::Result<u64> {
    let mut nations = Vec::new();
    for row in tbl_reader(nation)?.records() {
        let row = row.map_err(csv_err)?;
        let key: i64 = number(field(&row, 0, nation)?, nation)?;
        nations.push(NationRecord {
            id: format!("n{key}"),
            objecttype: "nation",
            nation_key: key,
            name: field(&row, 1, nation)?.to_string(),
            region_key: number(field(&row, 2, nation)?, nation)?,
            comment: field(&row, 3, nation)?.to_string(),
        });
    }
    let mut lines = Vec::new();
    for (i, row) in tbl_reader(customer)?.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let segment = field(&row, 6, customer)?.trim();
        let c = CustomerRecord {
            id: format!("c{i}"),
            objecttype: "customer",
            cust_key: number(field(&row, 0, customer)?, customer)?,
            name: field(&row, 1, customer)?.to_string(),
            nation_key: number(field(&row, 3, customer)?, customer)?,
            phone: field(&row, 4, customer)?.to_string(),
            acct_bal: number(field(&row, 5, customer)?, customer)?,
            segment: known(&SEGMENTS, segment).unwrap_or("HOUSEHOLD"),
        };
        let mut line = vec![b'['];
        serde_json::to_writer(&mut line, &c)?;
        for n in &nations {
            line.push(b',');
            serde_json::to_writer(&mut line, n)?;
        }
        line.push(b']');
        lines.push(line);
    }
    let n = lines.len() as u64;
    write_lines(lines.into_iter(), format, BufWriter::new(File::create(out)?))?;
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn render(spec: GenSpec) -> Vec<u8> {
        let mut out = Vec::new();
        write_records(&spec, &mut out).unwrap();
        out
    }

    #[test]
    fn zero_count_is_empty() {
        assert!(render(GenSpec::new(GenKind::Orders, 0, 1)).is_empty());
    }

    #[test]
    fn deterministic() {
        let spec = GenSpec::new(GenKind::Orders, 50, 42);
        assert_eq!(render(spec), render(spec));
        assert_ne!(render(spec), render(GenSpec { seed: 43, ..spec }));
    }

    #[test]
    fn order_size_near_target() {
        let out = render(GenSpec::new(GenKind::Orders, 200, 7));
        let lines: Vec<&[u8]> = out.split(|b| *b == b'\n').filter(|l| !l.is_empty()).collect();
        assert_eq!(lines.len(), 200);
        let mean = lines.iter().map(|l| l.len()).sum::<usize>() as f64 / 200.0;
        assert!((mean - 4096.0).abs() < 0.2 * 4096.0, "{mean}");
    }

    #[test]
    fn keys_unique() {
        let mut keys: Vec<i64> = OrderGenerator::new(1).take(1000).map(|o| o.order_key).collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), 1000);
    }

    #[test]
    fn nation_table_shape() {
        let t = nation_table();
        assert_eq!(t.len(), 25);
        let regions: std::collections::BTreeSet<i64> = t.iter().map(|n| n.region_key).collect();
        assert_eq!(regions.len(), 5);
        assert_eq!(REGIONS[3], "EUROPE");
        assert_eq!(t[7].region_key, 3);
    }

    #[test]
    fn reader_matches_writer() {
        let mut streamed = Vec::new();
        GeneratedReader::new(GenKind::CustomerNation, 5, 3)
            .read_to_end(&mut streamed)
            .unwrap();
        assert_eq!(streamed, render(GenSpec::new(GenKind::CustomerNation, 5, 3)));
    }

    #[test]
    fn array_format() {
        let out = render(GenSpec::new(GenKind::Orders, 3, 1).with_format(WireFormat::JsonArray));
        let v: serde_json::Value = serde_json::from_slice(&out).unwrap();
        assert_eq!(v.as_array().unwrap().len(), 3);
    }
}
