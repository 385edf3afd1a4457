//! Affinity ingestion, descriptor join, fold assignment and the prepared
//! dataset cache.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protein::DynamicDescriptor;
use crate::smiles::MolecularGraph;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("affinity value must be positive, got {0}")]
    NonPositiveValue(f64),
    #[error("line {line}: duplicate pdb_id {pdb_id} in descriptor table")]
    DuplicatePdbId { pdb_id: String, line: u64 },
    #[error("no records")]
    NoRecords,
    #[error("{records} records cannot fill {k} folds")]
    TooFewRecords { records: usize, k: usize },
    #[error("dataset cache: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Measure {
    Kd,
    Ki,
    Ic50,
    Kiba,
}

impl Measure {
    fn code(self) -> u8 {
        match self {
            Measure::Kd => 0,
            Measure::Ki => 1,
            Measure::Ic50 => 2,
            Measure::Kiba => 3,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Measure::Kd,
            1 => Measure::Ki,
            2 => Measure::Ic50,
            3 => Measure::Kiba,
            _ => return None,
        })
    }
}

impl FromStr for Measure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "kd" => Ok(Measure::Kd),
            "ki" => Ok(Measure::Ki),
            "ic50" => Ok(Measure::Ic50),
            "kiba" => Ok(Measure::Kiba),
            other => Err(format!("unknown measure {other:?}")),
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Measure::Kd => "Kd",
            Measure::Ki => "Ki",
            Measure::Ic50 => "IC50",
            Measure::Kiba => "KIBA",
        })
    }
}

/// `-log10(raw / 1e9)` for a concentration in nM.
pub fn transform_affinity(raw_nm: f64) -> Result<f64, DataError> {
    if !(raw_nm > 0.0) || !raw_nm.is_finite() {
        return Err(DataError::NonPositiveValue(raw_nm));
    }
    Ok(9.0 - raw_nm.log10())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffinityRecord {
    pub smiles: String,
    pub protein_sequence: String,
    /// Upper-cased PDB identifier.
    pub pdb_id: String,
    pub measure: Measure,
    /// Measured concentration in nM; absent for KIBA scores.
    pub raw_value: Option<f64>,
    pub affinity: f64,
}

impl AffinityRecord {
    pub fn new(smiles: &str, sequence: &str, pdb_id: &str, measure: Measure, value: f64) -> Result<Self, DataError> {
        let (raw_value, affinity) = match measure {
            Measure::Kiba => (None, value),
            _ => (Some(value), transform_affinity(value)?),
        };
        Ok(Self {
            smiles: smiles.trim().to_string(),
            protein_sequence: sequence.trim().to_string(),
            pdb_id: normalize_pdb_id(pdb_id),
            measure,
            raw_value,
            affinity,
        })
    }
}

pub fn normalize_pdb_id(id: &str) -> String {
    id.trim().to_ascii_uppercase()
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize, DataError> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
        .ok_or_else(|| DataError::Malformed {
            line: 1,
            message: format!("missing column {name:?}"),
        })
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn row_error(line: u64, e: impl fmt::Display) -> DataError {
    DataError::Malformed {
        line,
        message: e.to_string(),
    }
}

fn csv_line(e: &csv::Error) -> u64 {
    e.position().map_or(0, |p| p.line())
}

/// Reads `smiles, protein_sequence, pdb_id, measure, value` rows. Values in
/// nM are transformed; a non-positive value is a malformed row.
pub fn read_affinities<R: Read>(input: R) -> Result<Vec<AffinityRecord>, DataError> {
    let mut rdr = reader(input);
    let headers = rdr.headers().map_err(|e| row_error(1, e))?.clone();
    let cols = ["smiles", "protein_sequence", "pdb_id", "measure", "value"].map(|name| column_index(&headers, name));
    let [smiles, seq, pdb, measure, value] = [
        cols[0].as_ref().map_err(clone_err)?,
        cols[1].as_ref().map_err(clone_err)?,
        cols[2].as_ref().map_err(clone_err)?,
        cols[3].as_ref().map_err(clone_err)?,
        cols[4].as_ref().map_err(clone_err)?,
    ]
    .map(|c| *c);
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| row_error(csv_line(&e), &e))?;
        let line = row.position().map_or(0, |p| p.line());
        let get = |i: usize| row.get(i).ok_or_else(|| row_error(line, format!("missing field {i}")));
        let m: Measure = get(measure)?.parse().map_err(|e| row_error(line, e))?;
        let v: f64 = get(value)?
            .parse()
            .map_err(|_| row_error(line, format!("bad value {:?}", row.get(value).unwrap_or(""))))?;
        let record = AffinityRecord::new(get(smiles)?, get(seq)?, get(pdb)?, m, v).map_err(|e| row_error(line, e))?;
        out.push(record);
    }
    if out.is_empty() {
        return Err(DataError::NoRecords);
    }
    Ok(out)
}

fn clone_err(e: &DataError) -> DataError {
    match e {
        DataError::Malformed { line, message } => DataError::Malformed {
            line: *line,
            message: message.clone(),
        },
        other => DataError::Cache(other.to_string()),
    }
}

pub type DescriptorTable = BTreeMap<String, DynamicDescriptor>;

/// Reads `pdb_id, avg_rmsf, avg_gyr, div_se, div_mm`; ids are matched
/// case-insensitively and must be unique.
pub fn read_descriptors<R: Read>(input: R) -> Result<DescriptorTable, DataError> {
    let mut rdr = reader(input);
    let headers = rdr.headers().map_err(|e| row_error(1, e))?.clone();
    let pdb = column_index(&headers, "pdb_id")?;
    let cols = [
        column_index(&headers, "avg_rmsf")?,
        column_index(&headers, "avg_gyr")?,
        column_index(&headers, "div_se")?,
        column_index(&headers, "div_mm")?,
    ];
    let mut table = DescriptorTable::new();
    for row in rdr.records() {
        let row = row.map_err(|e| row_error(csv_line(&e), &e))?;
        let line = row.position().map_or(0, |p| p.line());
        let id = normalize_pdb_id(row.get(pdb).unwrap_or(""));
        if id.is_empty() {
            return Err(row_error(line, "empty pdb_id"));
        }
        let mut vals = [0.0; 4];
        for (slot, &c) in vals.iter_mut().zip(&cols) {
            let text = row.get(c).unwrap_or("");
            *slot = text
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| row_error(line, format!("bad descriptor value {text:?}")))?;
        }
        if table.contains_key(&id) {
            return Err(DataError::DuplicatePdbId { pdb_id: id, line });
        }
        table.insert(id, DynamicDescriptor::new(vals[0], vals[1], vals[2], vals[3]));
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DropReason {
    NegativeAffinity,
    NoDescriptor,
    InvalidSmiles,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropReason::NegativeAffinity => "negative affinity",
            DropReason::NoDescriptor => "no descriptor",
            DropReason::InvalidSmiles => "invalid smiles",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dropped {
    /// Position of the record in the input list.
    pub index: usize,
    pub pdb_id: String,
    pub reason: DropReason,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DropReport {
    pub dropped: Vec<Dropped>,
    /// Surviving rows that repeat an earlier `(smiles, pdb_id, measure)`.
    pub duplicates: usize,
}

impl DropReport {
    pub fn count(&self, reason: DropReason) -> usize {
        self.dropped.iter().filter(|d| d.reason == reason).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedRecord {
    pub record: AffinityRecord,
    pub descriptor: DynamicDescriptor,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<PreparedRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }
}

/// Drops negative affinities, records without a descriptor row and
/// unparseable SMILES, in that order of precedence.
pub fn filter_records(records: Vec<AffinityRecord>, table: &DescriptorTable) -> (Vec<AffinityRecord>, DropReport) {
    let mut report = DropReport::default();
    let mut kept = Vec::with_capacity(records.len());
    let mut seen = HashSet::new();
    for (index, r) in records.into_iter().enumerate() {
        let reason = if r.affinity < 0.0 {
            Some((DropReason::NegativeAffinity, format!("affinity {}", r.affinity)))
        } else if !table.contains_key(&r.pdb_id) {
            Some((DropReason::NoDescriptor, String::new()))
        } else {
            MolecularGraph::from_smiles(&r.smiles)
                .err()
                .map(|e| (DropReason::InvalidSmiles, e.to_string()))
        };
        match reason {
            Some((reason, detail)) => {
                log::debug!("dropping record {index} ({}): {reason} {detail}", r.pdb_id);
                report.dropped.push(Dropped {
                    index,
                    pdb_id: r.pdb_id.clone(),
                    reason,
                    detail,
                });
            }
            None => {
                if !seen.insert((r.smiles.clone(), r.pdb_id.clone(), r.measure)) {
                    report.duplicates += 1;
                }
                kept.push(r);
            }
        }
    }
    if report.duplicates > 0 {
        log::warn!("{} duplicate (smiles, pdb_id, measure) rows kept", report.duplicates);
    }
    (kept, report)
}

/// Attaches descriptors by PDB id. Records without a match are dropped and
/// reported.
pub fn join_descriptors(records: Vec<AffinityRecord>, table: &DescriptorTable) -> (Dataset, DropReport) {
    let mut report = DropReport::default();
    let mut out = Vec::with_capacity(records.len());
    for (index, record) in records.into_iter().enumerate() {
        match table.get(&normalize_pdb_id(&record.pdb_id)) {
            Some(d) => out.push(PreparedRecord { descriptor: *d, record }),
            None => report.dropped.push(Dropped {
                index,
                pdb_id: record.pdb_id.clone(),
                reason: DropReason::NoDescriptor,
                detail: String::new(),
            }),
        }
    }
    (Dataset { records: out }, report)
}

/// Filter then join; indices in the report refer to the input list.
pub fn prepare(records: Vec<AffinityRecord>, table: &DescriptorTable) -> (Dataset, DropReport) {
    let (kept, report) = filter_records(records, table);
    let (dataset, join_report) = join_descriptors(kept, table);
    debug_assert!(join_report.dropped.is_empty());
    (dataset, report)
}

/// Per-record fold labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub k: usize,
    pub assignments: Vec<usize>,
}

impl FoldSplit {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

/// Seeded shuffle followed by round-robin fold assignment.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldSplit, DataError> {
    if k == 0 || n < k {
        return Err(DataError::TooFewRecords { records: n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignments = vec![0; n];
    for (pos, &record) in order.iter().enumerate() {
        assignments[record] = pos % k;
    }
    Ok(FoldSplit { k, assignments })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub targets: usize,
    pub ligands: usize,
    pub entries: usize,
    pub histogram: Vec<HistogramBin>,
}

/// Target/ligand/entry counts plus an affinity histogram with bins
/// `[i·w, (i+1)·w)` anchored at zero.
pub fn summarize(dataset: &Dataset, bin_width: f64) -> Summary {
    let targets: HashSet<&str> = dataset.records.iter().map(|r| r.record.pdb_id.as_str()).collect();
    let ligands: HashSet<&str> = dataset.records.iter().map(|r| r.record.smiles.as_str()).collect();
    let mut bins: BTreeMap<i64, usize> = BTreeMap::new();
    if bin_width > 0.0 {
        for r in &dataset.records {
            *bins.entry((r.record.affinity / bin_width).floor() as i64).or_default() += 1;
        }
    }
    let histogram = match (bins.keys().next(), bins.keys().last()) {
        (Some(&lo), Some(&hi)) => (lo..=hi)
            .map(|b| HistogramBin {
                lower: b as f64 * bin_width,
                upper: (b + 1) as f64 * bin_width,
                count: bins.get(&b).copied().unwrap_or(0),
            })
            .collect(),
        _ => Vec::new(),
    };
    Summary {
        targets: targets.len(),
        ligands: ligands.len(),
        entries: dataset.len(),
        histogram,
    }
}

pub fn write_summary<W: Write>(summary: &Summary, out: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| DataError::Io(e.into());
    w.write_record(["targets", "ligands", "entries"]).map_err(io)?;
    w.write_record([summary.targets, summary.ligands, summary.entries].map(|v| v.to_string()))
        .map_err(io)?;
    w.flush()?;
    Ok(())
}

pub fn write_histogram<W: Write>(summary: &Summary, out: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| DataError::Io(e.into());
    w.write_record(["bin_lower", "bin_upper", "count"]).map_err(io)?;
    for b in &summary.histogram {
        w.write_record([b.lower.to_string(), b.upper.to_string(), b.count.to_string()])
            .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Groups record indices by the exact affinity bucket, for callers that
/// need per-bin membership instead of counts.
pub fn bucket_members(dataset: &Dataset, bin_width: f64) -> HashMap<i64, Vec<usize>> {
    let mut out: HashMap<i64, Vec<usize>> = HashMap::new();
    for (i, r) in dataset.records.iter().enumerate() {
        out.entry((r.record.affinity / bin_width).floor() as i64)
            .or_default()
            .push(i);
    }
    out
}

const CACHE_MAGIC: &[u8; 8] = b"DTAPREP\0";
const CACHE_VERSION: u32 = 1;

/// Prepared-dataset cache, all integers and floats little-endian:
///
/// ```text
/// magic    8 bytes  "DTAPREP\0"
/// version  u32      1
/// count    u64
/// count × record:
///   smiles, protein_sequence, pdb_id   (u32 byte length + UTF-8)
///   measure  u8     0 Kd, 1 Ki, 2 IC50, 3 KIBA
///   has_raw  u8     0 or 1, followed by raw_value f64 when 1
///   affinity f64
///   avg_rmsf, avg_gyr, div_se, div_mm  f64 each
/// ```
pub fn write_cache<W: Write>(dataset: &Dataset, mut out: W) -> Result<(), DataError> {
    out.write_all(CACHE_MAGIC)?;
    out.write_all(&CACHE_VERSION.to_le_bytes())?;
    out.write_all(&(dataset.len() as u64).to_le_bytes())?;
    for p in &dataset.records {
        let r = &p.record;
        for s in [&r.smiles, &r.protein_sequence, &r.pdb_id] {
            out.write_all(&(s.len() as u32).to_le_bytes())?;
            out.write_all(s.as_bytes())?;
        }
        out.write_all(&[r.measure.code()])?;
        match r.raw_value {
            Some(v) => {
                out.write_all(&[1])?;
                out.write_all(&v.to_le_bytes())?;
            }
            None => out.write_all(&[0])?,
        }
        out.write_all(&r.affinity.to_le_bytes())?;
        for v in p.descriptor.as_array() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

struct ByteReader<R> {
    inner: R,
}

impl<R: Read> ByteReader<R> {
    fn exact<const N: usize>(&mut self) -> Result<[u8; N], DataError> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| DataError::Cache("truncated file".into()))?;
        Ok(buf)
    }

    fn f64(&mut self) -> Result<f64, DataError> {
        Ok(f64::from_le_bytes(self.exact()?))
    }

    fn string(&mut self) -> Result<String, DataError> {
        let len = u32::from_le_bytes(self.exact()?) as usize;
        let mut buf = vec![0u8; len];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| DataError::Cache("truncated file".into()))?;
        String::from_utf8(buf).map_err(|_| DataError::Cache("invalid UTF-8".into()))
    }
}

pub fn read_cache<R: Read>(input: R) -> Result<Dataset, DataError> {
    let mut r = ByteReader { inner: input };
    if &r.exact::<8>()? != CACHE_MAGIC {
        return Err(DataError::Cache("not a prepared dataset".into()));
    }
    let version = u32::from_le_bytes(r.exact()?);
    if version != CACHE_VERSION {
        return Err(DataError::Cache(format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(r.exact()?) as usize;
    let mut records = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let smiles = r.string()?;
        let protein_sequence = r.string()?;
        let pdb_id = r.string()?;
        let [code] = r.exact::<1>()?;
        let measure = Measure::from_code(code).ok_or_else(|| DataError::Cache(format!("bad measure code {code}")))?;
        let raw_value = match r.exact::<1>()? {
            [0] => None,
            [1] => Some(r.f64()?),
            [other] => return Err(DataError::Cache(format!("bad raw-value flag {other}"))),
        };
        let affinity = r.f64()?;
        let d = [r.f64()?, r.f64()?, r.f64()?, r.f64()?];
        records.push(PreparedRecord {
            record: AffinityRecord {
                smiles,
                protein_sequence,
                pdb_id,
                measure,
                raw_value,
                affinity,
            },
            descriptor: DynamicDescriptor::new(d[0], d[1], d[2], d[3]),
        });
    }
    let mut rest = [0u8; 1];
    if r.inner.read(&mut rest)? != 0 {
        return Err(DataError::Cache("trailing bytes".into()));
    }
    Ok(Dataset { records })
}
