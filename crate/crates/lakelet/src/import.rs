//! Split-parallel import of CSV table files into the raw zone.
//!
//! Splits partition the *value domain* of the split column, not the row
//! count, so skewed ids produce skewed splits. Workers share nothing but the
//! read-only source file; a single manifest commit makes the import
//! all-or-nothing.

use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;

use crate::catalog::{dataset_node, Catalog, DatasetDescriptor, Format, JobKind, LineageEdge};
use crate::error::{LakeError, Result};
use crate::schema::SchemaDescriptor;
use crate::store::{content_hash, LakeStore, ObjectKey, Zone};
use crate::util::now_millis;

/// CSV file with a header row standing in for one relational table.
#[derive(Debug, Clone)]
pub struct TableSource {
    pub path: PathBuf,
    pub table_name: String,
    pub split_column: Option<String>,
}

/// Inclusive integer range of split-column values handled by one worker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SplitRange {
    pub lo: i64,
    pub hi: i64,
}

impl SplitRange {
    pub fn contains(&self, v: i64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ImportReport {
    pub dataset: String,
    pub rows_imported: u64,
    /// Non-empty splits; equals `files_written`.
    pub splits_used: usize,
    pub files_written: usize,
    pub duration_ms: u64,
    /// True when the source had no rows and nothing was committed.
    pub no_op: bool,
    /// Split column was not integer-valued; fell back to one split.
    pub non_numeric_split_fallback: bool,
    /// The same source content was already imported into this dataset.
    pub already_imported_warning: bool,
    /// Records skipped by the lenient parser.
    pub malformed_rows: u64,
}

/// Uniform partition of `[min, max]` into at most `num_splits` ranges whose
/// widths differ by at most one.
fn partition_domain(min: i64, max: i64, num_splits: usize) -> Vec<SplitRange> {
    let domain = (max as i128 - min as i128 + 1) as u128;
    let k = (num_splits as u128).min(domain).max(1);
    let base = domain / k;
    let rem = domain % k;
    let mut ranges = Vec::with_capacity(k as usize);
    let mut lo = min as i128;
    for i in 0..k {
        let width = base + u128::from(i < rem);
        let hi = lo + width as i128 - 1;
        ranges.push(SplitRange {
            lo: lo as i64,
            hi: hi as i64,
        });
        lo = hi + 1;
    }
    ranges
}

fn csv_reader(path: &PathBuf, strict: bool) -> Result<csv::Reader<std::fs::File>> {
    Ok(csv::ReaderBuilder::new()
        .flexible(!strict)
        .from_path(path)?)
}

struct TableScan {
    headers: Vec<String>,
    rows: u64,
    malformed: u64,
    /// Split-column values, one per kept row; `None` when unset/non-numeric.
    split_values: Option<Vec<i64>>,
}

/// Planning pass: counts rows, collects split values, validates the header.
fn scan_table(source: &TableSource, strict: bool) -> Result<TableScan> {
    let mut reader = csv_reader(&source.path, strict)?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| LakeError::ImportAborted(format!("{}: {e}", source.path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let split_idx = match &source.split_column {
        Some(col) => Some(headers.iter().position(|h| h == col).ok_or_else(|| {
            LakeError::ImportAborted(format!(
                "split column {col:?} not in header of {}",
                source.path.display()
            ))
        })?),
        None => None,
    };

    let mut rows = 0u64;
    let mut malformed = 0u64;
    let mut split_values: Option<Vec<i64>> = split_idx.map(|_| Vec::new());
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) if strict => {
                return Err(LakeError::ImportAborted(format!(
                    "{}: {e}",
                    source.path.display()
                )))
            }
            Err(_) => {
                malformed += 1;
                continue;
            }
        };
        rows += 1;
        if let (Some(idx), Some(values)) = (split_idx, split_values.as_mut()) {
            match record.get(idx).and_then(|v| v.trim().parse::<i64>().ok()) {
                Some(v) => values.push(v),
                None => {
                    split_values = None; // non-numeric: caller falls back
                }
            }
        }
    }
    Ok(TableScan {
        headers,
        rows,
        malformed,
        split_values,
    })
}

/// Plans at most `num_splits` disjoint ranges covering `[min, max]` of the
/// split column. The empty table plans empty.
pub fn plan_splits(source: &TableSource, num_splits: usize) -> Result<Vec<SplitRange>> {
    if num_splits == 0 {
        return Err(LakeError::ImportAborted("num_splits must be positive".into()));
    }
    let col = source.split_column.clone().ok_or_else(|| {
        LakeError::ImportAborted("plan_splits requires a split column".into())
    })?;
    let scan = scan_table(source, true)?;
    if scan.rows == 0 {
        return Ok(Vec::new());
    }
    let Some(values) = scan.split_values else {
        // Strict scan kept rows but a value failed to parse as i64.
        let mut reader = csv_reader(&source.path, true)?;
        let idx = scan.headers.iter().position(|h| h == &col).unwrap();
        let offender = reader
            .records()
            .filter_map(|r| r.ok())
            .find_map(|r| {
                let cell = r.get(idx).unwrap_or("").to_string();
                cell.trim().parse::<i64>().is_err().then_some(cell)
            })
            .unwrap_or_default();
        return Err(LakeError::NonNumericSplitColumn {
            column: col,
            value: offender,
        });
    };
    let min = *values.iter().min().unwrap();
    let max = *values.iter().max().unwrap();
    Ok(partition_domain(min, max, num_splits))
}

/// Worker pass: re-reads the source and serializes the rows of one split
/// (or all rows when `range` is `None`) as a CSV part file.
fn build_split_file(
    source: &TableSource,
    strict: bool,
    split_idx: Option<usize>,
    range: Option<SplitRange>,
) -> Result<(Vec<u8>, u64)> {
    let mut reader = csv_reader(&source.path, strict)?;
    let headers = reader
        .headers()
        .map_err(|e| LakeError::ImportAborted(format!("{}: {e}", source.path.display())))?
        .clone();
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(&headers)?;
    let mut rows = 0u64;
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) if strict => {
                return Err(LakeError::ImportAborted(format!(
                    "{}: {e}",
                    source.path.display()
                )))
            }
            Err(_) => continue,
        };
        if let (Some(idx), Some(range)) = (split_idx, range) {
            let keep = record
                .get(idx)
                .and_then(|v| v.trim().parse::<i64>().ok())
                .map(|v| range.contains(v))
                .unwrap_or(false);
            if !keep {
                continue;
            }
        }
        writer.write_record(&record)?;
        rows += 1;
    }
    writer.flush()?;
    let bytes = writer
        .into_inner()
        .map_err(|e| LakeError::ImportAborted(e.to_string()))?;
    Ok((bytes, rows))
}

/// Imports a table into `raw/<target_dataset>`: one CSV part file per
/// non-empty split, a single manifest commit, and a lineage edge back to the
/// source. The multiset of imported rows equals the source rows exactly.
pub fn import_table(
    store: &LakeStore,
    catalog: &Catalog,
    source: &TableSource,
    target_dataset: &str,
    num_splits: usize,
    strict: bool,
) -> Result<ImportReport> {
    let started = Instant::now();
    if num_splits == 0 {
        return Err(LakeError::ImportAborted("num_splits must be positive".into()));
    }
    let source_bytes = std::fs::read(&source.path)?;
    let source_hash = content_hash(&source_bytes);
    drop(source_bytes);

    let scan = scan_table(source, strict)?;
    let mut report = ImportReport {
        dataset: target_dataset.to_string(),
        rows_imported: 0,
        splits_used: 0,
        files_written: 0,
        duration_ms: 0,
        no_op: false,
        non_numeric_split_fallback: false,
        already_imported_warning: false,
        malformed_rows: scan.malformed,
    };
    if scan.rows == 0 {
        report.no_op = true;
        report.duration_ms = started.elapsed().as_millis() as u64;
        return Ok(report);
    }

    let split_idx = source
        .split_column
        .as_ref()
        .and_then(|col| scan.headers.iter().position(|h| h == col));
    let ranges: Vec<Option<SplitRange>> = match (&scan.split_values, num_splits) {
        (Some(values), n) if n > 1 => {
            let min = *values.iter().min().unwrap();
            let max = *values.iter().max().unwrap();
            partition_domain(min, max, n).into_iter().map(Some).collect()
        }
        (Some(_), _) => vec![None],
        (None, _) => {
            if source.split_column.is_some() {
                report.non_numeric_split_fallback = true;
            }
            vec![None]
        }
    };

    // Per-split workers run concurrently; each re-reads the source file.
    let mut parts: Vec<(usize, Vec<u8>, u64)> = Vec::new();
    std::thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::new();
        for (i, range) in ranges.iter().enumerate() {
            let range = *range;
            let idx = if range.is_some() { split_idx } else { None };
            handles.push((
                i,
                scope.spawn(move || build_split_file(source, strict, idx, range)),
            ));
        }
        for (i, handle) in handles {
            let (bytes, rows) = handle
                .join()
                .map_err(|_| LakeError::ImportAborted("split worker panicked".into()))??;
            if rows > 0 {
                parts.push((i, bytes, rows));
            }
        }
        Ok(())
    })?;
    parts.sort_by_key(|(i, _, _)| *i);

    if !catalog.is_registered(Zone::Raw, target_dataset) {
        catalog.register_dataset(DatasetDescriptor {
            name: target_dataset.to_string(),
            zone: Zone::Raw,
            format: Format::Csv,
            created_at: now_millis(),
            source: format!("table:{}", source.table_name),
            schema_hint: Some(SchemaDescriptor::from_header_names(&scan.headers)),
        })?;
    }

    let source_node = format!("source:{}@sha256-{}", source.table_name, &source_hash[..12]);
    let target_node = dataset_node(Zone::Raw, target_dataset);
    report.already_imported_warning = catalog.has_edge(&source_node, &target_node);

    // Each import run gets its own partition so filenames never collide with
    // earlier runs; bump a retry suffix past any orphans of aborted attempts.
    let next_version = store
        .current_version(target_dataset, Zone::Raw)?
        .unwrap_or(0)
        + 1;
    let mut refs = Vec::new();
    'attempt: for attempt in 0..10 {
        let partition = if attempt == 0 {
            format!("import-{next_version:04}")
        } else {
            format!("import-{next_version:04}-r{attempt}")
        };
        refs.clear();
        for (i, bytes, rows) in &parts {
            let key = ObjectKey::new(
                Zone::Raw,
                target_dataset,
                &partition,
                &format!("part-{i:05}.csv"),
            )?;
            match store.put_object(&key, bytes) {
                Ok(r) => refs.push(r.with_record_count(*rows)),
                Err(LakeError::DuplicateObject(_)) if attempt < 9 => continue 'attempt,
                Err(e) => return Err(e),
            }
        }
        break;
    }

    store.commit_manifest_with_hint(
        target_dataset,
        Zone::Raw,
        refs,
        Some(SchemaDescriptor::from_header_names(&scan.headers)),
    )?;

    if !report.already_imported_warning {
        catalog.record_lineage(LineageEdge {
            from_node: source_node,
            to_node: target_node,
            job_kind: JobKind::BatchImport,
            at: now_millis(),
        })?;
    }

    report.rows_imported = parts.iter().map(|(_, _, r)| r).sum();
    report.splits_used = parts.len();
    report.files_written = parts.len();
    report.duration_ms = started.elapsed().as_millis() as u64;
    debug_assert_eq!(report.rows_imported, scan.rows);
    Ok(report)
}

/// The multiset of (parsed) rows in a committed CSV dataset; used by tests
/// and the re-run warning machinery.
pub fn committed_row_multiset(
    store: &LakeStore,
    dataset: &str,
    zone: Zone,
) -> Result<Vec<Vec<String>>> {
    let mut rows: Vec<Vec<String>> = Vec::new();
    for file in store.list_objects(dataset, zone, None)? {
        let bytes = store.read_object(&file)?;
        let mut reader = csv::ReaderBuilder::new()
            .flexible(true)
            .from_reader(bytes.as_slice());
        for record in reader.records() {
            rows.push(record?.iter().map(str::to_string).collect());
        }
    }
    rows.sort();
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(dir: &std::path::Path, name: &str, content: &str) -> PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    fn ids_csv(dir: &std::path::Path, ids: &[i64]) -> TableSource {
        let mut content = String::from("id,payload\n");
        for id in ids {
            content.push_str(&format!("{id},p{id}\n"));
        }
        TableSource {
            path: write_csv(dir, "t.csv", &content),
            table_name: "t".into(),
            split_column: Some("id".into()),
        }
    }

    #[test]
    fn uniform_partition_of_100_by_4() {
        let dir = tempfile::tempdir().unwrap();
        let source = ids_csv(dir.path(), &(1..=100).collect::<Vec<_>>());
        let plan = plan_splits(&source, 4).unwrap();
        assert_eq!(
            plan,
            vec![
                SplitRange { lo: 1, hi: 25 },
                SplitRange { lo: 26, hi: 50 },
                SplitRange { lo: 51, hi: 75 },
                SplitRange { lo: 76, hi: 100 },
            ]
        );
    }

    #[test]
    fn degenerate_domain_collapses_to_one_range() {
        let dir = tempfile::tempdir().unwrap();
        let source = ids_csv(dir.path(), &[7]);
        assert_eq!(plan_splits(&source, 4).unwrap(), vec![SplitRange { lo: 7, hi: 7 }]);
    }

    #[test]
    fn empty_table_plans_empty() {
        let dir = tempfile::tempdir().unwrap();
        let source = ids_csv(dir.path(), &[]);
        assert!(plan_splits(&source, 4).unwrap().is_empty());
    }

    #[test]
    fn non_numeric_split_column_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(dir.path(), "bad.csv", "id,v\n1,a\nx,b\n");
        let source = TableSource {
            path,
            table_name: "bad".into(),
            split_column: Some("id".into()),
        };
        assert!(matches!(
            plan_splits(&source, 4),
            Err(LakeError::NonNumericSplitColumn { .. })
        ));
    }

    #[test]
    fn every_row_falls_in_exactly_one_range() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let ids: Vec<i64> = (0..400).map(|_| rng.random_range(1..=1_000_000)).collect();
        let dir = tempfile::tempdir().unwrap();
        let source = ids_csv(dir.path(), &ids);
        let plan = plan_splits(&source, 8).unwrap();
        assert!(plan.len() <= 8);
        for id in &ids {
            let holders = plan.iter().filter(|r| r.contains(*id)).count();
            assert_eq!(holders, 1, "id {id} must fall in exactly one range");
        }
        // ranges are consecutive and cover [min, max]
        assert_eq!(plan.first().unwrap().lo, *ids.iter().min().unwrap());
        assert_eq!(plan.last().unwrap().hi, *ids.iter().max().unwrap());
        for w in plan.windows(2) {
            assert_eq!(w[0].hi + 1, w[1].lo);
        }
    }

    fn temp_lake() -> (tempfile::TempDir, LakeStore, Catalog) {
        let dir = tempfile::tempdir().unwrap();
        let store = LakeStore::open(dir.path()).unwrap();
        let catalog = Catalog::open(dir.path()).unwrap();
        (dir, store, catalog)
    }

    #[test]
    fn import_counts_and_files() {
        let (dir, store, catalog) = temp_lake();
        let source = ids_csv(dir.path(), &(1..=1000).collect::<Vec<_>>());
        let report = import_table(&store, &catalog, &source, "sales", 4, true).unwrap();
        assert_eq!(report.rows_imported, 1000);
        assert_eq!(report.files_written, 4);
        assert_eq!(report.splits_used, 4);
        assert!(!report.no_op);
        let files = store.list_objects("sales", Zone::Raw, None).unwrap();
        assert_eq!(files.len(), 4);
        assert_eq!(files.iter().map(|f| f.record_count.unwrap()).sum::<u64>(), 1000);
        // lineage back to the source was recorded
        let edges = catalog.lineage_of(&dataset_node(Zone::Raw, "sales")).unwrap();
        assert_eq!(edges.len(), 1);
        assert!(edges[0].from_node.starts_with("source:t@sha256-"));
    }

    #[test]
    fn empty_import_is_a_no_op() {
        let (dir, store, catalog) = temp_lake();
        let source = ids_csv(dir.path(), &[]);
        let report = import_table(&store, &catalog, &source, "sales", 4, true).unwrap();
        assert!(report.no_op);
        assert_eq!(report.files_written, 0);
        assert_eq!(store.current_version("sales", Zone::Raw).unwrap(), None);
        assert!(!catalog.is_registered(Zone::Raw, "sales"));
    }

    #[test]
    fn rerun_appends_and_warns() {
        let (dir, store, catalog) = temp_lake();
        let source = ids_csv(dir.path(), &(1..=10).collect::<Vec<_>>());
        let first = import_table(&store, &catalog, &source, "sales", 2, true).unwrap();
        assert!(!first.already_imported_warning);
        let second = import_table(&store, &catalog, &source, "sales", 2, true).unwrap();
        assert!(second.already_imported_warning);
        let rows = committed_row_multiset(&store, "sales", Zone::Raw).unwrap();
        assert_eq!(rows.len(), 20, "second run appends duplicate rows");
        assert_eq!(store.current_version("sales", Zone::Raw).unwrap(), Some(2));
    }

    #[test]
    fn non_numeric_fallback_single_split() {
        let (dir, store, catalog) = temp_lake();
        let path = write_csv(dir.path(), "c.csv", "id,v\n1,a\nx,b\n3,c\n");
        let source = TableSource {
            path,
            table_name: "c".into(),
            split_column: Some("id".into()),
        };
        let report = import_table(&store, &catalog, &source, "c", 4, false).unwrap();
        assert!(report.non_numeric_split_fallback);
        assert_eq!(report.files_written, 1);
        assert_eq!(report.rows_imported, 3);
    }

    #[test]
    fn strict_parse_failure_aborts_without_commit() {
        let (dir, store, catalog) = temp_lake();
        // ragged row: strict reader errors
        let path = write_csv(dir.path(), "bad.csv", "a,b\n1,2\n3\n");
        let source = TableSource {
            path,
            table_name: "bad".into(),
            split_column: None,
        };
        assert!(matches!(
            import_table(&store, &catalog, &source, "bad", 1, true),
            Err(LakeError::ImportAborted(_))
        ));
        assert_eq!(store.current_version("bad", Zone::Raw).unwrap(), None);
    }

    #[test]
    fn split_equivalence_across_split_counts() {
        let dir = tempfile::tempdir().unwrap();
        let ids: Vec<i64> = vec![5, 1, 99, 42, 17, 88, 3, 64, 23, 71, 50, 2];
        let source = ids_csv(dir.path(), &ids);
        let mut baseline: Option<Vec<Vec<String>>> = None;
        for n in [1usize, 2, 4, 8] {
            let (_d, store, catalog) = temp_lake();
            import_table(&store, &catalog, &source, "t", n, true).unwrap();
            let rows = committed_row_multiset(&store, "t", Zone::Raw).unwrap();
            match &baseline {
                None => baseline = Some(rows),
                Some(b) => assert_eq!(&rows, b, "multiset differs at {n} splits"),
            }
        }
    }
}
