//! CSV ingestion and emission for power series and farm metadata.
//!
//! Series files carry a header row and RFC-4180 quoting. Wide layout has one
//! timestamp column plus one power column per farm (headers are farm ids);
//! long layout has timestamp, farm-id, and power columns. Timestamps are
//! ISO-8601 (`2010-01-01T00:00:00`, optional ` ` separator or trailing `Z`)
//! or integer epoch seconds, selected by the schema.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::frames::{FarmMeta, TimeSeriesFrame};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestampKind {
    Iso8601,
    EpochSeconds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesLayout {
    /// One power column per farm; headers name the farms.
    Wide,
    /// One row per (timestamp, farm); named columns select farm and power.
    Long {
        farm_column: String,
        power_column: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSchema {
    pub timestamp_column: String,
    pub timestamp_kind: TimestampKind,
    pub layout: SeriesLayout,
}

impl SeriesSchema {
    pub fn wide_iso(timestamp_column: impl Into<String>) -> Self {
        SeriesSchema {
            timestamp_column: timestamp_column.into(),
            timestamp_kind: TimestampKind::Iso8601,
            layout: SeriesLayout::Wide,
        }
    }
}

/// What to do with missing rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapPolicy {
    /// Any gap is an error.
    Reject,
    /// Forward-fill gaps of at most `max_steps` missing rows; longer gaps
    /// are errors. Filled spans are reported.
    ForwardFill { max_steps: usize },
}

/// One filled gap: `missing` rows after timestamp `after`.
#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub farm_id: String,
    pub after: i64,
    pub missing: usize,
}

fn parse_timestamp(raw: &str, kind: TimestampKind) -> Option<i64> {
    match kind {
        TimestampKind::EpochSeconds => raw.trim().parse::<i64>().ok(),
        TimestampKind::Iso8601 => {
            let s = raw.trim().trim_end_matches('Z');
            NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
                .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
                .ok()
                .map(|dt| dt.and_utc().timestamp())
        }
    }
}

/// Parse an ISO-8601 timestamp string (the config-file form).
pub fn parse_timestamp_str(raw: &str) -> Option<i64> {
    parse_timestamp(raw, TimestampKind::Iso8601)
}

pub fn format_timestamp(t: i64, kind: TimestampKind) -> String {
    match kind {
        TimestampKind::EpochSeconds => t.to_string(),
        TimestampKind::Iso8601 => chrono::DateTime::from_timestamp(t, 0)
            .map(|dt| dt.naive_utc().format("%Y-%m-%dT%H:%M:%S").to_string())
            .unwrap_or_else(|| t.to_string()),
    }
}

fn csv_error(path: &Path, row: usize, message: impl Into<String>) -> Error {
    Error::CsvRow {
        path: path.into(),
        row,
        message: message.into(),
    }
}

/// Assemble one frame from (timestamp, power, source-row) triples: sort by
/// timestamp, reject duplicates, infer the step, and apply the gap policy.
fn assemble_frame(
    path: &Path,
    farm_id: &str,
    mut rows: Vec<(i64, f64, usize)>,
    policy: GapPolicy,
    gaps: &mut Vec<GapReport>,
) -> Result<TimeSeriesFrame> {
    if rows.is_empty() {
        return Err(Error::File {
            path: path.into(),
            message: format!("no rows for farm `{farm_id}`"),
        });
    }
    rows.sort_by_key(|&(t, _, _)| t);
    if rows.len() == 1 {
        return TimeSeriesFrame::new(farm_id, rows[0].0, 1, vec![rows[0].1]);
    }
    for pair in rows.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(csv_error(
                path,
                pair[1].2,
                format!("duplicate timestamp for farm `{farm_id}`"),
            ));
        }
    }
    // The step is the smallest gap present; larger gaps must be multiples.
    let step = rows
        .windows(2)
        .map(|p| p[1].0 - p[0].0)
        .min()
        .expect("len >= 2");
    let mut power = Vec::with_capacity(rows.len());
    power.push(rows[0].1);
    for pair in rows.windows(2) {
        let (prev_t, _, _) = pair[0];
        let (t, v, src_row) = pair[1];
        let delta = t - prev_t;
        if delta % step != 0 {
            return Err(csv_error(
                path,
                src_row,
                format!("timestamp not aligned to the {step}s step for farm `{farm_id}`"),
            ));
        }
        let missing = (delta / step - 1) as usize;
        if missing > 0 {
            match policy {
                GapPolicy::Reject => {
                    return Err(csv_error(
                        path,
                        src_row,
                        format!("{missing} missing row(s) before this one for farm `{farm_id}`"),
                    ));
                }
                GapPolicy::ForwardFill { max_steps } => {
                    if missing > max_steps {
                        return Err(csv_error(
                            path,
                            src_row,
                            format!(
                                "gap of {missing} rows exceeds forward-fill cap {max_steps} \
                                 for farm `{farm_id}`"
                            ),
                        ));
                    }
                    let fill = *power.last().unwrap();
                    power.extend(std::iter::repeat(fill).take(missing));
                    gaps.push(GapReport {
                        farm_id: farm_id.into(),
                        after: prev_t,
                        missing,
                    });
                }
            }
        }
        power.push(v);
    }
    TimeSeriesFrame::new(farm_id, rows[0].0, step, power)
}

/// Load per-farm series from a CSV file. Returns one frame per farm (sorted
/// by farm id) plus the report of any forward-filled gaps.
pub fn load_series_csv(
    path: &Path,
    schema: &SeriesSchema,
    policy: GapPolicy,
) -> Result<(Vec<TimeSeriesFrame>, Vec<GapReport>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::File {
            path: path.into(),
            message: e.to_string(),
        })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::File {
            path: path.into(),
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let ts_col = headers
        .iter()
        .position(|h| h == &schema.timestamp_column)
        .ok_or_else(|| Error::File {
            path: path.into(),
            message: format!("missing timestamp column `{}`", schema.timestamp_column),
        })?;

    // farm id -> (timestamp, power, source row)
    let mut per_farm: BTreeMap<String, Vec<(i64, f64, usize)>> = BTreeMap::new();

    match &schema.layout {
        SeriesLayout::Wide => {
            let farm_cols: Vec<(usize, String)> = headers
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != ts_col)
                .map(|(i, h)| (i, h.clone()))
                .collect();
            if farm_cols.is_empty() {
                return Err(Error::File {
                    path: path.into(),
                    message: "wide layout needs at least one power column".into(),
                });
            }
            for (rec_idx, record) in reader.records().enumerate() {
                let row = rec_idx + 2; // header is row 1
                let record = record.map_err(|e| csv_error(path, row, e.to_string()))?;
                let raw_ts = record
                    .get(ts_col)
                    .ok_or_else(|| csv_error(path, row, "short record"))?;
                let t = parse_timestamp(raw_ts, schema.timestamp_kind)
                    .ok_or_else(|| csv_error(path, row, format!("unparseable timestamp `{raw_ts}`")))?;
                for (col, farm) in &farm_cols {
                    let raw = record
                        .get(*col)
                        .ok_or_else(|| csv_error(path, row, "short record"))?;
                    let v: f64 = raw.trim().parse().map_err(|_| {
                        csv_error(path, row, format!("non-numeric power `{raw}` for `{farm}`"))
                    })?;
                    per_farm.entry(farm.clone()).or_default().push((t, v, row));
                }
            }
        }
        SeriesLayout::Long {
            farm_column,
            power_column,
        } => {
            let farm_col = headers
                .iter()
                .position(|h| h == farm_column)
                .ok_or_else(|| Error::File {
                    path: path.into(),
                    message: format!("missing farm column `{farm_column}`"),
                })?;
            let power_col = headers
                .iter()
                .position(|h| h == power_column)
                .ok_or_else(|| Error::File {
                    path: path.into(),
                    message: format!("missing power column `{power_column}`"),
                })?;
            for (rec_idx, record) in reader.records().enumerate() {
                let row = rec_idx + 2;
                let record = record.map_err(|e| csv_error(path, row, e.to_string()))?;
                let raw_ts = record
                    .get(ts_col)
                    .ok_or_else(|| csv_error(path, row, "short record"))?;
                let t = parse_timestamp(raw_ts, schema.timestamp_kind)
                    .ok_or_else(|| csv_error(path, row, format!("unparseable timestamp `{raw_ts}`")))?;
                let farm = record
                    .get(farm_col)
                    .ok_or_else(|| csv_error(path, row, "short record"))?
                    .to_string();
                let raw = record
                    .get(power_col)
                    .ok_or_else(|| csv_error(path, row, "short record"))?;
                let v: f64 = raw.trim().parse().map_err(|_| {
                    csv_error(path, row, format!("non-numeric power `{raw}` for `{farm}`"))
                })?;
                per_farm.entry(farm).or_default().push((t, v, row));
            }
        }
    }

    let mut gaps = Vec::new();
    let mut frames = Vec::with_capacity(per_farm.len());
    for (farm_id, rows) in per_farm {
        frames.push(assemble_frame(path, &farm_id, rows, policy, &mut gaps)?);
    }
    Ok((frames, gaps))
}

/// Write frames in the wide layout under the given schema. All frames must
/// share timestamps; the output loads back identically.
pub fn write_series_csv(path: &Path, frames: &[TimeSeriesFrame], schema: &SeriesSchema) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::invalid("nothing to write"));
    }
    if !matches!(schema.layout, SeriesLayout::Wide) {
        return Err(Error::invalid("series are written in the wide layout"));
    }
    let len = frames[0].len();
    for f in frames {
        if f.len() != len || f.start != frames[0].start || f.step != frames[0].step {
            return Err(Error::MisalignedStream {
                farm_id: f.farm_id.clone(),
                index: 0,
                message: "frames must share timestamps to be written wide".into(),
            });
        }
    }
    let mut ordered: Vec<&TimeSeriesFrame> = frames.iter().collect();
    ordered.sort_by(|a, b| a.farm_id.cmp(&b.farm_id));
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::File {
        path: path.into(),
        message: e.to_string(),
    })?;
    let mut header = vec![schema.timestamp_column.clone()];
    header.extend(ordered.iter().map(|f| f.farm_id.clone()));
    writer
        .write_record(&header)
        .map_err(|e| Error::File {
            path: path.into(),
            message: e.to_string(),
        })?;
    for i in 0..len {
        let mut record = vec![format_timestamp(frames[0].timestamp(i), schema.timestamp_kind)];
        for f in &ordered {
            record.push(format!("{}", f.power[i]));
        }
        writer.write_record(&record).map_err(|e| Error::File {
            path: path.into(),
            message: e.to_string(),
        })?;
    }
    writer.flush().map_err(|source| Error::Io {
        path: path.into(),
        source,
    })
}

/// Load farm metadata: columns `farm_id,latitude,longitude[,capacity]`.
pub fn load_farm_meta(path: &Path) -> Result<Vec<FarmMeta>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::File {
            path: path.into(),
            message: e.to_string(),
        })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::File {
            path: path.into(),
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (id_c, lat_c, lon_c) = match (col("farm_id"), col("latitude"), col("longitude")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => {
            return Err(Error::File {
                path: path.into(),
                message: "metadata needs farm_id, latitude, longitude columns".into(),
            })
        }
    };
    let cap_c = col("capacity");
    let mut farms = Vec::new();
    for (rec_idx, record) in reader.records().enumerate() {
        let row = rec_idx + 2;
        let record = record.map_err(|e| csv_error(path, row, e.to_string()))?;
        let get = |c: usize| record.get(c).ok_or_else(|| csv_error(path, row, "short record"));
        let farm = FarmMeta {
            farm_id: get(id_c)?.to_string(),
            latitude: get(lat_c)?
                .trim()
                .parse()
                .map_err(|_| csv_error(path, row, "bad latitude"))?,
            longitude: get(lon_c)?
                .trim()
                .parse()
                .map_err(|_| csv_error(path, row, "bad longitude"))?,
            capacity: match cap_c {
                Some(c) => {
                    let raw = get(c)?.trim();
                    if raw.is_empty() {
                        None
                    } else {
                        Some(raw.parse().map_err(|_| csv_error(path, row, "bad capacity"))?)
                    }
                }
                None => None,
            },
        };
        farm.validate()?;
        farms.push(farm);
    }
    Ok(farms)
}

pub fn write_farm_meta(path: &Path, farms: &[FarmMeta]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::File {
        path: path.into(),
        message: e.to_string(),
    })?;
    writer
        .write_record(["farm_id", "latitude", "longitude", "capacity"])
        .map_err(|e| Error::File {
            path: path.into(),
            message: e.to_string(),
        })?;
    for f in farms {
        writer
            .write_record([
                f.farm_id.clone(),
                format!("{}", f.latitude),
                format!("{}", f.longitude),
                f.capacity.map(|c| format!("{c}")).unwrap_or_default(),
            ])
            .map_err(|e| Error::File {
                path: path.into(),
                message: e.to_string(),
            })?;
    }
    writer.flush().map_err(|source| Error::Io {
        path: path.into(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn wide_csv_two_farms() {
        let file = write_tmp(
            "ts,A,B\n\
             2010-01-01T00:00:00,0.1,0.2\n\
             2010-01-01T01:00:00,0.3,0.4\n\
             2010-01-01T02:00:00,0.5,0.6\n\
             2010-01-01T03:00:00,0.7,0.8\n",
        );
        let schema = SeriesSchema::wide_iso("ts");
        let (frames, gaps) = load_series_csv(file.path(), &schema, GapPolicy::Reject).unwrap();
        assert!(gaps.is_empty());
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].farm_id, "A");
        assert_eq!(frames[0].len(), 4);
        assert_eq!(frames[0].step, 3600);
        assert_eq!(frames[1].power, vec![0.2, 0.4, 0.6, 0.8]);
    }

    #[test]
    fn duplicate_timestamp_names_row() {
        let file = write_tmp(
            "ts,A\n\
             0,1.0\n\
             3600,2.0\n\
             3600,3.0\n",
        );
        let mut schema = SeriesSchema::wide_iso("ts");
        schema.timestamp_kind = TimestampKind::EpochSeconds;
        match load_series_csv(file.path(), &schema, GapPolicy::Reject).unwrap_err() {
            Error::CsvRow { row, .. } => assert_eq!(row, 4),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn non_numeric_power_names_row() {
        let file = write_tmp("ts,A\n0,1.0\n3600,oops\n");
        let mut schema = SeriesSchema::wide_iso("ts");
        schema.timestamp_kind = TimestampKind::EpochSeconds;
        match load_series_csv(file.path(), &schema, GapPolicy::Reject).unwrap_err() {
            Error::CsvRow { row, .. } => assert_eq!(row, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unsorted_rows_are_sorted_on_load() {
        let file = write_tmp("ts,A\n7200,3.0\n0,1.0\n3600,2.0\n");
        let mut schema = SeriesSchema::wide_iso("ts");
        schema.timestamp_kind = TimestampKind::EpochSeconds;
        let (frames, _) = load_series_csv(file.path(), &schema, GapPolicy::Reject).unwrap();
        assert_eq!(frames[0].power, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn gap_rejected_then_filled_under_policy() {
        let csv = "ts,A\n0,1.0\n3600,2.0\n14400,3.0\n"; // 2 missing rows
        let file = write_tmp(csv);
        let mut schema = SeriesSchema::wide_iso("ts");
        schema.timestamp_kind = TimestampKind::EpochSeconds;
        assert!(load_series_csv(file.path(), &schema, GapPolicy::Reject).is_err());
        let (frames, gaps) = load_series_csv(
            file.path(),
            &schema,
            GapPolicy::ForwardFill { max_steps: 3 },
        )
        .unwrap();
        assert_eq!(frames[0].power, vec![1.0, 2.0, 2.0, 2.0, 3.0]);
        assert_eq!(gaps.len(), 1);
        assert_eq!(gaps[0].missing, 2);
        // cap enforced
        assert!(load_series_csv(
            file.path(),
            &schema,
            GapPolicy::ForwardFill { max_steps: 1 }
        )
        .is_err());
    }

    #[test]
    fn hourly_file_roundtrips_identically() {
        // Hourly stamps, seven farms, values in [0, 1].
        let farms: Vec<String> = (1..=7).map(|i| format!("wf{i}")).collect();
        let mut content = String::from("date");
        for f in &farms {
            content.push(',');
            content.push_str(f);
        }
        content.push('\n');
        let start = 1246406400i64; // 2009-07-01T00:00:00Z
        for h in 0..48i64 {
            content.push_str(&format_timestamp(start + h * 3600, TimestampKind::Iso8601));
            for (i, _) in farms.iter().enumerate() {
                content.push_str(&format!(",{}", ((h as f64) * 0.01 + i as f64 * 0.1) % 1.0));
            }
            content.push('\n');
        }
        let file = write_tmp(&content);
        let schema = SeriesSchema::wide_iso("date");
        let (frames, _) = load_series_csv(file.path(), &schema, GapPolicy::Reject).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_series_csv(out.path(), &frames, &schema).unwrap();
        let (frames2, _) = load_series_csv(out.path(), &schema, GapPolicy::Reject).unwrap();
        assert_eq!(frames, frames2);
    }

    #[test]
    fn long_layout_loads() {
        let file = write_tmp(
            "ts,farm,p\n\
             0,B,0.5\n\
             0,A,0.1\n\
             3600,A,0.2\n\
             3600,B,0.6\n",
        );
        let schema = SeriesSchema {
            timestamp_column: "ts".into(),
            timestamp_kind: TimestampKind::EpochSeconds,
            layout: SeriesLayout::Long {
                farm_column: "farm".into(),
                power_column: "p".into(),
            },
        };
        let (frames, _) = load_series_csv(file.path(), &schema, GapPolicy::Reject).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].farm_id, "A");
        assert_eq!(frames[0].power, vec![0.1, 0.2]);
        assert_eq!(frames[1].power, vec![0.5, 0.6]);
    }

    #[test]
    fn farm_meta_roundtrip() {
        let farms = vec![
            FarmMeta {
                farm_id: "a".into(),
                latitude: 40.1,
                longitude: -74.2,
                capacity: Some(16.0),
            },
            FarmMeta {
                farm_id: "b".into(),
                latitude: 39.7,
                longitude: -73.9,
                capacity: None,
            },
        ];
        let file = tempfile::NamedTempFile::new().unwrap();
        write_farm_meta(file.path(), &farms).unwrap();
        let back = load_farm_meta(file.path()).unwrap();
        assert_eq!(farms, back);
    }
}
