//! Detection CSV: `object_id,timestamp,x,y[,confidence][,class]`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{Sample, Trajectory};
use crate::error::{Error, Result, RowError};
use crate::geometry::Point2;

const REQUIRED: [&str; 4] = ["object_id", "timestamp", "x", "y"];

/// One pedestrian observation. Extra attributes pass through untouched.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub object_id: String,
    /// Seconds.
    pub timestamp: f64,
    pub position: Point2,
    pub confidence: Option<f64>,
    pub class_label: Option<String>,
}

impl Detection {
    pub fn new(object_id: impl Into<String>, timestamp: f64, position: Point2) -> Self {
        Self {
            object_id: object_id.into(),
            timestamp,
            position,
            confidence: None,
            class_label: None,
        }
    }
}

/// Strict parsing aborts on the first bad row; lenient parsing skips bad rows
/// and reports them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ParseMode {
    #[default]
    Strict,
    Lenient,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReadOutcome {
    pub detections: Vec<Detection>,
    pub skipped: Vec<RowError>,
}

struct Columns {
    confidence: Option<usize>,
    class: Option<usize>,
    width: usize,
}

fn parse_header(header: &csv::StringRecord) -> Result<Columns> {
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names.len() < 4 || names[..4] != REQUIRED {
        return Err(Error::MalformedHeader(format!(
            "expected `object_id,timestamp,x,y[,confidence][,class]`, got `{}`",
            names.join(",")
        )));
    }
    let mut cols = Columns {
        confidence: None,
        class: None,
        width: names.len(),
    };
    match &names[4..] {
        [] => {}
        ["confidence"] => cols.confidence = Some(4),
        ["class"] => cols.class = Some(4),
        ["confidence", "class"] => {
            cols.confidence = Some(4);
            cols.class = Some(5);
        }
        other => {
            return Err(Error::MalformedHeader(format!(
                "unexpected optional columns `{}`",
                other.join(",")
            )))
        }
    }
    Ok(cols)
}

fn parse_number(field: &str, name: &str) -> std::result::Result<f64, String> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| format!("{name} {field:?} is not a number"))
}

fn parse_row(record: &csv::StringRecord, cols: &Columns) -> std::result::Result<Detection, String> {
    if record.len() != cols.width {
        return Err(format!("expected {} fields, got {}", cols.width, record.len()));
    }
    let object_id = record[0].trim().to_string();
    if object_id.is_empty() {
        return Err("empty object_id".into());
    }
    let timestamp = parse_number(&record[1], "timestamp")?;
    if !(timestamp.is_finite() && timestamp >= 0.0) {
        return Err(format!("timestamp {timestamp} must be finite and non-negative"));
    }
    let x = parse_number(&record[2], "x")?;
    let y = parse_number(&record[3], "y")?;
    if !(x.is_finite() && y.is_finite()) {
        return Err(format!("non-finite coordinate ({x}, {y})"));
    }
    let confidence = match cols.confidence.map(|i| record[i].trim()) {
        None | Some("") => None,
        Some(v) => {
            let c = parse_number(v, "confidence")?;
            if !(0.0..=1.0).contains(&c) {
                return Err(format!("confidence {c} outside [0, 1]"));
            }
            Some(c)
        }
    };
    let class_label = match cols.class.map(|i| record[i].trim()) {
        None | Some("") => None,
        Some(v) => Some(v.to_string()),
    };
    Ok(Detection {
        object_id,
        timestamp,
        position: Point2::new(x, y),
        confidence,
        class_label,
    })
}

/// Parses detections from any reader. Row numbers count the header as row 1.
pub fn parse_detections<R: Read>(reader: R, mode: ParseMode) -> Result<ReadOutcome> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::MalformedHeader(e.to_string()))?
        .clone();
    if header.is_empty() {
        return Err(Error::MalformedHeader("missing header row".into()));
    }
    let cols = parse_header(&header)?;

    let mut out = ReadOutcome::default();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let parsed = record
            .map_err(|e| e.to_string())
            .and_then(|r| parse_row(&r, &cols));
        match parsed {
            Ok(d) => out.detections.push(d),
            Err(reason) => {
                let err = RowError { row, reason };
                match mode {
                    ParseMode::Strict => return Err(Error::Rows(vec![err])),
                    ParseMode::Lenient => out.skipped.push(err),
                }
            }
        }
    }
    Ok(out)
}

pub fn read_detections(path: impl AsRef<Path>, mode: ParseMode) -> Result<ReadOutcome> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    parse_detections(file, mode)
}

/// Writes detections with only the optional columns that carry data.
pub fn write_detections_to<W: Write>(writer: W, detections: &[Detection]) -> Result<()> {
    let with_conf = detections.iter().any(|d| d.confidence.is_some());
    let with_class = detections.iter().any(|d| d.class_label.is_some());
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    let mut header = REQUIRED.to_vec();
    if with_conf {
        header.push("confidence");
    }
    if with_class {
        header.push("class");
    }
    w.write_record(&header)?;
    for d in detections {
        let mut rec = vec![
            d.object_id.clone(),
            d.timestamp.to_string(),
            d.position.x.to_string(),
            d.position.y.to_string(),
        ];
        if with_conf {
            rec.push(d.confidence.map(|c| c.to_string()).unwrap_or_default());
        }
        if with_class {
            rec.push(d.class_label.clone().unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_detections(path: impl AsRef<Path>, detections: &[Detection]) -> Result<()> {
    super::write_atomic(path.as_ref(), |f| write_detections_to(f, detections))
}

/// Which detections feed the estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionFilter {
    /// Accepted class labels; rows without a label are always accepted.
    /// `None` accepts every label.
    pub classes: Option<Vec<String>>,
    pub min_confidence: f64,
}

impl Default for DetectionFilter {
    fn default() -> Self {
        Self {
            classes: Some(vec!["pedestrian".to_string()]),
            min_confidence: 0.0,
        }
    }
}

pub fn filter_detections(detections: &[Detection], filter: &DetectionFilter) -> Vec<Detection> {
    detections
        .iter()
        .filter(|d| match (&filter.classes, &d.class_label) {
            (Some(classes), Some(label)) => classes.iter().any(|c| c == label),
            _ => true,
        })
        .filter(|d| d.confidence.is_none_or(|c| c >= filter.min_confidence))
        .cloned()
        .collect()
}

/// Groups detections by object into time-ordered trajectories (ids in
/// lexicographic order). Objects seen fewer than twice are dropped.
pub fn group_trajectories(detections: &[Detection]) -> Result<Vec<Trajectory>> {
    let mut by_id: BTreeMap<&str, Vec<Sample>> = BTreeMap::new();
    for d in detections {
        by_id.entry(&d.object_id).or_default().push(Sample {
            t: d.timestamp,
            pos: d.position,
        });
    }
    let mut out = Vec::with_capacity(by_id.len());
    for (id, mut samples) in by_id {
        samples.sort_by(|a, b| a.t.total_cmp(&b.t));
        if let Some(w) = samples.windows(2).find(|w| w[0].t == w[1].t) {
            return Err(Error::DuplicateSample {
                id: id.to_string(),
                timestamp: w[0].t,
            });
        }
        if samples.len() >= 2 {
            out.push(Trajectory::new(id, samples)?);
        }
    }
    Ok(out)
}

pub fn positions(detections: &[Detection]) -> Vec<Point2> {
    detections.iter().map(|d| d.position).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, mode: ParseMode) -> Result<ReadOutcome> {
        parse_detections(text.as_bytes(), mode)
    }

    #[test]
    fn reads_rows_in_file_order() {
        let out = parse("object_id,timestamp,x,y\nb,1.5,2,3\na,0,1.25,-4\nc,2,0,0\n", ParseMode::Strict)
            .unwrap();
        let ids: Vec<&str> = out.detections.iter().map(|d| d.object_id.as_str()).collect();
        assert_eq!(ids, ["b", "a", "c"]);
        assert_eq!(out.detections[1].position, Point2::new(1.25, -4.0));
    }

    #[test]
    fn optional_columns_and_crlf() {
        let text = "object_id,timestamp,x,y,confidence,class\r\np1,0.5,1,2,0.9,pedestrian\r\nv1,0.5,3,4,,vehicle\r\n";
        let out = parse(text, ParseMode::Strict).unwrap();
        assert_eq!(out.detections[0].confidence, Some(0.9));
        assert_eq!(out.detections[0].class_label.as_deref(), Some("pedestrian"));
        assert_eq!(out.detections[1].confidence, None);
        let class_only = parse("object_id,timestamp,x,y,class\nq,0,1,1,bicyclist\n", ParseMode::Strict).unwrap();
        assert_eq!(class_only.detections[0].class_label.as_deref(), Some("bicyclist"));
    }

    #[test]
    fn nan_row_is_rejected_with_its_number() {
        let text = "object_id,timestamp,x,y\na,0,1,1\nb,1,nan,2\n";
        match parse(text, ParseMode::Strict) {
            Err(Error::Rows(rows)) => assert_eq!(rows[0].row, 3),
            other => panic!("{other:?}"),
        }
        let lenient = parse(text, ParseMode::Lenient).unwrap();
        assert_eq!(lenient.detections.len(), 1);
        assert_eq!(lenient.skipped[0].row, 3);
    }

    #[test]
    fn header_only_is_empty() {
        assert!(parse("object_id,timestamp,x,y\n", ParseMode::Strict).unwrap().detections.is_empty());
    }

    #[test]
    fn bad_headers() {
        for text in ["", "id,t,x,y\n", "object_id,timestamp,x,y,speed\n"] {
            assert!(matches!(parse(text, ParseMode::Strict), Err(Error::MalformedHeader(_))), "{text:?}");
        }
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = read_detections("/nonexistent/detections.csv", ParseMode::Strict).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/detections.csv"));
    }

    #[test]
    fn default_filter_keeps_pedestrians_and_unlabeled() {
        let mut dets = vec![
            Detection::new("a", 0.0, Point2::default()),
            Detection::new("b", 0.0, Point2::default()),
            Detection::new("c", 0.0, Point2::default()),
        ];
        dets[0].class_label = Some("pedestrian".into());
        dets[1].class_label = Some("vehicle".into());
        let kept = filter_detections(&dets, &DetectionFilter::default());
        let ids: Vec<&str> = kept.iter().map(|d| d.object_id.as_str()).collect();
        assert_eq!(ids, ["a", "c"]);
        assert!(filter_detections(&[], &DetectionFilter::default()).is_empty());
    }

    #[test]
    fn confidence_threshold() {
        let mut dets = vec![
            Detection::new("a", 0.0, Point2::default()),
            Detection::new("b", 0.0, Point2::default()),
        ];
        dets[0].confidence = Some(0.4);
        dets[1].confidence = Some(0.9);
        let filter = DetectionFilter { min_confidence: 0.5, ..Default::default() };
        assert_eq!(filter_detections(&dets, &filter).len(), 1);
    }

    #[test]
    fn grouping() {
        let d = |id: &str, t: f64| Detection::new(id, t, Point2::new(t, 0.0));
        let dets = [d("b", 2.0), d("a", 1.0), d("b", 0.0), d("a", 0.0), d("c", 5.0)];
        let trajs = group_trajectories(&dets).unwrap();
        assert_eq!(trajs.len(), 2);
        assert_eq!(trajs[0].object_id(), "a");
        let times: Vec<f64> = trajs[1].samples().iter().map(|s| s.t).collect();
        assert_eq!(times, [0.0, 2.0]);

        let dup = [d("a", 1.0), d("a", 1.0)];
        assert!(matches!(group_trajectories(&dup), Err(Error::DuplicateSample { .. })));
    }

    #[test]
    fn write_then_parse_preserves_fields() {
        let mut dets = vec![
            Detection::new("p-1", 0.1, Point2::new(0.1 + 0.2, -1e-7)),
            Detection::new("p-2", 12345.678, Point2::new(1.0 / 3.0, 2.0f64.sqrt())),
        ];
        dets[1].confidence = Some(0.75);
        dets[0].class_label = Some("pedestrian".into());
        let mut buf = Vec::new();
        write_detections_to(&mut buf, &dets).unwrap();
        let back = parse_detections(buf.as_slice(), ParseMode::Strict).unwrap();
        assert_eq!(back.detections, dets);
    }
}
