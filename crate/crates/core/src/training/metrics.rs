use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainingError;

pub const METRICS_HEADER: &str = "step,split,loss,keep_ratio,word_acc,char_acc,seed,wall_ms";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordSplit {
    Train,
    Val,
}

/// One metrics CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub step: u64,
    pub split: RecordSplit,
    pub loss: f64,
    pub keep_ratio: f64,
    pub word_acc: f64,
    pub char_acc: f64,
    pub seed: u64,
    pub wall_ms: u64,
}

pub fn write_metrics<W: Write>(w: W, records: &[RunRecord]) -> Result<(), TrainingError> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(METRICS_HEADER.split(','))?;
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_metrics(path: &Path, records: &[RunRecord]) -> Result<(), TrainingError> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_metrics(f, records)
}

/// Parses a metrics CSV; errors name the offending line.
pub fn read_metrics<R: Read>(r: R) -> Result<Vec<RunRecord>, TrainingError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != METRICS_HEADER {
        return Err(TrainingError::Format(format!("line 1: expected header `{METRICS_HEADER}`, got `{header}`")));
    }
    let mut records = Vec::new();
    for (i, row) in rdr.deserialize::<RunRecord>().enumerate() {
        let line = i + 2;
        let rec = row.map_err(|e| TrainingError::Format(format!("line {line}: {e}")))?;
        if !(0.0..=1.0).contains(&rec.keep_ratio) || !rec.loss.is_finite() {
            return Err(TrainingError::Format(format!("line {line}: value out of range")));
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn load_metrics(path: &Path) -> Result<Vec<RunRecord>, TrainingError> {
    let f = std::fs::File::open(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    read_metrics(f)
}

/// `(step, loss)` of the training rows, in file order.
pub fn train_losses(records: &[RunRecord]) -> Vec<(u64, f64)> {
    records
        .iter()
        .filter(|r| r.split == RecordSplit::Train)
        .map(|r| (r.step, r.loss))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step: u64, split: RecordSplit) -> RunRecord {
        RunRecord {
            step,
            split,
            loss: 1.25,
            keep_ratio: 0.5,
            word_acc: 0.0,
            char_acc: 0.75,
            seed: 7,
            wall_ms: 0,
        }
    }

    #[test]
    fn header_and_rows() {
        let mut buf = Vec::new();
        write_metrics(&mut buf, &[rec(0, RecordSplit::Train), rec(1, RecordSplit::Val)]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "step,split,loss,keep_ratio,word_acc,char_acc,seed,wall_ms\n0,train,1.25,0.5,0.0,0.75,7,0\n1,val,1.25,0.5,0.0,0.75,7,0\n"
        );
        let back = read_metrics(&buf[..]).unwrap();
        assert_eq!(back[1], rec(1, RecordSplit::Val));
    }

    #[test]
    fn empty_body_is_just_the_header() {
        let mut buf = Vec::new();
        write_metrics(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{METRICS_HEADER}\n"));
    }

    #[test]
    fn malformed_row_names_its_line() {
        let text = format!("{METRICS_HEADER}\n0,train,1,1,0,0,0,0\n1,train,oops,1,0,0,0,0\n");
        let err = read_metrics(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        let bad_header = "step,loss\n1,2\n";
        assert!(read_metrics(bad_header.as_bytes()).unwrap_err().to_string().contains("line 1"));
    }
}
