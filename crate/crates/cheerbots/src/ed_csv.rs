//! EmpatheticDialogues CSV ingestion and the newline-delimited JSON record
//! format used between pipeline stages.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use cheerbots_core::corpus::{records_from_rows, RawRow, UtteranceRecord};
use cheerbots_core::va::EmotionCatalog;

use crate::error::{AppError, AppResult};

const REQUIRED: [&str; 5] = ["conv_id", "utterance_idx", "context", "prompt", "utterance"];

/// Reads ED rows by header name. Rows may carry extra trailing columns
/// (the published files contain a few); text fields stay escaped.
pub fn read_rows<R: Read>(reader: R) -> AppResult<Vec<RawRow>> {
    let mut csv = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = csv.headers()?.clone();
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(REQUIRED) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| AppError::Invalid(format!("ED csv lacks a `{name}` column")))?;
    }
    let mut rows = Vec::new();
    for (line, rec) in csv.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(idx[i]).unwrap_or("").to_string();
        let utterance_idx = field(1)
            .trim()
            .parse()
            .map_err(|_| AppError::Invalid(format!("row {}: utterance_idx is not an integer", line + 2)))?;
        rows.push(RawRow {
            conv_id: field(0),
            utterance_idx,
            context: field(2),
            prompt: field(3),
            utterance: field(4),
        });
    }
    Ok(rows)
}

pub fn ingest_file(path: &Path, catalog: &EmotionCatalog) -> AppResult<Vec<UtteranceRecord>> {
    let file = std::fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    let rows = read_rows(std::io::BufReader::new(file))?;
    Ok(records_from_rows(&rows, catalog)?)
}

/// Writes rows back in ED layout, escaping commas.
pub fn write_rows<W: Write>(writer: W, rows: &[RawRow]) -> AppResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["conv_id", "utterance_idx", "context", "prompt", "speaker_idx", "utterance"])?;
    for r in rows {
        let speaker = if r.utterance_idx % 2 == 1 { "1" } else { "0" };
        w.write_record([
            r.conv_id.as_str(),
            &r.utterance_idx.to_string(),
            r.context.as_str(),
            &cheerbots_core::corpus::escape_ed(&r.prompt),
            speaker,
            &cheerbots_core::corpus::escape_ed(&r.utterance),
        ])?;
    }
    w.flush().map_err(|e| AppError::io("csv output", e))
}

pub fn write_ndjson<W: Write>(mut writer: W, records: &[UtteranceRecord]) -> AppResult<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r).map_err(|e| AppError::json("record", e))?;
        writer.write_all(b"\n").map_err(|e| AppError::io("ndjson output", e))?;
    }
    Ok(())
}

pub fn read_ndjson<R: BufRead>(reader: R) -> AppResult<Vec<UtteranceRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| AppError::io("ndjson input", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| AppError::json(format!("record line {}", i + 1), e))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog_io::default_catalog;

    const SAMPLE: &str = "conv_id,utterance_idx,context,prompt,speaker_idx,utterance,selfeval,tags\n\
hit:0_conv:1,1,sentimental,I remember going to the fireworks with my best friend_comma_ there was a lot of people.,1,I remember going to see the fireworks with my best friend.,5|5|5_2|2|5,\n\
hit:0_conv:1,2,sentimental,I remember going to the fireworks with my best friend_comma_ there was a lot of people.,0,Was this a friend you were in love with_comma_ or just a best friend?,5|5|5_2|2|5,\n";

    #[test]
    fn parses_and_merges_labels() {
        let (_, cat) = default_catalog();
        let rows = read_rows(SAMPLE.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        let recs = records_from_rows(&rows, &cat).unwrap();
        assert_eq!(recs[0].situation_emotion.name, "nostalgic");
        assert_eq!(recs[1].text, "Was this a friend you were in love with, or just a best friend?");
        assert!(recs[0].situation_prompt.contains("friend, there"));
    }

    #[test]
    fn write_then_read_round_trips() {
        let rows = read_rows(SAMPLE.as_bytes()).unwrap();
        let mut buf = Vec::new();
        let unescaped: Vec<RawRow> = rows
            .iter()
            .map(|r| RawRow {
                prompt: cheerbots_core::corpus::unescape_ed(&r.prompt),
                utterance: cheerbots_core::corpus::unescape_ed(&r.utterance),
                ..r.clone()
            })
            .collect();
        write_rows(&mut buf, &unescaped).unwrap();
        assert_eq!(read_rows(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn ndjson_round_trip() {
        let (_, cat) = default_catalog();
        let recs = records_from_rows(&read_rows(SAMPLE.as_bytes()).unwrap(), &cat).unwrap();
        let mut buf = Vec::new();
        write_ndjson(&mut buf, &recs).unwrap();
        assert_eq!(read_ndjson(buf.as_slice()).unwrap(), recs);
    }

    #[test]
    fn missing_column_is_reported() {
        let err = read_rows("conv_id,utterance\nx,y\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("utterance_idx"));
    }
}
