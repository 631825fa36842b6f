//! JSON-lines files of records, one value per line.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, JsonlError> {
    from_reader(BufReader::new(File::open(path)?))
}

pub fn from_reader<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| JsonlError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}

/// Writes through a temporary file so a crash never leaves half a file.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, values: &[T]) -> Result<(), JsonlError> {
    let path = path.as_ref();
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        to_writer(&mut w, values)?;
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn to_writer<T: Serialize, W: Write>(mut w: W, values: &[T]) -> Result<(), JsonlError> {
    for v in values {
        serde_json::to_writer(&mut w, v).map_err(|source| JsonlError::Parse { line: 0, source })?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_skips_blank_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        write_jsonl(&p, &[vec![1.5, -0.1], vec![]]).unwrap();
        let back: Vec<Vec<f64>> = read_jsonl(&p).unwrap();
        assert_eq!(back, vec![vec![1.5, -0.1], vec![]]);
        let parsed: Vec<u8> = from_reader("1\n\n2\n".as_bytes()).unwrap();
        assert_eq!(parsed, vec![1, 2]);
        let err = from_reader::<u8, _>("1\nx\n".as_bytes()).unwrap_err();
        assert!(matches!(err, JsonlError::Parse { line: 2, .. }));
    }
}
