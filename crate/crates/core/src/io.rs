//! CSV output.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::Result;

/// Writes `rows` with a header derived from the row type.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads every row of a headed CSV file.
pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize, serde::Deserialize, PartialEq, Debug)]
    struct Row {
        t: f64,
        #[serde(rename = "LB")]
        lb: f64,
    }

    #[test]
    fn writes_header_and_rows() {
        let dir = std::env::temp_dir().join(format!("rotor-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("x.csv");
        write_csv(&path, &[Row { t: 0.5, lb: 0.25 }, Row { t: 1.0, lb: 0.125 }]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "t,LB\n0.5,0.25\n1.0,0.125\n");
        let back: Vec<Row> = read_csv(&path).unwrap();
        assert_eq!(back[1], Row { t: 1.0, lb: 0.125 });
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
