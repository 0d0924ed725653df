use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::ClassLabel;
use crate::error::{arg_err, Error, Result};

pub const METADATA_COLUMNS: [&str; 7] = [
    "lesion_id",
    "image_id",
    "dx",
    "dx_type",
    "age",
    "sex",
    "localization",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataRecord {
    pub lesion_id: String,
    pub image_id: String,
    pub dx: ClassLabel,
    pub dx_type: String,
    pub age: Option<f64>,
    pub sex: String,
    pub localization: String,
}

/// Reads a HAM10000 metadata file. Columns are matched by header name and
/// extra columns are ignored.
pub fn load_metadata(path: &Path) -> Result<Vec<MetadataRecord>> {
    let file = std::fs::File::open(path)?;
    read_metadata(file)
}

pub fn read_metadata<R: std::io::Read>(reader: R) -> Result<Vec<MetadataRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let mut cols = [0usize; 7];
    for (slot, name) in cols.iter_mut().zip(METADATA_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("header lacks column {name:?}"),
            })?;
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| row.get(cols[i]).unwrap_or("").trim();
        let parse_err = |message: String| Error::Parse { line, message };
        let dx = field(2)
            .parse::<ClassLabel>()
            .map_err(|e| parse_err(e.to_string()))?;
        let age = match field(4) {
            "" | "NA" | "nan" | "NaN" => None,
            s => {
                let a: f64 = s.parse().map_err(|_| parse_err(format!("bad age {s:?}")))?;
                if !(a.is_finite() && a >= 0.0) {
                    return Err(parse_err(format!("bad age {s:?}")));
                }
                Some(a)
            }
        };
        let image_id = field(1).to_string();
        if image_id.is_empty() {
            return Err(parse_err("empty image_id".into()));
        }
        if !seen.insert(image_id.clone()) {
            return Err(parse_err(format!("duplicate image_id {image_id}")));
        }
        out.push(MetadataRecord {
            lesion_id: field(0).to_string(),
            image_id,
            dx,
            dx_type: field(3).to_string(),
            age,
            sex: field(5).to_string(),
            localization: field(6).to_string(),
        });
    }
    Ok(out)
}

pub fn write_metadata<W: Write>(records: &[MetadataRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METADATA_COLUMNS).map_err(csv_io)?;
    for r in records {
        let age = r.age.map(|a| format!("{a:.1}")).unwrap_or_default();
        w.write_record([
            &r.lesion_id,
            &r.image_id,
            r.dx.code(),
            &r.dx_type,
            &age,
            &r.sex,
            &r.localization,
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Facet {
    Dx,
    DxType,
    Localization,
    AgeByDx,
}

impl FromStr for Facet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dx" => Ok(Facet::Dx),
            "dx_type" => Ok(Facet::DxType),
            "localization" => Ok(Facet::Localization),
            "age_by_dx" => Ok(Facet::AgeByDx),
            _ => arg_err(format!(
                "unknown facet {s:?} (expected dx, dx_type, localization or age_by_dx)"
            )),
        }
    }
}

impl fmt::Display for Facet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Facet::Dx => "dx",
            Facet::DxType => "dx_type",
            Facet::Localization => "localization",
            Facet::AgeByDx => "age_by_dx",
        })
    }
}

pub const AGE_BIN_YEARS: u32 = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountTable {
    pub columns: Vec<String>,
    /// Key fields and count, sorted by count descending then key ascending.
    pub rows: Vec<(Vec<String>, usize)>,
}

impl CountTable {
    pub fn total(&self) -> usize {
        self.rows.iter().map(|r| r.1).sum()
    }

    pub fn count(&self, key: &[&str]) -> usize {
        self.rows
            .iter()
            .find(|(k, _)| k.iter().map(String::as_str).eq(key.iter().copied()))
            .map_or(0, |r| r.1)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = self.columns.clone();
        header.push("count".into());
        w.write_record(&header).map_err(csv_io)?;
        for (key, count) in &self.rows {
            let mut rec = key.clone();
            rec.push(count.to_string());
            w.write_record(&rec).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn age_bin(age: f64) -> String {
    let lo = (age as u32 / AGE_BIN_YEARS) * AGE_BIN_YEARS;
    format!("{lo}-{}", lo + AGE_BIN_YEARS - 1)
}

pub fn tabulate(records: &[MetadataRecord], facet: Facet) -> CountTable {
    let mut counts: BTreeMap<Vec<String>, usize> = BTreeMap::new();
    for r in records {
        let key = match facet {
            Facet::Dx => vec![r.dx.code().to_string()],
            Facet::DxType => vec![r.dx.code().to_string(), r.dx_type.clone()],
            Facet::Localization => vec![r.localization.clone()],
            Facet::AgeByDx => match r.age {
                Some(a) => vec![r.dx.code().to_string(), age_bin(a)],
                None => continue,
            },
        };
        *counts.entry(key).or_default() += 1;
    }
    let columns = match facet {
        Facet::Dx => vec!["dx"],
        Facet::DxType => vec!["dx", "dx_type"],
        Facet::Localization => vec!["localization"],
        Facet::AgeByDx => vec!["dx", "age_bin"],
    };
    let mut rows: Vec<_> = counts.into_iter().collect();
    // BTreeMap order is lexical; a stable sort on count keeps it for ties.
    rows.sort_by(|a, b| b.1.cmp(&a.1));
    CountTable {
        columns: columns.into_iter().map(String::from).collect(),
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "lesion_id,image_id,dx,dx_type,age,sex,localization\n";

    #[test]
    fn parses_rows_and_missing_age() {
        let text = format!(
            "{HEADER}HAM_0000118,ISIC_0027419,bkl,histo,80.0,male,scalp\nHAM_0002730,ISIC_0026769,nv,follow_up,,female,back\n"
        );
        let recs = read_metadata(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].dx, ClassLabel::Bkl);
        assert_eq!(recs[0].age, Some(80.0));
        assert_eq!(recs[1].age, None);
    }

    #[test]
    fn empty_file_with_header() {
        assert!(read_metadata(HEADER.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn unknown_dx_names_line() {
        let text =
            format!("{HEADER}a,b,nv,histo,5,male,back\nHAM_1,ISIC_1,xyz,histo,40,male,back\n");
        match read_metadata(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_column_rejected() {
        assert!(read_metadata("lesion_id,image_id,dx\n".as_bytes()).is_err());
    }

    #[test]
    fn duplicate_image_rejected() {
        let text = format!("{HEADER}a,X,nv,histo,5,male,back\nb,X,mel,histo,5,male,back\n");
        assert!(read_metadata(text.as_bytes()).is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_metadata(Path::new("/nonexistent/meta.csv")),
            Err(Error::Io(_))
        ));
    }

    fn rec(id: &str, dx: ClassLabel, dx_type: &str, age: Option<f64>, loc: &str) -> MetadataRecord {
        MetadataRecord {
            lesion_id: format!("L{id}"),
            image_id: id.into(),
            dx,
            dx_type: dx_type.into(),
            age,
            sex: "male".into(),
            localization: loc.into(),
        }
    }

    #[test]
    fn tabulate_sorting_and_partition() {
        let recs = vec![
            rec("1", ClassLabel::Nv, "follow_up", Some(42.0), "back"),
            rec("2", ClassLabel::Nv, "follow_up", Some(44.0), "back"),
            rec("3", ClassLabel::Mel, "histo", None, "face"),
            rec("4", ClassLabel::Bcc, "histo", Some(70.0), "abdomen"),
        ];
        let t = tabulate(&recs, Facet::Dx);
        assert_eq!(t.total(), 4);
        assert_eq!(t.rows[0], (vec!["nv".to_string()], 2));
        assert_eq!(t.rows[1].0, vec!["bcc".to_string()]);
        let ages = tabulate(&recs, Facet::AgeByDx);
        assert_eq!(ages.total(), 3);
        assert_eq!(ages.count(&["nv", "40-44"]), 2);
        let types = tabulate(&recs, Facet::DxType);
        assert_eq!(types.count(&["mel", "histo"]), 1);
        assert_eq!(tabulate(&recs, Facet::Localization).count(&["back"]), 2);
        assert!(tabulate(&[], Facet::Dx).rows.is_empty());
        assert!("bogus".parse::<Facet>().is_err());
    }
}
