//! Manifest CSV: `patient_id,time_days,event,bag_path,genomic_path`.
//!
//! Feature paths are resolved relative to the manifest's directory and
//! `genomic_path` may be empty. Lines starting with `#` are comments.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::files::{load_bag, load_genomic, save_bag, save_genomic};
use super::PatientRecord;
use crate::error::{Error, Result};
use crate::survival::Outcome;

pub const MANIFEST_HEADER: [&str; 5] = [
    "patient_id",
    "time_days",
    "event",
    "bag_path",
    "genomic_path",
];

/// One parsed manifest row before any feature file is read.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub line: u64,
    pub id: String,
    pub outcome: Outcome,
    pub bag_path: PathBuf,
    pub genomic_path: Option<PathBuf>,
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::Parse {
            path: path.to_path_buf(),
            line,
            detail: format!("{kind:?}"),
        },
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(&text[..]);
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: reader.position().line().max(1),
            detail: format!(
                "expected header {}, found {}",
                MANIFEST_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut entries: Vec<ManifestEntry> = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = row.position().map_or(0, |p| p.line());
        let fail = |detail: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            detail,
        };
        let id = row[0].to_string();
        if id.is_empty() {
            return Err(fail("empty patient_id".into()));
        }
        if entries.iter().any(|e| e.id == id) {
            return Err(fail(format!("duplicate patient_id {id:?}")));
        }
        let time: f64 = row[1]
            .parse()
            .map_err(|_| fail(format!("time_days is not a number: {:?}", &row[1])))?;
        if !(time > 0.0 && time.is_finite()) {
            return Err(fail(format!("time_days must be positive, got {time}")));
        }
        let event = match &row[2] {
            "0" => false,
            "1" => true,
            other => return Err(fail(format!("event must be 0 or 1, got {other:?}"))),
        };
        if row[3].is_empty() {
            return Err(fail("empty bag_path".into()));
        }
        entries.push(ManifestEntry {
            line,
            id,
            outcome: Outcome::new(time, event),
            bag_path: base.join(&row[3]),
            genomic_path: (!row[4].is_empty()).then(|| base.join(&row[4])),
        });
    }
    Ok(entries)
}

/// Reads a manifest and every feature file it references.
pub fn load_manifest(path: &Path) -> Result<Vec<PatientRecord>> {
    load(path, true)
}

/// Reads a manifest and its bags only; genomic files are never opened.
pub fn load_manifest_images(path: &Path) -> Result<Vec<PatientRecord>> {
    load(path, false)
}

fn load(path: &Path, with_genomic: bool) -> Result<Vec<PatientRecord>> {
    let mut records: Vec<PatientRecord> = Vec::new();
    for entry in read_manifest(path)? {
        let bag = load_bag(&entry.bag_path)?;
        let genomic = entry
            .genomic_path
            .as_deref()
            .filter(|_| with_genomic)
            .map(load_genomic)
            .transpose()?;
        if let Some(first) = records.first() {
            let mismatch = |what: &str, want: usize, got: usize| Error::Parse {
                path: path.to_path_buf(),
                line: entry.line,
                detail: format!("{what} dimension {got} differs from {want} in earlier rows"),
            };
            if bag.row_len() != first.bag.row_len() {
                return Err(mismatch("bag", first.bag.row_len(), bag.row_len()));
            }
            let earlier = records.iter().find_map(|r| r.genomic.as_ref());
            if let (Some(g), Some(e)) = (&genomic, earlier) {
                if g.len() != e.len() {
                    return Err(mismatch("genomic", e.len(), g.len()));
                }
            }
        }
        records.push(PatientRecord {
            id: entry.id,
            outcome: entry.outcome,
            bag,
            genomic,
        });
    }
    Ok(records)
}

/// Writes `bags/<id>.pgxb`, `genomic/<id>.pgxg` and `manifest.csv` under
/// `dir`. `comments` are emitted as `#` lines above the header. Returns the
/// manifest path.
pub fn save_dataset(dir: &Path, records: &[PatientRecord], comments: &[String]) -> Result<PathBuf> {
    for sub in ["bags", "genomic"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let manifest = dir.join("manifest.csv");
    let mut buf = Vec::new();
    for c in comments {
        for line in c.lines() {
            writeln!(buf, "# {line}").expect("write to memory");
        }
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(MANIFEST_HEADER)
            .map_err(|e| csv_error(&manifest, e))?;
        for r in records {
            let bag_rel = format!("bags/{}.pgxb", r.id);
            save_bag(&dir.join(&bag_rel), &r.bag)?;
            let genomic_rel = match &r.genomic {
                Some(g) => {
                    let rel = format!("genomic/{}.pgxg", r.id);
                    save_genomic(&dir.join(&rel), g)?;
                    rel
                }
                None => String::new(),
            };
            w.write_record([
                r.id.clone(),
                r.outcome.time.to_string(),
                u8::from(r.outcome.event).to_string(),
                bag_rel,
                genomic_rel,
            ])
            .map_err(|e| csv_error(&manifest, e))?;
        }
        w.flush().map_err(|e| Error::io(&manifest, e))?;
    }
    fs::write(&manifest, buf).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}
