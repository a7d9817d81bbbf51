use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::{ConnectivityMatrix, Dataset, DatasetManifest, Label, Sample};

/// Largest asymmetry tolerated when reading a matrix file.
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

pub(crate) const MANIFEST_HEADER: &str = "path,label";

/// Writes `contents` to a sibling temp file, then renames it over `path`.
pub(crate) fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::other("path has no file name")))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(contents).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Serializes a matrix as `N` lines of `N` comma-separated values.
///
/// Values use the shortest decimal form that parses back to the same bits.
pub fn matrix_to_string(m: &ConnectivityMatrix) -> String {
    let n = m.n();
    let mut out = String::with_capacity(n * n * 20);
    for i in 0..n {
        for j in 0..n {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&m.get(i, j).to_string());
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix(path: &Path, m: &ConnectivityMatrix) -> Result<()> {
    write_atomic(path, matrix_to_string(m).as_bytes())
}

/// Parses a matrix file. Asymmetry up to `1e-9` is averaged away and the
/// diagonal is forced to zero.
pub fn read_matrix(path: &Path) -> Result<ConnectivityMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix(&text, path)
}

pub(crate) fn parse_matrix(text: &str, path: &Path) -> Result<ConnectivityMatrix> {
    let parse_err = |line: usize, detail: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        detail,
    };
    let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let n = rows.len();
    if n == 0 {
        return Err(parse_err(1, "empty matrix file".into()));
    }
    let mut data = Vec::with_capacity(n * n);
    for (r, line) in rows.iter().enumerate() {
        let before = data.len();
        for tok in line.split(',') {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|_| parse_err(r + 1, format!("invalid number {tok:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(r + 1, format!("non-finite value {tok:?}")));
            }
            data.push(v);
        }
        let got = data.len() - before;
        if got != n {
            return Err(Error::dim(
                format!("matrix file {}", path.display()),
                format!("row {r} has {got} values; a {n}-row matrix must be square"),
            ));
        }
    }
    for i in 0..n {
        data[i * n + i] = 0.0;
        for j in i + 1..n {
            let (a, b) = (data[i * n + j], data[j * n + i]);
            if (a - b).abs() > SYMMETRY_TOLERANCE {
                return Err(parse_err(
                    i + 1,
                    format!("asymmetric matrix at ({i}, {j}): {a} vs {b}"),
                ));
            }
            if a != b {
                let m = 0.5 * (a + b);
                data[i * n + j] = m;
                data[j * n + i] = m;
            }
        }
    }
    ConnectivityMatrix::new(Tensor::new(vec![n, n], data)?, None)
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}

pub(crate) fn parse_manifest(text: &str, path: &Path) -> Result<DatasetManifest> {
    let parse_err = |line: usize, detail: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        detail,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == MANIFEST_HEADER => {}
        _ => {
            return Err(parse_err(
                1,
                format!("header must be exactly {MANIFEST_HEADER:?}"),
            ))
        }
    }
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (i, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (p, l) = line
            .rsplit_once(',')
            .ok_or_else(|| parse_err(i + 1, "expected path,label".into()))?;
        let label: Label = l.trim().parse().map_err(|e: String| parse_err(i + 1, e))?;
        let p = p.trim().to_string();
        if !seen.insert(p.clone()) {
            return Err(parse_err(i + 1, format!("duplicate path {p:?}")));
        }
        entries.push((p, label));
    }
    Ok(DatasetManifest { entries })
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let mut out = format!("{MANIFEST_HEADER}\n");
    for (p, l) in &manifest.entries {
        out.push_str(&format!("{p},{l}\n"));
    }
    write_atomic(path, out.as_bytes())
}

/// Loads every matrix named by a manifest, resolving paths against the
/// manifest's directory.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let mut samples = Vec::with_capacity(manifest.entries.len());
    for (p, label) in &manifest.entries {
        let mut matrix = read_matrix(&base.join(p))?;
        matrix.label = Some(*label);
        samples.push(Sample {
            id: p.clone(),
            matrix,
            label: *label,
        });
    }
    Ok(Dataset { samples })
}

/// Writes each sample to `dir/<id>` and a `manifest.csv` listing them.
/// Returns the manifest path.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = DatasetManifest::default();
    for s in &dataset.samples {
        write_matrix(&dir.join(&s.id), &s.matrix)?;
        manifest.entries.push((s.id.clone(), s.label));
    }
    let path = dir.join("manifest.csv");
    write_manifest(&path, &manifest)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RandomStream;

    fn random_matrix(n: usize, seed: u64) -> ConnectivityMatrix {
        let mut rng = RandomStream::new(seed, 0);
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in i + 1..n {
                let v = rng.normal() * 10f64.powi((rng.uniform() * 20.0) as i32 - 10);
                t.data_mut()[i * n + j] = v;
                t.data_mut()[j * n + i] = v;
            }
        }
        ConnectivityMatrix::new(t, None).unwrap()
    }

    #[test]
    fn matrix_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = random_matrix(12, 4);
        let p = dir.path().join("m.csv");
        write_matrix(&p, &m).unwrap();
        let back = read_matrix(&p).unwrap();
        let bits = |m: &ConnectivityMatrix| {
            m.values()
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&m), bits(&back));
    }

    #[test]
    fn non_square_reports_row() {
        let row = vec!["0"; 116].join(",");
        let text = vec![row; 115].join("\n");
        let err = parse_matrix(&text, Path::new("x.csv")).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }), "{err}");
        assert!(err.to_string().contains("row 0"), "{err}");
    }

    #[test]
    fn asymmetry_rejected() {
        let err = parse_matrix("0,1\n1.1,0\n", Path::new("x.csv")).unwrap_err();
        assert!(err.to_string().contains("asymmetric"), "{err}");
        let ok = parse_matrix("0,1\n1.0000000000001,0\n", Path::new("x.csv")).unwrap();
        assert_eq!(ok.get(0, 1), ok.get(1, 0));
    }

    #[test]
    fn manifest_label_errors() {
        let err = parse_manifest("path,label\na.csv,PATIENT\n", Path::new("m.csv")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("{SZ, HC}") && msg.contains(":2:"), "{msg}");
        assert!(parse_manifest("file,label\n", Path::new("m.csv")).is_err());
        assert!(parse_manifest("path,label\na,SZ\na,HC\n", Path::new("m.csv")).is_err());
    }
}
