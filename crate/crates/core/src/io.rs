//! File formats.
//!
//! * matrix: TSV, first row `assay_id` then variable ids, one assay per row;
//!   values written with 17 significant digits so they re-read exactly.
//! * mapping: CSV `assay_id,sample_id`.
//! * controls: one variable id per line; blank lines and `#` comments skipped.
//! * annotation: CSV `assay_id,biology,unwanted`.
//! * simulation config: TOML, see [`parse_sim_config`].

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Issue, Result};
use crate::model::{build_mapping, AssayMatrix, ControlMask, MappingMatrix};
use crate::ruv3::{KScanResult, KStatus};
use crate::simulate::{
    Distribution, KChoice, NcRule, Replication, SignalSpec, SimResult, SimScenario, TrendSpec,
};

pub const CORNER: &str = "assay_id";

fn read_to_string(path: &Path) -> Result<String> {
    let mut s = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|e| Error::io(path, e))?;
    Ok(s)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message: message.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => parse_err(path, line, 0, format!("{kind:?}")),
    }
}

/// Reads a matrix TSV.
pub fn read_matrix_tsv(path: &Path) -> Result<AssayMatrix> {
    let text = read_to_string(path)?;
    parse_matrix_tsv(&text, path)
}

/// Parses matrix TSV text; `path` is used in error messages only.
pub fn parse_matrix_tsv(text: &str, path: &Path) -> Result<AssayMatrix> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, 1, "empty matrix file"))?;
    let mut fields = header.split('\t');
    let _corner = fields.next();
    let variable_ids: Vec<String> = fields.map(|s| s.trim().to_string()).collect();
    let n = variable_ids.len();
    if n == 0 {
        return Err(parse_err(path, 1, 2, "header lists no variable ids"));
    }
    let mut assay_ids = Vec::new();
    let mut data = Vec::new();
    for (ln, line) in lines {
        let line_no = ln + 1;
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or("").trim().to_string();
        let mut count = 0;
        for (j, field) in fields.enumerate() {
            if j >= n {
                return Err(parse_err(
                    path,
                    line_no,
                    j + 2,
                    format!("row has more than {n} values"),
                ));
            }
            let v: f64 = field.trim().parse().map_err(|_| {
                parse_err(path, line_no, j + 2, format!("cannot parse '{field}' as a number"))
            })?;
            data.push(v);
            count += 1;
        }
        if count != n {
            return Err(parse_err(
                path,
                line_no,
                count + 2,
                format!("row has {count} values, header has {n}"),
            ));
        }
        assay_ids.push(id);
    }
    let m = assay_ids.len();
    let values = DMatrix::from_row_slice(m, n, &data);
    AssayMatrix::new(values, assay_ids, variable_ids)
}

/// Writes a labelled matrix as TSV with 17 significant digits.
pub fn write_labeled_tsv(
    path: &Path,
    corner: &str,
    row_ids: &[String],
    col_ids: &[String],
    values: &DMatrix<f64>,
) -> Result<()> {
    if values.nrows() != row_ids.len() || values.ncols() != col_ids.len() {
        return Err(Error::Dimension(format!(
            "{}x{} values for {} row and {} column labels",
            values.nrows(),
            values.ncols(),
            row_ids.len(),
            col_ids.len()
        )));
    }
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    let mut line = String::with_capacity(32 * (col_ids.len() + 1));
    line.push_str(corner);
    for c in col_ids {
        line.push('\t');
        line.push_str(c);
    }
    line.push('\n');
    w.write_all(line.as_bytes()).map_err(io)?;
    use std::fmt::Write as _;
    for (i, id) in row_ids.iter().enumerate() {
        line.clear();
        line.push_str(id);
        for j in 0..values.ncols() {
            let _ = write!(line, "\t{:.16e}", values[(i, j)]);
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_matrix_tsv(path: &Path, m: &AssayMatrix) -> Result<()> {
    write_labeled_tsv(path, CORNER, &m.assay_ids, &m.variable_ids, &m.values)
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn check_header(path: &Path, rdr: &mut csv::Reader<&[u8]>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(|e| csv_err(path, e))?;
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(parse_err(
            path,
            1,
            1,
            format!("expected header '{}', found '{}'", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

/// Reads rows of a headed CSV keyed by assay id and returns the remaining
/// fields in the order of `assay_ids`.
fn read_keyed_csv(path: &Path, header: &[&str], assay_ids: &[String]) -> Result<Vec<Vec<String>>> {
    let text = read_to_string(path)?;
    let mut rdr = csv_reader(&text);
    check_header(path, &mut rdr, header)?;
    let index: HashMap<&str, usize> = assay_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut rows: Vec<Option<Vec<String>>> = vec![None; assay_ids.len()];
    let mut issues = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(r + 2);
        let id = rec.get(0).unwrap_or("").to_string();
        if let Some(&first) = seen.get(&id) {
            issues.push(Issue::Other(format!(
                "{}: assay id '{id}' listed on lines {first} and {line}",
                path.display()
            )));
            continue;
        }
        seen.insert(id.clone(), line);
        match index.get(id.as_str()) {
            Some(&i) => rows[i] = Some(rec.iter().skip(1).map(str::to_string).collect()),
            None => issues.push(Issue::UnknownAssayId { id }),
        }
    }
    for (i, r) in rows.iter().enumerate() {
        if r.is_none() {
            issues.push(Issue::Other(format!(
                "{}: no entry for assay '{}'",
                path.display(),
                assay_ids[i]
            )));
        }
    }
    if !issues.is_empty() {
        return Err(Error::Invalid(issues));
    }
    Ok(rows.into_iter().map(Option::unwrap).collect())
}

/// Reads a mapping CSV and aligns it to `assay_ids` (the matrix row order).
/// Samples are indexed in order of first appearance along the rows.
pub fn read_mapping_csv(path: &Path, assay_ids: &[String]) -> Result<MappingMatrix> {
    let rows = read_keyed_csv(path, &["assay_id", "sample_id"], assay_ids)?;
    let pairs: Vec<(&str, &str)> = assay_ids
        .iter()
        .zip(&rows)
        .map(|(a, r)| (a.as_str(), r[0].as_str()))
        .collect();
    build_mapping(&pairs)
}

pub fn write_mapping_csv(path: &Path, mapping: &MappingMatrix, assay_ids: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let err = |e: csv::Error| csv_err(path, e);
    w.write_record(["assay_id", "sample_id"]).map_err(err)?;
    for (a, s) in mapping.pairs(assay_ids) {
        w.write_record([a, s]).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `(biology, unwanted)` labels aligned to `assay_ids`.
pub fn read_annotation_csv(path: &Path, assay_ids: &[String]) -> Result<(Vec<String>, Vec<String>)> {
    let rows = read_keyed_csv(path, &["assay_id", "biology", "unwanted"], assay_ids)?;
    Ok(rows.into_iter().map(|r| (r[0].clone(), r[1].clone())).unzip())
}

/// Reads a controls list and resolves it against `variable_ids`.
pub fn read_controls(path: &Path, variable_ids: &[String]) -> Result<ControlMask> {
    let text = read_to_string(path)?;
    parse_controls(&text, variable_ids)
}

pub fn parse_controls(text: &str, variable_ids: &[String]) -> Result<ControlMask> {
    let index: HashMap<&str, usize> = variable_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut unknown = Vec::new();
    let mut seen = HashSet::new();
    let mut issues = Vec::new();
    let mut indices = Vec::new();
    for line in text.lines() {
        let id = line.trim();
        if id.is_empty() || id.starts_with('#') {
            continue;
        }
        match index.get(id) {
            Some(&j) => {
                if seen.insert(j) {
                    indices.push(j);
                } else {
                    issues.push(Issue::DuplicateControl { index: j });
                }
            }
            None => unknown.push(id.to_string()),
        }
    }
    if !unknown.is_empty() {
        issues.insert(0, Issue::UnknownVariableIds { ids: unknown });
    }
    if indices.is_empty() && issues.is_empty() {
        issues.push(Issue::NoControls);
    }
    if !issues.is_empty() {
        return Err(Error::Invalid(issues));
    }
    ControlMask::from_unordered(indices)
}

pub fn write_kscan_csv(path: &Path, scan: &KScanResult) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "k,norm_sq,status").map_err(io)?;
    for (i, (v, s)) in scan.norms_sq.iter().zip(&scan.status).enumerate() {
        match s {
            KStatus::Ok => writeln!(w, "{},{:.16e},ok", i + 1, v),
            KStatus::Singular { .. } => writeln!(w, "{},,singular", i + 1),
        }
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Writes any serializable value as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    writeln!(w).map_err(io)?;
    w.flush().map_err(io)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `qtable.csv`, `summary.csv` and `slope.txt`.
pub fn write_sim_outputs(dir: &Path, result: &SimResult) -> Result<()> {
    let qpath = dir.join("qtable.csv");
    let mut w = create(&qpath)?;
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e| Error::io(p.clone(), e)
    };
    writeln!(w, "m,rep,q").map_err(io(&qpath))?;
    for p in &result.points {
        for &(rep, q) in &p.q {
            writeln!(w, "{},{},{:.16e}", p.m, rep, q).map_err(io(&qpath))?;
        }
    }
    w.flush().map_err(io(&qpath))?;

    let spath = dir.join("summary.csv");
    let mut w = create(&spath)?;
    writeln!(w, "m,mean_q,se,n_ok,n_failed").map_err(io(&spath))?;
    for p in &result.points {
        writeln!(
            w,
            "{},{:.16e},{:.16e},{},{}",
            p.m,
            p.mean,
            p.se,
            p.q.len(),
            p.failures.len()
        )
        .map_err(io(&spath))?;
    }
    w.flush().map_err(io(&spath))?;

    let text = match result.slope {
        Some((slope, se)) => format!("slope,se\n{slope:.16e},{se:.16e}\n"),
        None => "slope,se\nNA,NA\n".to_string(),
    };
    write_text(&dir.join("slope.txt"), &text)
}

/// A simulation run read from a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Template; `m` is overridden by each grid value.
    pub scenario: SimScenario,
    pub m_values: Vec<usize>,
    pub reps: usize,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map(|p| offset - p).unwrap_or(offset + 1);
    (line, col)
}

pub fn read_sim_config(path: &Path) -> Result<SimConfig> {
    let text = read_to_string(path)?;
    parse_sim_config(&text, path)
}

/// Parses a simulation config:
///
/// ```toml
/// [scenario]
/// nc_rule = "m2_over_8"        # m2_over_8 | m1.5_over_2 | 2m
/// replication = "samples_increasing"
/// distribution = "normal"      # normal | pareto_std
/// k0 = 3
/// k = 3                        # positive integer or "max"
/// seed = 1
/// mu_scale = 1.0               # optional
/// signal = { factors = 2, scale = 1.0 }   # optional
/// trend = { segments = 4 }     # optional, selects the pseudo-replicate scenario
///
/// [grid]
/// m = [16, 32, 64, 128, 256]
/// reps = 20
/// ```
///
/// Every schema violation is reported, not just the first.
pub fn parse_sim_config(text: &str, path: &Path) -> Result<SimConfig> {
    let root: toml::Table = text.parse().map_err(|e: toml::de::Error| {
        let (line, col) = e.span().map(|s| line_col(text, s.start)).unwrap_or((0, 0));
        parse_err(path, line, col, e.message().to_string())
    })?;
    let mut errs = Vec::new();
    let mut sc = SimScenario::default();
    let mut m_values = vec![16, 32, 64, 128, 256];
    let mut reps = 20usize;

    for key in root.keys() {
        if key != "scenario" && key != "grid" {
            errs.push(format!("unknown top-level key '{key}'"));
        }
    }

    fn uint(v: &toml::Value, name: &str, errs: &mut Vec<String>) -> Option<u64> {
        match v.as_integer() {
            Some(i) if i >= 0 => Some(i as u64),
            _ => {
                errs.push(format!("{name} must be a non-negative integer, got {v}"));
                None
            }
        }
    }
    fn float(v: &toml::Value, name: &str, errs: &mut Vec<String>) -> Option<f64> {
        match v {
            toml::Value::Float(f) => Some(*f),
            toml::Value::Integer(i) => Some(*i as f64),
            _ => {
                errs.push(format!("{name} must be a number, got {v}"));
                None
            }
        }
    }
    fn string<'a>(v: &'a toml::Value, name: &str, errs: &mut Vec<String>) -> Option<&'a str> {
        let s = v.as_str();
        if s.is_none() {
            errs.push(format!("{name} must be a string, got {v}"));
        }
        s
    }
    fn parsed<T: std::str::FromStr<Err = String>>(
        v: &toml::Value,
        name: &str,
        errs: &mut Vec<String>,
    ) -> Option<T> {
        let s = string(v, name, errs)?;
        match s.parse() {
            Ok(t) => Some(t),
            Err(e) => {
                errs.push(format!("{name}: {e}"));
                None
            }
        }
    }

    match root.get("scenario") {
        None => {}
        Some(toml::Value::Table(t)) => {
            for (key, v) in t {
                let name = format!("scenario.{key}");
                match key.as_str() {
                    "nc_rule" => {
                        if let Some(r) = parsed::<NcRule>(v, &name, &mut errs) {
                            sc.nc_rule = r;
                        }
                    }
                    "replication" => {
                        if let Some(r) = parsed::<Replication>(v, &name, &mut errs) {
                            sc.replication = r;
                        }
                    }
                    "distribution" => {
                        if let Some(r) = parsed::<Distribution>(v, &name, &mut errs) {
                            sc.distribution = r;
                        }
                    }
                    "k0" => {
                        if let Some(k) = uint(v, &name, &mut errs) {
                            sc.k0 = k as usize;
                        }
                    }
                    "k" => match v {
                        toml::Value::Integer(i) if *i > 0 => sc.k_choice = KChoice::Fixed(*i as usize),
                        toml::Value::String(s) => match s.parse::<KChoice>() {
                            Ok(k) => sc.k_choice = k,
                            Err(e) => errs.push(format!("{name}: {e}")),
                        },
                        _ => errs.push(format!("{name} must be a positive integer or \"max\", got {v}")),
                    },
                    "seed" => {
                        if let Some(s) = uint(v, &name, &mut errs) {
                            sc.seed = s;
                        }
                    }
                    "mu_scale" => sc.mu_scale = float(v, &name, &mut errs),
                    "signal" => match v.as_table() {
                        Some(st) => {
                            let mut spec = SignalSpec { factors: 1, scale: 1.0 };
                            for (sk, sv) in st {
                                let sname = format!("{name}.{sk}");
                                match sk.as_str() {
                                    "factors" => {
                                        if let Some(f) = uint(sv, &sname, &mut errs) {
                                            spec.factors = f as usize;
                                        }
                                    }
                                    "scale" => {
                                        if let Some(f) = float(sv, &sname, &mut errs) {
                                            spec.scale = f;
                                        }
                                    }
                                    _ => errs.push(format!("unknown key '{sname}'")),
                                }
                            }
                            sc.signal = Some(spec);
                        }
                        None => errs.push(format!("{name} must be a table")),
                    },
                    "trend" => match v.as_table() {
                        Some(tt) => {
                            let mut spec = TrendSpec::default();
                            for (tk, tv) in tt {
                                let tname = format!("{name}.{tk}");
                                match tk.as_str() {
                                    "segments" => {
                                        if let Some(s) = uint(tv, &tname, &mut errs) {
                                            spec.segments = s as usize;
                                        }
                                    }
                                    _ => errs.push(format!("unknown key '{tname}'")),
                                }
                            }
                            sc.trend = Some(spec);
                        }
                        None => errs.push(format!("{name} must be a table")),
                    },
                    _ => errs.push(format!("unknown key '{name}'")),
                }
            }
        }
        Some(v) => errs.push(format!("scenario must be a table, got {v}")),
    }

    match root.get("grid") {
        None => {}
        Some(toml::Value::Table(t)) => {
            for (key, v) in t {
                let name = format!("grid.{key}");
                match key.as_str() {
                    "m" => match v.as_array() {
                        Some(a) => {
                            let vals: Vec<usize> = a
                                .iter()
                                .filter_map(|x| uint(x, &name, &mut errs).map(|u| u as usize))
                                .collect();
                            if vals.is_empty() {
                                errs.push(format!("{name} must list at least one m"));
                            }
                            if vals.windows(2).any(|w| w[0] >= w[1]) {
                                errs.push(format!("{name} must be strictly increasing"));
                            }
                            m_values = vals;
                        }
                        None => errs.push(format!("{name} must be an array of integers")),
                    },
                    "reps" => {
                        if let Some(r) = uint(v, &name, &mut errs) {
                            reps = r as usize;
                        }
                    }
                    _ => errs.push(format!("unknown key '{name}'")),
                }
            }
        }
        Some(v) => errs.push(format!("grid must be a table, got {v}")),
    }

    if errs.is_empty() {
        if reps < 2 {
            errs.push(format!("grid.reps = {reps}, need at least 2"));
        }
        for &m in &m_values {
            for p in sc.with_m(m).problems() {
                if !errs.contains(&p) {
                    errs.push(p);
                }
            }
        }
    }
    if !errs.is_empty() {
        return Err(Error::Scenario(errs));
    }
    Ok(SimConfig {
        scenario: sc,
        m_values,
        reps,
    })
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("y.tsv");
        let values = DMatrix::from_row_slice(2, 3, &[0.1, -2.5e-300, 1.0 / 3.0, 7.0, f64::MIN_POSITIVE, -0.0]);
        let m = AssayMatrix::new(values, ids(&["a", "b"]), ids(&["g1", "g2", "g3"])).unwrap();
        write_matrix_tsv(&p, &m).unwrap();
        let back = read_matrix_tsv(&p).unwrap();
        assert_eq!(back, m);
        let p2 = dir.path().join("y2.tsv");
        write_matrix_tsv(&p2, &back).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn matrix_parse_errors_locate() {
        let p = Path::new("x.tsv");
        let err = parse_matrix_tsv("assay_id\tg1\tg2\na\t1\tzz\n", p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, column: 3, .. }), "{err}");
        let err = parse_matrix_tsv("assay_id\tg1\tg2\na\t1\n", p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_matrix_tsv("assay_id\tg1\na\tNaN\nb\t1\n", p).unwrap_err();
        assert!(matches!(err, Error::Invalid(_)));
    }

    #[test]
    fn mapping_aligned_to_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("map.csv");
        std::fs::write(&p, "assay_id,sample_id\nb,s2\na,s1\nc,s1\n").unwrap();
        let m = read_mapping_csv(&p, &ids(&["a", "b", "c"])).unwrap();
        assert_eq!(m.assay_to_sample(), &[0, 1, 0]);
        assert_eq!(m.sample_ids(), &ids(&["s1", "s2"]));
        std::fs::write(&p, "assay_id,sample_id\nb,s2\na,s1\nz,s1\n").unwrap();
        let err = read_mapping_csv(&p, &ids(&["a", "b", "c"])).unwrap_err();
        assert_eq!(err.issues().len(), 2);
        std::fs::write(&p, "assay,sample\n").unwrap();
        assert!(matches!(read_mapping_csv(&p, &ids(&["a"])), Err(Error::Parse { .. })));
    }

    #[test]
    fn controls_resolution() {
        let vars = ids(&["g1", "g2", "g3"]);
        let c = parse_controls("g3\n\n# note\ng1\n", &vars).unwrap();
        assert_eq!(c.indices(), &[0, 2]);
        let err = parse_controls("g3\nfoo\nbar\n", &vars).unwrap_err();
        assert_eq!(
            err.issues()[0],
            Issue::UnknownVariableIds { ids: ids(&["foo", "bar"]) }
        );
        assert!(parse_controls("\n", &vars).is_err());
    }

    #[test]
    fn config_parses_and_reports_all_errors() {
        let p = Path::new("c.toml");
        let cfg = parse_sim_config(
            "[scenario]\nnc_rule = \"2m\"\nk = \"max\"\nseed = 7\ntrend = { segments = 3 }\n[grid]\nm = [16, 32]\nreps = 3\n",
            p,
        )
        .unwrap();
        assert_eq!(cfg.scenario.nc_rule, NcRule::TwoM);
        assert_eq!(cfg.scenario.k_choice, KChoice::Max);
        assert_eq!(cfg.scenario.trend, Some(TrendSpec { segments: 3 }));
        assert_eq!(cfg.m_values, vec![16, 32]);
        let err = parse_sim_config(
            "[scenario]\nnc_rule = \"m\"\ndistribution = 3\ncolour = 1\n[grid]\nreps = \"x\"\n",
            p,
        )
        .unwrap_err();
        match err {
            Error::Scenario(list) => assert_eq!(list.len(), 4, "{list:?}"),
            e => panic!("{e}"),
        }
        assert!(matches!(parse_sim_config("[scenario\n", p), Err(Error::Parse { line: 1, .. })));
    }
}
