//! On-disk formats: state CSVs, distribution CSVs, PGM heatmaps and model
//! checkpoints. Every writer goes through [`write_atomic`].

use std::io::Write;
use std::path::Path;

use csm_core::data::Dataset;
use csm_core::exact::TabularDistribution;
use csm_core::space::{DiscreteSpace, State};
use serde_json::{json, Value};

use crate::error::{CliError, Result};

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn join(x: &[usize]) -> String {
    x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// One state per line, coordinates comma-separated, no header.
pub fn format_states(states: &[State]) -> String {
    let mut out = String::new();
    for x in states {
        out.push_str(&join(x));
        out.push('\n');
    }
    out
}

/// Parses rows of comma-separated 0/1 values. Blank lines are skipped; the
/// first line is data unless `header` is set.
pub fn parse_binary_csv(text: &str, header: bool) -> std::result::Result<Vec<State>, (usize, String)> {
    let mut rows: Vec<State> = Vec::new();
    let mut width = None;
    for (k, line) in text.lines().enumerate().skip(usize::from(header)) {
        let n = k + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| match t.trim() {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err((n, format!("non-binary value `{other}`"))),
            })
            .collect::<std::result::Result<State, _>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => return Err((n, format!("{} values, expected {w}", row.len()))),
            _ => {}
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err((0, "no data rows".into()));
    }
    Ok(rows)
}

/// Loads a binary dataset with dims `[2; D]`.
pub fn load_tabular_csv(path: &Path, header: bool) -> Result<Dataset> {
    let text = read_text(path)?;
    let rows =
        parse_binary_csv(&text, header).map_err(|(line, msg)| CliError::format(path, format!("line {line}: {msg}")))?;
    let space = DiscreteSpace::binary(rows[0].len())?;
    let name = path.file_stem().map_or("csv".into(), |s| s.to_string_lossy().into_owned());
    Ok(Dataset::new(space, rows, name, 0)?)
}

/// One line per state: coordinates then mass.
pub fn format_distribution(p: &TabularDistribution) -> Result<String> {
    let mut out = String::new();
    for (x, m) in p.space().states()?.zip(p.masses()) {
        out.push_str(&format!("{},{m:e}\n", join(&x)));
    }
    Ok(out)
}

pub fn parse_distribution(text: &str, space: &DiscreteSpace) -> std::result::Result<TabularDistribution, String> {
    let n = space.enumerable_len().map_err(|e| e.to_string())?;
    let mut mass = vec![f64::NAN; n];
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != space.ndim() + 1 {
            return Err(format!("line {}: expected {} fields", k + 1, space.ndim() + 1));
        }
        let bad = |t: &str| format!("line {}: bad value `{t}`", k + 1);
        let x = fields[..space.ndim()]
            .iter()
            .map(|t| t.parse::<usize>().map_err(|_| bad(t)))
            .collect::<std::result::Result<State, _>>()?;
        let m = fields[space.ndim()].parse::<f64>().map_err(|_| bad(fields[space.ndim()]))?;
        let i = space.index_of(&x).map_err(|e| format!("line {}: {e}", k + 1))?;
        mass[i] = m;
    }
    if mass.iter().any(|m| m.is_nan()) {
        return Err("not every state is listed".into());
    }
    TabularDistribution::new(space.clone(), mass).map_err(|e| e.to_string())
}

/// P2 heatmap of a 2-D mass table, brightest cell at 255. Columns follow
/// the first coordinate, rows the second with the origin at the bottom.
pub fn format_pgm(space: &DiscreteSpace, mass: &[f64]) -> Result<String> {
    let dims = space.dims();
    if dims.len() != 2 {
        return Err(CliError::Config(format!("heatmaps need a 2-D space, got {} dims", dims.len())));
    }
    let (w, h) = (dims[0], dims[1]);
    let peak = mass.iter().cloned().fold(0.0, f64::max);
    let mut out = format!("P2\n{w} {h}\n255\n");
    for row in (0..h).rev() {
        let line: Vec<String> = (0..w)
            .map(|col| {
                let m = mass[col * h + row];
                let v = if peak > 0.0 { (255.0 * m / peak).round() } else { 0.0 };
                (v as u32).to_string()
            })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    Ok(out)
}

/// A model's description plus one parameter vector per noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Value,
    pub levels: Vec<Vec<f64>>,
}

pub const CHECKPOINT_FORMAT: &str = "csm-checkpoint";

impl Checkpoint {
    /// `header` must be a JSON object; the parameter counts are filled in.
    pub fn new(mut header: Value, levels: Vec<Vec<f64>>) -> Self {
        let obj = header.as_object_mut().expect("checkpoint header is an object");
        obj.insert("format".into(), json!(CHECKPOINT_FORMAT));
        obj.insert("version".into(), json!(1));
        obj.insert("levels".into(), json!(levels.len()));
        obj.insert("params".into(), json!(levels.first().map_or(0, Vec::len)));
        Checkpoint { header, levels }
    }

    /// A single JSON header line, then little-endian f64 parameters level by
    /// level.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header.to_string().into_bytes();
        out.push(b'\n');
        for level in &self.levels {
            for v in level {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |m: &str| CliError::format(path, m);
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header line"))?;
        let header: Value = serde_json::from_slice(&bytes[..nl]).map_err(|e| bad(&format!("header: {e}")))?;
        if header.get("format").and_then(Value::as_str) != Some(CHECKPOINT_FORMAT) {
            return Err(bad("not a checkpoint"));
        }
        let count = |k: &str| header.get(k).and_then(Value::as_u64).ok_or_else(|| bad(&format!("header lacks `{k}`")));
        let (levels, params) = (count("levels")? as usize, count("params")? as usize);
        let body = &bytes[nl + 1..];
        if body.len() != 8 * levels * params {
            return Err(bad(&format!("expected {} parameter bytes, found {}", 8 * levels * params, body.len())));
        }
        let values: Vec<f64> =
            body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let levels =
            if params == 0 { vec![Vec::new(); levels] } else { values.chunks(params).map(<[f64]>::to_vec).collect() };
        Ok(Checkpoint { header, levels })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn str_field(&self, key: &str) -> Option<&str> {
        self.header.get(key).and_then(Value::as_str)
    }

    pub fn usize_list(&self, key: &str) -> Option<Vec<usize>> {
        self.header.get(key)?.as_array()?.iter().map(|v| v.as_u64().map(|u| u as usize)).collect()
    }

    pub fn f64_list(&self, key: &str) -> Option<Vec<f64>> {
        self.header.get(key)?.as_array()?.iter().map(Value::as_f64).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_csv_parses_and_rejects() {
        let rows = parse_binary_csv("0,1,1\n1,0,0\n", false).unwrap();
        assert_eq!(rows, vec![vec![0, 1, 1], vec![1, 0, 0]]);
        assert_eq!(parse_binary_csv("a,b\n1,0\n", true).unwrap(), vec![vec![1, 0]]);
        let (line, msg) = parse_binary_csv("0,1\n1,0\n1\n", false).unwrap_err();
        assert_eq!(line, 3, "{msg}");
        let (line, msg) = parse_binary_csv("0,1\n2,0\n", false).unwrap_err();
        assert_eq!(line, 2);
        assert!(msg.contains("non-binary"));
    }

    #[test]
    fn states_round_trip_through_csv() {
        let rows = vec![vec![0, 1, 1], vec![1, 0, 0], vec![1, 1, 1]];
        assert_eq!(parse_binary_csv(&format_states(&rows), false).unwrap(), rows);
    }

    #[test]
    fn distribution_round_trips() {
        let s = DiscreteSpace::new(vec![2, 3]).unwrap();
        let p = TabularDistribution::from_weights(s.clone(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let q = parse_distribution(&format_distribution(&p).unwrap(), &s).unwrap();
        assert_eq!(p.masses(), q.masses());
        assert!(parse_distribution("0,0,1\n", &s).is_err());
    }

    #[test]
    fn pgm_is_peak_normalized() {
        let s = DiscreteSpace::new(vec![2, 2]).unwrap();
        let pgm = format_pgm(&s, &[0.5, 0.25, 0.0, 0.25]).unwrap();
        // (0,0) bottom-left, (0,1) top-left, (1,1) top-right.
        assert_eq!(pgm, "P2\n2 2\n255\n128 128\n255 0\n");
    }

    #[test]
    fn checkpoint_round_trips() {
        let c = Checkpoint::new(json!({"model": "logit_table", "dims": [4]}), vec![vec![1.5, -2.0], vec![0.0, 3.25]]);
        let back = Checkpoint::from_bytes(&c.to_bytes(), Path::new("x")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.usize_list("dims"), Some(vec![4]));
        let mut truncated = c.to_bytes();
        truncated.pop();
        assert!(Checkpoint::from_bytes(&truncated, Path::new("x")).is_err());
    }
}
