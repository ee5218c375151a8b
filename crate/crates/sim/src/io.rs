//! On-disk formats.
//!
//! A scenario is a CSV of valid track rows, track-major so that agent order
//! survives a round trip, plus a JSON sidecar with the map and scene metadata. Every file carries `format_version`: CSVs as a leading
//! `# format_version: N` line, JSON documents as a field.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rollsim_core::tensor::StateTensor;
use rollsim_core::world::{AgentDims, MapPolylines, Scenario};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Milliseconds between frames at 10 Hz.
pub const FRAME_MS: u64 = 100;

const COLUMNS: [&str; 10] = ["scenario_id", "track_id", "frame", "timestamp_ms", "agent_type", "x", "y", "psi_rad", "length", "width"];

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// A JSON document with a version tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub format_version: u32,
    #[serde(flatten)]
    pub body: T,
}

pub fn write_json<T: Serialize>(path: &Path, body: &T) -> Result<()> {
    let doc = Versioned { format_version: FORMAT_VERSION, body };
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::schema(path, e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: Versioned<T> = serde_json::from_str(&text).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        line: Some(e.line() as u64),
        column: None,
        msg: e.to_string(),
    })?;
    check_version(path, doc.format_version)?;
    Ok(doc.body)
}

fn check_version(path: &Path, v: u32) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(Error::schema(path, format!("format_version {v} is not supported (expected {FORMAT_VERSION})")));
    }
    Ok(())
}

/// Writes a CSV with the version line. `rows` are already formatted fields.
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut buf = format!("# format_version: {FORMAT_VERSION}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let err = |e: csv::Error| Error::schema(path, e.to_string());
        w.write_record(header).map_err(err)?;
        for row in rows {
            w.write_record(&row).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    write_atomic(path, &buf)
}

/// Map and metadata stored next to a scenario CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    scenario_id: String,
    location: String,
    frames: usize,
    map: MapPolylines,
}

/// Path of the JSON sidecar of a scenario CSV.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("map.json")
}

/// Writes `<dir>/<id>.csv` and its sidecar; returns the CSV path.
pub fn save_scenario(scenario: &Scenario, dir: &Path) -> Result<PathBuf> {
    scenario.validate()?;
    let path = dir.join(format!("{}.csv", scenario.id));
    let mut rows = Vec::new();
    for a in 0..scenario.agents() {
        for t in 0..scenario.frames() {
            if !scenario.is_valid(a, t) {
                continue;
            }
            let s = scenario.tracks.get(a, t);
            let d = scenario.dims[a];
            rows.push(vec![
                scenario.id.clone(),
                scenario.track_ids[a].to_string(),
                t.to_string(),
                (t as u64 * FRAME_MS).to_string(),
                scenario.agent_types[a].clone(),
                s[0].to_string(),
                s[1].to_string(),
                s[2].to_string(),
                d.length.to_string(),
                d.width.to_string(),
            ]);
        }
    }
    write_csv(&path, &COLUMNS, rows)?;
    let side = Sidecar { scenario_id: scenario.id.clone(), location: scenario.location.clone(), frames: scenario.frames(), map: scenario.map.clone() };
    write_json(&sidecar_path(&path), &side)?;
    Ok(path)
}

/// Checks the leading `# format_version: N` line of a CSV.
fn check_csv_version(path: &Path, text: &str) -> Result<()> {
    let first = text.lines().next().unwrap_or_default();
    let v = first
        .strip_prefix("# format_version:")
        .and_then(|v| v.trim().parse::<u32>().ok())
        .ok_or_else(|| Error::Schema { path: path.to_path_buf(), line: Some(1), column: None, msg: "missing '# format_version: N' line".into() })?;
    check_version(path, v)
}

struct Track {
    id: u64,
    agent_type: String,
    dims: AgentDims,
    rows: Vec<(usize, [f64; 3])>,
}

/// Loads a scenario CSV and its sidecar.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    check_csv_version(path, &text)?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::schema(path, e.to_string()))?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::Schema {
            path: path.to_path_buf(),
            line: Some(2),
            column: Some(name.into()),
            msg: "required column is missing".into(),
        })
    };
    let idx: Vec<usize> = COLUMNS.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let [sid, tid, frame, _, atype, x, y, psi, len, wid] = idx[..] else { unreachable!() };

    let mut scenario_id: Option<String> = None;
    let mut tracks: Vec<Track> = Vec::new();
    let mut by_id: HashMap<u64, usize> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            line: e.position().map(|p| p.line()),
            column: None,
            msg: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let bad = |i: usize, what: &str| Error::Schema {
            path: path.to_path_buf(),
            line,
            column: Some(headers.get(i).unwrap_or_default().trim().to_string()),
            msg: format!("'{}' is not {what}", field(i)),
        };
        let num = |i: usize| field(i).parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| bad(i, "a finite number"));
        let id = field(sid);
        match &scenario_id {
            None => scenario_id = Some(id.to_string()),
            Some(s) if s != id => return Err(Error::Schema { path: path.to_path_buf(), line, column: Some("scenario_id".into()), msg: format!("'{id}' differs from '{s}'") }),
            _ => {}
        }
        let track_id = field(tid).parse::<u64>().map_err(|_| bad(tid, "a track id"))?;
        let f = field(frame).parse::<usize>().map_err(|_| bad(frame, "a frame index"))?;
        let state = [num(x)?, num(y)?, num(psi)?];
        let k = *by_id.entry(track_id).or_insert_with(|| {
            tracks.push(Track { id: track_id, agent_type: field(atype).to_string(), dims: AgentDims::new(0.0, 0.0), rows: Vec::new() });
            tracks.len() - 1
        });
        if tracks[k].rows.is_empty() {
            tracks[k].dims = AgentDims::new(num(len)?, num(wid)?);
        }
        tracks[k].rows.push((f, state));
    }

    let side: Sidecar = read_json(&sidecar_path(path))?;
    if scenario_id.as_deref().is_some_and(|id| id != side.scenario_id) {
        return Err(Error::Mismatch(format!("{}: sidecar describes scenario '{}'", path.display(), side.scenario_id)));
    }
    let frames = side.frames;
    let mut states = StateTensor::zeros(tracks.len(), frames);
    let mut valid = vec![false; tracks.len() * frames];
    for (a, tr) in tracks.iter().enumerate() {
        for (f, s) in &tr.rows {
            if *f >= frames {
                return Err(Error::schema(path, format!("track {} has frame {f} beyond the {frames}-frame scene", tr.id)));
            }
            if valid[a * frames + f] {
                return Err(Error::schema(path, format!("track {} has frame {f} twice", tr.id)));
            }
            valid[a * frames + f] = true;
            states.set(a, *f, *s);
        }
    }
    let scenario = Scenario {
        id: side.scenario_id,
        location: side.location,
        track_ids: tracks.iter().map(|t| t.id).collect(),
        agent_types: tracks.iter().map(|t| t.agent_type.clone()).collect(),
        dims: tracks.iter().map(|t| t.dims).collect(),
        tracks: states,
        valid,
        map: side.map,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Scenario CSVs in `dir`, sorted by file name.
pub fn scenario_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv") && sidecar_path(p).exists())
        .collect();
    out.sort();
    Ok(out)
}

pub fn load_dir(dir: &Path) -> Result<Vec<Scenario>> {
    scenario_files(dir)?.iter().map(|p| load_scenario(p)).collect()
}
