use std::path::{Path, PathBuf};

use anyhow::Context;
use sdi_core::edf_io::{load_epochs, Annotations, ChannelMap, EpochGrid};
use sdi_core::model::write_atomic;

use crate::usage;

pub const SDI_SUFFIX: &str = ".sdi.csv";

/// Fails with a usage error when a required input is absent.
pub fn require(path: &Path, what: &str) -> anyhow::Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

/// Refuses to replace an existing file unless `force` is set.
pub fn guard(path: &Path, force: bool) -> anyhow::Result<()> {
    if path.exists() && !force {
        return Err(usage(format!("{} exists; pass --force to overwrite", path.display())));
    }
    Ok(())
}

/// Guarded atomic write; creates the parent directory if needed.
pub fn write_output(path: &Path, bytes: &[u8], force: bool) -> anyhow::Result<()> {
    guard(path, force)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Files in `dir` whose names end in `suffix`, sorted by name, paired with the
/// name minus the suffix.
pub fn list_with_suffix(dir: &Path, suffix: &str) -> anyhow::Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        if let Some(id) = name.strip_suffix(suffix) {
            if path.is_file() && !id.is_empty() {
                out.push((id.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// EDF files of a directory (case-insensitive extension), sorted by id.
pub fn list_edf(dir: &Path) -> anyhow::Result<Vec<(String, PathBuf)>> {
    let mut out: Vec<(String, PathBuf)> = list_with_suffix(dir, ".edf")?;
    out.extend(list_with_suffix(dir, ".EDF")?);
    out.sort();
    if out.is_empty() {
        return Err(usage(format!("no .edf files in {}", dir.display())));
    }
    Ok(out)
}

/// Sidecar next to `<id>.edf`: `<id>.json`, else `<id>.stages.csv` with an
/// optional `<id>.arousals.csv`.
pub fn find_sidecar(edf: &Path) -> Option<(PathBuf, Option<PathBuf>)> {
    let json = edf.with_extension("json");
    if json.is_file() {
        return Some((json, None));
    }
    let stem = edf.file_stem()?.to_str()?;
    let dir = edf.parent().unwrap_or(Path::new("."));
    let stages = dir.join(format!("{stem}.stages.csv"));
    let arousals = dir.join(format!("{stem}.arousals.csv"));
    stages.is_file().then(|| (stages, arousals.is_file().then_some(arousals)))
}

/// Loads one recording with its annotations (if any) into an epoch grid.
pub fn load_night(edf: &Path, sidecar: Option<(&Path, Option<&Path>)>, map: &ChannelMap) -> anyhow::Result<EpochGrid> {
    let bytes = std::fs::read(edf).with_context(|| format!("reading {}", edf.display()))?;
    let ann = match sidecar {
        Some((p, a)) => Some(Annotations::load(p, a).with_context(|| format!("annotations {}", p.display()))?),
        None => None,
    };
    let events = ann.as_ref().map(|a| a.arousal_events()).transpose()?;
    let stages = ann.as_ref().and_then(|a| a.stages.as_deref());
    load_epochs(&bytes, map, stages, events.as_ref()).with_context(|| format!("loading {}", edf.display()))
}

/// File name without `suffix`, falling back to the file stem.
pub fn id_of(path: &Path, suffix: &str) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("night");
    match name.strip_suffix(suffix) {
        Some(id) if !id.is_empty() => id.to_string(),
        _ => path.file_stem().and_then(|s| s.to_str()).unwrap_or("night").to_string(),
    }
}
