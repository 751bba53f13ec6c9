use std::path::Path;

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::usage;

/// Parsed config file, or an empty table when none was given.
pub fn load(path: Option<&Path>) -> anyhow::Result<toml::Table> {
    let Some(path) = path else {
        return Ok(toml::Table::new());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    text.parse::<toml::Table>()
        .map_err(|e| usage(format!("config {}: {e}", path.display())))
}

/// Overlays flags on the `[section]` table of the config file. Flags that were
/// given win; unset flags fall back to the file, then to built-in defaults.
pub fn merge<T>(flags: T, file: &toml::Table, section: &str) -> anyhow::Result<T>
where
    T: Serialize + DeserializeOwned,
{
    let mut base = match file.get(section) {
        Some(toml::Value::Table(t)) => serde_json::to_value(t)?,
        Some(_) => return Err(usage(format!("config entry [{section}] must be a table"))),
        None => serde_json::Value::Object(Default::default()),
    };
    overlay(&mut base, serde_json::to_value(&flags)?);
    serde_json::from_value(base).map_err(|e| usage(format!("config [{section}]: {e}")))
}

/// Copies non-null leaves of `over` into `base`, descending into nested tables.
fn overlay(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => overlay(slot, v),
                    _ if v.is_null() => {}
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) if !o.is_null() => *b = o,
        _ => {}
    }
}
