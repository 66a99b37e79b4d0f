//! Settings resolution: a flag beats the config file, the file beats the default.
//!
//! Config files are INI with one section per module. Keys are the flag names
//! with `_` for `-` (`--max-iters-1` is `max_iters_1`). A subcommand reads its
//! own sections in order, then the unnamed top section.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;

use crate::error::CliError;

const KNOWN: &[(&str, &[&str])] = &[
    (
        "model",
        &["head", "block", "units", "channels", "kernels", "kernel", "hidden", "num_classes"],
    ),
    (
        "train",
        &[
            "mode",
            "scale",
            "k_min",
            "m_max",
            "max_iters_1",
            "max_iters_2",
            "iters_per_row",
            "lr",
            "batch_size",
            "seed",
            "val_fraction",
            "val_interval",
            "reset",
        ],
    ),
    ("data", &["data", "synth", "count", "synth_seed", "stride"]),
    ("sweep", &["checkpoint", "r_min", "r_max", "csv"]),
    (
        "adapt",
        &[
            "checkpoint",
            "frames",
            "policy",
            "alpha",
            "beta",
            "gamma",
            "delta_rows",
            "r_start",
            "r_end",
            "total_frames",
            "k_min",
            "m_max",
            "diff_source",
            "confidence",
            "csv",
        ],
    ),
    ("classify", &["checkpoint", "r", "csv"]),
    ("export", &["checkpoint"]),
    ("output", &["out"]),
];

pub struct Settings {
    ini: Option<Ini>,
    path: Option<PathBuf>,
    sections: &'static [&'static str],
}

impl Settings {
    /// Reads `path` if given and rejects unknown sections and keys.
    pub fn load(path: Option<&Path>, sections: &'static [&'static str]) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self {
                ini: None,
                path: None,
                sections,
            });
        };
        let ini = Ini::load_from_file(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        for (section, props) in ini.iter() {
            let allowed: Vec<&str> = match section {
                Some(name) => KNOWN
                    .iter()
                    .find(|(s, _)| *s == name)
                    .map(|(_, keys)| keys.to_vec())
                    .ok_or_else(|| {
                        CliError::config(format!("{}: unknown section [{name}]", path.display()))
                    })?,
                None => KNOWN.iter().flat_map(|(_, keys)| keys.iter().copied()).collect(),
            };
            if let Some((key, _)) = props.iter().find(|(k, _)| !allowed.contains(k)) {
                let place = section.map_or("top level".to_string(), |s| format!("[{s}]"));
                return Err(CliError::config(format!(
                    "{}: unknown key `{key}` in {place}",
                    path.display()
                )));
            }
        }
        Ok(Self {
            ini: Some(ini),
            path: Some(path.to_path_buf()),
            sections,
        })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        let ini = self.ini.as_ref()?;
        self.sections
            .iter()
            .find_map(|s| ini.section(Some(*s)).and_then(|p| p.get(key)))
            .or_else(|| ini.general_section().get(key))
    }

    /// The flag value, else the parsed file value.
    pub fn get<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.trim().parse().map(Some).map_err(|e| {
                let file = self.path.as_deref().unwrap_or(Path::new("config"));
                CliError::config(format!("{}: bad value `{v}` for `{key}`: {e}", file.display()))
            }),
        }
    }

    pub fn or<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.get(flag, key)?.unwrap_or(default))
    }

    pub fn require<T>(&self, flag: Option<T>, key: &str) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.get(flag, key)?.ok_or_else(|| {
            CliError::usage(format!(
                "missing --{} (or `{key}` in the config file)",
                key.replace('_', "-")
            ))
        })
    }
}

/// Comma-separated integers, e.g. `64,32`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct List(pub Vec<usize>);

impl FromStr for List {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .map(|v| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}")))
            .collect::<Result<_, _>>()
            .map(List)
    }
}

impl List {
    pub fn exact<const N: usize>(&self, key: &str) -> Result<[usize; N], CliError> {
        self.0
            .as_slice()
            .try_into()
            .map_err(|_| CliError::config(format!("`{key}` needs {N} values, got {}", self.0.len())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        f
    }

    #[test]
    fn flag_overrides_file() {
        let f = write("[train]\nlr = 0.01\nseed = 4\n");
        let s = Settings::load(Some(f.path()), &["train"]).unwrap();
        assert_eq!(s.get(Some(0.5f64), "lr").unwrap(), Some(0.5));
        assert_eq!(s.get(None::<f64>, "lr").unwrap(), Some(0.01));
        assert_eq!(s.or(None, "batch_size", 32usize).unwrap(), 32);
        assert_eq!(s.require(None::<u64>, "seed").unwrap(), 4);
    }

    #[test]
    fn sections_are_scoped() {
        let f = write("out = top\n[adapt]\nk_min = 5\n[train]\nk_min = 9\n");
        let s = Settings::load(Some(f.path()), &["train"]).unwrap();
        assert_eq!(s.get(None::<usize>, "k_min").unwrap(), Some(9));
        assert_eq!(s.get(None::<String>, "out").unwrap().as_deref(), Some("top"));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let f = write("[train]\nlearning_rate = 1\n");
        assert_eq!(Settings::load(Some(f.path()), &["train"]).err().unwrap().code, 2);
        let f = write("[gpu]\nx = 1\n");
        assert_eq!(Settings::load(Some(f.path()), &["train"]).err().unwrap().code, 2);
        let f = write("[train]\nlr = fast\n");
        let s = Settings::load(Some(f.path()), &["train"]).unwrap();
        assert_eq!(s.get(None::<f64>, "lr").err().unwrap().code, 2);
        assert_eq!(s.require(None::<usize>, "k_min").err().unwrap().code, 1);
    }

    #[test]
    fn lists() {
        let l: List = "64, 32".parse().unwrap();
        assert_eq!(l.exact::<2>("channels").unwrap(), [64, 32]);
        assert!(l.exact::<3>("kernels").is_err());
        assert!("4,x".parse::<List>().is_err());
    }
}
