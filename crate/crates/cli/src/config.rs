//! Flat key=value configuration with a fixed precedence: command-line
//! flags override config-file entries, which override built-in defaults.
//!
//! Every subcommand declares its keys in a static table; the same table
//! drives `--help` text, config-file validation (unknown keys are
//! rejected by name), and the `resolved.cfg` snapshot each run writes so
//! it can be replayed byte-for-byte.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

/// Failures split by exit code: validation problems (bad flags, bad
/// config values, missing inputs) exit 1; runtime failures exit 2.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(msg) => write!(f, "invalid usage: {msg}"),
            CliError::Runtime(msg) => write!(f, "run failed: {msg}"),
        }
    }
}

/// One configuration key: its default (`None` marks it required) and a
/// help line that states meaning, unit, and range.
#[derive(Debug)]
pub struct Key {
    pub name: &'static str,
    pub default: Option<&'static str>,
    pub help: &'static str,
}

/// A subcommand's full key table.
#[derive(Debug)]
pub struct CommandSpec {
    pub name: &'static str,
    pub about: &'static str,
    pub keys: &'static [Key],
}

impl CommandSpec {
    pub fn key(&self, name: &str) -> Option<&Key> {
        self.keys.iter().find(|k| k.name == name)
    }
}

/// A fully resolved configuration: every key has a value and a recorded
/// origin, ready for typed access and snapshotting.
#[derive(Debug)]
pub struct Ctx<'s> {
    spec: &'s CommandSpec,
    values: BTreeMap<&'static str, String>,
    explicit: BTreeMap<&'static str, Source>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Source {
    File,
    Flag,
}

impl<'s> Ctx<'s> {
    /// Merge defaults, an optional config file, and explicit flag values
    /// (strongest last). Fails on unknown file keys and on required keys
    /// that end up unset.
    pub fn resolve(
        spec: &'s CommandSpec,
        config_path: Option<&Path>,
        flag_values: &BTreeMap<String, String>,
    ) -> Result<Self, CliError> {
        let mut ctx = Ctx { spec, values: BTreeMap::new(), explicit: BTreeMap::new() };
        for key in spec.keys {
            if let Some(default) = key.default {
                ctx.values.insert(key.name, default.to_string());
            }
        }
        if let Some(path) = config_path {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Validation(format!("cannot read config file {}: {e}", path.display()))
            })?;
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (name, value) = line.split_once('=').ok_or_else(|| {
                    CliError::Validation(format!(
                        "{}:{}: expected key=value, got '{line}'",
                        path.display(),
                        i + 1
                    ))
                })?;
                let key = spec.key(name.trim()).ok_or_else(|| {
                    CliError::Validation(format!(
                        "{}:{}: unknown key '{}' for '{}'",
                        path.display(),
                        i + 1,
                        name.trim(),
                        spec.name
                    ))
                })?;
                ctx.values.insert(key.name, value.trim().to_string());
                ctx.explicit.insert(key.name, Source::File);
            }
        }
        for (name, value) in flag_values {
            let key = spec
                .key(name)
                .unwrap_or_else(|| panic!("flag --{name} not in the {} key table", spec.name));
            ctx.values.insert(key.name, value.clone());
            ctx.explicit.insert(key.name, Source::Flag);
        }
        for key in spec.keys {
            if !ctx.values.contains_key(key.name) {
                return Err(CliError::Validation(format!(
                    "'{}' requires {}=<value> ({})",
                    spec.name, key.name, key.help
                )));
            }
        }
        Ok(ctx)
    }

    pub fn command_name(&self) -> &'static str {
        self.spec.name
    }

    /// Whether this command's key table defines `name` at all (for helpers
    /// shared by commands with slightly different tables).
    pub fn spec_has(&self, name: &str) -> bool {
        self.spec.key(name).is_some()
    }

    /// Raw value lookup that tolerates keys missing from the table.
    pub fn get(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(|s| s.as_str())
    }

    /// Whether the key was set by the user (file or flag) rather than
    /// left at its default.
    pub fn was_set(&self, name: &str) -> bool {
        self.explicit.contains_key(name)
    }

    fn raw(&self, name: &str) -> &str {
        self.values
            .get(name)
            .unwrap_or_else(|| panic!("key '{name}' not in the {} key table", self.spec.name))
    }

    /// String value; validation error when empty.
    pub fn str(&self, name: &str) -> Result<&str, CliError> {
        let v = self.raw(name);
        if v.is_empty() {
            return Err(CliError::Validation(format!("{name} must not be empty")));
        }
        Ok(v)
    }

    /// String value, `None` when empty (for optional keys).
    pub fn opt_str(&self, name: &str) -> Option<&str> {
        let v = self.raw(name);
        if v.is_empty() {
            None
        } else {
            Some(v)
        }
    }

    pub fn f64(&self, name: &str) -> Result<f64, CliError> {
        self.str(name)?
            .parse::<f64>()
            .map_err(|_| CliError::Validation(format!("{name}='{}' is not a number", self.raw(name))))
    }

    pub fn opt_f64(&self, name: &str) -> Result<Option<f64>, CliError> {
        match self.opt_str(name) {
            None => Ok(None),
            Some(_) => Ok(Some(self.f64(name)?)),
        }
    }

    pub fn usize(&self, name: &str) -> Result<usize, CliError> {
        self.str(name)?.parse::<usize>().map_err(|_| {
            CliError::Validation(format!(
                "{name}='{}' is not a non-negative integer",
                self.raw(name)
            ))
        })
    }

    pub fn u64(&self, name: &str) -> Result<u64, CliError> {
        self.str(name)?.parse::<u64>().map_err(|_| {
            CliError::Validation(format!(
                "{name}='{}' is not a non-negative integer",
                self.raw(name)
            ))
        })
    }

    pub fn bool(&self, name: &str) -> Result<bool, CliError> {
        match self.raw(name) {
            "true" => Ok(true),
            "false" => Ok(false),
            other => {
                Err(CliError::Validation(format!("{name}='{other}' must be 'true' or 'false'")))
            }
        }
    }

    /// Comma-separated values; empty string means an empty list.
    pub fn list(&self, name: &str) -> Vec<String> {
        let v = self.raw(name);
        if v.is_empty() {
            Vec::new()
        } else {
            v.split(',').map(|s| s.trim().to_string()).collect()
        }
    }

    /// The replayable snapshot: every key in table order, one per line.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# resolved configuration; replay with: cib {} --config <this file> --out <dir>\n",
            self.spec.name
        ));
        out.push_str(&format!("# command={}\n", self.spec.name));
        for key in self.spec.keys {
            out.push_str(&format!("{}={}\n", key.name, self.raw(key.name)));
        }
        out
    }
}
