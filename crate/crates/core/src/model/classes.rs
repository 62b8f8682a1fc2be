use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class index of the background.
pub const BACKGROUND: u8 = 0;
/// Class index of ignored pixels. Never a real class.
pub const IGNORE: u8 = 255;
/// Largest number of non-background classes that fits below [`IGNORE`].
pub const MAX_CLASSES: usize = 254;

/// Ordered class names; index 0 is always `"background"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ClassTable {
    names: Vec<String>,
}

impl ClassTable {
    pub fn new(names: Vec<String>) -> Result<Self> {
        match names.first() {
            Some(first) if first == "background" => {}
            Some(first) => {
                return Err(Error::InvariantViolation(format!(
                    "class 0 must be \"background\", found {first:?}"
                )))
            }
            None => return Err(Error::InvariantViolation("class table is empty".into())),
        }
        let n_cl = names.len() - 1;
        if n_cl == 0 || n_cl > MAX_CLASSES {
            return Err(Error::InvariantViolation(format!(
                "class count {n_cl} outside 1..={MAX_CLASSES}"
            )));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if name.is_empty() {
                return Err(Error::InvariantViolation("empty class name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::InvariantViolation(format!(
                    "duplicate class name {name:?}"
                )));
            }
        }
        Ok(Self { names })
    }

    /// The six body-part classes of the decomposition setting.
    pub fn body_parts() -> Self {
        Self::new(
            ["background", "hand", "arm", "foot", "leg", "torso", "head"]
                .into_iter()
                .map(String::from)
                .collect(),
        )
        .expect("static table is valid")
    }

    /// Number of non-background classes.
    pub fn n_cl(&self) -> usize {
        self.names.len() - 1
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: u8) -> Option<&str> {
        self.names.get(index as usize).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<u8> {
        self.names.iter().position(|n| n == name).map(|i| i as u8)
    }

    /// True when `value` is a legal mask value under this table.
    pub fn admits(&self, value: u8) -> bool {
        value == IGNORE || (value as usize) <= self.n_cl()
    }
}

impl TryFrom<Vec<String>> for ClassTable {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        Self::new(names)
    }
}

impl From<ClassTable> for Vec<String> {
    fn from(table: ClassTable) -> Self {
        table.names
    }
}
