//! Weather-noise classes and their one-hot indicator vectors.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};

/// The nine canonical class names, in index order. Rain is index 1 and Snow
/// index 2; the compound classes combine their constituents.
pub const CLASS_NAMES: [&str; 9] =
    ["Clean", "Rain", "Snow", "Fog", "Light", "Dark", "Rain&Snow", "Rain&Fog", "Snow&Fog"];

/// Ordered table of noise-class names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseClassTable {
    names: Vec<String>,
}

impl Default for NoiseClassTable {
    fn default() -> Self {
        NoiseClassTable { names: CLASS_NAMES.iter().map(|s| s.to_string()).collect() }
    }
}

impl NoiseClassTable {
    /// Custom table; the default nine-class table is `Default::default()`.
    pub fn new(names: Vec<String>) -> Self {
        NoiseClassTable { names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, index: usize) -> Result<&str> {
        self.names
            .get(index)
            .map(String::as_str)
            .ok_or(CoreError::ClassIndexOutOfRange { index, len: self.names.len() })
    }
}

/// One-hot encoding of a noise class.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseIndicator {
    class_index: usize,
    vector: Vec<f64>,
}

impl NoiseIndicator {
    pub fn from_index(class_index: usize, table_len: usize) -> Result<Self> {
        if class_index >= table_len {
            return Err(CoreError::ClassIndexOutOfRange { index: class_index, len: table_len });
        }
        let mut vector = vec![0.0; table_len];
        vector[class_index] = 1.0;
        Ok(NoiseIndicator { class_index, vector })
    }

    pub fn class_index(&self) -> usize {
        self.class_index
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn len(&self) -> usize {
        self.vector.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vector.is_empty()
    }
}

/// Build the one-hot indicator for `class_name` under `table`'s ordering.
pub fn make_indicator(class_name: &str, table: &NoiseClassTable) -> Result<NoiseIndicator> {
    let index = table.index_of(class_name).ok_or_else(|| CoreError::UnknownClass {
        given: class_name.to_string(),
        valid: table.names().to_vec(),
    })?;
    NoiseIndicator::from_index(index, table.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rain_and_snow_layouts() {
        let table = NoiseClassTable::default();
        let rain = make_indicator("Rain", &table).unwrap();
        assert_eq!(rain.vector(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(rain.class_index(), 1);
        let snow = make_indicator("Snow", &table).unwrap();
        assert_eq!(snow.vector(), &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let clean = make_indicator("Clean", &table).unwrap();
        assert_eq!(clean.vector(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn one_hot_invariant() {
        let table = NoiseClassTable::default();
        for name in CLASS_NAMES {
            let ind = make_indicator(name, &table).unwrap();
            let ones = ind.vector().iter().filter(|&&v| v == 1.0).count();
            let zeros = ind.vector().iter().filter(|&&v| v == 0.0).count();
            assert_eq!((ones, zeros), (1, 8));
            assert_eq!(ind.vector()[ind.class_index()], 1.0);
        }
    }

    #[test]
    fn unknown_class_lists_valid_names() {
        let table = NoiseClassTable::default();
        match make_indicator("Hail", &table) {
            Err(CoreError::UnknownClass { given, valid }) => {
                assert_eq!(given, "Hail");
                assert_eq!(valid.len(), 9);
                assert!(valid.contains(&"Rain&Fog".to_string()));
            }
            other => panic!("expected unknown-class error, got {other:?}"),
        }
    }
}
