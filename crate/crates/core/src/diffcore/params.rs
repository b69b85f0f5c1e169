//! Named parameter blocks and their checkpoint format.
//!
//! A [`ParamSet`] is an ordered map from block name to a shaped block of
//! doubles. Shapes are fixed at insertion. Each set carries a unique id and
//! a version counter bumped on every optimizer step so a recorded tape can
//! detect that its parameters changed underneath it.
//!
//! Checkpoints use a line-oriented text format with a versioned header.
//! Values are written as the hexadecimal bit pattern of the double, so a
//! round trip is bit-exact by construction.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

static NEXT_SET_ID: AtomicU64 = AtomicU64::new(1);

const HEADER: &str = "windmix-params v1";

/// One shaped block of parameters. Vectors are stored as `rows x 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Named real-valued parameter blocks with shape metadata.
#[derive(Debug, Clone)]
pub struct ParamSet {
    id: u64,
    version: u64,
    blocks: BTreeMap<String, Block>,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            id: NEXT_SET_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
            blocks: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub(crate) fn bump_version(&mut self) {
        self.version += 1;
    }

    pub fn insert_matrix(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    ) -> Result<()> {
        if rows * cols != data.len() {
            return Err(Error::DimMismatch {
                context: format!("block `{name}` ({rows}x{cols})"),
                expected: rows * cols,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("block `{name}`")));
        }
        if self.blocks.contains_key(name) {
            return Err(Error::DuplicateBlock(name.into()));
        }
        self.blocks.insert(name.into(), Block { rows, cols, data });
        Ok(())
    }

    pub fn insert_vector(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let rows = data.len();
        self.insert_matrix(name, rows, 1, data)
    }

    /// Matrix initialized uniformly in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    pub fn insert_matrix_uniform(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let bound = 1.0 / (cols.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        self.insert_matrix(name, rows, cols, data)
    }

    pub fn insert_vector_zero(&mut self, name: &str, len: usize) -> Result<()> {
        self.insert_vector(name, vec![0.0; len])
    }

    pub fn block(&self, name: &str) -> Result<&Block> {
        self.blocks
            .get(name)
            .ok_or_else(|| Error::UnknownBlock(name.into()))
    }

    pub fn get(&self, name: &str) -> Option<&Block> {
        self.blocks.get(name)
    }

    pub(crate) fn block_mut(&mut self, name: &str) -> Result<&mut Block> {
        self.blocks
            .get_mut(name)
            .ok_or_else(|| Error::UnknownBlock(name.into()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.blocks.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Block)> {
        self.blocks.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Block)> {
        self.blocks.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn total_len(&self) -> usize {
        self.blocks.values().map(Block::len).sum()
    }

    /// Serialize to the versioned text format (bit-exact round trip).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(HEADER);
        out.push('\n');
        for (name, block) in &self.blocks {
            out.push_str(&format!("block {} {} {}\n", name, block.rows, block.cols));
            let mut line = String::new();
            for (i, v) in block.data.iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                line.push_str(&format!("{:016x}", v.to_bits()));
            }
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == HEADER => {}
            other => {
                return Err(Error::invalid(format!(
                    "bad checkpoint header: {:?} (expected `{HEADER}`)",
                    other.unwrap_or("")
                )))
            }
        }
        let mut set = ParamSet::new();
        while let Some(head) = lines.next() {
            if head.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = head.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "block" {
                return Err(Error::invalid(format!("bad block header: `{head}`")));
            }
            let name = parts[1];
            let rows: usize = parts[2]
                .parse()
                .map_err(|_| Error::invalid(format!("bad row count in `{head}`")))?;
            let cols: usize = parts[3]
                .parse()
                .map_err(|_| Error::invalid(format!("bad col count in `{head}`")))?;
            let values_line = lines
                .next()
                .ok_or_else(|| Error::invalid(format!("missing values for block `{name}`")))?;
            let mut data = Vec::with_capacity(rows * cols);
            for word in values_line.split_whitespace() {
                let bits = u64::from_str_radix(word, 16)
                    .map_err(|_| Error::invalid(format!("bad value `{word}` in block `{name}`")))?;
                data.push(f64::from_bits(bits));
            }
            set.insert_matrix(name, rows, cols, data)?;
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.into(),
            source,
        })?;
        Self::from_text(&text)
    }
}

/// Gradients keyed like a `ParamSet`, one flat vector per block.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    map: BTreeMap<String, Vec<f64>>,
}

impl Gradients {
    pub(crate) fn ensure(&mut self, name: &str, len: usize) -> &mut Vec<f64> {
        self.map
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; len])
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.map.get(name).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.map.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
