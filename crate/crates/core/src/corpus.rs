//! Loading a directory of MIDI files and splitting it by file name.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::midi::{parse_midi, MidiError};
use crate::predictor::{split_of, Split};
use crate::score::Piece;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Midi { path: PathBuf, source: MidiError },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusFile {
    pub name: String,
    pub piece: Piece,
}

impl CorpusFile {
    pub fn split(&self) -> Split {
        split_of(&self.name)
    }
}

/// Reads every `.mid`/`.midi` file directly inside `dir`, sorted by name.
pub fn load_dir(dir: &Path, expressive: bool) -> Result<Vec<CorpusFile>, CorpusError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CorpusError::Io { path, source }
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io(dir))?;
    paths.retain(|p| {
        p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("mid") || e.eq_ignore_ascii_case("midi"))
    });
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            let bytes = std::fs::read(&path).map_err(io(&path))?;
            let piece =
                parse_midi(&bytes, expressive).map_err(|source| CorpusError::Midi { path: path.clone(), source })?;
            let name = path.file_name().expect("file path").to_string_lossy().into_owned();
            Ok(CorpusFile { name, piece })
        })
        .collect()
}

/// Pieces of one split, in name order.
pub fn pieces_in(files: &[CorpusFile], split: Split) -> Vec<Piece> {
    files.iter().filter(|f| f.split() == split).map(|f| f.piece.clone()).collect()
}

/// Path of the mini-corpus bundled with this crate.
pub fn bundled_minicorpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/minicorpus")
}
