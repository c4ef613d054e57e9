//! Append-only, content-addressed piece store. A piece id is the first 16
//! hex digits of the SHA-256 of its normalized MIDI bytes.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use sha2::{Digest, Sha256};
use thiserror::Error;
use trackfill_core::midi::{parse_midi, write_midi, MidiError};
use trackfill_core::score::Piece;

pub const ID_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("workspace I/O on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("not a MIDI file: {0}")]
    Midi(#[from] MidiError),
}

pub fn piece_id(bytes: &[u8]) -> String {
    let mut id = hex::encode(Sha256::digest(bytes));
    id.truncate(ID_LEN);
    id
}

pub fn is_piece_id(s: &str) -> bool {
    s.len() == ID_LEN && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

/// Writes `piece` out and reads it back, so equal content gets equal bytes.
pub fn normalize(piece: &Piece) -> Result<(Vec<u8>, Piece), MidiError> {
    let once = parse_midi(&write_midi(piece, true), true)?;
    Ok((write_midi(&once, true), once))
}

pub struct Workspace {
    pieces: PathBuf,
    cache: RwLock<HashMap<String, Arc<Piece>>>,
    writer: Mutex<()>,
}

impl Workspace {
    pub fn open(root: &Path) -> Result<Self, WorkspaceError> {
        let pieces = root.join("pieces");
        std::fs::create_dir_all(&pieces).map_err(|source| WorkspaceError::Io { path: pieces.clone(), source })?;
        Ok(Workspace { pieces, cache: RwLock::new(HashMap::new()), writer: Mutex::new(()) })
    }

    fn path_of(&self, id: &str) -> PathBuf {
        self.pieces.join(format!("{id}.mid"))
    }

    pub fn put_midi(&self, bytes: &[u8]) -> Result<(String, Arc<Piece>), WorkspaceError> {
        self.put_piece(&parse_midi(bytes, true)?)
    }

    /// Stores a piece unless an identical one exists. Existing files are
    /// never rewritten.
    pub fn put_piece(&self, piece: &Piece) -> Result<(String, Arc<Piece>), WorkspaceError> {
        let (bytes, normalized) = normalize(piece)?;
        let id = piece_id(&bytes);
        let path = self.path_of(&id);
        {
            let _guard = self.writer.lock().expect("writer lock");
            if !path.exists() {
                let io = |source| WorkspaceError::Io { path: path.clone(), source };
                let tmp = self.pieces.join(format!(".{id}.tmp"));
                let mut f = std::fs::File::create(&tmp).map_err(io)?;
                f.write_all(&bytes).and_then(|_| f.sync_all()).map_err(io)?;
                std::fs::rename(&tmp, &path).map_err(io)?;
            }
        }
        let piece = Arc::new(normalized);
        self.cache.write().expect("cache lock").insert(id.clone(), piece.clone());
        Ok((id, piece))
    }

    pub fn get(&self, id: &str) -> Result<Option<Arc<Piece>>, WorkspaceError> {
        if !is_piece_id(id) {
            return Ok(None);
        }
        if let Some(p) = self.cache.read().expect("cache lock").get(id) {
            return Ok(Some(p.clone()));
        }
        let Some(bytes) = self.midi(id)? else {
            return Ok(None);
        };
        let piece = Arc::new(parse_midi(&bytes, true)?);
        self.cache.write().expect("cache lock").insert(id.to_string(), piece.clone());
        Ok(Some(piece))
    }

    pub fn midi(&self, id: &str) -> Result<Option<Vec<u8>>, WorkspaceError> {
        if !is_piece_id(id) {
            return Ok(None);
        }
        let path = self.path_of(id);
        match std::fs::read(&path) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(WorkspaceError::Io { path, source }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use trackfill_core::score::{Bar, Note, Program, TimeSig, Track};

    fn piece(pitch: u8) -> Piece {
        Piece::new(vec![Track::new(
            Program::Melodic(3),
            vec![Bar::new(TimeSig::FOUR_FOUR, vec![Note::new(pitch, 0, 12)]).unwrap()],
        )])
    }

    #[test]
    fn ids_are_content_addressed() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(dir.path()).unwrap();
        let (a, _) = ws.put_piece(&piece(60)).unwrap();
        let (b, _) = ws.put_piece(&piece(60)).unwrap();
        let (c, _) = ws.put_piece(&piece(61)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(is_piece_id(&a));
        let bytes = ws.midi(&a).unwrap().unwrap();
        assert_eq!(piece_id(&bytes), a);
        assert_eq!(ws.put_midi(&bytes).unwrap().0, a);
    }

    #[test]
    fn reopened_workspace_reads_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let (id, stored) = Workspace::open(dir.path()).unwrap().put_piece(&piece(64)).unwrap();
        let ws = Workspace::open(dir.path()).unwrap();
        assert_eq!(ws.get(&id).unwrap().unwrap(), stored);
        assert!(ws.get("0123456789abcdef").unwrap().is_none());
        assert!(ws.get("../../etc/passwd").unwrap().is_none());
    }
}
