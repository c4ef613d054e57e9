//! Deterministic predictors for tests and experiment calibration.

use crate::controls::ControlTable;
use crate::score::Program;
use crate::tokenizer::vocab::{ids, Token, Vocab};

use super::{PredictorError, TokenPredictor};

/// Replays a fixed token script: all mass on the scripted next token while
/// the prefix follows the script, uniform once it diverges.
#[derive(Clone, Debug)]
pub struct ScriptedPredictor {
    size: usize,
    script: Vec<u32>,
}

impl ScriptedPredictor {
    pub fn new(vocab: &Vocab, script: Vec<u32>) -> Self {
        ScriptedPredictor { size: vocab.size(), script }
    }
}

impl TokenPredictor for ScriptedPredictor {
    fn vocab_size(&self) -> usize {
        self.size
    }

    fn next_distribution(&self, prefix: &[u32]) -> Result<Vec<f64>, PredictorError> {
        let on_script = prefix.len() < self.script.len() && self.script.starts_with(prefix);
        if !on_script {
            return Ok(vec![1.0 / self.size as f64; self.size]);
        }
        let mut d = vec![0.0; self.size];
        d[self.script[prefix.len()] as usize] = 1.0;
        Ok(d)
    }
}

/// Writes bars whose onset count matches the track's DENSITY token, using the
/// representative count of that level. Tracks without a DENSITY token and
/// fill blocks stay silent.
#[derive(Clone, Debug)]
pub struct EchoControlsPredictor {
    vocab: Vocab,
    table: Option<ControlTable>,
}

impl EchoControlsPredictor {
    pub fn new(vocab: &Vocab, table: ControlTable) -> Self {
        EchoControlsPredictor { vocab: vocab.clone(), table: Some(table) }
    }

    /// Writes only empty bars.
    pub fn silent(vocab: &Vocab) -> Self {
        EchoControlsPredictor { vocab: vocab.clone(), table: None }
    }

    fn target_count(&self, prefix: &[u32]) -> u32 {
        let Some(table) = &self.table else { return 0 };
        let mut program = None;
        let mut level = None;
        for &id in prefix.iter().rev() {
            match self.vocab.token(id) {
                Some(Token::Density(l)) => level = Some(l),
                Some(Token::Instrument(p)) => {
                    program = Some(p);
                    break;
                }
                Some(Token::FillStart) => return 0,
                _ => {}
            }
        }
        match (program, level) {
            (Some(p), Some(l)) => table.representative_count(p, l).min(ECHO_MAX_NOTES),
            _ => 0,
        }
    }

    fn notes_in_bar(&self, prefix: &[u32]) -> u32 {
        prefix
            .iter()
            .rev()
            .take_while(|&&id| id != ids::BAR_START && id != ids::FILL_START)
            .filter(|&&id| (ids::NOTE_ON..ids::NOTE_ON + 128).contains(&id))
            .count() as u32
    }
}

/// Chord notes use pitches upward from here.
const ECHO_LOW_PITCH: u32 = 30;
const ECHO_MAX_NOTES: u32 = 128 - ECHO_LOW_PITCH;

impl TokenPredictor for EchoControlsPredictor {
    fn vocab_size(&self) -> usize {
        self.vocab.size()
    }

    fn next_distribution(&self, prefix: &[u32]) -> Result<Vec<f64>, PredictorError> {
        let mut prefs: Vec<u32> = Vec::new();
        let last = prefix.last().and_then(|&id| self.vocab.token(id));
        let note_id = |k: u32| ids::NOTE_ON + ECHO_LOW_PITCH + k;
        match last {
            None => prefs.extend([ids::START, ids::START_FILL]),
            Some(Token::Start | Token::StartFill | Token::TrackEnd | Token::FillEnd) => {
                prefs.extend([ids::TRACK_START, ids::FILL_START])
            }
            Some(Token::TrackStart) => prefs.push(self.vocab.must(Token::Instrument(Program::Melodic(0)))),
            Some(Token::MinPoly(v)) => prefs.push(self.vocab.must(Token::MaxPoly(v))),
            Some(Token::MinDur(v)) => prefs.push(self.vocab.must(Token::MaxDur(v))),
            Some(
                Token::Instrument(_)
                | Token::Style(_)
                | Token::Density(_)
                | Token::MaxPoly(_)
                | Token::MaxDur(_)
                | Token::BarEnd,
            ) => prefs.extend([ids::BAR_START, ids::TRACK_END]),
            Some(Token::FillIn) => prefs.push(ids::BAR_END),
            Some(Token::BarStart | Token::FillStart) => {
                if self.target_count(prefix) > 0 {
                    prefs.push(ids::TIME_POSITION);
                } else {
                    prefs.extend([ids::BAR_END, ids::FILL_END]);
                }
            }
            Some(Token::TimePosition(_) | Token::Delta(_)) => prefs.push(note_id(self.notes_in_bar(prefix))),
            Some(Token::DeltaNeg) => prefs.push(ids::DELTA),
            Some(Token::NoteOn(_)) => prefs.extend([ids::DURATION, ids::VELOCITY + 100]),
            Some(Token::Velocity(_)) => prefs.push(ids::DURATION),
            Some(Token::Duration(_)) => {
                let k = self.notes_in_bar(prefix);
                if k < self.target_count(prefix) {
                    prefs.push(note_id(k));
                } else {
                    prefs.extend([ids::BAR_END, ids::FILL_END]);
                }
            }
        }
        let mut d = vec![0.0; self.vocab.size()];
        for &id in &prefs {
            d[id as usize] = 1.0 / prefs.len() as f64;
        }
        Ok(d)
    }
}
