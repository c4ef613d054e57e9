//! Standard MIDI File ingestion and emission.
//!
//! Onsets are snapped to the step grid (one sixteenth-note triplet, i.e.
//! `tpq / 12` ticks) with the residual kept as a microtiming offset in
//! 1/160-step units. All grid arithmetic is done on integers so that
//! resolutions not divisible by 12 are handled exactly.

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use crate::score::{
    Bar, Note, Piece, Program, ScoreError, TimeSig, Track, DEFAULT_VELOCITY, MAX_DURATION, STEPS_PER_QUARTER,
};

const DRUM_CHANNEL: u8 = 9;
const DEFAULT_TEMPO_US: u32 = 500_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MidiError {
    #[error("malformed MIDI at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("unsupported SMF format {0}")]
    UnsupportedFormat(u16),
    #[error("SMPTE time division is not supported")]
    SmpteDivision,
    #[error("unsupported meter {time_sig} at bar {bar}")]
    UnsupportedMeter { bar: usize, time_sig: TimeSig },
    #[error("file contains no instrument tracks")]
    NoTracks,
    #[error(transparent)]
    Score(#[from] ScoreError),
}

fn malformed(offset: usize, reason: impl Into<String>) -> MidiError {
    MidiError::Malformed { offset, reason: reason.into() }
}

/// A tick position snapped to the grid. The source onset is
/// `step + micro / 160` steps, up to half a 1/160-step unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuantizedOnset {
    pub step: u32,
    pub micro: i16,
}

fn ceil_div(a: i64, b: i64) -> i64 {
    -((-a).div_euclid(b))
}

/// Nearest grid step (ties go to the later step) plus the microtiming
/// residual, rounded with ties toward the earlier unit so `micro` stays in
/// `-80..=79`.
pub fn quantize_onset(ticks: u64, tpq: u16) -> QuantizedOnset {
    let t = ticks as i64;
    let q = i64::from(tpq);
    let step = (24 * t + q).div_euclid(2 * q);
    // Residual in units of 1/tpq steps.
    let r = 12 * t - step * q;
    let micro = ceil_div(320 * r - q, 2 * q);
    QuantizedOnset { step: step as u32, micro: micro as i16 }
}

/// Tick of a grid position with microtiming, rounded to the nearest tick and
/// clamped at zero.
pub fn onset_ticks(step: u32, micro: i16, tpq: u16) -> u64 {
    let units = 160 * i64::from(step) + i64::from(micro);
    let q = i64::from(tpq);
    (2 * q * units + 1920).div_euclid(3840).max(0) as u64
}

fn steps_to_ticks(steps: u32, tpq: u16) -> u64 {
    let num = u64::from(steps) * u64::from(tpq);
    let den = u64::from(STEPS_PER_QUARTER);
    (2 * num + den) / (2 * den)
}

fn ticks_to_steps_rounded(ticks: u64, tpq: u16) -> u64 {
    let num = ticks * u64::from(STEPS_PER_QUARTER);
    let den = u64::from(tpq);
    (2 * num + den) / (2 * den)
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8], pos: usize) -> Self {
        Reader { data, pos }
    }

    fn u8(&mut self) -> Result<u8, MidiError> {
        let b = *self.data.get(self.pos).ok_or_else(|| malformed(self.pos, "unexpected end of data"))?;
        self.pos += 1;
        Ok(b)
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8], MidiError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.data.len())
            .ok_or_else(|| malformed(self.pos, format!("need {n} bytes past end of data")))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, MidiError> {
        let b = self.bytes(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32, MidiError> {
        let start = self.pos;
        let mut value = 0u32;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | u32::from(b & 0x7f);
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(malformed(start, "variable-length quantity longer than 4 bytes"))
    }

    fn data_byte(&mut self) -> Result<u8, MidiError> {
        let at = self.pos;
        let b = self.u8()?;
        if b & 0x80 != 0 {
            return Err(malformed(at, format!("expected data byte, found status {b:#04x}")));
        }
        Ok(b)
    }
}

#[derive(Debug, Clone, Copy)]
enum EventKind {
    NoteOn { channel: u8, pitch: u8, velocity: u8 },
    NoteOff { channel: u8, pitch: u8 },
    Program { channel: u8, program: u8 },
    OtherChannel { channel: u8 },
    TimeSignature(TimeSig),
    ConductorMeta,
    ChannelPrefix(u8),
    OtherMeta,
    EndOfTrack,
}

#[derive(Debug, Clone, Copy)]
struct RawEvent {
    tick: u64,
    kind: EventKind,
}

fn parse_track(data: &[u8], base: usize) -> Result<Vec<RawEvent>, MidiError> {
    let mut r = Reader::new(data, 0);
    let mut tick = 0u64;
    let mut running: Option<u8> = None;
    let mut events = Vec::new();
    while r.pos < data.len() {
        tick += u64::from(r.vlq().map_err(|e| rebase(e, base))?);
        let at = r.pos;
        let first = r.u8().map_err(|e| rebase(e, base))?;
        let status = if first & 0x80 != 0 {
            first
        } else {
            r.pos -= 1;
            running.ok_or_else(|| malformed(base + at, "running status without prior status"))?
        };
        let kind = match status {
            0xff => {
                running = None;
                let ty = r.u8().map_err(|e| rebase(e, base))?;
                let len = r.vlq().map_err(|e| rebase(e, base))? as usize;
                let payload = r.bytes(len).map_err(|e| rebase(e, base))?;
                match ty {
                    0x2f => EventKind::EndOfTrack,
                    0x58 if len >= 2 => {
                        let denominator = 1u32.checked_shl(u32::from(payload[1])).unwrap_or(0);
                        EventKind::TimeSignature(TimeSig::new(payload[0], u8::try_from(denominator).unwrap_or(0)))
                    }
                    0x20 if len >= 1 => EventKind::ChannelPrefix(payload[0] & 0x0f),
                    0x51 | 0x54 | 0x59 => EventKind::ConductorMeta,
                    _ => EventKind::OtherMeta,
                }
            }
            0xf0 | 0xf7 => {
                running = None;
                let len = r.vlq().map_err(|e| rebase(e, base))? as usize;
                r.bytes(len).map_err(|e| rebase(e, base))?;
                EventKind::OtherMeta
            }
            0x80..=0xef => {
                running = Some(status);
                let channel = status & 0x0f;
                let a = r.data_byte().map_err(|e| rebase(e, base))?;
                match status & 0xf0 {
                    0xc0 => EventKind::Program { channel, program: a },
                    0xd0 => EventKind::OtherChannel { channel },
                    hi => {
                        let b = r.data_byte().map_err(|e| rebase(e, base))?;
                        match hi {
                            0x90 if b > 0 => EventKind::NoteOn { channel, pitch: a, velocity: b },
                            0x80 | 0x90 => EventKind::NoteOff { channel, pitch: a },
                            _ => EventKind::OtherChannel { channel },
                        }
                    }
                }
            }
            other => return Err(malformed(base + at, format!("unsupported status byte {other:#04x}"))),
        };
        events.push(RawEvent { tick, kind });
        if matches!(kind, EventKind::EndOfTrack) {
            break;
        }
    }
    Ok(events)
}

fn rebase(e: MidiError, base: usize) -> MidiError {
    match e {
        MidiError::Malformed { offset, reason } => MidiError::Malformed { offset: offset + base, reason },
        other => other,
    }
}

struct RawNote {
    on: u64,
    off: u64,
    pitch: u8,
    velocity: u8,
}

/// Notes of one MIDI track grouped per program, plus what is needed to decide
/// the bar count and whether an empty chunk is an instrument track.
struct TrackNotes {
    groups: Vec<(Program, Vec<RawNote>)>,
    empty_program: Option<Program>,
    end_tick: Option<u64>,
}

type PendingOn = (u64, u8, Program);

fn collect_notes(events: &[RawEvent]) -> TrackNotes {
    let mut programs = [0u8; 16];
    let mut prefix: Option<u8> = None;
    let mut last_channel: Option<u8> = None;
    let mut is_conductor = false;
    // Open notes per (channel, pitch): start tick, velocity, program.
    let mut pending: HashMap<(u8, u8), VecDeque<PendingOn>> = HashMap::new();
    let mut groups: Vec<(Program, Vec<RawNote>)> = Vec::new();
    let mut last_off = 0u64;
    let mut end = events.last().map_or(0, |e| e.tick);

    let program_of = |programs: &[u8; 16], channel: u8| {
        if channel == DRUM_CHANNEL {
            Program::Drum
        } else {
            Program::Melodic(programs[channel as usize])
        }
    };
    let push = |groups: &mut Vec<(Program, Vec<RawNote>)>, program: Program, note: RawNote| match groups
        .iter_mut()
        .find(|(p, _)| *p == program)
    {
        Some((_, notes)) => notes.push(note),
        None => groups.push((program, vec![note])),
    };

    for ev in events {
        match ev.kind {
            EventKind::NoteOn { channel, pitch, velocity } => {
                last_channel = Some(channel);
                pending.entry((channel, pitch)).or_default().push_back((
                    ev.tick,
                    velocity,
                    program_of(&programs, channel),
                ));
            }
            EventKind::NoteOff { channel, pitch } => {
                last_channel = Some(channel);
                if let Some((on, velocity, program)) = pending.get_mut(&(channel, pitch)).and_then(VecDeque::pop_front)
                {
                    last_off = last_off.max(ev.tick);
                    push(&mut groups, program, RawNote { on, off: ev.tick, pitch, velocity });
                }
            }
            EventKind::Program { channel, program } => {
                last_channel = Some(channel);
                programs[channel as usize] = program;
            }
            EventKind::OtherChannel { channel } => last_channel = Some(channel),
            EventKind::ChannelPrefix(ch) => prefix = Some(ch),
            EventKind::TimeSignature(_) | EventKind::ConductorMeta => is_conductor = true,
            EventKind::OtherMeta => {}
            EventKind::EndOfTrack => end = ev.tick,
        }
    }

    // Notes never switched off end with the track.
    let mut dangling: Vec<_> = pending
        .into_iter()
        .flat_map(|((_, pitch), q)| q.into_iter().map(move |(on, v, p)| (on, pitch, v, p)))
        .collect();
    dangling.sort_by_key(|&(on, pitch, _, _)| (on, pitch));
    for (on, pitch, velocity, program) in dangling {
        let off = end.max(on);
        last_off = last_off.max(off);
        push(&mut groups, program, RawNote { on, off, pitch, velocity });
    }

    let empty_program = if groups.is_empty() && !is_conductor {
        let channel = prefix.or(last_channel).unwrap_or(0);
        Some(program_of(&programs, channel))
    } else {
        None
    };
    for (_, notes) in &mut groups {
        notes.sort_by_key(|n| (n.on, n.pitch));
    }
    groups.sort_by_key(|(_, notes)| notes[0].on);
    // Trailing silence only counts when the track explicitly ends after its
    // last release.
    let end_tick = (groups.is_empty() || end > last_off).then_some(end);
    TrackNotes { groups, empty_program, end_tick }
}

/// Bar grid derived from time-signature events. Meter changes take effect at
/// the first bar boundary at or after their position.
fn bar_grid(mut changes: Vec<(u32, TimeSig)>, end_step: u32) -> Result<(Vec<TimeSig>, Vec<u32>), MidiError> {
    changes.sort_by_key(|c| c.0);
    let mut meters = Vec::new();
    let mut starts = Vec::new();
    let mut current = TimeSig::FOUR_FOUR;
    let mut next_change = 0;
    let mut start = 0u32;
    while start < end_step {
        while next_change < changes.len() && changes[next_change].0 <= start {
            current = changes[next_change].1;
            next_change += 1;
        }
        let bar = meters.len();
        let len = current.checked_steps(bar).map_err(|_| MidiError::UnsupportedMeter { bar, time_sig: current })?;
        meters.push(current);
        starts.push(start);
        start += len;
    }
    Ok((meters, starts))
}

/// Parses a type 0 or type 1 Standard MIDI File into a quantized piece.
///
/// Every (MIDI track, program) pair becomes one track; channel 10 maps to
/// drums. With `expressive` off, velocities are normalized to 100 and
/// microtiming is discarded.
pub fn parse_midi(bytes: &[u8], expressive: bool) -> Result<Piece, MidiError> {
    let mut r = Reader::new(bytes, 0);
    if r.bytes(4)? != b"MThd" {
        return Err(malformed(0, "missing MThd header"));
    }
    let header_len = r.u32()? as usize;
    if header_len < 6 {
        return Err(malformed(4, "header chunk shorter than 6 bytes"));
    }
    let header = r.bytes(header_len)?;
    let format = u16::from_be_bytes([header[0], header[1]]);
    let division = u16::from_be_bytes([header[4], header[5]]);
    if format > 1 {
        return Err(MidiError::UnsupportedFormat(format));
    }
    if division & 0x8000 != 0 {
        return Err(MidiError::SmpteDivision);
    }
    if division == 0 {
        return Err(malformed(12, "zero ticks per quarter note"));
    }
    let tpq = division;

    let mut chunks = Vec::new();
    while r.pos < bytes.len() {
        let at = r.pos;
        let id = r.bytes(4)?;
        let len = r.u32()? as usize;
        let body_at = r.pos;
        let body = r.bytes(len).map_err(|_| malformed(at, "chunk length exceeds file size"))?;
        if id == b"MTrk" {
            chunks.push(parse_track(body, body_at)?);
        }
    }

    let mut changes = Vec::new();
    for ev in chunks.iter().flatten() {
        if let EventKind::TimeSignature(ts) = ev.kind {
            changes.push((quantize_onset(ev.tick, tpq).step, ts));
        }
    }
    let collected: Vec<TrackNotes> = chunks.iter().map(|evs| collect_notes(evs)).collect();

    let mut end_step = 0u32;
    for tn in &collected {
        for (_, notes) in &tn.groups {
            for n in notes {
                end_step = end_step.max(quantize_onset(n.on, tpq).step + 1);
            }
        }
        if let Some(t) = tn.end_tick {
            end_step = end_step.max(quantize_onset(t, tpq).step);
        }
    }
    let (meters, starts) = bar_grid(changes, end_step)?;

    let mut tracks = Vec::new();
    for tn in collected {
        if let Some(program) = tn.empty_program {
            tracks.push(Track::empty(program, &meters));
            continue;
        }
        for (program, notes) in tn.groups {
            let mut per_bar: Vec<Vec<Note>> = vec![Vec::new(); meters.len()];
            for raw in notes {
                let q = quantize_onset(raw.on, tpq);
                let bar = starts.partition_point(|s| *s <= q.step) - 1;
                let len = ticks_to_steps_rounded(raw.off - raw.on, tpq).clamp(1, u64::from(MAX_DURATION)) as u32;
                let mut note = Note::new(raw.pitch, q.step - starts[bar], len);
                if expressive {
                    note = note.with_expression(raw.velocity, q.micro);
                }
                let slot = &mut per_bar[bar];
                if !slot.iter().any(|n| (n.onset, n.pitch) == (note.onset, note.pitch)) {
                    slot.push(note);
                }
            }
            let bars = per_bar
                .into_iter()
                .zip(&meters)
                .map(|(notes, ts)| Bar::new(*ts, notes))
                .collect::<Result<Vec<_>, _>>()?;
            tracks.push(Track::new(program, bars));
        }
    }
    if tracks.is_empty() {
        return Err(MidiError::NoTracks);
    }
    Ok(Piece { tracks, ticks_per_quarter: tpq, style: None })
}

fn write_vlq(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 4];
    let mut i = 3;
    buf[i] = (value & 0x7f) as u8;
    value >>= 7;
    while value > 0 {
        i -= 1;
        buf[i] = (value & 0x7f) as u8 | 0x80;
        value >>= 7;
    }
    out.extend_from_slice(&buf[i..]);
}

enum OutEvent {
    Meta(u8, Vec<u8>),
    Channel(u8, Vec<u8>),
}

fn write_chunk(out: &mut Vec<u8>, mut events: Vec<(u64, u8, OutEvent)>, end: u64) {
    events.sort_by_key(|(tick, order, _)| (*tick, *order));
    let mut body = Vec::new();
    let mut last = 0u64;
    let mut running: Option<u8> = None;
    for (tick, _, ev) in events {
        write_vlq(&mut body, (tick - last) as u32);
        last = tick;
        match ev {
            OutEvent::Meta(ty, data) => {
                running = None;
                body.extend_from_slice(&[0xff, ty]);
                write_vlq(&mut body, data.len() as u32);
                body.extend_from_slice(&data);
            }
            OutEvent::Channel(status, data) => {
                if running != Some(status) {
                    body.push(status);
                    running = Some(status);
                }
                body.extend_from_slice(&data);
            }
        }
    }
    write_vlq(&mut body, (end.max(last) - last) as u32);
    body.extend_from_slice(&[0xff, 0x2f, 0x00]);
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
}

fn melodic_channel(index: usize) -> u8 {
    const CHANNELS: [u8; 15] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 10, 11, 12, 13, 14, 15];
    CHANNELS[index % CHANNELS.len()]
}

/// Emits a type 1 file: a conductor track with tempo and meters, then one
/// MIDI track per score track. Drums go to channel 10 with no program change.
pub fn write_midi(piece: &Piece, expressive: bool) -> Vec<u8> {
    let tpq = piece.ticks_per_quarter.max(1);
    let mut out = Vec::new();
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&((piece.tracks.len() + 1) as u16).to_be_bytes());
    out.extend_from_slice(&tpq.to_be_bytes());

    let meters = piece.meters();
    let mut conductor = vec![(0, 0, OutEvent::Meta(0x51, DEFAULT_TEMPO_US.to_be_bytes()[1..].to_vec()))];
    let mut step = 0u32;
    let mut previous: Option<TimeSig> = None;
    for ts in &meters {
        if previous != Some(*ts) {
            let exp = ts.denominator.trailing_zeros() as u8;
            conductor.push((steps_to_ticks(step, tpq), 1, OutEvent::Meta(0x58, vec![ts.numerator, exp, 24, 8])));
            previous = Some(*ts);
        }
        step += ts.steps().unwrap_or(48);
    }
    let end = steps_to_ticks(step, tpq);
    write_chunk(&mut out, conductor, end);

    let mut melodic_index = 0;
    for track in &piece.tracks {
        let channel = match track.program {
            Program::Drum => DRUM_CHANNEL,
            Program::Melodic(_) => {
                melodic_index += 1;
                melodic_channel(melodic_index - 1)
            }
        };
        let mut events = vec![(0, 0, OutEvent::Meta(0x20, vec![channel]))];
        if let Program::Melodic(p) = track.program {
            events.push((0, 1, OutEvent::Channel(0xc0 | channel, vec![p])));
        }
        for (start, note) in track.global_notes() {
            let (velocity, micro) = if expressive { (note.velocity, note.micro) } else { (DEFAULT_VELOCITY, 0) };
            let on = onset_ticks(start, micro, tpq);
            let off = on + steps_to_ticks(note.duration, tpq).max(1);
            // Releases sort before attacks at the same tick.
            events.push((off, 2, OutEvent::Channel(0x80 | channel, vec![note.pitch, 0])));
            events.push((on, 3, OutEvent::Channel(0x90 | channel, vec![note.pitch, velocity])));
        }
        write_chunk(&mut out, events, end);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smf(tpq: u16, tracks: &[Vec<u8>]) -> Vec<u8> {
        let mut out = b"MThd".to_vec();
        out.extend_from_slice(&6u32.to_be_bytes());
        out.extend_from_slice(&(if tracks.len() == 1 { 0u16 } else { 1 }).to_be_bytes());
        out.extend_from_slice(&(tracks.len() as u16).to_be_bytes());
        out.extend_from_slice(&tpq.to_be_bytes());
        for t in tracks {
            out.extend_from_slice(b"MTrk");
            out.extend_from_slice(&(t.len() as u32).to_be_bytes());
            out.extend_from_slice(t);
        }
        out
    }

    #[test]
    fn minimal_file_one_quarter_note() {
        // note-on 60 vel 98 at 0, note-off at 480 (delta 0x83 0x60), end of track
        let track = vec![0x00, 0x90, 60, 98, 0x83, 0x60, 0x80, 60, 0, 0x00, 0xff, 0x2f, 0x00];
        let piece = parse_midi(&smf(480, std::slice::from_ref(&track)), true).unwrap();
        assert_eq!(piece.tracks.len(), 1);
        let bar = &piece.tracks[0].bars[0];
        assert_eq!(bar.notes(), &[Note::new(60, 0, 12).with_expression(98, 0)]);
        let plain = parse_midi(&smf(480, &[track]), false).unwrap();
        assert_eq!(plain.tracks[0].bars[0].notes()[0].velocity, DEFAULT_VELOCITY);
    }

    #[test]
    fn running_status_and_zero_velocity_off() {
        // 0x90 once, then data-only events; vel 0 note-on closes the note.
        let track = vec![0x00, 0x90, 60, 90, 0x00, 64, 90, 0x83, 0x60, 60, 0, 0x00, 64, 0, 0x00, 0xff, 0x2f, 0x00];
        let piece = parse_midi(&smf(480, &[track]), false).unwrap();
        let notes = piece.tracks[0].bars[0].notes();
        assert_eq!(notes, &[Note::new(60, 0, 12), Note::new(64, 0, 12)]);
    }

    #[test]
    fn fifo_note_off_pairing() {
        // Two overlapping note-ons on the same pitch: the first off closes the first on.
        let track =
            vec![0x00, 0x90, 60, 90, 0x28, 0x90, 60, 90, 0x28, 0x80, 60, 0, 0x50, 0x80, 60, 0, 0x00, 0xff, 0x2f, 0];
        let piece = parse_midi(&smf(480, &[track]), false).unwrap();
        let notes = piece.tracks[0].bars[0].notes();
        assert_eq!(notes[0], Note::new(60, 0, 2));
        assert_eq!(notes[1], Note::new(60, 1, 3));
    }

    #[test]
    fn channel_ten_is_drums_and_programs_split() {
        let track = vec![
            0x00, 0xc0, 33, // program 33 on channel 0
            0x00, 0x99, 36, 100, // drum hit
            0x00, 0x90, 40, 100, 0x28, 0x89, 36, 0, 0x00, 0x80, 40, 0, //
            0x00, 0xc0, 34, 0x00, 0x90, 41, 100, 0x28, 0x80, 41, 0, 0x00, 0xff, 0x2f, 0,
        ];
        let piece = parse_midi(&smf(480, &[track]), false).unwrap();
        let programs: Vec<_> = piece.tracks.iter().map(|t| t.program).collect();
        assert_eq!(programs, vec![Program::Drum, Program::Melodic(33), Program::Melodic(34)]);
    }

    #[test]
    fn empty_chunk_yields_empty_track() {
        let conductor = vec![0x00, 0xff, 0x58, 4, 4, 2, 24, 8, 0x00, 0xff, 0x2f, 0x00];
        let notes = vec![0x00, 0x90, 60, 90, 0x8f, 0x00, 0x80, 60, 0, 0x00, 0xff, 0x2f, 0x00];
        let empty = vec![0x00, 0xff, 0x2f, 0x00];
        let piece = parse_midi(&smf(480, &[conductor, notes, empty]), false).unwrap();
        assert_eq!(piece.tracks.len(), 2);
        assert_eq!(piece.tracks[1].bars.len(), piece.tracks[0].bars.len());
        assert!(piece.tracks[1].bars.iter().all(Bar::is_empty));
    }

    #[test]
    fn malformed_input_reports_offsets() {
        assert!(matches!(parse_midi(b"RIFF", false), Err(MidiError::Malformed { offset: 0, .. })));
        let mut bad = smf(480, &[vec![0x00, 60, 90, 0x00, 0xff, 0x2f, 0x00]]);
        let err = parse_midi(&bad, false).unwrap_err();
        assert_eq!(err, MidiError::Malformed { offset: 23, reason: "running status without prior status".into() });
        bad.truncate(bad.len() - 2);
        assert!(matches!(parse_midi(&bad, false), Err(MidiError::Malformed { .. })));
    }

    #[test]
    fn long_meter_is_rejected_with_bar() {
        // 9/4 = 108 steps
        let track =
            vec![0x00, 0xff, 0x58, 4, 9, 2, 24, 8, 0x00, 0x90, 60, 90, 0x83, 0x60, 0x80, 60, 0, 0x00, 0xff, 0x2f, 0];
        let err = parse_midi(&smf(480, &[track]), false).unwrap_err();
        assert!(matches!(err, MidiError::UnsupportedMeter { bar: 0, .. }));
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize_onset(480, 480), QuantizedOnset { step: 12, micro: 0 });
        assert_eq!(quantize_onset(500, 480), QuantizedOnset { step: 13, micro: -80 });
        assert_eq!(quantize_onset(490, 480), QuantizedOnset { step: 12, micro: 40 });
    }

    /// Floating-point oracle: nearest step with ties up, then residual.
    fn oracle(ticks: u64, tpq: u16) -> (u32, f64) {
        let step_ticks = f64::from(tpq) / 12.0;
        let x = ticks as f64 / step_ticks;
        let step = (x + 0.5).floor();
        (step as u32, (ticks as f64 - step * step_ticks) * 160.0 / step_ticks)
    }

    #[test]
    fn quantize_matches_float_oracle_scan() {
        for t in 0..=4800u64 {
            let q = quantize_onset(t, 480);
            let (step, micro) = oracle(t, 480);
            assert_eq!(q.step, step, "ticks {t}");
            assert!((f64::from(q.micro) - micro).abs() <= 0.5, "ticks {t}");
            assert!((-80..=79).contains(&q.micro));
        }
    }

    #[test]
    fn negative_micro_lands_before_grid() {
        assert!(onset_ticks(12, -80, 480) < 480);
        assert_eq!(onset_ticks(12, 0, 480), 480);
        assert_eq!(onset_ticks(0, -10, 480), 0);
    }

    #[test]
    fn vlq_round_trip_boundaries() {
        for v in [0u32, 0x7f, 0x80, 0x3fff, 0x4000, 0x1f_ffff, 0x0fff_ffff] {
            let mut buf = Vec::new();
            write_vlq(&mut buf, v);
            assert_eq!(Reader::new(&buf, 0).vlq().unwrap(), v);
        }
    }
}
