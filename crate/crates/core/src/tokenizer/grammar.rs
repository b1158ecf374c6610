//! Strict incremental recognizer for the token grammar.
//!
//! The state is a small summary of the tokens seen so far (phase, time
//! signature, current staff/voice, units left in the voice, bars completed),
//! so the set of legal successors of any prefix is computable without
//! rescanning it. Sampling uses it to mask illegal tokens and to keep enough
//! token budget to close the piece.

use super::token::{Token, MAX_DUR_UNITS, UNITS_PER_QUARTER};
use crate::score::TimeSig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GrammarConfig {
    /// Measures after which only END is legal.
    pub bar_limit: usize,
    /// Whether `tie` tokens are accepted.
    pub allow_ties: bool,
    pub max_voice: u8,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        GrammarConfig { bar_limit: 16, allow_ties: false, max_voice: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Start,
    AfterStartTime,
    /// Between measures; also reached when a measure's last voice fills.
    Boundary,
    AfterTimeChange,
    AfterKeyChange,
    AfterBar,
    AfterStaff,
    /// Inside a voice at an event boundary.
    InVoice,
    AfterDur,
    InChord,
    AfterTie,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrammarState {
    cfg: GrammarConfig,
    phase: Phase,
    time: Option<TimeSig>,
    key: Option<i8>,
    bars_done: usize,
    staff: u8,
    voice: u8,
    remaining: i64,
    pending_dur: i64,
    last_midi: i32,
}

fn cap_units(ts: TimeSig) -> i64 {
    (ts.capacity() * crate::score::Quarters::from_integer(UNITS_PER_QUARTER)).to_integer()
}

/// Fewest tokens that fill `units` of a voice.
fn fill_cost(units: i64) -> usize {
    if units <= 0 {
        0
    } else {
        2 * (units as usize).div_ceil(MAX_DUR_UNITS as usize)
    }
}

/// Fewest tokens of a whole measure: bar, then per staff: staff, voice, fill.
fn measure_cost(cap: i64) -> usize {
    1 + 2 * (2 + fill_cost(cap))
}

impl GrammarState {
    pub fn new(cfg: GrammarConfig) -> Self {
        GrammarState {
            cfg,
            phase: Phase::Start,
            time: None,
            key: None,
            bars_done: 0,
            staff: 0,
            voice: 0,
            remaining: 0,
            pending_dur: 0,
            last_midi: i32::MIN,
        }
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    pub fn bars_done(&self) -> usize {
        self.bars_done
    }

    fn cap(&self) -> i64 {
        cap_units(self.time.unwrap_or_default())
    }

    /// True when the current voice is full and the measure could close here.
    fn at_measure_end(&self) -> bool {
        self.phase == Phase::InVoice && self.remaining == 0 && self.staff == 2
    }

    /// Feeds one token. On error the state is unchanged.
    pub fn accept(&mut self, tok: &Token) -> Result<(), String> {
        let mut next = self.clone();
        next.step(tok)?;
        *self = next;
        Ok(())
    }

    /// Returns whether `tok` is a legal successor.
    pub fn allows(&self, tok: &Token) -> bool {
        self.clone().step(tok).is_ok()
    }

    fn close_event(&mut self) {
        self.remaining -= self.pending_dur;
        self.pending_dur = 0;
        self.phase = Phase::InVoice;
    }

    fn step(&mut self, tok: &Token) -> Result<(), String> {
        let err = || Err(format!("`{}` not legal here", tok));
        match self.phase {
            Phase::InChord | Phase::AfterTie => match tok {
                Token::Note(p) if self.phase == Phase::InChord => {
                    let midi = p.midi_number();
                    if midi <= self.last_midi || !p.is_valid() {
                        return err();
                    }
                    self.last_midi = midi;
                    Ok(())
                }
                Token::Tie if self.phase == Phase::InChord && self.cfg.allow_ties => {
                    self.phase = Phase::AfterTie;
                    Ok(())
                }
                Token::Note(_) | Token::Tie => err(),
                _ => {
                    self.close_event();
                    self.step(tok)
                }
            },
            Phase::Start => match tok {
                Token::Time(ts) => {
                    self.time = Some(*ts);
                    self.phase = Phase::AfterStartTime;
                    Ok(())
                }
                _ => err(),
            },
            Phase::AfterStartTime => match tok {
                Token::Key(k) => {
                    self.key = Some(*k);
                    self.phase = Phase::Boundary;
                    Ok(())
                }
                _ => err(),
            },
            Phase::Boundary => self.boundary_step(tok),
            Phase::AfterTimeChange => match tok {
                Token::Key(k) if Some(*k) != self.key => {
                    self.key = Some(*k);
                    self.phase = Phase::AfterKeyChange;
                    Ok(())
                }
                Token::Bar => self.open_bar(),
                _ => err(),
            },
            Phase::AfterKeyChange => match tok {
                Token::Bar => self.open_bar(),
                _ => err(),
            },
            Phase::AfterBar => match tok {
                Token::Staff(1) => {
                    self.staff = 1;
                    self.voice = 0;
                    self.phase = Phase::AfterStaff;
                    Ok(())
                }
                _ => err(),
            },
            Phase::AfterStaff => match tok {
                Token::Voice(v) if *v > self.voice && *v <= self.cfg.max_voice => self.open_voice(*v),
                _ => err(),
            },
            Phase::InVoice => {
                if self.remaining > 0 {
                    return match tok {
                        Token::Dur(d) if (*d as i64) <= self.remaining => {
                            self.pending_dur = *d as i64;
                            self.phase = Phase::AfterDur;
                            Ok(())
                        }
                        _ => err(),
                    };
                }
                match tok {
                    Token::Voice(v) if *v > self.voice && *v <= self.cfg.max_voice => self.open_voice(*v),
                    Token::Staff(2) if self.staff == 1 => {
                        self.staff = 2;
                        self.voice = 0;
                        self.phase = Phase::AfterStaff;
                        Ok(())
                    }
                    _ if self.staff == 2 => {
                        self.bars_done += 1;
                        self.phase = Phase::Boundary;
                        let r = self.boundary_step(tok);
                        if r.is_err() {
                            self.bars_done -= 1;
                            self.phase = Phase::InVoice;
                        }
                        r
                    }
                    _ => err(),
                }
            }
            Phase::AfterDur => match tok {
                Token::Rest => {
                    self.close_event();
                    Ok(())
                }
                Token::Note(p) if p.is_valid() => {
                    self.last_midi = p.midi_number();
                    self.phase = Phase::InChord;
                    Ok(())
                }
                _ => err(),
            },
            Phase::Done => err(),
        }
    }

    fn boundary_step(&mut self, tok: &Token) -> Result<(), String> {
        let at_limit = self.bars_done >= self.cfg.bar_limit;
        match tok {
            Token::End if self.bars_done >= 1 => {
                self.phase = Phase::Done;
                Ok(())
            }
            Token::Time(ts) if !at_limit && Some(*ts) != self.time => {
                self.time = Some(*ts);
                self.phase = Phase::AfterTimeChange;
                Ok(())
            }
            Token::Key(k) if !at_limit && Some(*k) != self.key => {
                self.key = Some(*k);
                self.phase = Phase::AfterKeyChange;
                Ok(())
            }
            Token::Bar if !at_limit => self.open_bar(),
            _ => Err(format!("`{}` not legal between measures", tok)),
        }
    }

    fn open_bar(&mut self) -> Result<(), String> {
        if self.bars_done >= self.cfg.bar_limit {
            return Err("bar limit reached".into());
        }
        self.phase = Phase::AfterBar;
        self.staff = 0;
        self.voice = 0;
        Ok(())
    }

    fn open_voice(&mut self, v: u8) -> Result<(), String> {
        self.voice = v;
        self.remaining = self.cap();
        self.phase = Phase::InVoice;
        Ok(())
    }

    /// Fewest further tokens (END included) that complete a legal sequence.
    pub fn min_tokens_to_finish(&self) -> usize {
        let cap = self.cap();
        let rest_of_measure = |staff: u8| if staff == 1 { 2 + fill_cost(cap) } else { 0 };
        let close = |bars_after: usize| if bars_after >= 1 { 1 } else { measure_cost(cap) + 1 };
        match self.phase {
            Phase::Done => 0,
            Phase::Start => 2 + measure_cost(cap_units(TimeSig::default())) + 1,
            Phase::AfterStartTime => 1 + measure_cost(cap) + 1,
            Phase::Boundary => close(self.bars_done),
            Phase::AfterTimeChange | Phase::AfterKeyChange => measure_cost(cap) + 1,
            Phase::AfterBar => measure_cost(cap) - 1 + 1,
            Phase::AfterStaff => 1 + fill_cost(cap) + rest_of_measure(self.staff) + 1,
            Phase::InVoice => fill_cost(self.remaining) + rest_of_measure(self.staff) + 1,
            Phase::AfterDur => 1 + fill_cost(self.remaining - self.pending_dur) + rest_of_measure(self.staff) + 1,
            Phase::InChord | Phase::AfterTie => {
                fill_cost(self.remaining - self.pending_dur) + rest_of_measure(self.staff) + 1
            }
        }
    }

    /// Whether `tok` is legal and still leaves a completion within `budget`
    /// tokens (counting `tok` itself).
    pub fn allows_within(&self, tok: &Token, budget: usize) -> bool {
        let mut next = self.clone();
        if next.step(tok).is_err() {
            return false;
        }
        next.min_tokens_to_finish() < budget
    }

    /// True once the measure in progress is complete and a boundary token
    /// would be legal.
    pub fn measure_complete(&self) -> bool {
        self.phase == Phase::Boundary || self.at_measure_end()
    }
}
