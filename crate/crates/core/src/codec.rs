//! Hierarchical action tokens.
//!
//! Every camera delta is split into decimal digits and each digit is written
//! as a sum over the coin basis `{5, 2, 1}`. A digit at level `l` with
//! coefficient `a_d` contributes `a_d` copies of the magnitude token
//! `d * 10^l`. Because `{5, 2, 1}` is a canonical coin system, taking the
//! largest coin first gives the fewest tokens for every digit.
//!
//! Canonical sequences follow the grammar
//!
//! ```text
//! PAN [sign mag+] TILT [sign mag+] ZOOM [mag*] END
//! ```
//!
//! with magnitudes non-increasing inside a dimension and a zero dimension
//! written as its bare marker.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

/// Coin basis used for every decimal digit, largest first.
pub const BASIS: [u32; 3] = [5, 2, 1];

/// Default number of decimal digit levels (values up to 999).
pub const DEFAULT_LEVELS: u32 = 3;

/// Highest supported digit level count; `10^9` still fits in `u32`.
pub const MAX_LEVELS: u32 = 9;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("digit {0} is outside 0..=9")]
    DigitOutOfRange(i64),
    #[error("{dim} value {value} exceeds the codec range of +/-{max}")]
    ValueOutOfRange { dim: Dimension, value: i64, max: i64 },
    #[error("zoom must be non-negative, got {0}")]
    NegativeZoom(i64),
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("missing end token")]
    MissingEnd,
    #[error("non-canonical token sequence at position {pos}: {reason}")]
    NonCanonical { pos: usize, reason: &'static str },
    #[error("duplicate dimension marker {0}")]
    DuplicateMarker(Dimension),
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Dimension {
    Pan,
    Tilt,
    Zoom,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Dimension::Pan, Dimension::Tilt, Dimension::Zoom];

    pub fn index(self) -> usize {
        match self {
            Dimension::Pan => 0,
            Dimension::Tilt => 1,
            Dimension::Zoom => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Pan => "pan",
            Dimension::Tilt => "tilt",
            Dimension::Zoom => "zoom",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Integer camera command: pan and tilt in degrees, zoom in zoom units
/// (100 units double the linear magnification).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ActionDelta {
    pub pan: i32,
    pub tilt: i32,
    pub zoom: i32,
}

impl ActionDelta {
    pub const ZERO: ActionDelta = ActionDelta {
        pan: 0,
        tilt: 0,
        zoom: 0,
    };

    pub fn new(pan: i32, tilt: i32, zoom: i32) -> Self {
        Self { pan, tilt, zoom }
    }

    pub fn get(&self, dim: Dimension) -> i32 {
        match dim {
            Dimension::Pan => self.pan,
            Dimension::Tilt => self.tilt,
            Dimension::Zoom => self.zoom,
        }
    }

    pub fn as_array(&self) -> [i32; 3] {
        [self.pan, self.tilt, self.zoom]
    }

    /// Checks the action against a codec with `levels` digit levels.
    pub fn validate(&self, levels: u32) -> Result<(), CodecError> {
        let max = max_value(levels) as i64;
        if self.zoom < 0 {
            return Err(CodecError::NegativeZoom(self.zoom as i64));
        }
        for dim in Dimension::ALL {
            let v = self.get(dim) as i64;
            if v.abs() > max {
                return Err(CodecError::ValueOutOfRange { dim, value: v, max });
            }
        }
        Ok(())
    }
}

/// Largest magnitude representable with `levels` digit levels.
pub fn max_value(levels: u32) -> u32 {
    10u32.pow(levels.min(MAX_LEVELS)) - 1
}

/// Coin coefficients for one decimal digit: `5*fives + 2*twos + ones`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DigitCoeffs {
    pub fives: u32,
    pub twos: u32,
    pub ones: u32,
}

impl DigitCoeffs {
    pub fn value(&self) -> u32 {
        5 * self.fives + 2 * self.twos + self.ones
    }

    /// Number of magnitude tokens this digit costs.
    pub fn count(&self) -> u32 {
        self.fives + self.twos + self.ones
    }

    fn coeff(&self, coin: u32) -> u32 {
        match coin {
            5 => self.fives,
            2 => self.twos,
            _ => self.ones,
        }
    }
}

/// Greedy change-making for a single decimal digit.
pub fn encode_digit(digit: u32) -> Result<DigitCoeffs, CodecError> {
    if digit > 9 {
        return Err(CodecError::DigitOutOfRange(digit as i64));
    }
    let mut rest = digit;
    let mut take = |coin: u32| {
        let n = rest / coin;
        rest -= n * coin;
        n
    };
    Ok(DigitCoeffs {
        fives: take(5),
        twos: take(2),
        ones: take(1),
    })
}

/// Magnitude token values for `x`, highest level first and non-increasing.
pub fn magnitude_values(x: u32, levels: u32) -> Result<Vec<u32>, CodecError> {
    let max = max_value(levels);
    if x > max {
        return Err(CodecError::ValueOutOfRange {
            dim: Dimension::Pan,
            value: x as i64,
            max: max as i64,
        });
    }
    let mut out = Vec::new();
    for level in (0..levels.min(MAX_LEVELS)).rev() {
        let scale = 10u32.pow(level);
        let coeffs = encode_digit((x / scale) % 10)?;
        for coin in BASIS {
            for _ in 0..coeffs.coeff(coin) {
                out.push(coin * scale);
            }
        }
    }
    Ok(out)
}

/// Greedy magnitude-token count of `x` (sum of per-digit coin counts).
pub fn greedy_token_count(x: u32) -> u32 {
    let mut x = x;
    let mut total = 0;
    while x > 0 {
        // digits are always <= 9 here
        total += encode_digit(x % 10).map(|c| c.count()).unwrap_or(0);
        x /= 10;
    }
    total
}

/// Exact minimum magnitude-token count for `x` when every decimal digit is
/// decomposed on its own, computed by dynamic-programming change-making
/// rather than the greedy rule.
pub fn minimal_token_count(x: u32, levels: u32) -> Result<u32, CodecError> {
    let max = max_value(levels);
    if x > max {
        return Err(CodecError::ValueOutOfRange {
            dim: Dimension::Pan,
            value: x as i64,
            max: max as i64,
        });
    }
    // best[v] = fewest coins summing to v, v in 0..=9
    let mut best = [u32::MAX; 10];
    best[0] = 0;
    for v in 1..10usize {
        for coin in BASIS {
            let c = coin as usize;
            if c <= v && best[v - c] != u32::MAX {
                best[v] = best[v].min(best[v - c] + 1);
            }
        }
    }
    let mut x = x;
    let mut total = 0;
    while x > 0 {
        total += best[(x % 10) as usize];
        x /= 10;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sign {
    Pos,
    Neg,
}

/// What a vocabulary entry means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TokenKind {
    Marker(Dimension),
    Sign(Sign),
    Magnitude(u32),
    End,
}

impl TokenKind {
    /// `(kind, value)` columns of the vocabulary table.
    pub fn table_columns(&self) -> (&'static str, String) {
        match self {
            TokenKind::Marker(d) => ("marker", d.name().to_string()),
            TokenKind::Sign(Sign::Pos) => ("sign", "+".to_string()),
            TokenKind::Sign(Sign::Neg) => ("sign", "-".to_string()),
            TokenKind::Magnitude(v) => ("mag", v.to_string()),
            TokenKind::End => ("end", "-".to_string()),
        }
    }

    pub fn from_table_columns(kind: &str, value: &str) -> Result<Self, CodecError> {
        let bad = || CodecError::InvalidVocab(format!("bad kind/value pair `{kind}`/`{value}`"));
        match kind {
            "marker" => match value {
                "pan" => Ok(TokenKind::Marker(Dimension::Pan)),
                "tilt" => Ok(TokenKind::Marker(Dimension::Tilt)),
                "zoom" => Ok(TokenKind::Marker(Dimension::Zoom)),
                _ => Err(bad()),
            },
            "sign" => match value {
                "+" => Ok(TokenKind::Sign(Sign::Pos)),
                "-" => Ok(TokenKind::Sign(Sign::Neg)),
                _ => Err(bad()),
            },
            "mag" => value.parse().map(TokenKind::Magnitude).map_err(|_| bad()),
            "end" => Ok(TokenKind::End),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub id: u32,
    pub symbol: String,
    pub kind: TokenKind,
}

/// The discrete action language: ids, symbols and their meaning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenVocab {
    tokens: Vec<Token>,
    base: u32,
    levels: u32,
    by_symbol: BTreeMap<String, u32>,
    by_kind: BTreeMap<TokenKind, u32>,
}

impl TokenVocab {
    /// Default 15-token layout (for three levels): three markers, two signs,
    /// the magnitudes `{1,2,5} x 10^l` ascending, then the end token.
    pub fn standard(base: u32, levels: u32) -> Result<Self, CodecError> {
        if levels == 0 || levels > MAX_LEVELS {
            return Err(CodecError::InvalidVocab(format!(
                "levels must be in 1..={MAX_LEVELS}, got {levels}"
            )));
        }
        let mut kinds = Vec::new();
        kinds.extend(Dimension::ALL.map(TokenKind::Marker));
        kinds.push(TokenKind::Sign(Sign::Pos));
        kinds.push(TokenKind::Sign(Sign::Neg));
        for level in 0..levels {
            for coin in [1, 2, 5] {
                kinds.push(TokenKind::Magnitude(coin * 10u32.pow(level)));
            }
        }
        kinds.push(TokenKind::End);
        let tokens = kinds
            .into_iter()
            .enumerate()
            .map(|(i, kind)| Token {
                id: base + i as u32,
                symbol: default_symbol(kind),
                kind,
            })
            .collect();
        Self::from_tokens(tokens)
    }

    /// Builds a vocabulary from explicit entries, checking that ids are
    /// contiguous, symbols unique and the magnitude set is exactly
    /// `{5,2,1} x 10^l` for some number of levels.
    pub fn from_tokens(mut tokens: Vec<Token>) -> Result<Self, CodecError> {
        if tokens.is_empty() {
            return Err(CodecError::InvalidVocab("empty vocabulary".into()));
        }
        tokens.sort_by_key(|t| t.id);
        let base = tokens[0].id;
        let mut by_symbol = BTreeMap::new();
        let mut by_kind = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.id != base + i as u32 {
                return Err(CodecError::InvalidVocab(format!(
                    "token ids are not contiguous at id {}",
                    t.id
                )));
            }
            if t.symbol.is_empty() || t.symbol.chars().any(char::is_whitespace) {
                return Err(CodecError::InvalidVocab(format!(
                    "symbol for id {} must be non-empty without whitespace",
                    t.id
                )));
            }
            if by_symbol.insert(t.symbol.clone(), t.id).is_some() {
                return Err(CodecError::InvalidVocab(format!("duplicate symbol {}", t.symbol)));
            }
            if by_kind.insert(t.kind, t.id).is_some() {
                return Err(CodecError::InvalidVocab(format!("duplicate entry for {:?}", t.kind)));
            }
        }
        let required = [
            TokenKind::Marker(Dimension::Pan),
            TokenKind::Marker(Dimension::Tilt),
            TokenKind::Marker(Dimension::Zoom),
            TokenKind::Sign(Sign::Pos),
            TokenKind::Sign(Sign::Neg),
            TokenKind::End,
        ];
        for kind in required {
            if !by_kind.contains_key(&kind) {
                return Err(CodecError::InvalidVocab(format!("missing {kind:?}")));
            }
        }
        let n_mags = tokens
            .iter()
            .filter(|t| matches!(t.kind, TokenKind::Magnitude(_)))
            .count();
        if n_mags == 0 || n_mags % 3 != 0 || n_mags / 3 > MAX_LEVELS as usize {
            return Err(CodecError::InvalidVocab(format!(
                "magnitude tokens must come in groups of three, got {n_mags}"
            )));
        }
        let levels = (n_mags / 3) as u32;
        for level in 0..levels {
            for coin in BASIS {
                let v = coin * 10u32.pow(level);
                if !by_kind.contains_key(&TokenKind::Magnitude(v)) {
                    return Err(CodecError::InvalidVocab(format!("missing magnitude {v}")));
                }
            }
        }
        Ok(Self {
            tokens,
            base,
            levels,
            by_symbol,
            by_kind,
        })
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn base(&self) -> u32 {
        self.base
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn max_value(&self) -> u32 {
        max_value(self.levels)
    }

    pub fn id_of(&self, kind: TokenKind) -> Option<u32> {
        self.by_kind.get(&kind).copied()
    }

    pub fn kind_of(&self, id: u32) -> Option<TokenKind> {
        let idx = id.checked_sub(self.base)? as usize;
        self.tokens.get(idx).map(|t| t.kind)
    }

    pub fn symbol_of(&self, id: u32) -> Option<&str> {
        let idx = id.checked_sub(self.base)? as usize;
        self.tokens.get(idx).map(|t| t.symbol.as_str())
    }

    pub fn id_for_symbol(&self, symbol: &str) -> Option<u32> {
        self.by_symbol.get(symbol).copied()
    }

    fn must_id(&self, kind: TokenKind) -> u32 {
        // from_tokens guarantees markers, signs, end and all magnitudes exist
        self.by_kind[&kind]
    }
}

fn default_symbol(kind: TokenKind) -> String {
    match kind {
        TokenKind::Marker(Dimension::Pan) => "<PAN>".into(),
        TokenKind::Marker(Dimension::Tilt) => "<TILT>".into(),
        TokenKind::Marker(Dimension::Zoom) => "<ZOOM>".into(),
        TokenKind::Sign(Sign::Pos) => "<+>".into(),
        TokenKind::Sign(Sign::Neg) => "<->".into(),
        TokenKind::Magnitude(v) => format!("<{v}>"),
        TokenKind::End => "<END>".into(),
    }
}

/// A sequence of token ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    /// Set when the sequence was produced by [`encode_action`].
    pub canonical: bool,
}

impl TokenSeq {
    pub fn new(ids: Vec<u32>) -> Self {
        Self { ids, canonical: false }
    }

    /// Whitespace-separated symbols, e.g. `<PAN> <+> <20> <TILT> <ZOOM> <END>`.
    pub fn to_symbols(&self, vocab: &TokenVocab) -> Result<String, CodecError> {
        let mut out = String::new();
        for (i, &id) in self.ids.iter().enumerate() {
            let sym = vocab
                .symbol_of(id)
                .ok_or_else(|| CodecError::UnknownToken(id.to_string()))?;
            if i > 0 {
                out.push(' ');
            }
            out.push_str(sym);
        }
        Ok(out)
    }

    pub fn parse_symbols(text: &str, vocab: &TokenVocab) -> Result<Self, CodecError> {
        let ids = text
            .split_whitespace()
            .map(|s| {
                vocab
                    .id_for_symbol(s)
                    .ok_or_else(|| CodecError::UnknownToken(s.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(ids))
    }

    /// Number of magnitude tokens in the sequence.
    pub fn magnitude_count(&self, vocab: &TokenVocab) -> usize {
        self.ids
            .iter()
            .filter(|&&id| matches!(vocab.kind_of(id), Some(TokenKind::Magnitude(_))))
            .count()
    }
}

/// Encodes an action into its canonical token sequence.
pub fn encode_action(action: &ActionDelta, vocab: &TokenVocab) -> Result<TokenSeq, CodecError> {
    action.validate(vocab.levels())?;
    let mut ids = Vec::with_capacity(16);
    for dim in Dimension::ALL {
        ids.push(vocab.must_id(TokenKind::Marker(dim)));
        let v = action.get(dim);
        if v == 0 {
            continue;
        }
        if dim != Dimension::Zoom {
            let sign = if v > 0 { Sign::Pos } else { Sign::Neg };
            ids.push(vocab.must_id(TokenKind::Sign(sign)));
        }
        for mag in magnitude_values(v.unsigned_abs(), vocab.levels())? {
            ids.push(vocab.must_id(TokenKind::Magnitude(mag)));
        }
    }
    ids.push(vocab.must_id(TokenKind::End));
    Ok(TokenSeq { ids, canonical: true })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecodeMode {
    /// Accept exactly the canonical sequences.
    #[default]
    Strict,
    /// Accept any dimension and magnitude order, missing markers and stray
    /// signs; stop at the first end token.
    Lenient,
}

#[derive(Default)]
struct Block {
    sign: Option<(Sign, usize)>,
    mags: Vec<(u32, usize)>,
}

/// Reconstructs an action by summing the signed magnitude tokens of each
/// dimension.
pub fn decode(ids: &[u32], vocab: &TokenVocab, mode: DecodeMode) -> Result<ActionDelta, CodecError> {
    let strict = mode == DecodeMode::Strict;
    let mut blocks: [Option<Block>; 3] = [None, None, None];
    let mut current: Option<Dimension> = None;
    let mut last_marker: Option<Dimension> = None;
    let mut ended = false;

    for (pos, &id) in ids.iter().enumerate() {
        let kind = vocab
            .kind_of(id)
            .ok_or_else(|| CodecError::UnknownToken(id.to_string()))?;
        if ended {
            // strict only: lenient returns at the end token
            return Err(CodecError::NonCanonical {
                pos,
                reason: "tokens after end token",
            });
        }
        match kind {
            TokenKind::Marker(dim) => {
                if blocks[dim.index()].is_some() {
                    return Err(CodecError::DuplicateMarker(dim));
                }
                if strict {
                    let expected = match last_marker {
                        None => Dimension::Pan,
                        Some(Dimension::Pan) => Dimension::Tilt,
                        Some(_) => Dimension::Zoom,
                    };
                    if dim != expected {
                        return Err(CodecError::NonCanonical {
                            pos,
                            reason: "dimension markers out of order",
                        });
                    }
                    if let Some(prev) = current {
                        check_block_closed(blocks[prev.index()].as_ref(), pos)?;
                    }
                }
                blocks[dim.index()] = Some(Block::default());
                current = Some(dim);
                last_marker = Some(dim);
            }
            TokenKind::Sign(sign) => {
                let dim = current.ok_or(CodecError::NonCanonical {
                    pos,
                    reason: "sign before any dimension marker",
                })?;
                let block = blocks[dim.index()].as_mut().expect("open block");
                if dim == Dimension::Zoom {
                    if sign == Sign::Neg {
                        return Err(CodecError::NegativeZoom(0));
                    }
                    if strict {
                        return Err(CodecError::NonCanonical {
                            pos,
                            reason: "zoom carries no sign",
                        });
                    }
                }
                if block.sign.is_some() || (strict && !block.mags.is_empty()) {
                    return Err(CodecError::NonCanonical {
                        pos,
                        reason: "misplaced sign token",
                    });
                }
                block.sign = Some((sign, pos));
            }
            TokenKind::Magnitude(v) => {
                let dim = current.ok_or(CodecError::NonCanonical {
                    pos,
                    reason: "magnitude before any dimension marker",
                })?;
                let block = blocks[dim.index()].as_mut().expect("open block");
                if strict {
                    if dim != Dimension::Zoom && block.sign.is_none() {
                        return Err(CodecError::NonCanonical {
                            pos,
                            reason: "magnitude without sign",
                        });
                    }
                    if let Some(&(prev, _)) = block.mags.last() {
                        if v > prev {
                            return Err(CodecError::NonCanonical {
                                pos,
                                reason: "magnitudes must be non-increasing",
                            });
                        }
                    }
                }
                block.mags.push((v, pos));
            }
            TokenKind::End => {
                if strict {
                    if last_marker != Some(Dimension::Zoom) {
                        return Err(CodecError::NonCanonical {
                            pos,
                            reason: "end token before all dimension markers",
                        });
                    }
                    check_block_closed(blocks[2].as_ref(), pos)?;
                    ended = true;
                } else {
                    return finish(&blocks, vocab, false);
                }
            }
        }
    }
    if !ended {
        return Err(CodecError::MissingEnd);
    }
    finish(&blocks, vocab, strict)
}

fn check_block_closed(block: Option<&Block>, pos: usize) -> Result<(), CodecError> {
    match block {
        Some(b) if b.sign.is_some() && b.mags.is_empty() => Err(CodecError::NonCanonical {
            pos,
            reason: "sign without magnitudes",
        }),
        _ => Ok(()),
    }
}

fn finish(blocks: &[Option<Block>; 3], vocab: &TokenVocab, strict: bool) -> Result<ActionDelta, CodecError> {
    let max = vocab.max_value() as i64;
    let mut out = [0i32; 3];
    for dim in Dimension::ALL {
        let Some(block) = &blocks[dim.index()] else {
            continue;
        };
        let sum: i64 = block.mags.iter().map(|&(v, _)| v as i64).sum();
        if sum > max {
            return Err(CodecError::ValueOutOfRange { dim, value: sum, max });
        }
        if strict && !block.mags.is_empty() {
            let canonical = magnitude_values(sum as u32, vocab.levels())?;
            let got: Vec<u32> = block.mags.iter().map(|&(v, _)| v).collect();
            if canonical != got {
                return Err(CodecError::NonCanonical {
                    pos: block.mags[0].1,
                    reason: "magnitudes are not the minimal per-digit decomposition",
                });
            }
        }
        let signed = match block.sign {
            Some((Sign::Neg, _)) => -sum,
            _ => sum,
        };
        out[dim.index()] = signed as i32;
    }
    Ok(ActionDelta::new(out[0], out[1], out[2]))
}

/// Mean sequence lengths over a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenLengthStats {
    /// Mean number of magnitude tokens per action (all three dimensions).
    pub hierarchical: f64,
    /// Mean length under one-token-per-unit discretization, `|pan| + |tilt| + zoom`.
    pub uniform: f64,
}

pub fn mean_token_length(actions: &[ActionDelta]) -> Result<TokenLengthStats, CodecError> {
    if actions.is_empty() {
        return Err(CodecError::InvalidVocab("empty dataset".into()));
    }
    let (mut h, mut u) = (0u64, 0u64);
    for a in actions {
        for v in a.as_array() {
            let m = v.unsigned_abs();
            h += greedy_token_count(m) as u64;
            u += m as u64;
        }
    }
    let n = actions.len() as f64;
    Ok(TokenLengthStats {
        hierarchical: h as f64 / n,
        uniform: u as f64 / n,
    })
}
