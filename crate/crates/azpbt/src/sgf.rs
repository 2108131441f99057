//! SGF (FF[4]) export of finished games, and a reader for the subset written.

use std::fmt::Write;

use azpbt_core::selfplay::GameRecord;
use azpbt_core::{BoardConfig, Color, GameResult, GameState, Komi, Move, Winner};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SgfError {
    #[error("SGF syntax error at byte {0}")]
    Syntax(usize),
    #[error("variations are not supported")]
    Variation,
    #[error("bad {property} value {value:?}")]
    BadValue { property: String, value: String },
    #[error("missing {0} property")]
    Missing(&'static str),
    #[error("illegal move {index} in game: {reason}")]
    Illegal { index: usize, reason: String },
}

fn points(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as i64)
    } else {
        format!("{v:.1}")
    }
}

fn komi_text(komi: Komi) -> String {
    points(komi.points())
}

pub fn result_text(result: &GameResult) -> String {
    let margin = result.black_score - result.white_score;
    match result.winner {
        Winner::Black => format!("B+{}", points(margin)),
        Winner::White => format!("W+{}", points(-margin)),
        Winner::Draw => "0".to_string(),
    }
}

fn coord(mv: Move, size: usize) -> String {
    match mv {
        Move::Pass => String::new(),
        Move::Place(p) => {
            let p = p as usize;
            let letter = |i: usize| char::from(b'a' + i as u8);
            format!("{}{}", letter(p % size), letter(p / size))
        }
    }
}

/// One game tree. Agents are named in PB/PW.
pub fn game_to_sgf(record: &GameRecord) -> String {
    let size = record.board.board_size;
    let mut out = String::new();
    write!(
        out,
        "(;FF[4]GM[1]SZ[{size}]KM[{}]RU[Tromp-Taylor]PB[agent {}]PW[agent {}]RE[{}]",
        komi_text(record.board.komi),
        record.black_agent,
        record.white_agent,
        result_text(&record.result)
    )
    .unwrap();
    let mut color = Color::Black;
    for &mv in &record.moves {
        let tag = if color == Color::Black { 'B' } else { 'W' };
        write!(out, ";{tag}[{}]", coord(mv, size)).unwrap();
        color = color.opponent();
    }
    out.push_str(")\n");
    out
}

/// A collection of game trees, one per record.
pub fn games_to_sgf(records: &[GameRecord]) -> String {
    records.iter().map(game_to_sgf).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SgfGame {
    pub size: usize,
    pub komi: Komi,
    pub result: Option<String>,
    pub moves: Vec<(Color, Move)>,
}

impl SgfGame {
    /// Replays the moves under this crate's rules with the default move cap.
    pub fn replay(&self) -> Result<GameState, SgfError> {
        let board = BoardConfig::new(self.size, self.komi).map_err(|e| SgfError::BadValue {
            property: "SZ".into(),
            value: e.to_string(),
        })?;
        let mut state = GameState::new(board).map_err(|e| SgfError::Illegal {
            index: 0,
            reason: e.to_string(),
        })?;
        for (index, &(color, mv)) in self.moves.iter().enumerate() {
            if color != state.to_move() {
                return Err(SgfError::Illegal {
                    index,
                    reason: "wrong colour to move".into(),
                });
            }
            state.play_in_place(mv).map_err(|e| SgfError::Illegal {
                index,
                reason: e.to_string(),
            })?;
        }
        Ok(state)
    }
}

type Node = Vec<(String, Vec<String>)>;

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), SgfError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(SgfError::Syntax(self.pos))
        }
    }

    fn value(&mut self) -> Result<String, SgfError> {
        self.expect(b'[')?;
        let mut out = Vec::new();
        loop {
            match self.bytes.get(self.pos) {
                None => return Err(SgfError::Syntax(self.pos)),
                Some(b']') => break,
                Some(b'\\') => {
                    out.push(*self.bytes.get(self.pos + 1).ok_or(SgfError::Syntax(self.pos))?);
                    self.pos += 2;
                }
                Some(&c) => {
                    out.push(c);
                    self.pos += 1;
                }
            }
        }
        self.pos += 1;
        String::from_utf8(out).map_err(|_| SgfError::Syntax(self.pos))
    }

    fn node(&mut self) -> Result<Node, SgfError> {
        self.expect(b';')?;
        let mut props = Vec::new();
        while matches!(self.peek(), Some(c) if c.is_ascii_uppercase()) {
            let start = self.pos;
            while self.bytes.get(self.pos).is_some_and(u8::is_ascii_uppercase) {
                self.pos += 1;
            }
            let ident = String::from_utf8(self.bytes[start..self.pos].to_vec()).unwrap();
            let mut values = vec![self.value()?];
            while self.peek() == Some(b'[') {
                values.push(self.value()?);
            }
            props.push((ident, values));
        }
        Ok(props)
    }

    fn tree(&mut self) -> Result<Vec<Node>, SgfError> {
        self.expect(b'(')?;
        let mut nodes = Vec::new();
        while self.peek() == Some(b';') {
            nodes.push(self.node()?);
        }
        match self.peek() {
            Some(b')') => {
                self.pos += 1;
                Ok(nodes)
            }
            Some(b'(') => Err(SgfError::Variation),
            _ => Err(SgfError::Syntax(self.pos)),
        }
    }
}

fn parse_point(value: &str, size: usize) -> Result<Move, SgfError> {
    let bad = || SgfError::BadValue {
        property: "move".into(),
        value: value.into(),
    };
    let b = value.as_bytes();
    if b.is_empty() || (value == "tt" && size <= 19) {
        return Ok(Move::Pass);
    }
    if b.len() != 2 {
        return Err(bad());
    }
    let col = b[0].checked_sub(b'a').map(usize::from).filter(|&c| c < size).ok_or_else(bad)?;
    let row = b[1].checked_sub(b'a').map(usize::from).filter(|&r| r < size).ok_or_else(bad)?;
    Ok(Move::at(row, col, size))
}

fn convert(nodes: Vec<Node>) -> Result<SgfGame, SgfError> {
    let root = nodes.first().ok_or(SgfError::Missing("root node"))?;
    let get = |name: &str| root.iter().find(|(id, _)| id == name).map(|(_, v)| v[0].clone());
    let size_text = get("SZ").ok_or(SgfError::Missing("SZ"))?;
    let size: usize = size_text.parse().map_err(|_| SgfError::BadValue {
        property: "SZ".into(),
        value: size_text.clone(),
    })?;
    let komi = match get("KM") {
        None => Komi::default(),
        Some(text) => text
            .parse::<f64>()
            .ok()
            .and_then(|v| Komi::from_points(v).ok())
            .ok_or(SgfError::BadValue {
                property: "KM".into(),
                value: text,
            })?,
    };
    let mut moves = Vec::new();
    for node in &nodes {
        for (id, values) in node {
            let color = match id.as_str() {
                "B" => Color::Black,
                "W" => Color::White,
                _ => continue,
            };
            moves.push((color, parse_point(&values[0], size)?));
        }
    }
    Ok(SgfGame {
        size,
        komi,
        result: get("RE"),
        moves,
    })
}

/// Reads a collection of variation-free game trees.
pub fn parse_sgf(text: &str) -> Result<Vec<SgfGame>, SgfError> {
    let mut parser = Parser {
        bytes: text.as_bytes(),
        pos: 0,
    };
    let mut games = Vec::new();
    while parser.peek().is_some() {
        games.push(convert(parser.tree()?)?);
    }
    Ok(games)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinates_are_column_then_row() {
        assert_eq!(coord(Move::at(1, 3, 5), 5), "db");
        assert_eq!(parse_point("db", 5).unwrap(), Move::at(1, 3, 5));
        assert_eq!(parse_point("", 5).unwrap(), Move::Pass);
        assert!(parse_point("fa", 5).is_err());
    }

    #[test]
    fn escaped_values_and_variations() {
        let games = parse_sgf("(;SZ[3]C[a \\] b];B[aa];W[])").unwrap();
        assert_eq!(games[0].moves, vec![(Color::Black, Move::at(0, 0, 3)), (Color::White, Move::Pass)]);
        assert_eq!(parse_sgf("(;SZ[3](;B[aa])(;B[bb]))"), Err(SgfError::Variation));
    }
}
