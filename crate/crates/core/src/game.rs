//! Miniature Go engine.
//!
//! Positions are immutable: [`GameState::play`] returns a new state. Rules are
//! Tromp-Taylor flavoured: suicide is illegal, positional superko is optional
//! (on by default), and finished games are area scored with every group on
//! the board counted as alive. Games end after two consecutive passes or when
//! the move cap (`2 * size^2` by default) is reached.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

pub const MIN_BOARD_SIZE: usize = 2;
pub const MAX_BOARD_SIZE: usize = 19;

/// Input planes produced by [`GameState::encode_features`].
pub const FEATURE_PLANES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Color {
    Black,
    White,
}

impl Color {
    pub fn opponent(self) -> Color {
        match self {
            Color::Black => Color::White,
            Color::White => Color::Black,
        }
    }
}

/// Komi stored in half points so that it can only ever hold values Go
/// actually uses (integers and halves) and compares exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Komi(i32);

impl Komi {
    pub const fn from_half_points(half_points: i32) -> Komi {
        Komi(half_points)
    }

    pub const fn from_int(points: i32) -> Komi {
        Komi(points * 2)
    }

    /// Fails unless `points` is finite and a multiple of 0.5.
    pub fn from_points(points: f64) -> Result<Komi, GameError> {
        let doubled = points * 2.0;
        if !doubled.is_finite() || doubled.abs() > 1e6 || (doubled as i64) as f64 != doubled {
            return Err(GameError::InvalidKomi);
        }
        Ok(Komi(doubled as i32))
    }

    pub fn half_points(self) -> i32 {
        self.0
    }

    pub fn points(self) -> f64 {
        f64::from(self.0) / 2.0
    }

    /// Draws are only possible with integer komi.
    pub fn is_integer(self) -> bool {
        self.0 % 2 == 0
    }
}

impl fmt::Display for Komi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_integer() {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}", self.points())
        }
    }
}

/// A board point (row-major index) or a pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Move {
    Place(u16),
    Pass,
}

impl Move {
    pub fn at(row: usize, col: usize, board_size: usize) -> Move {
        Move::Place((row * board_size + col) as u16)
    }

    /// Index into a policy vector of length `board_size^2 + 1`; pass is last.
    pub fn policy_index(self, board_size: usize) -> usize {
        match self {
            Move::Place(p) => p as usize,
            Move::Pass => board_size * board_size,
        }
    }

    pub fn from_policy_index(index: usize, board_size: usize) -> Move {
        if index >= board_size * board_size {
            Move::Pass
        } else {
            Move::Place(index as u16)
        }
    }

    pub fn is_pass(self) -> bool {
        matches!(self, Move::Pass)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum IllegalMove {
    #[error("point is occupied")]
    Occupied,
    #[error("move is suicide")]
    Suicide,
    #[error("move repeats an earlier position (superko)")]
    Superko,
    #[error("point is off the board")]
    OutOfBounds,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GameError {
    #[error("board size {0} outside {MIN_BOARD_SIZE}..={MAX_BOARD_SIZE}")]
    InvalidBoardSize(usize),
    #[error("komi must be a finite multiple of 0.5")]
    InvalidKomi,
    #[error("move cap must be positive")]
    InvalidMoveCap,
    #[error("game is over")]
    Terminal,
    #[error("game is not over")]
    NotTerminal,
    #[error("illegal move: {0}")]
    Illegal(#[from] IllegalMove),
    #[error("invalid position: {0}")]
    InvalidPosition(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BoardConfig {
    pub board_size: usize,
    pub komi: Komi,
    pub superko: bool,
    /// Games are scored as-is once this many moves (passes included) are played.
    pub max_moves: usize,
}

impl BoardConfig {
    pub fn new(board_size: usize, komi: Komi) -> Result<BoardConfig, GameError> {
        let config = BoardConfig {
            board_size,
            komi,
            superko: true,
            max_moves: 2 * board_size * board_size,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_superko(mut self, superko: bool) -> BoardConfig {
        self.superko = superko;
        self
    }

    pub fn with_max_moves(mut self, max_moves: usize) -> BoardConfig {
        self.max_moves = max_moves;
        self
    }

    pub fn validate(&self) -> Result<(), GameError> {
        if !(MIN_BOARD_SIZE..=MAX_BOARD_SIZE).contains(&self.board_size) {
            return Err(GameError::InvalidBoardSize(self.board_size));
        }
        if self.max_moves == 0 {
            return Err(GameError::InvalidMoveCap);
        }
        Ok(())
    }

    pub fn points(&self) -> usize {
        self.board_size * self.board_size
    }

    /// Number of entries in a policy vector: every point plus pass.
    pub fn policy_size(&self) -> usize {
        self.points() + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Winner {
    Black,
    White,
    Draw,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GameResult {
    pub black_score: f64,
    /// Includes komi.
    pub white_score: f64,
    pub komi: Komi,
    pub winner: Winner,
}

impl GameResult {
    fn from_area(black_area: usize, white_area: usize, komi: Komi) -> GameResult {
        let black_score = black_area as f64;
        let white_score = white_area as f64 + komi.points();
        let winner = winner_from_margin(2 * black_area as i64 - 2 * white_area as i64 - i64::from(komi.0));
        GameResult {
            black_score,
            white_score,
            komi,
            winner,
        }
    }

    /// Black's area minus White's area, komi excluded.
    pub fn black_area_margin(&self) -> f64 {
        self.black_score - (self.white_score - self.komi.points())
    }

    /// Winner had the game been played with a different komi.
    pub fn winner_at_komi(&self, komi: Komi) -> Winner {
        let black = self.black_score as i64;
        let white = (self.white_score - self.komi.points()) as i64;
        winner_from_margin(2 * black - 2 * white - i64::from(komi.0))
    }

    /// +1 for a win, -1 for a loss and 0 for a draw, seen from `color`.
    pub fn outcome_for(&self, color: Color) -> f32 {
        outcome_value(self.winner, color)
    }
}

pub(crate) fn outcome_value(winner: Winner, color: Color) -> f32 {
    match (winner, color) {
        (Winner::Draw, _) => 0.0,
        (Winner::Black, Color::Black) | (Winner::White, Color::White) => 1.0,
        _ => -1.0,
    }
}

fn winner_from_margin(doubled_margin: i64) -> Winner {
    match doubled_margin {
        m if m > 0 => Winner::Black,
        m if m < 0 => Winner::White,
        _ => Winner::Draw,
    }
}

/// Network input: `board_size x board_size x FEATURE_PLANES`, plane index
/// fastest. Planes are own stones, opponent stones and a constant plane that
/// is 1 when Black is to move.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FeatureTensor {
    pub board_size: usize,
    pub data: Vec<u8>,
}

impl FeatureTensor {
    pub fn planes(&self) -> usize {
        FEATURE_PLANES
    }

    pub fn get(&self, row: usize, col: usize, plane: usize) -> u8 {
        self.data[(row * self.board_size + col) * FEATURE_PLANES + plane]
    }
}

/// Zobrist key for a stone, derived from a splitmix64 mix of the point and
/// color so it needs no table.
fn zobrist(point: usize, color: Color) -> u64 {
    let mut z = (point as u64) << 1 | (color as u64);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z ^= z >> 29;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 32;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy)]
struct Neighbors {
    items: [usize; 4],
    len: usize,
}

impl Neighbors {
    fn of(point: usize, n: usize) -> Neighbors {
        let (row, col) = (point / n, point % n);
        let mut items = [0; 4];
        let mut len = 0;
        if row > 0 {
            items[len] = point - n;
            len += 1;
        }
        if row + 1 < n {
            items[len] = point + n;
            len += 1;
        }
        if col > 0 {
            items[len] = point - 1;
            len += 1;
        }
        if col + 1 < n {
            items[len] = point + 1;
            len += 1;
        }
        Neighbors { items, len }
    }

    fn as_slice(&self) -> &[usize] {
        &self.items[..self.len]
    }
}

struct Placement {
    hash: u64,
    captured: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GameState {
    config: BoardConfig,
    board: Vec<Option<Color>>,
    to_move: Color,
    /// Hash of the initial position followed by one entry per move played.
    history: Vec<u64>,
    consecutive_passes: u8,
    move_count: usize,
}

impl GameState {
    pub fn new(config: BoardConfig) -> Result<GameState, GameError> {
        config.validate()?;
        Ok(GameState {
            config,
            board: vec![None; config.points()],
            to_move: Color::Black,
            history: vec![0],
            consecutive_passes: 0,
            move_count: 0,
        })
    }

    /// Sets up an arbitrary position as if it were the start of a game.
    /// `move_count` moves are treated as already played (for the move cap)
    /// and `consecutive_passes` records whether the last move(s) were passes.
    pub fn from_setup(
        config: BoardConfig,
        board: Vec<Option<Color>>,
        to_move: Color,
        move_count: usize,
        consecutive_passes: u8,
    ) -> Result<GameState, GameError> {
        config.validate()?;
        if board.len() != config.points() {
            return Err(GameError::InvalidPosition("board has wrong number of points"));
        }
        if consecutive_passes > 2 {
            return Err(GameError::InvalidPosition("at most two consecutive passes"));
        }
        let mut state = GameState {
            config,
            board,
            to_move,
            history: Vec::new(),
            consecutive_passes,
            move_count,
        };
        if !state.all_groups_have_liberties() {
            return Err(GameError::InvalidPosition("group without liberties"));
        }
        let hash = state.compute_hash();
        state.history.push(hash);
        Ok(state)
    }

    /// Parses a diagram with one row per line: `X`/`B` black, `O`/`W`
    /// white, `.`/`+` empty. Whitespace between points is ignored.
    pub fn from_diagram(config: BoardConfig, diagram: &str, to_move: Color) -> Result<GameState, GameError> {
        let mut board = Vec::with_capacity(config.points());
        for line in diagram.lines() {
            let row: Vec<Option<Color>> = line
                .chars()
                .filter(|c| !c.is_whitespace())
                .map(|c| match c {
                    'X' | 'B' | 'x' => Ok(Some(Color::Black)),
                    'O' | 'W' | 'o' => Ok(Some(Color::White)),
                    '.' | '+' => Ok(None),
                    _ => Err(GameError::InvalidPosition("unknown diagram character")),
                })
                .collect::<Result<_, _>>()?;
            if row.is_empty() {
                continue;
            }
            if row.len() != config.board_size {
                return Err(GameError::InvalidPosition("diagram row has wrong length"));
            }
            board.extend(row);
        }
        GameState::from_setup(config, board, to_move, 0, 0)
    }

    pub fn config(&self) -> &BoardConfig {
        &self.config
    }

    pub fn board_size(&self) -> usize {
        self.config.board_size
    }

    pub fn to_move(&self) -> Color {
        self.to_move
    }

    pub fn move_count(&self) -> usize {
        self.move_count
    }

    pub fn consecutive_passes(&self) -> u8 {
        self.consecutive_passes
    }

    pub fn stone(&self, point: usize) -> Option<Color> {
        self.board[point]
    }

    pub fn stone_at(&self, row: usize, col: usize) -> Option<Color> {
        self.board[row * self.config.board_size + col]
    }

    pub fn stones(&self) -> &[Option<Color>] {
        &self.board
    }

    pub fn hash(&self) -> u64 {
        *self.history.last().expect("history always holds the initial position")
    }

    pub fn history_hashes(&self) -> &[u64] {
        &self.history
    }

    pub fn is_terminal(&self) -> bool {
        self.consecutive_passes >= 2 || self.move_count >= self.config.max_moves
    }

    /// All legal points (ascending) followed by pass.
    pub fn legal_moves(&self) -> Result<Vec<Move>, GameError> {
        if self.is_terminal() {
            return Err(GameError::Terminal);
        }
        let mut moves = Vec::with_capacity(self.config.points() + 1);
        for point in 0..self.config.points() {
            if self.board[point].is_none() && self.try_place(point).is_ok() {
                moves.push(Move::Place(point as u16));
            }
        }
        moves.push(Move::Pass);
        Ok(moves)
    }

    pub fn is_legal(&self, mv: Move) -> bool {
        self.check(mv).is_ok()
    }

    fn check(&self, mv: Move) -> Result<Option<Placement>, GameError> {
        if self.is_terminal() {
            return Err(GameError::Terminal);
        }
        match mv {
            Move::Pass => Ok(None),
            Move::Place(p) => Ok(Some(self.try_place(p as usize)?)),
        }
    }

    pub fn play(&self, mv: Move) -> Result<GameState, GameError> {
        let mut next = self.clone();
        next.play_in_place(mv)?;
        Ok(next)
    }

    /// In-place variant of [`GameState::play`]; the state is unchanged on error.
    pub fn play_in_place(&mut self, mv: Move) -> Result<(), GameError> {
        let placement = self.check(mv)?;
        match placement {
            None => {
                self.consecutive_passes += 1;
                let hash = self.hash();
                self.history.push(hash);
            }
            Some(placement) => {
                let Move::Place(p) = mv else { unreachable!() };
                self.board[p as usize] = Some(self.to_move);
                for &q in &placement.captured {
                    self.board[q] = None;
                }
                self.consecutive_passes = 0;
                self.history.push(placement.hash);
            }
        }
        self.move_count += 1;
        self.to_move = self.to_move.opponent();
        Ok(())
    }

    fn try_place(&self, point: usize) -> Result<Placement, IllegalMove> {
        let n = self.config.board_size;
        if point >= self.config.points() {
            return Err(IllegalMove::OutOfBounds);
        }
        if self.board[point].is_some() {
            return Err(IllegalMove::Occupied);
        }
        let me = self.to_move;
        let opp = me.opponent();
        let neighbors = Neighbors::of(point, n);

        let mut marks = vec![false; self.config.points()];
        let mut captured = Vec::new();
        let mut group = Vec::new();
        for &q in neighbors.as_slice() {
            if self.board[q] != Some(opp) || marks[q] {
                continue;
            }
            group.clear();
            let liberties = self.flood_group(q, Some(point), &mut marks, &mut group);
            if liberties == 0 {
                captured.extend_from_slice(&group);
            }
        }

        if captured.is_empty() && !neighbors.as_slice().iter().any(|&q| self.board[q].is_none()) {
            // No captures and no empty neighbour: legal only if a friendly
            // neighbouring group keeps another liberty.
            let mut marks = vec![false; self.config.points()];
            let alive = neighbors.as_slice().iter().any(|&q| {
                if self.board[q] != Some(me) || marks[q] {
                    return false;
                }
                group.clear();
                self.flood_group(q, Some(point), &mut marks, &mut group) > 0
            });
            if !alive {
                return Err(IllegalMove::Suicide);
            }
        }

        let mut hash = self.hash() ^ zobrist(point, me);
        for &q in &captured {
            hash ^= zobrist(q, opp);
        }
        if self.config.superko && self.history.contains(&hash) {
            return Err(IllegalMove::Superko);
        }
        Ok(Placement { hash, captured })
    }

    /// Collects the group containing `start` into `group` and returns its
    /// liberty count, treating `filled` (if any) as occupied.
    fn flood_group(&self, start: usize, filled: Option<usize>, marks: &mut [bool], group: &mut Vec<usize>) -> usize {
        let n = self.config.board_size;
        let color = self.board[start];
        let mut liberties: Vec<usize> = Vec::new();
        let mut stack = vec![start];
        marks[start] = true;
        while let Some(p) = stack.pop() {
            group.push(p);
            for &q in Neighbors::of(p, n).as_slice() {
                match self.board[q] {
                    None if Some(q) != filled => {
                        if !liberties.contains(&q) {
                            liberties.push(q);
                        }
                    }
                    c if c == color && !marks[q] => {
                        marks[q] = true;
                        stack.push(q);
                    }
                    _ => {}
                }
            }
        }
        liberties.len()
    }

    /// Liberty count of the group at `point`; `None` for an empty point.
    pub fn liberties(&self, point: usize) -> Option<usize> {
        self.board[point]?;
        let mut marks = vec![false; self.config.points()];
        let mut group = Vec::new();
        Some(self.flood_group(point, None, &mut marks, &mut group))
    }

    pub fn all_groups_have_liberties(&self) -> bool {
        let mut marks = vec![false; self.config.points()];
        let mut group = Vec::new();
        (0..self.config.points()).all(|p| {
            if self.board[p].is_none() || marks[p] {
                return true;
            }
            group.clear();
            self.flood_group(p, None, &mut marks, &mut group) > 0
        })
    }

    fn compute_hash(&self) -> u64 {
        self.board
            .iter()
            .enumerate()
            .filter_map(|(p, c)| c.map(|c| zobrist(p, c)))
            .fold(0, |h, k| h ^ k)
    }

    /// Tromp-Taylor area: stones plus empty regions that reach only that color.
    pub fn area(&self) -> (usize, usize) {
        let n = self.config.board_size;
        let mut black = self.board.iter().filter(|c| **c == Some(Color::Black)).count();
        let mut white = self.board.iter().filter(|c| **c == Some(Color::White)).count();
        let mut seen = vec![false; self.config.points()];
        let mut stack = Vec::new();
        for start in 0..self.config.points() {
            if self.board[start].is_some() || seen[start] {
                continue;
            }
            let (mut size, mut reaches_black, mut reaches_white) = (0, false, false);
            seen[start] = true;
            stack.push(start);
            while let Some(p) = stack.pop() {
                size += 1;
                for &q in Neighbors::of(p, n).as_slice() {
                    match self.board[q] {
                        Some(Color::Black) => reaches_black = true,
                        Some(Color::White) => reaches_white = true,
                        None if !seen[q] => {
                            seen[q] = true;
                            stack.push(q);
                        }
                        None => {}
                    }
                }
            }
            match (reaches_black, reaches_white) {
                (true, false) => black += size,
                (false, true) => white += size,
                _ => {}
            }
        }
        (black, white)
    }

    pub fn score(&self) -> Result<GameResult, GameError> {
        if !self.is_terminal() {
            return Err(GameError::NotTerminal);
        }
        Ok(self.score_now())
    }

    /// Area score of the current position regardless of whether it is over.
    pub fn score_now(&self) -> GameResult {
        let (black, white) = self.area();
        GameResult::from_area(black, white, self.config.komi)
    }

    pub fn encode_features(&self) -> FeatureTensor {
        let black_to_move = u8::from(self.to_move == Color::Black);
        let mut data = Vec::with_capacity(self.config.points() * FEATURE_PLANES);
        for cell in &self.board {
            let own = u8::from(*cell == Some(self.to_move));
            let opp = u8::from(*cell == Some(self.to_move.opponent()));
            data.extend_from_slice(&[own, opp, black_to_move]);
        }
        FeatureTensor {
            board_size: self.config.board_size,
            data,
        }
    }

    /// Plain-text board, rows top to bottom.
    pub fn diagram(&self) -> String {
        let n = self.config.board_size;
        let mut out = String::with_capacity(n * (n + 1));
        for row in 0..n {
            for col in 0..n {
                out.push(match self.stone_at(row, col) {
                    Some(Color::Black) => 'X',
                    Some(Color::White) => 'O',
                    None => '.',
                });
            }
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for GameState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.diagram())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, komi: i32) -> BoardConfig {
        BoardConfig::new(n, Komi::from_int(komi)).unwrap()
    }

    fn place(state: &GameState, row: usize, col: usize) -> GameState {
        state.play(Move::at(row, col, state.board_size())).unwrap()
    }

    #[test]
    fn new_game_nine_by_nine() {
        let state = GameState::new(cfg(9, 7)).unwrap();
        assert_eq!(state.board_size(), 9);
        assert_eq!(state.config().komi.points(), 7.0);
        assert_eq!(state.to_move(), Color::Black);
        assert_eq!(state.consecutive_passes(), 0);
        assert!(state.stones().iter().all(Option::is_none));
    }

    #[test]
    fn rejects_degenerate_board() {
        assert_eq!(BoardConfig::new(1, Komi::from_int(0)), Err(GameError::InvalidBoardSize(1)));
        assert_eq!(BoardConfig::new(20, Komi::from_int(0)), Err(GameError::InvalidBoardSize(20)));
        assert!(BoardConfig::new(3, Komi::from_int(0)).is_ok());
    }

    #[test]
    fn komi_must_be_half_points() {
        assert_eq!(Komi::from_points(7.5).unwrap().half_points(), 15);
        assert_eq!(Komi::from_points(0.3), Err(GameError::InvalidKomi));
        assert_eq!(Komi::from_points(f64::NAN), Err(GameError::InvalidKomi));
        assert!(Komi::from_int(7).is_integer());
        assert!(!Komi::from_points(6.5).unwrap().is_integer());
    }

    #[test]
    fn empty_three_by_three_has_ten_moves() {
        let state = GameState::new(cfg(3, 0)).unwrap();
        let moves = state.legal_moves().unwrap();
        assert_eq!(moves.len(), 10);
        assert_eq!(*moves.last().unwrap(), Move::Pass);
    }

    #[test]
    fn suicide_is_excluded() {
        // White to move; the corner a1 point is surrounded by Black.
        let state = GameState::from_diagram(
            cfg(3, 0),
            ". X .
             X . .
             . . .",
            Color::White,
        )
        .unwrap();
        let corner = Move::at(0, 0, 3);
        assert!(!state.legal_moves().unwrap().contains(&corner));
        assert_eq!(state.play(corner), Err(GameError::Illegal(IllegalMove::Suicide)));
        // Black may fill its own eye.
        let black = GameState::from_diagram(cfg(3, 0), ". X .\nX . .\n. . .", Color::Black).unwrap();
        assert!(black.is_legal(corner));
    }

    #[test]
    fn capture_is_not_suicide() {
        // The corner has no empty neighbour but playing there captures both
        // single white stones.
        let state = GameState::from_diagram(
            cfg(3, 0),
            ". O X
             O X .
             X . .",
            Color::Black,
        )
        .unwrap();
        let after = place(&state, 0, 0);
        assert_eq!(after.stone_at(0, 1), None);
        assert_eq!(after.stone_at(1, 0), None);
        assert_eq!(after.stone_at(0, 0), Some(Color::Black));
        assert_eq!(after.liberties(0), Some(2));
    }

    #[test]
    fn occupied_and_out_of_bounds() {
        let state = place(&GameState::new(cfg(3, 0)).unwrap(), 1, 1);
        assert_eq!(state.play(Move::at(1, 1, 3)), Err(GameError::Illegal(IllegalMove::Occupied)));
        assert_eq!(state.play(Move::Place(9)), Err(GameError::Illegal(IllegalMove::OutOfBounds)));
    }

    #[test]
    fn two_passes_end_the_game() {
        let state = GameState::new(cfg(3, 0)).unwrap();
        let once = state.play(Move::Pass).unwrap();
        assert!(!once.is_terminal());
        let twice = once.play(Move::Pass).unwrap();
        assert!(twice.is_terminal());
        assert_eq!(twice.legal_moves(), Err(GameError::Terminal));
        assert_eq!(twice.play(Move::Pass), Err(GameError::Terminal));
    }

    #[test]
    fn stone_resets_pass_count() {
        let state = GameState::new(cfg(3, 0)).unwrap().play(Move::Pass).unwrap();
        let next = place(&state, 0, 0);
        assert_eq!(next.consecutive_passes(), 0);
        assert_eq!(next.history_hashes().len(), 3);
    }

    #[test]
    fn move_cap_ends_game() {
        let config = cfg(3, 0).with_max_moves(2);
        let state = GameState::new(config).unwrap();
        let state = place(&state, 0, 0);
        assert!(!state.is_terminal());
        let state = place(&state, 2, 2);
        assert!(state.is_terminal());
        assert!(state.score().is_ok());
    }

    #[test]
    fn play_is_pure() {
        let state = GameState::new(cfg(5, 0)).unwrap();
        let copy = state.clone();
        let _ = place(&state, 2, 2);
        assert_eq!(state, copy);
    }

    #[test]
    fn simple_ko_recapture_is_superko() {
        // Classic ko shape: Black captures at (1,2); White may not retake at
        // (1,1) immediately.
        let state = GameState::from_diagram(
            cfg(4, 0),
            ". X O .
             X O . O
             . X O .
             . . . .",
            Color::Black,
        )
        .unwrap();
        let captured = place(&state, 1, 2);
        assert_eq!(captured.stone_at(1, 1), None);
        let retake = Move::at(1, 1, 4);
        assert_eq!(captured.play(retake), Err(GameError::Illegal(IllegalMove::Superko)));
        assert!(!captured.legal_moves().unwrap().contains(&retake));
        // Without superko the recapture is allowed.
        let loose = GameState::from_diagram(
            cfg(4, 0).with_superko(false),
            ". X O .\nX O . O\n. X O .\n. . . .",
            Color::Black,
        )
        .unwrap();
        let loose = place(&loose, 1, 2);
        assert!(loose.is_legal(retake));
    }

    #[test]
    fn empty_board_scores_draw() {
        let state = GameState::new(cfg(3, 0)).unwrap().play(Move::Pass).unwrap().play(Move::Pass).unwrap();
        let result = state.score().unwrap();
        assert_eq!((result.black_score, result.white_score), (0.0, 0.0));
        assert_eq!(result.winner, Winner::Draw);
    }

    #[test]
    fn full_black_board_scores_nine() {
        let board = vec![Some(Color::Black); 8].into_iter().chain([None]).collect();
        let state = GameState::from_setup(cfg(3, 0), board, Color::White, 8, 0).unwrap();
        let state = state.play(Move::Pass).unwrap().play(Move::Pass).unwrap();
        let result = state.score().unwrap();
        assert_eq!((result.black_score, result.white_score), (9.0, 0.0));
        assert_eq!(result.winner, Winner::Black);
    }

    #[test]
    fn score_requires_terminal() {
        let state = GameState::new(cfg(3, 0)).unwrap();
        assert_eq!(state.score(), Err(GameError::NotTerminal));
    }

    #[test]
    fn komi_and_margin() {
        let state = GameState::from_diagram(cfg(3, 7), ". X O\n. X .\n. X O", Color::Black).unwrap();
        let result = state.score_now();
        assert_eq!(result.black_score, 6.0);
        assert_eq!(result.white_score, 9.0);
        assert_eq!(result.black_area_margin(), 4.0);
        assert_eq!(result.winner, Winner::White);
        assert_eq!(result.winner_at_komi(Komi::from_int(4)), Winner::Draw);
        assert_eq!(result.winner_at_komi(Komi::from_int(3)), Winner::Black);
        assert_eq!(result.outcome_for(Color::White), 1.0);
    }

    #[test]
    fn features_of_empty_board() {
        let state = GameState::new(cfg(5, 0)).unwrap();
        let f = state.encode_features();
        assert_eq!(f.data.len(), 5 * 5 * FEATURE_PLANES);
        for r in 0..5 {
            for c in 0..5 {
                assert_eq!((f.get(r, c, 0), f.get(r, c, 1), f.get(r, c, 2)), (0, 0, 1));
            }
        }
    }

    #[test]
    fn color_swap_swaps_stone_planes() {
        let a = GameState::from_diagram(cfg(3, 0), "X . O\n. X .\nO . .", Color::Black).unwrap();
        let b = GameState::from_diagram(cfg(3, 0), "O . X\n. O .\nX . .", Color::Black).unwrap();
        let (fa, fb) = (a.encode_features(), b.encode_features());
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(fa.get(r, c, 0), fb.get(r, c, 1));
                assert_eq!(fa.get(r, c, 1), fb.get(r, c, 0));
                assert_eq!(fa.get(r, c, 2), fb.get(r, c, 2));
            }
        }
    }

    #[test]
    fn setup_rejects_dead_groups() {
        let err = GameState::from_diagram(cfg(3, 0), "X O .\nO . .\n. . .", Color::Black);
        assert_eq!(err, Err(GameError::InvalidPosition("group without liberties")));
    }
}
