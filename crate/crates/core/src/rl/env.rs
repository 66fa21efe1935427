//! Small 10x10 grid games with binary feature planes.
//!
//! Motion is visible in a single frame through extra planes (the ball's
//! previous cell, per-direction alien planes), which plays the role of frame
//! stacking for these games.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const GRID: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    MiniBreakout,
    MiniInvaders,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::MiniBreakout => "mini-breakout",
            EnvKind::MiniInvaders => "mini-invaders",
        }
    }

    pub fn state_shape(self) -> [usize; 3] {
        match self {
            EnvKind::MiniBreakout => [Breakout::CHANNELS, GRID, GRID],
            EnvKind::MiniInvaders => [Invaders::CHANNELS, GRID, GRID],
        }
    }

    pub fn n_actions(self) -> usize {
        match self {
            EnvKind::MiniBreakout => 3,
            EnvKind::MiniInvaders => 4,
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mini-breakout" => Ok(EnvKind::MiniBreakout),
            "mini-invaders" => Ok(EnvKind::MiniInvaders),
            other => Err(Error::UnknownEnvironment(other.to_string())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: Tensor,
    pub reward: f64,
    /// The game ended.
    pub terminal: bool,
    /// The episode hit its step limit without the game ending.
    pub truncated: bool,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

#[derive(Debug, Clone)]
enum Game {
    Breakout(Breakout),
    Invaders(Invaders),
}

/// A seeded game instance with an episode step limit.
#[derive(Debug, Clone)]
pub struct Environment {
    kind: EnvKind,
    game: Game,
    rng: ChaCha8Rng,
    max_steps: usize,
    steps: usize,
    finished: bool,
}

/// Which game to play and for how long; enough to build seeded instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub max_episode_steps: usize,
}

impl EnvSpec {
    pub fn new(kind: EnvKind, max_episode_steps: usize) -> Self {
        EnvSpec {
            kind,
            max_episode_steps,
        }
    }

    pub fn make(&self, seed: u64) -> Environment {
        Environment::new(self.kind, seed, self.max_episode_steps)
    }
}

pub fn make_env(name: &str, seed: u64, max_steps: usize) -> Result<Environment> {
    Ok(Environment::new(name.parse()?, seed, max_steps))
}

impl Environment {
    pub fn new(kind: EnvKind, seed: u64, max_steps: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let game = match kind {
            EnvKind::MiniBreakout => Game::Breakout(Breakout::new(&mut rng)),
            EnvKind::MiniInvaders => Game::Invaders(Invaders::new(&mut rng)),
        };
        Environment {
            kind,
            game,
            rng,
            max_steps: max_steps.max(1),
            steps: 0,
            finished: false,
        }
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn state_shape(&self) -> [usize; 3] {
        self.kind.state_shape()
    }

    pub fn n_actions(&self) -> usize {
        self.kind.n_actions()
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    /// Starts a new episode and returns its first state.
    pub fn reset(&mut self) -> Tensor {
        self.game = match self.kind {
            EnvKind::MiniBreakout => Game::Breakout(Breakout::new(&mut self.rng)),
            EnvKind::MiniInvaders => Game::Invaders(Invaders::new(&mut self.rng)),
        };
        self.steps = 0;
        self.finished = false;
        self.observe()
    }

    pub fn observe(&self) -> Tensor {
        let shape = self.state_shape();
        let mut data = vec![0.0; shape.iter().product()];
        match &self.game {
            Game::Breakout(g) => g.render(&mut data),
            Game::Invaders(g) => g.render(&mut data),
        }
        Tensor::new(shape.to_vec(), data).expect("rendered planes match the state shape")
    }

    /// Advances one step. Stepping a finished episode resets it first.
    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if action >= self.n_actions() {
            return Err(Error::InvalidAction {
                action,
                n_actions: self.n_actions(),
            });
        }
        if self.finished {
            self.reset();
        }
        let (reward, terminal) = match &mut self.game {
            Game::Breakout(g) => g.step(action),
            Game::Invaders(g) => g.step(action, &mut self.rng),
        };
        self.steps += 1;
        let truncated = !terminal && self.steps >= self.max_steps;
        self.finished = terminal || truncated;
        Ok(StepOutcome {
            state: self.observe(),
            reward,
            terminal,
            truncated,
        })
    }

    /// Column of the ball and of the paddle, for scripted breakout policies.
    pub fn breakout_positions(&self) -> Option<(usize, usize)> {
        match &self.game {
            Game::Breakout(g) => Some((g.ball_x as usize, g.paddle as usize)),
            Game::Invaders(_) => None,
        }
    }
}

#[inline]
fn plane_index(channel: usize, y: usize, x: usize) -> usize {
    (channel * GRID + y) * GRID + x
}

const LAST: i32 = GRID as i32 - 1;

/// Paddle on the bottom row, a ball bouncing diagonally and three rows of
/// bricks. Actions: 0 stay, 1 left, 2 right. Each brick is worth 1; missing
/// the ball ends the game. Cleared walls are rebuilt.
#[derive(Debug, Clone)]
struct Breakout {
    paddle: i32,
    ball_x: i32,
    ball_y: i32,
    dx: i32,
    dy: i32,
    last_x: i32,
    last_y: i32,
    bricks: [[bool; GRID]; GRID],
}

impl Breakout {
    const CHANNELS: usize = 4;
    const BRICK_ROWS: std::ops::RangeInclusive<usize> = 1..=3;

    fn new(rng: &mut ChaCha8Rng) -> Self {
        let mut bricks = [[false; GRID]; GRID];
        for row in Self::BRICK_ROWS {
            bricks[row] = [true; GRID];
        }
        let ball_x = rng.gen_range(0..GRID as i32);
        let dx = if rng.gen_bool(0.5) { 1 } else { -1 };
        Breakout {
            paddle: GRID as i32 / 2 - 1,
            ball_x,
            ball_y: 4,
            dx,
            dy: 1,
            last_x: ball_x,
            last_y: 4,
            bricks,
        }
    }

    fn step(&mut self, action: usize) -> (f64, bool) {
        match action {
            1 => self.paddle = (self.paddle - 1).max(0),
            2 => self.paddle = (self.paddle + 1).min(LAST),
            _ => {}
        }
        let (old_x, old_y) = (self.ball_x, self.ball_y);
        let mut nx = old_x + self.dx;
        let mut ny = old_y + self.dy;
        let mut reward = 0.0;
        let mut terminal = false;

        if !(0..=LAST).contains(&nx) {
            nx = nx.clamp(0, LAST);
            self.dx = -self.dx;
        }
        if ny < 0 {
            ny = 0;
            self.dy = -self.dy;
        } else if self.bricks[ny as usize][nx as usize] {
            self.bricks[ny as usize][nx as usize] = false;
            reward = 1.0;
            ny = old_y;
            self.dy = -self.dy;
        } else if ny == LAST {
            if self.bricks.iter().all(|row| row.iter().all(|b| !b)) {
                for row in Self::BRICK_ROWS {
                    self.bricks[row] = [true; GRID];
                }
            }
            if old_x == self.paddle {
                self.dy = -self.dy;
                ny = old_y;
            } else if nx == self.paddle {
                self.dx = -self.dx;
                self.dy = -self.dy;
                ny = old_y;
            } else {
                terminal = true;
            }
        }
        self.last_x = old_x;
        self.last_y = old_y;
        self.ball_x = nx;
        self.ball_y = ny;
        (reward, terminal)
    }

    fn render(&self, out: &mut [f64]) {
        out[plane_index(0, GRID - 1, self.paddle as usize)] = 1.0;
        out[plane_index(1, self.ball_y as usize, self.ball_x as usize)] = 1.0;
        out[plane_index(2, self.last_y as usize, self.last_x as usize)] = 1.0;
        for (y, row) in self.bricks.iter().enumerate() {
            for (x, &b) in row.iter().enumerate() {
                if b {
                    out[plane_index(3, y, x)] = 1.0;
                }
            }
        }
    }
}

/// Cannon on the bottom row shooting at a marching block of aliens that
/// shoots back. Actions: 0 stay, 1 left, 2 right, 3 fire. Each alien is worth
/// 1; being hit or reached by an alien ends the game. Cleared waves respawn
/// faster.
#[derive(Debug, Clone)]
struct Invaders {
    cannon: i32,
    aliens: [[bool; GRID]; GRID],
    friendly: [[bool; GRID]; GRID],
    enemy: [[bool; GRID]; GRID],
    alien_dir: i32,
    move_interval: u32,
    move_timer: u32,
    shot_timer: u32,
    enemy_shot_timer: u32,
}

impl Invaders {
    const CHANNELS: usize = 6;
    const SHOT_COOLDOWN: u32 = 5;
    const ENEMY_SHOT_INTERVAL: u32 = 10;
    const BASE_MOVE_INTERVAL: u32 = 12;

    fn new(rng: &mut ChaCha8Rng) -> Self {
        let mut g = Invaders {
            cannon: 5,
            aliens: [[false; GRID]; GRID],
            friendly: [[false; GRID]; GRID],
            enemy: [[false; GRID]; GRID],
            alien_dir: if rng.gen_bool(0.5) { 1 } else { -1 },
            move_interval: Self::BASE_MOVE_INTERVAL,
            move_timer: Self::BASE_MOVE_INTERVAL,
            shot_timer: 0,
            enemy_shot_timer: Self::ENEMY_SHOT_INTERVAL,
        };
        g.spawn_wave();
        g
    }

    fn spawn_wave(&mut self) {
        for row in self.aliens.iter_mut().take(4) {
            for cell in row.iter_mut().take(8).skip(2) {
                *cell = true;
            }
        }
        self.move_timer = self.move_interval;
    }

    fn alien_count(&self) -> u32 {
        self.aliens.iter().flatten().filter(|&&a| a).count() as u32
    }

    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> (f64, bool) {
        let c = self.cannon as usize;
        match action {
            1 => self.cannon = (self.cannon - 1).max(0),
            2 => self.cannon = (self.cannon + 1).min(LAST),
            3 if self.shot_timer == 0 => {
                self.friendly[GRID - 1][c] = true;
                self.shot_timer = Self::SHOT_COOLDOWN;
            }
            _ => {}
        }
        let c = self.cannon as usize;

        // bullets: friendly move up, enemy move down
        self.friendly.rotate_left(1);
        self.friendly[GRID - 1] = [false; GRID];
        self.enemy.rotate_right(1);
        self.enemy[0] = [false; GRID];
        let mut terminal = self.enemy[GRID - 1][c] || self.aliens[GRID - 1][c];

        if self.move_timer == 0 {
            self.move_timer = self.alien_count().min(self.move_interval);
            let at_left = self.aliens.iter().any(|r| r[0]);
            let at_right = self.aliens.iter().any(|r| r[GRID - 1]);
            if (at_left && self.alien_dir < 0) || (at_right && self.alien_dir > 0) {
                self.alien_dir = -self.alien_dir;
                if self.aliens[GRID - 1].iter().any(|&a| a) {
                    terminal = true;
                }
                self.aliens.rotate_right(1);
                self.aliens[0] = [false; GRID];
            } else {
                for row in self.aliens.iter_mut() {
                    if self.alien_dir > 0 {
                        row.rotate_right(1);
                    } else {
                        row.rotate_left(1);
                    }
                }
            }
            if self.aliens[GRID - 1][c] {
                terminal = true;
            }
        }

        if self.enemy_shot_timer == 0 {
            self.enemy_shot_timer = Self::ENEMY_SHOT_INTERVAL;
            let columns: Vec<usize> = (0..GRID).filter(|&x| self.aliens.iter().any(|r| r[x])).collect();
            if !columns.is_empty() {
                // Usually the column closest to the cannon, sometimes any column.
                let x = if rng.gen_bool(0.7) {
                    *columns.iter().min_by_key(|&&x| (x as i32 - self.cannon).abs()).unwrap()
                } else {
                    columns[rng.gen_range(0..columns.len())]
                };
                let y = (0..GRID).rev().find(|&y| self.aliens[y][x]).unwrap();
                self.enemy[y][x] = true;
            }
        }

        let mut reward = 0.0;
        for y in 0..GRID {
            for x in 0..GRID {
                if self.aliens[y][x] && self.friendly[y][x] {
                    self.aliens[y][x] = false;
                    self.friendly[y][x] = false;
                    reward += 1.0;
                }
            }
        }

        self.shot_timer = self.shot_timer.saturating_sub(1);
        self.move_timer = self.move_timer.saturating_sub(1);
        self.enemy_shot_timer = self.enemy_shot_timer.saturating_sub(1);

        if self.alien_count() == 0 {
            self.move_interval = self.move_interval.saturating_sub(1).max(6);
            self.spawn_wave();
        }
        (reward, terminal)
    }

    fn render(&self, out: &mut [f64]) {
        out[plane_index(0, GRID - 1, self.cannon as usize)] = 1.0;
        let dir_plane = if self.alien_dir < 0 { 2 } else { 3 };
        for y in 0..GRID {
            for x in 0..GRID {
                if self.aliens[y][x] {
                    out[plane_index(1, y, x)] = 1.0;
                    out[plane_index(dir_plane, y, x)] = 1.0;
                }
                if self.friendly[y][x] {
                    out[plane_index(4, y, x)] = 1.0;
                }
                if self.enemy[y][x] {
                    out[plane_index(5, y, x)] = 1.0;
                }
            }
        }
    }
}
