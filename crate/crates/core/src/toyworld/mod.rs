//! Deterministic sprite world that produces video frames together with the
//! per-chunk action text that explains them.
//!
//! A single sprite lives on a 16×16 cell grid rendered at 2 px per cell.
//! Every chunk of four frames is driven by one [`ActionString`]: the action
//! is applied on the chunk's first frame and the remaining three frames are
//! no-op steps. `jump` lifts the sprite one cell for two frames, `flash`
//! paints it white for two frames.

mod action;
mod episode;
mod image;

pub use action::{ActionString, Direction, Event};
pub use episode::{dataset_episode_seed, gen_dataset, gen_episode, gen_episode_with, list_episode_dirs, Episode, Policy};
pub use image::{decode_png, encode_png, write_png};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frames per chunk after the first frame.
pub const FRAMES_PER_CHUNK: usize = 4;

/// Frame rate of rendered video.
pub const FPS: f64 = 16.0;

/// Sprite palette (RGB, unit interval). Index 4 is the flash colour.
pub const PALETTE: [[f32; 3]; 5] = [
    [0.95, 0.20, 0.20],
    [0.20, 0.95, 0.20],
    [0.25, 0.35, 1.00],
    [0.95, 0.90, 0.20],
    [1.00, 1.00, 1.00],
];

pub const FLASH_COLOR: usize = 4;

pub const COLOR_NAMES: [&str; 4] = ["red", "green", "blue", "yellow"];

/// Grid geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub grid_w: i32,
    pub grid_h: i32,
    pub cell_px: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            grid_w: 16,
            grid_h: 16,
            cell_px: 2,
        }
    }
}

impl WorldConfig {
    pub fn frame_width(&self) -> usize {
        self.grid_w as usize * self.cell_px
    }

    pub fn frame_height(&self) -> usize {
        self.grid_h as usize * self.cell_px
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WorldState {
    pub sprite_pos: (i32, i32),
    pub sprite_vel: (i32, i32),
    pub grid_size: (i32, i32),
    pub sprite_color: u8,
    pub background_seed: u64,
    /// Frames of jump offset remaining.
    pub jump_timer: u8,
    /// Frames of flash colour remaining.
    pub flash_timer: u8,
}

impl WorldState {
    pub fn new(pos: (i32, i32), color: u8, background_seed: u64, config: &WorldConfig) -> Self {
        WorldState {
            sprite_pos: pos,
            sprite_vel: (0, 0),
            grid_size: (config.grid_w, config.grid_h),
            sprite_color: color,
            background_seed,
            jump_timer: 0,
            flash_timer: 0,
        }
    }

    pub fn is_valid(&self) -> bool {
        let (x, y) = self.sprite_pos;
        let (w, h) = self.grid_size;
        (0..w).contains(&x)
            && (0..h).contains(&y)
            && self.sprite_vel.0.abs() <= 1
            && self.sprite_vel.1.abs() <= 1
            && (self.sprite_color as usize) < COLOR_NAMES.len()
    }

    /// Cell where the sprite is drawn, including the jump offset.
    pub fn visual_pos(&self) -> (i32, i32) {
        let (x, y) = self.sprite_pos;
        if self.jump_timer > 0 {
            (x, (y - 1).max(0))
        } else {
            (x, y)
        }
    }

    /// Palette index actually drawn this frame.
    pub fn visual_color(&self) -> usize {
        if self.flash_timer > 0 {
            FLASH_COLOR
        } else {
            self.sprite_color as usize
        }
    }
}

/// One rendered RGB frame, `height × width × 3`, C-order, unit-interval values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Frame {
    pub fn zeros(height: usize, width: usize) -> Self {
        Frame {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * 3 + ch
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = self.index(row, col, 0);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// 8-bit RGB bytes, clamped.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Frame> {
        if bytes.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "expected {} RGB bytes for {height}x{width}, got {}",
                height * width * 3,
                bytes.len()
            )));
        }
        Ok(Frame {
            height,
            width,
            data: bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        })
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit(h: u64) -> f32 {
    (h >> 40) as f32 / (1u64 << 24) as f32
}

/// Background colour of a pixel: a dark per-seed tint plus low-amplitude
/// hashed noise. Every channel stays within `[0.05, 0.24]`.
pub fn background_pixel(seed: u64, row: usize, col: usize, ch: usize) -> f32 {
    let tint = 0.05 + 0.15 * unit(splitmix64(seed ^ (0xA5A5 + ch as u64)));
    let h = splitmix64(seed.wrapping_mul(0x1000_0001) ^ ((row as u64) << 32 | (col as u64) << 8 | ch as u64));
    (tint + 0.04 * (unit(h) - 0.5)).clamp(0.05, 0.24)
}

/// Draw a state as an RGB frame.
pub fn render(state: &WorldState, config: &WorldConfig) -> Frame {
    let (h, w) = (config.frame_height(), config.frame_width());
    let mut frame = Frame::zeros(h, w);
    for row in 0..h {
        for col in 0..w {
            for ch in 0..3 {
                let i = frame.index(row, col, ch);
                frame.data[i] = background_pixel(state.background_seed, row, col, ch);
            }
        }
    }
    let (sx, sy) = state.visual_pos();
    let color = PALETTE[state.visual_color()];
    let px = config.cell_px;
    for row in sy as usize * px..(sy as usize + 1) * px {
        for col in sx as usize * px..(sx as usize + 1) * px {
            for (ch, &c) in color.iter().enumerate() {
                let i = frame.index(row, col, ch);
                frame.data[i] = c;
            }
        }
    }
    frame
}

/// Advance the world by one frame under `action`.
///
/// Timers count down first, then the action sets the velocity to its
/// direction delta, moves the sprite with clamping at the grid edges and
/// arms the jump/flash timers for two frames.
pub fn simulate_step(state: &WorldState, action: &ActionString) -> WorldState {
    let mut next = *state;
    next.jump_timer = next.jump_timer.saturating_sub(1);
    next.flash_timer = next.flash_timer.saturating_sub(1);
    next.sprite_vel = action.direction.delta();
    let (w, h) = next.grid_size;
    next.sprite_pos = (
        (state.sprite_pos.0 + next.sprite_vel.0).clamp(0, w - 1),
        (state.sprite_pos.1 + next.sprite_vel.1).clamp(0, h - 1),
    );
    match action.event {
        Some(Event::Jump) => next.jump_timer = 2,
        Some(Event::Flash) => next.flash_timer = 2,
        None => {}
    }
    next
}

/// Whether `action` leaves a visible trace from `state`: the move is not
/// blocked by an edge and a jump has room to lift the sprite.
pub fn is_observable(state: &WorldState, action: &ActionString) -> bool {
    let (dx, dy) = action.direction.delta();
    let (x, y) = (state.sprite_pos.0 + dx, state.sprite_pos.1 + dy);
    let (w, h) = state.grid_size;
    let inside = (0..w).contains(&x) && (0..h).contains(&y);
    inside && (action.event != Some(Event::Jump) || y >= 1)
}

/// Parse-then-step convenience for textual actions.
pub fn simulate_step_str(state: &WorldState, action: &str) -> Result<WorldState> {
    Ok(simulate_step(state, &ActionString::parse(action)?))
}

/// Apply one chunk action: the action on the first frame, no-ops after.
/// Returns the four rendered frames and the final state.
pub fn simulate_chunk(state: &WorldState, action: &ActionString, config: &WorldConfig) -> (Vec<Frame>, WorldState) {
    let mut s = simulate_step(state, action);
    let mut frames = vec![render(&s, config)];
    for _ in 1..FRAMES_PER_CHUNK {
        s = simulate_step(&s, &ActionString::NOOP);
        frames.push(render(&s, config));
    }
    (frames, s)
}

/// Start time of latent chunk `i` (1-based; 0 is the lone first frame).
pub fn chunk_timestamp(i: usize) -> f64 {
    if i == 0 {
        0.0
    } else {
        (1 + FRAMES_PER_CHUNK * (i - 1)) as f64 / FPS
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state_at(x: i32, y: i32) -> WorldState {
        WorldState::new((x, y), 0, 11, &WorldConfig::default())
    }

    #[test]
    fn move_and_clamp() {
        let s = simulate_step_str(&state_at(3, 3), "(right).").unwrap();
        assert_eq!(s.sprite_pos, (4, 3));
        let s = simulate_step_str(&state_at(0, 3), "(left).").unwrap();
        assert_eq!(s.sprite_pos, (0, 3));
        assert!(simulate_step_str(&state_at(3, 3), "(sideways).").is_err());
    }

    #[test]
    fn jump_returns_after_two_frames() {
        let noop = ActionString::NOOP;
        let mut s = simulate_step_str(&state_at(3, 3), "(). jump.").unwrap();
        let mut visual = vec![s.visual_pos()];
        for _ in 0..3 {
            s = simulate_step(&s, &noop);
            visual.push(s.visual_pos());
        }
        assert_eq!(visual, vec![(3, 2), (3, 2), (3, 3), (3, 3)]);
        assert_eq!(s.sprite_pos, (3, 3));
    }

    #[test]
    fn observability_at_edges() {
        let right = ActionString::parse("(right).").unwrap();
        let jump = ActionString::parse("(up). jump.").unwrap();
        assert!(is_observable(&state_at(3, 3), &right));
        assert!(!is_observable(&state_at(15, 3), &right));
        assert!(!is_observable(&state_at(3, 1), &jump));
        assert!(is_observable(&state_at(3, 2), &jump));
    }

    #[test]
    fn render_is_deterministic_and_local() {
        let cfg = WorldConfig::default();
        let a = render(&state_at(5, 6), &cfg);
        assert_eq!(a, render(&state_at(5, 6), &cfg));

        let b = render(&state_at(9, 2), &cfg);
        let mut differing = Vec::new();
        for row in 0..32 {
            for col in 0..32 {
                if a.pixel(row, col) != b.pixel(row, col) {
                    differing.push((col / 2, row / 2));
                }
            }
        }
        differing.sort();
        differing.dedup();
        assert_eq!(differing, vec![(5, 6), (9, 2)]);
    }

    #[test]
    fn sprite_at_origin_is_top_left() {
        let f = render(&state_at(0, 0), &WorldConfig::default());
        for row in 0..2 {
            for col in 0..2 {
                assert_eq!(f.pixel(row, col), PALETTE[0]);
            }
        }
        assert_ne!(f.pixel(2, 2), PALETTE[0]);
    }

    #[test]
    fn background_stays_in_band() {
        for seed in 0..20u64 {
            for row in 0..32 {
                for ch in 0..3 {
                    let v = background_pixel(seed, row, row ^ 7, ch);
                    assert!((0.05..=0.24).contains(&v));
                }
            }
        }
    }

    #[test]
    fn timestamps() {
        assert_eq!(chunk_timestamp(0), 0.0);
        assert_eq!(chunk_timestamp(1), 1.0 / 16.0);
        assert_eq!(chunk_timestamp(4), 13.0 / 16.0);
    }
}
