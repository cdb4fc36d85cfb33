use crate::toyworld::{ActionString, Direction, Event, Frame, WorldConfig, FLASH_COLOR, PALETTE};

/// Per-channel distance within which a pixel counts as a palette colour.
pub const COLOR_TOLERANCE: f32 = 0.25;

/// Sprite cell and palette index, if exactly one cell of the frame is
/// uniformly painted in a palette colour.
pub fn locate_sprite(frame: &Frame, cfg: &WorldConfig) -> Option<((i32, i32), usize)> {
    let px = cfg.cell_px;
    let mut found = None;
    for cy in 0..cfg.grid_h as usize {
        for cx in 0..cfg.grid_w as usize {
            let color = (0..PALETTE.len()).find(|&c| {
                (cy * px..(cy + 1) * px).all(|row| {
                    (cx * px..(cx + 1) * px).all(|col| {
                        let p = frame.pixel(row, col);
                        p.iter().zip(&PALETTE[c]).all(|(a, b)| (a - b).abs() <= COLOR_TOLERANCE)
                    })
                })
            });
            if let Some(c) = color {
                if found.is_some() {
                    return None;
                }
                found = Some(((cx as i32, cy as i32), c));
            }
        }
    }
    found
}

/// Recover the action that produced `chunk` (four frames) from the frame
/// shown just before it. `None` when a sprite is missing or the motion is
/// not explained by any action of the grammar.
pub fn detect_action(before: &Frame, chunk: &[Frame], cfg: &WorldConfig) -> Option<ActionString> {
    if chunk.len() != 4 {
        return None;
    }
    let (p0, _) = locate_sprite(before, cfg)?;
    let seen: Vec<((i32, i32), usize)> = chunk.iter().map(|f| locate_sprite(f, cfg)).collect::<Option<_>>()?;
    let (p4, _) = seen[3];
    let direction = Direction::from_delta((p4.0 - p0.0, p4.1 - p0.1))?;
    let jump = seen[0].0 == (p4.0, p4.1 - 1);
    let flash = seen[0].1 == FLASH_COLOR;
    let event = match (jump, flash) {
        (false, false) => None,
        (true, false) => Some(Event::Jump),
        (false, true) => Some(Event::Flash),
        (true, true) => return None,
    };
    Some(ActionString::new(direction, event))
}

/// The detected action carries out the request: same direction, and the
/// requested event (if any) happened.
pub fn satisfies(requested: &ActionString, detected: &ActionString) -> bool {
    requested.direction == detected.direction && (requested.event.is_none() || requested.event == detected.event)
}

/// Fraction of frames in which exactly one sprite is found.
pub fn sprite_found_rate(frames: &[Frame], cfg: &WorldConfig) -> f64 {
    if frames.is_empty() {
        return 0.0;
    }
    frames.iter().filter(|f| locate_sprite(f, cfg).is_some()).count() as f64 / frames.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toyworld::{render, simulate_chunk, WorldState};

    #[test]
    fn reads_back_every_observable_action_from_the_middle() {
        let cfg = WorldConfig::default();
        let s = WorldState::new((7, 7), 2, 5, &cfg);
        let before = render(&s, &cfg);
        for a in ActionString::all() {
            let (frames, _) = simulate_chunk(&s, &a, &cfg);
            assert_eq!(detect_action(&before, &frames, &cfg), Some(a), "{a}");
        }
    }

    #[test]
    fn blank_or_doubled_sprites_are_not_found() {
        let cfg = WorldConfig::default();
        let s = WorldState::new((3, 4), 0, 1, &cfg);
        let mut f = render(&s, &cfg);
        assert_eq!(locate_sprite(&f, &cfg), Some(((3, 4), 0)));
        for row in 0..2 {
            for col in 20..22 {
                for (ch, &c) in PALETTE[1].iter().enumerate() {
                    let i = f.index(row, col, ch);
                    f.data[i] = c;
                }
            }
        }
        assert_eq!(locate_sprite(&f, &cfg), None);
        let mut blank = f.clone();
        blank.data.iter_mut().for_each(|x| *x = 0.1);
        assert_eq!(locate_sprite(&blank, &cfg), None);
    }

    #[test]
    fn satisfies_ignores_unrequested_events() {
        let left = ActionString::parse("(left).").unwrap();
        let left_jump = ActionString::parse("(left). jump.").unwrap();
        assert!(satisfies(&left, &left_jump));
        assert!(!satisfies(&left_jump, &left));
        assert!(!satisfies(&left, &ActionString::parse("(right).").unwrap()));
    }
}
