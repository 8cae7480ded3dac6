/// Binary subdivision of `(0, 1)` starting one level below the midpoint:
/// `1/4, 3/4, 1/8, 3/8, 5/8, 7/8, 1/16, …`.
///
/// Each depth level is completed left to right before descending, so every
/// prefix of the sequence is spread as evenly as the level allows.
pub fn subdivision_fraction(step: usize) -> f64 {
    let mut depth = 2u32;
    let mut offset = step as u128;
    loop {
        let level = 1u128 << (depth - 1);
        if offset < level {
            break;
        }
        offset -= level;
        depth += 1;
    }
    (2 * offset + 1) as f64 / (1u128 << depth) as f64
}
