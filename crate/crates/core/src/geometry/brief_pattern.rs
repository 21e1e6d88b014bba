//! Steered-BRIEF sampling pattern: 256 point pairs `[x1, y1, x2, y2]` inside
//! a radius-7 disk. Generated once from seed `0x5eed_b41e_f00d_0001`
//! (splitmix64, Box-Muller, σ = 3 px, rounded) and frozen here so descriptors
//! stay compatible across builds.

pub const PATTERN_RADIUS: i32 = 7;

#[rustfmt::skip]
pub const BRIEF_PATTERN: [[i8; 4]; 256] = [
    [0, -5, 4, 0], [0, 4, -6, 0], [0, 0, -6, 1], [0, -4, -3, 1],
    [4, 3, -3, 4], [3, 5, -3, 1], [5, -2, 2, -2], [0, 1, 5, 4],
    [0, 5, 3, -4], [-3, -2, 4, 2], [-5, 0, 3, -2], [-2, -2, -1, 1],
    [3, 1, -1, 1], [3, 0, 0, 0], [1, -4, 3, -3], [0, 1, 2, -3],
    [1, -1, 2, 3], [0, -4, 1, 2], [0, 2, -3, 4], [-4, 3, -5, -3],
    [0, 1, 0, -2], [-1, 2, -3, 0], [-4, -3, -1, 3], [-4, -5, -1, -2],
    [-4, -5, 0, -1], [-1, -1, 2, 0], [-3, -1, 1, 4], [0, -1, 5, -3],
    [1, 2, 1, 4], [2, 2, -2, 4], [1, 4, 2, 1], [5, 1, 0, 0],
    [2, 1, -3, 3], [-4, 1, 0, 2], [1, -1, 2, 4], [-1, 5, -1, 0],
    [-1, -3, 0, 0], [-3, -3, 0, 1], [0, 3, 0, 1], [-3, 0, 4, -5],
    [1, 2, 4, -2], [0, 0, -3, 4], [0, 2, 3, 0], [2, 4, -1, 3],
    [0, 1, 3, -5], [-3, 3, -3, -1], [0, 2, 3, -3], [2, 2, -1, 1],
    [5, -2, 2, -1], [2, 1, -1, 2], [3, 1, 1, 4], [4, -2, 0, 2],
    [4, -1, -3, 2], [-3, 0, -6, 2], [0, 3, -1, 0], [1, 0, -2, 5],
    [-6, 0, 3, 1], [-1, 3, -1, -1], [1, -5, -1, 2], [3, -2, -4, -2],
    [0, -3, -1, -1], [1, 4, 0, -4], [6, -2, 2, 1], [-2, 1, 0, 4],
    [-2, -5, 0, -1], [-3, 3, -1, 2], [-4, -2, -1, -6], [-1, 2, 3, 1],
    [-4, -4, -2, 0], [5, 0, -4, 1], [2, -3, 0, -2], [1, 0, -3, 1],
    [-4, 3, 3, -4], [0, 0, -1, -1], [1, 6, 5, 0], [1, 3, 1, 0],
    [0, -2, 3, 1], [2, -4, 0, 2], [2, 2, 0, 5], [2, -2, -1, 1],
    [-3, 0, -2, 0], [-1, -1, 5, -3], [-3, -3, -3, 2], [-2, 1, 2, -2],
    [0, 4, -1, 3], [3, -2, 2, 0], [-1, 0, 1, 1], [-2, -2, -1, 2],
    [1, 4, -3, 0], [4, -1, -3, 0], [-1, 0, 0, -1], [0, -3, -1, 0],
    [0, 6, 2, 4], [2, -4, 1, -2], [0, -4, 3, -2], [3, -4, 1, 2],
    [1, 5, 3, -5], [0, 4, 0, -1], [0, 1, 0, 3], [-4, -2, 2, 5],
    [2, 0, -2, -4], [0, 0, 4, 4], [0, 0, 0, 1], [6, -2, -1, -1],
    [-1, -3, 2, 5], [-3, 2, 3, 0], [-1, 0, -2, -2], [3, 0, 2, 1],
    [-3, -2, 4, 1], [4, 0, -2, 4], [-2, -1, 1, 5], [-1, 5, 0, 2],
    [3, 3, -3, 2], [4, 2, -1, 3], [-5, 1, -3, -4], [-1, 6, -4, -3],
    [1, 1, -1, -2], [-3, 0, -1, -5], [-1, 2, -5, 0], [2, 5, -6, -1],
    [-4, 2, 0, 0], [-2, 1, -2, -3], [-2, -1, 5, 0], [2, 0, 2, 1],
    [1, 0, 3, 1], [-4, 4, -1, 0], [1, -3, 4, -2], [0, -6, 4, 0],
    [0, -1, -2, -1], [1, 1, 1, -1], [1, 0, 4, 2], [0, 1, 4, 1],
    [-5, 2, 1, -5], [-3, 1, -2, 1], [-3, 2, 0, 0], [3, -3, 0, -1],
    [-5, 0, 2, -1], [-2, 0, -2, -1], [-2, -2, 1, -4], [5, 1, 2, 0],
    [-3, 1, 4, -3], [3, 4, 1, -3], [3, -5, 3, -2], [0, -2, -4, 2],
    [-2, 1, 2, -4], [4, -2, 1, -2], [3, 0, -4, 0], [-1, 6, 0, 1],
    [2, 4, 3, 0], [2, 2, 1, 1], [0, -2, 2, -1], [1, 0, 4, -4],
    [-4, 0, -1, -1], [0, -2, -2, -2], [4, -3, 0, 1], [-3, -1, -1, -3],
    [4, 1, 2, 3], [0, 4, -1, 4], [1, 5, 5, -1], [2, 1, -1, 1],
    [5, -2, -4, -2], [-3, 2, -1, 1], [0, 0, -2, 3], [4, -1, 0, -1],
    [1, -1, 0, 0], [2, 4, -2, -1], [-2, 0, 0, -1], [-4, -5, 0, 0],
    [-4, 4, -3, 0], [0, 3, 3, 3], [-1, -4, 2, 3], [3, -3, 2, 0],
    [6, 0, 3, -1], [3, 5, 2, 3], [4, -1, 2, 1], [-1, -1, 0, 2],
    [0, -3, 0, 2], [-3, -3, -4, -3], [-2, 3, -1, 1], [2, -4, 1, 1],
    [-6, 3, 1, -3], [-1, -4, -3, -5], [1, 3, 3, 5], [-2, 1, 1, 1],
    [-4, 1, 3, 0], [-1, -3, 2, -5], [4, 3, 4, 1], [0, 1, 3, -2],
    [0, 4, -1, -2], [-5, 1, 4, -1], [3, -2, 0, 2], [1, -3, -2, -2],
    [0, 1, 4, 0], [1, 3, 1, 0], [1, 1, 1, 0], [2, -3, 3, -1],
    [-4, -1, -2, 2], [-5, 3, 5, -1], [-5, 2, 0, -2], [-1, -2, 0, 5],
    [1, 0, 0, -1], [-3, 1, -3, 0], [3, -1, 0, 1], [3, 1, 1, 3],
    [2, -4, -4, 4], [-1, 3, 1, 1], [1, -4, 1, -3], [-2, 1, -2, 2],
    [-3, 5, -1, -2], [-1, 3, 1, 4], [-1, -6, 0, 4], [4, -1, 3, 1],
    [-3, -1, 0, 1], [0, -1, 4, 4], [3, -3, -6, -1], [-2, 0, 1, -2],
    [4, -2, -5, 0], [-2, 4, -1, -2], [2, 0, -2, 0], [-2, 3, 0, -5],
    [3, 4, 0, -3], [-5, 0, -2, 2], [1, -2, -1, -4], [1, 4, -5, 1],
    [4, 2, -2, 5], [2, 3, -1, 1], [-1, 0, 0, 0], [-1, 0, 6, -3],
    [-1, 3, 1, 0], [0, 2, -2, -1], [-4, -3, -3, 2], [2, -1, 1, -6],
    [-2, -5, -3, -3], [-2, -3, 2, 2], [-2, -4, -1, -2], [2, -5, 0, -1],
    [0, -1, 1, -4], [3, 0, -1, 2], [4, 0, 2, 3], [3, 1, 1, -3],
    [1, 2, 2, 4], [0, -1, 4, 2], [2, 4, 1, 4], [1, -2, 1, 2],
    [-3, -4, 1, -2], [0, -2, 0, -5], [3, 0, 2, 5], [1, 4, 0, -4],
    [-1, -3, -3, 5], [1, -1, -3, -4], [0, -6, 5, -3], [3, 0, -6, 0],
    [-1, -2, -1, 4], [2, 2, 0, -2], [1, 1, -2, 5], [-1, -3, 3, -2],
];
