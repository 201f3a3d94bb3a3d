//! Embedded 5x7 monochrome font for the 24 plate characters.
//!
//! Every glyph touches all four edges of its cell and has ink in every
//! column, so a glyph's ink bounding box equals its cell and column
//! projection never splits a glyph.

use crate::grammar::{class_of_char, CLASS_CHARS};

pub const GLYPH_W: usize = 5;
pub const GLYPH_H: usize = 7;

type Bitmap = [&'static str; GLYPH_H];

const GLYPHS: [Bitmap; 24] = [
    // 0
    [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."],
    // 1
    ["..#..", ".##..", "#.#..", "..#..", "..#..", "..#..", "#####"],
    // 2
    [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"],
    // 3
    ["####.", "....#", "....#", ".###.", "....#", "....#", "####."],
    // 4
    ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."],
    // 5
    ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."],
    // 6
    [".###.", "#....", "#....", "####.", "#...#", "#...#", ".###."],
    // 7
    ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."],
    // 8
    [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."],
    // 9
    [".###.", "#...#", "#...#", ".####", "....#", "....#", ".###."],
    // A
    ["..#..", ".#.#.", "#...#", "#...#", "#####", "#...#", "#...#"],
    // B
    ["####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."],
    // C
    [".####", "#....", "#....", "#....", "#....", "#....", ".####"],
    // E
    ["#####", "#....", "#....", "####.", "#....", "#....", "#####"],
    // H
    ["#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"],
    // I
    ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "#####"],
    // K
    ["#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"],
    // M
    ["#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"],
    // O
    ["#####", "#...#", "#...#", "#...#", "#...#", "#...#", "#####"],
    // P
    ["####.", "#...#", "#...#", "####.", "#....", "#....", "#...."],
    // T
    ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."],
    // X
    ["#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"],
    // Y
    ["#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."],
    // Z
    ["#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"],
];

/// Ink test for cell (col,row) of the glyph with class id `class`.
#[inline]
pub fn ink(class: usize, col: usize, row: usize) -> bool {
    GLYPHS[class][row].as_bytes()[col] == b'#'
}

pub fn glyph_class(c: char) -> Option<usize> {
    class_of_char(c)
}

/// Glyph bitmap for a character, row-major, `true` for ink.
pub fn bitmap(c: char) -> Option<[[bool; GLYPH_W]; GLYPH_H]> {
    let class = class_of_char(c)?;
    let mut out = [[false; GLYPH_W]; GLYPH_H];
    for (r, row) in out.iter_mut().enumerate() {
        for (col, v) in row.iter_mut().enumerate() {
            *v = ink(class, col, r);
        }
    }
    Some(out)
}

/// Ink coverage of a glyph drawn with nearest-neighbor scaling into a
/// `w`x`h` rectangle, row-major.
pub fn scaled_mask(class: usize, w: usize, h: usize) -> Vec<bool> {
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let row = y * GLYPH_H / h;
        for x in 0..w {
            out.push(ink(class, x * GLYPH_W / w, row));
        }
    }
    out
}

pub fn chars() -> &'static [char; 24] {
    &CLASS_CHARS
}
