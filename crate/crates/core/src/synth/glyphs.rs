use crate::alphabet::Alphabet;
use crate::error::{Error, Result};

pub const GLYPH_WIDTH: usize = 5;
pub const GLYPH_HEIGHT: usize = 7;

/// Uppercase letters and digits; lowercase symbols share the uppercase cell.
const FONT: &[(char, [&str; GLYPH_HEIGHT])] = &[
    ('0', [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."]),
    ('1', ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."]),
    ('2', [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"]),
    ('3', ["#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."]),
    ('4', ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."]),
    ('5', ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."]),
    ('6', ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."]),
    ('7', ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."]),
    ('8', [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."]),
    ('9', [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."]),
    ('A', [".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"]),
    ('B', ["####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."]),
    ('C', [".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."]),
    ('D', ["###..", "#..#.", "#...#", "#...#", "#...#", "#..#.", "###.."]),
    ('E', ["#####", "#....", "#....", "####.", "#....", "#....", "#####"]),
    ('F', ["#####", "#....", "#....", "####.", "#....", "#....", "#...."]),
    ('G', [".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".####"]),
    ('H', ["#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"]),
    ('I', [".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."]),
    ('J', ["..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."]),
    ('K', ["#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"]),
    ('L', ["#....", "#....", "#....", "#....", "#....", "#....", "#####"]),
    ('M', ["#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"]),
    ('N', ["#...#", "#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#"]),
    ('O', [".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."]),
    ('P', ["####.", "#...#", "#...#", "####.", "#....", "#....", "#...."]),
    ('Q', [".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"]),
    ('R', ["####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"]),
    ('S', [".####", "#....", "#....", ".###.", "....#", "....#", "####."]),
    ('T', ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."]),
    ('U', ["#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."]),
    ('V', ["#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."]),
    ('W', ["#...#", "#...#", "#...#", "#.#.#", "#.#.#", "#.#.#", ".#.#."]),
    ('X', ["#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"]),
    ('Y', ["#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."]),
    ('Z', ["#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"]),
];

/// One 5×7 bitmap per alphabet class (index 0, the blank, has none).
#[derive(Clone, Debug)]
pub struct GlyphAtlas {
    glyphs: Vec<Vec<bool>>,
}

fn lookup(ch: char) -> Option<Vec<bool>> {
    let upper = ch.to_ascii_uppercase();
    FONT.iter()
        .find(|(c, _)| *c == upper)
        .map(|(_, rows)| rows.iter().flat_map(|r| r.bytes().map(|b| b == b'#')).collect())
}

impl GlyphAtlas {
    /// Fails when some symbol has no bitmap.
    pub fn for_alphabet(alphabet: &Alphabet) -> Result<Self> {
        let glyphs = alphabet
            .symbols()
            .chars()
            .map(|ch| lookup(ch).ok_or_else(|| Error::Alphabet(format!("no glyph for symbol {ch:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(GlyphAtlas { glyphs })
    }

    /// Bitmap of class `class` (1-based), row-major `GLYPH_HEIGHT × GLYPH_WIDTH`.
    pub fn glyph(&self, class: u32) -> Result<&[bool]> {
        (class as usize)
            .checked_sub(1)
            .and_then(|i| self.glyphs.get(i))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Alphabet(format!("no glyph for class {class}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_glyph_is_well_formed_and_distinct() {
        let atlas = GlyphAtlas::for_alphabet(&Alphabet::alphanumeric()).unwrap();
        let all: Vec<&[bool]> = (1..=36).map(|c| atlas.glyph(c).unwrap()).collect();
        for (i, g) in all.iter().enumerate() {
            assert_eq!(g.len(), GLYPH_WIDTH * GLYPH_HEIGHT);
            assert!(g.iter().any(|&b| b));
            assert!(all[..i].iter().all(|h| h != g), "glyph {i} duplicates another");
        }
        assert!(atlas.glyph(0).is_err());
        assert!(GlyphAtlas::for_alphabet(&Alphabet::new("a%", false).unwrap()).is_err());
    }
}
