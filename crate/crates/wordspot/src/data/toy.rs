//! Bundled synthetic word-image corpus for desk-scale experiments.
//!
//! Words are rendered from a built-in 5x7 bitmap font and expanded into
//! train/test splits by the augmentation pipeline, so the whole corpus is
//! reproducible from a seed. Good enough to exercise training and
//! retrieval end to end without any external data.

use std::io::Write;
use std::path::{Path, PathBuf};

use super::{denormalize_pixels, AugmentationPlan, AugmentedSet, DataError, GrayImage};

const GLYPH_H: usize = 7;
const GLYPH_W: usize = 5;

#[rustfmt::skip]
fn glyph(c: char) -> Option<[&'static str; GLYPH_H]> {
    Some(match c {
        'a' => [".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"],
        'b' => ["####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."],
        'c' => [".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."],
        'd' => ["####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."],
        'e' => ["#####", "#....", "#....", "####.", "#....", "#....", "#####"],
        'f' => ["#####", "#....", "#....", "####.", "#....", "#....", "#...."],
        'g' => [".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".###."],
        'h' => ["#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"],
        'i' => [".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."],
        'j' => ["..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."],
        'k' => ["#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"],
        'l' => ["#....", "#....", "#....", "#....", "#....", "#....", "#####"],
        'm' => ["#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"],
        'n' => ["#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#", "#...#"],
        'o' => [".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."],
        'p' => ["####.", "#...#", "#...#", "####.", "#....", "#....", "#...."],
        'q' => [".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"],
        'r' => ["####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"],
        's' => [".####", "#....", "#....", ".###.", "....#", "....#", "####."],
        't' => ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."],
        'u' => ["#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."],
        'v' => ["#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."],
        'w' => ["#...#", "#...#", "#...#", "#.#.#", "#.#.#", "##.##", "#...#"],
        'x' => ["#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"],
        'y' => ["#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."],
        'z' => ["#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"],
        '0' => [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."],
        '1' => ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."],
        '2' => [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"],
        '3' => [".###.", "#...#", "....#", "..##.", "....#", "#...#", ".###."],
        '4' => ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."],
        '5' => ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."],
        '6' => [".###.", "#....", "#....", "####.", "#...#", "#...#", ".###."],
        '7' => ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."],
        '8' => [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."],
        '9' => [".###.", "#...#", "#...#", ".####", "....#", "....#", ".###."],
        _ => return None,
    })
}

/// Render a word with the bitmap font: ink 0, paper 255, `scale` pixels
/// per font pixel, one font column of spacing between glyphs. Characters
/// without a glyph are skipped.
pub fn render_word(word: &str, scale: usize, margin: usize) -> GrayImage {
    assert!(scale > 0);
    let glyphs: Vec<[&'static str; GLYPH_H]> = word.chars().filter_map(glyph).collect();
    assert!(!glyphs.is_empty(), "word {word:?} has no renderable glyphs");
    let n = glyphs.len();
    let height = GLYPH_H * scale + 2 * margin;
    let width = (n * GLYPH_W + (n - 1)) * scale + 2 * margin;
    let mut img = GrayImage::filled(height, width, 255);
    for (gi, rows) in glyphs.iter().enumerate() {
        let x_base = margin + gi * (GLYPH_W + 1) * scale;
        for (ry, row) in rows.iter().enumerate() {
            for (rx, cell) in row.bytes().enumerate() {
                if cell != b'#' {
                    continue;
                }
                for dy in 0..scale {
                    let y = margin + ry * scale + dy;
                    for dx in 0..scale {
                        let x = x_base + rx * scale + dx;
                        img.pixels_mut()[y * width + x] = 0;
                    }
                }
            }
        }
    }
    img
}

/// Word list for the default toy corpus: 24 distinct classes.
pub const DEFAULT_WORDS: [&str; 24] = [
    "the", "quick", "brown", "fox", "jumps", "over", "lazy", "dog", "word", "spot", "zero",
    "seven", "alpha", "bravo", "delta", "echo", "hotel", "india", "kilo", "lima", "mike", "oscar",
    "papa", "tango",
];

#[derive(Clone, Debug)]
pub struct ToyCorpusSpec {
    pub words: Vec<String>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
    pub scale: usize,
    pub margin: usize,
}

impl Default for ToyCorpusSpec {
    fn default() -> Self {
        ToyCorpusSpec {
            words: DEFAULT_WORDS.iter().map(|w| w.to_string()).collect(),
            train_per_class: 30,
            test_per_class: 8,
            seed: 0x70f,
            scale: 2,
            margin: 3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ToyCorpus {
    pub root: PathBuf,
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
}

/// Materialize the corpus under `dir`: rendered + augmented PNGs and two
/// manifests. Fully determined by the spec.
pub fn generate(spec: &ToyCorpusSpec, dir: impl AsRef<Path>) -> Result<ToyCorpus, DataError> {
    let dir = dir.as_ref();
    let image_dir = dir.join("images");
    std::fs::create_dir_all(&image_dir)?;

    let sources: Vec<(String, GrayImage)> = spec
        .words
        .iter()
        .map(|w| (w.clone(), render_word(w, spec.scale, spec.margin)))
        .collect();

    let write_split = |name: &str, per_class: usize, seed: u64| -> Result<PathBuf, DataError> {
        let plan = AugmentationPlan {
            target_total: spec.words.len() * per_class,
            seed,
            ..AugmentationPlan::default()
        };
        let set = AugmentedSet::new(sources.clone(), plan)?;
        let manifest_path = dir.join(format!("{name}.tsv"));
        let mut manifest = std::io::BufWriter::new(std::fs::File::create(&manifest_path)?);
        for (i, (img, label)) in set.iter().enumerate() {
            let file = format!("images/{name}_{i:05}.png");
            denormalize_pixels(&img).save_png(dir.join(&file))?;
            // spread samples over synthetic pages
            let page = format!("page{:02}", i % 20 + 1);
            writeln!(manifest, "{name}-{i:05}\t{file}\t{label}\t{page}")?;
        }
        manifest.flush()?;
        Ok(manifest_path)
    };

    let train_manifest = write_split("train", spec.train_per_class, spec.seed)?;
    let test_manifest = write_split("test", spec.test_per_class, spec.seed.wrapping_add(1))?;
    Ok(ToyCorpus {
        root: dir.to_path_buf(),
        train_manifest,
        test_manifest,
    })
}
