//! Deterministic synthetic corpus: a procedural cursive glyph atlas,
//! right-to-left word and line rendering, augmentation, a duplicate-free
//! sentence generator and the curriculum schedule.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{binarize, dilate, hconcat_rtl, rotate, salt_pepper, GrayImage};
use crate::metrics::Transcript;
use crate::nn::stage_max_words;

/// Symbols used as labels, in index order.
pub const SYMBOLS: [char; 28] = [
    'ا', 'ب', 'ت', 'ث', 'ج', 'ح', 'خ', 'د', 'ذ', 'ر', 'ز', 'س', 'ش', 'ص', 'ض', 'ط', 'ظ', 'ع', 'غ', 'ف',
    'ق', 'ك', 'ل', 'م', 'ن', 'ه', 'و', 'ي',
];

pub const GLYPH_HEIGHT: usize = 32;
pub const MIN_GLYPH_WIDTH: usize = 12;
pub const MAX_GLYPH_WIDTH: usize = 20;
/// Lower row of the two-pixel connector stroke.
pub const BASELINE: usize = 22;
/// Horizontal overlap between neighbouring glyphs inside a word.
pub const JOIN_OVERLAP: usize = 2;
pub const MIN_WORD_LEN: usize = 7;
pub const MAX_WORD_LEN: usize = 10;
/// Minimum pairwise Hamming distance, as a fraction of the padded glyph area.
pub const SEPARABILITY: f64 = 0.10;
const GLYPH_ATTEMPTS: usize = 64;

/// Procedurally drawn glyphs, one per symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphAtlas {
    seed: u64,
    glyphs: Vec<GrayImage>,
}

struct Canvas {
    w: usize,
    px: Vec<bool>,
}

impl Canvas {
    fn new(w: usize) -> Self {
        Self {
            w,
            px: vec![false; w * GLYPH_HEIGHT],
        }
    }

    /// 2x2 pen.
    fn stamp(&mut self, x: f64, y: f64) {
        let (x0, y0) = (x.round() as isize, y.round() as isize);
        for dy in 0..2 {
            for dx in 0..2 {
                let (xx, yy) = (x0 + dx, y0 + dy);
                if xx >= 0 && yy >= 0 && (xx as usize) < self.w && (yy as usize) < GLYPH_HEIGHT {
                    self.px[yy as usize * self.w + xx as usize] = true;
                }
            }
        }
    }

    fn line(&mut self, (x0, y0): (f64, f64), (x1, y1): (f64, f64)) {
        let steps = ((x1 - x0).abs().max((y1 - y0).abs()) * 2.0).ceil().max(1.0) as usize;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            self.stamp(x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        }
    }

    fn arc(&mut self, (cx, cy): (f64, f64), (rx, ry): (f64, f64), start: f64, sweep: f64) {
        let steps = ((rx.max(ry) * sweep.abs()) * 2.0).ceil().max(2.0) as usize;
        for i in 0..=steps {
            let a = start + sweep * i as f64 / steps as f64;
            self.stamp(cx + rx * a.cos(), cy - ry * a.sin());
        }
    }

    fn into_image(self) -> GrayImage {
        let w = self.w;
        GrayImage::from_fn(w, GLYPH_HEIGHT, |x, y| if self.px[y * w + x] { 1.0 } else { 0.0 })
    }
}

fn draw_glyph(rng: &mut ChaCha8Rng) -> GrayImage {
    let w = rng.gen_range(MIN_GLYPH_WIDTH..=MAX_GLYPH_WIDTH);
    let wf = w as f64;
    let base = (BASELINE - 1) as f64;
    let mut c = Canvas::new(w);
    c.line((0.0, base), (wf - 2.0, base));
    let mut parts = [0usize, 1, 2, 3, 4];
    parts.shuffle(rng);
    let count = rng.gen_range(1..=3);
    for &part in &parts[..count] {
        match part {
            0 => {
                // stem
                let x = rng.gen_range(2.0..wf - 3.0);
                let top = rng.gen_range(3.0..11.0);
                let slant = rng.gen_range(-2.0..2.0);
                c.line((x, base), (x + slant, top));
            }
            1 => {
                // bowl above the baseline
                let cx = rng.gen_range(wf * 0.3..wf * 0.7);
                let rx = rng.gen_range(3.0..(wf / 2.0 - 1.0).max(3.5));
                let ry = rng.gen_range(3.0..6.5);
                let start = rng.gen_range(0.0..2.0 * PI);
                let sweep = rng.gen_range(PI..2.0 * PI);
                c.arc((cx, base - ry), (rx, ry), start, sweep);
            }
            2 => {
                // descender loop
                let cx = rng.gen_range(wf * 0.3..wf * 0.7);
                let rx = rng.gen_range(2.5..5.5);
                let ry = rng.gen_range(2.0..4.0);
                c.arc((cx, base + ry), (rx, ry), PI, PI * rng.gen_range(0.8..1.2));
            }
            3 => {
                // diagonal hook
                let x1 = rng.gen_range(1.0..wf - 2.0);
                let x2 = rng.gen_range(1.0..wf - 2.0);
                let y2 = rng.gen_range(7.0..15.0);
                c.line((x1, base), (x2, y2));
            }
            _ => {
                // flat cap stroke
                let y = rng.gen_range(9.0..16.0);
                let x1 = rng.gen_range(1.0..wf / 2.0);
                let x2 = rng.gen_range(wf / 2.0..wf - 2.0);
                c.line((x1, y), (x2, y));
                c.line((x2, y), (x2, base));
            }
        }
    }
    if rng.gen_bool(0.5) {
        let n = rng.gen_range(1..=3);
        let above = rng.gen_bool(0.5);
        let y = if above {
            rng.gen_range(2.0..8.0)
        } else {
            rng.gen_range(26.0..29.0)
        };
        let x0 = (wf - 4.0 * n as f64) / 2.0 + 1.0;
        for i in 0..n {
            c.stamp(x0 + 4.0 * i as f64, y);
        }
    }
    c.into_image()
}

/// Pixel disagreements with both glyphs left-aligned on a
/// `GLYPH_HEIGHT x MAX_GLYPH_WIDTH` canvas.
pub fn glyph_distance(a: &GrayImage, b: &GrayImage) -> usize {
    let ink = |g: &GrayImage, x: usize, y: usize| x < g.width() && g.get(x, y) >= 0.5;
    let mut d = 0;
    for y in 0..GLYPH_HEIGHT {
        for x in 0..MAX_GLYPH_WIDTH {
            if ink(a, x, y) != ink(b, x, y) {
                d += 1;
            }
        }
    }
    d
}

pub fn min_glyph_distance() -> usize {
    (SEPARABILITY * (GLYPH_HEIGHT * MAX_GLYPH_WIDTH) as f64).ceil() as usize
}

impl GlyphAtlas {
    /// Draws `alphabet_size` glyphs from `seed`, redrawing any glyph that is
    /// too close to an earlier one.
    pub fn build(seed: u64, alphabet_size: usize) -> Result<Self> {
        if !(2..=SYMBOLS.len()).contains(&alphabet_size) {
            return Err(Error::InvalidArgument(format!(
                "alphabet size must be in 2..={}, got {alphabet_size}",
                SYMBOLS.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let need = min_glyph_distance();
        let mut glyphs: Vec<GrayImage> = Vec::with_capacity(alphabet_size);
        while glyphs.len() < alphabet_size {
            let mut accepted = None;
            for _ in 0..GLYPH_ATTEMPTS {
                let g = draw_glyph(&mut rng);
                if glyphs.iter().all(|o| glyph_distance(o, &g) >= need) {
                    accepted = Some(g);
                    break;
                }
            }
            match accepted {
                Some(g) => glyphs.push(g),
                None => {
                    return Err(Error::AtlasNotSeparable {
                        attempts: GLYPH_ATTEMPTS,
                    })
                }
            }
        }
        Ok(Self { seed, glyphs })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn alphabet_size(&self) -> usize {
        self.glyphs.len()
    }

    pub fn glyph(&self, label: usize) -> Option<&GrayImage> {
        self.glyphs.get(label)
    }

    pub fn symbol(&self, label: usize) -> Option<char> {
        (label < self.glyphs.len()).then(|| SYMBOLS[label])
    }

    /// Network classes: every symbol, the word separator, then blank.
    pub fn classes(&self) -> usize {
        self.alphabet_size() + 2
    }

    pub fn space_class(&self) -> usize {
        self.alphabet_size()
    }

    pub fn blank_class(&self) -> usize {
        self.alphabet_size() + 1
    }

    /// Class sequence of a transcript (spaces map to the separator class).
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|ch| {
                if ch == ' ' {
                    return Ok(self.space_class());
                }
                SYMBOLS[..self.alphabet_size()]
                    .iter()
                    .position(|&s| s == ch)
                    .ok_or_else(|| Error::Data(format!("symbol {ch:?} not in the alphabet")))
            })
            .collect()
    }

    /// Text of a class sequence; blanks are skipped, unknown classes dropped.
    pub fn decode(&self, classes: &[usize]) -> String {
        let raw: String = classes
            .iter()
            .filter_map(|&c| {
                if c == self.space_class() {
                    Some(' ')
                } else {
                    self.symbol(c)
                }
            })
            .collect();
        raw.split(' ').filter(|w| !w.is_empty()).collect::<Vec<_>>().join(" ")
    }

    pub fn word_text(&self, labels: &[usize]) -> Result<String> {
        labels
            .iter()
            .map(|&l| {
                self.symbol(l).ok_or(Error::LabelOutOfAlphabet {
                    label: l,
                    alphabet: self.alphabet_size(),
                })
            })
            .collect()
    }
}

/// Renders a word right-to-left: the first label is rightmost and
/// neighbouring glyphs overlap by [`JOIN_OVERLAP`] pixels.
pub fn render_word(atlas: &GlyphAtlas, labels: &[usize]) -> Result<GrayImage> {
    if !(MIN_WORD_LEN..=MAX_WORD_LEN).contains(&labels.len()) {
        return Err(Error::InvalidArgument(format!(
            "word length must be in {MIN_WORD_LEN}..={MAX_WORD_LEN}, got {}",
            labels.len()
        )));
    }
    let glyphs = labels
        .iter()
        .map(|&l| {
            atlas.glyph(l).ok_or(Error::LabelOutOfAlphabet {
                label: l,
                alphabet: atlas.alphabet_size(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let width = glyphs.iter().map(|g| g.width()).sum::<usize>() - JOIN_OVERLAP * (glyphs.len() - 1);
    let mut out = GrayImage::new(width, GLYPH_HEIGHT, 0.0);
    let mut right = width;
    for g in glyphs {
        let left = right - g.width();
        for y in 0..GLYPH_HEIGHT {
            for x in 0..g.width() {
                let v = g.get(x, y);
                if v > out.get(left + x, y) {
                    out.set(left + x, y, v);
                }
            }
        }
        right = left + JOIN_OVERLAP;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentKind {
    None,
    Salt,
    Bold,
    Rotate,
}

impl AugmentKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "salt" => Ok(Self::Salt),
            "bold" => Ok(Self::Bold),
            "rotate" => Ok(Self::Rotate),
            other => Err(Error::Data(format!("unknown augmentation {other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Salt => "salt",
            Self::Bold => "bold",
            Self::Rotate => "rotate",
        }
    }
}

/// Concrete augmentation with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Augmentation {
    None,
    Salt { density: f64 },
    Bold { radius: usize },
    Rotate { degrees: f64 },
}

pub const SALT_RANGE: (f64, f64) = (0.02, 0.08);
pub const ROTATE_RANGE: f64 = 3.0;
pub const BOLD_RADIUS: usize = 1;

impl Augmentation {
    /// Parameters are a pure function of the kind and the sample seed.
    pub fn derive(kind: AugmentKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a0a0_5eed_a0a0);
        match kind {
            AugmentKind::None => Self::None,
            AugmentKind::Salt => Self::Salt {
                density: rng.gen_range(SALT_RANGE.0..=SALT_RANGE.1),
            },
            AugmentKind::Bold => Self::Bold {
                radius: BOLD_RADIUS,
            },
            AugmentKind::Rotate => Self::Rotate {
                degrees: rng.gen_range(-ROTATE_RANGE..=ROTATE_RANGE),
            },
        }
    }

    pub fn kind(&self) -> AugmentKind {
        match self {
            Self::None => AugmentKind::None,
            Self::Salt { .. } => AugmentKind::Salt,
            Self::Bold { .. } => AugmentKind::Bold,
            Self::Rotate { .. } => AugmentKind::Rotate,
        }
    }
}

/// Everything needed to re-render one sample.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SampleSpec {
    pub words: Vec<Vec<usize>>,
    pub augment: AugmentKind,
    pub seed: u64,
}

pub const DEFAULT_WORD_SPACING: usize = 12;

impl SampleSpec {
    pub fn augmentation(&self) -> Augmentation {
        Augmentation::derive(self.augment, self.seed)
    }

    pub fn transcript(&self, atlas: &GlyphAtlas) -> Result<Transcript> {
        let words = self
            .words
            .iter()
            .map(|w| atlas.word_text(w))
            .collect::<Result<Vec<_>>>()?;
        Ok(Transcript::from_words(&words))
    }

    /// Class targets for CTC: words in reading order joined by the separator.
    pub fn targets(&self, atlas: &GlyphAtlas) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, w) in self.words.iter().enumerate() {
            if i > 0 {
                out.push(atlas.space_class());
            }
            out.extend_from_slice(w);
        }
        out
    }

    /// Rotation is applied per word so long lines do not leave the canvas;
    /// salt and bold act on the assembled line.
    pub fn render(&self, atlas: &GlyphAtlas, spacing: usize) -> Result<GrayImage> {
        let aug = self.augmentation();
        let mut words = self
            .words
            .iter()
            .map(|w| render_word(atlas, w))
            .collect::<Result<Vec<_>>>()?;
        if let Augmentation::Rotate { degrees } = aug {
            words = words.iter().map(|w| rotate(w, degrees, 0.0)).collect();
        }
        let line = hconcat_rtl(&words, spacing, 0.0)?;
        Ok(match aug {
            Augmentation::Salt { density } => salt_pepper(&line, density, self.seed),
            Augmentation::Bold { radius } => dilate(&binarize(&line, 0.5), radius).to_gray(),
            _ => line,
        })
    }

    /// Inverse of [`SampleSpec::transcript`]: rebuilds the spec from a
    /// manifest row.
    pub fn from_transcript(atlas: &GlyphAtlas, text: &Transcript, augment: AugmentKind, seed: u64) -> Result<Self> {
        let words = text
            .words()
            .iter()
            .map(|w| {
                let labels = atlas.encode(w)?;
                if !(MIN_WORD_LEN..=MAX_WORD_LEN).contains(&labels.len()) {
                    return Err(Error::Data(format!("word {w:?} has {} symbols", labels.len())));
                }
                Ok(labels)
            })
            .collect::<Result<Vec<_>>>()?;
        if words.is_empty() {
            return Err(Error::Data("empty transcript".into()));
        }
        Ok(Self {
            words,
            augment,
            seed,
        })
    }
}

/// Which side of the fixed train/test partition a generator draws from.
/// Sentences are assigned by a stable hash, so the splits never share a
/// sentence whatever seeds are used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

const TEST_MODULUS: u64 = 8;

fn sentence_hash(words: &[Vec<usize>]) -> u64 {
    // FNV-1a over labels with a separator marker
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for w in words {
        for &l in w.iter().chain(std::iter::once(&usize::MAX)) {
            for b in (l as u64).to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    }
    // splitmix64 finalizer so every output bit depends on every input byte
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

impl Split {
    pub fn owns(self, words: &[Vec<usize>]) -> bool {
        let test = sentence_hash(words) % TEST_MODULUS == 0;
        match self {
            Split::Train => !test,
            Split::Test => test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorConfig {
    pub alphabet_size: usize,
    pub max_words: usize,
    /// When set, every sentence has exactly this many words.
    pub fixed_words: Option<usize>,
    /// Per-sample probability of one augmentation.
    pub augment_ratio: f64,
    pub split: Split,
    pub seed: u64,
}

impl GeneratorConfig {
    pub fn new(alphabet_size: usize, max_words: usize, seed: u64) -> Self {
        Self {
            alphabet_size,
            max_words,
            fixed_words: None,
            augment_ratio: 0.30,
            split: Split::Train,
            seed,
        }
    }
}

/// Consecutive duplicate draws after which the epoch is declared exhausted.
const EXHAUSTION_LIMIT: usize = 10_000;

/// Seeded sentence stream without repeated sentences inside an epoch.
#[derive(Debug, Clone)]
pub struct SentenceGenerator {
    config: GeneratorConfig,
    rng: ChaCha8Rng,
    seen: HashSet<Vec<Vec<usize>>>,
}

impl SentenceGenerator {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        if config.max_words == 0 {
            return Err(Error::InvalidArgument("max_words must be at least 1".into()));
        }
        if config.fixed_words == Some(0) {
            return Err(Error::InvalidArgument("fixed word count must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&config.augment_ratio) {
            return Err(Error::InvalidArgument(format!(
                "augment ratio must be in [0, 1], got {}",
                config.augment_ratio
            )));
        }
        if !(1..=SYMBOLS.len()).contains(&config.alphabet_size) {
            return Err(Error::InvalidArgument(format!(
                "alphabet size {} out of range",
                config.alphabet_size
            )));
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            seen: HashSet::new(),
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    /// Forgets the sentences emitted so far.
    pub fn start_epoch(&mut self) {
        self.seen.clear();
    }

    pub fn emitted_this_epoch(&self) -> usize {
        self.seen.len()
    }

    fn draw_sentence(&mut self) -> Vec<Vec<usize>> {
        let count = match self.config.fixed_words {
            Some(n) => n,
            None => self.rng.gen_range(1..=self.config.max_words),
        };
        (0..count)
            .map(|_| {
                let len = self.rng.gen_range(MIN_WORD_LEN..=MAX_WORD_LEN);
                (0..len)
                    .map(|_| self.rng.gen_range(0..self.config.alphabet_size))
                    .collect()
            })
            .collect()
    }

    /// Next unseen sentence with its own augmentation draw.
    pub fn next_spec(&mut self) -> Result<SampleSpec> {
        let mut rejected = 0;
        let words = loop {
            let words = self.draw_sentence();
            if self.config.split.owns(&words) && !self.seen.contains(&words) {
                break words;
            }
            rejected += 1;
            if rejected >= EXHAUSTION_LIMIT {
                return Err(Error::EpochExhausted {
                    emitted: self.seen.len(),
                });
            }
        };
        self.seen.insert(words.clone());
        let augmented = self.rng.gen_bool(self.config.augment_ratio);
        let augment = if augmented {
            *[AugmentKind::Salt, AugmentKind::Bold, AugmentKind::Rotate]
                .choose(&mut self.rng)
                .expect("non-empty")
        } else {
            AugmentKind::None
        };
        let seed = self.rng.gen();
        Ok(SampleSpec {
            words,
            augment,
            seed,
        })
    }
}

/// Rendered sample with its transcript.
pub fn generate_sample(atlas: &GlyphAtlas, generator: &mut SentenceGenerator) -> Result<(GrayImage, Transcript, SampleSpec)> {
    let spec = generator.next_spec()?;
    let image = spec.render(atlas, DEFAULT_WORD_SPACING)?;
    let text = spec.transcript(atlas)?;
    Ok((image, text, spec))
}

/// `count` distinct held-out sentences of exactly `words` words, each
/// rendered once per requested mode. The same sentences appear under every
/// mode so mode columns differ only in the augmentation.
pub fn evaluation_set(alphabet_size: usize, words: usize, count: usize, modes: &[AugmentKind], seed: u64) -> Result<Vec<SampleSpec>> {
    let mut gen = SentenceGenerator::new(GeneratorConfig {
        alphabet_size,
        max_words: words,
        fixed_words: Some(words),
        augment_ratio: 0.0,
        split: Split::Test,
        seed,
    })?;
    let mut out = Vec::with_capacity(count * modes.len());
    for _ in 0..count {
        let base = gen.next_spec()?;
        for &m in modes {
            out.push(SampleSpec {
                augment: m,
                ..base.clone()
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumStage {
    pub stage: usize,
    pub max_words: usize,
    pub freeze_conv: bool,
}

/// Stage table: 1 word, then 2, 4, 6, ... with the conv block frozen from
/// stage 1 on.
pub fn curriculum(stage: usize) -> CurriculumStage {
    CurriculumStage {
        stage,
        max_words: stage_max_words(stage),
        freeze_conv: stage >= 1,
    }
}

/// One line of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub image: String,
    pub transcript: Transcript,
    pub words: usize,
    pub augment: AugmentKind,
    pub seed: u64,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn manifest_line(row: &ManifestRow) -> Result<String> {
    Ok(serde_json::to_string(row)?)
}
