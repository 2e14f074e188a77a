#![allow(dead_code)]

use std::path::Path;

use chrono::{DateTime, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use omniengine::image_pipeline::{encode_pgm, PixelImage};
use omniengine::stream_format::{serialize_document, DocumentMeta, Element, ImageRef, StreamDocument};

pub const STOPS: [&str; 8] = ["the", "and", "of", "to", "in", "with", "from", "for"];
const SYLLABLES: [&str; 14] = ["ka", "lo", "mi", "ra", "ten", "vor", "sil", "pem", "dro", "nus", "bel", "tar", "quo", "fen"];

pub fn ts(day: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2023, 3, day, 12, 0, 0).unwrap()
}

pub fn content_word(rng: &mut impl Rng) -> String {
    (0..3).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect()
}

/// Plain prose: every third word a stop word, a full stop every twelve.
pub fn good_text(rng: &mut impl Rng, words: usize) -> String {
    let mut out = Vec::with_capacity(words);
    for i in 0..words {
        let mut w = if i % 3 == 1 { STOPS[(i / 3) % STOPS.len()].to_string() } else { content_word(rng) };
        if i % 12 == 0 {
            w = capitalise(&w);
        }
        if i % 12 == 11 || i + 1 == words {
            w.push('.');
        }
        out.push(w);
    }
    out.join(" ")
}

/// Long enough for the preliminary filter but with only two stop words.
pub fn stopword_poor_text(rng: &mut impl Rng, words: usize) -> String {
    let mut out: Vec<String> = (0..words - 2).map(|_| content_word(rng)).collect();
    out.insert(words / 3, "the".into());
    out.insert(2 * words / 3, "and".into());
    out.join(" ") + "."
}

fn capitalise(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// 8x8 random blocks scaled up; distinct seeds give distinct hashes with
/// overwhelming probability.
pub fn block_noise(seed: u64, w: u32, h: u32) -> PixelImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks: Vec<u8> = (0..64).map(|_| rng.random()).collect();
    PixelImage::from_fn(w, h, |x, y| blocks[((y * 8 / h) * 8 + x * 8 / w) as usize]).unwrap()
}

pub fn write_image(root: &Path, url_path: &str, img: &PixelImage) {
    let path = root.join("img.test").join(url_path);
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, encode_pgm(img)).unwrap();
}

pub fn doc(id: &str, day: u32, elements: Vec<Element>) -> StreamDocument {
    StreamDocument { id: id.into(), elements, meta: DocumentMeta::unscored(format!("http://site.test/{id}"), ts(day)) }
}

pub fn to_jsonl(docs: &[StreamDocument]) -> String {
    docs.iter().map(|d| serialize_document(d).unwrap() + "\n").collect()
}

/// What the hand labels say should happen to a document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fate {
    Keep,
    /// Kept, with a paragraph removed by the detailed rules.
    Modified,
    /// Kept; one shared image dropped by the occurrence limit.
    SharedLogo,
    TooShort,
    Duplicate,
    ImageMissing,
    ImageSmall,
    FewStopWords,
    /// Missing image and too few stop words.
    ImageAndStopWords,
}

impl Fate {
    pub fn preliminary(self) -> bool {
        self == Fate::TooShort
    }
    pub fn duplicate(self) -> bool {
        self == Fate::Duplicate
    }
    pub fn image(self) -> bool {
        matches!(self, Fate::ImageMissing | Fate::ImageSmall | Fate::ImageAndStopWords)
    }
    pub fn detailed(self) -> bool {
        matches!(self, Fate::FewStopWords | Fate::ImageAndStopWords)
    }
}

pub struct LabelledCorpus {
    pub docs: Vec<StreamDocument>,
    pub fates: Vec<Fate>,
}

impl LabelledCorpus {
    pub fn ids_where(&self, f: impl Fn(Fate) -> bool) -> Vec<String> {
        let mut ids: Vec<String> =
            self.docs.iter().zip(&self.fates).filter(|(_, fate)| f(**fate)).map(|(d, _)| d.id.clone()).collect();
        ids.sort();
        ids
    }

    pub fn count(&self, f: impl Fn(Fate) -> bool) -> usize {
        self.fates.iter().filter(|x| f(**x)).count()
    }
}

/// The 100-document end-to-end corpus. Images are written under
/// `image_root`; the file transport serves them as `http://img.test/...`.
pub fn labelled_corpus(image_root: &Path) -> LabelledCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut plan: Vec<Fate> = [
        (Fate::TooShort, 20),
        (Fate::ImageMissing, 8),
        (Fate::ImageSmall, 5),
        (Fate::FewStopWords, 7),
        (Fate::ImageAndStopWords, 2),
        (Fate::Modified, 6),
        (Fate::SharedLogo, 11),
        (Fate::Keep, 33),
    ]
    .into_iter()
    .flat_map(|(f, n)| std::iter::repeat_n(f, n))
    .collect();
    plan.shuffle(&mut rng);

    let logo = block_noise(9_999, 200, 200);
    let mut docs = Vec::new();
    let mut fates = Vec::new();
    let mut logos = 0;
    for (i, fate) in plan.iter().enumerate() {
        let id = format!("doc-{i:03}");
        let day = 2 + (i % 27) as u32;
        let photo = format!("photos/{id}.pgm");
        let image_url = match fate {
            Fate::ImageMissing | Fate::ImageAndStopWords => format!("http://img.test/missing/{id}.pgm"),
            Fate::ImageSmall => {
                write_image(image_root, &format!("small/{id}.pgm"), &block_noise(i as u64, 100, 100));
                format!("http://img.test/small/{id}.pgm")
            }
            _ => {
                write_image(image_root, &photo, &block_noise(i as u64, 200, 200));
                format!("http://img.test/{photo}")
            }
        };
        let text = match fate {
            Fate::TooShort => good_text(&mut rng, 10),
            Fate::FewStopWords | Fate::ImageAndStopWords => stopword_poor_text(&mut rng, 90),
            _ => good_text(&mut rng, 90),
        };
        let mut elements = vec![Element::text(text), Element::image(ImageRef::pending(image_url))];
        match fate {
            Fate::Modified => elements.push(Element::text("Follow us on twitter for daily updates and stories.")),
            Fate::SharedLogo => {
                let path = format!("logos/logo-{logos}.pgm");
                logos += 1;
                write_image(image_root, &path, &logo);
                elements.push(Element::image(ImageRef::pending(format!("http://img.test/{path}"))));
            }
            _ => {}
        }
        docs.push(doc(&id, day, elements));
        fates.push(*fate);
    }

    // older copies of the first eight plain documents
    let originals: Vec<usize> = (0..docs.len()).filter(|&i| fates[i] == Fate::Keep).take(8).collect();
    for (n, &i) in originals.iter().enumerate() {
        let mut copy = docs[i].clone();
        copy.id = format!("copy-{n:02}");
        copy.meta.timestamp = ts(1);
        copy.meta.source_url = format!("http://mirror.test/{}", docs[i].id);
        docs.push(copy);
        fates.push(Fate::Duplicate);
    }
    LabelledCorpus { docs, fates }
}
