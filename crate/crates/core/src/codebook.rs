//! Room and object category vocabularies.
//!
//! Categories are matched against free text on word boundaries, so no entry
//! may appear as a whole-word sub-phrase of another entry in the same
//! codebook, and the two built-in codebooks share no entries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodebookKind {
    Room,
    Object,
}

impl CodebookKind {
    /// Key under which this codebook's text features live in a feature store.
    pub fn feature_key(self) -> &'static str {
        match self {
            CodebookKind::Room => "room_codebook",
            CodebookKind::Object => "object_codebook",
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CodebookError {
    #[error("codebook is empty")]
    Empty,
    #[error("duplicate category {0:?}")]
    Duplicate(String),
    #[error("blank category")]
    Blank,
}

/// An ordered list of unique, lowercase categories.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codebook {
    kind: CodebookKind,
    categories: Vec<String>,
}

impl Codebook {
    pub fn new<I, S>(kind: CodebookKind, categories: I) -> Result<Self, CodebookError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out: Vec<String> = Vec::new();
        for c in categories {
            let c = normalize_category(c.as_ref());
            if c.is_empty() {
                return Err(CodebookError::Blank);
            }
            if out.contains(&c) {
                return Err(CodebookError::Duplicate(c));
            }
            out.push(c);
        }
        if out.is_empty() {
            return Err(CodebookError::Empty);
        }
        Ok(Self {
            kind,
            categories: out,
        })
    }

    pub fn default_rooms() -> Self {
        Self::new(CodebookKind::Room, DEFAULT_ROOMS).expect("built-in room codebook is valid")
    }

    pub fn default_objects() -> Self {
        Self::new(CodebookKind::Object, DEFAULT_OBJECTS).expect("built-in object codebook is valid")
    }

    pub fn kind(&self) -> CodebookKind {
        self.kind
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&str> {
        self.categories.get(index).map(String::as_str)
    }

    pub fn index_of(&self, category: &str) -> Option<usize> {
        let c = normalize_category(category);
        self.categories.iter().position(|x| *x == c)
    }

    pub fn contains(&self, category: &str) -> bool {
        self.index_of(category).is_some()
    }

    /// Categories occurring in `text` as whole-word phrases, ordered by first
    /// occurrence (ties by codebook order).
    pub fn mentions(&self, text: &str) -> Vec<&str> {
        let words = words(text);
        let mut hits: Vec<(usize, usize)> = Vec::new();
        for (idx, cat) in self.categories.iter().enumerate() {
            if let Some(pos) = find_phrase(&words, cat) {
                hits.push((pos, idx));
            }
        }
        hits.sort();
        hits.into_iter()
            .map(|(_, idx)| self.categories[idx].as_str())
            .collect()
    }
}

/// Lowercase, trimmed, single-spaced form of a category label.
pub fn normalize_category(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Word index where `phrase` starts inside `words`, if it occurs.
fn find_phrase(words: &[String], phrase: &str) -> Option<usize> {
    let needle: Vec<&str> = phrase.split(' ').collect();
    if needle.is_empty() || needle.len() > words.len() {
        return None;
    }
    (0..=words.len() - needle.len())
        .find(|&i| needle.iter().zip(&words[i..]).all(|(a, b)| *a == b.as_str()))
}

/// Whole-word phrase containment, case-insensitive.
pub fn mentions_phrase(text: &str, phrase: &str) -> bool {
    let phrase = normalize_category(phrase);
    !phrase.is_empty() && find_phrase(&words(text), &phrase).is_some()
}

pub const DEFAULT_ROOMS: [&str; 40] = [
    "bathroom",
    "bedroom",
    "kitchen",
    "living room",
    "dining room",
    "hallway",
    "laundry room",
    "office",
    "closet",
    "garage",
    "staircase",
    "lounge",
    "family room",
    "washroom",
    "entryway",
    "porch",
    "balcony",
    "library",
    "gym",
    "game room",
    "bar",
    "tv room",
    "utility room",
    "spa",
    "patio",
    "workshop",
    "nursery",
    "playroom",
    "pantry",
    "foyer",
    "attic",
    "basement",
    "sunroom",
    "wine cellar",
    "studio",
    "conference room",
    "reception",
    "storage room",
    "mudroom",
    "terrace",
];

pub const DEFAULT_OBJECTS: [&str; 64] = [
    "bed",
    "pillow",
    "lamp",
    "nightstand",
    "wardrobe",
    "dresser",
    "mirror",
    "sink",
    "bathtub",
    "shower",
    "towel",
    "toilet",
    "refrigerator",
    "microwave",
    "oven",
    "stove",
    "dishwasher",
    "kettle",
    "sofa",
    "television",
    "coffee table",
    "armchair",
    "fireplace",
    "rug",
    "bookshelf",
    "desk",
    "computer",
    "printer",
    "dining table",
    "chair",
    "washing machine",
    "dryer",
    "ironing board",
    "laundry basket",
    "shoe rack",
    "coat",
    "umbrella",
    "car",
    "bicycle",
    "toolbox",
    "banister",
    "plant",
    "painting",
    "clock",
    "vase",
    "curtain",
    "treadmill",
    "dumbbell",
    "piano",
    "pool table",
    "wine rack",
    "stool",
    "crib",
    "toy",
    "shelf",
    "boiler",
    "bench",
    "grill",
    "hot tub",
    "whiteboard",
    "projector",
    "counter",
    "box",
    "suitcase",
];

/// Typical object categories for a room category, used by the world
/// generator. Rooms without an entry fall back to a generic furnishing set.
pub fn cooccurring_objects(room: &str) -> &'static [&'static str] {
    match room {
        "bathroom" => &["sink", "bathtub", "shower", "towel", "toilet", "mirror"],
        "bedroom" => &["bed", "pillow", "lamp", "nightstand", "wardrobe", "dresser", "mirror"],
        "kitchen" => &["refrigerator", "microwave", "oven", "stove", "dishwasher", "kettle", "sink"],
        "living room" => &["sofa", "television", "coffee table", "armchair", "fireplace", "rug", "lamp"],
        "dining room" => &["dining table", "chair", "vase", "painting", "clock"],
        "hallway" => &["painting", "rug", "clock", "plant", "shoe rack"],
        "laundry room" => &["washing machine", "dryer", "ironing board", "laundry basket", "sink"],
        "office" => &["desk", "computer", "printer", "chair", "bookshelf", "lamp"],
        "closet" => &["coat", "shelf", "box", "suitcase"],
        "garage" => &["car", "bicycle", "toolbox", "shelf", "box"],
        "staircase" => &["banister", "painting", "plant"],
        "lounge" | "family room" | "tv room" => {
            &["sofa", "television", "armchair", "rug", "lamp", "coffee table"]
        }
        "washroom" => &["toilet", "sink", "mirror", "towel"],
        "entryway" | "foyer" | "mudroom" => &["shoe rack", "coat", "umbrella", "bench", "mirror"],
        "porch" | "patio" | "terrace" | "balcony" => &["plant", "bench", "grill", "chair"],
        "library" | "studio" => &["bookshelf", "desk", "lamp", "armchair", "painting"],
        "gym" => &["treadmill", "dumbbell", "mirror", "towel"],
        "game room" => &["pool table", "television", "sofa", "stool"],
        "bar" | "wine cellar" => &["wine rack", "stool", "counter", "shelf"],
        "utility room" | "basement" => &["boiler", "washing machine", "shelf", "box", "toolbox"],
        "spa" => &["hot tub", "towel", "bench", "plant"],
        "workshop" => &["toolbox", "bench", "shelf", "stool"],
        "nursery" | "playroom" => &["crib", "toy", "rug", "lamp", "chair"],
        "pantry" | "storage room" | "attic" => &["shelf", "box", "suitcase"],
        "sunroom" => &["plant", "armchair", "rug", "painting"],
        "conference room" => &["whiteboard", "projector", "chair", "desk"],
        "reception" => &["counter", "chair", "plant", "clock"],
        _ => &["plant", "painting", "chair", "lamp", "clock"],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_subphrases(book: &Codebook) {
        for a in book.categories() {
            for b in book.categories() {
                if a != b {
                    assert!(!mentions_phrase(b, a), "{a:?} is a sub-phrase of {b:?}");
                }
            }
        }
    }

    #[test]
    fn builtin_codebooks_are_unambiguous() {
        let rooms = Codebook::default_rooms();
        let objects = Codebook::default_objects();
        assert_eq!(rooms.len(), 40);
        no_subphrases(&rooms);
        no_subphrases(&objects);
        for r in rooms.categories() {
            for o in objects.categories() {
                assert!(!mentions_phrase(r, o) && !mentions_phrase(o, r), "{r:?} / {o:?}");
            }
        }
    }

    #[test]
    fn cooccurrence_table_uses_known_objects() {
        let objects = Codebook::default_objects();
        for room in DEFAULT_ROOMS {
            for obj in cooccurring_objects(room) {
                assert!(objects.contains(obj), "{room}: {obj}");
            }
        }
    }

    #[test]
    fn rejects_duplicates_and_blanks() {
        assert_eq!(
            Codebook::new(CodebookKind::Room, ["Kitchen", "kitchen "]),
            Err(CodebookError::Duplicate("kitchen".into()))
        );
        assert_eq!(Codebook::new(CodebookKind::Room, ["  "]), Err(CodebookError::Blank));
        assert_eq!(
            Codebook::new(CodebookKind::Room, Vec::<String>::new()),
            Err(CodebookError::Empty)
        );
    }

    #[test]
    fn mentions_respect_word_boundaries() {
        let objects = Codebook::default_objects();
        assert!(objects.mentions("Go to the bedroom").is_empty());
        assert_eq!(objects.mentions("Make the bed near the lamp"), vec!["bed", "lamp"]);
        let rooms = Codebook::default_rooms();
        assert_eq!(rooms.mentions("Exit the bedroom. Go to the Laundry  Room"), vec![
            "bedroom",
            "laundry room"
        ]);
    }
}
