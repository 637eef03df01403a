use super::{FactorSpec, COLOR_WORDS, SHAPE_WORDS};

pub const SIZE_WORDS: [&str; 3] = ["small", "medium", "big"];

/// Word-order variants; the first is canonical.
const TEMPLATES: [&str; 6] = [
    "There is a {size} {color} {shape}.",
    "A {size} {color} {shape} is there.",
    "There is a {color} {shape} that is {size}.",
    "The {shape} is {size} and {color}.",
    "The scene contains a {size} {color} {shape}.",
    "A {color} {shape}, {size}, is in the room.",
];

/// Template sentences naming the object's size group, colour and shape.
/// Floor colour, wall colour and orientation are never mentioned.
pub fn describe(factors: &FactorSpec) -> Vec<String> {
    let size = SIZE_WORDS[factors.size_group()];
    let color = COLOR_WORDS[factors.object_color as usize];
    let shape = SHAPE_WORDS[factors.shape as usize];
    TEMPLATES
        .iter()
        .map(|t| t.replace("{size}", size).replace("{color}", color).replace("{shape}", shape))
        .collect()
}

/// Attribute indices recovered from a sentence; `None` where no vocabulary
/// word was found.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Attributes {
    pub color: Option<usize>,
    pub size: Option<usize>,
    pub shape: Option<usize>,
}

impl Attributes {
    pub fn is_empty(&self) -> bool {
        self.color.is_none() && self.size.is_none() && self.shape.is_none()
    }

    pub fn of(factors: &FactorSpec) -> Self {
        Self {
            color: Some(factors.object_color as usize),
            size: Some(factors.size_group()),
            shape: Some(factors.shape as usize),
        }
    }
}

/// Lowercased alphanumeric tokens; punctuation and spacing are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Inverse of the description templates. The first vocabulary word of each
/// kind wins.
pub fn parse_attributes(text: &str) -> Attributes {
    let find = |tokens: &[String], vocab: &[&str]| {
        tokens.iter().find_map(|t| vocab.iter().position(|w| w == t))
    };
    let tokens = tokenize(text);
    Attributes {
        color: find(&tokens, &COLOR_WORDS),
        size: find(&tokens, &SIZE_WORDS),
        shape: find(&tokens, &SHAPE_WORDS),
    }
}
