//! Text preprocessing shared by training and inference.
//!
//! Three independent transforms (lowercasing, diacritic stripping and
//! punctuation stripping) can be combined freely. When several are enabled
//! they always run in the order lowercase, diacritics, punctuation so that a
//! model trained with one [`NormalizeConfig`] sees exactly the same text at
//! serving time.

use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

/// Which preprocessing transforms are enabled. All eight combinations are valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizeConfig {
    pub lowercase: bool,
    pub strip_diacritics: bool,
    pub strip_punctuation: bool,
}

impl Default for NormalizeConfig {
    fn default() -> Self {
        Self::all()
    }
}

impl NormalizeConfig {
    pub const fn all() -> Self {
        Self {
            lowercase: true,
            strip_diacritics: true,
            strip_punctuation: true,
        }
    }

    pub const fn none() -> Self {
        Self {
            lowercase: false,
            strip_diacritics: false,
            strip_punctuation: false,
        }
    }

    /// Every flag combination, in bit order (lowercase = bit 0).
    pub fn combinations() -> impl Iterator<Item = NormalizeConfig> {
        (0u8..8).map(|bits| NormalizeConfig {
            lowercase: bits & 1 != 0,
            strip_diacritics: bits & 2 != 0,
            strip_punctuation: bits & 4 != 0,
        })
    }
}

/// Unicode lowercasing.
///
/// U+0130 (capital I with dot above) is mapped to a plain `i` instead of the
/// two code point `i` + U+0307 sequence so that lowercasing never adds code
/// points.
pub fn to_lowercase(text: &str) -> String {
    if text.contains('\u{130}') {
        text.replace('\u{130}', "i").to_lowercase()
    } else {
        text.to_lowercase()
    }
}

/// Canonical decomposition, removal of every combining mark, recomposition.
pub fn strip_diacritics(text: &str) -> String {
    if text.is_ascii() {
        return text.to_owned();
    }
    text.nfd()
        .filter(|c| !is_combining_mark(*c))
        .nfc()
        .collect()
}

pub fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

/// Removes punctuation-category code points, then collapses whitespace runs
/// to a single space and trims both ends.
pub fn strip_punctuation(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.chars().filter(|c| !is_punctuation(*c)) {
        if c.is_whitespace() {
            pending_space = true;
            continue;
        }
        if pending_space && !out.is_empty() {
            out.push(' ');
        }
        pending_space = false;
        out.push(c);
    }
    out
}

pub fn normalize(text: &str, config: NormalizeConfig) -> String {
    let mut out = if config.lowercase {
        to_lowercase(text)
    } else {
        text.to_owned()
    };
    if config.strip_diacritics {
        out = strip_diacritics(&out);
    }
    if config.strip_punctuation {
        out = strip_punctuation(&out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn slovakish() -> impl Strategy<Value = String> {
        let pool: Vec<char> = "aáäbcčdďeéfghiíjklĺľmnňoóôpqrŕsštťuúvwxyýzž\
                               AÁÄBCČDĎEÉFGHIÍJKLĹĽMNŇOÓÔPQRŔSŠTŤUÚVWXYÝZŽ\
                               0123456789 \t\n.,;:!?-–—…\"'„“”«»()[]{}/\\@#%&*_+=<>|~^$€\u{301}\u{30c}\u{308}\u{130}ΣσςİıßẞǅﬁÅΩ"
            .chars()
            .collect();
        prop::collection::vec(
            prop_oneof![
                4 => prop::sample::select(pool),
                1 => any::<char>(),
            ],
            0..40,
        )
        .prop_map(|v| v.into_iter().collect())
    }

    #[test]
    fn lowercase_examples() {
        assert_eq!(to_lowercase("Ako si zmením PIN?"), "ako si zmením pin?");
        assert_eq!(to_lowercase(""), "");
        assert_eq!(to_lowercase("\u{130}STANBUL"), "istanbul");
    }

    #[test]
    fn diacritics_examples() {
        assert_eq!(strip_diacritics("zmením účet"), "zmenim ucet");
        assert_eq!(strip_diacritics("PIN 123?"), "PIN 123?");
        assert_eq!(strip_diacritics("ĽUĎO ľahko ôsmy"), "LUDO lahko osmy");
        // decomposed input
        assert_eq!(strip_diacritics("u\u{301}c\u{30c}et"), "ucet");
    }

    #[test]
    fn punctuation_examples() {
        assert_eq!(
            strip_punctuation("Dobrý deň, chcem úver!"),
            "Dobrý deň chcem úver"
        );
        assert_eq!(strip_punctuation("slovo"), "slovo");
        assert_eq!(strip_punctuation("  a , - b  "), "a b");
        assert_eq!(strip_punctuation("„áno“ – nie…"), "áno nie");
        // symbols are not punctuation
        assert_eq!(strip_punctuation("100 € + 5 $"), "100 € + 5 $");
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(
            normalize("Ako si zmením PIN?", NormalizeConfig::all()),
            "ako si zmenim pin"
        );
        let x = "Ako  si, zmením PIN?";
        assert_eq!(normalize(x, NormalizeConfig::none()), x);
    }

    #[test]
    fn eight_distinct_configs() {
        let all: std::collections::HashSet<_> = NormalizeConfig::combinations().collect();
        assert_eq!(all.len(), 8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn lowercase_idempotent(s in slovakish()) {
            let once = to_lowercase(&s);
            prop_assert_eq!(to_lowercase(&once), once);
        }

        #[test]
        fn diacritics_leave_no_marks(s in slovakish()) {
            let out = strip_diacritics(&s);
            prop_assert!(out.nfd().all(|c| !is_combining_mark(c)));
            prop_assert_eq!(strip_diacritics(&out), out);
        }

        #[test]
        fn punctuation_leaves_none(s in slovakish()) {
            let out = strip_punctuation(&s);
            prop_assert!(!out.chars().any(is_punctuation));
            prop_assert!(!out.contains("  "));
            prop_assert_eq!(strip_punctuation(&out), out);
        }

        #[test]
        fn normalize_idempotent_and_never_longer(s in slovakish()) {
            for config in NormalizeConfig::combinations() {
                let once = normalize(&s, config);
                prop_assert_eq!(&normalize(&once, config), &once, "config {:?}", config);
                prop_assert!(once.chars().count() <= s.chars().count(), "config {:?}", config);
            }
        }
    }
}
