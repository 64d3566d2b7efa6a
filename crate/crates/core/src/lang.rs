use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Prompt languages of the evaluation corpus, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lang {
    En,
    Es,
    Hi,
    Ja,
    Ru,
    #[serde(alias = "zh-cn", alias = "zh_cn")]
    Zh,
}

impl Lang {
    pub const ALL: [Lang; 6] = [Lang::En, Lang::Es, Lang::Hi, Lang::Ja, Lang::Ru, Lang::Zh];

    /// The five non-English languages.
    pub const TRANSLATED: [Lang; 5] = [Lang::Es, Lang::Hi, Lang::Ja, Lang::Ru, Lang::Zh];

    pub fn code(self) -> &'static str {
        match self {
            Lang::En => "en",
            Lang::Es => "es",
            Lang::Hi => "hi",
            Lang::Ja => "ja",
            Lang::Ru => "ru",
            Lang::Zh => "zh",
        }
    }

    /// English name, as used in translation instructions.
    pub fn english_name(self) -> &'static str {
        match self {
            Lang::En => "English",
            Lang::Es => "Spanish",
            Lang::Hi => "Hindi",
            Lang::Ja => "Japanese",
            Lang::Ru => "Russian",
            Lang::Zh => "Chinese",
        }
    }

    /// Chinese and Japanese need a dedicated word segmenter.
    pub fn is_unsegmented(self) -> bool {
        matches!(self, Lang::Zh | Lang::Ja)
    }
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown language code `{0}` (expected one of en, es, hi, ja, ru, zh)")]
pub struct UnknownLang(pub String);

impl FromStr for Lang {
    type Err = UnknownLang;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "en" => Ok(Lang::En),
            "es" => Ok(Lang::Es),
            "hi" => Ok(Lang::Hi),
            "ja" => Ok(Lang::Ja),
            "ru" => Ok(Lang::Ru),
            "zh" | "zh-cn" | "zh_cn" => Ok(Lang::Zh),
            _ => Err(UnknownLang(s.to_string())),
        }
    }
}
