use std::collections::{BTreeSet, HashMap};
use std::sync::OnceLock;

use crate::text::tokenize;

const BUNDLED_COUNTRIES: &str = include_str!("../../data/gazetteer.tsv");
const BUNDLED_REGIONS: &str = include_str!("../../data/regions.tsv");

/// Static country-name / demonym table mapping token phrases to ISO-2 codes,
/// plus a coarse-region vocabulary mapping phrases to normalized tags.
#[derive(Debug, Clone)]
pub struct Gazetteer {
    countries: HashMap<Vec<String>, String>,
    regions: HashMap<Vec<String>, String>,
    max_phrase: usize,
}

/// One match found while scanning text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GeoHit {
    Country(String),
    Region(String),
}

impl Gazetteer {
    /// The table compiled into the crate.
    pub fn bundled() -> &'static Gazetteer {
        static TABLE: OnceLock<Gazetteer> = OnceLock::new();
        TABLE.get_or_init(|| Gazetteer::parse(BUNDLED_COUNTRIES, BUNDLED_REGIONS))
    }

    /// Parses tab-separated `key<TAB>alias|alias|...` tables; `#` starts a
    /// comment line.
    pub fn parse(countries: &str, regions: &str) -> Gazetteer {
        let mut g = Gazetteer { countries: HashMap::new(), regions: HashMap::new(), max_phrase: 1 };
        for (key, phrase) in rows(countries) {
            g.max_phrase = g.max_phrase.max(phrase.len());
            g.countries.insert(phrase, key.to_string());
        }
        for (key, phrase) in rows(regions) {
            g.max_phrase = g.max_phrase.max(phrase.len());
            g.regions.insert(phrase, key.to_string());
        }
        g
    }

    pub fn country_codes(&self) -> BTreeSet<&str> {
        self.countries.values().map(String::as_str).collect()
    }

    /// Longest-match scan over the token stream. Country phrases win over
    /// region phrases of the same length.
    pub fn scan(&self, tokens: &[String]) -> Vec<GeoHit> {
        let mut hits = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let longest = self.max_phrase.min(tokens.len() - i);
            let mut matched = false;
            for len in (1..=longest).rev() {
                let span = &tokens[i..i + len];
                if let Some(code) = self.countries.get(span) {
                    hits.push(GeoHit::Country(code.clone()));
                } else if let Some(tag) = self.regions.get(span) {
                    hits.push(GeoHit::Region(tag.clone()));
                } else {
                    continue;
                }
                i += len;
                matched = true;
                break;
            }
            if !matched {
                i += 1;
            }
        }
        hits
    }
}

fn rows(table: &str) -> impl Iterator<Item = (&str, Vec<String>)> {
    table
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once('\t'))
        .flat_map(|(key, aliases)| {
            aliases
                .split('|')
                .map(tokenize)
                .filter(|t| !t.is_empty())
                .map(move |t| (key.trim(), t))
                .collect::<Vec<_>>()
        })
}

/// Maps conclusion text to (ISO-2 codes, region tags).
pub fn map_regions(text: &str) -> (BTreeSet<String>, BTreeSet<String>) {
    map_regions_with(Gazetteer::bundled(), text)
}

pub fn map_regions_with(g: &Gazetteer, text: &str) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut countries = BTreeSet::new();
    let mut regions = BTreeSet::new();
    for hit in g.scan(&tokenize(text)) {
        match hit {
            GeoHit::Country(c) => countries.insert(c),
            GeoHit::Region(r) => regions.insert(r),
        };
    }
    (countries, regions)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn bundled_codes_are_iso2_shaped() {
        let g = Gazetteer::bundled();
        assert!(g.country_codes().len() > 90);
        assert!(g.country_codes().iter().all(|c| crate::skill_model::is_iso2(c)));
    }

    #[test]
    fn country_names_and_demonyms() {
        assert_eq!(map_regions("this is Japan"), (set(&["JP"]), set(&[])));
        assert_eq!(map_regions("Japanese kana on the shopfront"), (set(&["JP"]), set(&[])));
        assert_eq!(map_regions("PORTUGAL or spain"), (set(&["ES", "PT"]), set(&[])));
    }

    #[test]
    fn unresolved_geography_becomes_region_tags() {
        assert_eq!(map_regions("Pyrenean valley"), (set(&[]), set(&["pyrenees"])));
        assert_eq!(map_regions("definitely Catalan-speaking; Andorra likely"), (set(&["AD"]), set(&["catalonia"])));
    }

    #[test]
    fn longest_match_wins() {
        assert_eq!(map_regions("South Africa"), (set(&["ZA"]), set(&[])));
        assert_eq!(map_regions("southern Africa"), (set(&[]), set(&["southern africa"])));
        assert_eq!(map_regions("somewhere in South America"), (set(&[]), set(&["south america"])));
        assert_eq!(map_regions("United States of America"), (set(&["US"]), set(&[])));
        assert_eq!(map_regions("Niger river"), (set(&[]), set(&[])));
    }
}
