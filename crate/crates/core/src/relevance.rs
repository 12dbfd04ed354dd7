//! Boolean relevance control: an inverted index over title and attribute
//! terms, key-term extraction from lexicons, and the order-preserving filter.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use mgdspr_ann::Hit;
use serde::{Deserialize, Serialize};

use crate::corpus::{read_lexicon, Corpus};
use crate::error::{CoreError, Result};

/// Query-term classes in tagging precedence order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TermClass {
    Brand,
    Category,
    Color,
    Style,
    Audience,
}

impl TermClass {
    pub const ALL: [TermClass; 5] = [Self::Brand, Self::Category, Self::Color, Self::Style, Self::Audience];

    pub fn name(self) -> &'static str {
        match self {
            Self::Brand => "brand",
            Self::Category => "category",
            Self::Color => "color",
            Self::Style => "style",
            Self::Audience => "audience",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

impl fmt::Display for TermClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-class token lists.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lexicons {
    classes: BTreeMap<TermClass, BTreeSet<String>>,
}

impl Lexicons {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, class: TermClass, token: impl Into<String>) {
        self.classes.entry(class).or_default().insert(token.into());
    }

    pub fn with(mut self, class: TermClass, tokens: &[&str]) -> Self {
        for t in tokens {
            self.insert(class, *t);
        }
        self
    }

    /// Highest-precedence class containing `token`.
    pub fn tag(&self, token: &str) -> Option<TermClass> {
        TermClass::ALL
            .into_iter()
            .find(|c| self.classes.get(c).is_some_and(|s| s.contains(token)))
    }

    pub fn tokens(&self, class: TermClass) -> impl Iterator<Item = &str> {
        self.classes.get(&class).into_iter().flatten().map(String::as_str)
    }

    /// Brand and category lexicons derived from the corpus.
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut lex = Self::new();
        for &t in &corpus.brand_tokens {
            lex.insert(TermClass::Brand, corpus.vocab.text(&[t]));
        }
        for &t in &corpus.category_tokens {
            lex.insert(TermClass::Category, corpus.vocab.text(&[t]));
        }
        lex
    }

    /// Reads lexicon files, each headed by its class name.
    pub fn load(paths: &[&Path]) -> Result<Self> {
        let mut lex = Self::new();
        for path in paths {
            let (class, tokens) = read_lexicon(path)?;
            let class = TermClass::parse(&class).ok_or_else(|| CoreError::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("unknown term class `{class}`"),
            })?;
            for t in tokens {
                lex.insert(class, t);
            }
        }
        Ok(lex)
    }
}

/// Which classes are mandatory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyTermRule {
    pub mandatory: BTreeSet<TermClass>,
}

impl Default for KeyTermRule {
    fn default() -> Self {
        Self {
            mandatory: [TermClass::Brand, TermClass::Category].into(),
        }
    }
}

impl KeyTermRule {
    pub fn none() -> Self {
        Self {
            mandatory: BTreeSet::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KeyTerm {
    pub class: TermClass,
    pub token: String,
}

impl KeyTerm {
    pub fn new(class: TermClass, token: impl Into<String>) -> Self {
        Self {
            class,
            token: token.into(),
        }
    }

    /// Index term for the structured attribute, e.g. `brand:adidas`.
    pub fn attribute(&self) -> String {
        format!("{}:{}", self.class, self.token)
    }
}

impl fmt::Display for KeyTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.class, self.token)
    }
}

/// Tags each query token and keeps those in mandatory classes.
pub fn extract_key_terms<S: AsRef<str>>(query: &[S], rule: &KeyTermRule, lexicons: &Lexicons) -> BTreeSet<KeyTerm> {
    query
        .iter()
        .filter_map(|t| {
            let class = lexicons.tag(t.as_ref())?;
            rule.mandatory.contains(&class).then(|| KeyTerm::new(class, t.as_ref()))
        })
        .collect()
}

/// Term → ascending item ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InvertedIndex {
    postings: BTreeMap<String, Vec<u32>>,
}

impl InvertedIndex {
    /// Builds postings from `(item id, terms)` documents.
    pub fn build<I, S>(docs: I) -> Self
    where
        I: IntoIterator<Item = (u32, Vec<S>)>,
        S: Into<String>,
    {
        let mut postings: BTreeMap<String, Vec<u32>> = BTreeMap::new();
        for (id, terms) in docs {
            for t in terms {
                postings.entry(t.into()).or_default().push(id);
            }
        }
        for list in postings.values_mut() {
            list.sort_unstable();
            list.dedup();
        }
        Self { postings }
    }

    /// Title tokens plus `brand:` and `category:` attribute terms.
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let v = &corpus.vocab;
        Self::build(corpus.items.iter().map(|it| {
            let mut terms: Vec<String> = it.title_tokens.iter().map(|&t| v.text(&[t])).collect();
            if let Some(&b) = corpus.brand_tokens.get(it.brand as usize) {
                terms.push(format!("brand:{}", v.text(&[b])));
            }
            if let Some(&c) = corpus.category_tokens.get(it.category as usize) {
                terms.push(format!("category:{}", v.text(&[c])));
            }
            (it.item_id, terms)
        }))
    }

    pub fn postings(&self, term: &str) -> &[u32] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, &[u32])> {
        self.postings.iter().map(|(t, p)| (t.as_str(), p.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.postings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.postings.is_empty()
    }

    /// Items satisfying `term`: the structured attribute or the bare token
    /// in the title.
    pub fn matching(&self, term: &KeyTerm) -> Vec<u32> {
        union_sorted(self.postings(&term.attribute()), self.postings(&term.token))
    }

    /// Items satisfying every term; `None` when `terms` is empty.
    pub fn allowed(&self, terms: &BTreeSet<KeyTerm>) -> Option<Vec<u32>> {
        if terms.is_empty() {
            return None;
        }
        let lists: Vec<Vec<u32>> = terms.iter().map(|t| self.matching(t)).collect();
        let refs: Vec<&[u32]> = lists.iter().map(Vec::as_slice).collect();
        Some(intersect_sorted(&refs))
    }
}

pub fn union_sorted(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// k-way merge intersection of ascending lists.
pub fn intersect_sorted(lists: &[&[u32]]) -> Vec<u32> {
    let mut out = Vec::new();
    if lists.is_empty() || lists.iter().any(|l| l.is_empty()) {
        return out;
    }
    let mut pos = vec![0usize; lists.len()];
    'outer: loop {
        let mut target = lists[0][pos[0]];
        let mut agreed = 0;
        let mut k = 0;
        while agreed < lists.len() {
            let l = lists[k];
            while l[pos[k]] < target {
                pos[k] += 1;
                if pos[k] == l.len() {
                    break 'outer;
                }
            }
            if l[pos[k]] == target {
                agreed += 1;
            } else {
                target = l[pos[k]];
                agreed = 1;
            }
            k = (k + 1) % lists.len();
        }
        out.push(target);
        for (p, l) in pos.iter_mut().zip(lists) {
            // every list sits on `target` now
            *p += 1;
            if *p == l.len() {
                break 'outer;
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Filtered {
    pub kept: Vec<Hit>,
    pub dropped: usize,
}

/// Keeps hits whose item satisfies every required term, in input order.
pub fn filter(results: &[Hit], required: &BTreeSet<KeyTerm>, index: &InvertedIndex) -> Filtered {
    let Some(allowed) = index.allowed(required) else {
        return Filtered {
            kept: results.to_vec(),
            dropped: 0,
        };
    };
    let kept: Vec<Hit> = results
        .iter()
        .filter(|h| allowed.binary_search(&h.item_id).is_ok())
        .copied()
        .collect();
    Filtered {
        dropped: results.len() - kept.len(),
        kept,
    }
}

/// Index, lexicons and rule bundled for serving.
#[derive(Clone, Debug)]
pub struct RelevanceFilter {
    pub index: InvertedIndex,
    pub lexicons: Lexicons,
    pub rule: KeyTermRule,
}

impl RelevanceFilter {
    pub fn from_corpus(corpus: &Corpus, rule: KeyTermRule) -> Self {
        Self {
            index: InvertedIndex::from_corpus(corpus),
            lexicons: Lexicons::from_corpus(corpus),
            rule,
        }
    }

    pub fn required<S: AsRef<str>>(&self, query: &[S]) -> BTreeSet<KeyTerm> {
        extract_key_terms(query, &self.rule, &self.lexicons)
    }

    pub fn apply<S: AsRef<str>>(&self, query: &[S], results: &[Hit]) -> Filtered {
        filter(results, &self.required(query), &self.index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intersections() {
        assert_eq!(intersect_sorted(&[&[1, 3, 5, 7], &[3, 4, 5, 7, 9], &[0, 5, 7]]), vec![5, 7]);
        assert_eq!(intersect_sorted(&[&[1, 2, 3]]), vec![1, 2, 3]);
        assert!(intersect_sorted(&[&[1, 2], &[]]).is_empty());
        assert!(intersect_sorted(&[&[1, 2], &[3, 4]]).is_empty());
        assert_eq!(union_sorted(&[1, 4, 6], &[2, 4, 9]), vec![1, 2, 4, 6, 9]);
    }

    #[test]
    fn precedence_table() {
        let lex = Lexicons::new()
            .with(TermClass::Audience, &["kids", "red"])
            .with(TermClass::Style, &["kids", "slim"])
            .with(TermClass::Color, &["red", "slim"])
            .with(TermClass::Category, &["shoes", "red"])
            .with(TermClass::Brand, &["adidas", "shoes"]);
        let table = [
            ("adidas", Some(TermClass::Brand)),
            ("shoes", Some(TermClass::Brand)),
            ("red", Some(TermClass::Category)),
            ("slim", Some(TermClass::Color)),
            ("kids", Some(TermClass::Style)),
            ("running", None),
        ];
        for (tok, want) in table {
            assert_eq!(lex.tag(tok), want, "{tok}");
        }
    }

    #[test]
    fn untagged_tokens_never_required() {
        let lex = Lexicons::new().with(TermClass::Brand, &["adidas"]);
        assert!(extract_key_terms(&["running", "fast"], &KeyTermRule::default(), &lex).is_empty());
        let lex = lex.with(TermClass::Color, &["red"]);
        let got = extract_key_terms(&["red", "adidas"], &KeyTermRule::default(), &lex);
        assert_eq!(got, [KeyTerm::new(TermClass::Brand, "adidas")].into());
    }
}
