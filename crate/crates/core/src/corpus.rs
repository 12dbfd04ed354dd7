//! Synthetic corpus with planted relevance, and its JSONL file set.
//!
//! Vocabulary layout written by the generator: id 0 is `<unk>`, then one
//! token per first-level category, one per brand, then title words. The
//! `category.lex` and `brand.lex` files list those tokens in attribute-id
//! order, so line `n` of `brand.lex` names brand `n`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::text::{Vocab, UNK};

pub const ITEMS: &str = "items.jsonl";
pub const USERS: &str = "users.jsonl";
pub const CLICKS_TRAIN: &str = "clicks_train.jsonl";
pub const CLICKS_TEST: &str = "clicks_test.jsonl";
pub const PURCHASES_AUX: &str = "purchases_aux.jsonl";
pub const VOCAB: &str = "vocab.txt";
pub const BRAND_LEXICON: &str = "brand.lex";
pub const CATEGORY_LEXICON: &str = "category.lex";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: u32,
    pub title_tokens: Vec<u32>,
    pub category: u32,
    pub leaf_category: u32,
    pub brand: u32,
    pub shop: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Actions {
    #[serde(default)]
    pub click: Vec<u32>,
    #[serde(default)]
    pub buy: Vec<u32>,
    #[serde(default)]
    pub collect: Vec<u32>,
}

impl Actions {
    pub fn lists(&self) -> [&[u32]; 3] {
        [&self.click, &self.buy, &self.collect]
    }

    fn lists_mut(&mut self) -> [&mut Vec<u32>; 3] {
        [&mut self.click, &mut self.buy, &mut self.collect]
    }

    pub fn is_empty(&self) -> bool {
        self.lists().iter().all(|l| l.is_empty())
    }
}

/// Long-term behaviour by attribute. `item` lists item ids; `shop`, `leaf`
/// and `brand` list attribute ids.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LongTerm {
    #[serde(default)]
    pub item: Actions,
    #[serde(default)]
    pub shop: Actions,
    #[serde(default)]
    pub leaf: Actions,
    #[serde(default)]
    pub brand: Actions,
}

impl LongTerm {
    pub fn is_empty(&self) -> bool {
        self.item.is_empty() && self.shop.is_empty() && self.leaf.is_empty() && self.brand.is_empty()
    }
}

/// Behaviour sequences are ordered oldest first.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserLog {
    pub user_id: u32,
    #[serde(default)]
    pub realtime_seq: Vec<u32>,
    #[serde(default)]
    pub short_seq: Vec<u32>,
    #[serde(default)]
    pub long_attr_seqs: LongTerm,
    #[serde(default)]
    pub historical_queries: Vec<Vec<u32>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relevance {
    Good,
    Bad,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickRecord {
    pub user_id: u32,
    pub query_tokens: Vec<u32>,
    pub clicked_item_id: u32,
    pub timestamp: u64,
    pub relevance_label: Relevance,
}

/// A purchase made outside search that is relevant to a logged query.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxPurchase {
    pub user_id: u32,
    pub query_tokens: Vec<u32>,
    pub item_id: u32,
}

/// Sequence length caps applied on load (oldest entries dropped).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeqCaps {
    pub realtime: usize,
    pub short: usize,
    pub long: usize,
    pub history: usize,
}

impl Default for SeqCaps {
    fn default() -> Self {
        Self {
            realtime: 50,
            short: 100,
            long: 100,
            history: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_items: usize,
    pub n_users: usize,
    /// Total click records, split into train and test.
    pub n_queries: usize,
    pub vocab_size: usize,
    pub n_categories: usize,
    pub n_brands: usize,
    pub noise_rate: f64,
    pub seed: u64,
    pub leaves_per_category: usize,
    pub n_shops: usize,
    pub title_len: (usize, usize),
    /// Fraction of title words drawn from the item's leaf-category pool.
    pub leaf_word_share: f64,
    pub brand_in_title: f64,
    pub test_fraction: f64,
    /// Chance that a user's behaviour or query targets a preferred category.
    pub preference_strength: f64,
    pub caps: SeqCaps,
    /// Expected long-term list length per action, as a fraction of `caps.long`.
    pub action_rates: (f64, f64, f64),
    /// Chance that a test click gets an extra relevant purchase record.
    pub aux_rate: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_items: 10_000,
            n_users: 2_000,
            n_queries: 40_000,
            vocab_size: 3_000,
            n_categories: 20,
            n_brands: 100,
            noise_rate: 0.1,
            seed: 1,
            leaves_per_category: 5,
            n_shops: 300,
            title_len: (4, 8),
            leaf_word_share: 0.7,
            brand_in_title: 0.5,
            test_fraction: 0.1,
            preference_strength: 0.85,
            caps: SeqCaps::default(),
            action_rates: (0.6, 0.1, 0.2),
            aux_rate: 0.3,
        }
    }
}

impl GeneratorConfig {
    pub fn n_leaves(&self) -> usize {
        self.n_categories * self.leaves_per_category
    }

    fn n_words(&self) -> usize {
        self.vocab_size.saturating_sub(1 + self.n_categories + self.n_brands)
    }

    fn generic_pool(&self) -> usize {
        (self.n_words() / 10).max(self.title_len.1)
    }

    fn leaf_pool(&self) -> usize {
        self.n_words().saturating_sub(self.generic_pool()) / self.n_leaves().max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_items", self.n_items),
            ("n_users", self.n_users),
            ("n_queries", self.n_queries),
            ("n_categories", self.n_categories),
            ("n_brands", self.n_brands),
            ("leaves_per_category", self.leaves_per_category),
            ("n_shops", self.n_shops),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(CoreError::Config(format!("{name} must be at least 1")));
            }
        }
        for (name, p) in [
            ("noise_rate", self.noise_rate),
            ("leaf_word_share", self.leaf_word_share),
            ("brand_in_title", self.brand_in_title),
            ("test_fraction", self.test_fraction),
            ("preference_strength", self.preference_strength),
            ("aux_rate", self.aux_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(CoreError::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if self.title_len.0 == 0 || self.title_len.0 > self.title_len.1 {
            return Err(CoreError::Config(format!("bad title_len {:?}", self.title_len)));
        }
        if self.n_categories < 2 && self.noise_rate > 0.0 {
            return Err(CoreError::Config("noisy clicks need at least two categories".into()));
        }
        if self.leaf_pool() < self.title_len.1 {
            let need = 1 + self.n_categories + self.n_brands + self.title_len.1 * (self.n_leaves() + 1);
            return Err(CoreError::Config(format!(
                "vocab_size {} too small to form distinct categories; need at least {need}",
                self.vocab_size
            )));
        }
        Ok(())
    }
}

/// Ground-truth relevance: the query names the item's category and shares at
/// least one title token with it.
pub fn is_good(query: &[u32], item: &Item, category_tokens: &[u32]) -> bool {
    let cat = category_tokens.get(item.category as usize);
    cat.is_some_and(|c| query.contains(c)) && item.title_tokens.iter().any(|t| query.contains(t))
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub vocab: Vocab,
    pub items: Vec<Item>,
    pub users: Vec<UserLog>,
    pub clicks_train: Vec<ClickRecord>,
    pub clicks_test: Vec<ClickRecord>,
    pub purchases_aux: Vec<AuxPurchase>,
    /// Token id of each first-level category.
    pub category_tokens: Vec<u32>,
    /// Token id of each brand.
    pub brand_tokens: Vec<u32>,
    user_index: HashMap<u32, usize>,
}

/// Attribute-table sizes implied by a corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CatalogDims {
    pub n_items: usize,
    pub n_categories: usize,
    pub n_leaves: usize,
    pub n_brands: usize,
    pub n_shops: usize,
}

impl Corpus {
    /// Assembles and validates a corpus. Sequences longer than `caps` are
    /// truncated from the oldest end.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        vocab: Vocab,
        items: Vec<Item>,
        mut users: Vec<UserLog>,
        clicks_train: Vec<ClickRecord>,
        clicks_test: Vec<ClickRecord>,
        purchases_aux: Vec<AuxPurchase>,
        category_tokens: Vec<u32>,
        brand_tokens: Vec<u32>,
        caps: SeqCaps,
    ) -> Result<Self> {
        for u in &mut users {
            truncate_oldest(&mut u.realtime_seq, caps.realtime);
            truncate_oldest(&mut u.short_seq, caps.short);
            let lt = &mut u.long_attr_seqs;
            for a in [&mut lt.item, &mut lt.shop, &mut lt.leaf, &mut lt.brand] {
                for l in a.lists_mut() {
                    truncate_oldest(l, caps.long);
                }
            }
            truncate_oldest(&mut u.historical_queries, caps.history);
        }
        let user_index = users.iter().enumerate().map(|(i, u)| (u.user_id, i)).collect();
        let corpus = Self {
            vocab,
            items,
            users,
            clicks_train,
            clicks_test,
            purchases_aux,
            category_tokens,
            brand_tokens,
            user_index,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn dims(&self) -> CatalogDims {
        let max = |f: fn(&Item) -> u32| self.items.iter().map(|i| f(i) as usize + 1).max().unwrap_or(0);
        CatalogDims {
            n_items: self.items.len(),
            n_categories: self.category_tokens.len(),
            n_leaves: max(|i| i.leaf_category),
            n_brands: self.brand_tokens.len(),
            n_shops: max(|i| i.shop),
        }
    }

    pub fn user(&self, user_id: u32) -> Option<&UserLog> {
        self.user_index.get(&user_id).map(|&i| &self.users[i])
    }

    pub fn item(&self, item_id: u32) -> Option<&Item> {
        self.items.get(item_id as usize)
    }

    pub fn is_good(&self, query: &[u32], item_id: u32) -> Option<bool> {
        self.item(item_id).map(|it| is_good(query, it, &self.category_tokens))
    }

    /// Extra relevant purchases keyed by `(user_id, query tokens)`.
    pub fn aux_targets(&self) -> BTreeMap<(u32, Vec<u32>), BTreeSet<u32>> {
        let mut out: BTreeMap<(u32, Vec<u32>), BTreeSet<u32>> = BTreeMap::new();
        for p in &self.purchases_aux {
            out.entry((p.user_id, p.query_tokens.clone())).or_default().insert(p.item_id);
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let n_items = self.items.len();
        let vocab = self.vocab.len();
        let item = |id: u32| {
            if (id as usize) < n_items {
                Ok(())
            } else {
                Err(CoreError::Dangling {
                    kind: "item",
                    id: id as u64,
                })
            }
        };
        let tokens = |ts: &[u32]| -> Result<()> {
            match ts.iter().find(|&&t| t as usize >= vocab) {
                Some(&t) => Err(CoreError::Dangling {
                    kind: "token",
                    id: t as u64,
                }),
                None => Ok(()),
            }
        };
        tokens(&self.category_tokens)?;
        tokens(&self.brand_tokens)?;
        let dims = self.dims();
        for (pos, it) in self.items.iter().enumerate() {
            if it.item_id as usize != pos {
                return Err(CoreError::Data(format!(
                    "item ids must be 0..{n_items} in order; found {} at position {pos}",
                    it.item_id
                )));
            }
            if it.title_tokens.is_empty() {
                return Err(CoreError::Data(format!("item {} has an empty title", it.item_id)));
            }
            tokens(&it.title_tokens)?;
            if it.category as usize >= dims.n_categories {
                return Err(CoreError::Dangling {
                    kind: "category",
                    id: it.category as u64,
                });
            }
            if it.brand as usize >= dims.n_brands {
                return Err(CoreError::Dangling {
                    kind: "brand",
                    id: it.brand as u64,
                });
            }
        }
        if self.user_index.len() != self.users.len() {
            return Err(CoreError::Data("duplicate user ids".into()));
        }
        let check_attr = |kind: &'static str, ids: &[u32], bound: usize| -> Result<()> {
            match ids.iter().find(|&&i| i as usize >= bound) {
                Some(&i) => Err(CoreError::Dangling { kind, id: i as u64 }),
                None => Ok(()),
            }
        };
        for u in &self.users {
            u.realtime_seq.iter().chain(&u.short_seq).try_for_each(|&i| item(i))?;
            let lt = &u.long_attr_seqs;
            for l in lt.item.lists() {
                l.iter().try_for_each(|&i| item(i))?;
            }
            for l in lt.shop.lists() {
                check_attr("shop", l, dims.n_shops)?;
            }
            for l in lt.leaf.lists() {
                check_attr("leaf category", l, dims.n_leaves)?;
            }
            for l in lt.brand.lists() {
                check_attr("brand", l, dims.n_brands)?;
            }
            for q in &u.historical_queries {
                tokens(q)?;
            }
        }
        let user = |id: u32| {
            if self.user_index.contains_key(&id) {
                Ok(())
            } else {
                Err(CoreError::Dangling {
                    kind: "user",
                    id: id as u64,
                })
            }
        };
        for c in self.clicks_train.iter().chain(&self.clicks_test) {
            user(c.user_id)?;
            item(c.clicked_item_id)?;
            tokens(&c.query_tokens)?;
            if c.query_tokens.is_empty() {
                return Err(CoreError::Data(format!("click at {} has an empty query", c.timestamp)));
            }
        }
        for p in &self.purchases_aux {
            user(p.user_id)?;
            item(p.item_id)?;
            tokens(&p.query_tokens)?;
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(CoreError::file(dir))?;
        write_jsonl(&dir.join(ITEMS), &self.items)?;
        write_jsonl(&dir.join(USERS), &self.users)?;
        write_jsonl(&dir.join(CLICKS_TRAIN), &self.clicks_train)?;
        write_jsonl(&dir.join(CLICKS_TEST), &self.clicks_test)?;
        write_jsonl(&dir.join(PURCHASES_AUX), &self.purchases_aux)?;
        self.vocab.write(&dir.join(VOCAB))?;
        write_lexicon(&dir.join(CATEGORY_LEXICON), "category", &self.category_tokens, &self.vocab)?;
        write_lexicon(&dir.join(BRAND_LEXICON), "brand", &self.brand_tokens, &self.vocab)?;
        Ok(())
    }

    pub fn load(dir: &Path, caps: SeqCaps) -> Result<Self> {
        let vocab = Vocab::read(&dir.join(VOCAB))?;
        let category_tokens = read_lexicon_ids(&dir.join(CATEGORY_LEXICON), "category", &vocab)?;
        let brand_tokens = read_lexicon_ids(&dir.join(BRAND_LEXICON), "brand", &vocab)?;
        Self::new(
            vocab,
            read_jsonl(&dir.join(ITEMS))?,
            read_jsonl(&dir.join(USERS))?,
            read_jsonl(&dir.join(CLICKS_TRAIN))?,
            read_jsonl(&dir.join(CLICKS_TEST))?,
            read_jsonl(&dir.join(PURCHASES_AUX))?,
            category_tokens,
            brand_tokens,
            caps,
        )
    }
}

fn truncate_oldest<T>(v: &mut Vec<T>, cap: usize) {
    if v.len() > cap {
        v.drain(..v.len() - cap);
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(CoreError::file(path))?);
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(|e| CoreError::Data(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one JSON object per line; blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let r = BufReader::new(File::open(path).map_err(CoreError::file(path))?);
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(CoreError::file(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CoreError::Parse {
            path: path.to_owned(),
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Lexicon file: class name on the first line, then one token per line.
pub fn write_lexicon(path: &Path, class: &str, ids: &[u32], vocab: &Vocab) -> Result<()> {
    let mut s = format!("{class}\n");
    for &id in ids {
        s.push_str(vocab.token(id).unwrap_or(UNK));
        s.push('\n');
    }
    std::fs::write(path, s).map_err(CoreError::file(path))
}

pub fn read_lexicon(path: &Path) -> Result<(String, Vec<String>)> {
    let s = std::fs::read_to_string(path).map_err(CoreError::file(path))?;
    let mut lines = s.lines();
    let class = lines
        .next()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .ok_or_else(|| CoreError::Parse {
            path: path.to_owned(),
            line: 1,
            message: "missing class header".into(),
        })?;
    let tokens = lines.map(|l| l.trim().to_lowercase()).filter(|l| !l.is_empty()).collect();
    Ok((class, tokens))
}

fn read_lexicon_ids(path: &Path, class: &str, vocab: &Vocab) -> Result<Vec<u32>> {
    let (found, tokens) = read_lexicon(path)?;
    if found != class {
        return Err(CoreError::Data(format!(
            "{}: expected class {class}, found {found}",
            path.display()
        )));
    }
    tokens
        .iter()
        .map(|t| match vocab.id(t) {
            0 => Err(CoreError::Data(format!("{}: token {t:?} not in vocab", path.display()))),
            id => Ok(id),
        })
        .collect()
}

/// Pronounceable token for word index `i`: base-16 digits spelled as
/// syllables, at least two syllables long.
fn word(i: usize) -> String {
    const SYL: [&str; 16] = [
        "ka", "ve", "ri", "mo", "lu", "sa", "te", "no", "pi", "da", "go", "be", "zu", "fe", "ho", "ji",
    ];
    let mut digits = Vec::new();
    let mut n = i;
    loop {
        digits.push(n % 16);
        n /= 16;
        if n == 0 {
            break;
        }
    }
    while digits.len() < 2 {
        digits.push(0);
    }
    digits.iter().rev().map(|&d| SYL[d]).collect()
}

/// Generates a corpus. Output depends only on `config`.
pub fn generate(config: &GeneratorConfig) -> Result<Corpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let c = config;

    // vocabulary
    let mut tokens = vec![UNK.to_string()];
    tokens.extend((1..c.vocab_size).map(word));
    let vocab = Vocab::new(tokens)?;
    let category_tokens: Vec<u32> = (0..c.n_categories).map(|i| 1 + i as u32).collect();
    let brand_tokens: Vec<u32> = (0..c.n_brands).map(|i| 1 + (c.n_categories + i) as u32).collect();
    let first_word = 1 + c.n_categories + c.n_brands;
    let generic: Vec<u32> = (first_word..first_word + c.generic_pool()).map(|t| t as u32).collect();
    let leaf_pool = c.leaf_pool();
    let leaf_words = |leaf: usize| -> Vec<u32> {
        let start = first_word + c.generic_pool() + leaf * leaf_pool;
        (start..start + leaf_pool).map(|t| t as u32).collect()
    };

    // items
    let mut items = Vec::with_capacity(c.n_items);
    for id in 0..c.n_items {
        let leaf = rng.random_range(0..c.n_leaves());
        let category = leaf / c.leaves_per_category;
        let brand = rng.random_range(0..c.n_brands);
        let shop = rng.random_range(0..c.n_shops);
        let len = rng.random_range(c.title_len.0..=c.title_len.1);
        let n_leaf = ((len as f64 * c.leaf_word_share).round() as usize).min(len);
        let mut title: Vec<u32> = Vec::with_capacity(len + 1);
        if rng.random_bool(c.brand_in_title) {
            title.push(brand_tokens[brand]);
        }
        title.extend(leaf_words(leaf).choose_multiple(&mut rng, n_leaf).copied());
        title.extend(generic.choose_multiple(&mut rng, len - n_leaf).copied());
        items.push(Item {
            item_id: id as u32,
            title_tokens: title,
            category: category as u32,
            leaf_category: leaf as u32,
            brand: brand as u32,
            shop: shop as u32,
        });
    }
    let mut by_category: Vec<Vec<u32>> = vec![Vec::new(); c.n_categories];
    let mut by_cat_brand: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
    for it in &items {
        by_category[it.category as usize].push(it.item_id);
        by_cat_brand.entry((it.category, it.brand)).or_default().push(it.item_id);
    }

    // user preferences
    struct Prefs {
        categories: Vec<u32>,
        brands: Vec<u32>,
    }
    let prefs: Vec<Prefs> = (0..c.n_users)
        .map(|_| {
            let n_cat = 2.min(c.n_categories);
            let categories = rand::seq::index::sample(&mut rng, c.n_categories, n_cat)
                .into_iter()
                .map(|x| x as u32)
                .collect();
            let brands = rand::seq::index::sample(&mut rng, c.n_brands, 3.min(c.n_brands))
                .into_iter()
                .map(|x| x as u32)
                .collect();
            Prefs { categories, brands }
        })
        .collect();

    let sample_item = |rng: &mut ChaCha8Rng, p: &Prefs| -> u32 {
        let cat = if rng.random_bool(c.preference_strength) {
            *p.categories.choose(rng).unwrap()
        } else {
            rng.random_range(0..c.n_categories) as u32
        };
        if rng.random_bool(0.5) {
            let brand = *p.brands.choose(rng).unwrap();
            if let Some(pool) = by_cat_brand.get(&(cat, brand)) {
                return *pool.choose(rng).unwrap();
            }
        }
        match by_category[cat as usize].choose(rng) {
            Some(&i) => i,
            None => rng.random_range(0..c.n_items) as u32,
        }
    };
    // 1–4 title tokens (mostly 1–2) plus the category token
    let make_query = |rng: &mut ChaCha8Rng, item: &Item| -> Vec<u32> {
        let r: f64 = rng.random();
        let want = if r < 0.45 {
            1
        } else if r < 0.8 {
            2
        } else if r < 0.95 {
            3
        } else {
            4
        };
        let mut q: Vec<u32> = item
            .title_tokens
            .choose_multiple(rng, want.min(item.title_tokens.len()))
            .copied()
            .collect();
        q.push(category_tokens[item.category as usize]);
        q
    };

    let mut users = Vec::with_capacity(c.n_users);
    for (uid, p) in prefs.iter().enumerate() {
        let long_len = |rng: &mut ChaCha8Rng, rate: f64| {
            let mean = rate * c.caps.long as f64;
            rng.random_range(0..=((2.0 * mean).round() as usize).min(c.caps.long))
        };
        let mut lt = LongTerm::default();
        let rates = [c.action_rates.0, c.action_rates.1, c.action_rates.2];
        for (a, rate) in rates.into_iter().enumerate() {
            let n = long_len(&mut rng, rate);
            let picked: Vec<u32> = (0..n).map(|_| sample_item(&mut rng, p)).collect();
            *lt.item.lists_mut()[a] = picked.clone();
            *lt.shop.lists_mut()[a] = picked.iter().map(|&i| items[i as usize].shop).collect();
            *lt.leaf.lists_mut()[a] = picked.iter().map(|&i| items[i as usize].leaf_category).collect();
            *lt.brand.lists_mut()[a] = picked.iter().map(|&i| items[i as usize].brand).collect();
        }
        let n_short = rng.random_range(0..=c.caps.short);
        let short_seq = (0..n_short).map(|_| sample_item(&mut rng, p)).collect();
        let n_rt = rng.random_range(0..=c.caps.realtime);
        let realtime_seq = (0..n_rt).map(|_| sample_item(&mut rng, p)).collect();
        let n_hist = rng.random_range(0..=c.caps.history);
        let historical_queries = (0..n_hist)
            .map(|_| {
                let it = sample_item(&mut rng, p);
                make_query(&mut rng, &items[it as usize])
            })
            .collect();
        users.push(UserLog {
            user_id: uid as u32,
            realtime_seq,
            short_seq,
            long_attr_seqs: lt,
            historical_queries,
        });
    }

    // clicks, in time order; the newest fraction is held out for test
    let mut clicks = Vec::with_capacity(c.n_queries);
    for t in 0..c.n_queries {
        let uid = rng.random_range(0..c.n_users);
        let target = &items[sample_item(&mut rng, &prefs[uid]) as usize];
        let query = make_query(&mut rng, target);
        let clicked = if c.noise_rate > 0.0 && rng.random_bool(c.noise_rate) {
            loop {
                let other = rng.random_range(0..c.n_items);
                if items[other].category != target.category {
                    break other as u32;
                }
            }
        } else {
            target.item_id
        };
        let label = if is_good(&query, &items[clicked as usize], &category_tokens) {
            Relevance::Good
        } else {
            Relevance::Bad
        };
        clicks.push(ClickRecord {
            user_id: uid as u32,
            query_tokens: query,
            clicked_item_id: clicked,
            timestamp: t as u64,
            relevance_label: label,
        });
    }
    let n_test = ((c.n_queries as f64) * c.test_fraction).round() as usize;
    let clicks_test = clicks.split_off(c.n_queries - n_test);

    let mut purchases_aux = Vec::new();
    for click in &clicks_test {
        if !rng.random_bool(c.aux_rate) {
            continue;
        }
        let Some(cat) = click
            .query_tokens
            .iter()
            .find_map(|t| category_tokens.iter().position(|c| c == t))
        else {
            continue;
        };
        let p = &prefs[click.user_id as usize];
        let mut relevant: Vec<u32> = by_category[cat]
            .iter()
            .copied()
            .filter(|&i| i != click.clicked_item_id && is_good(&click.query_tokens, &items[i as usize], &category_tokens))
            .collect();
        let preferred: Vec<u32> = relevant
            .iter()
            .copied()
            .filter(|&i| p.brands.contains(&items[i as usize].brand))
            .collect();
        if !preferred.is_empty() {
            relevant = preferred;
        }
        if let Some(&item_id) = relevant.choose(&mut rng) {
            purchases_aux.push(AuxPurchase {
                user_id: click.user_id,
                query_tokens: click.query_tokens.clone(),
                item_id,
            });
        }
    }

    Corpus::new(
        vocab,
        items,
        users,
        clicks,
        clicks_test,
        purchases_aux,
        category_tokens,
        brand_tokens,
        c.caps,
    )
}
