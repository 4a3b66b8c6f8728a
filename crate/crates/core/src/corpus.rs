//! Paired style-transfer data: ingestion, rule-based synthesis, splitting
//! and length statistics.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::normalize;

/// One (source, target, style) training pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairExample {
    pub src: String,
    pub trg: String,
    pub style: String,
}

/// The registered style tags.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSet(Vec<String>);

impl Default for TagSet {
    fn default() -> Self {
        TagSet((1..=5).map(|i| format!("D{i}")).collect())
    }
}

impl TagSet {
    pub fn new<S: Into<String>>(tags: impl IntoIterator<Item = S>) -> Self {
        let mut out: Vec<String> = Vec::new();
        for t in tags {
            let t = t.into();
            if !out.contains(&t) {
                out.push(t);
            }
        }
        TagSet(out)
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.0.iter().any(|t| t == tag)
    }

    pub fn tags(&self) -> &[String] {
        &self.0
    }
}

#[derive(Deserialize)]
struct RawRecord {
    src: Option<String>,
    trg: Option<String>,
    style: Option<String>,
}

/// Parses line-delimited JSON pairs. Every invalid line is reported.
pub fn load_pairs(path: &Path, tags: &TagSet) -> Result<Vec<PairExample>> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_pairs(&text, tags).map_err(|problems| Error::Dataset {
        path: path.to_path_buf(),
        problems,
    })
}

pub fn parse_pairs(text: &str, tags: &TagSet) -> std::result::Result<Vec<PairExample>, Vec<String>> {
    let mut pairs = Vec::new();
    let mut problems = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                problems.push(format!("line {lineno}: {e}"));
                continue;
            }
        };
        let mut field = |name: &str, v: Option<String>| -> Option<String> {
            match v {
                None => {
                    problems.push(format!("line {lineno}: missing field `{name}`"));
                    None
                }
                Some(s) if name != "style" && normalize(&s, false).is_empty() => {
                    problems.push(format!("line {lineno}: empty `{name}`"));
                    None
                }
                Some(s) => Some(s),
            }
        };
        let (src, trg, style) = (
            field("src", raw.src),
            field("trg", raw.trg),
            field("style", raw.style),
        );
        let (Some(src), Some(trg), Some(style)) = (src, trg, style) else {
            continue;
        };
        if !tags.contains(&style) {
            problems.push(format!("line {lineno}: unknown style tag {style:?}"));
            continue;
        }
        pairs.push(PairExample { src, trg, style });
    }
    if problems.is_empty() {
        Ok(pairs)
    } else {
        Err(problems)
    }
}

/// Writes records in the same one-object-per-line form `load_pairs` reads.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f =
        fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    f.write_all(&buf)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// A deterministic token-level rewrite: substitutions, insertions before
/// trigger words, and fixed prefix/suffix words.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleRule {
    pub name: String,
    pub substitutions: BTreeMap<String, String>,
    #[serde(default)]
    pub insert_before: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub prefix: Vec<String>,
    #[serde(default)]
    pub suffix: Vec<String>,
}

fn words(list: &str) -> Vec<String> {
    list.split_whitespace().map(str::to_string).collect()
}

const GENDER_PAIRS: &[(&str, &str)] = &[
    ("he", "she"),
    ("him", "her"),
    ("himself", "herself"),
    ("man", "woman"),
    ("men", "women"),
    ("boy", "girl"),
    ("father", "mother"),
    ("brother", "sister"),
    ("son", "daughter"),
    ("uncle", "aunt"),
    ("husband", "wife"),
    ("king", "queen"),
    ("nephew", "niece"),
    ("grandfather", "grandmother"),
    ("gentleman", "lady"),
    ("boyfriend", "girlfriend"),
    ("actor", "actress"),
    ("waiter", "waitress"),
    ("prince", "princess"),
];

impl StyleRule {
    /// Involutive gendered-word swap (pronouns and gendered nouns).
    pub fn pronoun_swap() -> Self {
        let mut substitutions = BTreeMap::new();
        for (m, f) in GENDER_PAIRS {
            substitutions.insert(m.to_string(), f.to_string());
            substitutions.insert(f.to_string(), m.to_string());
        }
        StyleRule {
            name: "d1-analog".into(),
            substitutions,
            ..Default::default()
        }
    }

    /// Stronger adjectival forms with degree modifiers.
    pub fn adjective_shift() -> Self {
        let mut rule = Self::pronoun_swap();
        rule.name = "d2-analog".into();
        for (a, b) in [
            ("big", "huge"),
            ("small", "tiny"),
            ("old", "ancient"),
            ("cold", "freezing"),
            ("warm", "hot"),
            ("cheap", "affordable"),
        ] {
            rule.substitutions.insert(a.into(), b.into());
        }
        for adj in ["new", "red", "heavy", "strange", "quiet", "dark", "long"] {
            rule.insert_before.insert(adj.into(), words("very"));
        }
        rule
    }

    /// More self-referential framing.
    pub fn first_person_framing() -> Self {
        let mut rule = Self::pronoun_swap();
        rule.name = "d3-analog".into();
        rule.prefix = words("personally i feel that");
        rule
    }

    /// Hedged, softened assertions.
    pub fn hedging() -> Self {
        let mut rule = Self::pronoun_swap();
        rule.name = "d4-analog".into();
        rule.prefix = words("i think maybe");
        rule.suffix = words("if that is okay");
        rule
    }

    /// Denser emotional expression.
    pub fn emotion_amplification() -> Self {
        let mut rule = Self::pronoun_swap();
        rule.name = "d5-analog".into();
        for v in ["laughed", "cried", "smiled", "waited", "worked"] {
            rule.insert_before.insert(v.into(), words("emotionally"));
        }
        rule.suffix = words("and felt deeply moved");
        rule
    }

    /// Built-in rule by name (`d1-analog` … `d5-analog`) with its style tag.
    pub fn builtin(name: &str) -> Option<(Self, &'static str)> {
        Some(match name {
            "d1-analog" | "d1" => (Self::pronoun_swap(), "D1"),
            "d2-analog" | "d2" => (Self::adjective_shift(), "D2"),
            "d3-analog" | "d3" => (Self::first_person_framing(), "D3"),
            "d4-analog" | "d4" => (Self::hedging(), "D4"),
            "d5-analog" | "d5" => (Self::emotion_amplification(), "D5"),
            _ => return None,
        })
    }

    /// Substitution-only with a symmetric table, so applying it twice is the
    /// identity.
    pub fn is_involution(&self) -> bool {
        self.insert_before.is_empty()
            && self.prefix.is_empty()
            && self.suffix.is_empty()
            && self
                .substitutions
                .iter()
                .all(|(k, v)| self.substitutions.get(v) == Some(k))
    }

    pub fn is_substitution_only(&self) -> bool {
        self.insert_before.is_empty() && self.prefix.is_empty() && self.suffix.is_empty()
    }

    pub fn map_word<'a>(&'a self, w: &'a str) -> &'a str {
        self.substitutions.get(w).map_or(w, String::as_str)
    }

    pub fn apply(&self, sentence: &str) -> String {
        let mut out: Vec<&str> = self.prefix.iter().map(String::as_str).collect();
        for w in sentence.split_whitespace() {
            if let Some(ins) = self.insert_before.get(w) {
                out.extend(ins.iter().map(String::as_str));
            }
            out.push(self.map_word(w));
        }
        out.extend(self.suffix.iter().map(String::as_str));
        out.join(" ")
    }

    /// Number of tokens in `sentence` that the substitution table rewrites.
    pub fn hits(&self, sentence: &str) -> usize {
        sentence
            .split_whitespace()
            .filter(|w| self.substitutions.contains_key(*w))
            .count()
    }
}

/// Pairs each base sentence with its rule-rewritten target.
pub fn synth_pairs<S: AsRef<str>>(base: &[S], rule: &StyleRule, style: &str) -> Vec<PairExample> {
    base.iter()
        .map(|s| {
            let src = normalize(s.as_ref(), false);
            PairExample {
                trg: rule.apply(&src),
                src,
                style: style.to_string(),
            }
        })
        .collect()
}

const MALE_NOUNS: &[&str] = &[
    "man", "boy", "father", "brother", "son", "uncle", "husband", "king", "nephew",
    "grandfather", "gentleman", "boyfriend", "actor", "waiter", "prince",
];
const PEOPLE: &[&str] = &[
    "teacher", "doctor", "neighbor", "friend", "manager", "driver", "nurse", "student",
    "officer", "child", "baker", "farmer",
];
const OBJECTS: &[&str] = &[
    "book", "car", "letter", "house", "phone", "bike", "cake", "song", "movie", "door",
    "window", "table", "dog", "cat", "ball", "bag", "key", "map", "ticket", "email",
    "report", "picture", "shirt", "gift", "lamp", "chair", "computer", "bill", "boat",
    "camera", "clock", "coat", "cup", "guitar", "hat", "jacket", "ladder", "box",
    "newspaper", "photo", "radio", "ring", "rope", "shoe", "sofa", "umbrella", "wallet",
    "watch",
];
const ADJECTIVES: &[&str] = &[
    "old", "new", "red", "big", "small", "broken", "strange", "beautiful", "heavy", "cheap",
    "expensive", "blue", "green", "quiet", "long", "short", "warm", "cold", "bright", "dark",
];
const VERBS_T: &[&str] = &[
    "found", "bought", "sold", "opened", "closed", "painted", "fixed", "lost", "washed",
    "carried", "read", "wrote", "cleaned", "moved", "watched", "liked", "borrowed", "sent",
    "built", "dropped", "hid", "checked",
];
const VERBS_I: &[&str] = &[
    "walked", "slept", "laughed", "cried", "waited", "worked", "smiled", "ran", "sang",
    "danced", "rested", "travelled",
];
const VERBS_P: &[&str] = &["called", "visited", "helped", "thanked", "met", "invited", "warned"];
const ADVERBS: &[&str] = &["quickly", "slowly", "quietly", "happily", "early", "late", "alone", "again"];
const PLACES: &[&str] = &[
    "kitchen", "station", "river", "park", "office", "school", "market", "garden", "city",
    "lake", "library", "hospital",
];
const PREPS: &[&str] = &["in", "at", "near", "by", "behind"];
const TIMES: &[&str] = &["yesterday", "today", "tonight", "later", "recently"];
const DETS: &[&str] = &["the", "a", "my", "our", "that"];

fn pick<'a, R: Rng>(rng: &mut R, list: &[&'a str]) -> &'a str {
    list.choose(rng).copied().expect("non-empty word list")
}

fn male_subject<R: Rng>(rng: &mut R) -> String {
    if rng.random_bool(0.4) {
        "he".into()
    } else {
        format!("{} {}", pick(rng, &["the", "my", "our"]), pick(rng, MALE_NOUNS))
    }
}

fn object_phrase<R: Rng>(rng: &mut R) -> String {
    if rng.random_bool(0.5) {
        format!("{} {} {}", pick(rng, DETS), pick(rng, ADJECTIVES), pick(rng, OBJECTS))
    } else {
        format!("{} {}", pick(rng, DETS), pick(rng, OBJECTS))
    }
}

fn place_phrase<R: Rng>(rng: &mut R) -> String {
    format!("{} the {}", pick(rng, PREPS), pick(rng, PLACES))
}

/// Male-voiced template sentences of 3–12 words. Every sentence contains at
/// least one word rewritten by [`StyleRule::pronoun_swap`].
pub fn base_sentences(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let subj = male_subject(&mut rng);
            let s = match rng.random_range(0..6) {
                0 => format!("{subj} {} {}", pick(&mut rng, VERBS_T), object_phrase(&mut rng)),
                1 => format!(
                    "{subj} {} {} {}",
                    pick(&mut rng, VERBS_T),
                    object_phrase(&mut rng),
                    place_phrase(&mut rng)
                ),
                2 => format!(
                    "{subj} {} {} {}",
                    pick(&mut rng, VERBS_I),
                    pick(&mut rng, ADVERBS),
                    place_phrase(&mut rng)
                ),
                3 => format!(
                    "the {} {} him {}",
                    pick(&mut rng, PEOPLE),
                    pick(&mut rng, VERBS_P),
                    pick(&mut rng, TIMES)
                ),
                4 => format!(
                    "{subj} told the {} that he {} {}",
                    pick(&mut rng, PEOPLE),
                    pick(&mut rng, VERBS_T),
                    object_phrase(&mut rng)
                ),
                _ => format!(
                    "{subj} {} himself {} {}",
                    pick(&mut rng, &["saw", "hurt", "taught", "blamed"]),
                    pick(&mut rng, ADVERBS),
                    pick(&mut rng, TIMES)
                ),
            };
            s
        })
        .collect()
}

/// Disjoint train/test/validation partition of a corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSet {
    pub train: Vec<PairExample>,
    pub test: Vec<PairExample>,
    pub validation: Vec<PairExample>,
    pub seed: u64,
}

/// Split sizes by largest-remainder rounding; ties go to the earlier split.
pub fn split_sizes(n: usize, ratios: [u32; 3]) -> Result<[usize; 3]> {
    let total: u64 = ratios.iter().map(|&r| r as u64).sum();
    if total == 0 {
        return Err(Error::invalid("split ratios must not all be zero"));
    }
    let mut sizes = [0usize; 3];
    let mut rema = [0u64; 3];
    for i in 0..3 {
        let exact = n as u64 * ratios[i] as u64;
        sizes[i] = (exact / total) as usize;
        rema[i] = exact % total;
    }
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| rema[b].cmp(&rema[a]).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    Ok(sizes)
}

/// Seeded shuffle followed by a ratio partition (default 90/5/5).
pub fn split(pairs: &[PairExample], ratios: [u32; 3], seed: u64) -> Result<SplitSet> {
    let sizes = split_sizes(pairs.len(), ratios)?;
    if sizes.contains(&0) {
        return Err(Error::invalid(format!(
            "{} pairs cannot fill every split with ratios {ratios:?}",
            pairs.len()
        )));
    }
    let mut shuffled = pairs.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let validation = shuffled.split_off(sizes[0] + sizes[1]);
    let test = shuffled.split_off(sizes[0]);
    Ok(SplitSet {
        train: shuffled,
        test,
        validation,
        seed,
    })
}

/// Word-length statistics, rounded to two decimals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub n_pairs: usize,
    pub src_avg_len: f64,
    pub src_std: f64,
    pub trg_avg_len: f64,
    pub trg_std: f64,
}

fn mean_std(lengths: impl Iterator<Item = usize> + Clone) -> (f64, f64) {
    let n = lengths.clone().count() as f64;
    let mean = lengths.clone().map(|l| l as f64).sum::<f64>() / n;
    let var = lengths.map(|l| (l as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

pub fn corpus_stats(pairs: &[PairExample]) -> Result<StatsReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("statistics need at least one pair"));
    }
    let (sm, ss) = mean_std(pairs.iter().map(|p| p.src.split_whitespace().count()));
    let (tm, ts) = mean_std(pairs.iter().map(|p| p.trg.split_whitespace().count()));
    Ok(StatsReport {
        n_pairs: pairs.len(),
        src_avg_len: round2(sm),
        src_std: round2(ss),
        trg_avg_len: round2(tm),
        trg_std: round2(ts),
    })
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>8} {:>12} {:>8} {:>12} {:>8}",
            "#Posts", "Src Avg Len", "Src Std", "Trg Avg Len", "Trg Std"
        )?;
        write!(
            f,
            "{:>8} {:>12.2} {:>8.2} {:>12.2} {:>8.2}",
            self.n_pairs, self.src_avg_len, self.src_std, self.trg_avg_len, self.trg_std
        )
    }
}
