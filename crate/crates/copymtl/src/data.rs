//! Dataset parsing, vocabularies, BIO tag derivation, decoder targets,
//! and a seeded synthetic corpus generator.
//!
//! The on-disk format is JSONL, one object per line:
//!
//! ```json
//! {"tokens": ["mark", "lives", "in", "oslo"],
//!  "triplets": [{"relation": "lives_in", "head": [0, 0], "tail": [3, 3]}]}
//! ```
//!
//! Spans are inclusive token index pairs `[start, end]`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::tagger::Tag;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const GO: usize = 2;
pub const RESERVED: [&str; 3] = ["<pad>", "<unk>", "<go>"];

/// Inclusive token-index span.
pub type Span = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub relation: String,
    pub head: Span,
    pub tail: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub tokens: Vec<String>,
    pub triplets: Vec<Triplet>,
}

impl Instance {
    /// Union of all entity spans over the instance's triplets.
    pub fn entity_spans(&self) -> BTreeSet<Span> {
        self.triplets
            .iter()
            .flat_map(|t| [t.head, t.tail])
            .collect()
    }
}

// ── Vocabularies ─────────────────────────────────────────────────────

/// Token vocabulary with reserved PAD(0) / UNK(1) / GO(2) entries.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..3] != RESERVED.map(String::from) {
            return Err(Error::invalid("vocab must start with <pad>, <unk>, <go>"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate vocab token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        *self.index.get(token).unwrap_or(&UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

/// Relation label set with a stable (lexicographic) id assignment.
#[derive(Debug, Clone)]
pub struct Relations {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl Relations {
    pub fn from_labels(mut labels: Vec<String>) -> Self {
        labels.sort();
        labels.dedup();
        let index = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        Relations { labels, index }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    /// Number of relation ids, i.e. the NA slot index in relation logits.
    pub fn na_index(&self) -> usize {
        self.labels.len()
    }
}

/// Frequency-based vocabulary: tokens with count >= `min_count`, ordered
/// by frequency descending then lexicographic, after the reserved ids.
pub fn build_vocab(instances: &[Instance], min_count: usize) -> Vocab {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for inst in instances {
        for tok in &inst.tokens {
            *counts.entry(tok.as_str()).or_insert(0) += 1;
        }
    }
    let mut entries: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count)
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    tokens.extend(entries.into_iter().map(|(t, _)| t.to_string()));
    Vocab::from_tokens(tokens).expect("reserved prefix present")
}

/// All relation labels appearing in the corpus.
pub fn build_relations(instances: &[Instance]) -> Relations {
    Relations::from_labels(
        instances
            .iter()
            .flat_map(|i| i.triplets.iter().map(|t| t.relation.clone()))
            .collect(),
    )
}

// ── JSONL parsing ────────────────────────────────────────────────────

fn validate_instance(inst: &Instance, line: usize) -> Result<()> {
    let n = inst.tokens.len();
    if n == 0 {
        return Err(Error::data(line, "empty token list"));
    }
    for t in &inst.triplets {
        for (label, span) in [("head", t.head), ("tail", t.tail)] {
            if span.0 > span.1 || span.1 >= n {
                return Err(Error::data(
                    line,
                    format!(
                        "{label} span [{}, {}] out of range for {n} tokens",
                        span.0, span.1
                    ),
                ));
            }
        }
    }
    Ok(())
}

/// Parse JSONL instances from any reader; errors carry 1-based line
/// numbers. Blank lines are skipped.
pub fn parse_reader<R: BufRead>(reader: R) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: Instance = serde_json::from_str(&line)
            .map_err(|e| Error::data(line_no, format!("bad JSON: {e}")))?;
        validate_instance(&inst, line_no)?;
        out.push(inst);
    }
    Ok(out)
}

pub fn parse_dataset(path: &Path) -> Result<Vec<Instance>> {
    let file = File::open(path)?;
    parse_reader(BufReader::new(file))
}

pub fn write_dataset(path: &Path, instances: &[Instance]) -> Result<()> {
    let mut file = File::create(path)?;
    for inst in instances {
        serde_json::to_writer(&mut file, inst)
            .map_err(|e| Error::data(0, format!("serialize: {e}")))?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

// ── BIO derivation ───────────────────────────────────────────────────

/// BIO tags from the union of triplet entity spans: B at each span
/// start, I inside, O elsewhere. When two overlapping spans disagree,
/// the longer one wins (ties: the earlier one).
pub fn derive_bio(n: usize, spans: &BTreeSet<Span>) -> Vec<Tag> {
    let mut tags = vec![Tag::O; n];
    let mut claimed = vec![false; n];
    let mut ordered: Vec<Span> = spans.iter().cloned().collect();
    ordered.sort_by(|a, b| {
        let len_a = a.1 - a.0;
        let len_b = b.1 - b.0;
        len_b.cmp(&len_a).then(a.0.cmp(&b.0))
    });
    for (s, e) in ordered {
        if (s..=e).any(|i| claimed[i]) {
            continue; // conflicting overlap: the longer span already won
        }
        tags[s] = Tag::B;
        for tag in tags.iter_mut().take(e + 1).skip(s + 1) {
            *tag = Tag::I;
        }
        for c in claimed.iter_mut().take(e + 1).skip(s) {
            *c = true;
        }
    }
    tags
}

/// Spans reconstructed from a BIO sequence (B opens, I extends, O
/// closes; an I with no open span opens one).
pub fn spans_from_tags(tags: &[Tag]) -> BTreeSet<Span> {
    let mut out = BTreeSet::new();
    let mut open: Option<Span> = None;
    for (i, tag) in tags.iter().enumerate() {
        match tag {
            Tag::B => {
                if let Some(span) = open.take() {
                    out.insert(span);
                }
                open = Some((i, i));
            }
            Tag::I => match &mut open {
                Some(span) => span.1 = i,
                None => open = Some((i, i)),
            },
            Tag::O => {
                if let Some(span) = open.take() {
                    out.insert(span);
                }
            }
        }
    }
    if let Some(span) = open {
        out.insert(span);
    }
    out
}

// ── Decoder targets ──────────────────────────────────────────────────

/// One decoder supervision slot; `None` throughout for NA padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TargetTriplet {
    pub relation: Option<usize>,
    pub head: Option<usize>,
    pub tail: Option<usize>,
}

impl TargetTriplet {
    pub const NA: TargetTriplet = TargetTriplet {
        relation: None,
        head: None,
        tail: None,
    };
}

/// Flattened decoder supervision: exactly `T` slots of
/// (relation, head last token, tail last token), NA-padded, real slots
/// first, sorted by (head end, tail end, relation id).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetSequence {
    slots: Vec<TargetTriplet>,
}

impl TargetSequence {
    pub fn slots(&self) -> &[TargetTriplet] {
        &self.slots
    }

    pub fn len_symbols(&self) -> usize {
        self.slots.len() * 3
    }

    pub fn real_count(&self) -> usize {
        self.slots.iter().filter(|s| s.relation.is_some()).count()
    }
}

/// Build the decoder target for an instance. Pointers are each span's
/// LAST token; instances with more than `t_max` triplets keep the first
/// `t_max` in sort order (the `bool` reports truncation).
pub fn build_target(
    instance: &Instance,
    relations: &Relations,
    t_max: usize,
) -> Result<(TargetSequence, bool)> {
    let mut keyed: Vec<(usize, usize, usize)> = Vec::with_capacity(instance.triplets.len());
    for t in &instance.triplets {
        let rel = relations.id(&t.relation).ok_or_else(|| {
            Error::invalid(format!("relation {:?} not in relation vocabulary", t.relation))
        })?;
        keyed.push((t.head.1, t.tail.1, rel));
    }
    keyed.sort();
    keyed.dedup();
    let truncated = keyed.len() > t_max;
    keyed.truncate(t_max);
    let mut slots: Vec<TargetTriplet> = keyed
        .into_iter()
        .map(|(h, t, r)| TargetTriplet {
            relation: Some(r),
            head: Some(h),
            tail: Some(t),
        })
        .collect();
    slots.resize(t_max, TargetTriplet::NA);
    Ok((TargetSequence { slots }, truncated))
}

/// An instance with everything the model consumes precomputed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub instance: Instance,
    pub token_ids: Vec<usize>,
    pub tags: Vec<Tag>,
    pub target: TargetSequence,
    /// True when the instance had more triplets than the target holds.
    pub truncated: bool,
}

pub fn prepare(
    instance: &Instance,
    vocab: &Vocab,
    relations: &Relations,
    t_max: usize,
) -> Result<Prepared> {
    let token_ids = vocab.encode(&instance.tokens);
    let tags = derive_bio(instance.tokens.len(), &instance.entity_spans());
    let (target, truncated) = build_target(instance, relations, t_max)?;
    Ok(Prepared {
        instance: instance.clone(),
        token_ids,
        tags,
        target,
        truncated,
    })
}

// ── Synthetic corpus generator ───────────────────────────────────────

/// Configuration for the synthetic corpus generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_sentences: usize,
    pub vocab_size: usize,
    pub relation_count: usize,
    pub max_triplets: usize,
    /// Fraction of entities spanning two tokens.
    pub multi_token_fraction: f64,
    /// For sentences with several triplets, the chance that a triplet
    /// reuses an entity already placed by an earlier triplet.
    pub overlap_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            num_sentences: 500,
            vocab_size: 200,
            relation_count: 4,
            max_triplets: 3,
            multi_token_fraction: 0.0,
            overlap_fraction: 0.3,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.num_sentences == 0
            || self.vocab_size < 16
            || self.relation_count == 0
            || self.max_triplets == 0
        {
            return Err(Error::invalid("synth config: counts must be positive (vocab >= 16)"));
        }
        if !(0.0..=1.0).contains(&self.multi_token_fraction)
            || !(0.0..=1.0).contains(&self.overlap_fraction)
        {
            return Err(Error::invalid("synth config: fractions must be in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub train: Vec<Instance>,
    pub test: Vec<Instance>,
}

/// Deterministic templated corpus. Each sentence interleaves entity
/// mentions with per-relation trigger tokens and filler noise; a triplet
/// contributes "<head> <trigger> <tail>" (heads precede their tails),
/// and overlapping triplets reuse a previously placed entity. Every 5th
/// sentence goes to the test split.
pub fn synth_generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let mut rng = Rng::new(config.seed);

    // token pools: triggers (one per relation), entity prefixes (first
    // token of two-token entities, like "new" in "new york"), entity
    // bases, fillers
    let trigger: Vec<String> = (0..config.relation_count)
        .map(|r| format!("t{r:02}"))
        .collect();
    let remaining = config.vocab_size.saturating_sub(config.relation_count);
    let prefix_count = (remaining / 16).clamp(4, 16);
    let entity_count = ((remaining - prefix_count) / 2).max(8);
    let filler_count = (remaining - prefix_count - entity_count).max(4);
    let prefixes: Vec<String> = (0..prefix_count).map(|p| format!("p{p:02}")).collect();
    let entities: Vec<String> = (0..entity_count).map(|e| format!("e{e:03}")).collect();
    let fillers: Vec<String> = (0..filler_count).map(|f| format!("f{f:03}")).collect();

    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut relation_counter = 0usize;
    for idx in 0..config.num_sentences {
        let inst = synth_sentence(
            config,
            &mut rng,
            &trigger,
            &prefixes,
            &entities,
            &fillers,
            &mut relation_counter,
        );
        if idx % 5 == 4 {
            test.push(inst);
        } else {
            train.push(inst);
        }
    }
    Ok(SynthCorpus { train, test })
}

/// Replace the generic relation labels with the given list (by id).
pub fn relabel(corpus: &mut SynthCorpus, labels: &[String]) {
    let fix = |insts: &mut Vec<Instance>| {
        for inst in insts {
            for t in &mut inst.triplets {
                let idx: usize = t.relation[1..].parse().expect("generic label rNN");
                t.relation = labels[idx].clone();
            }
        }
    };
    fix(&mut corpus.train);
    fix(&mut corpus.test);
}

/// Freebase-path style relation labels (NYT flavor).
pub fn nyt_style_labels(count: usize) -> Vec<String> {
    const BASE: [&str; 24] = [
        "/people/person/place_of_birth",
        "/people/person/nationality",
        "/people/person/place_lived",
        "/people/person/children",
        "/people/person/religion",
        "/people/person/profession",
        "/people/person/ethnicity",
        "/people/deceased_person/place_of_death",
        "/location/location/contains",
        "/location/country/capital",
        "/location/country/administrative_divisions",
        "/location/administrative_division/country",
        "/location/neighborhood/neighborhood_of",
        "/business/person/company",
        "/business/company/founders",
        "/business/company/place_founded",
        "/business/company/major_shareholders",
        "/business/company/advisors",
        "/sports/sports_team/location",
        "/sports/sports_team_location/teams",
        "/people/person/place_of_birth_alt",
        "/people/family/members",
        "/broadcast/content/location",
        "/film/film/featured_film_locations",
    ];
    (0..count)
        .map(|i| {
            if i < BASE.len() {
                BASE[i].to_string()
            } else {
                format!("/generated/relation/r{i:03}")
            }
        })
        .collect()
}

/// camelCase property labels (WebNLG flavor), deterministic and distinct.
pub fn webnlg_style_labels(count: usize) -> Vec<String> {
    const VERBS: [&str; 18] = [
        "birthPlace", "deathPlace", "country", "capital", "leaderName", "location",
        "operator", "manufacturer", "owner", "builder", "architect", "tenant",
        "affiliation", "almaMater", "occupation", "nationality", "spouse", "successor",
    ];
    const SUFFIXES: [&str; 14] = [
        "", "Of", "In", "City", "Region", "Team", "Club", "Company", "Site", "Area",
        "Name", "Group", "State", "District",
    ];
    let mut out = Vec::with_capacity(count);
    'outer: for suffix in SUFFIXES {
        for verb in VERBS {
            if out.len() == count {
                break 'outer;
            }
            out.push(format!("{verb}{suffix}"));
        }
    }
    let mut i = 0;
    while out.len() < count {
        out.push(format!("property{i:03}"));
        i += 1;
    }
    out
}

/// Triplet count per sentence: geometric-ish weights 1, 1/2, 1/4, ...
/// over 1..=max_triplets so single-triplet sentences dominate.
fn sample_triplet_count(rng: &mut Rng, max_triplets: usize) -> usize {
    let weights: Vec<f64> = (0..max_triplets).map(|k| 0.5f64.powi(k as i32)).collect();
    let total: f64 = weights.iter().sum();
    let mut draw = rng.next_f64() * total;
    for (k, w) in weights.iter().enumerate() {
        draw -= w;
        if draw < 0.0 {
            return k + 1;
        }
    }
    max_triplets
}

fn synth_sentence(
    config: &SynthConfig,
    rng: &mut Rng,
    triggers: &[String],
    prefixes: &[String],
    entities: &[String],
    fillers: &[String],
    relation_counter: &mut usize,
) -> Instance {
    let triplet_count = sample_triplet_count(rng, config.max_triplets);

    let mut tokens: Vec<String> = Vec::new();
    let mut placed: Vec<Span> = Vec::new(); // entity spans in placement order
    let mut used_bases: BTreeSet<usize> = BTreeSet::new();
    let mut triplets: Vec<Triplet> = Vec::new();

    let push_fillers = |tokens: &mut Vec<String>, rng: &mut Rng, max: usize| {
        let k = rng.below(max + 1);
        for _ in 0..k {
            tokens.push(fillers[rng.below(fillers.len())].clone());
        }
    };

    push_fillers(&mut tokens, rng, 2);

    for k in 0..triplet_count {
        // cycling keeps every relation represented in any decent corpus
        let relation = *relation_counter % triggers.len();
        *relation_counter += 1;

        // head: reuse an already placed entity or mint a new one
        let reuse_head = k > 0 && rng.chance(config.overlap_fraction);
        let head = if reuse_head {
            placed[rng.below(placed.len())]
        } else {
            let span = place_entity(config, rng, prefixes, entities, &mut used_bases, &mut tokens);
            placed.push(span);
            span
        };
        tokens.push(triggers[relation].clone());
        // tail: always freshly placed after the trigger, never the head
        let tail = loop {
            let span = place_entity(config, rng, prefixes, entities, &mut used_bases, &mut tokens);
            if span != head {
                placed.push(span);
                break span;
            }
        };
        push_fillers(&mut tokens, rng, 1);

        triplets.push(Triplet {
            relation: format!("r{relation:02}"),
            head,
            tail,
        });
    }

    Instance { tokens, triplets }
}

fn place_entity(
    config: &SynthConfig,
    rng: &mut Rng,
    prefixes: &[String],
    entities: &[String],
    used: &mut BTreeSet<usize>,
    tokens: &mut Vec<String>,
) -> Span {
    // distinct base token within the sentence keeps pointers unambiguous
    let base = loop {
        let cand = rng.below(entities.len());
        if !used.contains(&cand) {
            used.insert(cand);
            break cand;
        }
    };
    let start = tokens.len();
    if rng.chance(config.multi_token_fraction) {
        tokens.push(prefixes[rng.below(prefixes.len())].clone());
    }
    tokens.push(entities[base].clone());
    (start, tokens.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn inst(tokens: &[&str], triplets: Vec<Triplet>) -> Instance {
        Instance {
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            triplets,
        }
    }

    fn trip(rel: &str, head: Span, tail: Span) -> Triplet {
        Triplet {
            relation: rel.to_string(),
            head,
            tail,
        }
    }

    #[test]
    fn parse_round_trip() {
        let original = vec![
            inst(&["a", "b", "c"], vec![trip("r1", (0, 1), (2, 2))]),
            inst(&["x"], vec![]),
        ];
        let mut buf = Vec::new();
        for i in &original {
            serde_json::to_writer(&mut buf, i).unwrap();
            buf.push(b'\n');
        }
        let parsed = parse_reader(Cursor::new(buf)).unwrap();
        assert_eq!(parsed, original);
    }

    #[test]
    fn parse_reports_line_numbers() {
        let text = "{\"tokens\":[\"a\"],\"triplets\":[]}\nnot json\n";
        let err = parse_reader(Cursor::new(text)).unwrap_err();
        match err {
            Error::Data { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_out_of_range_span() {
        let text = "{\"tokens\":[\"a\",\"b\"],\"triplets\":[{\"relation\":\"r\",\"head\":[0,0],\"tail\":[1,2]}]}\n";
        assert!(parse_reader(Cursor::new(text)).is_err());
    }

    #[test]
    fn parse_empty_input_gives_empty_list() {
        assert!(parse_reader(Cursor::new("")).unwrap().is_empty());
    }

    #[test]
    fn vocab_reserved_and_ordering() {
        let corpus = vec![
            inst(&["b", "a", "a"], vec![]),
            inst(&["a", "c"], vec![]),
        ];
        let v = build_vocab(&corpus, 1);
        // a:3 occurrences, then b and c tie at 1 -> lexicographic
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "<go>", "a", "b", "c"]);
        assert_eq!(v.id("<pad>"), PAD);
        assert_eq!(v.id("a"), 3);
        assert_eq!(v.id("zzz"), UNK);
    }

    #[test]
    fn vocab_min_count_filters_everything() {
        let corpus = vec![inst(&["a", "b"], vec![])];
        let v = build_vocab(&corpus, 5);
        assert_eq!(v.len(), RESERVED.len());
    }

    #[test]
    fn vocab_deterministic() {
        let corpus = vec![inst(&["q", "r", "q", "s"], vec![])];
        let a = build_vocab(&corpus, 1);
        let b = build_vocab(&corpus, 1);
        assert_eq!(a.tokens(), b.tokens());
    }

    #[test]
    fn bio_basic_and_empty() {
        let spans: BTreeSet<Span> = [(0, 1)].into_iter().collect();
        assert_eq!(derive_bio(3, &spans), vec![Tag::B, Tag::I, Tag::O]);
        assert_eq!(derive_bio(2, &BTreeSet::new()), vec![Tag::O, Tag::O]);
    }

    #[test]
    fn bio_shared_entity_tagged_once() {
        let i = inst(
            &["a", "b", "c", "d"],
            vec![trip("r1", (0, 0), (2, 2)), trip("r2", (0, 0), (3, 3))],
        );
        let spans = i.entity_spans();
        assert_eq!(spans.len(), 3);
        let tags = derive_bio(4, &spans);
        assert_eq!(tags, vec![Tag::B, Tag::O, Tag::B, Tag::B]);
    }

    #[test]
    fn bio_conflicting_overlap_keeps_longer() {
        // (0,2) and (1,1) conflict; the longer span wins
        let spans: BTreeSet<Span> = [(0, 2), (1, 1)].into_iter().collect();
        assert_eq!(derive_bio(3, &spans), vec![Tag::B, Tag::I, Tag::I]);
    }

    #[test]
    fn bio_round_trips_through_spans() {
        let mut rng = Rng::new(17);
        for _ in 0..50 {
            let n = 4 + rng.below(8);
            let mut spans = BTreeSet::new();
            let mut pos = 0;
            while pos + 1 < n {
                if rng.chance(0.5) {
                    let len = 1 + rng.below(2);
                    let end = (pos + len - 1).min(n - 1);
                    spans.insert((pos, end));
                    pos = end + 2; // gap keeps spans unambiguous
                } else {
                    pos += 1;
                }
            }
            let tags = derive_bio(n, &spans);
            assert_eq!(spans_from_tags(&tags), spans);
        }
    }

    #[test]
    fn target_single_triplet_padding() {
        let rels = Relations::from_labels(vec!["r1".into()]);
        let i = inst(&["a", "b", "c", "d", "e"], vec![trip("r1", (0, 1), (3, 4))]);
        let (target, truncated) = build_target(&i, &rels, 5).unwrap();
        assert!(!truncated);
        assert_eq!(target.slots().len(), 5);
        assert_eq!(
            target.slots()[0],
            TargetTriplet {
                relation: Some(0),
                head: Some(1), // last token of [0,1]
                tail: Some(4),
            }
        );
        assert!(target.slots()[1..].iter().all(|s| *s == TargetTriplet::NA));
        assert_eq!(target.len_symbols(), 15);
        assert_eq!(target.real_count(), 1);
    }

    #[test]
    fn target_empty_is_all_na() {
        let rels = Relations::from_labels(vec!["r1".into()]);
        let i = inst(&["a"], vec![]);
        let (target, _) = build_target(&i, &rels, 5).unwrap();
        assert!(target.slots().iter().all(|s| *s == TargetTriplet::NA));
    }

    #[test]
    fn target_sorted_and_truncated() {
        let rels = Relations::from_labels(vec!["r1".into(), "r2".into()]);
        let i = inst(
            &["a", "b", "c"],
            vec![
                trip("r2", (2, 2), (0, 0)),
                trip("r1", (0, 0), (1, 1)),
                trip("r1", (1, 1), (2, 2)),
            ],
        );
        let (target, truncated) = build_target(&i, &rels, 2).unwrap();
        assert!(truncated);
        // sorted by (head end, tail end, rel id): (0,1,r1), (1,2,r1), (2,0,r2)
        assert_eq!(target.slots()[0].head, Some(0));
        assert_eq!(target.slots()[1].head, Some(1));
    }

    #[test]
    fn target_pointers_lie_on_entity_tags() {
        let config = SynthConfig {
            seed: 5,
            num_sentences: 40,
            multi_token_fraction: 0.4,
            ..SynthConfig::default()
        };
        let corpus = synth_generate(&config).unwrap();
        let rels = build_relations(&corpus.train);
        for instance in corpus.train.iter().chain(&corpus.test) {
            let tags = derive_bio(instance.tokens.len(), &instance.entity_spans());
            let (target, _) = build_target(instance, &rels, 5).unwrap();
            for slot in target.slots() {
                for ptr in [slot.head, slot.tail].into_iter().flatten() {
                    assert_ne!(tags[ptr], Tag::O, "pointer must hit a tagged token");
                }
            }
        }
    }

    #[test]
    fn synth_deterministic() {
        let config = SynthConfig::default();
        let a = synth_generate(&config).unwrap();
        let b = synth_generate(&config).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn synth_single_token_when_fraction_zero() {
        let config = SynthConfig {
            multi_token_fraction: 0.0,
            num_sentences: 50,
            ..SynthConfig::default()
        };
        let corpus = synth_generate(&config).unwrap();
        for i in corpus.train.iter().chain(&corpus.test) {
            for span in i.entity_spans() {
                assert_eq!(span.0, span.1);
            }
        }
    }

    #[test]
    fn synth_full_overlap_shares_entities() {
        let config = SynthConfig {
            overlap_fraction: 1.0,
            max_triplets: 2,
            num_sentences: 60,
            seed: 9,
            ..SynthConfig::default()
        };
        let corpus = synth_generate(&config).unwrap();
        let mut saw_multi = false;
        for i in corpus.train.iter().chain(&corpus.test) {
            if i.triplets.len() < 2 {
                continue;
            }
            saw_multi = true;
            // with overlap 1.0, every follow-up triplet reuses an entity
            let mut seen: BTreeSet<Span> = BTreeSet::new();
            seen.insert(i.triplets[0].head);
            seen.insert(i.triplets[0].tail);
            for t in &i.triplets[1..] {
                assert!(
                    seen.contains(&t.head) || seen.contains(&t.tail),
                    "triplet shares no entity: {i:?}"
                );
                seen.insert(t.head);
                seen.insert(t.tail);
            }
        }
        assert!(saw_multi);
    }

    #[test]
    fn synth_spans_valid_and_parseable() {
        let config = SynthConfig {
            multi_token_fraction: 0.3,
            seed: 3,
            num_sentences: 100,
            ..SynthConfig::default()
        };
        let corpus = synth_generate(&config).unwrap();
        assert_eq!(
            corpus.train.len() + corpus.test.len(),
            config.num_sentences
        );
        let mut buf = Vec::new();
        for i in &corpus.train {
            serde_json::to_writer(&mut buf, i).unwrap();
            buf.push(b'\n');
        }
        let parsed = parse_reader(Cursor::new(buf)).unwrap();
        assert_eq!(parsed, corpus.train);
    }
}
