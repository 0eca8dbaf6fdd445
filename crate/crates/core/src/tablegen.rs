//! Region/attribute corresponding table and its expert-guided refinement.
//!
//! Region `i` is matched to every attribute `j` whose embedding has cosine
//! similarity strictly above `alpha` with the region embedding. Embeddings come
//! from an [`Embedder`]; attribute lists, ambiguity checks and discriminative
//! attributes come from an [`ExpertOracle`]. The shipped oracle,
//! [`ChatOracle`], renders the fixed chat prompts, sends them to a
//! [`ChatBackend`] and parses the replies with a tolerant grammar.
//! [`ScriptedChat`] and [`HashEmbedder`] are deterministic offline backends.

use std::collections::{HashMap, HashSet};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::geometry::Polygon16;
use crate::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.2;
pub const DEFAULT_MAX_ITERATIONS: usize = 3;
const UNIT_TOLERANCE: f64 = 1e-6;

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", u.len(), v.len())));
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::DegenerateVector("cosine of a zero vector".into()));
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

fn normalized(v: Vec<f64>) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::DegenerateVector("cannot normalize a zero or non-finite vector".into()));
    }
    Ok(v.into_iter().map(|x| x / norm).collect())
}

fn check_unit(v: &[f64], what: &str) -> Result<()> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::DegenerateVector(format!("{what} embedding has norm {norm}")));
    }
    Ok(())
}

/// A support-image region (superpixel) and its image embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: u32,
    pub polygon: Polygon16,
    pub embedding: Vec<f64>,
}

impl Region {
    /// Normalizes `embedding` to unit length.
    pub fn new(id: u32, polygon: Polygon16, embedding: Vec<f64>) -> Result<Self> {
        Ok(Region { id, polygon, embedding: normalized(embedding)? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub text: String,
    pub embedding: Vec<f64>,
}

impl Attribute {
    /// Normalizes `embedding` to unit length.
    pub fn new(text: impl Into<String>, embedding: Vec<f64>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::parameter("attribute text is empty"));
        }
        Ok(Attribute { text, embedding: normalized(embedding)? })
    }

    /// Embed `text` through the text prompt `"A photo of <text>"`.
    pub fn embed(text: &str, embedder: &dyn Embedder) -> Result<Self> {
        Attribute::new(text, embedder.embed_text(&attribute_text_prompt(text))?)
    }
}

pub fn attribute_text_prompt(attribute: &str) -> String {
    format!("A photo of {attribute}")
}

pub trait Embedder: Send + Sync {
    /// Embedding of a masked region image, identified by a descriptor the
    /// backend understands (a file path, a cache key, ...).
    fn embed_region(&self, descriptor: &str) -> Result<Vec<f64>>;
    fn embed_text(&self, phrase: &str) -> Result<Vec<f64>>;
    fn dim(&self) -> usize;
}

/// Deterministic pseudo-embeddings: a Gaussian vector seeded from the SHA-256
/// of the input, normalized to unit length.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder { dim }
    }

    fn vector(&self, domain: &str, input: &str) -> Vec<f64> {
        let digest = Sha256::new().chain_update(domain).chain_update([0u8]).chain_update(input).finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        let v: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
        normalized(v).expect("a Gaussian draw is never exactly zero")
    }
}

impl Embedder for HashEmbedder {
    fn embed_region(&self, descriptor: &str) -> Result<Vec<f64>> {
        Ok(self.vector("region", descriptor))
    }

    fn embed_text(&self, phrase: &str) -> Result<Vec<f64>> {
        Ok(self.vector("text", phrase))
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

/// Embedder with hand-specified vectors, falling back to [`HashEmbedder`].
#[derive(Debug, Clone)]
pub struct FixtureEmbedder {
    fallback: HashEmbedder,
    texts: HashMap<String, Vec<f64>>,
    regions: HashMap<String, Vec<f64>>,
}

impl FixtureEmbedder {
    pub fn new(dim: usize) -> Self {
        FixtureEmbedder { fallback: HashEmbedder::new(dim), texts: HashMap::new(), regions: HashMap::new() }
    }

    pub fn with_text(mut self, phrase: impl Into<String>, v: Vec<f64>) -> Self {
        assert_eq!(v.len(), self.fallback.dim, "fixture vector dimension");
        self.texts.insert(phrase.into(), v);
        self
    }

    pub fn with_region(mut self, descriptor: impl Into<String>, v: Vec<f64>) -> Self {
        assert_eq!(v.len(), self.fallback.dim, "fixture vector dimension");
        self.regions.insert(descriptor.into(), v);
        self
    }
}

impl Embedder for FixtureEmbedder {
    fn embed_region(&self, descriptor: &str) -> Result<Vec<f64>> {
        match self.regions.get(descriptor) {
            Some(v) => normalized(v.clone()),
            None => self.fallback.embed_region(descriptor),
        }
    }

    fn embed_text(&self, phrase: &str) -> Result<Vec<f64>> {
        match self.texts.get(phrase) {
            Some(v) => normalized(v.clone()),
            None => self.fallback.embed_text(phrase),
        }
    }

    fn dim(&self) -> usize {
        self.fallback.dim
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRow {
    pub region_id: u32,
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    Resolved,
    Unresolved,
}

/// One prompt sent to the expert and its raw reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub prompt: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub iterations: usize,
    pub ambiguous_classes: Vec<String>,
    pub discriminative_attributes: Vec<String>,
    pub status: Resolution,
    pub transcript: Vec<Exchange>,
}

impl Default for Provenance {
    fn default() -> Self {
        Provenance {
            iterations: 0,
            ambiguous_classes: Vec::new(),
            discriminative_attributes: Vec::new(),
            status: Resolution::Resolved,
            transcript: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondingTable {
    pub category: String,
    pub alpha: f64,
    /// Attribute texts in the order they were considered.
    pub attributes: Vec<String>,
    pub rows: Vec<TableRow>,
    pub provenance: Provenance,
}

impl CorrespondingTable {
    pub fn row(&self, region_id: u32) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.region_id == region_id)
    }

    /// Union of all matched attributes, in first-occurrence order.
    pub fn matched_attributes(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.rows.iter().flat_map(|r| r.attributes.iter()).filter(|a| seen.insert(a.as_str())).cloned().collect()
    }
}

/// Match every region against every attribute at threshold `alpha`.
pub fn build_table(regions: &[Region], attributes: &[Attribute], alpha: f64) -> Result<CorrespondingTable> {
    if !(alpha > -1.0 && alpha < 1.0) {
        return Err(Error::parameter(format!("alpha {alpha} outside (-1, 1)")));
    }
    let mut ids = HashSet::new();
    for region in regions {
        if !ids.insert(region.id) {
            return Err(Error::parameter(format!("duplicate region id {}", region.id)));
        }
        check_unit(&region.embedding, "region")?;
    }
    for attr in attributes {
        check_unit(&attr.embedding, "attribute")?;
    }
    let rows = regions
        .iter()
        .map(|region| {
            let mut matched = Vec::new();
            for attr in attributes {
                if attr.embedding.len() != region.embedding.len() {
                    return Err(Error::Shape(format!(
                        "region {} embedding has {} dims, attribute {:?} has {}",
                        region.id,
                        region.embedding.len(),
                        attr.text,
                        attr.embedding.len()
                    )));
                }
                if cosine(&region.embedding, &attr.embedding)? > alpha {
                    matched.push(attr.text.clone());
                }
            }
            Ok(TableRow { region_id: region.id, attributes: matched })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CorrespondingTable {
        category: String::new(),
        alpha,
        attributes: attributes.iter().map(|a| a.text.clone()).collect(),
        rows,
        provenance: Provenance::default(),
    })
}

// ---------------------------------------------------------------------------
// Expert prompts and reply grammar
// ---------------------------------------------------------------------------

fn join_list(items: &[String]) -> String {
    items.join(", ")
}

pub fn attributes_prompt(category: &str) -> String {
    format!(
        "What does a {category} look like? Please answer in the format of: A {category} has A, B, C,..., \
         where A, B, and C are noun phrases to describe a {category}."
    )
}

pub fn ambiguity_prompt(category: &str, partial_attributes: &[String]) -> String {
    format!(
        "Except for {category}, which classes also have {}? Please answer in the format of: \
         the following classes also have them: A, B, C, ..., , where A, B and C are the name of classes. \
         If there is no such a class, reply 'no'.",
        join_list(partial_attributes)
    )
}

pub fn discriminate_prompt(category: &str, ambiguous_classes: &[String]) -> String {
    let classes = join_list(ambiguous_classes);
    format!(
        "What does {category} look different from {classes}? Please answer in the format of: \
         {category} has A, B, C,..., where A,B and C are noun phrases to describe the difference of \
         {category} compared to {classes}."
    )
}

pub fn discriminate_more_prompt(category: &str, ambiguous_classes: &[String], seen: &[String]) -> String {
    let classes = join_list(ambiguous_classes);
    format!(
        "Apart from {}, tell me more differences in appearance between {category} and {classes}. \
         Please answer in the format of: {category} has A, B, C,..., where A,B and C are noun phrases \
         to describe more differences of {category} compared to {classes} apart from the given ones.",
        join_list(seen)
    )
}

/// Whitespace-collapsed, trimmed form used to key scripted replies.
pub fn canonical_prompt(prompt: &str) -> String {
    prompt.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(canonical_prompt(prompt).as_bytes()))
}

const AMBIGUITY_PREFIX: &str = "the following classes also have them";

fn protocol(message: impl Into<String>, raw: &str) -> Error {
    Error::OracleProtocol { message: message.into(), raw: raw.to_string() }
}

fn strip_quotes(s: &str) -> &str {
    s.trim_matches(|c: char| matches!(c, '\'' | '"' | '`' | '‘' | '’' | '“' | '”')).trim()
}

/// Split a reply list on commas.
///
/// Leading "and"/"or" are dropped from items, empty items and ellipses are
/// skipped, and when there are several items the last one is split once more
/// at its final " and " (`"A, B and C"`).
fn split_phrases(body: &str) -> Vec<String> {
    let body = body.trim().trim_end_matches('.').trim();
    let mut items: Vec<String> = body
        .split(',')
        .map(|s| {
            let s = strip_quotes(s.trim());
            let lower = s.to_ascii_lowercase();
            let s = if lower.starts_with("and ") {
                &s[4..]
            } else if lower.starts_with("or ") {
                &s[3..]
            } else {
                s
            };
            strip_quotes(s).to_string()
        })
        .filter(|s| !s.is_empty() && s.chars().any(|c| c.is_alphanumeric()))
        .collect();
    if items.len() >= 2 {
        let last = items.pop().expect("len >= 2");
        match last.rfind(" and ") {
            Some(i) => {
                let (head, tail) = (last[..i].trim(), last[i + 5..].trim());
                items.extend([head, tail].into_iter().filter(|s| !s.is_empty()).map(str::to_string));
            }
            None => items.push(last),
        }
    }
    items
}

fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    if s.len() >= prefix.len() && s.is_char_boundary(prefix.len()) && s[..prefix.len()].eq_ignore_ascii_case(prefix) {
        Some(&s[prefix.len()..])
    } else {
        None
    }
}

/// Parsed reply of the ambiguity question: `None` means "no".
pub fn parse_ambiguity_reply(raw: &str) -> Result<Option<Vec<String>>> {
    let text = canonical_prompt(raw);
    let bare = strip_quotes(text.trim().trim_end_matches('.').trim());
    if bare.eq_ignore_ascii_case("no") {
        return Ok(None);
    }
    let rest = strip_prefix_ci(&text, AMBIGUITY_PREFIX)
        .ok_or_else(|| protocol(format!("expected 'no' or '{AMBIGUITY_PREFIX}: ...'"), raw))?;
    let rest = rest.trim_start().strip_prefix(':').unwrap_or(rest);
    let classes = split_phrases(rest);
    if classes.is_empty() {
        return Err(protocol("ambiguity reply lists no classes", raw));
    }
    Ok(Some(classes))
}

pub fn render_ambiguity_reply(classes: Option<&[String]>) -> String {
    match classes {
        None => "no".to_string(),
        Some(c) => format!("{AMBIGUITY_PREFIX}: {}", join_list(c)),
    }
}

/// Parse `"[A|An|The] <category> has A, B, C"`.
pub fn parse_has_reply(category: &str, raw: &str) -> Result<Vec<String>> {
    let text = canonical_prompt(raw);
    let mut rest = text.as_str();
    for article in ["a ", "an ", "the "] {
        if let Some(r) = strip_prefix_ci(rest, article) {
            if strip_prefix_ci(r, category).is_some() {
                rest = r;
                break;
            }
        }
    }
    let rest = strip_prefix_ci(rest, category)
        .and_then(|r| strip_prefix_ci(r.trim_start(), "has"))
        .ok_or_else(|| protocol(format!("expected '{category} has A, B, C'"), raw))?;
    let phrases = split_phrases(rest.trim_start_matches(':'));
    if phrases.is_empty() {
        return Err(protocol("reply lists no attributes", raw));
    }
    Ok(phrases)
}

pub fn render_has_reply(category: &str, phrases: &[String]) -> String {
    format!("{category} has {}", join_list(phrases))
}

// ---------------------------------------------------------------------------
// Oracle interfaces
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Answer<T> {
    pub value: T,
    pub exchange: Exchange,
}

pub trait ExpertOracle {
    fn list_attributes(&self, category: &str) -> Result<Answer<Vec<String>>>;

    /// Classes that share `partial_attributes` with `category`, or `None`.
    fn detect_ambiguity(&self, category: &str, partial_attributes: &[String]) -> Result<Answer<Option<Vec<String>>>>;

    /// New attributes telling `category` apart from `ambiguous_classes`. An
    /// empty `seen` selects the first-round prompt.
    fn discriminate(
        &self,
        category: &str,
        ambiguous_classes: &[String],
        seen: &[String],
    ) -> Result<Answer<Vec<String>>>;
}

/// Text-in, text-out chat service.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String>;
}

/// [`ExpertOracle`] over any [`ChatBackend`].
#[derive(Debug)]
pub struct ChatOracle<B> {
    backend: B,
}

impl<B: ChatBackend> ChatOracle<B> {
    pub fn new(backend: B) -> Self {
        ChatOracle { backend }
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    fn ask(&self, prompt: String) -> Result<Exchange> {
        let response = self.backend.complete(&prompt)?;
        Ok(Exchange { prompt, response })
    }
}

impl<B: ChatBackend> ExpertOracle for ChatOracle<B> {
    fn list_attributes(&self, category: &str) -> Result<Answer<Vec<String>>> {
        let exchange = self.ask(attributes_prompt(category))?;
        let value = parse_has_reply(category, &exchange.response)?;
        Ok(Answer { value, exchange })
    }

    fn detect_ambiguity(&self, category: &str, partial_attributes: &[String]) -> Result<Answer<Option<Vec<String>>>> {
        let exchange = self.ask(ambiguity_prompt(category, partial_attributes))?;
        let value = parse_ambiguity_reply(&exchange.response)?;
        Ok(Answer { value, exchange })
    }

    fn discriminate(
        &self,
        category: &str,
        ambiguous_classes: &[String],
        seen: &[String],
    ) -> Result<Answer<Vec<String>>> {
        let prompt = if seen.is_empty() {
            discriminate_prompt(category, ambiguous_classes)
        } else {
            discriminate_more_prompt(category, ambiguous_classes, seen)
        };
        let exchange = self.ask(prompt)?;
        let value = parse_has_reply(category, &exchange.response)?;
        Ok(Answer { value, exchange })
    }
}

/// Replays canned replies keyed by [`prompt_hash`].
///
/// Fixture files hold blocks of the form
///
/// ```text
/// [request]
/// <prompt text, may span lines>
/// [response]
/// <reply text, may span lines>
/// ```
///
/// Lines starting with `#` outside a block body are comments.
#[derive(Debug, Default)]
pub struct ScriptedChat {
    replies: HashMap<String, String>,
    log: Mutex<Vec<String>>,
}

impl ScriptedChat {
    pub fn new() -> Self {
        ScriptedChat::default()
    }

    pub fn with(mut self, prompt: &str, response: &str) -> Self {
        self.insert(prompt, response);
        self
    }

    pub fn insert(&mut self, prompt: &str, response: &str) {
        self.replies.insert(prompt_hash(prompt), response.trim().to_string());
    }

    pub fn parse_fixture(text: &str) -> Result<Self> {
        enum Section {
            None,
            Request,
            Response,
        }
        let mut chat = ScriptedChat::new();
        let mut section = Section::None;
        let (mut request, mut response) = (String::new(), String::new());
        let flush = |req: &mut String, resp: &mut String, chat: &mut ScriptedChat| -> Result<()> {
            if req.trim().is_empty() {
                return Err(Error::OracleBackend("fixture block without a request".into()));
            }
            chat.insert(req, resp);
            req.clear();
            resp.clear();
            Ok(())
        };
        for line in text.lines() {
            match line.trim() {
                "[request]" => {
                    if let Section::Response = section {
                        flush(&mut request, &mut response, &mut chat)?;
                    }
                    section = Section::Request;
                }
                "[response]" => {
                    if !matches!(section, Section::Request) {
                        return Err(Error::OracleBackend("[response] without a preceding [request]".into()));
                    }
                    section = Section::Response;
                }
                t if t.starts_with('#') && matches!(section, Section::None) => {}
                _ => match section {
                    Section::Request => {
                        request.push_str(line);
                        request.push('\n');
                    }
                    Section::Response => {
                        response.push_str(line);
                        response.push('\n');
                    }
                    Section::None if line.trim().is_empty() => {}
                    Section::None => {
                        return Err(Error::OracleBackend(format!("text outside a fixture block: {line:?}")))
                    }
                },
            }
        }
        match section {
            Section::Response => flush(&mut request, &mut response, &mut chat)?,
            Section::Request => return Err(Error::OracleBackend("fixture ends inside a request".into())),
            Section::None => {}
        }
        Ok(chat)
    }

    /// Canonical prompts received so far, in order.
    pub fn requests(&self) -> Vec<String> {
        self.log.lock().expect("log lock").clone()
    }
}

impl ChatBackend for ScriptedChat {
    fn complete(&self, prompt: &str) -> Result<String> {
        self.log.lock().expect("log lock").push(canonical_prompt(prompt));
        self.replies
            .get(&prompt_hash(prompt))
            .cloned()
            .ok_or_else(|| Error::OracleBackend(format!("no scripted reply for prompt {:?}", canonical_prompt(prompt))))
    }
}

/// Ask the expert for the attributes of `category` and embed them.
pub fn generate_attributes(
    category: &str,
    oracle: &dyn ExpertOracle,
    embedder: &dyn Embedder,
) -> Result<(Vec<Attribute>, Exchange)> {
    let answer = oracle.list_attributes(category)?;
    let attrs = answer.value.iter().map(|t| Attribute::embed(t, embedder)).collect::<Result<Vec<_>>>()?;
    Ok((attrs, answer.exchange))
}

/// Build the table, then refine it until it is unambiguous.
///
/// The expert is asked once whether the matched attributes also describe other
/// classes. If they do, each iteration asks for attributes that discriminate
/// `category` from those classes (listing all earlier discriminative
/// attributes from the second iteration on), appends the new ones and rebuilds
/// the table. The loop stops as soon as one new attribute matches a region, or
/// after `max_iterations` iterations with the table marked unresolved.
pub fn refine_table(
    category: &str,
    regions: &[Region],
    attributes: &[Attribute],
    embedder: &dyn Embedder,
    oracle: &dyn ExpertOracle,
    alpha: f64,
    max_iterations: usize,
) -> Result<CorrespondingTable> {
    if category.trim().is_empty() {
        return Err(Error::parameter("category is empty"));
    }
    if regions.is_empty() || attributes.is_empty() {
        return Err(Error::parameter("refinement needs at least one region and one attribute"));
    }
    let mut attributes = attributes.to_vec();
    let mut table = build_table(regions, &attributes, alpha)?;
    let mut provenance = Provenance::default();

    let partial = table.matched_attributes();
    let answer = oracle.detect_ambiguity(category, &partial)?;
    provenance.transcript.push(answer.exchange);
    let Some(ambiguous) = answer.value else {
        table.category = category.to_string();
        table.provenance = provenance;
        return Ok(table);
    };
    provenance.ambiguous_classes = ambiguous.clone();
    provenance.status = Resolution::Unresolved;

    let mut known: HashSet<String> = attributes.iter().map(|a| a.text.to_lowercase()).collect();
    while provenance.iterations < max_iterations {
        provenance.iterations += 1;
        let answer = oracle.discriminate(category, &ambiguous, &provenance.discriminative_attributes)?;
        provenance.transcript.push(answer.exchange);

        let mut fresh = Vec::new();
        for text in answer.value {
            if known.insert(text.to_lowercase()) {
                fresh.push(Attribute::embed(&text, embedder)?);
            }
        }
        provenance.discriminative_attributes.extend(fresh.iter().map(|a| a.text.clone()));
        attributes.extend(fresh.iter().cloned());
        table = build_table(regions, &attributes, alpha)?;

        let matched = table.matched_attributes();
        if fresh.iter().any(|a| matched.contains(&a.text)) {
            provenance.status = Resolution::Resolved;
            break;
        }
    }
    table.category = category.to_string();
    table.provenance = provenance;
    Ok(table)
}

/// Region polygons keyed by id, for rendering.
pub fn region_polygons(regions: &[Region]) -> Vec<(u32, Polygon16)> {
    regions.iter().map(|r| (r.id, r.polygon)).collect()
}
