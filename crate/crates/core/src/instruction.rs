//! Instruction templates, coordinate tokens and the polygon output parser.
//!
//! Every coordinate that appears in an instruction is written with the
//! coordinate vocabulary `[c-0] ... [c-383]`, one token per axis value, so a
//! vertex is `([c-x],[c-y])` and a polygon is
//! `(([c-x1],[c-y1]),...,([c-x16],[c-y16]))`. Image slots such as
//! `[support image]` stay in the text verbatim; their byte ranges are reported
//! in [`RenderedInstruction::placeholder_spans`] so a model pipeline can splice
//! in visual tokens.

use std::collections::HashSet;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::curriculum::MAX_HINTS;
use crate::geometry::{Polygon16, Vertex, POLYGON_VERTICES};
use crate::synthesis::PseudoPair;
use crate::tablegen::CorrespondingTable;
use crate::{Error, Result};

pub const COORD_VOCAB_SIZE: u32 = 384;
pub const MAX_COORD: u32 = COORD_VOCAB_SIZE - 1;
pub const MASK_TOKEN: &str = "[mask]";

/// One axis value from the coordinate vocabulary, written `[c-<value>]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CoordToken(u16);

impl CoordToken {
    pub fn new(value: u32) -> Result<Self> {
        if value > MAX_COORD {
            return Err(Error::Encoding(format!("coordinate {value} outside [0, {MAX_COORD}]")));
        }
        Ok(CoordToken(value as u16))
    }

    pub fn value(self) -> u32 {
        self.0 as u32
    }
}

impl fmt::Display for CoordToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[c-{}]", self.0)
    }
}

impl FromStr for CoordToken {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s
            .strip_prefix("[c-")
            .and_then(|r| r.strip_suffix(']'))
            .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
            .ok_or_else(|| Error::Encoding(format!("{s:?} is not a coordinate token")))?;
        let value: u32 = digits.parse().map_err(|_| Error::Encoding(format!("{s:?} overflows")))?;
        CoordToken::new(value)
    }
}

fn encode_vertex(v: Vertex) -> Result<String> {
    Ok(format!("({},{})", CoordToken::new(v.x)?, CoordToken::new(v.y)?))
}

/// `(([c-x1],[c-y1]),...,([c-x16],[c-y16]))`
pub fn encode_polygon(poly: &Polygon16) -> Result<String> {
    let pairs = poly.vertices().iter().map(|&v| encode_vertex(v)).collect::<Result<Vec<_>>>()?;
    Ok(format!("({})", pairs.join(",")))
}

/// Non-empty list of polygons, one per object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolygonTuple {
    objects: Vec<Polygon16>,
    /// Byte ranges of each polygon in the parsed source; empty when the tuple
    /// was built in code.
    #[serde(skip)]
    spans: Vec<Range<usize>>,
}

impl PolygonTuple {
    pub fn new(objects: Vec<Polygon16>) -> Result<Self> {
        if objects.is_empty() {
            return Err(Error::TemplateInput("polygon tuple needs at least one object".into()));
        }
        if let Some(p) = objects.iter().find(|p| p.max_coordinate() > MAX_COORD) {
            return Err(Error::Encoding(format!("coordinate {} outside [0, {MAX_COORD}]", p.max_coordinate())));
        }
        Ok(PolygonTuple { objects, spans: Vec::new() })
    }

    pub fn objects(&self) -> &[Polygon16] {
        &self.objects
    }

    pub fn spans(&self) -> &[Range<usize>] {
        &self.spans
    }

    pub fn into_objects(self) -> Vec<Polygon16> {
        self.objects
    }
}

/// A single polygon as-is; several as `(poly1, poly2, ...)`.
pub fn encode_tuple(tuple: &PolygonTuple) -> Result<String> {
    let polys = tuple.objects.iter().map(encode_polygon).collect::<Result<Vec<_>>>()?;
    Ok(match polys.len() {
        1 => polys.into_iter().next().expect("one polygon"),
        _ => format!("({})", polys.join(", ")),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstructionKind {
    Task,
    Incontext,
    Pretrain,
    Multishot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaceholderSpan {
    pub name: String,
    pub range: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedInstruction {
    pub kind: InstructionKind,
    pub text: String,
    pub placeholder_spans: Vec<PlaceholderSpan>,
}

struct Builder {
    kind: InstructionKind,
    text: String,
    spans: Vec<PlaceholderSpan>,
}

impl Builder {
    fn new(kind: InstructionKind) -> Self {
        Builder { kind, text: String::new(), spans: Vec::new() }
    }

    fn push(&mut self, s: &str) -> &mut Self {
        self.text.push_str(s);
        self
    }

    /// Emit `[name]` and remember where it went.
    fn slot(&mut self, name: &str) -> &mut Self {
        let start = self.text.len();
        self.text.push('[');
        self.text.push_str(name);
        self.text.push(']');
        self.spans.push(PlaceholderSpan { name: name.to_string(), range: start..self.text.len() });
        self
    }

    fn finish(self) -> RenderedInstruction {
        RenderedInstruction { kind: self.kind, text: self.text, placeholder_spans: self.spans }
    }
}

fn check_category(category: &str) -> Result<()> {
    if category.trim().is_empty() {
        return Err(Error::TemplateInput("category is empty".into()));
    }
    Ok(())
}

fn size_text(image_size: (u32, u32)) -> Result<String> {
    let (w, h) = image_size;
    if w == 0 || h == 0 || w > COORD_VOCAB_SIZE || h > COORD_VOCAB_SIZE {
        return Err(Error::TemplateInput(format!("image size {w}x{h} outside 1..={COORD_VOCAB_SIZE}")));
    }
    Ok(format!("({w}, {h})"))
}

fn check_in_image(poly: &Polygon16, image_size: (u32, u32)) -> Result<()> {
    if poly.vertices().iter().any(|v| v.x >= image_size.0 || v.y >= image_size.1) {
        return Err(Error::TemplateInput(format!("polygon vertex outside a {}x{} image", image_size.0, image_size.1)));
    }
    Ok(())
}

fn tuple_text(tuple: &PolygonTuple, image_size: (u32, u32)) -> Result<String> {
    for p in tuple.objects() {
        check_in_image(p, image_size)?;
    }
    encode_tuple(tuple)
}

const TASK_HEAD: &str = "For each object within the class ";
const TASK_BODY: &str = " in an image, output coordinates of a 16-point polygon that encloses the object. \
These points should be arranged in a clockwise direction. The output should be a tuple in the format of \
(c1, c2, ..., cn), where cn is the coordinates for the n-th object and its format should be ";
const TASK_FORMAT: &str = "((x1,y1),(x2,y2),...,(x16,y16))";
const MULTISHOT_FORMAT: &str = "((x1,y1),(x2,y2),…,(x16,y16))";
const WITHIN: &str = ". The coordinate value should be within ";

/// Segmentation task instruction with one support example.
pub fn render_task_instruction(
    category: &str,
    image_size: (u32, u32),
    support_gt: &PolygonTuple,
) -> Result<RenderedInstruction> {
    check_category(category)?;
    let size = size_text(image_size)?;
    let gt = tuple_text(support_gt, image_size)?;
    let mut b = Builder::new(InstructionKind::Task);
    b.push(TASK_HEAD).push(category).push(TASK_BODY).push(TASK_FORMAT).push(WITHIN).push(&size);
    b.push(". For example, for image ").slot("support image").push(", the output should be ").push(&gt).push(".");
    Ok(b.finish())
}

/// `"<poly> is <a>, <b>"` clauses for every region with a non-empty row.
fn region_clauses(table: &CorrespondingTable, regions: &[(u32, Polygon16)]) -> Result<Vec<String>> {
    let ids: HashSet<u32> = regions.iter().map(|(id, _)| *id).collect();
    if ids.len() != regions.len() {
        return Err(Error::TemplateInput("duplicate region id".into()));
    }
    if let Some(row) = table.rows.iter().find(|r| !ids.contains(&r.region_id)) {
        return Err(Error::TemplateInput(format!("table row for unknown region {}", row.region_id)));
    }
    let mut clauses = Vec::new();
    for (id, poly) in regions {
        let row = table.row(*id).ok_or_else(|| Error::TemplateInput(format!("no table row for region {id}")))?;
        if row.attributes.is_empty() {
            continue;
        }
        clauses.push(format!("{} is {}", encode_polygon(poly)?, row.attributes.join(", ")));
    }
    Ok(clauses)
}

fn attribute_list(attributes: &[String]) -> Result<String> {
    if attributes.is_empty() || attributes.iter().any(|a| a.trim().is_empty()) {
        return Err(Error::TemplateInput("attribute list is empty or has blank entries".into()));
    }
    Ok(attributes.join(", "))
}

/// Fine-grained in-context instruction built from the corresponding table.
///
/// Regions are rendered in the order of `regions`; rows without attributes
/// are left out, and when every row is empty only the attribute sentence
/// remains.
pub fn render_incontext_instruction(
    category: &str,
    attributes: &[String],
    table: &CorrespondingTable,
    regions: &[(u32, Polygon16)],
) -> Result<RenderedInstruction> {
    check_category(category)?;
    let attrs = attribute_list(attributes)?;
    let clauses = region_clauses(table, regions)?;
    let mut b = Builder::new(InstructionKind::Incontext);
    b.push("The ").push(category).push(" has ").push(&attrs).push(".");
    if !clauses.is_empty() {
        b.push(" For example, in ").slot("support image").push(", ").push(&clauses.join(", ")).push(".");
    }
    Ok(b.finish())
}

/// Query ground truth with unhinted vertices replaced by `[mask]`.
pub fn masked_gt(poly: &Polygon16, hinted: &[usize]) -> Result<String> {
    let parts = poly
        .vertices()
        .iter()
        .enumerate()
        .map(|(k, &v)| if hinted.contains(&k) { encode_vertex(v) } else { Ok(MASK_TOKEN.to_string()) })
        .collect::<Result<Vec<_>>>()?;
    Ok(format!("({})", parts.join(",")))
}

fn check_hints(hinted: &[usize], m: usize) -> Result<()> {
    if m > MAX_HINTS {
        return Err(Error::TemplateInput(format!("M = {m} exceeds {MAX_HINTS}")));
    }
    if hinted.len() != m {
        return Err(Error::TemplateInput(format!("{} hinted indices for M = {m}", hinted.len())));
    }
    let mut seen = HashSet::new();
    for &k in hinted {
        if k >= POLYGON_VERTICES || !seen.insert(k) {
            return Err(Error::TemplateInput(format!("hinted index {k} repeated or outside [0, 16)")));
        }
    }
    Ok(())
}

/// Pretraining instruction from explicit parts.
pub fn render_pretrain_parts(
    image_size: (u32, u32),
    support_foreground: &PolygonTuple,
    query_gt: &Polygon16,
    hinted: &[usize],
    m: usize,
) -> Result<RenderedInstruction> {
    check_hints(hinted, m)?;
    let size = size_text(image_size)?;
    let support = tuple_text(support_foreground, image_size)?;
    check_in_image(query_gt, image_size)?;
    let masked = masked_gt(query_gt, hinted)?;
    let mut b = Builder::new(InstructionKind::Pretrain);
    b.push(
        "For the target object in a query image that has the same class as the support image foreground, \
         output coordinates of a 16-point polygon that encloses the object. These points should be arranged \
         in a clockwise direction and the format of their coordinates is ",
    )
    .push(TASK_FORMAT)
    .push(WITHIN)
    .push(&size)
    .push(". For support image ")
    .slot("pseudo support image")
    .push(", the foreground is ")
    .push(&support)
    .push(". For the target object in the query image ")
    .slot("pseudo query image")
    .push(", the output should be ")
    .push(&masked)
    .push(". What is the remaining points?");
    Ok(b.finish())
}

/// Pretraining instruction for a generated pair; the query target is its
/// largest foreground component.
pub fn render_pretrain_instruction(pair: &PseudoPair, hinted: &[usize], m: usize) -> Result<RenderedInstruction> {
    let size = (pair.support_image.width(), pair.support_image.height());
    let support = PolygonTuple::new(pair.support_polygons.clone())
        .map_err(|_| Error::TemplateInput("support image has no foreground polygon".into()))?;
    let query = pair
        .query_polygons
        .first()
        .ok_or_else(|| Error::TemplateInput("query image has no foreground polygon".into()))?;
    render_pretrain_parts(size, &support, query, hinted, m)
}

/// One support image of a multi-shot episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportShot {
    pub ground_truth: PolygonTuple,
    pub table: CorrespondingTable,
    pub regions: Vec<(u32, Polygon16)>,
}

/// Instruction for `K >= 1` support images; clauses keep the order of
/// `supports`.
pub fn render_multishot_instruction(
    category: &str,
    attributes: &[String],
    supports: &[SupportShot],
    image_size: (u32, u32),
) -> Result<RenderedInstruction> {
    check_category(category)?;
    if supports.is_empty() {
        return Err(Error::TemplateInput("multi-shot instruction needs K >= 1 supports".into()));
    }
    let size = size_text(image_size)?;
    let attrs = attribute_list(attributes)?;
    let mut b = Builder::new(InstructionKind::Multishot);
    b.push(TASK_HEAD).push(category).push(TASK_BODY).push(MULTISHOT_FORMAT).push(WITHIN).push(&size);
    b.push(". To accomplish this task, you can refer to the following properties of ")
        .push(category)
        .push(": ")
        .push(category)
        .push(" has ")
        .push(&attrs)
        .push(". ");
    for (k, shot) in supports.iter().enumerate() {
        let gt = tuple_text(&shot.ground_truth, image_size)?;
        let clauses = region_clauses(&shot.table, &shot.regions)?;
        b.push(if k == 0 { "For example, for image " } else { "; for image " });
        b.slot(&format!("support image {}", k + 1)).push(", the output should be ").push(&gt);
        if !clauses.is_empty() {
            b.push(", because in these regions, ").push(&clauses.join(", "));
        }
    }
    b.push(". For image ").slot("query image").push(", what is the output?");
    Ok(b.finish())
}

// ---------------------------------------------------------------------------
// Output parser
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("at byte {offset}: expected {expected}, found {found}")]
pub struct ParseError {
    pub offset: usize,
    pub expected: String,
    pub found: String,
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

type PResult<T> = std::result::Result<T, ParseError>;

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser { src: src.as_bytes(), pos: 0 }
    }

    fn skip_ws(&mut self) {
        while self.src.get(self.pos).is_some_and(u8::is_ascii_whitespace) {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn describe(&self, at: usize) -> String {
        match self.src.get(at) {
            None => "end of input".to_string(),
            Some(_) => {
                let rest = String::from_utf8_lossy(&self.src[at..]);
                let snippet: String = rest.chars().take(12).collect();
                format!("{snippet:?}")
            }
        }
    }

    fn error_at(&self, at: usize, expected: impl Into<String>) -> ParseError {
        ParseError { offset: at, expected: expected.into(), found: self.describe(at) }
    }

    fn expect(&mut self, byte: u8) -> PResult<()> {
        self.skip_ws();
        if self.peek() == Some(byte) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error_at(self.pos, format!("'{}'", byte as char)))
        }
    }

    /// Index of the next non-whitespace byte at or after `from`.
    fn next_significant(&self, mut from: usize) -> usize {
        while self.src.get(from).is_some_and(u8::is_ascii_whitespace) {
            from += 1;
        }
        from
    }

    fn digits(&mut self) -> PResult<(u64, usize)> {
        let start = self.pos;
        let mut value: u64 = 0;
        while let Some(b) = self.peek().filter(u8::is_ascii_digit) {
            value = value.saturating_mul(10).saturating_add((b - b'0') as u64);
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.error_at(start, "a coordinate token [c-N] or an integer"));
        }
        Ok((value, start))
    }

    fn coord(&mut self) -> PResult<u32> {
        self.skip_ws();
        let start = self.pos;
        let value = if self.src[self.pos..].starts_with(b"[c-") {
            self.pos += 3;
            let (v, _) = self.digits()?;
            if self.peek() != Some(b']') {
                return Err(self.error_at(self.pos, "']' closing the coordinate token"));
            }
            self.pos += 1;
            v
        } else {
            self.digits()?.0
        };
        if value > MAX_COORD as u64 {
            return Err(ParseError {
                offset: start,
                expected: format!("a coordinate in [0, {MAX_COORD}]"),
                found: value.to_string(),
            });
        }
        Ok(value as u32)
    }

    fn pair(&mut self) -> PResult<Vertex> {
        self.expect(b'(')?;
        let x = self.coord()?;
        self.expect(b',')?;
        let y = self.coord()?;
        self.expect(b')')?;
        Ok(Vertex::new(x, y))
    }

    fn polygon(&mut self) -> PResult<(Polygon16, Range<usize>)> {
        self.skip_ws();
        let start = self.pos;
        self.expect(b'(')?;
        let mut vertices = Vec::with_capacity(POLYGON_VERTICES);
        loop {
            self.skip_ws();
            if vertices.len() == POLYGON_VERTICES && self.peek() != Some(b')') {
                return Err(self.error_at(self.pos, "')' after 16 vertices (expected 16 vertices)"));
            }
            vertices.push(self.pair()?);
            self.skip_ws();
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b')') => {
                    if vertices.len() != POLYGON_VERTICES {
                        return Err(ParseError {
                            offset: self.pos,
                            expected: "16 vertices".to_string(),
                            found: format!("{} vertices", vertices.len()),
                        });
                    }
                    self.pos += 1;
                    let poly = Polygon16::from_slice(&vertices).expect("16 vertices");
                    return Ok((poly, start..self.pos));
                }
                _ => return Err(self.error_at(self.pos, "',' or ')' after a vertex")),
            }
        }
    }

    fn output(&mut self) -> PResult<PolygonTuple> {
        self.skip_ws();
        let start = self.pos;
        if self.peek() != Some(b'(') {
            return Err(self.error_at(start, "'(' opening a polygon tuple"));
        }
        // "(((" opens a tuple of polygons, "((" followed by a coordinate opens a
        // bare polygon.
        let second = self.next_significant(start + 1);
        let third = self.next_significant(second + 1);
        let is_tuple = self.src.get(second) == Some(&b'(') && self.src.get(third) == Some(&b'(');

        let mut objects = Vec::new();
        let mut spans = Vec::new();
        if is_tuple {
            self.pos += 1;
            loop {
                let (poly, span) = self.polygon()?;
                objects.push(poly);
                spans.push(span);
                self.skip_ws();
                match self.peek() {
                    Some(b',') => self.pos += 1,
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return Err(self.error_at(self.pos, "',' or ')' after a polygon")),
                }
            }
        } else {
            let (poly, span) = self.polygon()?;
            objects.push(poly);
            spans.push(span);
        }
        self.skip_ws();
        if self.pos != self.src.len() {
            return Err(self.error_at(self.pos, "end of input"));
        }
        Ok(PolygonTuple { objects, spans })
    }
}

/// Parse a model answer into polygons.
///
/// ```text
/// output := TUPLE | POLY
/// TUPLE  := '(' POLY (',' POLY)* ')'
/// POLY   := '(' PAIR (',' PAIR){15} ')'
/// PAIR   := '(' COORD ',' COORD ')'
/// COORD  := '[c-' DIGITS ']' | DIGITS        (value in 0..=383)
/// ```
///
/// Whitespace is allowed between any two tokens.
pub fn parse_polygon_output(text: &str) -> std::result::Result<PolygonTuple, ParseError> {
    Parser::new(text).output()
}
