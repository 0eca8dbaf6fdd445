//! `schedule`, `render`, `parse` and `score`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use polyseg_core::curriculum::{step_params, ScheduleConfig, StepParams};
use polyseg_core::eval::{aggregate, score_episode, score_missing, EpisodeRecord, Report};
use polyseg_core::geometry::{connected_components, Polygon16};
use polyseg_core::instruction::{
    parse_polygon_output, render_incontext_instruction, render_multishot_instruction, render_pretrain_parts,
    render_task_instruction, ParseError, PolygonTuple, RenderedInstruction, SupportShot,
};
use polyseg_core::tablegen::{CorrespondingTable, Provenance, TableRow, DEFAULT_ALPHA};
use serde::{Deserialize, Serialize};

use crate::dataset::{load_mask, validate_dataset};
use crate::{CliError, CliResult};

pub fn schedule_line(s: &StepParams) -> String {
    format!("n={} a={} b={} c={} d={} M={}", s.n, s.a, s.b, s.c, s.d, s.m)
}

pub const SCHEDULE_TSV_HEADER: &str = "n\ta\tb\tc\td\tM";

pub fn schedule_tsv_row(s: &StepParams) -> String {
    format!("{}\t{}\t{}\t{}\t{}\t{}", s.n, s.a, s.b, s.c, s.d, s.m)
}

/// Curriculum values for each requested step, one line per step.
pub fn run_schedule(cfg: &ScheduleConfig, steps: &[u64], tsv: bool) -> CliResult<String> {
    cfg.validate().map_err(CliError::data)?;
    let mut out = String::new();
    if tsv {
        out.push_str(SCHEDULE_TSV_HEADER);
        out.push('\n');
    }
    for &n in steps {
        let s = step_params(n, cfg).map_err(|e| CliError::usage(anyhow::Error::from(e).context("--n")))?;
        out.push_str(&if tsv { schedule_tsv_row(&s) } else { schedule_line(&s) });
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub id: u32,
    pub polygon: Polygon16,
    #[serde(default)]
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShotSpec {
    pub ground_truth: Vec<Polygon16>,
    #[serde(default)]
    pub regions: Vec<RegionSpec>,
}

/// JSON body of a `render` request, selected by `"kind"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RenderRequest {
    Task {
        category: String,
        image_size: (u32, u32),
        support_gt: Vec<Polygon16>,
    },
    Incontext {
        category: String,
        attributes: Vec<String>,
        regions: Vec<RegionSpec>,
    },
    Pretrain {
        image_size: (u32, u32),
        support_foreground: Vec<Polygon16>,
        query_gt: Polygon16,
        hinted: Vec<usize>,
        /// Defaults to the number of hinted indices.
        m: Option<usize>,
    },
    Multishot {
        category: String,
        attributes: Vec<String>,
        image_size: (u32, u32),
        supports: Vec<ShotSpec>,
    },
}

fn table_from_regions(category: &str, attributes: &[String], regions: &[RegionSpec]) -> CorrespondingTable {
    CorrespondingTable {
        category: category.to_string(),
        alpha: DEFAULT_ALPHA,
        attributes: attributes.to_vec(),
        rows: regions.iter().map(|r| TableRow { region_id: r.id, attributes: r.attributes.clone() }).collect(),
        provenance: Provenance::default(),
    }
}

fn region_polygons(regions: &[RegionSpec]) -> Vec<(u32, Polygon16)> {
    regions.iter().map(|r| (r.id, r.polygon)).collect()
}

pub fn render_request(req: &RenderRequest) -> polyseg_core::Result<RenderedInstruction> {
    match req {
        RenderRequest::Task { category, image_size, support_gt } => {
            render_task_instruction(category, *image_size, &PolygonTuple::new(support_gt.clone())?)
        }
        RenderRequest::Incontext { category, attributes, regions } => render_incontext_instruction(
            category,
            attributes,
            &table_from_regions(category, attributes, regions),
            &region_polygons(regions),
        ),
        RenderRequest::Pretrain { image_size, support_foreground, query_gt, hinted, m } => render_pretrain_parts(
            *image_size,
            &PolygonTuple::new(support_foreground.clone())?,
            query_gt,
            hinted,
            m.unwrap_or(hinted.len()),
        ),
        RenderRequest::Multishot { category, attributes, image_size, supports } => {
            let shots = supports
                .iter()
                .map(|s| {
                    Ok(SupportShot {
                        ground_truth: PolygonTuple::new(s.ground_truth.clone())?,
                        table: table_from_regions(category, attributes, &s.regions),
                        regions: region_polygons(&s.regions),
                    })
                })
                .collect::<polyseg_core::Result<Vec<_>>>()?;
            render_multishot_instruction(category, attributes, &shots, *image_size)
        }
    }
}

pub fn run_render(request_path: &Path, json: bool) -> CliResult<String> {
    let text = fs::read_to_string(request_path)
        .with_context(|| format!("reading {}", request_path.display()))
        .map_err(CliError::data)?;
    let req: RenderRequest = serde_json::from_str(&text)
        .with_context(|| format!("malformed render request {}", request_path.display()))
        .map_err(CliError::data)?;
    let rendered = render_request(&req).map_err(CliError::data)?;
    Ok(if json {
        serde_json::to_string_pretty(&rendered).expect("instruction serializes") + "\n"
    } else {
        rendered.text + "\n"
    })
}

/// 1-based line and column (in characters) of a byte offset.
pub fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

pub fn format_parse_error(name: &str, text: &str, err: &ParseError) -> String {
    let (line, col) = line_col(text, err.offset);
    format!("{name}:{line}:{col}: {err}")
}

/// Parse a model output file; on success one JSON polygon per line.
pub fn run_parse(path: &Path) -> CliResult<String> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(CliError::data)?;
    match parse_polygon_output(&text) {
        Ok(tuple) => {
            Ok(tuple.objects().iter().map(|p| serde_json::to_string(p).expect("polygon serializes") + "\n").collect())
        }
        Err(e) => Err(CliError::data(anyhow::anyhow!(format_parse_error(&path.display().to_string(), &text, &e)))),
    }
}

/// `episode<TAB>fold` lines; blank lines and `#` comments are skipped.
pub fn parse_folds(text: &str) -> anyhow::Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((episode, fold)) = line.split_once('\t') else {
            bail!("folds line {}: expected `episode<TAB>fold`", i + 1);
        };
        out.insert(episode.trim().to_string(), fold.trim().to_string());
    }
    Ok(out)
}

pub const DEFAULT_FOLD: &str = "all";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreOutput {
    pub report: Report,
    pub episodes: Vec<EpisodeRecord>,
    /// Episodes whose prediction was missing or did not parse.
    pub failures: Vec<String>,
}

/// Score `predictions/<index>.txt` against the query masks of a dataset.
///
/// Ground-truth objects are the query-mask components that carry a polygon
/// (area at least `min_area`). Missing or unparseable predictions score 0.
pub fn run_score(dataset: &Path, predictions: &Path, folds: Option<&Path>) -> CliResult<ScoreOutput> {
    let manifest = validate_dataset(dataset).map_err(CliError::data)?;
    let folds = match folds {
        Some(p) => parse_folds(
            &fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).map_err(CliError::data)?,
        )
        .map_err(CliError::data)?,
        None => HashMap::new(),
    };
    let size = (manifest.config.size, manifest.config.size);
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for pair in &manifest.pairs {
        let episode = format!("{:06}", pair.index);
        let fold = folds.get(&episode).map_or(DEFAULT_FOLD, String::as_str);
        let query = load_mask(&dataset.join(&pair.files.query_mask.path)).map_err(CliError::data)?;
        let gts: Vec<_> = connected_components(&query)
            .into_iter()
            .filter(|c| c.area() >= manifest.config.min_area.max(1))
            .map(|c| c.to_mask(query.width(), query.height()))
            .collect();
        let pred_path = predictions.join(format!("{episode}.txt"));
        let parsed = fs::read_to_string(&pred_path).ok().map(|t| parse_polygon_output(&t));
        let record = match parsed {
            Some(Ok(tuple)) => score_episode(&episode, fold, &tuple, &gts, size),
            _ => {
                failures.push(episode.clone());
                score_missing(&episode, fold, &gts, size)
            }
        }
        .map_err(CliError::data)?;
        records.push(record);
    }
    let report = aggregate(&records).map_err(CliError::data)?;
    Ok(ScoreOutput { report, episodes: records, failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_text_at_zero() {
        let out = run_schedule(&ScheduleConfig::default(), &[0], false).unwrap();
        assert_eq!(out, "n=0 a=100 b=150 c=0 d=50 M=15\n");
        let err = run_schedule(&ScheduleConfig::default(), &[60_000], false).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("--n"));
    }

    #[test]
    fn line_columns() {
        assert_eq!(line_col("ab\ncd", 0), (1, 1));
        assert_eq!(line_col("ab\ncd", 4), (2, 2));
        assert_eq!(line_col("ab", 2), (1, 3));
    }

    #[test]
    fn folds_file() {
        let f = parse_folds("# header\n000000\t0\n\n000001\t1\n").unwrap();
        assert_eq!(f["000001"], "1");
        assert!(parse_folds("000000 0").is_err());
    }
}
