use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{print_scan_rank, ScenarioConfig, ScenarioKind};
use crate::error::{Error, Result};
use crate::feature_store::{AttackFamily, Domain};
use crate::gmm::GmmSelectionReport;

/// One D-EER together with the score counts behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub deer: f64,
    /// Percent with two decimals.
    pub percent: String,
    pub n_bonafide: usize,
    pub n_attack: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnGroup {
    pub label: String,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// Outer row label (the source dataset for unseen-attack tables).
    pub group: Option<String>,
    pub model: String,
    /// One entry per column, groups concatenated in order; `None` where no
    /// run covered the combination.
    pub cells: Vec<Option<Cell>>,
}

/// Everything needed to trace a row back to its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ScenarioConfig,
    pub config_digest: String,
    pub root_seed: u64,
    pub derived_seeds: BTreeMap<String, u64>,
    pub n_train_bonafide: usize,
    pub n_train_attack: usize,
    /// Attack samples used only to validate one-class model selection.
    pub n_validation_attack: usize,
    pub pca_components: usize,
    pub training_manifest_sha256: String,
    pub selection: Option<GmmSelectionReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub scenario: ScenarioKind,
    pub title: String,
    pub group_caption: String,
    pub column_caption: String,
    pub row_group_caption: Option<String>,
    pub test_sources: Vec<String>,
    pub test_domain: Domain,
    pub column_groups: Vec<ColumnGroup>,
    pub rows: Vec<ReportRow>,
    pub runs: Vec<RunRecord>,
}

fn captions(kind: ScenarioKind) -> (&'static str, &'static str, Option<&'static str>) {
    match kind {
        ScenarioKind::Baseline | ScenarioKind::PrintScan => ("Src dataset", "Test on", None),
        ScenarioKind::UnseenAttack => ("Train attacks", "Test attacks", Some("Src. dataset")),
        ScenarioKind::CrossSource => ("Train src. dataset", "Test attacks", None),
        ScenarioKind::OneClass => ("Src. dataset", "Test attacks", None),
    }
}

fn column_rank(name: &str) -> (usize, usize) {
    let family = AttackFamily::ALL.iter().position(|f| f.to_string() == name);
    (family.unwrap_or(3), print_scan_rank(name))
}

impl ReportTable {
    pub(crate) fn single(config: &ScenarioConfig, cells: Vec<(String, Cell)>, record: RunRecord) -> Self {
        let (group_caption, column_caption, row_group_caption) = captions(config.scenario);
        ReportTable {
            scenario: config.scenario,
            title: config.scenario.title().into(),
            group_caption: group_caption.into(),
            column_caption: column_caption.into(),
            row_group_caption: row_group_caption.map(Into::into),
            test_sources: vec![config.test_source.to_string()],
            test_domain: config.test_domain,
            column_groups: vec![ColumnGroup {
                label: config.column_group(),
                columns: cells.iter().map(|(n, _)| n.clone()).collect(),
            }],
            rows: vec![ReportRow {
                group: config.row_group(),
                model: config.extractor.clone(),
                cells: cells.into_iter().map(|(_, c)| Some(c)).collect(),
            }],
            runs: vec![record],
        }
    }

    /// Cell at (`row group`, `model`, `column group`, `column`).
    pub fn cell(&self, group: Option<&str>, model: &str, column_group: &str, column: &str) -> Option<&Cell> {
        let row = self
            .rows
            .iter()
            .find(|r| r.group.as_deref() == group && r.model == model)?;
        let mut offset = 0;
        for g in &self.column_groups {
            if g.label == column_group {
                let i = g.columns.iter().position(|c| c == column)?;
                return row.cells[offset + i].as_ref();
            }
            offset += g.columns.len();
        }
        None
    }

    fn flat_columns(&self) -> Vec<(String, String)> {
        self.column_groups
            .iter()
            .flat_map(|g| g.columns.iter().map(move |c| (g.label.clone(), c.clone())))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Merges tables into one per scenario, in scenario order. Column groups and
/// rows keep their first appearance; columns inside a group follow the
/// family (or print-scan) order.
pub fn assemble(tables: &[ReportTable]) -> Result<Vec<ReportTable>> {
    let mut out = Vec::new();
    for kind in ScenarioKind::ALL {
        let parts: Vec<&ReportTable> = tables.iter().filter(|t| t.scenario == kind).collect();
        let Some(first) = parts.first() else { continue };
        let mut groups: Vec<ColumnGroup> = Vec::new();
        let mut row_keys: Vec<(Option<String>, String)> = Vec::new();
        let mut values: BTreeMap<(usize, String, String), Cell> = BTreeMap::new();
        let mut test_sources: Vec<String> = Vec::new();
        let mut runs = Vec::new();
        for t in &parts {
            if t.test_domain != first.test_domain {
                return Err(Error::Config(format!("{kind} tables mix test domains")));
            }
            for s in &t.test_sources {
                if !test_sources.contains(s) {
                    test_sources.push(s.clone());
                }
            }
            for g in &t.column_groups {
                let slot = match groups.iter().position(|x| x.label == g.label) {
                    Some(i) => i,
                    None => {
                        groups.push(ColumnGroup {
                            label: g.label.clone(),
                            columns: Vec::new(),
                        });
                        groups.len() - 1
                    }
                };
                for c in &g.columns {
                    if !groups[slot].columns.contains(c) {
                        groups[slot].columns.push(c.clone());
                    }
                }
            }
            let flat = t.flat_columns();
            for row in &t.rows {
                let key = (row.group.clone(), row.model.clone());
                let r = match row_keys.iter().position(|k| *k == key) {
                    Some(i) => i,
                    None => {
                        row_keys.push(key);
                        row_keys.len() - 1
                    }
                };
                for ((g, c), cell) in flat.iter().zip(&row.cells) {
                    if let Some(cell) = cell {
                        if values.insert((r, g.clone(), c.clone()), cell.clone()).is_some() {
                            return Err(Error::Config(format!(
                                "{kind}: duplicate result for {} / {g} / {c}",
                                row.model
                            )));
                        }
                    }
                }
            }
            runs.extend(t.runs.iter().cloned());
        }
        for g in &mut groups {
            g.columns.sort_by_key(|c| column_rank(c));
        }
        let rows = row_keys
            .into_iter()
            .enumerate()
            .map(|(r, (group, model))| ReportRow {
                cells: groups
                    .iter()
                    .flat_map(|g| g.columns.iter().map(move |c| (g.label.clone(), c.clone())))
                    .map(|(g, c)| values.get(&(r, g, c)).cloned())
                    .collect(),
                group,
                model,
            })
            .collect();
        out.push(ReportTable {
            scenario: kind,
            title: first.title.clone(),
            group_caption: first.group_caption.clone(),
            column_caption: first.column_caption.clone(),
            row_group_caption: first.row_group_caption.clone(),
            test_sources,
            test_domain: first.test_domain,
            column_groups: groups,
            rows,
            runs,
        });
    }
    Ok(out)
}

/// Aligned plain-text rendering with D-EER in percent.
pub fn render_text(table: &ReportTable) -> String {
    let lead = if table.row_group_caption.is_some() { 2 } else { 1 };
    let mut grid: Vec<Vec<String>> = Vec::new();
    let mut header1 = vec![String::new(); lead];
    let mut header2 = vec![String::new(); lead];
    header1[lead - 1] = table.group_caption.clone();
    header2[lead - 1] = table.column_caption.clone();
    for (gi, g) in table.column_groups.iter().enumerate() {
        if gi > 0 {
            header1.push(String::new());
            header2.push(String::new());
        }
        for (ci, c) in g.columns.iter().enumerate() {
            header1.push(if ci == 0 { g.label.clone() } else { String::new() });
            header2.push(c.clone());
        }
    }
    grid.push(header1);
    grid.push(header2);
    let mut model_header = vec![String::new(); lead];
    if let Some(c) = &table.row_group_caption {
        model_header[0] = c.clone();
    }
    model_header[lead - 1] = "Model".into();
    grid.push(model_header);
    let mut previous_group: Option<&Option<String>> = None;
    for row in &table.rows {
        let mut line = Vec::new();
        if lead == 2 {
            let same = previous_group == Some(&row.group);
            line.push(if same {
                String::new()
            } else {
                row.group.clone().unwrap_or_default()
            });
            previous_group = Some(&row.group);
        }
        line.push(row.model.clone());
        let mut i = 0;
        for (gi, g) in table.column_groups.iter().enumerate() {
            if gi > 0 {
                line.push(String::new());
            }
            for _ in &g.columns {
                line.push(row.cells[i].as_ref().map_or("-".into(), |c| c.percent.clone()));
                i += 1;
            }
        }
        grid.push(line);
    }

    let width = grid.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..width)
        .map(|j| grid.iter().filter_map(|r| r.get(j)).map(String::len).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let mut title = format!("{}: D-EER (%)", table.title);
    if table.scenario == ScenarioKind::CrossSource || table.test_domain == Domain::PrintScan {
        let _ = write!(
            title,
            ", test on {} {}",
            table.test_sources.join("/"),
            table.test_domain
        );
    }
    out.push_str(&title);
    out.push('\n');
    for row in &grid {
        let mut line = String::new();
        for (j, cell) in row.iter().enumerate() {
            if j > 0 {
                line.push_str("  ");
            }
            if j < lead {
                let _ = write!(line, "{cell:<w$}", w = widths[j]);
            } else {
                let _ = write!(line, "{cell:>w$}", w = widths[j]);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}
