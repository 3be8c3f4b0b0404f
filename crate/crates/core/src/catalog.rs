//! Vehicle registration catalog: the brand → model → build-year tree that
//! defines the label space.
//!
//! On disk the catalog is comma-separated UTF-8 with the header
//! `brand,model,vehicle_class,build_years,registered_count`; `build_years`
//! holds `|`-separated integers.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BRANDS: [&str; 8] = [
    "Volkswagen",
    "Ford",
    "BMW",
    "Audi",
    "Opel",
    "Mercedes",
    "Renault",
    "Skoda",
];

pub const DEFAULT_MIN_YEAR: i32 = 1990;

const HEADER: [&str; 5] = [
    "brand",
    "model",
    "vehicle_class",
    "build_years",
    "registered_count",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub brand: String,
    pub model: String,
    /// Pass-through metadata; does not influence sampling or prompts.
    pub vehicle_class: String,
    pub build_years: BTreeSet<i32>,
    pub registered_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogFilter {
    pub brand_whitelist: Vec<String>,
    pub min_year: i32,
}

impl Default for CatalogFilter {
    fn default() -> Self {
        CatalogFilter {
            brand_whitelist: DEFAULT_BRANDS.iter().map(|s| s.to_string()).collect(),
            min_year: DEFAULT_MIN_YEAR,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DropReport {
    /// Rows whose brand is not whitelisted.
    pub brand_filtered: usize,
    /// Rows left without any build year at or after `min_year`.
    pub year_filtered: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleCatalog {
    pub entries: Vec<ModelEntry>,
    pub brand_whitelist: Vec<String>,
    pub min_year: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BrandSummary {
    pub brand: String,
    pub models: usize,
    pub first_year: Option<i32>,
    pub last_year: Option<i32>,
}

impl VehicleCatalog {
    pub fn brand_index(&self, brand: &str) -> Option<usize> {
        self.brand_whitelist.iter().position(|b| b == brand)
    }

    pub fn models_of<'a>(&'a self, brand: &'a str) -> impl Iterator<Item = &'a ModelEntry> + 'a {
        self.entries.iter().filter(move |e| e.brand == brand)
    }

    pub fn find(&self, brand: &str, model: &str) -> Option<&ModelEntry> {
        self.entries
            .iter()
            .find(|e| e.brand == brand && e.model == model)
    }

    /// Serialize back to the on-disk tabular form.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(HEADER).expect("in-memory write");
        for e in &self.entries {
            let years = e
                .build_years
                .iter()
                .map(|y| y.to_string())
                .collect::<Vec<_>>()
                .join("|");
            w.write_record([
                e.brand.as_str(),
                e.model.as_str(),
                e.vehicle_class.as_str(),
                years.as_str(),
                e.registered_count.to_string().as_str(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }

    pub fn summary(&self) -> Vec<BrandSummary> {
        self.brand_whitelist
            .iter()
            .map(|brand| {
                let models: Vec<&ModelEntry> = self.models_of(brand).collect();
                let years = models.iter().flat_map(|m| m.build_years.iter().copied());
                let (first_year, last_year) = years.fold((None, None), |(lo, hi), y| {
                    (
                        Some(lo.map_or(y, |l: i32| l.min(y))),
                        Some(hi.map_or(y, |h: i32| h.max(y))),
                    )
                });
                BrandSummary {
                    brand: brand.clone(),
                    models: models.len(),
                    first_year,
                    last_year,
                }
            })
            .collect()
    }
}

/// Parse and filter a catalog document.
pub fn load_catalog(source: &str, filter: &CatalogFilter) -> Result<(VehicleCatalog, DropReport)> {
    if filter.brand_whitelist.is_empty() {
        return Err(Error::Config("brand whitelist is empty".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source.as_bytes());

    let header = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(Error::Parse {
            row: 1,
            message: format!("expected header `{}`", HEADER.join(",")),
        });
    }

    let whitelist: HashSet<&str> = filter.brand_whitelist.iter().map(String::as_str).collect();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut entries = Vec::new();
    let mut report = DropReport::default();

    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        let entry = parse_row(&record, row)?;
        if !seen.insert((entry.brand.clone(), entry.model.clone())) {
            return Err(Error::Parse {
                row,
                message: format!("duplicate entry ({}, {})", entry.brand, entry.model),
            });
        }
        if !whitelist.contains(entry.brand.as_str()) {
            report.brand_filtered += 1;
            continue;
        }
        let build_years: BTreeSet<i32> = entry
            .build_years
            .iter()
            .copied()
            .filter(|y| *y >= filter.min_year)
            .collect();
        if build_years.is_empty() {
            report.year_filtered += 1;
            continue;
        }
        entries.push(ModelEntry {
            build_years,
            ..entry
        });
    }

    if entries.is_empty() {
        return Err(Error::Config(
            "catalog is empty after brand/year filtering".into(),
        ));
    }
    Ok((
        VehicleCatalog {
            entries,
            brand_whitelist: filter.brand_whitelist.clone(),
            min_year: filter.min_year,
        },
        report,
    ))
}

pub fn load_catalog_file(
    path: &Path,
    filter: &CatalogFilter,
) -> Result<(VehicleCatalog, DropReport)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_catalog(&text, filter)
}

fn parse_row(record: &csv::StringRecord, row: usize) -> Result<ModelEntry> {
    let err = |message: String| Error::Parse { row, message };
    if record.len() != HEADER.len() {
        return Err(err(format!(
            "expected {} fields, found {}",
            HEADER.len(),
            record.len()
        )));
    }
    let field = |i: usize| record.get(i).unwrap_or("");
    let brand = field(0);
    let model = field(1);
    if brand.is_empty() {
        return Err(err("empty brand".into()));
    }
    if model.is_empty() {
        return Err(err("empty model".into()));
    }
    let build_years = field(3)
        .split('|')
        .map(|y| {
            y.trim()
                .parse::<i32>()
                .map_err(|_| err(format!("non-integer build year `{y}`")))
        })
        .collect::<Result<BTreeSet<i32>>>()?;
    let registered_count = field(4)
        .parse::<u64>()
        .map_err(|_| err(format!("invalid registered_count `{}`", field(4))))?;
    Ok(ModelEntry {
        brand: brand.to_string(),
        model: model.to_string(),
        vehicle_class: field(2).to_string(),
        build_years,
        registered_count,
    })
}
