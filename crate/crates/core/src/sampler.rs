//! Label sampling and prompt rendering.
//!
//! Labels come from a hierarchical uniform distribution: brand uniformly from
//! the whitelist, model uniformly within the brand, build year uniformly within
//! the model, color uniformly from the color list. Registration counts play no
//! part. In quota mode the brand level is replaced by an exact allotment.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::catalog::{ModelEntry, VehicleCatalog};
use crate::error::{Error, Result};
use crate::rng::{DetRng, SAMPLER_STREAM};

pub const DEFAULT_COLORS: [&str; 8] = [
    "black", "white", "gray", "silver", "blue", "red", "green", "brown",
];

pub const DEFAULT_TEMPLATE: &str =
    "a photograph of a {color} {brand} {model} {year}, on a road, shot from the front, from above, centered";

const SUBJECT_PATTERN: &str = "{color} {brand} {model} {year}";
const PLACEHOLDERS: [&str; 4] = ["color", "brand", "model", "year"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    TextToImage,
    ImageToImage,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::TextToImage, Mode::ImageToImage];

    pub fn short(&self) -> &'static str {
        match self {
            Mode::TextToImage => "t2i",
            Mode::ImageToImage => "i2i",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::TextToImage => "text_to_image",
            Mode::ImageToImage => "image_to_image",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "t2i" | "txt2img" | "text_to_image" => Ok(Mode::TextToImage),
            "i2i" | "img2img" | "image_to_image" => Ok(Mode::ImageToImage),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelSpec {
    pub brand: String,
    pub model: String,
    pub year: i32,
    pub color: String,
    pub mode: Mode,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub text: String,
    pub subject_substring: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Balance {
    IidHierarchical,
    ExactQuota,
}

impl FromStr for Balance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "iid" | "iid_hierarchical" => Ok(Balance::IidHierarchical),
            "quota" | "exact_quota" => Ok(Balance::ExactQuota),
            other => Err(Error::Config(format!("unknown balance mode `{other}`"))),
        }
    }
}

/// Fractions of labels per synthesis mode; must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeMix {
    pub text_to_image: f64,
    pub image_to_image: f64,
}

impl Default for ModeMix {
    fn default() -> Self {
        ModeMix {
            text_to_image: 0.5,
            image_to_image: 0.5,
        }
    }
}

impl ModeMix {
    pub fn fraction(&self, mode: Mode) -> f64 {
        match mode {
            Mode::TextToImage => self.text_to_image,
            Mode::ImageToImage => self.image_to_image,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.text_to_image, self.image_to_image]
            .iter()
            .all(|f| f.is_finite() && *f >= 0.0)
            && (self.text_to_image + self.image_to_image - 1.0).abs() < 1e-9;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "mode mix must be non-negative and sum to 1, got {self:?}"
            )))
        }
    }

    /// Split `n` labels across modes exactly, by largest remainder.
    pub fn apportion(&self, n: usize) -> [(Mode, usize); 2] {
        let exact: Vec<f64> = Mode::ALL
            .iter()
            .map(|m| self.fraction(*m) * n as f64)
            .collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut left = n - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..exact.len()).collect();
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
        });
        for i in order {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        [
            (Mode::TextToImage, counts[0]),
            (Mode::ImageToImage, counts[1]),
        ]
    }
}

impl FromStr for ModeMix {
    type Err = Error;

    /// Parses `t2i=0.5,i2i=0.5`; unnamed modes get zero.
    fn from_str(s: &str) -> Result<Self> {
        let mut mix = ModeMix {
            text_to_image: 0.0,
            image_to_image: 0.0,
        };
        for part in s.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad mode-mix entry `{part}`")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad mode-mix fraction `{v}`")))?;
            match k.parse::<Mode>()? {
                Mode::TextToImage => mix.text_to_image = v,
                Mode::ImageToImage => mix.image_to_image = v,
            }
        }
        mix.validate()?;
        Ok(mix)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplePlan {
    pub total: usize,
    pub mode_mix: ModeMix,
    pub balance: Balance,
    pub seed: u64,
    pub colors: Vec<String>,
}

impl Default for SamplePlan {
    fn default() -> Self {
        SamplePlan {
            total: 80,
            mode_mix: ModeMix::default(),
            balance: Balance::ExactQuota,
            seed: 0,
            colors: DEFAULT_COLORS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl SamplePlan {
    pub fn validate(&self, catalog: &VehicleCatalog) -> Result<()> {
        if self.total == 0 {
            return Err(Error::Config("total must be positive".into()));
        }
        if self.colors.is_empty() {
            return Err(Error::Config("color list is empty".into()));
        }
        self.mode_mix.validate()?;
        let brands = catalog.brand_whitelist.len();
        if self.balance == Balance::ExactQuota && !self.total.is_multiple_of(brands) {
            return Err(Error::Config(format!(
                "quota balancing needs total divisible by {brands} brands, got {}",
                self.total
            )));
        }
        for brand in &catalog.brand_whitelist {
            if catalog.models_of(brand).next().is_none() {
                return Err(Error::Config(format!("brand {brand} has no models")));
            }
        }
        Ok(())
    }

    /// Per-brand target in quota mode.
    pub fn quota(&self, brands: usize) -> Option<usize> {
        match self.balance {
            Balance::ExactQuota => Some(self.total / brands),
            Balance::IidHierarchical => None,
        }
    }
}

fn pick<'a, T>(rng: &mut DetRng, items: &'a [T]) -> &'a T {
    &items[rng.index(items.len())]
}

fn draw_below_brand(
    catalog: &VehicleCatalog,
    brand: &str,
    colors: &[String],
    rng: &mut DetRng,
) -> (String, i32, String) {
    let models: Vec<&ModelEntry> = catalog.models_of(brand).collect();
    let entry = *pick(rng, &models);
    let years: Vec<i32> = entry.build_years.iter().copied().collect();
    let year = *pick(rng, &years);
    let color = pick(rng, colors).clone();
    (entry.model.clone(), year, color)
}

/// Draw the label sequence for a plan. A pure function of `(catalog, plan)`.
pub fn sample_labels(catalog: &VehicleCatalog, plan: &SamplePlan) -> Result<Vec<LabelSpec>> {
    plan.validate(catalog)?;
    let mut rng = DetRng::new(plan.seed, SAMPLER_STREAM);
    let brands = &catalog.brand_whitelist;

    let slots: Vec<(String, Mode)> = match plan.balance {
        Balance::IidHierarchical => {
            let mut out = Vec::with_capacity(plan.total);
            for _ in 0..plan.total {
                let brand = pick(&mut rng, brands).clone();
                let mode = if rng.unit() < plan.mode_mix.text_to_image {
                    Mode::TextToImage
                } else {
                    Mode::ImageToImage
                };
                out.push((brand, mode));
            }
            out
        }
        Balance::ExactQuota => {
            let per_brand = plan.total / brands.len();
            let mut out = Vec::with_capacity(plan.total);
            for brand in brands {
                for (mode, n) in plan.mode_mix.apportion(per_brand) {
                    out.extend(std::iter::repeat_n((brand.clone(), mode), n));
                }
            }
            rng.shuffle(&mut out);
            out
        }
    };

    Ok(slots
        .into_iter()
        .enumerate()
        .map(|(seq, (brand, mode))| {
            let (model, year, color) = draw_below_brand(catalog, &brand, &plan.colors, &mut rng);
            LabelSpec {
                brand,
                model,
                year,
                color,
                mode,
                seq: seq as u64,
            }
        })
        .collect())
}

/// Replace a rejected label with a fresh draw for the same brand and mode.
pub fn redraw_within_brand(
    catalog: &VehicleCatalog,
    label: &LabelSpec,
    colors: &[String],
    rng: &mut DetRng,
) -> LabelSpec {
    let (model, year, color) = draw_below_brand(catalog, &label.brand, colors, rng);
    LabelSpec {
        model,
        year,
        color,
        ..label.clone()
    }
}

/// Check a template: every `{name}` token must be a known placeholder, and the
/// subject sequence must appear exactly once.
pub fn check_template(template: &str) -> Result<()> {
    let unknown: Vec<String> = placeholder_tokens(template)
        .into_iter()
        .filter(|(_, name)| !PLACEHOLDERS.contains(name))
        .map(|(_, name)| format!("{{{name}}}"))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Template { tokens: unknown });
    }
    if template.matches(SUBJECT_PATTERN).count() != 1 {
        return Err(Error::Template {
            tokens: vec![format!("missing subject `{SUBJECT_PATTERN}`")],
        });
    }
    Ok(())
}

/// `{identifier}` tokens with their byte offsets.
fn placeholder_tokens(template: &str) -> Vec<(usize, &str)> {
    let bytes = template.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                j += 1;
            }
            if j > i + 1 && j < bytes.len() && bytes[j] == b'}' {
                out.push((i, &template[i + 1..j]));
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

pub fn build_prompt(label: &LabelSpec, template: &str) -> Result<PromptText> {
    check_template(template)?;
    let value = |name: &str| -> String {
        match name {
            "color" => label.color.clone(),
            "brand" => label.brand.clone(),
            "model" => label.model.clone(),
            "year" => label.year.to_string(),
            _ => unreachable!("checked above"),
        }
    };
    let mut text = String::with_capacity(template.len() + 32);
    let mut last = 0;
    for (at, name) in placeholder_tokens(template) {
        text.push_str(&template[last..at]);
        text.push_str(&value(name));
        last = at + name.len() + 2;
    }
    text.push_str(&template[last..]);

    let subject_substring = format!(
        "{} {} {} {}",
        label.color, label.brand, label.model, label.year
    );
    if text.matches(subject_substring.as_str()).count() != 1 {
        return Err(Error::Template {
            tokens: vec![format!(
                "subject `{subject_substring}` does not occur exactly once in the rendered prompt"
            )],
        });
    }
    Ok(PromptText {
        text,
        subject_substring,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{load_catalog, CatalogFilter};
    use proptest::prelude::*;

    fn label(color: &str, brand: &str, model: &str, year: i32) -> LabelSpec {
        LabelSpec {
            brand: brand.into(),
            model: model.into(),
            year,
            color: color.into(),
            mode: Mode::TextToImage,
            seq: 0,
        }
    }

    #[test]
    fn degenerate_catalog_yields_identical_labels() {
        let src =
            "brand,model,vehicle_class,build_years,registered_count\nSkoda,Karoq,SUV,2018,1\n";
        let filter = CatalogFilter {
            brand_whitelist: vec!["Skoda".into()],
            min_year: 1990,
        };
        let (cat, _) = load_catalog(src, &filter).unwrap();
        let plan = SamplePlan {
            total: 5,
            colors: vec!["gray".into()],
            mode_mix: ModeMix {
                text_to_image: 1.0,
                image_to_image: 0.0,
            },
            balance: Balance::IidHierarchical,
            seed: 99,
        };
        let labels = sample_labels(&cat, &plan).unwrap();
        assert_eq!(labels.len(), 5);
        for (i, l) in labels.iter().enumerate() {
            assert_eq!(l.seq, i as u64);
            assert_eq!(
                LabelSpec {
                    seq: 0,
                    ..l.clone()
                },
                label("gray", "Skoda", "Karoq", 2018)
            );
        }
    }

    #[test]
    fn quota_requires_divisible_total() {
        let (cat, _) = load_catalog(
            include_str!("../fixtures/catalog_sample.csv"),
            &CatalogFilter::default(),
        )
        .unwrap();
        let plan = SamplePlan {
            total: 81,
            ..SamplePlan::default()
        };
        assert!(matches!(sample_labels(&cat, &plan), Err(Error::Config(_))));
    }

    #[test]
    fn brand_without_models_is_config_error() {
        let (cat, _) = load_catalog(
            include_str!("../fixtures/catalog_filter_fixture.csv"),
            &CatalogFilter::default(),
        )
        .unwrap();
        // Opel has no post-1990 models in the filter fixture.
        assert!(matches!(
            sample_labels(&cat, &SamplePlan::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn quota_mode_split_is_exact_per_brand() {
        let (cat, _) = load_catalog(
            include_str!("../fixtures/catalog_sample.csv"),
            &CatalogFilter::default(),
        )
        .unwrap();
        let plan = SamplePlan {
            total: 8 * 25,
            ..SamplePlan::default()
        };
        let labels = sample_labels(&cat, &plan).unwrap();
        for brand in &cat.brand_whitelist {
            let of: Vec<_> = labels.iter().filter(|l| &l.brand == brand).collect();
            assert_eq!(of.len(), 25);
            let t2i = of.iter().filter(|l| l.mode == Mode::TextToImage).count();
            assert_eq!(t2i, 13, "largest remainder gives the tie to text-to-image");
        }
    }

    #[test]
    fn mode_mix_parsing() {
        let m: ModeMix = "t2i=0.25,i2i=0.75".parse().unwrap();
        assert_eq!(m.text_to_image, 0.25);
        assert!("t2i=0.5".parse::<ModeMix>().is_err());
        assert!("x=1".parse::<ModeMix>().is_err());
        let only: ModeMix = "i2i=1".parse().unwrap();
        assert_eq!(
            only.apportion(7),
            [(Mode::TextToImage, 0), (Mode::ImageToImage, 7)]
        );
    }

    #[test]
    fn fig3_subject() {
        let p = build_prompt(
            &label("gray", "Volkswagen", "Golf VII", 2015),
            DEFAULT_TEMPLATE,
        )
        .unwrap();
        assert!(p.text.contains("gray Volkswagen Golf VII 2015"));
        assert_eq!(p.subject_substring, "gray Volkswagen Golf VII 2015");
    }

    #[test]
    fn identity_template() {
        let p = build_prompt(
            &label("gray", "Volkswagen", "Golf VII", 2015),
            SUBJECT_PATTERN,
        )
        .unwrap();
        assert_eq!(p.text, p.subject_substring);
    }

    #[test]
    fn subject_occurs_once() {
        let p = build_prompt(&label("red", "Skoda", "Karoq", 2018), DEFAULT_TEMPLATE).unwrap();
        assert_eq!(p.subject_substring, "red Skoda Karoq 2018");
        let hits = (0..p.text.len())
            .filter(|&i| p.text[i..].starts_with("red Skoda Karoq 2018"))
            .count();
        assert_eq!(hits, 1);
    }

    #[test]
    fn unknown_placeholder_listed() {
        let err = build_prompt(
            &label("red", "Skoda", "Karoq", 2018),
            "{style} {color} {brand} {model} {year} {lens}",
        )
        .unwrap_err();
        match err {
            Error::Template { tokens } => assert_eq!(tokens, vec!["{style}", "{lens}"]),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn literal_text_preserved(
            prefix in "[a-zA-Z0-9 ,.;:!?()\\[\\]-]{0,40}",
            suffix in "[a-zA-Z0-9 ,.;:!?()\\[\\]-]{0,40}",
            extra_year in any::<bool>(),
        ) {
            let tail = if extra_year { format!("{suffix} ({{year}})") } else { suffix.clone() };
            let template = format!("{prefix}{SUBJECT_PATTERN}{tail}");
            let l = label("silver", "Audi", "A4", 2016);
            let p = build_prompt(&l, &template).unwrap();
            let expected_tail = if extra_year { format!("{suffix} (2016)") } else { suffix };
            prop_assert_eq!(p.text, format!("{prefix}silver Audi A4 2016{expected_tail}"));
        }
    }
}
