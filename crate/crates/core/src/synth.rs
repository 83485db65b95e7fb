//! Synthetic SA-AKI-like cohort.
//!
//! Each feature is drawn per class from a Gaussian whose reference summary
//! (mean and a bracketed range) sets the target mean and spread. The bracket
//! is read as a central 95% range, so `spread = (hi - lo) / 3.92`, then
//! multiplied by `spread_scale`. One shared latent factor adds correlation.
//! Physical limits are applied by clipping, and the Gaussian location is
//! solved so the clipped mean still equals the target. Missing cells are
//! masked completely at random last.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data::{Column, Dataset, FeatureDescriptor};
use crate::error::{Error, Result};
use crate::eval::auroc;
use crate::rng::Rng;

pub const LABEL_COLUMN: &str = "mortality";
pub const ID_COLUMN: &str = "patient_id";
pub const BRACKET_CONVENTION: &str = "bracket = central 95% range; spread = (hi - lo) / 3.92";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub category: String,
    pub unit: String,
    pub survivors: ClassSummary,
    pub non_survivors: ClassSummary,
    pub floor: Option<f64>,
    pub ceiling: Option<f64>,
    pub missing_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n: usize,
    pub prevalence: f64,
    pub seed: u64,
    /// Multiplies every derived spread.
    pub spread_scale: f64,
    /// Magnitude of each feature's loading on the shared latent factor; the
    /// sign follows the direction of the class difference.
    pub loading: f64,
    pub features: Vec<FeatureSpec>,
    pub bracket_convention: String,
    pub id_prefix: String,
}

const DEMOGRAPHIC: &str = "Demographic and Clinical Information";
const SEVERITY: &str = "Severity of Illness Scores";
const LAB: &str = "Laboratory and Biochemical Markers";
const PHYSIOLOGY: &str = "Physiological Parameters";

#[rustfmt::skip]
const TABLE: [(&str, &str, &str, [f64; 3], [f64; 3], f64); 24] = [
    // name, category, unit, survivors [mean, lo, hi], non-survivors [mean, lo, hi], MCAR rate
    ("Length_of_Stay",    DEMOGRAPHIC, "days",      [6.706, 2.059, 26.913],       [7.931, 2.078, 27.185],       0.00),
    ("Resp_Rate",         PHYSIOLOGY,  "breaths/min", [19.679, 14.002, 26.582],   [21.972, 14.810, 30.618],     0.02),
    ("Heart_Rate",        PHYSIOLOGY,  "bpm",       [84.748, 60.966, 113.159],    [91.124, 63.428, 119.572],    0.01),
    ("Avg_UrineOutput",   PHYSIOLOGY,  "mL",        [136.456, 8.826, 406.184],    [75.908, 1.772, 249.253],     0.06),
    ("Total_UrineOutput", PHYSIOLOGY,  "mL",        [10826.957, 100.0, 51044.1],  [7120.166, 15.0, 36519.725],  0.06),
    ("SOFA",              SEVERITY,    "points",    [5.522, 1.871, 11.322],       [8.947, 3.207, 15.788],       0.00),
    ("SAPSII",            SEVERITY,    "points",    [45.088, 22.0, 75.0],         [55.223, 29.475, 89.525],     0.00),
    ("GCS",               SEVERITY,    "points",    [14.456, 11.847, 15.0],       [14.101, 10.607, 15.0],       0.03),
    ("WBC",               LAB,         "K/uL",      [12.567, 4.299, 27.419],      [16.170, 3.895, 37.464],      0.04),
    ("RDW",               LAB,         "%",         [15.904, 12.72, 21.8],        [17.115, 13.133, 24.31],      0.04),
    ("Platelet",          LAB,         "K/uL",      [182.587, 40.499, 410.34],    [160.818, 29.879, 388.287],   0.04),
    ("PTT",               LAB,         "s",         [40.330, 24.175, 83.2],       [50.658, 24.9, 103.466],      0.10),
    ("Potassium",         LAB,         "mEq/L",     [4.246, 3.462, 5.301],        [4.393, 3.542, 5.644],        0.03),
    ("Glucose",           LAB,         "mg/dL",     [144.891, 88.8, 257.251],     [155.858, 85.023, 271.679],   0.03),
    ("AnionGap",          LAB,         "mEq/L",     [15.016, 9.549, 22.5],        [17.640, 10.948, 27.302],     0.05),
    ("Lymphocytes",       LAB,         "%",         [10.969, 2.183, 26.953],      [9.485, 1.2, 28.764],         0.32),
    ("Serum_Lactate",     LAB,         "mmol/L",    [2.009, 0.8, 4.795],          [3.564, 0.937, 11.3],         0.15),
    ("Serum_Calcium",     LAB,         "mmol/L",    [1.128, 0.983, 1.278],        [1.105, 0.949, 1.26],         0.12),
    ("PaO2_FiO2_Ratio",   LAB,         "mmHg",      [229.696, 78.317, 429.14],    [208.439, 64.916, 424.666],   0.28),
    ("PO2",               LAB,         "mmHg",      [114.979, 35.0, 253.008],     [103.084, 39.325, 187.279],   0.25),
    ("APSIII",            SEVERITY,    "points",    [58.301, 29.0, 105.0],        [75.661, 37.0, 130.0],        0.00),
    ("Temperature",       PHYSIOLOGY,  "degC",      [36.853, 36.088, 37.706],     [36.774, 35.496, 37.975],     0.02),
    ("SpO2",              PHYSIOLOGY,  "%",         [96.617, 93.269, 99.326],     [95.982, 90.488, 99.255],     0.02),
    ("Creatinine",        LAB,         "mg/dL",     [2.580, 1.0, 7.85],           [2.584, 1.097, 6.214],        0.02),
];

fn limits(name: &str) -> (Option<f64>, Option<f64>) {
    match name {
        "GCS" => (Some(3.0), Some(15.0)),
        "SpO2" | "Lymphocytes" => (Some(0.0), Some(100.0)),
        "Temperature" => (None, None),
        _ => (Some(0.0), None),
    }
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec::cohort(9474, 42)
    }
}

impl GeneratorSpec {
    /// The calibrated default cohort with `n` rows.
    pub fn cohort(n: usize, seed: u64) -> Self {
        let features = TABLE
            .iter()
            .map(|&(name, category, unit, s, ns, rate)| {
                let (floor, ceiling) = limits(name);
                FeatureSpec {
                    name: name.into(),
                    category: category.into(),
                    unit: unit.into(),
                    survivors: ClassSummary { mean: s[0], lo: s[1], hi: s[2] },
                    non_survivors: ClassSummary { mean: ns[0], lo: ns[1], hi: ns[2] },
                    floor,
                    ceiling,
                    missing_rate: rate,
                }
            })
            .collect();
        GeneratorSpec {
            n,
            prevalence: 0.162,
            seed,
            spread_scale: 1.5,
            loading: 0.3,
            features,
            bracket_convention: BRACKET_CONVENTION.into(),
            id_prefix: "patient-".into(),
        }
    }

    /// A shifted cohort for external validation: non-survivor summaries move
    /// a fraction `shrink` of the way toward the survivors'.
    pub fn external(mut self, shrink: f64, seed: u64) -> Self {
        for f in &mut self.features {
            let (s, ns) = (f.survivors, &mut f.non_survivors);
            ns.mean += shrink * (s.mean - ns.mean);
            ns.lo += shrink * (s.lo - ns.lo);
            ns.hi += shrink * (s.hi - ns.hi);
        }
        self.seed = seed;
        self.id_prefix = "external-".into();
        self
    }

    /// All missing rates set to zero.
    pub fn complete(mut self) -> Self {
        for f in &mut self.features {
            f.missing_rate = 0.0;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return bad(format!("prevalence {} not in (0, 1)", self.prevalence));
        }
        if !(self.spread_scale > 0.0) {
            return bad("spread_scale must be positive".into());
        }
        if !(0.0..1.0).contains(&self.loading) {
            return bad(format!("loading {} not in [0, 1)", self.loading));
        }
        for f in &self.features {
            for c in [f.survivors, f.non_survivors] {
                if !(c.hi > c.lo) {
                    return bad(format!("`{}`: spread must be positive", f.name));
                }
                if f.floor.is_some_and(|lo| c.mean <= lo) || f.ceiling.is_some_and(|hi| c.mean >= hi) {
                    return bad(format!("`{}`: mean {} outside its limits", f.name, c.mean));
                }
            }
            if !(0.0..1.0).contains(&f.missing_rate) {
                return bad(format!("`{}`: missing rate {} not in [0, 1)", f.name, f.missing_rate));
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> Vec<FeatureDescriptor> {
        self.features
            .iter()
            .map(|f| FeatureDescriptor::numeric(&f.name, &f.category).with_unit(&f.unit))
            .collect()
    }
}

/// Parameters actually used to draw one feature in one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassDraw {
    pub target_mean: f64,
    /// Mean of the Gaussian before clipping.
    pub location: f64,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDraw {
    pub name: String,
    pub loading: f64,
    pub survivors: ClassDraw,
    pub non_survivors: ClassDraw,
    pub floor: Option<f64>,
    pub ceiling: Option<f64>,
    pub missing_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: GeneratorSpec,
    pub rng: String,
    pub draws: Vec<FeatureDraw>,
    pub n_positive: usize,
    pub n_masked: usize,
    /// AUROC of the exact likelihood-ratio score on unclipped, unmasked
    /// draws; no model should beat it beyond noise.
    pub bayes_auroc: f64,
    pub bayes_sample_size: usize,
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `E[clamp(X, lo, hi)]` for `X ~ N(mu, sigma^2)`.
pub fn clipped_normal_mean(mu: f64, sigma: f64, lo: Option<f64>, hi: Option<f64>) -> f64 {
    let a = lo.map_or(f64::NEG_INFINITY, |v| (v - mu) / sigma);
    let b = hi.map_or(f64::INFINITY, |v| (v - mu) / sigma);
    let (fa, fb) = (std_normal_cdf(a), std_normal_cdf(b));
    let pdf = |z: f64| if z.is_finite() { std_normal_pdf(z) } else { 0.0 };
    let below = lo.map_or(0.0, |v| v * fa);
    let above = hi.map_or(0.0, |v| v * (1.0 - fb));
    below + above + mu * (fb - fa) + sigma * (pdf(a) - pdf(b))
}

/// Location whose clipped mean equals `target`, by bisection.
pub fn solve_location(target: f64, sigma: f64, lo: Option<f64>, hi: Option<f64>) -> f64 {
    let (mut a, mut b) = (target - 20.0 * sigma, target + 20.0 * sigma);
    for _ in 0..200 {
        let m = a + (b - a) / 2.0;
        if clipped_normal_mean(m, sigma, lo, hi) < target {
            a = m;
        } else {
            b = m;
        }
        if b - a <= f64::EPSILON * target.abs().max(1.0) {
            break;
        }
    }
    a + (b - a) / 2.0
}

fn draws(spec: &GeneratorSpec) -> Vec<FeatureDraw> {
    spec.features
        .iter()
        .map(|f| {
            let class = |c: ClassSummary| {
                let spread = spec.spread_scale * (c.hi - c.lo) / 3.92;
                ClassDraw { target_mean: c.mean, location: solve_location(c.mean, spread, f.floor, f.ceiling), spread }
            };
            let direction = if f.non_survivors.mean >= f.survivors.mean { 1.0 } else { -1.0 };
            FeatureDraw {
                name: f.name.clone(),
                loading: direction * spec.loading,
                survivors: class(f.survivors),
                non_survivors: class(f.non_survivors),
                floor: f.floor,
                ceiling: f.ceiling,
                missing_rate: f.missing_rate,
            }
        })
        .collect()
}

/// One unclipped row: `location + spread * (l * z + sqrt(1 - l^2) * e)`.
fn latent_row(draws: &[FeatureDraw], label: u8, rng: &mut Rng) -> Vec<f64> {
    let z: f64 = StandardNormal.sample(&mut *rng);
    draws
        .iter()
        .map(|d| {
            let c = if label == 1 { d.non_survivors } else { d.survivors };
            let e: f64 = StandardNormal.sample(&mut *rng);
            c.location + c.spread * (d.loading * z + (1.0 - d.loading * d.loading).sqrt() * e)
        })
        .collect()
}

/// Draws the cohort. Row `i` uses its own stream `Rng::new(seed).derive(i)`.
pub fn generate(spec: &GeneratorSpec) -> Result<(Dataset, Manifest)> {
    spec.validate()?;
    let draws = draws(spec);
    let root = Rng::new(spec.seed);
    let d = draws.len();

    let rows: Vec<(u8, Vec<Option<f64>>)> = (0..spec.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = root.derive(i as u64);
            let label = (rng.random::<f64>() < spec.prevalence) as u8;
            let raw = latent_row(&draws, label, &mut rng);
            let cells = raw
                .into_iter()
                .zip(&draws)
                .map(|(v, dr)| {
                    let v = dr.floor.map_or(v, |lo| v.max(lo));
                    let v = dr.ceiling.map_or(v, |hi| v.min(hi));
                    (rng.random::<f64>() >= dr.missing_rate).then_some(v)
                })
                .collect();
            (label, cells)
        })
        .collect();

    let labels: Vec<u8> = rows.iter().map(|r| r.0).collect();
    let columns: Vec<Column> = (0..d)
        .map(|j| Column::from_options(&rows.iter().map(|r| r.1[j]).collect::<Vec<_>>()))
        .collect();
    let n_masked = columns.iter().map(Column::missing_count).sum();
    let row_ids = (0..spec.n).map(|i| format!("{}{:05}", spec.id_prefix, i + 1)).collect();
    let dataset = Dataset::new(spec.schema(), columns, Some(labels.clone()), row_ids)?
        .with_source_columns(Some(LABEL_COLUMN.into()), Some(ID_COLUMN.into()));

    let bayes_sample_size = 20_000;
    let bayes_auroc = bayes_auroc(&draws, spec.prevalence, bayes_sample_size, &root.derive(u64::MAX))?;
    let manifest = Manifest {
        spec: spec.clone(),
        rng: Rng::ALGORITHM.into(),
        draws,
        n_positive: labels.iter().filter(|&&l| l == 1).count(),
        n_masked,
        bayes_auroc,
        bayes_sample_size,
    };
    Ok((dataset, manifest))
}

struct Gaussian {
    mean: DVector<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    log_det: f64,
}

impl Gaussian {
    fn new(draws: &[FeatureDraw], label: u8) -> Result<Self> {
        let d = draws.len();
        let c: Vec<ClassDraw> = draws.iter().map(|dr| if label == 1 { dr.non_survivors } else { dr.survivors }).collect();
        let cov = DMatrix::from_fn(d, d, |i, j| {
            let corr = if i == j { 1.0 } else { draws[i].loading * draws[j].loading };
            c[i].spread * c[j].spread * corr
        });
        let chol = cov.cholesky().ok_or_else(|| Error::Numeric("class covariance is not positive definite".into()))?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Gaussian { mean: DVector::from_iterator(d, c.iter().map(|c| c.location)), chol, log_det })
    }

    fn log_density(&self, x: &DVector<f64>) -> f64 {
        let r = x - &self.mean;
        let q = r.dot(&self.chol.solve(&r));
        -0.5 * (q + self.log_det)
    }
}

fn bayes_auroc(draws: &[FeatureDraw], prevalence: f64, n: usize, rng: &Rng) -> Result<f64> {
    let g0 = Gaussian::new(draws, 0)?;
    let g1 = Gaussian::new(draws, 1)?;
    let n_pos = ((n as f64 * prevalence).round() as usize).clamp(1, n - 1);
    let (scores, labels): (Vec<f64>, Vec<u8>) = (0..n)
        .into_par_iter()
        .map(|i| {
            let label = (i < n_pos) as u8;
            let mut r = rng.derive(i as u64);
            let x = DVector::from_vec(latent_row(draws, label, &mut r));
            (g1.log_density(&x) - g0.log_density(&x), label)
        })
        .unzip();
    auroc(&scores, &labels)
}
