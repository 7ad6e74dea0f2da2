use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{chamfer, dice, extract_boundaries, paired_t_test, ChamferMode, TTest};
use crate::data::{Sample, NUM_LAYERS};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for fewer than two values.
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std =
            if n < 2 { 0.0 } else { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() };
        Self { mean, std, n }
    }
}

/// Scores of one patient: means over its samples, per layer `1..=6`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatientScores {
    pub patient: u32,
    pub dice: [f64; NUM_LAYERS],
    /// `None` when the layer was missing from prediction or ground truth in
    /// every sample of the patient.
    pub chamfer: [Option<f64>; NUM_LAYERS],
    pub chamfer_gt_to_pred: [Option<f64>; NUM_LAYERS],
    pub chamfer_pred_to_gt: [Option<f64>; NUM_LAYERS],
    /// Samples in which the layer was missing from either map.
    pub missing: [usize; NUM_LAYERS],
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerStats {
    pub class: u8,
    pub dice: Stat,
    pub chamfer: Stat,
    pub chamfer_gt_to_pred: Stat,
    pub chamfer_pred_to_gt: Stat,
    pub missing: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub layers: Vec<LayerStats>,
    pub patients: Vec<PatientScores>,
    pub samples: usize,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Scores every prediction against its ground truth, averages per patient,
/// then summarises across patients.
pub fn evaluate(preds: &[Vec<u8>], gts: &[&Sample]) -> Result<EvalReport> {
    if preds.len() != gts.len() {
        return Err(Error::config(format!("{} predictions for {} ground-truth samples", preds.len(), gts.len())));
    }
    if preds.is_empty() {
        return Err(Error::config("nothing to evaluate"));
    }
    #[derive(Default)]
    struct Acc {
        dice: [Vec<f64>; NUM_LAYERS],
        sym: [Vec<f64>; NUM_LAYERS],
        gp: [Vec<f64>; NUM_LAYERS],
        pg: [Vec<f64>; NUM_LAYERS],
        missing: [usize; NUM_LAYERS],
    }
    let mut per: BTreeMap<u32, Acc> = BTreeMap::new();
    for (pred, gt) in preds.iter().zip(gts) {
        if pred.len() != gt.labels.len() {
            return Err(Error::config(format!(
                "prediction of {} pixels for a {}x{} sample",
                pred.len(),
                gt.height,
                gt.width
            )));
        }
        let acc = per.entry(gt.patient).or_default();
        let bp = extract_boundaries(pred, gt.height, gt.width);
        let bg = extract_boundaries(&gt.labels, gt.height, gt.width);
        for k in 0..NUM_LAYERS {
            acc.dice[k].push(dice(pred, &gt.labels, k as u8 + 1));
            match chamfer(&bg[k].points, &bp[k].points, ChamferMode::Transform) {
                Some(c) => {
                    acc.sym[k].push(c.symmetric);
                    acc.gp[k].push(c.a_to_b);
                    acc.pg[k].push(c.b_to_a);
                }
                None => acc.missing[k] += 1,
            }
        }
    }
    let patients: Vec<PatientScores> = per
        .into_iter()
        .map(|(patient, a)| PatientScores {
            patient,
            dice: std::array::from_fn(|k| mean(&a.dice[k]).expect("one dice per sample")),
            chamfer: std::array::from_fn(|k| mean(&a.sym[k])),
            chamfer_gt_to_pred: std::array::from_fn(|k| mean(&a.gp[k])),
            chamfer_pred_to_gt: std::array::from_fn(|k| mean(&a.pg[k])),
            missing: a.missing,
        })
        .collect();
    let layers = (0..NUM_LAYERS)
        .map(|k| {
            let col = |f: &dyn Fn(&PatientScores) -> Option<f64>| {
                Stat::of(&patients.iter().filter_map(f).collect::<Vec<_>>())
            };
            LayerStats {
                class: k as u8 + 1,
                dice: col(&|p| Some(p.dice[k])),
                chamfer: col(&|p| p.chamfer[k]),
                chamfer_gt_to_pred: col(&|p| p.chamfer_gt_to_pred[k]),
                chamfer_pred_to_gt: col(&|p| p.chamfer_pred_to_gt[k]),
                missing: patients.iter().map(|p| p.missing[k]).sum(),
            }
        })
        .collect();
    Ok(EvalReport { layers, patients, samples: preds.len() })
}

impl EvalReport {
    /// Mean over layers of the per-layer mean Dice.
    pub fn mean_dice(&self) -> f64 {
        self.layers.iter().map(|l| l.dice.mean).sum::<f64>() / self.layers.len() as f64
    }

    /// Mean over layers with a defined Chamfer mean.
    pub fn mean_chamfer(&self) -> f64 {
        let v: Vec<f64> = self.layers.iter().map(|l| l.chamfer.mean).filter(|m| m.is_finite()).collect();
        mean(&v).unwrap_or(f64::NAN)
    }

    /// `layer,metric,mean,std,n`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,metric,mean,std,n\n");
        for l in &self.layers {
            for (name, st) in [
                ("dice", l.dice),
                ("chamfer", l.chamfer),
                ("chamfer_gt_to_pred", l.chamfer_gt_to_pred),
                ("chamfer_pred_to_gt", l.chamfer_pred_to_gt),
            ] {
                let _ = writeln!(s, "{},{name},{},{},{}", l.class, st.mean, st.std, st.n);
            }
            let _ = writeln!(s, "{},missing,{},0,{}", l.class, l.missing, self.samples);
        }
        s
    }

    /// `patient,layer,dice,chamfer`; an empty Chamfer field marks a missing layer.
    pub fn scores_csv(&self) -> String {
        let mut s = String::from("patient,layer,dice,chamfer\n");
        for p in &self.patients {
            for k in 0..NUM_LAYERS {
                let c = p.chamfer[k].map(|c| c.to_string()).unwrap_or_default();
                let _ = writeln!(s, "{},{},{},{c}", p.patient, k + 1, p.dice[k]);
            }
        }
        s
    }
}

/// Reads a `patient,layer,dice,chamfer` file back into per-patient scores.
/// Directed Chamfer values and missing counts are not stored there.
pub fn parse_scores_csv(text: &str) -> Result<Vec<PatientScores>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["patient", "layer", "dice", "chamfer"] {
        return Err(Error::Format(format!("unexpected score header {:?}", headers)));
    }
    let mut out: BTreeMap<u32, PatientScores> = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        let bad = |what: &str| Error::Format(format!("score row {}: bad {what}", line + 2));
        let patient: u32 = rec[0].parse().map_err(|_| bad("patient"))?;
        let layer: usize = rec[1].parse().map_err(|_| bad("layer"))?;
        if !(1..=NUM_LAYERS).contains(&layer) {
            return Err(bad("layer"));
        }
        let d: f64 = rec[2].parse().map_err(|_| bad("dice"))?;
        let c: Option<f64> = if rec[3].is_empty() { None } else { Some(rec[3].parse().map_err(|_| bad("chamfer"))?) };
        let e = out.entry(patient).or_insert_with(|| PatientScores {
            patient,
            dice: [f64::NAN; NUM_LAYERS],
            chamfer: [None; NUM_LAYERS],
            chamfer_gt_to_pred: [None; NUM_LAYERS],
            chamfer_pred_to_gt: [None; NUM_LAYERS],
            missing: [0; NUM_LAYERS],
        });
        e.dice[layer - 1] = d;
        e.chamfer[layer - 1] = c;
    }
    let v: Vec<PatientScores> = out.into_values().collect();
    if let Some(p) = v.iter().find(|p| p.dice.iter().any(|d| d.is_nan())) {
        return Err(Error::Format(format!("patient {} lacks some layers", p.patient)));
    }
    Ok(v)
}

/// Paired tests of two methods over (patient, layer) pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub dice: TTest,
    /// Only pairs where both methods have a Chamfer value.
    pub chamfer: TTest,
}

impl Comparison {
    /// Two-row p-value table in the layout `p (Dice)` / `p (Chamfer)`.
    pub fn table(&self, pair_label: &str) -> String {
        let w = pair_label.len().max(10);
        format!(
            "{:<12}{pair_label:>w$}\n{:<12}{:>w$.4e}\n{:<12}{:>w$.4e}\n",
            "", "p (Dice)", self.dice.p, "p (Chamfer)", self.chamfer.p,
        )
    }
}

pub fn compare(a: &[PatientScores], b: &[PatientScores]) -> Result<Comparison> {
    let ids = |s: &[PatientScores]| s.iter().map(|p| p.patient).collect::<Vec<_>>();
    if ids(a) != ids(b) {
        return Err(Error::config(format!("patient sets differ: {:?} vs {:?}", ids(a), ids(b))));
    }
    let (mut da, mut db, mut ca, mut cb) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (pa, pb) in a.iter().zip(b) {
        for k in 0..NUM_LAYERS {
            da.push(pa.dice[k]);
            db.push(pb.dice[k]);
            if let (Some(x), Some(y)) = (pa.chamfer[k], pb.chamfer[k]) {
                ca.push(x);
                cb.push(y);
            }
        }
    }
    Ok(Comparison { dice: paired_t_test(&da, &db)?, chamfer: paired_t_test(&ca, &cb)? })
}
