//! Separability statistics, robust scaling and score fusion.
//!
//! Labels are [`Split`]s; every per-method statistic takes an [`Orientation`]
//! that says whether members are expected to score high or low. Scores are
//! negated for `MemberLow` before thresholding, so the decision rule is
//! always "member iff oriented score > τ".

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attack::AttackRecord;
use crate::data::Split;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    MemberHigh,
    MemberLow,
}

impl Orientation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Self::MemberHigh => v,
            Self::MemberLow => -v,
        }
    }
}

/// Linear-interpolation ("type 7") quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted_copy(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// `(w − median) / IQR` with statistics fitted on a calibration sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustScaler {
    pub median: f64,
    pub iqr: f64,
}

impl RobustScaler {
    pub fn fit(calibration: &[f64]) -> Result<Self> {
        if calibration.is_empty() {
            return Err(Error::contract("robust scaling needs at least one value"));
        }
        let s = sorted_copy(calibration);
        Ok(Self {
            median: quantile_sorted(&s, 0.5),
            iqr: quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25),
        })
    }

    /// Zero IQR maps everything to 0.
    pub fn degenerate(&self) -> bool {
        !(self.iqr > 0.0)
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        if self.degenerate() {
            return vec![0.0; values.len()];
        }
        values.iter().map(|v| (v - self.median) / self.iqr).collect()
    }
}

/// Robust scaling fitted on the values themselves; the flag reports a zero IQR.
pub fn robust_scale(values: &[f64]) -> Result<(Vec<f64>, bool)> {
    let s = RobustScaler::fit(values)?;
    Ok((s.apply(values), s.degenerate()))
}

fn class_counts(labels: &[Split]) -> Result<(usize, usize)> {
    let m = labels.iter().filter(|l| **l == Split::Member).count();
    let h = labels.len() - m;
    if m == 0 || h == 0 {
        return Err(Error::contract("metric needs both members and hold-outs"));
    }
    Ok((m, h))
}

fn check_inputs(scores: &[f64], labels: &[Split]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::contract("scores and labels differ in length"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::contract("scores must be finite"));
    }
    class_counts(labels)
}

/// One candidate threshold with its confusion counts.
#[derive(Debug, Clone, Copy)]
struct Cut {
    tau: f64,
    tp: usize,
    fp: usize,
}

/// All distinct decision rules "score > τ", τ ascending: −∞, midpoints
/// between consecutive distinct scores, +∞.
fn sweep(scores: &[f64], labels: &[Split]) -> Vec<Cut> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut tp = labels.iter().filter(|l| **l == Split::Member).count();
    let mut fp = labels.len() - tp;
    let mut cuts = vec![Cut {
        tau: f64::NEG_INFINITY,
        tp,
        fp,
    }];
    let mut i = 0;
    while i < idx.len() {
        let v = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == v {
            match labels[idx[i]] {
                Split::Member => tp -= 1,
                Split::Holdout => fp -= 1,
            }
            i += 1;
        }
        let tau = if i < idx.len() {
            0.5 * (v + scores[idx[i]])
        } else {
            f64::INFINITY
        };
        cuts.push(Cut { tau, tp, fp });
    }
    cuts
}

fn balanced(c: &Cut, m: usize, h: usize) -> f64 {
    0.5 * (c.tp as f64 / m as f64 + (h - c.fp) as f64 / h as f64)
}

/// Best balanced accuracy over all thresholds and the smallest τ achieving it.
pub fn best_threshold(scores: &[f64], labels: &[Split], orientation: Orientation) -> Result<(f64, f64)> {
    let (m, h) = check_inputs(scores, labels)?;
    let s: Vec<f64> = scores.iter().map(|v| orientation.apply(*v)).collect();
    let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for c in sweep(&s, labels) {
        let a = balanced(&c, m, h);
        if a > best.0 {
            best = (a, c.tau);
        }
    }
    Ok(best)
}

/// Attack success rate: `max_τ (TPR(τ) + TNR(τ)) / 2`.
pub fn asr(scores: &[f64], labels: &[Split], orientation: Orientation) -> Result<f64> {
    Ok(best_threshold(scores, labels, orientation)?.0)
}

/// Area under the ROC curve from mid-ranks (Mann–Whitney U); ties count half.
pub fn auc(scores: &[f64], labels: &[Split], orientation: Orientation) -> Result<f64> {
    let (m, h) = check_inputs(scores, labels)?;
    let s: Vec<f64> = scores.iter().map(|v| orientation.apply(*v)).collect();
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && s[idx[j]] == s[idx[i]] {
            j += 1;
        }
        // ranks i+1..=j share their mean
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * idx[i..j].iter().filter(|&&k| labels[k] == Split::Member).count() as f64;
        i = j;
    }
    let u = rank_sum - (m * (m + 1)) as f64 / 2.0;
    Ok(u / (m * h) as f64)
}

/// Largest TPR over thresholds whose empirical FPR is at most `fpr_cap`.
pub fn tpr_at_fpr(scores: &[f64], labels: &[Split], orientation: Orientation, fpr_cap: f64) -> Result<f64> {
    let (m, h) = check_inputs(scores, labels)?;
    let s: Vec<f64> = scores.iter().map(|v| orientation.apply(*v)).collect();
    let allowed = fpr_cap * h as f64 + 1e-9;
    Ok(sweep(&s, labels)
        .iter()
        .filter(|c| c.fp as f64 <= allowed)
        .map(|c| c.tp as f64 / m as f64)
        .fold(0.0, f64::max))
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::contract("KS statistic needs two nonempty samples"));
    }
    let (sa, sb) = (sorted_copy(a), sorted_copy(b));
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < sa.len() || j < sb.len() {
        let v = match (sa.get(i), sb.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < sa.len() && sa[i] <= v {
            i += 1;
        }
        while j < sb.len() && sb[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Gaussian kernel density estimate with Scott's bandwidth.
#[derive(Debug, Clone)]
pub struct Kde {
    points: Vec<f64>,
    pub bandwidth: f64,
}

const FLOOR: f64 = 1e-12;
pub const KL_GRID: usize = 512;
/// Grid half-margin, in bandwidths, for divergence integration.
pub const KL_MARGIN: f64 = 3.0;
/// Curves for plotting extend further so they integrate to one within 1e-3.
pub const CURVE_MARGIN: f64 = 4.0;

impl Kde {
    /// Bandwidth `n^(−1/5)·s` with the sample standard deviation `s`
    /// (ddof 1). A single point or a constant sample falls back to
    /// `s = 1e-3·max(1, |mean|)`.
    pub fn new(points: &[f64]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::contract("KDE needs at least one point"));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::contract("KDE points must be finite"));
        }
        let n = points.len() as f64;
        let mean = points.iter().sum::<f64>() / n;
        let mut std = if points.len() > 1 {
            (points.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        if !(std > 0.0) {
            std = 1e-3 * mean.abs().max(1.0);
        }
        Ok(Self {
            points: points.to_vec(),
            bandwidth: n.powf(-0.2) * std,
        })
    }

    pub fn density(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * h * self.points.len() as f64);
        self.points
            .iter()
            .map(|p| {
                let u = (x - p) / h;
                (-0.5 * u * u).exp()
            })
            .sum::<f64>()
            * norm
    }

    fn min_max(&self) -> (f64, f64) {
        let lo = self.points.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.points.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

/// `n` evenly spaced points over `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    let dx = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + i as f64 * dx).collect()
}

fn shared_grid(a: &Kde, b: &Kde, n: usize, margin: f64) -> Vec<f64> {
    let (la, ha) = a.min_max();
    let (lb, hb) = b.min_max();
    let h = a.bandwidth.max(b.bandwidth);
    linspace(la.min(lb) - margin * h, ha.max(hb) + margin * h, n)
}

/// `KL(a ‖ b)` between the two samples' KDEs, by a Riemann sum on a shared
/// 512-point grid with densities floored at 1e-12 and renormalized.
pub fn kl_divergence_kde(a: &[f64], b: &[f64]) -> Result<f64> {
    let (ka, kb) = (Kde::new(a)?, Kde::new(b)?);
    let grid = shared_grid(&ka, &kb, KL_GRID, KL_MARGIN);
    let dx = grid[1] - grid[0];
    let mut p: Vec<f64> = grid.iter().map(|&x| ka.density(x).max(FLOOR)).collect();
    let mut q: Vec<f64> = grid.iter().map(|&x| kb.density(x).max(FLOOR)).collect();
    for v in [&mut p, &mut q] {
        let z = v.iter().sum::<f64>() * dx;
        v.iter_mut().for_each(|d| *d /= z);
    }
    Ok(p.iter().zip(&q).map(|(p, q)| p * (p / q).ln()).sum::<f64>() * dx)
}

/// KDE of `samples` on `grid_points` evenly spaced points.
pub fn kde_curve(samples: &[f64], grid_points: usize) -> Result<Vec<(f64, f64)>> {
    let k = Kde::new(samples)?;
    if grid_points < 2 {
        return Err(Error::contract("a KDE curve needs at least two grid points"));
    }
    let grid = shared_grid(&k, &k, grid_points, CURVE_MARGIN);
    Ok(grid.into_iter().map(|x| (x, k.density(x))).collect())
}

/// Member and hold-out KDEs on one shared grid: `(x, member, holdout)` rows.
pub fn kde_pair(member: &[f64], holdout: &[f64], grid_points: usize) -> Result<Vec<(f64, f64, f64)>> {
    let (km, kh) = (Kde::new(member)?, Kde::new(holdout)?);
    if grid_points < 2 {
        return Err(Error::contract("a KDE curve needs at least two grid points"));
    }
    let grid = shared_grid(&km, &kh, grid_points, CURVE_MARGIN);
    Ok(grid.into_iter().map(|x| (x, km.density(x), kh.density(x))).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub values: Vec<f64>,
    pub orientation: Orientation,
}

/// Per-sample scores for a set of queries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub ids: Vec<u64>,
    pub labels: Vec<Split>,
    pub columns: BTreeMap<String, Column>,
}

impl ScoreTable {
    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .get(name)
            .ok_or_else(|| Error::config("column", format!("no score column `{name}`")))
    }

    pub fn insert(&mut self, name: &str, values: Vec<f64>, orientation: Orientation) -> Result<()> {
        if values.len() != self.ids.len() {
            return Err(Error::contract(format!("column `{name}` has the wrong length")));
        }
        self.columns.insert(name.to_string(), Column { values, orientation });
        Ok(())
    }

    /// Scores of successful records. Ground-truth columns appear only when
    /// every record has them.
    pub fn from_records(records: &[AttackRecord]) -> Self {
        let ok: Vec<&AttackRecord> = records.iter().filter(|r| r.ok()).collect();
        let mut t = ScoreTable {
            ids: ok.iter().map(|r| r.sample_id).collect(),
            labels: ok.iter().map(|r| r.split).collect(),
            columns: BTreeMap::new(),
        };
        let mut add = |name: &str, f: &dyn Fn(&AttackRecord) -> f64, o: Orientation| {
            t.columns.insert(
                name.to_string(),
                Column {
                    values: ok.iter().map(|r| f(r)).collect(),
                    orientation: o,
                },
            );
        };
        use Orientation::*;
        add("score_mofit", &|r| r.score_mofit, MemberHigh);
        add("score_clid_approx", &|r| r.score_clid_approx, MemberLow);
        add("score_loss_baseline", &|r| r.score_loss_baseline, MemberLow);
        add("l_uncond", &|r| r.l_uncond, MemberLow);
        add("l_cond_approx", &|r| r.l_cond_approx, MemberLow);
        add("l_cond_phi_star", &|r| r.l_cond_phi_star, MemberLow);
        if !ok.is_empty() && ok.iter().all(|r| r.score_clid_gt.is_some()) {
            add("score_clid_gt", &|r| r.score_clid_gt.unwrap_or(f64::NAN), MemberLow);
            add("l_cond_gt", &|r| r.l_cond_gt.unwrap_or(f64::NAN), MemberLow);
        }
        t
    }

    pub fn split_values(&self, name: &str, split: Split) -> Result<Vec<f64>> {
        let c = self.column(name)?;
        Ok(c.values
            .iter()
            .zip(&self.labels)
            .filter(|(_, l)| **l == split)
            .map(|(v, _)| *v)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Calibration {
    Pooled,
    /// Fit the scalers on the first `fraction` of each class, in table order.
    Subset {
        fraction: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub gamma_step: f64,
    pub aux_column: String,
    pub calibration: Calibration,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            gamma_step: 0.05,
            aux_column: "l_uncond".into(),
            calibration: Calibration::Pooled,
        }
    }
}

impl FusionConfig {
    /// Number of γ steps in [0, 1].
    pub fn gamma_count(&self) -> Result<usize> {
        let k = (1.0 / self.gamma_step).round();
        if !(self.gamma_step > 0.0) || (k * self.gamma_step - 1.0).abs() > 1e-9 {
            return Err(Error::config("fusion.gamma_step", "must divide 1 evenly"));
        }
        Ok(k as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionOutcome {
    pub gamma: f64,
    pub tau: f64,
    pub asr: f64,
    pub decisions: Vec<bool>,
    /// ASR at every γ on the grid.
    pub sweep: Vec<(f64, f64)>,
    pub degenerate_flags: Vec<String>,
}

/// Fused score `γ·R(score_mofit) + (1−γ)·R(−aux)` for one γ.
pub fn fused_scores(mofit: &[f64], neg_aux: &[f64], gamma: f64) -> Vec<f64> {
    mofit
        .iter()
        .zip(neg_aux)
        .map(|(m, a)| gamma * m + (1.0 - gamma) * a)
        .collect()
}

fn calibration_rows(labels: &[Split], cal: Calibration) -> Result<Vec<usize>> {
    match cal {
        Calibration::Pooled => Ok((0..labels.len()).collect()),
        Calibration::Subset { fraction } => {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::config("fusion.calibration.fraction", "must be in (0, 1]"));
            }
            let mut rows = Vec::new();
            for split in [Split::Member, Split::Holdout] {
                let of: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == split).collect();
                let k = ((of.len() as f64 * fraction).ceil() as usize).clamp(1, of.len().max(1));
                rows.extend(of.into_iter().take(k));
            }
            rows.sort_unstable();
            Ok(rows)
        }
    }
}

/// Sweeps γ over the grid and τ over all midpoints, maximizing ASR; ties go
/// to the smaller γ, then the smaller τ.
pub fn fuse_and_decide(table: &ScoreTable, cfg: &FusionConfig) -> Result<FusionOutcome> {
    let k = cfg.gamma_count()?;
    let mofit = &table.column("score_mofit")?.values;
    let aux = &table.column(&cfg.aux_column)?.values;
    let neg_aux: Vec<f64> = aux.iter().map(|v| -v).collect();
    let rows = calibration_rows(&table.labels, cfg.calibration)?;
    let pick = |v: &[f64]| -> Vec<f64> { rows.iter().map(|&i| v[i]).collect() };
    let sm = RobustScaler::fit(&pick(mofit))?;
    let sa = RobustScaler::fit(&pick(&neg_aux))?;
    let mut flags = Vec::new();
    if sm.degenerate() {
        flags.push("score_mofit".to_string());
    }
    if sa.degenerate() {
        flags.push(cfg.aux_column.clone());
    }
    let (rm, ra) = (sm.apply(mofit), sa.apply(&neg_aux));
    let mut best: Option<(f64, f64, f64)> = None;
    let mut sweep_out = Vec::with_capacity(k + 1);
    for i in 0..=k {
        let gamma = i as f64 / k as f64;
        let fused = fused_scores(&rm, &ra, gamma);
        let (a, tau) = best_threshold(&fused, &table.labels, Orientation::MemberHigh)?;
        sweep_out.push((gamma, a));
        if best.is_none_or(|b| a > b.2) {
            best = Some((gamma, tau, a));
        }
    }
    let (gamma, tau, a) = best.expect("at least one gamma");
    let fused = fused_scores(&rm, &ra, gamma);
    Ok(FusionOutcome {
        gamma,
        tau,
        asr: a,
        decisions: fused.iter().map(|f| *f > tau).collect(),
        sweep: sweep_out,
        degenerate_flags: flags,
    })
}

/// Summary statistics for one scoring method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub orientation: Orientation,
    pub asr: f64,
    pub auc: f64,
    pub tpr_at_1fpr: f64,
    pub ks_member_vs_holdout: f64,
    pub kl_member_vs_holdout: f64,
    pub gamma_star: Option<f64>,
    pub tau_star: Option<f64>,
    pub degenerate_flags: Vec<String>,
}

pub fn method_report(table: &ScoreTable, column: &str) -> Result<MethodReport> {
    let c = table.column(column)?;
    let (a, tau) = best_threshold(&c.values, &table.labels, c.orientation)?;
    let mem = table.split_values(column, Split::Member)?;
    let hold = table.split_values(column, Split::Holdout)?;
    let mut flags = Vec::new();
    if RobustScaler::fit(&c.values)?.degenerate() {
        flags.push(column.to_string());
    }
    Ok(MethodReport {
        method: column.to_string(),
        orientation: c.orientation,
        asr: a,
        auc: auc(&c.values, &table.labels, c.orientation)?,
        tpr_at_1fpr: tpr_at_fpr(&c.values, &table.labels, c.orientation, 0.01)?,
        ks_member_vs_holdout: ks_statistic(&mem, &hold)?,
        kl_member_vs_holdout: kl_divergence_kde(&mem, &hold)?,
        gamma_star: None,
        tau_star: Some(tau),
        degenerate_flags: flags,
    })
}

/// Report for the fused score; separability statistics use the fused values
/// at the selected γ.
pub fn fused_report(table: &ScoreTable, cfg: &FusionConfig) -> Result<(MethodReport, FusionOutcome)> {
    let out = fuse_and_decide(table, cfg)?;
    let mofit = &table.column("score_mofit")?.values;
    let neg_aux: Vec<f64> = table.column(&cfg.aux_column)?.values.iter().map(|v| -v).collect();
    let rows = calibration_rows(&table.labels, cfg.calibration)?;
    let pick = |v: &[f64]| -> Vec<f64> { rows.iter().map(|&i| v[i]).collect() };
    let rm = RobustScaler::fit(&pick(mofit))?.apply(mofit);
    let ra = RobustScaler::fit(&pick(&neg_aux))?.apply(&neg_aux);
    let fused = fused_scores(&rm, &ra, out.gamma);
    let split = |s: Split| -> Vec<f64> {
        fused
            .iter()
            .zip(&table.labels)
            .filter(|(_, l)| **l == s)
            .map(|(v, _)| *v)
            .collect()
    };
    let report = MethodReport {
        method: format!("fused(score_mofit,{})", cfg.aux_column),
        orientation: Orientation::MemberHigh,
        asr: out.asr,
        auc: auc(&fused, &table.labels, Orientation::MemberHigh)?,
        tpr_at_1fpr: tpr_at_fpr(&fused, &table.labels, Orientation::MemberHigh, 0.01)?,
        ks_member_vs_holdout: ks_statistic(&split(Split::Member), &split(Split::Holdout))?,
        kl_member_vs_holdout: kl_divergence_kde(&split(Split::Member), &split(Split::Holdout))?,
        gamma_star: Some(out.gamma),
        tau_star: Some(out.tau),
        degenerate_flags: out.degenerate_flags.clone(),
    };
    Ok((report, out))
}

/// Conditioning sensitivity of one group: how far the conditional loss moves
/// when the ground-truth condition is replaced by an alternative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    pub split: Split,
    pub ks_gt_vs_alt: f64,
    /// Direction: KL(ground-truth-conditioned ‖ alternative-conditioned).
    pub kl_gt_vs_alt: f64,
    /// Mean of `L_cond(alt) − L_cond(gt)`.
    pub mean_delta: f64,
}

pub fn sensitivity(table: &ScoreTable, gt: &str, alt: &str, split: Split) -> Result<Sensitivity> {
    let g = table.split_values(gt, split)?;
    let a = table.split_values(alt, split)?;
    let n = g.len().max(1) as f64;
    Ok(Sensitivity {
        split,
        ks_gt_vs_alt: ks_statistic(&g, &a)?,
        kl_gt_vs_alt: kl_divergence_kde(&g, &a)?,
        mean_delta: a.iter().zip(&g).map(|(a, g)| a - g).sum::<f64>() / n,
    })
}
