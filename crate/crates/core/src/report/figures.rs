use std::collections::BTreeMap;
use std::fmt::Write;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::svg::{heat_color, y_axis, Svg, PALETTE};
use crate::au::{AU_COUNT, AU_IDS};
use crate::cluster::{ClusterProfile, NoveltyReport, NoveltyVerdict, SweepResult};
use crate::data::AuStatistics;
use crate::probe::{compare_models, percentile, ProbeResult};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FigureStyle {
    /// Per-AU F1 of several embedding methods.
    Fig2,
    /// PSM vs GM per-AU F1 with significance stars.
    Fig3,
    /// Cluster counts, novelty heatmaps and per-cluster AU profiles.
    Fig4,
    /// Transfer approaches: F1 and neutral-face consistency.
    Fig5,
    /// F1 against training epoch.
    Fig6,
    /// AU co-occurrence heatmap.
    Sfig2,
}

impl FigureStyle {
    pub const ALL: [FigureStyle; 6] = [Self::Fig2, Self::Fig3, Self::Fig4, Self::Fig5, Self::Fig6, Self::Sfig2];

    pub fn name(self) -> &'static str {
        match self {
            Self::Fig2 => "fig2",
            Self::Fig3 => "fig3",
            Self::Fig4 => "fig4",
            Self::Fig5 => "fig5",
            Self::Fig6 => "fig6",
            Self::Sfig2 => "sfig2",
        }
    }
}

impl FromStr for FigureStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidParams(format!("unknown report style {s:?}")))
    }
}

/// Rendered report: named SVG images plus a JSON summary and a CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureOutput {
    pub images: Vec<(String, String)>,
    pub json: Value,
    pub csv: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodResult {
    pub name: String,
    pub result: ProbeResult,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Fig2Input {
    methods: Vec<MethodResult>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Fig3Input {
    #[serde(default)]
    title: String,
    psm: Vec<ProbeResult>,
    gm: Vec<ProbeResult>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterSubject {
    pub identity: String,
    pub psm_sweep: SweepResult,
    pub gm_sweep: SweepResult,
    pub psm_profiles: Vec<ClusterProfile>,
    pub gm_profiles: Vec<ClusterProfile>,
    /// `None` when either model produced no clusters.
    pub novelty: Option<NoveltyReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Fig4Input {
    subjects: Vec<ClusterSubject>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferApproach {
    pub name: String,
    pub f1: f64,
    #[serde(default)]
    pub ci: Option<[f64; 2]>,
    #[serde(default)]
    pub neutral_consistency: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Fig5Input {
    subject: String,
    approaches: Vec<TransferApproach>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveSeries {
    pub label: String,
    /// `(epoch, f1)` in increasing epoch order.
    pub points: Vec<(u32, f64)>,
}

impl CurveSeries {
    /// First epoch at which F1 reaches `fraction` of the last value.
    pub fn epochs_to_fraction(&self, fraction: f64) -> Option<u32> {
        let last = self.points.last()?.1;
        self.points.iter().find(|(_, f)| *f >= fraction * last).map(|(e, _)| *e)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Fig6Input {
    series: Vec<CurveSeries>,
}

fn parse<T: DeserializeOwned>(input: &Value) -> Result<T> {
    serde_json::from_value(input.clone()).map_err(|e| {
        let detail = e.to_string();
        let field = detail
            .strip_prefix("missing field `")
            .and_then(|r| r.split('`').next())
            .unwrap_or("(document)")
            .to_string();
        Error::SchemaMismatch { field, detail }
    })
}

pub fn render(style: FigureStyle, input: &Value) -> Result<FigureOutput> {
    match style {
        FigureStyle::Fig2 => fig2(parse(input)?),
        FigureStyle::Fig3 => fig3(parse(input)?),
        FigureStyle::Fig4 => fig4(parse(input)?),
        FigureStyle::Fig5 => fig5(parse(input)?),
        FigureStyle::Fig6 => fig6(parse(input)?),
        FigureStyle::Sfig2 => sfig2(parse(input)?),
    }
}

struct BarSeries {
    name: String,
    values: Vec<Option<f64>>,
    ci: Vec<Option<[f64; 2]>>,
}

/// Grouped bar chart. `notes` are drawn above each category.
fn bar_chart(title: &str, categories: &[String], series: &[BarSeries], notes: &[String], y_max: f64) -> String {
    let group_w = 18.0 * series.len().max(1) as f64 + 14.0;
    let (left, top, plot_h) = (60.0, 40.0, 220.0);
    let width = left + group_w * categories.len() as f64 + 150.0;
    let bottom = top + plot_h;
    let mut svg = Svg::new(width, bottom + 50.0);
    svg.text(width / 2.0, 20.0, 14.0, "middle", title);
    y_axis(&mut svg, left, top, bottom, 0.0, y_max);
    svg.line(left, bottom, left + group_w * categories.len() as f64, bottom, "black");
    let scale = |v: f64| bottom - plot_h * (v / y_max).clamp(0.0, 1.0);
    for (c, cat) in categories.iter().enumerate() {
        let x0 = left + group_w * c as f64 + 7.0;
        for (s, ser) in series.iter().enumerate() {
            let x = x0 + 18.0 * s as f64;
            if let Some(v) = ser.values[c] {
                svg.rect(x, scale(v), 16.0, bottom - scale(v), PALETTE[s % PALETTE.len()]);
            }
            if let Some([lo, hi]) = ser.ci[c] {
                svg.line(x + 8.0, scale(lo), x + 8.0, scale(hi), "black");
                svg.line(x + 4.0, scale(hi), x + 12.0, scale(hi), "black");
                svg.line(x + 4.0, scale(lo), x + 12.0, scale(lo), "black");
            }
        }
        let mid = left + group_w * (c as f64 + 0.5);
        svg.text(mid, bottom + 16.0, 10.0, "middle", cat);
        if let Some(n) = notes.get(c).filter(|n| !n.is_empty()) {
            svg.text(mid, top - 4.0, 12.0, "middle", n);
        }
    }
    let lx = left + group_w * categories.len() as f64 + 20.0;
    for (s, ser) in series.iter().enumerate() {
        let y = top + 18.0 * s as f64;
        svg.rect(lx, y, 12.0, 12.0, PALETTE[s % PALETTE.len()]);
        svg.text(lx + 18.0, y + 10.0, 11.0, "start", &ser.name);
    }
    svg.finish()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v:.6}"))
}

fn au_union<'a>(results: impl Iterator<Item = &'a ProbeResult>) -> Vec<u8> {
    let mut aus: Vec<u8> = results.flat_map(|r| r.per_au_f1.keys().copied()).collect();
    aus.sort_unstable();
    aus.dedup();
    aus
}

fn fig2(input: Fig2Input) -> Result<FigureOutput> {
    if input.methods.is_empty() {
        return Err(Error::SchemaMismatch {
            field: "methods".into(),
            detail: "no methods to plot".into(),
        });
    }
    let aus = au_union(input.methods.iter().map(|m| &m.result));
    let mut cats: Vec<String> = aus.iter().map(|a| format!("AU{a}")).collect();
    cats.push("Mean".into());
    let series: Vec<BarSeries> = input
        .methods
        .iter()
        .map(|m| {
            let mut values: Vec<Option<f64>> = aus.iter().map(|a| m.result.per_au_f1.get(a).copied()).collect();
            values.push(Some(m.result.mean_f1()));
            let mut ci: Vec<Option<[f64; 2]>> = aus
                .iter()
                .map(|a| m.result.bootstrap.get(a).map(|b| [b.ci_low, b.ci_high]))
                .collect();
            ci.push(None);
            BarSeries {
                name: m.name.clone(),
                values,
                ci,
            }
        })
        .collect();
    let mut csv = String::from("au");
    for m in &input.methods {
        let _ = write!(csv, ",{}", m.name);
    }
    csv.push('\n');
    for (i, cat) in cats.iter().enumerate() {
        csv.push_str(cat);
        for s in &series {
            let _ = write!(csv, ",{}", fmt_opt(s.values[i]));
        }
        csv.push('\n');
    }
    let json = json!({
        "style": "fig2",
        "aus": aus,
        "methods": input.methods.iter().map(|m| json!({
            "name": m.name,
            "per_au_f1": m.result.per_au_f1,
            "mean_f1": m.result.mean_f1(),
            "split": m.result.split,
        })).collect::<Vec<_>>(),
    });
    let svg = bar_chart("Per-AU F1 by embedding", &cats, &series, &[], 1.0);
    Ok(FigureOutput {
        images: vec![("fig2.svg".into(), svg)],
        json,
        csv,
    })
}

/// Bootstrap distribution of the across-person mean F1 for one AU.
fn pooled_draws(results: &[ProbeResult], au: u8) -> Vec<f64> {
    let draws: Vec<&Vec<f64>> = results.iter().filter_map(|r| r.bootstrap.get(&au)).map(|b| &b.values).collect();
    let n = draws.iter().map(|d| d.len()).min().unwrap_or(0);
    (0..n)
        .map(|k| draws.iter().map(|d| d[k]).sum::<f64>() / draws.len() as f64)
        .collect()
}

fn mean_over(results: &[ProbeResult], au: u8) -> Option<f64> {
    let v: Vec<f64> = results.iter().filter_map(|r| r.per_au_f1.get(&au).copied()).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn ci_of(draws: &[f64]) -> Option<[f64; 2]> {
    if draws.is_empty() {
        return None;
    }
    let mut s = draws.to_vec();
    s.sort_by(f64::total_cmp);
    Some([percentile(&s, 2.5), percentile(&s, 97.5)])
}

pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

fn fig3(input: Fig3Input) -> Result<FigureOutput> {
    if input.psm.is_empty() || input.gm.is_empty() {
        return Err(Error::SchemaMismatch {
            field: if input.psm.is_empty() { "psm" } else { "gm" }.into(),
            detail: "needs at least one probe result".into(),
        });
    }
    let aus = au_union(input.psm.iter().chain(&input.gm));
    let mut rows = Vec::new();
    let mut csv = String::from("au,psm_f1,psm_ci_low,psm_ci_high,gm_f1,gm_ci_low,gm_ci_high,p_value,significance\n");
    for &au in &aus {
        let (pd, gd) = (pooled_draws(&input.psm, au), pooled_draws(&input.gm, au));
        let (pm, gmm) = (mean_over(&input.psm, au), mean_over(&input.gm, au));
        let (pc, gc) = (ci_of(&pd), ci_of(&gd));
        let p = compare_models(&pd, &gd).ok();
        let star = p.map_or("", stars);
        let _ = writeln!(
            csv,
            "AU{au},{},{},{},{},{},{},{},{star}",
            fmt_opt(pm),
            fmt_opt(pc.map(|c| c[0])),
            fmt_opt(pc.map(|c| c[1])),
            fmt_opt(gmm),
            fmt_opt(gc.map(|c| c[0])),
            fmt_opt(gc.map(|c| c[1])),
            fmt_opt(p),
        );
        rows.push(json!({
            "au": au,
            "psm_f1": pm, "psm_ci": pc,
            "gm_f1": gmm, "gm_ci": gc,
            "p_value": p, "significance": star,
        }));
    }
    let mean_of = |rs: &[ProbeResult]| rs.iter().map(ProbeResult::mean_f1).sum::<f64>() / rs.len() as f64;
    let (psm_mean, gm_mean) = (mean_of(&input.psm), mean_of(&input.gm));
    let _ = writeln!(csv, "Mean,{psm_mean:.6},,,{gm_mean:.6},,,,");

    let mut cats: Vec<String> = aus.iter().map(|a| format!("AU{a}")).collect();
    cats.push("Mean".into());
    let mk = |name: &str, rs: &[ProbeResult], mean: f64| {
        let mut values: Vec<Option<f64>> = aus.iter().map(|&a| mean_over(rs, a)).collect();
        values.push(Some(mean));
        let mut ci: Vec<Option<[f64; 2]>> = aus.iter().map(|&a| ci_of(&pooled_draws(rs, a))).collect();
        ci.push(None);
        BarSeries {
            name: name.into(),
            values,
            ci,
        }
    };
    let series = [mk("PSM", &input.psm, psm_mean), mk("GM", &input.gm, gm_mean)];
    let notes: Vec<String> = rows
        .iter()
        .map(|r| r["significance"].as_str().unwrap_or("").to_string())
        .collect();
    let title = if input.title.is_empty() { "PSM vs GM per-AU F1" } else { &input.title };
    let svg = bar_chart(title, &cats, &series, &notes, 1.0);
    let json = json!({
        "style": "fig3",
        "title": input.title,
        "persons_psm": input.psm.len(),
        "persons_gm": input.gm.len(),
        "splits": input.psm.iter().map(|r| &r.split).collect::<Vec<_>>(),
        "per_au": rows,
        "psm_mean_f1": psm_mean,
        "gm_mean_f1": gm_mean,
        "n_bootstrap": input.psm.iter().flat_map(|r| r.bootstrap.values()).map(|b| b.values.len()).min(),
    });
    Ok(FigureOutput {
        images: vec![("fig3.svg".into(), svg)],
        json,
        csv,
    })
}

fn safe_name(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

fn psm_novel(subject: &ClusterSubject, i: usize) -> bool {
    subject
        .novelty
        .as_ref()
        .and_then(|n| n.psm.get(i))
        .is_some_and(|v| v.is_novel)
}

fn novelty_heatmap(subject: &ClusterSubject, n: &NoveltyReport) -> String {
    let (rows, cols) = (n.normalized.len(), n.normalized.first().map_or(0, Vec::len));
    let cell = 36.0;
    let (left, top) = (70.0, 50.0);
    let mut svg = Svg::new(left + cell * cols as f64 + 40.0, top + cell * rows as f64 + 40.0);
    svg.text(left, 20.0, 13.0, "start", &format!("{}: normalized metric (PSM rows, GM columns)", subject.identity));
    for j in 0..cols {
        let id = subject.gm_profiles.get(j).map_or(j, |p| p.cluster_id);
        svg.text(left + cell * (j as f64 + 0.5), top - 6.0, 10.0, "middle", &format!("GM{id}"));
    }
    for (i, row) in n.normalized.iter().enumerate() {
        let y = top + cell * i as f64;
        let id = subject.psm_profiles.get(i).map_or(i, |p| p.cluster_id);
        svg.text(left - 6.0, y + cell / 2.0 + 4.0, 10.0, "end", &format!("PSM{id}"));
        for (j, &v) in row.iter().enumerate() {
            let x = left + cell * j as f64;
            svg.rect(x, y, cell, cell, &heat_color(Some(v)));
            svg.text(x + cell / 2.0, y + cell / 2.0 + 4.0, 9.0, "middle", &format!("{v:.2}"));
        }
        if psm_novel(subject, i) {
            svg.outline(left - 2.0, y + 1.0, cell * cols as f64 + 4.0, cell - 2.0, "#2ca02c", 3.0);
        }
    }
    svg.finish()
}

fn profile_panels(subject: &ClusterSubject) -> String {
    let (pw, ph) = (260.0, 130.0);
    let k = subject.psm_profiles.len().max(1);
    let mut svg = Svg::new(pw * k.min(4) as f64 + 20.0, (ph + 20.0) * k.div_ceil(4) as f64 + 30.0);
    svg.text(10.0, 18.0, 13.0, "start", &format!("{}: PSM cluster AU frequencies", subject.identity));
    for (i, p) in subject.psm_profiles.iter().enumerate() {
        let x0 = 10.0 + pw * (i % 4) as f64;
        let y0 = 30.0 + (ph + 20.0) * (i / 4) as f64;
        let base = y0 + ph - 20.0;
        svg.text(x0 + 4.0, y0 + 12.0, 11.0, "start", &format!("cluster {} (n={})", p.cluster_id, p.members.len()));
        for (a, &f) in p.au_frequency.iter().enumerate() {
            let x = x0 + 8.0 + 20.0 * a as f64;
            let h = (ph - 40.0) * f.clamp(0.0, 1.0);
            svg.rect(x, base - h, 14.0, h, PALETTE[0]);
            svg.text(x + 7.0, base + 12.0, 7.0, "middle", &AU_IDS[a].to_string());
        }
        if psm_novel(subject, i) {
            svg.outline(x0, y0, pw - 8.0, ph, "#2ca02c", 3.0);
        }
    }
    svg.finish()
}

fn fig4(input: Fig4Input) -> Result<FigureOutput> {
    let mut images = Vec::new();
    let mut csv = String::from("identity,psm_avg_clusters,gm_avg_clusters,psm_profiled,gm_profiled,novel_psm,novel_gm\n");
    let mut subjects = Vec::new();
    for s in &input.subjects {
        let count = |v: Option<&Vec<NoveltyVerdict>>| v.map_or(0, |v| v.iter().filter(|x| x.is_novel).count());
        let novel_psm = count(s.novelty.as_ref().map(|n| &n.psm));
        let novel_gm = count(s.novelty.as_ref().map(|n| &n.gm));
        let _ = writeln!(
            csv,
            "{},{:.6},{:.6},{},{},{novel_psm},{novel_gm}",
            s.identity,
            s.psm_sweep.average_clusters,
            s.gm_sweep.average_clusters,
            s.psm_profiles.len(),
            s.gm_profiles.len()
        );
        let name = safe_name(&s.identity);
        if let Some(n) = &s.novelty {
            images.push((format!("fig4_{name}_heatmap.svg"), novelty_heatmap(s, n)));
        }
        images.push((format!("fig4_{name}_profiles.svg"), profile_panels(s)));
        subjects.push(json!({
            "identity": s.identity,
            "psm_average_clusters": s.psm_sweep.average_clusters,
            "gm_average_clusters": s.gm_sweep.average_clusters,
            "psm_profiles": s.psm_profiles,
            "gm_profiles": s.gm_profiles,
            "raw_metric": s.novelty.as_ref().map(|n| &n.raw),
            "normalized_metric": s.novelty.as_ref().map(|n| &n.normalized),
            "psm_verdicts": s.novelty.as_ref().map(|n| &n.psm),
            "gm_verdicts": s.novelty.as_ref().map(|n| &n.gm),
            "novel_psm": novel_psm,
            "novel_gm": novel_gm,
        }));
    }
    let cats: Vec<String> = input.subjects.iter().map(|s| s.identity.clone()).collect();
    let max = input
        .subjects
        .iter()
        .flat_map(|s| [s.psm_sweep.average_clusters, s.gm_sweep.average_clusters])
        .fold(1.0f64, f64::max)
        .ceil();
    let series = [
        BarSeries {
            name: "PSM".into(),
            values: input.subjects.iter().map(|s| Some(s.psm_sweep.average_clusters)).collect(),
            ci: vec![None; cats.len()],
        },
        BarSeries {
            name: "GM".into(),
            values: input.subjects.iter().map(|s| Some(s.gm_sweep.average_clusters)).collect(),
            ci: vec![None; cats.len()],
        },
    ];
    images.insert(0, ("fig4_counts.svg".into(), bar_chart("Average cluster count", &cats, &series, &[], max)));
    let n = input.subjects.len().max(1) as f64;
    let json = json!({
        "style": "fig4",
        "subjects": subjects,
        "mean_psm_minus_gm_clusters": input.subjects.iter()
            .map(|s| s.psm_sweep.average_clusters - s.gm_sweep.average_clusters).sum::<f64>() / n,
    });
    Ok(FigureOutput { images, json, csv })
}

fn fig5(input: Fig5Input) -> Result<FigureOutput> {
    let cats: Vec<String> = input.approaches.iter().map(|a| a.name.clone()).collect();
    let series = [BarSeries {
        name: "F1".into(),
        values: input.approaches.iter().map(|a| Some(a.f1)).collect(),
        ci: input.approaches.iter().map(|a| a.ci).collect(),
    }];
    let notes: Vec<String> = input
        .approaches
        .iter()
        .map(|a| a.neutral_consistency.map_or(String::new(), |d| format!("d={d:.2}")))
        .collect();
    let svg = bar_chart(&format!("Transfer approaches on {}", input.subject), &cats, &series, &notes, 1.0);
    let mut csv = String::from("approach,f1,ci_low,ci_high,neutral_consistency\n");
    for a in &input.approaches {
        let _ = writeln!(
            csv,
            "{},{:.6},{},{},{}",
            a.name,
            a.f1,
            fmt_opt(a.ci.map(|c| c[0])),
            fmt_opt(a.ci.map(|c| c[1])),
            fmt_opt(a.neutral_consistency)
        );
    }
    let json = json!({ "style": "fig5", "subject": input.subject, "approaches": input.approaches });
    Ok(FigureOutput {
        images: vec![("fig5.svg".into(), svg)],
        json,
        csv,
    })
}

fn fig6(input: Fig6Input) -> Result<FigureOutput> {
    let max_epoch = input
        .series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let (left, top, w, h) = (60.0, 40.0, 420.0, 220.0);
    let mut svg = Svg::new(left + w + 170.0, top + h + 50.0);
    svg.text(left + w / 2.0, 20.0, 14.0, "middle", "Probe F1 during training");
    y_axis(&mut svg, left, top, top + h, 0.0, 1.0);
    svg.line(left, top + h, left + w, top + h, "black");
    svg.text(left + w / 2.0, top + h + 34.0, 11.0, "middle", "epoch");
    for k in 0..=4 {
        let e = max_epoch * k as f64 / 4.0;
        svg.text(left + w * k as f64 / 4.0, top + h + 16.0, 10.0, "middle", &format!("{e:.0}"));
    }
    let mut csv = String::from("series,epoch,f1\n");
    let mut summary = Vec::new();
    for (i, s) in input.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = s
            .points
            .iter()
            .map(|&(e, f)| (left + w * e as f64 / max_epoch, top + h * (1.0 - f.clamp(0.0, 1.0))))
            .collect();
        svg.polyline(&pts, color);
        for &(x, y) in &pts {
            svg.circle(x, y, 2.5, color);
        }
        let ly = top + 18.0 * i as f64;
        svg.rect(left + w + 20.0, ly, 12.0, 12.0, color);
        svg.text(left + w + 38.0, ly + 10.0, 11.0, "start", &s.label);
        for (e, f) in &s.points {
            let _ = writeln!(csv, "{},{e},{f:.6}", s.label);
        }
        summary.push(json!({
            "label": s.label,
            "points": s.points,
            "final_f1": s.points.last().map(|p| p.1),
            "epochs_to_90pct": s.epochs_to_fraction(0.9),
        }));
    }
    Ok(FigureOutput {
        images: vec![("fig6.svg".into(), svg.finish())],
        json: json!({ "style": "fig6", "series": summary }),
        csv,
    })
}

fn sfig2(stats: AuStatistics) -> Result<FigureOutput> {
    let cell = 30.0;
    let (left, top) = (60.0, 60.0);
    let mut svg = Svg::new(left + cell * AU_COUNT as f64 + 20.0, top + cell * AU_COUNT as f64 + 20.0);
    svg.text(left, 20.0, 13.0, "start", "P(row AU active | column AU active)");
    let mut csv = String::from("au");
    for a in AU_IDS {
        let _ = write!(csv, ",AU{a}");
    }
    csv.push('\n');
    for (i, row) in stats.cooccurrence.iter().enumerate() {
        svg.text(left - 6.0, top + cell * (i as f64 + 0.5) + 4.0, 10.0, "end", &format!("AU{}", AU_IDS[i]));
        svg.text(left + cell * (i as f64 + 0.5), top - 6.0, 10.0, "middle", &format!("AU{}", AU_IDS[i]));
        let _ = write!(csv, "AU{}", AU_IDS[i]);
        for (j, v) in row.iter().enumerate() {
            let (x, y) = (left + cell * j as f64, top + cell * i as f64);
            svg.rect(x, y, cell, cell, &heat_color(*v));
            if let Some(v) = v {
                svg.text(x + cell / 2.0, y + cell / 2.0 + 3.0, 8.0, "middle", &format!("{v:.2}"));
            }
            let _ = write!(csv, ",{}", fmt_opt(*v));
        }
        csv.push('\n');
    }
    let freq: BTreeMap<String, f64> = AU_IDS
        .iter()
        .zip(stats.per_au_frequency)
        .map(|(a, f)| (format!("AU{a}"), f))
        .collect();
    let json = json!({
        "style": "sfig2",
        "per_au_frequency": freq,
        "cross_subject_temporal_correlation": stats.cross_subject_temporal_correlation,
        "truncated_to_common_length": stats.truncated_to_common_length,
        "cooccurrence": stats.cooccurrence,
    });
    Ok(FigureOutput {
        images: vec![("sfig2.svg".into(), svg.finish())],
        json,
        csv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fig6_two_series() {
        let input = json!({"series": [
            {"label": "uniform", "points": [[0, 0.2], [10, 0.6], [20, 0.7]]},
            {"label": "curriculum", "points": [[0, 0.3], [10, 0.7], [20, 0.72]]},
        ]});
        let out = render(FigureStyle::Fig6, &input).unwrap();
        assert_eq!(out.images.len(), 1);
        assert_eq!(out.images[0].1.matches("<polyline").count(), 2);
        assert!(out.images[0].1.contains("curriculum"));
        assert_eq!(out.json["series"][1]["epochs_to_90pct"], 10);
        assert_eq!(render(FigureStyle::Fig6, &input).unwrap(), out);
    }

    #[test]
    fn missing_field_is_named() {
        let err = render(FigureStyle::Fig5, &json!({"subject": "SN001"})).unwrap_err();
        match err {
            Error::SchemaMismatch { field, .. } => assert_eq!(field, "approaches"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn style_names_round_trip() {
        for s in FigureStyle::ALL {
            assert_eq!(s.name().parse::<FigureStyle>().unwrap(), s);
        }
        assert!("fig7".parse::<FigureStyle>().is_err());
        assert_eq!(stars(0.0005), "***");
        assert_eq!(stars(0.2), "");
    }
}
