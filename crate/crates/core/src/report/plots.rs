use serde::{Deserialize, Serialize};

use super::svg::{render_panels, render_survival_svg, Axes, Curve, CurveKind, Panel};
use super::{AnalysisReport, KmGroup, Outcome, ParametricGroup};
use crate::diagnostics::{lowess, LOWESS_SPAN};
use crate::error::Result;
use crate::parametric::{Family, ParametricModel, Quantity};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plot {
    pub file_name: String,
    pub svg: String,
}

fn slug(label: &str) -> String {
    let s: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    if s.is_empty() {
        "group".into()
    } else {
        s
    }
}

fn model_curve(model: &ParametricModel, end: f64, which: Quantity) -> Curve {
    let label = match model.family {
        Family::Weibull3P => "Weibull (3P)",
        Family::Lognormal3P => "Lognormal (3P)",
    };
    let mut c = Curve::sampled(label, 0.0, end, |t| {
        model.eval(t, which).unwrap_or(f64::NAN)
    });
    c.points.retain(|p| p.1.is_finite());
    c
}

fn fitted(pg: &ParametricGroup) -> impl Iterator<Item = &ParametricModel> {
    pg.fits.iter().filter_map(|f| f.outcome.ok())
}

/// Every chart the report supports: KM curves for all groups, per-group
/// parametric survival/CDF/density charts, and per-group residual panels.
/// Sections that were skipped or failed contribute nothing.
pub fn report_plots(report: &AnalysisReport) -> Result<Vec<Plot>> {
    let mut out = Vec::new();
    let km: Vec<(&str, &KmGroup)> = match &report.km {
        Outcome::Ok(groups) => groups
            .iter()
            .filter_map(|g| g.outcome.ok().map(|k| (g.label.as_str(), k)))
            .collect(),
        _ => Vec::new(),
    };
    let end = km.iter().map(|(_, k)| k.max_time).fold(0.0, f64::max);
    if !km.is_empty() && end > 0.0 {
        let curves: Vec<Curve> = km.iter().map(|(l, k)| Curve::km(*l, &k.curve, end)).collect();
        let axes = Axes::probability("Kaplan-Meier survival", "Months", "Survival probability").with_x_range(0.0, end);
        out.push(Plot {
            file_name: "km.svg".into(),
            svg: render_survival_svg(&curves, &axes)?,
        });
    }

    if let Outcome::Ok(groups) = &report.parametric {
        for g in groups {
            let Outcome::Ok(pg) = &g.outcome else { continue };
            if fitted(pg).next().is_none() {
                continue;
            }
            let kmg = km.iter().find(|(l, _)| *l == g.label).map(|(_, k)| *k);
            let end = kmg.map_or_else(
                || fitted(pg).map(|m| m.quantile(0.99).unwrap_or(0.0)).fold(0.0, f64::max),
                |k| k.max_time,
            );
            if !(end > 0.0) {
                continue;
            }
            let name = slug(&g.label);

            let mut curves: Vec<Curve> = Vec::new();
            if let Some(k) = kmg {
                curves.push(Curve::km("Kaplan-Meier", &k.curve, end));
            }
            curves.extend(fitted(pg).map(|m| model_curve(m, end, Quantity::Survival)));
            let axes = Axes::probability(format!("{}: survival", g.label), "Months", "Survival probability")
                .with_x_range(0.0, end);
            out.push(Plot {
                file_name: format!("survival_{name}.svg"),
                svg: render_survival_svg(&curves, &axes)?,
            });

            let mut curves: Vec<Curve> = Vec::new();
            if let Some(k) = kmg {
                let mut c = Curve::km("1 - Kaplan-Meier", &k.curve, end);
                c.points.iter_mut().for_each(|p| p.1 = 1.0 - p.1);
                curves.push(c);
            }
            curves.extend(fitted(pg).map(|m| model_curve(m, end, Quantity::Cdf)));
            let axes = Axes::probability(format!("{}: cumulative distribution", g.label), "Months", "Probability")
                .with_x_range(0.0, end);
            out.push(Plot {
                file_name: format!("cdf_{name}.svg"),
                svg: render_survival_svg(&curves, &axes)?,
            });

            let curves: Vec<Curve> = fitted(pg).map(|m| model_curve(m, end, Quantity::Pdf)).collect();
            let mut axes = Axes::new(format!("{}: density", g.label), "Months", "Density").with_x_range(0.0, end);
            let top = curves
                .iter()
                .flat_map(|c| c.points.iter().map(|p| p.1))
                .fold(0.0, f64::max);
            axes.y_range = Some((0.0, if top > 0.0 { top * 1.05 } else { 1.0 }));
            out.push(Plot {
                file_name: format!("pdf_{name}.svg"),
                svg: render_survival_svg(&curves, &axes)?,
            });
        }
    }

    if let Outcome::Ok(groups) = &report.diagnostics {
        for g in groups {
            let Outcome::Ok(d) = &g.outcome else { continue };
            let name = slug(&g.label);

            if let Outcome::Ok(sch) = &d.scaled_schoenfeld {
                let set = &sch.residuals;
                let mut panels = Vec::new();
                for (j, col) in set.columns.iter().enumerate() {
                    let y = set.column(j);
                    let mut curves = vec![Curve::new(
                        "residual",
                        CurveKind::Points,
                        set.times.iter().copied().zip(y.iter().copied()).collect(),
                    )];
                    if let Ok(s) = lowess(&set.times, &y, LOWESS_SPAN, 3) {
                        let mut pts: Vec<(f64, f64)> = set.times.iter().copied().zip(s).collect();
                        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                        curves.push(Curve::new("lowess", CurveKind::Smooth, pts));
                    }
                    panels.push(Panel {
                        axes: Axes::new(col.clone(), "Months", "Scaled Schoenfeld residual"),
                        curves,
                    });
                }
                if !panels.is_empty() {
                    out.push(Plot {
                        file_name: format!("schoenfeld_{name}.svg"),
                        svg: render_panels(&format!("{}: scaled Schoenfeld residuals", g.label), &panels)?,
                    });
                }
            }

            if let Outcome::Ok(trends) = &d.martingale_trends {
                let panels: Vec<Panel> = trends
                    .iter()
                    .filter(|t| !t.x.is_empty())
                    .map(|t| {
                        let mut axes = Axes::new(t.variable.clone(), t.variable.clone(), "Martingale residual");
                        axes.reference_line = Some(0.0);
                        Panel {
                            axes,
                            curves: vec![
                                Curve::new(
                                    "residual",
                                    CurveKind::Points,
                                    t.x.iter().copied().zip(t.residual.iter().copied()).collect(),
                                ),
                                Curve::new(
                                    "lowess",
                                    CurveKind::Smooth,
                                    t.x.iter().copied().zip(t.smooth.iter().copied()).collect(),
                                ),
                            ],
                        }
                    })
                    .collect();
                if !panels.is_empty() {
                    out.push(Plot {
                        file_name: format!("martingale_{name}.svg"),
                        svg: render_panels(&format!("{}: martingale residuals", g.label), &panels)?,
                    });
                }
            }

            if let Outcome::Ok(dev) = &d.deviance {
                let set = &dev.residuals.residuals;
                if !set.values.is_empty() {
                    let pts = set.times.iter().copied().zip(set.column(0)).collect();
                    let mut axes = Axes::new(format!("{}: deviance residuals", g.label), "Months", "Deviance residual");
                    axes.reference_line = Some(0.0);
                    out.push(Plot {
                        file_name: format!("deviance_{name}.svg"),
                        svg: render_survival_svg(&[Curve::new("residual", CurveKind::Points, pts)], &axes)?,
                    });
                }
            }

            if let Outcome::Ok(cs) = &d.cox_snell {
                if !cs.check.curve.is_empty() {
                    let mut pts = vec![(0.0, 0.0)];
                    pts.extend(cs.check.curve.iter().copied());
                    let mut axes = Axes::new(
                        format!("{}: Cox-Snell residuals", g.label),
                        "Cox-Snell residual",
                        "Nelson-Aalen cumulative hazard",
                    );
                    axes.diagonal = true;
                    out.push(Plot {
                        file_name: format!("coxsnell_{name}.svg"),
                        svg: render_survival_svg(&[Curve::new("cumulative hazard", CurveKind::Step, pts)], &axes)?,
                    });
                }
            }
        }
    }
    Ok(out)
}
