//! Survival statistics: concordance, Kaplan-Meier, log-rank, median-risk
//! stratification and the per-dimension correlation report.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::tensor::Tensor;


/// Observed follow-up for one subject.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Outcome {
    /// Days; positive.
    pub time: f64,
    /// True for an observed death, false when censored.
    pub event: bool,
}

impl Outcome {
    pub fn new(time: f64, event: bool) -> Self {
        Self { time, event }
    }
}

/// Harrell's concordance index.
///
/// A pair is comparable when the subject with the shorter time had an
/// event; equal times are comparable only when exactly one of the two had
/// an event, which then counts as the earlier. Tied risks score one half.
pub fn c_index(risks: &[f64], outcomes: &[Outcome]) -> Result<f64> {
    if risks.len() != outcomes.len() {
        return Err(Error::Shape {
            op: "c_index",
            lhs: vec![risks.len()],
            rhs: vec![outcomes.len()],
        });
    }
    let n = risks.len();
    let mut score = 0.0;
    let mut pairs = 0u64;
    for i in 0..n {
        if !outcomes[i].event {
            continue;
        }
        for j in 0..n {
            let (ti, tj) = (outcomes[i].time, outcomes[j].time);
            if ti < tj || (ti == tj && !outcomes[j].event) {
                pairs += 1;
                if risks[i] > risks[j] {
                    score += 1.0;
                } else if risks[i] == risks[j] {
                    score += 0.5;
                }
            }
        }
    }
    if pairs == 0 {
        return Err(Error::NoComparablePairs(n));
    }
    Ok(score / pairs as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KmPoint {
    pub time: f64,
    /// Estimated survival just after `time`.
    pub survival: f64,
    pub at_risk: usize,
    pub events: usize,
}

/// Product-limit estimate, one point per distinct event time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KmCurve {
    pub points: Vec<KmPoint>,
}

impl KmCurve {
    /// S(t): one before the first event time.
    pub fn survival_at(&self, t: f64) -> f64 {
        self.points
            .iter()
            .take_while(|p| p.time <= t)
            .last()
            .map_or(1.0, |p| p.survival)
    }

    /// Non-increasing and within [0, 1].
    pub fn is_valid(&self) -> bool {
        let mut prev = 1.0;
        self.points.iter().all(|p| {
            let ok = (0.0..=prev).contains(&p.survival);
            prev = p.survival;
            ok
        }) && self.points.windows(2).all(|w| w[0].time < w[1].time)
    }
}

pub fn km_estimate(outcomes: &[Outcome]) -> KmCurve {
    let mut sorted = outcomes.to_vec();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut points = Vec::new();
    let mut at_risk = sorted.len();
    let mut s = 1.0;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].time;
        let mut j = i;
        let mut deaths = 0;
        while j < sorted.len() && sorted[j].time == t {
            deaths += usize::from(sorted[j].event);
            j += 1;
        }
        if deaths > 0 {
            s *= 1.0 - deaths as f64 / at_risk as f64;
            points.push(KmPoint {
                time: t,
                survival: s,
                at_risk,
                events: deaths,
            });
        }
        at_risk -= j - i;
        i = j;
    }
    KmCurve { points }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRank {
    pub chi2: f64,
    pub p: f64,
}

/// Two-group log-rank test with the hypergeometric variance.
pub fn log_rank(a: &[Outcome], b: &[Outcome]) -> Result<LogRank> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::domain("log_rank", "both groups must be nonempty"));
    }
    let mut all: Vec<(f64, bool, bool)> = a
        .iter()
        .map(|o| (o.time, o.event, true))
        .chain(b.iter().map(|o| (o.time, o.event, false)))
        .collect();
    if !all.iter().any(|r| r.1) {
        return Err(Error::domain("log_rank", "no events in either group"));
    }
    all.sort_by(|x, y| x.0.total_cmp(&y.0));

    let (mut n, mut n_a) = (all.len() as f64, a.len() as f64);
    let (mut observed_minus_expected, mut variance) = (0.0, 0.0);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        let (mut d, mut d_a, mut leaving, mut leaving_a) = (0.0, 0.0, 0.0, 0.0);
        while i < all.len() && all[i].0 == t {
            let (_, event, in_a) = all[i];
            leaving += 1.0;
            if in_a {
                leaving_a += 1.0;
            }
            if event {
                d += 1.0;
                if in_a {
                    d_a += 1.0;
                }
            }
            i += 1;
        }
        if d > 0.0 {
            observed_minus_expected += d_a - d * n_a / n;
            if n > 1.0 {
                variance += d * (n_a / n) * (1.0 - n_a / n) * (n - d) / (n - 1.0);
            }
        }
        n -= leaving;
        n_a -= leaving_a;
    }
    if variance <= 0.0 {
        return Ok(LogRank { chi2: 0.0, p: 1.0 });
    }
    let chi2 = observed_minus_expected * observed_minus_expected / variance;
    Ok(LogRank {
        chi2,
        p: chi2_sf_1df(chi2)?,
    })
}

/// Upper tail of the χ² distribution with one degree of freedom.
pub fn chi2_sf_1df(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::domain(
            "chi2_sf_1df",
            format!("x must be >= 0, got {x}"),
        ));
    }
    Ok(libm::erfc((x / 2.0).sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RiskGroup {
    Low,
    High,
}

impl RiskGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            RiskGroup::Low => "low",
            RiskGroup::High => "high",
        }
    }
}

/// Risks above the lower median are high; the rest (ties included) low.
pub fn stratify_by_median(risks: &[f64]) -> Vec<RiskGroup> {
    if risks.is_empty() {
        return Vec::new();
    }
    let mut sorted = risks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[(sorted.len() - 1) / 2];
    risks
        .iter()
        .map(|&r| {
            if r > median {
                RiskGroup::High
            } else {
                RiskGroup::Low
            }
        })
        .collect()
}

/// KM curves of both median-risk groups and the log-rank test between them.
#[derive(Clone, Debug, PartialEq)]
pub struct KmReport {
    pub low: KmCurve,
    pub high: KmCurve,
    pub test: LogRank,
}

impl KmReport {
    pub fn from_risks(risks: &[f64], outcomes: &[Outcome]) -> Result<Self> {
        if risks.len() != outcomes.len() {
            return Err(Error::Shape {
                op: "km_report",
                lhs: vec![risks.len()],
                rhs: vec![outcomes.len()],
            });
        }
        let groups = stratify_by_median(risks);
        let pick = |g| -> Vec<Outcome> {
            outcomes
                .iter()
                .zip(&groups)
                .filter(|(_, &l)| l == g)
                .map(|(o, _)| *o)
                .collect()
        };
        let (low, high) = (pick(RiskGroup::Low), pick(RiskGroup::High));
        if low.is_empty() || high.is_empty() {
            return Err(Error::ConstantRisks);
        }
        Ok(Self {
            test: log_rank(&low, &high)?,
            low: km_estimate(&low),
            high: km_estimate(&high),
        })
    }

    /// Rows `time,survival,at_risk,events,group` for both groups, then a
    /// `chi2,p` trailer.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "time,survival,at_risk,events,group")?;
        for (name, curve) in [("low", &self.low), ("high", &self.high)] {
            for p in &curve.points {
                writeln!(
                    w,
                    "{},{},{},{},{name}",
                    p.time, p.survival, p.at_risk, p.events
                )?;
            }
        }
        writeln!(w, "chi2,p")?;
        writeln!(w, "{},{}", self.test.chi2, self.test.p)
    }

    /// Inverse of [`write_csv`](Self::write_csv); `#` comment lines are
    /// skipped.
    pub fn read_csv(r: impl BufRead) -> Result<Self> {
        let bad = |line: usize, detail: String| Error::Parse {
            path: "<km csv>".into(),
            line: line as u64,
            detail,
        };
        let num = |line: usize, s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|_| bad(line, format!("not a number: {s:?}")))
        };
        let count = |line: usize, s: &str| -> Result<usize> {
            s.trim()
                .parse()
                .map_err(|_| bad(line, format!("not a count: {s:?}")))
        };
        let mut lines = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<km csv>", e))?;
            if !line.trim().is_empty() && !line.starts_with('#') {
                lines.push((i + 1, line));
            }
        }
        let mut it = lines.into_iter();
        match it.next() {
            Some((_, h)) if h == "time,survival,at_risk,events,group" => {}
            Some((n, h)) => return Err(bad(n, format!("unexpected header {h:?}"))),
            None => return Err(bad(0, "empty file".into())),
        }
        let (mut low, mut high) = (KmCurve::default(), KmCurve::default());
        for (n, line) in it.by_ref() {
            if line == "chi2,p" {
                let (n, values) = it
                    .next()
                    .ok_or_else(|| bad(n, "missing chi2,p values".into()))?;
                let (chi2, p) = values
                    .split_once(',')
                    .ok_or_else(|| bad(n, "expected chi2,p".into()))?;
                return Ok(Self {
                    low,
                    high,
                    test: LogRank {
                        chi2: num(n, chi2)?,
                        p: num(n, p)?,
                    },
                });
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(n, format!("expected 5 fields, got {}", f.len())));
            }
            let point = KmPoint {
                time: num(n, f[0])?,
                survival: num(n, f[1])?,
                at_risk: count(n, f[2])?,
                events: count(n, f[3])?,
            };
            match f[4] {
                "low" => low.points.push(point),
                "high" => high.points.push(point),
                g => return Err(bad(n, format!("unknown group {g:?}"))),
            }
        }
        Err(bad(0, "missing chi2,p trailer".into()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationReport {
    /// Pearson r per matched dimension; 0 where either column is constant.
    pub per_dimension: Vec<f64>,
    pub mean_abs: f64,
}

/// Per-dimension Pearson correlation between two sets of `[D]` feature
/// vectors, one per subject.
pub fn correlation_report(a: &[Tensor], b: &[Tensor]) -> Result<CorrelationReport> {
    let n = a.len();
    if b.len() != n {
        return Err(Error::Shape {
            op: "correlation_report",
            lhs: vec![n],
            rhs: vec![b.len()],
        });
    }
    if n < 3 {
        return Err(Error::TooFewPatients { have: n, need: 3 });
    }
    let d = a[0].len();
    if let Some(bad) = a.iter().chain(b).find(|t| t.len() != d) {
        return Err(Error::Shape {
            op: "correlation_report",
            lhs: vec![d],
            rhs: bad.shape().to_vec(),
        });
    }
    let per_dimension: Vec<f64> = (0..d)
        .map(|k| {
            let x: Vec<f64> = a.iter().map(|t| t.data()[k]).collect();
            let y: Vec<f64> = b.iter().map(|t| t.data()[k]).collect();
            pearson(&x, &y)
        })
        .collect();
    let mean_abs = per_dimension.iter().map(|r| r.abs()).sum::<f64>() / d as f64;
    Ok(CorrelationReport {
        per_dimension,
        mean_abs,
    })
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}
