//! Fixed-effects least squares with cluster-robust inference, period
//! interaction designs, placebo p-values, event-study difference in
//! differences, z-scores and residualized binscatters.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use crate::error::{Error, Result};

mod did;

pub use did::{did_estimate, DidResult, DidSpec, EventTerm, PanelRow, TreatmentKind};

/// Convergence bound on the largest per-sweep change during demeaning.
pub const DEMEAN_TOL: f64 = 1e-10;
const DEMEAN_MAX_SWEEPS: usize = 100_000;
/// Residual share of a column's norm below which it counts as collinear.
const COLLINEAR_TOL: f64 = 1e-9;

/// Categorical column with dense, label-sorted codes.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub name: String,
    codes: Vec<usize>,
    levels: Vec<String>,
}

impl Factor {
    pub fn new<S: ToString>(name: &str, values: impl IntoIterator<Item = S>) -> Factor {
        let raw: Vec<String> = values.into_iter().map(|v| v.to_string()).collect();
        let levels: Vec<String> = raw.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        let index: BTreeMap<&str, usize> = levels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let codes = raw.iter().map(|v| index[v.as_str()]).collect();
        Factor {
            name: name.to_string(),
            codes,
            levels,
        }
    }

    /// Cell factor of two factors, e.g. subject by year.
    pub fn interact(a: &Factor, b: &Factor) -> Result<Factor> {
        if a.len() != b.len() {
            return Err(Error::Shape {
                expected: a.len(),
                found: b.len(),
            });
        }
        let name = format!("{}:{}", a.name, b.name);
        Ok(Factor::new(
            &name,
            (0..a.len()).map(|i| format!("{}|{}", a.level_of(i), b.level_of(i))),
        ))
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn codes(&self) -> &[usize] {
        &self.codes
    }

    pub fn levels(&self) -> &[String] {
        &self.levels
    }

    pub fn level_of(&self, row: usize) -> &str {
        &self.levels[self.codes[row]]
    }

    /// Restrict to `rows`, re-coding so only present levels remain.
    fn subset(&self, rows: &[usize]) -> Factor {
        Factor::new(&self.name, rows.iter().map(|&r| self.level_of(r)))
    }
}

/// Small-sample factor applied to the clustered sandwich.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmallSample {
    None,
    #[default]
    Cr1,
}

/// A regression: response, named regressors, absorbed factors, clustering.
/// Without a cluster factor every observation is its own cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub response_name: String,
    pub response: Vec<Option<f64>>,
    pub regressors: Vec<(String, Vec<Option<f64>>)>,
    pub fe_factors: Vec<Factor>,
    pub cluster: Option<Factor>,
    pub small_sample: SmallSample,
}

impl Design {
    pub fn new(response_name: &str, response: Vec<Option<f64>>) -> Design {
        Design {
            response_name: response_name.to_string(),
            response,
            regressors: Vec::new(),
            fe_factors: Vec::new(),
            cluster: None,
            small_sample: SmallSample::Cr1,
        }
    }

    pub fn regressor(mut self, name: &str, values: Vec<Option<f64>>) -> Design {
        self.regressors.push((name.to_string(), values));
        self
    }

    pub fn fixed_effect(mut self, factor: Factor) -> Design {
        self.fe_factors.push(factor);
        self
    }

    pub fn cluster_by(mut self, factor: Factor) -> Design {
        self.cluster = Some(factor);
        self
    }

    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }

    fn check_lengths(&self) -> Result<()> {
        let n = self.len();
        let lens = self
            .regressors
            .iter()
            .map(|(_, c)| c.len())
            .chain(self.fe_factors.iter().map(Factor::len))
            .chain(self.cluster.iter().map(Factor::len));
        for len in lens {
            if len != n {
                return Err(Error::Shape {
                    expected: n,
                    found: len,
                });
            }
        }
        Ok(())
    }

    /// Rows where the response and every regressor are present and finite.
    pub fn complete_rows(&self) -> Vec<usize> {
        let ok = |v: &Option<f64>| v.is_some_and(f64::is_finite);
        (0..self.len())
            .filter(|&i| ok(&self.response[i]) && self.regressors.iter().all(|(_, c)| ok(&c[i])))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub term: String,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub response: String,
    pub coefficients: Vec<Coefficient>,
    /// Coefficient covariance, in `coefficients` order.
    pub vcov: Vec<Vec<f64>>,
    /// Overall R-squared, equal to that of the dummy-variable model.
    pub r2: f64,
    pub r2_within: f64,
    pub n: usize,
    /// Estimated parameters including absorbed fixed effects.
    pub k: usize,
    pub clusters: usize,
    pub dropped: usize,
    pub rss: f64,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub residuals: Vec<f64>,
    /// `(X'X)^-1` of the within-transformed regressors.
    #[serde(skip)]
    pub bread: Vec<Vec<f64>>,
}

impl RegressionResult {
    pub fn get(&self, term: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.term == term)
    }

    pub fn estimate(&self, term: &str) -> Option<f64> {
        self.get(term).map(|c| c.estimate)
    }

    /// Homoskedastic standard errors `sqrt(s^2 (X'X)^-1)`, `s^2 = RSS/(N-K)`.
    pub fn classical_se(&self) -> Vec<f64> {
        let s2 = self.rss / (self.n - self.k) as f64;
        (0..self.bread.len()).map(|j| (s2 * self.bread[j][j]).sqrt()).collect()
    }

    fn index_of(&self, term: &str) -> Result<usize> {
        self.coefficients
            .iter()
            .position(|c| c.term == term)
            .ok_or_else(|| Error::Config(format!("no coefficient named `{term}`")))
    }
}

/// Subtract factor-group means from each column, alternating over factors
/// until the largest change in a sweep falls below tolerance.
pub fn absorb(columns: &mut [Vec<f64>], factors: &[&Factor]) -> Result<()> {
    if factors.is_empty() {
        return Ok(());
    }
    let results: Vec<Result<()>> = columns
        .par_iter_mut()
        .map(|col| demean_column(col, factors))
        .collect();
    results.into_iter().collect()
}

fn demean_column(col: &mut [f64], factors: &[&Factor]) -> Result<()> {
    let scale = col.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let mut sums: Vec<Vec<f64>> = factors.iter().map(|f| vec![0.0; f.n_levels()]).collect();
    let counts: Vec<Vec<f64>> = factors
        .iter()
        .map(|f| {
            let mut c = vec![0.0; f.n_levels()];
            f.codes().iter().for_each(|&k| c[k] += 1.0);
            c
        })
        .collect();
    for sweep in 0..DEMEAN_MAX_SWEEPS {
        let mut change = 0.0f64;
        for (fi, f) in factors.iter().enumerate() {
            let s = &mut sums[fi];
            s.iter_mut().for_each(|x| *x = 0.0);
            for (x, &k) in col.iter().zip(f.codes()) {
                s[k] += x;
            }
            for (m, c) in s.iter_mut().zip(&counts[fi]) {
                *m /= c;
                change = change.max(m.abs());
            }
            for (x, &k) in col.iter_mut().zip(f.codes()) {
                *x -= s[k];
            }
        }
        if factors.len() == 1 || (sweep > 0 && change <= DEMEAN_TOL * scale) {
            return Ok(());
        }
    }
    Err(Error::Inference(format!(
        "fixed-effect demeaning did not converge in {DEMEAN_MAX_SWEEPS} sweeps"
    )))
}

/// Degrees of freedom consumed by absorbed factors. Exact for one or two
/// factors (levels less connected components); beyond two, each extra factor
/// is counted with one redundant level.
fn fe_dof(factors: &[&Factor]) -> usize {
    match factors {
        [] => 0,
        [a] => a.n_levels(),
        [a, b, rest @ ..] => {
            let la = a.n_levels();
            let mut parent: Vec<usize> = (0..la + b.n_levels()).collect();
            fn find(p: &mut [usize], mut x: usize) -> usize {
                while p[x] != x {
                    p[x] = p[p[x]];
                    x = p[x];
                }
                x
            }
            for (&i, &j) in a.codes().iter().zip(b.codes()) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, la + j));
                if ri != rj {
                    parent[ri] = rj;
                }
            }
            let components = (0..parent.len()).filter(|&x| find(&mut parent, x) == x).count();
            la + b.n_levels() - components + rest.iter().map(|f| f.n_levels() - 1).sum::<usize>()
        }
    }
}

fn t_pvalue(t: f64, df: f64) -> f64 {
    if !t.is_finite() || df < 1.0 {
        return f64::NAN;
    }
    match StudentsT::new(0.0, 1.0, df) {
        Ok(dist) => (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0),
        Err(_) => f64::NAN,
    }
}

/// Least squares with absorbed fixed effects and clustered standard errors.
/// Without fixed effects an `intercept` term is estimated.
pub fn ols_fe(design: &Design) -> Result<RegressionResult> {
    design.check_lengths()?;
    let rows = design.complete_rows();
    let n = rows.len();
    let dropped = design.len() - n;
    let factors: Vec<Factor> = design.fe_factors.iter().map(|f| f.subset(&rows)).collect();
    let factor_refs: Vec<&Factor> = factors.iter().collect();

    let mut names: Vec<String> = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    if factors.is_empty() {
        names.push("intercept".into());
        columns.push(vec![1.0; n]);
    }
    for (name, col) in &design.regressors {
        names.push(name.clone());
        columns.push(rows.iter().map(|&i| col[i].unwrap()).collect());
    }
    let p = columns.len();
    let k = p + fe_dof(&factor_refs);
    if n <= k {
        return Err(Error::Data(format!(
            "{n} complete rows cannot identify {k} parameters"
        )));
    }
    let y: Vec<f64> = rows.iter().map(|&i| design.response[i].unwrap()).collect();
    let col_norms: Vec<f64> = columns.iter().map(|c| c.iter().map(|x| x * x).sum()).collect();
    columns.push(y.clone());
    absorb(&mut columns, &factor_refs)?;
    let y_t = columns.pop().unwrap();

    check_collinearity(&columns, &col_norms, &names)?;

    let x = DMatrix::from_fn(n, p, |i, j| columns[j][i]);
    let yv = DVector::from_vec(y_t.clone());
    let xtx = x.transpose() * &x;
    let chol = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Collinearity {
            column: names.last().cloned().unwrap_or_default(),
        })?;
    let beta = chol.solve(&(x.transpose() * &yv));
    let bread = chol.inverse();
    let resid: Vec<f64> = (0..n).map(|i| y_t[i] - (0..p).map(|j| x[(i, j)] * beta[j]).sum::<f64>()).collect();
    let rss: f64 = resid.iter().map(|e| e * e).sum();
    let ybar = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - ybar) * (v - ybar)).sum();
    let tss_within: f64 = y_t.iter().map(|v| v * v).sum();
    let r2_of = |tss: f64| {
        if tss > 0.0 {
            1.0 - rss / tss
        } else if rss == 0.0 {
            1.0
        } else {
            0.0
        }
    };

    let mut warnings = Vec::new();
    let cluster = match &design.cluster {
        Some(c) => c.subset(&rows),
        None => Factor::new("observation", 0..n),
    };
    let g = cluster.n_levels();
    if g < 2 {
        return Err(Error::Inference(format!(
            "clustered inference needs at least 2 clusters, found {g}"
        )));
    }
    if g < 10 {
        let msg = format!("only {g} clusters; cluster-robust inference is unreliable");
        tracing::warn!("{msg}");
        warnings.push(msg);
    }
    let mut scores = DMatrix::<f64>::zeros(g, p);
    for i in 0..n {
        let c = cluster.codes()[i];
        for j in 0..p {
            scores[(c, j)] += x[(i, j)] * resid[i];
        }
    }
    let meat = scores.transpose() * &scores;
    let factor = match design.small_sample {
        SmallSample::None => 1.0,
        SmallSample::Cr1 => (g as f64 / (g - 1) as f64) * ((n - 1) as f64 / (n - k) as f64),
    };
    let vcov = (&bread * meat * &bread) * factor;

    let df = (g - 1) as f64;
    let coefficients = (0..p)
        .map(|j| {
            let se = vcov[(j, j)].max(0.0).sqrt();
            let t = beta[j] / se;
            Coefficient {
                term: names[j].clone(),
                estimate: beta[j],
                se,
                t,
                p: t_pvalue(t, df),
            }
        })
        .collect();
    let to_rows = |m: &DMatrix<f64>| (0..p).map(|i| (0..p).map(|j| m[(i, j)]).collect()).collect();
    Ok(RegressionResult {
        response: design.response_name.clone(),
        coefficients,
        vcov: to_rows(&vcov),
        r2: r2_of(tss),
        r2_within: r2_of(tss_within),
        n,
        k,
        clusters: g,
        dropped,
        rss,
        warnings,
        residuals: resid,
        bread: to_rows(&bread),
    })
}

/// Modified Gram-Schmidt over the transformed columns; a column whose
/// remaining norm is negligible against its raw norm is collinear with the
/// absorbed factors or earlier columns.
fn check_collinearity(columns: &[Vec<f64>], raw_sq_norms: &[f64], names: &[String]) -> Result<()> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for (j, col) in columns.iter().enumerate() {
        let mut v = col.clone();
        for q in &basis {
            let proj: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(x, qi)| *x -= proj * qi);
        }
        let sq: f64 = v.iter().map(|x| x * x).sum();
        if raw_sq_norms[j] == 0.0 || sq <= COLLINEAR_TOL * raw_sq_norms[j] {
            return Err(Error::Collinearity {
                column: names[j].clone(),
            });
        }
        let norm = sq.sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    Ok(())
}

/// Joint test that the named coefficients are zero, using the clustered
/// covariance: `F = b' V^-1 b / q` on `(q, G - 1)` degrees of freedom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldTest {
    pub terms: Vec<String>,
    pub f: f64,
    pub df1: usize,
    pub df2: usize,
    pub p: f64,
}

pub fn wald_test(result: &RegressionResult, terms: &[&str]) -> Result<WaldTest> {
    if terms.is_empty() {
        return Err(Error::Config("joint test needs at least one term".into()));
    }
    let idx = terms.iter().map(|t| result.index_of(t)).collect::<Result<Vec<_>>>()?;
    let q = idx.len();
    let b = DVector::from_iterator(q, idx.iter().map(|&i| result.coefficients[i].estimate));
    let v = DMatrix::from_fn(q, q, |a, c| result.vcov[idx[a]][idx[c]]);
    let v_inv = v
        .try_inverse()
        .ok_or_else(|| Error::Inference("covariance of tested terms is singular".into()))?;
    let f = (b.transpose() * v_inv * &b)[(0, 0)] / q as f64;
    let df2 = result.clusters.saturating_sub(1);
    let p = FisherSnedecor::new(q as f64, df2 as f64)
        .map(|d| (1.0 - d.cdf(f)).clamp(0.0, 1.0))
        .unwrap_or(f64::NAN);
    Ok(WaldTest {
        terms: terms.iter().map(|t| t.to_string()).collect(),
        f,
        df1: q,
        df2,
        p,
    })
}

/// Closed year interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PeriodBin {
    pub lo: i32,
    pub hi: i32,
}

impl PeriodBin {
    pub fn new(lo: i32, hi: i32) -> PeriodBin {
        PeriodBin { lo, hi }
    }

    pub fn contains(&self, year: i32) -> bool {
        (self.lo..=self.hi).contains(&year)
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.lo, self.hi)
    }
}

/// Consecutive bins of `width` years from `start` through `end`.
pub fn uniform_bins(start: i32, end: i32, width: i32) -> Vec<PeriodBin> {
    let mut bins = Vec::new();
    let mut lo = start;
    while lo <= end {
        bins.push(PeriodBin::new(lo, (lo + width - 1).min(end)));
        lo += width;
    }
    bins
}

pub fn validate_bins(bins: &[PeriodBin]) -> Result<()> {
    if let Some(b) = bins.iter().find(|b| b.lo > b.hi) {
        return Err(Error::Config(format!("period {} is inverted", b.label())));
    }
    let mut sorted = bins.to_vec();
    sorted.sort();
    for w in sorted.windows(2) {
        if w[1].lo <= w[0].hi {
            return Err(Error::Config(format!(
                "periods {} and {} overlap",
                w[0].label(),
                w[1].label()
            )));
        }
    }
    Ok(())
}

/// Index of the bin holding `year`.
pub fn bin_of(bins: &[PeriodBin], year: i32) -> Option<usize> {
    bins.iter().position(|b| b.contains(year))
}

/// One column `x * 1{year in bin}` per bin, named `{prefix}_{lo}_{hi}`.
/// Missing `x` stays missing; years outside every bin give zeros.
pub fn make_period_interactions(
    prefix: &str,
    x: &[Option<f64>],
    years: &[i32],
    bins: &[PeriodBin],
) -> Result<Vec<(String, Vec<Option<f64>>)>> {
    validate_bins(bins)?;
    if x.len() != years.len() {
        return Err(Error::Shape {
            expected: x.len(),
            found: years.len(),
        });
    }
    Ok(bins
        .iter()
        .map(|b| {
            let col = x
                .iter()
                .zip(years)
                .map(|(v, &y)| v.map(|v| if b.contains(y) { v } else { 0.0 }))
                .collect();
            (format!("{prefix}_{}_{}", b.lo, b.hi), col)
        })
        .collect())
}

/// Share of placebo estimates at least as extreme as the original, counting
/// the original itself: `(1 + #{|placebo| >= |original|}) / (1 + J)`.
pub fn fisher_exact_p(original: f64, placebos: &[f64]) -> f64 {
    let extreme = placebos.iter().filter(|p| p.abs() >= original.abs()).count();
    (1 + extreme) as f64 / (1 + placebos.len()) as f64
}

/// Centre and scale to sample standard deviation one.
pub fn zscore(column: &[f64]) -> Result<Vec<f64>> {
    let n = column.len();
    if n < 2 {
        return Err(Error::Data("z-score needs at least 2 values".into()));
    }
    let mean = column.iter().sum::<f64>() / n as f64;
    let var = column.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    if var <= f64::EPSILON * f64::EPSILON * mean.abs().max(1.0) {
        return Err(Error::Data("z-score of a zero-variance column".into()));
    }
    let sd = var.sqrt();
    Ok(column.iter().map(|x| (x - mean) / sd).collect())
}

/// [`zscore`] over the present values; missing entries stay missing.
pub fn zscore_present(column: &[Option<f64>]) -> Result<Vec<Option<f64>>> {
    let present: Vec<f64> = column.iter().flatten().copied().collect();
    let z = zscore(&present)?;
    let mut it = z.into_iter();
    Ok(column.iter().map(|v| v.map(|_| it.next().unwrap())).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinPoint {
    pub x: f64,
    pub y: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binscatter {
    pub bins: Vec<BinPoint>,
    pub slope: f64,
    pub intercept: f64,
    pub n: usize,
}

/// Residualize both variables on the factors, add back grand means, and
/// average within equal-count bins of x. The slope is the least-squares
/// slope of the residualized data.
pub fn binscatter_residualized(
    y: &[f64],
    x: &[f64],
    fe_factors: &[Factor],
    n_bins: usize,
) -> Result<Binscatter> {
    let n = y.len();
    if x.len() != n {
        return Err(Error::Shape {
            expected: n,
            found: x.len(),
        });
    }
    if n_bins == 0 || n_bins > n {
        return Err(Error::Config(format!(
            "{n_bins} bins requested for {n} observations"
        )));
    }
    let refs: Vec<&Factor> = fe_factors.iter().collect();
    let (ybar, xbar) = (y.iter().sum::<f64>() / n as f64, x.iter().sum::<f64>() / n as f64);
    let mut cols = vec![y.to_vec(), x.to_vec()];
    if refs.is_empty() {
        cols[0].iter_mut().for_each(|v| *v -= ybar);
        cols[1].iter_mut().for_each(|v| *v -= xbar);
    } else {
        absorb(&mut cols, &refs)?;
    }
    let (yr, xr) = (&cols[0], &cols[1]);
    let sxx: f64 = xr.iter().map(|v| v * v).sum();
    if sxx <= 0.0 {
        return Err(Error::Collinearity { column: "x".into() });
    }
    let slope = xr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / sxx;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xr[a].total_cmp(&xr[b]).then(a.cmp(&b)));
    let bins = (0..n_bins)
        .map(|b| {
            let idx = &order[b * n / n_bins..(b + 1) * n / n_bins];
            let m = idx.len() as f64;
            BinPoint {
                x: idx.iter().map(|&i| xr[i]).sum::<f64>() / m + xbar,
                y: idx.iter().map(|&i| yr[i]).sum::<f64>() / m + ybar,
                count: idx.len(),
            }
        })
        .collect();
    Ok(Binscatter {
        bins,
        slope,
        intercept: ybar - slope * xbar,
        n,
    })
}

fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

/// Columns: model, term, estimate, se, t, p, N, G, r2.
pub fn write_results_csv<W: Write>(mut w: W, results: &[(&str, &RegressionResult)]) -> Result<()> {
    writeln!(w, "model,term,estimate,se,t,p,N,G,r2")?;
    for (model, r) in results {
        for c in &r.coefficients {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                model,
                c.term,
                fmt_num(c.estimate),
                fmt_num(c.se),
                fmt_num(c.t),
                fmt_num(c.p),
                r.n,
                r.clusters,
                fmt_num(r.r2)
            )?;
        }
    }
    Ok(())
}
