//! Componentwise random-walk Metropolis for arm-level network models.
//!
//! Study baselines `mu`, trial-specific effects `delta` and basic
//! parameters `d` are updated one at a time. The heterogeneity SD is
//! sampled through an unconstrained latent `theta` whose meaning depends on
//! the prior. Extra moves that rescale or shift `delta` together with `tau`
//! or `d` keep the chain moving when `tau` is small.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::dataset::{Arm, Likelihood, TrialDataset};
use super::deviance::{dic, expit, total_resdev};
use super::model::{McmcConfig, ModelConfig};
use super::summary::{Diagnostics, Interval, PosteriorSummary, TauSummary, Traces};
use crate::dist::{DistributionSpec, RngStream};
use crate::elicitation::scale::RANGE_WIDTH;
use crate::elicitation::{BandProbabilities, EffectModel, HeterogeneityPrior, PriorVariant};
use crate::error::{Error, Result};

const BATCH: usize = 50;
const PSRF_WARN: f64 = 1.1;

#[derive(Debug, Clone, Copy)]
enum Obs {
    Binomial { r: f64, n: f64 },
    Normal { y: f64, prec: f64 },
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Obs {
    fn loglik(&self, eta: f64) -> f64 {
        match *self {
            Obs::Binomial { r, n } => r * eta - n * softplus(eta),
            Obs::Normal { y, prec } => -0.5 * prec * (y - eta).powi(2),
        }
    }

    fn fitted(&self, eta: f64) -> f64 {
        match self {
            Obs::Binomial { .. } => expit(eta),
            Obs::Normal { .. } => eta,
        }
    }
}

#[derive(Debug, Clone)]
struct StudyObs {
    treatments: Vec<usize>,
    obs: Vec<Obs>,
}

/// Latent parameterisation of the heterogeneity prior.
#[derive(Debug, Clone, Copy)]
enum Latent {
    /// `theta = ln tau` on the analysis scale, flat in `tau`.
    Uniform,
    /// `theta = ln tau_or^2 ~ N(m, sd^2)`.
    LogTauSq { m: f64, sd: f64 },
    /// `theta = ln G`, `tau_or = ln(shift + G) / 3.92`.
    Ratio { g: DistributionSpec, shift: f64 },
    /// `theta = ln tau_or`.
    HalfNormal { sd: f64 },
}

#[derive(Debug, Clone, Copy)]
struct TauModel {
    latent: Latent,
    omega: f64,
    lo: f64,
    hi: f64,
}

impl TauModel {
    fn from_prior(p: &HeterogeneityPrior) -> Self {
        let inf = f64::INFINITY;
        let (latent, lo, hi) = match p.variant {
            PriorVariant::UniformTau { lower, upper } => (Latent::Uniform, lower.ln(), upper.ln()),
            PriorVariant::LogNormalTauSq { m, v } => (Latent::LogTauSq { m, sd: v.sqrt() }, -inf, inf),
            PriorVariant::TruncatedLogNormalTauSq { m, v, upper } => {
                (Latent::LogTauSq { m, sd: v.sqrt() }, -inf, upper.ln())
            }
            PriorVariant::ElicitedRatio { fit } => (
                Latent::Ratio {
                    g: fit.spec(),
                    shift: fit.shift,
                },
                -inf,
                inf,
            ),
            PriorVariant::HalfNormalTau { sd } => (Latent::HalfNormal { sd }, -inf, inf),
        };
        Self {
            latent,
            omega: p.omega,
            lo,
            hi,
        }
    }

    fn log_prior(&self, theta: f64) -> f64 {
        if theta < self.lo || theta > self.hi {
            return f64::NEG_INFINITY;
        }
        match self.latent {
            Latent::Uniform => theta,
            Latent::LogTauSq { m, sd } => -0.5 * ((theta - m) / sd).powi(2),
            Latent::Ratio { g, .. } => g.ln_pdf(theta.exp()) + theta,
            Latent::HalfNormal { sd } => -0.5 * (theta.exp() / sd).powi(2) + theta,
        }
    }

    fn tau(&self, theta: f64) -> f64 {
        match self.latent {
            Latent::Uniform => theta.exp(),
            Latent::LogTauSq { .. } => self.omega * (0.5 * theta).exp(),
            Latent::Ratio { shift, .. } => self.omega * (shift + theta.exp()).ln() / RANGE_WIDTH,
            Latent::HalfNormal { .. } => self.omega * theta.exp(),
        }
    }

    fn start(&self) -> f64 {
        let centre = match self.latent {
            Latent::Uniform => ((self.lo.exp() + self.hi.exp()) / 2.0).ln(),
            Latent::LogTauSq { m, .. } => m,
            Latent::Ratio { g, .. } => g.quantile(0.5).map(f64::ln).unwrap_or(0.0),
            Latent::HalfNormal { sd } => (0.674 * sd).ln(),
        };
        centre.clamp(self.lo + 1e-3, self.hi - 1e-3)
    }
}

#[derive(Debug, Clone, Copy)]
enum Heterogeneity {
    None,
    Fixed(f64),
    Latent(TauModel),
}

struct Model {
    studies: Vec<StudyObs>,
    n_treatments: usize,
    /// Studies that include each treatment.
    studies_with: Vec<Vec<usize>>,
    het: Heterogeneity,
    omega: f64,
    mu_prec: f64,
    d_prec: f64,
}

impl Model {
    fn new(data: &TrialDataset, config: &ModelConfig) -> Self {
        let studies: Vec<StudyObs> = data
            .studies
            .iter()
            .map(|s| StudyObs {
                treatments: s.arms.iter().map(|a| a.treatment() - 1).collect(),
                obs: s
                    .arms
                    .iter()
                    .map(|a| match *a {
                        Arm::Binomial { r, n, .. } => Obs::Binomial {
                            r: r as f64,
                            n: n as f64,
                        },
                        Arm::Normal { y, se, .. } => Obs::Normal {
                            y,
                            prec: 1.0 / (se * se),
                        },
                    })
                    .collect(),
            })
            .collect();
        let mut studies_with = vec![Vec::new(); data.n_treatments];
        for (i, s) in studies.iter().enumerate() {
            for &t in &s.treatments {
                studies_with[t].push(i);
            }
        }
        let omega = config.prior.map_or(1.0, |p| p.omega);
        let het = match (config.effect, config.fixed_tau) {
            (EffectModel::FixedEffect, _) => Heterogeneity::None,
            (EffectModel::RandomEffects, Some(t)) => Heterogeneity::Fixed(t),
            (EffectModel::RandomEffects, None) => {
                Heterogeneity::Latent(TauModel::from_prior(config.prior.as_ref().expect("validated")))
            }
        };
        Self {
            studies,
            n_treatments: data.n_treatments,
            studies_with,
            het,
            omega,
            mu_prec: config.baseline_prior_sd.powi(-2),
            d_prec: config.effect_prior_sd.powi(-2),
        }
    }

    /// Whether trial-specific effects are free parameters.
    fn has_delta(&self) -> bool {
        match self.het {
            Heterogeneity::None => false,
            Heterogeneity::Fixed(t) => t > 0.0,
            Heterogeneity::Latent(_) => true,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Step {
    log_scale: f64,
    batch_acc: u32,
    batch_tries: u32,
    acc: u64,
    tries: u64,
}

impl Step {
    fn new(scale: f64) -> Self {
        Self {
            log_scale: scale.ln(),
            batch_acc: 0,
            batch_tries: 0,
            acc: 0,
            tries: 0,
        }
    }

    fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    fn record(&mut self, accepted: bool, keep: bool) {
        self.batch_tries += 1;
        self.batch_acc += accepted as u32;
        if keep {
            self.tries += 1;
            self.acc += accepted as u64;
        }
    }

    fn adapt(&mut self, target: f64, batch_no: usize) {
        if self.batch_tries > 0 {
            let rate = self.batch_acc as f64 / self.batch_tries as f64;
            let delta = (1.0 / (batch_no as f64).sqrt()).min(0.1);
            self.log_scale += if rate > target { delta } else { -delta };
        }
        self.batch_acc = 0;
        self.batch_tries = 0;
    }
}

fn accept(rng: &mut ChaCha8Rng, log_ratio: f64) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

fn reflect(mut x: f64, lo: f64, hi: f64) -> f64 {
    for _ in 0..64 {
        if x < lo {
            x = 2.0 * lo - x;
        } else if x > hi {
            x = 2.0 * hi - x;
        } else {
            return x;
        }
    }
    x.clamp(lo, hi)
}

struct ChainOutput {
    d: Vec<Vec<f64>>,
    d_new: Vec<Vec<f64>>,
    tau_model: Vec<f64>,
    resdev: Vec<f64>,
    fitted_sum: Vec<Vec<f64>>,
    acceptance: BTreeMap<String, (u64, u64)>,
}

struct Chain<'a> {
    m: &'a Model,
    rng: ChaCha8Rng,
    mu: Vec<f64>,
    delta: Vec<Vec<f64>>,
    d: Vec<f64>,
    theta: f64,
    tau: f64,
    ll: Vec<f64>,
    re: Vec<f64>,
    s_mu: Vec<Step>,
    s_delta: Vec<Vec<Step>>,
    s_d: Vec<Step>,
    s_d_shift: Vec<Step>,
    s_theta: Step,
    s_theta_scale: Step,
}

impl<'a> Chain<'a> {
    fn new(m: &'a Model, mut rng: ChaCha8Rng) -> Self {
        let mut jitter = |sd: f64| sd * rng.sample::<f64, _>(StandardNormal);
        let mu: Vec<f64> = m
            .studies
            .iter()
            .map(|s| {
                let base = match s.obs[0] {
                    Obs::Binomial { r, n } => ((r + 0.5) / (n - r + 0.5)).ln(),
                    Obs::Normal { y, .. } => y,
                };
                base + jitter(0.1)
            })
            .collect();
        let mut d = vec![0.0; m.n_treatments];
        for dk in d.iter_mut().skip(1) {
            *dk = jitter(0.1);
        }
        let (theta, tau) = match m.het {
            Heterogeneity::None => (0.0, 0.0),
            Heterogeneity::Fixed(t) => (0.0, t),
            Heterogeneity::Latent(tm) => {
                let th = reflect(tm.start() + jitter(0.3), tm.lo, tm.hi);
                (th, tm.tau(th))
            }
        };
        let delta: Vec<Vec<f64>> = m
            .studies
            .iter()
            .map(|s| {
                (0..s.obs.len())
                    .map(|a| {
                        if a == 0 || !m.has_delta() {
                            0.0
                        } else {
                            d[s.treatments[a]] - d[s.treatments[0]] + jitter(0.5 * tau)
                        }
                    })
                    .collect()
            })
            .collect();
        let n = m.studies.len();
        let mut chain = Self {
            m,
            rng,
            mu,
            delta,
            d,
            theta,
            tau,
            ll: vec![0.0; n],
            re: vec![0.0; n],
            s_mu: vec![Step::new(0.3); n],
            s_delta: m.studies.iter().map(|s| vec![Step::new(0.3); s.obs.len()]).collect(),
            s_d: vec![Step::new(0.2); m.n_treatments],
            s_d_shift: vec![Step::new(0.2); m.n_treatments],
            s_theta: Step::new(0.5),
            s_theta_scale: Step::new(0.3),
        };
        for i in 0..n {
            chain.ll[i] = chain.study_ll(i, chain.mu[i], &chain.delta[i], &chain.d);
            chain.re[i] = chain.study_re(i, &chain.delta[i], &chain.d, chain.tau);
        }
        chain
    }

    fn eta(&self, i: usize, a: usize, mu: f64, delta: &[f64], d: &[f64]) -> f64 {
        if a == 0 {
            mu
        } else if self.m.has_delta() {
            mu + delta[a]
        } else {
            let t = &self.m.studies[i].treatments;
            mu + d[t[a]] - d[t[0]]
        }
    }

    fn study_ll(&self, i: usize, mu: f64, delta: &[f64], d: &[f64]) -> f64 {
        self.m.studies[i]
            .obs
            .iter()
            .enumerate()
            .map(|(a, o)| o.loglik(self.eta(i, a, mu, delta, d)))
            .sum()
    }

    /// Log density of the trial effects given `d` and `tau`, built from
    /// successive conditionals so that multi-arm correlations are exact.
    fn study_re(&self, i: usize, delta: &[f64], d: &[f64], tau: f64) -> f64 {
        if !self.m.has_delta() {
            return 0.0;
        }
        let t = &self.m.studies[i].treatments;
        let mut w_sum = 0.0;
        let mut lp = 0.0;
        for a in 1..t.len() {
            let c = d[t[a]] - d[t[0]];
            let mean = c + w_sum / a as f64;
            let af = a as f64;
            let var = tau * tau * (af + 1.0) / (2.0 * af);
            lp += -0.5 * var.ln() - 0.5 * (delta[a] - mean).powi(2) / var;
            w_sum += delta[a] - c;
        }
        lp
    }

    fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    fn update_mu(&mut self, keep: bool) {
        for i in 0..self.mu.len() {
            let old = self.mu[i];
            let prop = old + self.s_mu[i].scale() * self.normal();
            let ll = self.study_ll(i, prop, &self.delta[i], &self.d);
            let lr = ll - self.ll[i] - 0.5 * self.m.mu_prec * (prop * prop - old * old);
            let ok = accept(&mut self.rng, lr);
            if ok {
                self.mu[i] = prop;
                self.ll[i] = ll;
            }
            self.s_mu[i].record(ok, keep);
        }
    }

    fn update_delta(&mut self, keep: bool) {
        if !self.m.has_delta() {
            return;
        }
        for i in 0..self.delta.len() {
            for a in 1..self.delta[i].len() {
                let old = self.delta[i][a];
                let prop = old + self.s_delta[i][a].scale() * self.normal();
                self.delta[i][a] = prop;
                let ll = self.study_ll(i, self.mu[i], &self.delta[i], &self.d);
                let re = self.study_re(i, &self.delta[i], &self.d, self.tau);
                let ok = accept(&mut self.rng, ll + re - self.ll[i] - self.re[i]);
                if ok {
                    self.ll[i] = ll;
                    self.re[i] = re;
                } else {
                    self.delta[i][a] = old;
                }
                self.s_delta[i][a].record(ok, keep);
            }
        }
    }

    /// Centred update of `d[k]`: trial effects stay put.
    fn update_d(&mut self, keep: bool) {
        let m = self.m;
        for k in 1..m.n_treatments {
            let old = self.d[k];
            let prop = old + self.s_d[k].scale() * self.normal();
            self.d[k] = prop;
            let mut diff = -0.5 * m.d_prec * (prop * prop - old * old);
            let mut fresh = Vec::with_capacity(m.studies_with[k].len());
            for &i in &m.studies_with[k] {
                let v = if m.has_delta() {
                    self.study_re(i, &self.delta[i], &self.d, self.tau)
                } else {
                    self.study_ll(i, self.mu[i], &self.delta[i], &self.d)
                };
                diff += v - if m.has_delta() { self.re[i] } else { self.ll[i] };
                fresh.push(v);
            }
            let ok = accept(&mut self.rng, diff);
            if ok {
                for (&i, v) in m.studies_with[k].iter().zip(fresh) {
                    if m.has_delta() {
                        self.re[i] = v;
                    } else {
                        self.ll[i] = v;
                    }
                }
            } else {
                self.d[k] = old;
            }
            self.s_d[k].record(ok, keep);
        }
    }

    /// Non-centred update of `d[k]`: trial effects move with their means.
    fn update_d_shift(&mut self, keep: bool) {
        let m = self.m;
        if !m.has_delta() {
            return;
        }
        for k in 1..m.n_treatments {
            let old = self.d[k];
            let step = self.s_d_shift[k].scale() * self.normal();
            let prop = old + step;
            let saved: Vec<Vec<f64>> = m.studies_with[k].iter().map(|&i| self.delta[i].clone()).collect();
            self.d[k] = prop;
            let mut diff = -0.5 * m.d_prec * (prop * prop - old * old);
            let mut fresh = Vec::with_capacity(saved.len());
            for &i in &m.studies_with[k] {
                let t = &m.studies[i].treatments;
                for a in 1..t.len() {
                    if t[a] == k {
                        self.delta[i][a] += step;
                    } else if t[0] == k {
                        self.delta[i][a] -= step;
                    }
                }
                let ll = self.study_ll(i, self.mu[i], &self.delta[i], &self.d);
                diff += ll - self.ll[i];
                fresh.push(ll);
            }
            let ok = accept(&mut self.rng, diff);
            if ok {
                for (&i, ll) in m.studies_with[k].iter().zip(fresh) {
                    self.ll[i] = ll;
                }
            } else {
                self.d[k] = old;
                for (&i, s) in m.studies_with[k].iter().zip(saved) {
                    self.delta[i] = s;
                }
            }
            self.s_d_shift[k].record(ok, keep);
        }
    }

    fn update_theta(&mut self, keep: bool) {
        let Heterogeneity::Latent(tm) = self.m.het else {
            return;
        };
        let prop = reflect(self.theta + self.s_theta.scale() * self.normal(), tm.lo, tm.hi);
        let tau = tm.tau(prop);
        let fresh: Vec<f64> = (0..self.re.len())
            .map(|i| self.study_re(i, &self.delta[i], &self.d, tau))
            .collect();
        let lr = fresh.iter().sum::<f64>() - self.re.iter().sum::<f64>() + tm.log_prior(prop)
            - tm.log_prior(self.theta);
        let ok = tau > 0.0 && accept(&mut self.rng, lr);
        if ok {
            self.theta = prop;
            self.tau = tau;
            self.re = fresh;
        }
        self.s_theta.record(ok, keep);
    }

    /// Non-centred update of `theta`: deviations from the trial means are
    /// rescaled with `tau`, leaving the standardised effects fixed.
    fn update_theta_scale(&mut self, keep: bool) {
        let Heterogeneity::Latent(tm) = self.m.het else {
            return;
        };
        let prop = reflect(self.theta + self.s_theta_scale.scale() * self.normal(), tm.lo, tm.hi);
        let tau = tm.tau(prop);
        let ratio = tau / self.tau;
        if !(ratio.is_finite() && ratio > 0.0) {
            self.s_theta_scale.record(false, keep);
            return;
        }
        let saved = self.delta.clone();
        let mut ll_new = vec![0.0; self.ll.len()];
        let mut lr = tm.log_prior(prop) - tm.log_prior(self.theta);
        for i in 0..self.delta.len() {
            let t = &self.m.studies[i].treatments;
            for a in 1..t.len() {
                let c = self.d[t[a]] - self.d[t[0]];
                self.delta[i][a] = c + ratio * (self.delta[i][a] - c);
            }
            ll_new[i] = self.study_ll(i, self.mu[i], &self.delta[i], &self.d);
            lr += ll_new[i] - self.ll[i];
        }
        let ok = accept(&mut self.rng, lr);
        if ok {
            self.theta = prop;
            self.tau = tau;
            self.ll = ll_new;
            for i in 0..self.re.len() {
                self.re[i] = self.study_re(i, &self.delta[i], &self.d, tau);
            }
        } else {
            self.delta = saved;
        }
        self.s_theta_scale.record(ok, keep);
    }

    fn sweep(&mut self, keep: bool) {
        self.update_mu(keep);
        self.update_delta(keep);
        self.update_d(keep);
        self.update_d_shift(keep);
        self.update_theta(keep);
        self.update_theta_scale(keep);
    }

    fn adapt(&mut self, target: f64, batch_no: usize) {
        let steps = self
            .s_mu
            .iter_mut()
            .chain(self.s_delta.iter_mut().flatten())
            .chain(self.s_d.iter_mut())
            .chain(self.s_d_shift.iter_mut())
            .chain([&mut self.s_theta, &mut self.s_theta_scale]);
        for s in steps {
            s.adapt(target, batch_no);
        }
    }

    fn acceptance(&self) -> BTreeMap<String, (u64, u64)> {
        let mut out = BTreeMap::new();
        let mut add = |name: &str, steps: &mut dyn Iterator<Item = &Step>| {
            let (a, t) = steps.fold((0, 0), |(a, t), s| (a + s.acc, t + s.tries));
            if t > 0 {
                out.insert(name.to_string(), (a, t));
            }
        };
        add("mu", &mut self.s_mu.iter());
        add("delta", &mut self.s_delta.iter().flat_map(|v| v.iter().skip(1)));
        add("d", &mut self.s_d.iter().skip(1));
        add("d_shift", &mut self.s_d_shift.iter().skip(1));
        add("tau", &mut std::iter::once(&self.s_theta));
        add("tau_scale", &mut std::iter::once(&self.s_theta_scale));
        out
    }

    fn run(mut self, mcmc: &McmcConfig, progress: Option<&AtomicU64>) -> ChainOutput {
        let m = self.m;
        let nt = m.n_treatments;
        let re = !matches!(m.het, Heterogeneity::None);
        let mut out = ChainOutput {
            d: vec![Vec::with_capacity(mcmc.keep); nt],
            d_new: if re { vec![Vec::with_capacity(mcmc.keep); nt] } else { Vec::new() },
            tau_model: Vec::with_capacity(if re { mcmc.keep } else { 0 }),
            resdev: Vec::with_capacity(mcmc.keep),
            fitted_sum: m.studies.iter().map(|s| vec![0.0; s.obs.len()]).collect(),
            acceptance: BTreeMap::new(),
        };
        let mut fitted: Vec<Vec<f64>> = out.fitted_sum.clone();
        let report = |n: u64| {
            if let Some(p) = progress {
                p.fetch_add(n, Ordering::Relaxed);
            }
        };
        for it in 1..=mcmc.burn_in {
            self.sweep(false);
            if it % BATCH == 0 {
                self.adapt(mcmc.adapt_target, it / BATCH);
                report(BATCH as u64);
            }
        }
        report((mcmc.burn_in % BATCH) as u64);
        for it in 1..=mcmc.keep * mcmc.thin {
            self.sweep(true);
            if it % BATCH == 0 {
                report(BATCH as u64);
            }
            if it % mcmc.thin != 0 {
                continue;
            }
            for k in 0..nt {
                out.d[k].push(self.d[k]);
            }
            if re {
                out.d_new[0].push(0.0);
                for k in 1..nt {
                    let z = self.normal();
                    out.d_new[k].push(self.d[k] + self.tau * z);
                }
                out.tau_model.push(self.tau);
            }
            for (i, s) in m.studies.iter().enumerate() {
                for (a, o) in s.obs.iter().enumerate() {
                    let v = o.fitted(self.eta(i, a, self.mu[i], &self.delta[i], &self.d));
                    fitted[i][a] = v;
                    out.fitted_sum[i][a] += v;
                }
            }
            out.resdev.push(resdev_from_fitted(m, &fitted));
        }
        report(((mcmc.keep * mcmc.thin) % BATCH) as u64);
        out.acceptance = self.acceptance();
        out
    }
}

fn resdev_from_fitted(m: &Model, fitted: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (s, f) in m.studies.iter().zip(fitted) {
        for (o, &v) in s.obs.iter().zip(f) {
            total += match *o {
                Obs::Binomial { r, n } => {
                    let rhat = n * v;
                    let term = |x: f64, y: f64| if x == 0.0 { 0.0 } else { x * (x / y).ln() };
                    2.0 * (term(r, rhat) + term(n - r, n - rhat))
                }
                Obs::Normal { y, prec } => prec * (y - v).powi(2),
            };
        }
    }
    total
}

impl McmcConfig {
    /// Sweeps across all chains, the denominator for progress reporting.
    pub fn total_iterations(&self) -> u64 {
        (self.chains * (self.burn_in + self.keep * self.thin)) as u64
    }
}

/// Runs every chain and summarises the pooled draws.
pub fn run_mcmc(data: &TrialDataset, model: &ModelConfig, mcmc: &McmcConfig) -> Result<PosteriorSummary> {
    run_mcmc_with_progress(data, model, mcmc, None)
}

/// As [`run_mcmc`], adding completed sweeps to `progress` as they happen.
pub fn run_mcmc_with_progress(
    data: &TrialDataset,
    model: &ModelConfig,
    mcmc: &McmcConfig,
    progress: Option<&AtomicU64>,
) -> Result<PosteriorSummary> {
    data.validate()?;
    model.validate()?;
    mcmc.validate()?;
    if let Some(p) = &model.prior {
        let binomial = data.likelihood == Likelihood::BinomialLogit;
        if binomial && !p.scale.kind.is_ratio() {
            return Err(Error::Config(format!(
                "prior scale {} cannot be used with binomial data",
                p.scale.kind
            )));
        }
    }
    let m = Model::new(data, model);
    let outputs: Vec<ChainOutput> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..mcmc.chains)
            .map(|c| {
                let stream = RngStream::new(mcmc.seed, mcmc.stream_base + c as u64);
                let m = &m;
                scope.spawn(move || Chain::new(m, stream.rng()).run(mcmc, progress))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
    });
    Ok(summarise(data, model, mcmc, &m, outputs))
}

fn summarise(
    data: &TrialDataset,
    model: &ModelConfig,
    mcmc: &McmcConfig,
    m: &Model,
    outputs: Vec<ChainOutput>,
) -> PosteriorSummary {
    let nt = m.n_treatments;
    let mut traces = Traces {
        chains: mcmc.chains,
        per_chain: mcmc.keep,
        d: vec![Vec::new(); nt],
        ..Traces::default()
    };
    let re = !outputs[0].d_new.is_empty();
    if re {
        traces.d_new = vec![Vec::new(); nt];
    }
    let mut fitted_mean: Vec<Vec<f64>> = m.studies.iter().map(|s| vec![0.0; s.obs.len()]).collect();
    let mut acceptance: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    let total = (mcmc.chains * mcmc.keep) as f64;
    for out in outputs {
        for k in 0..nt {
            traces.d[k].extend(&out.d[k]);
            if re {
                traces.d_new[k].extend(&out.d_new[k]);
            }
        }
        traces.tau_model.extend(&out.tau_model);
        traces.resdev.extend(&out.resdev);
        for (fm, fs) in fitted_mean.iter_mut().zip(&out.fitted_sum) {
            for (a, b) in fm.iter_mut().zip(fs) {
                *a += b / total;
            }
        }
        for (name, (a, t)) in out.acceptance {
            let e = acceptance.entry(name).or_insert((0, 0));
            e.0 += a;
            e.1 += t;
        }
    }
    traces.tau_or = traces.tau_model.iter().map(|t| t / m.omega).collect();

    let offset = data.saturated_offset();
    let full: Vec<f64> = traces.resdev.iter().map(|r| r + offset).collect();
    let plug_in = total_resdev(data, &fitted_mean) + offset;
    let dic = dic(&full, plug_in);
    let total_resdev = traces.resdev.iter().sum::<f64>() / traces.resdev.len() as f64;

    let mut diagnostics = Diagnostics {
        acceptance: acceptance
            .into_iter()
            .map(|(k, (a, t))| (k, a as f64 / t as f64))
            .collect(),
        ..Diagnostics::default()
    };
    for k in 1..nt {
        let name = format!("d[{}]", k + 1);
        diagnostics.psrf.insert(name, traces.psrf(&traces.d[k]));
    }
    if matches!(m.het, Heterogeneity::Latent(_)) {
        diagnostics.psrf.insert("tau".into(), traces.psrf(&traces.tau_model));
    }
    for (name, r) in &diagnostics.psrf {
        if *r > PSRF_WARN {
            diagnostics
                .warnings
                .push(format!("potential scale reduction for {name} is {r:.3} (> {PSRF_WARN})"));
        }
    }
    if dic.p_d < 0.0 {
        diagnostics
            .warnings
            .push(format!("negative effective number of parameters ({:.3})", dic.p_d));
    }

    let tau = re.then(|| TauSummary {
        tau: Interval::of(&traces.tau_model),
        tau_or: Interval::of(&traces.tau_or),
        omega: m.omega,
        bands: BandProbabilities::from_sample(&traces.tau_or).expect("non-empty trace"),
    });
    let mut summary = PosteriorSummary {
        effect: model.effect,
        likelihood: data.likelihood,
        treatment_names: (1..=nt).map(|k| data.treatment_name(k)).collect(),
        chains: mcmc.chains,
        draws_per_chain: mcmc.keep,
        contrasts: Vec::new(),
        tau,
        dic,
        total_resdev,
        n_data_points: data.n_arms(),
        diagnostics,
        traces,
    };
    summary.contrasts = (2..=nt)
        .map(|k| summary.contrast(k, 1).expect("ids in range"))
        .collect();
    summary
}
