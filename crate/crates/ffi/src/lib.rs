//! C ABI over the `tauprior` library.
//!
//! Every function returns a [`TpStatus`]; on failure the message is kept in
//! a thread-local slot readable through [`tp_last_error`]. Strings handed
//! out by the library must be released with [`tp_string_free`], sessions
//! with [`tp_session_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tauprior::dist::RngStream;
use tauprior::elicitation::scale::{convert_scale, ratio_to_tau, tau_to_ratio};
use tauprior::elicitation::session::now_ms;
use tauprior::elicitation::{
    fit_ratio, prior_band_probabilities, BandProbabilities, ChipAllocation, ElicitationSession, HeterogeneityPrior,
    Judgment, OutcomeScale, ScaleKind, Stage,
};
use tauprior::ingest::{resolve_dataset, run_analysis_on, AnalysisConfig};
use tauprior::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Domain = 3,
    State = 4,
    Config = 5,
    FitDegenerate = 6,
    UnsupportedDefault = 7,
    Parse = 8,
    NotFound = 9,
    Io = 10,
    Json = 11,
    Panic = 12,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TpStage {
    Stage1 = 1,
    Stage2 = 2,
    Stage3 = 3,
    Finalized = 4,
}

/// Probabilities of the four heterogeneity bands on the log-OR scale.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TpBands {
    pub p_low: f64,
    pub p_moderate: f64,
    pub p_high: f64,
    pub p_extreme: f64,
}

impl From<BandProbabilities> for TpBands {
    fn from(b: BandProbabilities) -> Self {
        Self {
            p_low: b.p_low,
            p_moderate: b.p_moderate,
            p_high: b.p_high,
            p_extreme: b.p_extreme,
        }
    }
}

/// Opaque elicitation session.
pub struct TpSession {
    inner: ElicitationSession,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(TpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Domain(_) => TpStatus::Domain,
            Error::State(_) => TpStatus::State,
            Error::Config(_) => TpStatus::Config,
            Error::FitDegenerate(_) => TpStatus::FitDegenerate,
            Error::UnsupportedDefault(_) => TpStatus::UnsupportedDefault,
            Error::Parse { .. } => TpStatus::Parse,
            Error::NotFound(_) => TpStatus::NotFound,
            Error::Io(_) => TpStatus::Io,
            Error::Json(_) => TpStatus::Json,
        };
        Failure(status, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(TpStatus::Json, e.to_string())
    }
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(msg));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TpStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            TpStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(TpStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(TpStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|e| Failure(TpStatus::Json, e.to_string()))?;
    write_out(out, c.into_raw())
}

fn scale_arg(kind: &str, sigma: f64) -> Result<OutcomeScale, Failure> {
    let kind: ScaleKind = kind.parse()?;
    let sigma = (!sigma.is_nan()).then_some(sigma);
    Ok(OutcomeScale::new(kind, sigma)?)
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tp_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn tp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// `tau = ln(R) / 3.92` for a ratio `R >= 1`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tp_ratio_to_tau(r: f64, out: *mut f64) -> TpStatus {
    guard(|| write_out(out, ratio_to_tau(r)?))
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tp_tau_to_ratio(tau: f64, out: *mut f64) -> TpStatus {
    guard(|| {
        if !(tau >= 0.0) {
            return Err(Error::Domain(format!("tau must be >= 0, got {tau}")).into());
        }
        write_out(out, tau_to_ratio(tau))
    })
}

/// Converts a log-OR scale `tau` to the named outcome scale. Pass NaN for
/// `sigma` unless the scale is a mean difference.
///
/// # Safety
/// `scale` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tp_convert_scale(tau_or: f64, scale: *const c_char, sigma: f64, out: *mut f64) -> TpStatus {
    guard(|| {
        let scale = scale_arg(str_arg(scale, "scale")?, sigma)?;
        write_out(out, convert_scale(tau_or, &scale)?)
    })
}

/// Fits a ratio distribution to a chip allocation in the chip file format
/// (`lower,upper,nbins[,total_chips],bin1,...`, the budget column only when
/// a header row names it); writes the fit as JSON.
///
/// # Safety
/// `chips_csv` must be a NUL-terminated string and `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tp_fit_ratio(chips_csv: *const c_char, out_json: *mut *mut c_char) -> TpStatus {
    guard(|| {
        let chips = ChipAllocation::from_csv(str_arg(chips_csv, "chips_csv")?)?;
        let fit = fit_ratio(&chips)?;
        write_string(out_json, serde_json::to_string(&fit)?)
    })
}

/// Exact band probabilities of a heterogeneity prior given as JSON.
///
/// # Safety
/// `prior_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tp_prior_bands(prior_json: *const c_char, out: *mut TpBands) -> TpStatus {
    guard(|| {
        let prior: HeterogeneityPrior = serde_json::from_str(str_arg(prior_json, "prior_json")?)?;
        write_out(out, prior.exact_band_probabilities().into())
    })
}

/// Starts a session at stage 1. Pass NaN for `sigma` unless needed.
///
/// # Safety
/// `scale` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tp_session_new(scale: *const c_char, sigma: f64, out: *mut *mut TpSession) -> TpStatus {
    guard(|| {
        let scale = scale_arg(str_arg(scale, "scale")?, sigma)?;
        let session = Box::new(TpSession {
            inner: ElicitationSession::new(scale),
        });
        write_out(out, Box::into_raw(session))
    })
}

/// # Safety
/// `session` must come from [`tp_session_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tp_session_free(session: *mut TpSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Applies one judgement, e.g. `{"judgment":"max_ratio","r_max":10}`. The
/// session is left unchanged on failure.
///
/// # Safety
/// `session` must be a live handle and `judgment_json` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tp_session_apply(session: *mut TpSession, judgment_json: *const c_char) -> TpStatus {
    guard(|| {
        let s = session.as_mut().ok_or_else(|| null("session"))?;
        let judgment: Judgment = serde_json::from_str(str_arg(judgment_json, "judgment_json")?)?;
        s.inner = s.inner.apply(judgment, now_ms())?;
        Ok(())
    })
}

/// # Safety
/// `session` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tp_session_stage(session: *const TpSession, out: *mut TpStage) -> TpStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| null("session"))?;
        let stage = match s.inner.stage {
            Stage::Stage1 => TpStage::Stage1,
            Stage::Stage2 => TpStage::Stage2,
            Stage::Stage3 => TpStage::Stage3,
            Stage::Finalized => TpStage::Finalized,
        };
        write_out(out, stage)
    })
}

/// Full session state as JSON.
///
/// # Safety
/// `session` must be a live handle and `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tp_session_to_json(session: *const TpSession, out_json: *mut *mut c_char) -> TpStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| null("session"))?;
        write_string(out_json, serde_json::to_string(&s.inner)?)
    })
}

/// The prior the session currently implies as JSON, `null` when none.
///
/// # Safety
/// `session` must be a live handle and `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tp_session_prior(session: *const TpSession, out_json: *mut *mut c_char) -> TpStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| null("session"))?;
        write_string(out_json, serde_json::to_string(&s.inner.provisional_prior())?)
    })
}

/// Monte Carlo band probabilities of the session's current prior from
/// `draws` samples (at least 10000) on stream `seed`.
///
/// # Safety
/// `session` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tp_session_bands(session: *const TpSession, seed: u64, draws: usize, out: *mut TpBands) -> TpStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| null("session"))?;
        let prior = s
            .inner
            .provisional_prior()
            .ok_or_else(|| Failure(TpStatus::State, "the session implies no heterogeneity prior yet".into()))?;
        let bands = prior_band_probabilities(&prior, draws, RngStream::new(seed, 0))?;
        write_out(out, bands.into())
    })
}

/// Runs an analysis described by an analysis configuration in JSON and
/// writes the report bundle as JSON. Blocks until the sampler finishes.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tp_analyze_json(config_json: *const c_char, out_json: *mut *mut c_char) -> TpStatus {
    guard(|| {
        let config: AnalysisConfig = serde_json::from_str(str_arg(config_json, "config_json")?)?;
        let data = resolve_dataset(&config.dataset)?;
        let bundle = run_analysis_on(&config, &data)?;
        write_string(out_json, serde_json::to_string(&bundle)?)
    })
}
