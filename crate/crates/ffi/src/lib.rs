//! C interface to the cascadebo library.
//!
//! Networks are opaque handles created by `cb_network_parse` or
//! `cb_network_case30` and released with `cb_network_free`. Every fallible
//! call returns a `CbStatus`; on failure `cb_last_error` describes the error
//! for the calling thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::OnceLock;

use cascadebo::attack::{tighten_limits, TighteningVector};
use cascadebo::cascade::{estimate_severity, RateModel, SimulationOptions};
use cascadebo::gp::ei_from_moments;
use cascadebo::grid::{case30, parse_case, Network};
use cascadebo::powerflow::{solve_equilibrium, DispatchState};
use cascadebo::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbStatus {
    Ok = 0,
    MalformedCase = 1,
    InfeasibleCase = 2,
    Infeasible = 3,
    SingularSystem = 4,
    DimensionMismatch = 5,
    IllConditioned = 6,
    InvalidArgument = 7,
    Config = 8,
    Integrity = 9,
    Io = 10,
    NullPointer = 11,
    Panic = 12,
}

impl From<&Error> for CbStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::MalformedCase(_) => CbStatus::MalformedCase,
            Error::InfeasibleCase(_) => CbStatus::InfeasibleCase,
            Error::Infeasible(_) => CbStatus::Infeasible,
            Error::SingularSystem(_) => CbStatus::SingularSystem,
            Error::DimensionMismatch { .. } => CbStatus::DimensionMismatch,
            Error::IllConditioned { .. } => CbStatus::IllConditioned,
            Error::InvalidArgument(_) => CbStatus::InvalidArgument,
            Error::Config(_) => CbStatus::Config,
            Error::Integrity(_) => CbStatus::Integrity,
            Error::Io(_) => CbStatus::Io,
        }
    }
}

/// Opaque network handle with a lazily solved equilibrium.
pub struct CbNetwork {
    network: Network,
    equilibrium: OnceLock<Result<DispatchState, Error>>,
}

impl CbNetwork {
    fn new(network: Network) -> Self {
        CbNetwork {
            network,
            equilibrium: OnceLock::new(),
        }
    }

    fn equilibrium(&self) -> Result<&DispatchState, Error> {
        self.equilibrium
            .get_or_init(|| solve_equilibrium(&self.network))
            .as_ref()
            .map_err(Clone::clone)
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), CbStatus>) -> CbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CbStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_last_error("internal panic".into());
            CbStatus::Panic
        }
    }
}

fn fail(e: Error) -> CbStatus {
    let status = CbStatus::from(&e);
    set_last_error(e.to_string());
    status
}

fn null(what: &str) -> CbStatus {
    set_last_error(format!("{what} is null"));
    CbStatus::NullPointer
}

unsafe fn network_ref<'a>(net: *const CbNetwork) -> Result<&'a CbNetwork, CbStatus> {
    net.as_ref().ok_or_else(|| null("network"))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], CbStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], CbStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<(), CbStatus> {
    if expected != actual {
        return Err(fail(Error::DimensionMismatch {
            what,
            expected,
            actual,
        }));
    }
    Ok(())
}

/// Message for the calling thread's most recent failure, or null. The
/// pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn cb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses MATPOWER case text into a new handle.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cb_network_parse(text: *const c_char, out: *mut *mut CbNetwork) -> CbStatus {
    guard(|| {
        if text.is_null() {
            return Err(null("text"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let s = CStr::from_ptr(text)
            .to_str()
            .map_err(|e| fail(Error::MalformedCase(format!("not UTF-8: {e}"))))?;
        let network = parse_case(s).map_err(fail)?;
        *out = Box::into_raw(Box::new(CbNetwork::new(network)));
        Ok(())
    })
}

/// Creates a handle for the bundled 30-bus case.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cb_network_case30(out: *mut *mut CbNetwork) -> CbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(CbNetwork::new(case30())));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `net` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cb_network_free(net: *mut CbNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// # Safety
/// `net` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn cb_network_num_buses(net: *const CbNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.network.num_buses())
}

/// # Safety
/// `net` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn cb_network_num_lines(net: *const CbNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.network.num_lines())
}

/// Writes the equilibrium line flows (per unit) and the dispatch cost.
///
/// # Safety
/// `flows` must hold `len` doubles; `cost` may be null.
#[no_mangle]
pub unsafe extern "C" fn cb_equilibrium(
    net: *const CbNetwork,
    flows: *mut f64,
    len: usize,
    cost: *mut f64,
) -> CbStatus {
    guard(|| {
        let net = network_ref(net)?;
        check_len("flow buffer", net.network.num_lines(), len)?;
        let out = slice_mut(flows, len, "flows")?;
        let eq = net.equilibrium().map_err(fail)?;
        out.copy_from_slice(&eq.flows);
        if !cost.is_null() {
            *cost = eq.objective_cost;
        }
        Ok(())
    })
}

/// Effective limits for tightening vector `x`.
///
/// # Safety
/// `x` and `limits` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cb_tighten_limits(
    net: *const CbNetwork,
    x: *const f64,
    len: usize,
    limits: *mut f64,
) -> CbStatus {
    guard(|| {
        let net = network_ref(net)?;
        check_len("tightening vector", net.network.num_lines(), len)?;
        let x = TighteningVector::new(slice(x, len, "x")?.to_vec()).map_err(fail)?;
        let out = slice_mut(limits, len, "limits")?;
        let eq = net.equilibrium().map_err(fail)?;
        let l = tighten_limits(&x, &eq.flows, &net.network.ratings()).map_err(fail)?;
        out.copy_from_slice(l.as_slice());
        Ok(())
    })
}

/// Mean failed-line count over `simulations` cascades under the default
/// rate model.
///
/// # Safety
/// `x` must hold `len` doubles; `mean` must be valid; `std_error` may be null.
#[no_mangle]
pub unsafe extern "C" fn cb_estimate_severity(
    net: *const CbNetwork,
    x: *const f64,
    len: usize,
    simulations: usize,
    t_max: f64,
    seed: u64,
    mean: *mut f64,
    std_error: *mut f64,
) -> CbStatus {
    guard(|| {
        let net = network_ref(net)?;
        if mean.is_null() {
            return Err(null("mean"));
        }
        check_len("tightening vector", net.network.num_lines(), len)?;
        let x = TighteningVector::new(slice(x, len, "x")?.to_vec()).map_err(fail)?;
        let eq = net.equilibrium().map_err(fail)?;
        let options = SimulationOptions { simulations, t_max };
        let est = estimate_severity(&net.network, &x, eq, &RateModel::default(), &options, seed)
            .map_err(fail)?;
        *mean = est.mean_failures;
        if !std_error.is_null() {
            *std_error = est.std_error;
        }
        Ok(())
    })
}

/// Closed-form expected improvement of a Gaussian over `best`.
#[no_mangle]
pub extern "C" fn cb_expected_improvement(mean: f64, sigma: f64, best: f64) -> f64 {
    ei_from_moments(mean, sigma, best)
}
