//! C interface to `netpricing`.
//!
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `np_*_free`. Every fallible call returns an
//! [`NpStatus`]; on failure the message is available from
//! [`np_last_error`] on the same thread until the next failing call.
//! Matrices are exchanged row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use nalgebra::{DMatrix, DVector};
use netpricing::equilibrium::{simulate_panel, PanelData, PriceSampler, ShockModel};
use netpricing::estimator::{estimate, EstimateOptions, EstimationResult};
use netpricing::network::{GeneratorSpec, NetworkInstance};
use netpricing::pricing::{benchmark_prices, estimated_prices, revenue_gap};
use netpricing::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NpStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Bad configuration, shapes or values; also unreadable input files.
    InvalidArgument = 2,
    /// The model assumptions do not hold for the given data.
    ModelViolation = 3,
    /// Singular matrix, non-convergence or another numerical failure.
    Numeric = 4,
    /// An output buffer has the wrong length.
    BufferSize = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

/// Matrices held by an estimate handle.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NpMatrix {
    /// Step 1 estimate Ŵ.
    WHat = 0,
    /// Debiased estimate W̌.
    WCheck = 1,
    /// Entry thresholds μ.
    Mu = 2,
    /// Thresholded estimate W̌^μ.
    WCheckMu = 3,
    /// Entry standard errors σ̂.
    SigmaHat = 4,
}

/// Intercept vectors held by an estimate handle.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NpVector {
    VHat = 0,
    VCheck = 1,
}

pub struct NpNetwork(NetworkInstance);
pub struct NpPanel(PanelData);
pub struct NpEstimate(EstimationResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(NpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e.exit_code() {
            2 => NpStatus::InvalidArgument,
            4 => NpStatus::Numeric,
            _ => NpStatus::ModelViolation,
        };
        Fail(status, e.to_string())
    }
}

fn fail<T>(status: NpStatus, msg: impl Into<String>) -> Result<T, Fail> {
    Err(Fail(status, msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NpStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            NpStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(NpStatus::NullPointer, format!("{what} is null")))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return fail(NpStatus::NullPointer, format!("{what} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(NpStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Parse an optional JSON argument; null selects the default.
unsafe fn json_or_default<T: serde::de::DeserializeOwned + Default>(p: *const c_char, what: &str) -> Result<T, Fail> {
    if p.is_null() {
        return Ok(T::default());
    }
    serde_json::from_str(text(p, what)?).map_err(|e| Fail(NpStatus::InvalidArgument, format!("{what}: {e}")))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return fail(NpStatus::NullPointer, "output handle pointer is null");
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn out_slice<'a>(buf: *mut f64, len: usize, need: usize) -> Result<&'a mut [f64], Fail> {
    if buf.is_null() {
        return fail(NpStatus::NullPointer, "output buffer is null");
    }
    if len != need {
        return fail(NpStatus::BufferSize, format!("buffer holds {len} values, {need} needed"));
    }
    Ok(slice::from_raw_parts_mut(buf, need))
}

unsafe fn in_slice<'a, T>(buf: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if buf.is_null() {
        return fail(NpStatus::NullPointer, format!("{what} is null"));
    }
    Ok(slice::from_raw_parts(buf, len))
}

fn copy_row_major(m: &DMatrix<f64>, out: &mut [f64]) {
    for (k, v) in out.iter_mut().enumerate() {
        *v = m[(k / m.ncols(), k % m.ncols())];
    }
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn np_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn np_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn np_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Generate a network from a generator description such as
/// `{"family":"banded","n_nodes":20,"latent_fraction":0.5,"b_value":1.0,"a_value":2.0,"p_bar":1.5,"bandwidth":2,"weight_scale":1.0}`.
///
/// # Safety
/// `spec_json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn np_network_generate(spec_json: *const c_char, seed: u64, out: *mut *mut NpNetwork) -> NpStatus {
    guard(|| {
        let spec: GeneratorSpec = serde_json::from_str(text(spec_json, "spec_json")?)
            .map_err(|e| Fail(NpStatus::InvalidArgument, format!("generator: {e}")))?;
        write_out(out, NpNetwork(spec.generate(seed)?))
    })
}

/// Load a network from a JSON file written by `netpricing generate`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn np_network_read(path: *const c_char, out: *mut *mut NpNetwork) -> NpStatus {
    guard(|| write_out(out, NpNetwork(NetworkInstance::read(Path::new(text(path, "path")?))?)))
}

/// Parse a network from a JSON string.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn np_network_from_json(json: *const c_char, out: *mut *mut NpNetwork) -> NpStatus {
    guard(|| write_out(out, NpNetwork(NetworkInstance::from_json(text(json, "json")?)?)))
}

/// Serialize a network to JSON. Release the result with [`np_string_free`].
///
/// # Safety
/// `net` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn np_network_to_json(net: *const NpNetwork, out: *mut *mut c_char) -> NpStatus {
    guard(|| {
        let json = deref(net, "network")?.0.to_json()?;
        if out.is_null() {
            return fail(NpStatus::NullPointer, "output string pointer is null");
        }
        *out = CString::new(json).map_err(|e| Fail(NpStatus::Numeric, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `net` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn np_network_free(net: *mut NpNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of nodes and of observable nodes.
///
/// # Safety
/// `net` must be a live handle; the output pointers writable.
#[no_mangle]
pub unsafe extern "C" fn np_network_size(net: *const NpNetwork, n_nodes: *mut usize, n_observable: *mut usize) -> NpStatus {
    guard(|| {
        let inst = &deref(net, "network")?.0;
        if n_nodes.is_null() || n_observable.is_null() {
            return fail(NpStatus::NullPointer, "size output is null");
        }
        *n_nodes = inst.n_nodes;
        *n_observable = inst.observable.len();
        Ok(())
    })
}

/// Revenue-maximizing observable prices under the true network, written to
/// `prices` (length `|V_O|`), and the expected revenue at them.
///
/// # Safety
/// `net` must be a live handle, `prices` valid for `len` writes and
/// `revenue` null or writable.
#[no_mangle]
pub unsafe extern "C" fn np_benchmark_prices(net: *const NpNetwork, prices: *mut f64, len: usize, revenue: *mut f64) -> NpStatus {
    guard(|| {
        let d = deref(net, "network")?.0.derive()?;
        let sol = benchmark_prices(&d)?;
        out_slice(prices, len, sol.prices.len())?.copy_from_slice(sol.prices.as_slice());
        if !revenue.is_null() {
            *revenue = sol.expected_revenue;
        }
        Ok(())
    })
}

/// Relative revenue shortfall of `prices` against the benchmark, under the
/// true network.
///
/// # Safety
/// `net` must be a live handle, `prices` valid for `len` reads, `gap` writable.
#[no_mangle]
pub unsafe extern "C" fn np_revenue_gap(net: *const NpNetwork, prices: *const f64, len: usize, gap: *mut f64) -> NpStatus {
    guard(|| {
        let d = deref(net, "network")?.0.derive()?;
        let p = in_slice(prices, len, "prices")?;
        if p.len() != d.n_observable() {
            return fail(NpStatus::BufferSize, format!("{} prices for {} observable nodes", p.len(), d.n_observable()));
        }
        if gap.is_null() {
            return fail(NpStatus::NullPointer, "gap output is null");
        }
        *gap = revenue_gap(&d, &DVector::from_column_slice(p))?.gap;
        Ok(())
    })
}

/// Simulate `n` periods. `sampler_json` (e.g. `{"kind":"uniform","low":0.2,"high":1.0}`)
/// and `shocks_json` (e.g. `{"family":"gaussian_truncated","sigma":0.15}`)
/// may be null for the defaults.
///
/// # Safety
/// `net` must be a live handle, string arguments null or NUL-terminated,
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn np_simulate(
    net: *const NpNetwork,
    n: usize,
    sampler_json: *const c_char,
    shocks_json: *const c_char,
    seed: u64,
    out: *mut *mut NpPanel,
) -> NpStatus {
    guard(|| {
        let inst = &deref(net, "network")?.0;
        let sampler: PriceSampler = json_or_default(sampler_json, "sampler_json")?;
        let shocks: ShockModel = json_or_default(shocks_json, "shocks_json")?;
        write_out(out, NpPanel(simulate_panel(inst, n, &sampler, &shocks, seed)?))
    })
}

/// Build a panel from caller data: `ids` has `q` entries, `prices` and
/// `consumption` are `n × q` row-major.
///
/// # Safety
/// Buffers must be valid for the stated lengths and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn np_panel_new(
    ids: *const usize,
    q: usize,
    n: usize,
    prices: *const f64,
    consumption: *const f64,
    out: *mut *mut NpPanel,
) -> NpStatus {
    guard(|| {
        let ids = in_slice(ids, q, "ids")?.to_vec();
        let len = n.checked_mul(q).ok_or_else(|| Fail(NpStatus::InvalidArgument, "n·q overflows".into()))?;
        let p = DMatrix::from_row_slice(n, q, in_slice(prices, len, "prices")?);
        let y = DMatrix::from_row_slice(n, q, in_slice(consumption, len, "consumption")?);
        write_out(out, NpPanel(PanelData::new(ids, p, y)?))
    })
}

/// Load a panel from a JSON file written by `netpricing simulate`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn np_panel_read(path: *const c_char, out: *mut *mut NpPanel) -> NpStatus {
    guard(|| write_out(out, NpPanel(PanelData::read(Path::new(text(path, "path")?))?)))
}

/// Panel length and number of observable nodes.
///
/// # Safety
/// `panel` must be a live handle; the output pointers writable.
#[no_mangle]
pub unsafe extern "C" fn np_panel_size(panel: *const NpPanel, n: *mut usize, q: *mut usize) -> NpStatus {
    guard(|| {
        let panel = &deref(panel, "panel")?.0;
        if n.is_null() || q.is_null() {
            return fail(NpStatus::NullPointer, "size output is null");
        }
        *n = panel.n();
        *q = panel.n_observable();
        Ok(())
    })
}

/// # Safety
/// `panel` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn np_panel_free(panel: *mut NpPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// Run the estimator. `options_json` (e.g.
/// `{"threshold_mode":{"mode":"bootstrap","alpha":0.05,"draws":1000},"seed":3}`)
/// may be null for the defaults.
///
/// # Safety
/// `panel` must be a live handle, `options_json` null or NUL-terminated,
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn np_estimate(panel: *const NpPanel, options_json: *const c_char, out: *mut *mut NpEstimate) -> NpStatus {
    guard(|| {
        let panel = &deref(panel, "panel")?.0;
        let options: EstimateOptions = json_or_default(options_json, "options_json")?;
        write_out(out, NpEstimate(estimate(panel, &options)?))
    })
}

/// Side length `q` of the estimated matrices.
///
/// # Safety
/// `est` must be a live handle and `q` writable.
#[no_mangle]
pub unsafe extern "C" fn np_estimate_dim(est: *const NpEstimate, q: *mut usize) -> NpStatus {
    guard(|| {
        let est = &deref(est, "estimate")?.0;
        if q.is_null() {
            return fail(NpStatus::NullPointer, "q is null");
        }
        *q = est.w_check.nrows();
        Ok(())
    })
}

/// Copy one `q × q` matrix, row-major, into `buf` (length `q²`).
///
/// # Safety
/// `est` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn np_estimate_matrix(est: *const NpEstimate, which: NpMatrix, buf: *mut f64, len: usize) -> NpStatus {
    guard(|| {
        let est = &deref(est, "estimate")?.0;
        let m = match which {
            NpMatrix::WHat => &est.w_hat,
            NpMatrix::WCheck => &est.w_check,
            NpMatrix::Mu => &est.mu,
            NpMatrix::WCheckMu => &est.w_check_mu,
            NpMatrix::SigmaHat => &est.sigma_hat,
        };
        copy_row_major(m, out_slice(buf, len, m.len())?);
        Ok(())
    })
}

/// Copy an intercept vector into `buf` (length `q`).
///
/// # Safety
/// `est` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn np_estimate_vector(est: *const NpEstimate, which: NpVector, buf: *mut f64, len: usize) -> NpStatus {
    guard(|| {
        let est = &deref(est, "estimate")?.0;
        let v = match which {
            NpVector::VHat => &est.v_hat,
            NpVector::VCheck => &est.v_check,
        };
        out_slice(buf, len, v.len())?.copy_from_slice(v.as_slice());
        Ok(())
    })
}

/// Prices maximizing the plug-in revenue under the thresholded estimate,
/// within `[0, p_bar]`.
///
/// # Safety
/// `est` must be a live handle, `prices` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn np_estimate_prices(est: *const NpEstimate, p_bar: f64, prices: *mut f64, len: usize) -> NpStatus {
    guard(|| {
        let sol = estimated_prices(&deref(est, "estimate")?.0, p_bar)?;
        out_slice(prices, len, sol.prices.len())?.copy_from_slice(sol.prices.as_slice());
        Ok(())
    })
}

/// Serialize the estimate to JSON. Release the result with [`np_string_free`].
///
/// # Safety
/// `est` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn np_estimate_to_json(est: *const NpEstimate, out: *mut *mut c_char) -> NpStatus {
    guard(|| {
        let json = serde_json::to_string(&deref(est, "estimate")?.0).map_err(|e| Fail(NpStatus::Numeric, e.to_string()))?;
        if out.is_null() {
            return fail(NpStatus::NullPointer, "output string pointer is null");
        }
        *out = CString::new(json).map_err(|e| Fail(NpStatus::Numeric, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `est` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn np_estimate_free(est: *mut NpEstimate) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}
