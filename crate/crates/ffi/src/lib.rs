//! C interface to the spherefdn toolkit.
//!
//! Every fallible call returns an [`SfdnStatus`]; results come back through
//! out-pointers. After a non-OK status, [`sfdn_last_error`] describes the
//! failure on the calling thread. Handles are opaque and must be released with
//! their matching `_free` function. A handle may be moved between threads but
//! not used from two threads at once.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use spherefdn::acoustics::{speed_of_sound, SphereSpec};
use spherefdn::analysis::verify_fdn_against_theory;
use spherefdn::bessel::{find_roots, spherical_j, spherical_j_prime, RootTable};
use spherefdn::config::ProjectConfig;
use spherefdn::design::{design_sphere, ChannelDesign, DesignOptions};
use spherefdn::fdn::{build_sphere_fdn, process, FdnConfig, FdnState, MatrixChoice};
use spherefdn::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfdnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    Numeric = 4,
    DesignFailure = 5,
    Stability = 6,
    Config = 7,
    Io = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfdnMatrixKind {
    Diagonal = 0,
    Lambertian = 1,
    Blend = 2,
}

/// One channel of a sphere design. `residual` is NaN for channels that were
/// not fitted.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SfdnChannel {
    pub order: u32,
    pub delay_samples: usize,
    pub pole_radius: f64,
    pub first_pole_angle: f64,
    pub pole_separation: f64,
    pub n_pole_pairs: usize,
    pub loop_gain: f64,
    pub residual: f64,
    pub harmonic_fallback: bool,
}

pub struct SfdnRootTable(RootTable);

pub struct SfdnDesign {
    channels: Vec<ChannelDesign>,
    sample_rate: f64,
}

pub struct SfdnNetwork {
    config: FdnConfig,
    state: FdnState,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> SfdnStatus {
    match err {
        Error::Domain(_) => SfdnStatus::Domain,
        Error::Argument(_) => SfdnStatus::InvalidArgument,
        Error::Numeric(_) => SfdnStatus::Numeric,
        Error::DesignFailure { .. } => SfdnStatus::DesignFailure,
        Error::Stability(_) => SfdnStatus::Stability,
        Error::Config { .. } => SfdnStatus::Config,
        Error::Wav(_) | Error::Io(_) => SfdnStatus::Io,
    }
}

struct Fail(SfdnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(SfdnStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SfdnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SfdnStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SfdnStatus::Panic
        }
    }
}

fn non_null<T>(p: *mut T, what: &str) -> Result<*mut T, Fail> {
    if p.is_null() {
        Err(Fail(SfdnStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(p)
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail(SfdnStatus::NullPointer, format!("{what} is null")))
}

unsafe fn borrow_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| Fail(SfdnStatus::NullPointer, format!("{what} is null")))
}

fn order(n: i32) -> Result<u32, Fail> {
    u32::try_from(n).map_err(|_| Fail(SfdnStatus::Domain, format!("order {n} is negative")))
}

/// Message for the last failure on this thread, or an empty string. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sfdn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sfdn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out` must be null or point to writable memory for one `double`.
#[no_mangle]
pub unsafe extern "C" fn sfdn_spherical_j(n: i32, x: f64, out: *mut f64) -> SfdnStatus {
    guard(|| {
        let out = non_null(out, "out")?;
        *out = spherical_j(order(n)?, x)?;
        Ok(())
    })
}

/// # Safety
/// `out` must be null or point to writable memory for one `double`.
#[no_mangle]
pub unsafe extern "C" fn sfdn_spherical_j_prime(n: i32, x: f64, out: *mut f64) -> SfdnStatus {
    guard(|| {
        let out = non_null(out, "out")?;
        *out = spherical_j_prime(order(n)?, x)?;
        Ok(())
    })
}

/// # Safety
/// `out` must be null or point to writable memory for one `double`.
#[no_mangle]
pub unsafe extern "C" fn sfdn_speed_of_sound(temperature_c: f64, out: *mut f64) -> SfdnStatus {
    guard(|| {
        let out = non_null(out, "out")?;
        *out = speed_of_sound(temperature_c)?;
        Ok(())
    })
}

/// Resonance `s` (1-based) of order `n` in a sphere of radius `radius_m`.
///
/// # Safety
/// `out` must be null or point to writable memory for one `double`.
#[no_mangle]
pub unsafe extern "C" fn sfdn_sphere_frequency(
    radius_m: f64,
    temperature_c: f64,
    n: i32,
    s: usize,
    out: *mut f64,
) -> SfdnStatus {
    guard(|| {
        let out = non_null(out, "out")?;
        let n = order(n)?;
        let spec = SphereSpec::new(radius_m, temperature_c)?.with_orders(n, s.max(1))?;
        let series = spec.mode_series()?;
        *out = series[n as usize]
            .frequencies
            .get(s.wrapping_sub(1))
            .copied()
            .ok_or_else(|| invalid(format!("root index {s} out of range")))?;
        Ok(())
    })
}

/// The first `count` roots of j'_n.
///
/// # Safety
/// `out` must be null or point to writable memory for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn sfdn_roots_new(
    n: i32,
    count: usize,
    out: *mut *mut SfdnRootTable,
) -> SfdnStatus {
    guard(|| {
        let out = non_null(out, "out")?;
        *out = ptr::null_mut();
        let table = find_roots(order(n)?, count)?;
        *out = Box::into_raw(Box::new(SfdnRootTable(table)));
        Ok(())
    })
}

/// # Safety
/// `table` must be null or a live handle from [`sfdn_roots_new`].
#[no_mangle]
pub unsafe extern "C" fn sfdn_roots_len(table: *const SfdnRootTable) -> usize {
    table.as_ref().map_or(0, |t| t.0.len())
}

/// Root `s` (1-based).
///
/// # Safety
/// `table` must be null or a live handle; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn sfdn_roots_get(
    table: *const SfdnRootTable,
    s: usize,
    out: *mut f64,
) -> SfdnStatus {
    guard(|| {
        let table = borrow(table, "table")?;
        let out = non_null(out, "out")?;
        *out = table
            .0
            .root(s)
            .ok_or_else(|| invalid(format!("root index {s} out of range")))?;
        Ok(())
    })
}

/// # Safety
/// `table` must be null or a handle from [`sfdn_roots_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sfdn_roots_free(table: *mut SfdnRootTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Designs one loop per order `0..=max_order` for a sphere. `pole_pairs == 0`
/// picks the radius-dependent default.
///
/// # Safety
/// `out` must be null or point to writable memory for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn sfdn_design_sphere(
    radius_m: f64,
    temperature_c: f64,
    max_order: i32,
    pole_pairs: usize,
    pole_radius: f64,
    loop_gain: f64,
    sample_rate: f64,
    out: *mut *mut SfdnDesign,
) -> SfdnStatus {
    guard(|| {
        let out = non_null(out, "out")?;
        *out = ptr::null_mut();
        let spec = SphereSpec::new(radius_m, temperature_c)?
            .with_orders(order(max_order)?, SphereSpec::DEFAULT_ROOTS_PER_ORDER)?;
        let options = DesignOptions {
            sample_rate,
            pole_pairs: (pole_pairs > 0).then_some(pole_pairs),
            pole_radius,
            loop_gain,
            ..DesignOptions::default()
        };
        let channels = design_sphere(&spec, &options)?;
        *out = Box::into_raw(Box::new(SfdnDesign {
            channels,
            sample_rate,
        }));
        Ok(())
    })
}

/// # Safety
/// `design` must be null or a live handle from [`sfdn_design_sphere`].
#[no_mangle]
pub unsafe extern "C" fn sfdn_design_channel_count(design: *const SfdnDesign) -> usize {
    design.as_ref().map_or(0, |d| d.channels.len())
}

/// # Safety
/// `design` must be null or a live handle; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn sfdn_design_channel(
    design: *const SfdnDesign,
    index: usize,
    out: *mut SfdnChannel,
) -> SfdnStatus {
    guard(|| {
        let design = borrow(design, "design")?;
        let out = non_null(out, "out")?;
        let ch = design
            .channels
            .get(index)
            .ok_or_else(|| invalid(format!("channel {index} out of range")))?;
        let d = &ch.design;
        *out = SfdnChannel {
            order: ch.order,
            delay_samples: d.delay_samples,
            pole_radius: d.pole_radius,
            first_pole_angle: d.first_pole_angle,
            pole_separation: d.pole_separation,
            n_pole_pairs: d.n_pole_pairs,
            loop_gain: d.loop_gain,
            residual: ch.residual.unwrap_or(f64::NAN),
            harmonic_fallback: ch.harmonic_fallback,
        };
        Ok(())
    })
}

/// # Safety
/// `design` must be null or a handle from [`sfdn_design_sphere`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sfdn_design_free(design: *mut SfdnDesign) {
    if !design.is_null() {
        drop(Box::from_raw(design));
    }
}

fn network(config: FdnConfig) -> Result<*mut SfdnNetwork, Fail> {
    let state = FdnState::new(&config)?;
    Ok(Box::into_raw(Box::new(SfdnNetwork { config, state })))
}

/// Network with one channel per designed order and unit input and output
/// gains. `alpha` is only read for [`SfdnMatrixKind::Blend`].
///
/// # Safety
/// `design` must be null or a live handle; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn sfdn_network_from_design(
    design: *const SfdnDesign,
    matrix: SfdnMatrixKind,
    alpha: f64,
    out: *mut *mut SfdnNetwork,
) -> SfdnStatus {
    guard(|| {
        let design = borrow(design, "design")?;
        let out = non_null(out, "out")?;
        *out = ptr::null_mut();
        let choice = match matrix {
            SfdnMatrixKind::Diagonal => MatrixChoice::Diagonal,
            SfdnMatrixKind::Lambertian => MatrixChoice::Lambertian,
            SfdnMatrixKind::Blend => MatrixChoice::Blend { alpha },
        };
        let loops: Vec<_> = design.channels.iter().map(|c| c.design.clone()).collect();
        *out = network(build_sphere_fdn(&loops, choice, None, None, design.sample_rate)?)?;
        Ok(())
    })
}

/// Builds the network described by a TOML project file.
///
/// # Safety
/// `path` must be null or a NUL-terminated string; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn sfdn_network_from_config(
    path: *const c_char,
    out: *mut *mut SfdnNetwork,
) -> SfdnStatus {
    guard(|| {
        let out = non_null(out, "out")?;
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(Fail(SfdnStatus::NullPointer, "path is null".into()));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not valid UTF-8"))?;
        let plan = ProjectConfig::load(Path::new(path))?.build()?;
        *out = network(plan.fdn)?;
        Ok(())
    })
}

/// # Safety
/// `net` must be null or a live network handle.
#[no_mangle]
pub unsafe extern "C" fn sfdn_network_channel_count(net: *const SfdnNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.config.len())
}

/// # Safety
/// `net` must be null or a live network handle.
#[no_mangle]
pub unsafe extern "C" fn sfdn_network_sample_rate(net: *const SfdnNetwork) -> f64 {
    net.as_ref().map_or(0.0, |n| n.config.sample_rate)
}

/// Processes `len` samples. State carries over between calls, so a signal
/// may be fed in blocks of any size. `input` and `output` may alias.
///
/// # Safety
/// `net` must be a live handle; `input` and `output` must each be null or
/// valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sfdn_network_process(
    net: *mut SfdnNetwork,
    input: *const f64,
    output: *mut f64,
    len: usize,
) -> SfdnStatus {
    guard(|| {
        let net = borrow_mut(net, "network")?;
        if len == 0 {
            return Ok(());
        }
        if input.is_null() {
            return Err(Fail(SfdnStatus::NullPointer, "input is null".into()));
        }
        let output = non_null(output, "output")?;
        let block = std::slice::from_raw_parts(input, len).to_vec();
        let out = std::slice::from_raw_parts_mut(output, len);
        process(&net.config, &mut net.state, &block, out)?;
        Ok(())
    })
}

/// Clears all delay lines and filter memories.
///
/// # Safety
/// `net` must be null or a live network handle.
#[no_mangle]
pub unsafe extern "C" fn sfdn_network_reset(net: *mut SfdnNetwork) -> SfdnStatus {
    guard(|| {
        borrow_mut(net, "network")?.state.reset();
        Ok(())
    })
}

/// Renders the network's impulse response and checks every theoretical
/// resonance of the given sphere against its peaks. Does not touch the
/// handle's running state.
///
/// # Safety
/// `net` must be a live handle; `passed` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn sfdn_network_verify(
    net: *const SfdnNetwork,
    radius_m: f64,
    temperature_c: f64,
    max_order: i32,
    tolerance_percent: f64,
    passed: *mut bool,
) -> SfdnStatus {
    guard(|| {
        let net = borrow(net, "network")?;
        let passed = non_null(passed, "passed")?;
        let spec = SphereSpec::new(radius_m, temperature_c)?
            .with_orders(order(max_order)?, SphereSpec::DEFAULT_ROOTS_PER_ORDER)?;
        *passed = verify_fdn_against_theory(&net.config, &spec, tolerance_percent)?.passed;
        Ok(())
    })
}

/// # Safety
/// `net` must be null or a network handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sfdn_network_free(net: *mut SfdnNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}
