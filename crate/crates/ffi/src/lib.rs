//! C interface to gridmatch.
//!
//! Every function returns a [`GmStatus`]. On failure the message is kept per
//! thread and can be read with [`gm_last_error`]. Objects are opaque handles
//! released with their matching `*_free`; strings returned through `char**`
//! are released with [`gm_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use gridmatch::config::RunConfig;
use gridmatch::market::reactive_caps;
use gridmatch::netmodel::{parse_network, parse_partition, validate_partition, BusLoad, IhrPartition, NetworkModel};
use gridmatch::opf::{parse_instance, residuals, solve, solver_settings, OpfInstance, OpfSolution, OpfStatus};
use gridmatch::scenario::gen_scenario;
use gridmatch::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Config = 4,
    Io = 5,
    /// The model rejected its input (bad network, market rule, shape).
    Domain = 6,
    Infeasible = 7,
    Solver = 8,
    /// Caller buffer too small; the required length was written back.
    BufferTooSmall = 9,
    Panic = 10,
}

/// Solution status of an OPF solve.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GmOpfStatus {
    Optimal = 0,
    Infeasible = 1,
    IterationLimit = 2,
}

pub struct GmNetwork {
    net: NetworkModel,
}

pub struct GmOpfInstance {
    inst: OpfInstance,
}

pub struct GmOpfSolution {
    inst: OpfInstance,
    sol: OpfSolution,
}

pub struct GmConfig {
    cfg: RunConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> GmStatus {
    match e {
        Error::Parse { .. } => GmStatus::Parse,
        Error::Config(_) => GmStatus::Config,
        Error::Io { .. } => GmStatus::Io,
        Error::Infeasible(_) => GmStatus::Infeasible,
        Error::Solver(_) | Error::PowerFlowDiverged { .. } => GmStatus::Solver,
        _ => GmStatus::Domain,
    }
}

/// Runs `f`, turning errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), (GmStatus, String)>) -> GmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GmStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            GmStatus::Panic
        }
    }
}

fn lib<T>(r: gridmatch::Result<T>) -> Result<T, (GmStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (GmStatus, String) {
    (GmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (GmStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (GmStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (GmStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (GmStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

fn c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length, or 0 if none.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn gm_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn gm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a network file's contents.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gm_network_parse(text: *const c_char, out: *mut *mut GmNetwork) -> GmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let net = lib(parse_network(str_arg(text, "text")?))?;
        *out = boxed(GmNetwork { net });
        Ok(())
    })
}

/// The bundled IEEE 33-bus feeder.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gm_network_ieee33(out: *mut *mut GmNetwork) -> GmStatus {
    guard(|| {
        *out_arg(out, "out")? = boxed(GmNetwork {
            net: NetworkModel::ieee33(),
        });
        Ok(())
    })
}

/// # Safety
/// `net` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gm_network_free(net: *mut GmNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// # Safety
/// `net` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gm_network_bus_count(net: *const GmNetwork, out: *mut usize) -> GmStatus {
    guard(|| {
        *out_arg(out, "out")? = handle(net, "net")?.net.buses().len();
        Ok(())
    })
}

/// Checks a partition's intra-zone voltage spread at `load_scale` times the
/// nominal loads. `partition` is a partition file's contents, or null for the
/// bundled 33-bus zones. `*pass` is set to 1 when every zone is within delta.
///
/// # Safety
/// `net` must be a live handle; `partition` null or NUL-terminated; `pass` writable.
#[no_mangle]
pub unsafe extern "C" fn gm_partition_validate(
    net: *const GmNetwork,
    partition: *const c_char,
    load_scale: f64,
    pass: *mut c_int,
) -> GmStatus {
    guard(|| {
        let pass = out_arg(pass, "pass")?;
        let net = &handle(net, "net")?.net;
        let part = if partition.is_null() {
            if net.buses().len() != 33 {
                return Err((
                    GmStatus::Config,
                    "the bundled partition only fits the 33-bus feeder".into(),
                ));
            }
            IhrPartition::ieee33(net)
        } else {
            lib(parse_partition(str_arg(partition, "partition")?, net))?
        };
        let loads: Vec<BusLoad> = net
            .nominal_loads()
            .iter()
            .map(|l| BusLoad::new(l.p_kw * load_scale, l.q_kvar * load_scale))
            .collect();
        let rep = lib(validate_partition(net, &part, &loads))?;
        *pass = rep.pass as c_int;
        Ok(())
    })
}

/// Parses an OPF instance file's contents.
///
/// # Safety
/// `text` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gm_opf_instance_parse(text: *const c_char, out: *mut *mut GmOpfInstance) -> GmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let inst = lib(parse_instance(str_arg(text, "text")?))?;
        *out = boxed(GmOpfInstance { inst });
        Ok(())
    })
}

/// # Safety
/// `inst` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gm_opf_instance_free(inst: *mut GmOpfInstance) {
    if !inst.is_null() {
        drop(Box::from_raw(inst));
    }
}

/// Solves an instance. An infeasible instance still yields a solution handle
/// (status `Infeasible`, message in the last error) and returns
/// `GmStatus::Infeasible`.
///
/// # Safety
/// `inst` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gm_opf_solve(inst: *const GmOpfInstance, out: *mut *mut GmOpfSolution) -> GmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let inst = &handle(inst, "inst")?.inst;
        let sol = lib(solve(inst, &solver_settings()))?;
        let status = sol.status;
        let msg = sol.message.clone();
        *out = boxed(GmOpfSolution {
            inst: inst.clone(),
            sol,
        });
        match status {
            OpfStatus::Optimal => Ok(()),
            OpfStatus::Infeasible => Err((GmStatus::Infeasible, msg)),
            OpfStatus::IterationLimit => Err((GmStatus::Solver, msg)),
        }
    })
}

/// # Safety
/// `sol` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gm_opf_solution_free(sol: *mut GmOpfSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// # Safety
/// `sol` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gm_opf_solution_status(sol: *const GmOpfSolution, out: *mut GmOpfStatus) -> GmStatus {
    guard(|| {
        *out_arg(out, "out")? = match handle(sol, "sol")?.sol.status {
            OpfStatus::Optimal => GmOpfStatus::Optimal,
            OpfStatus::Infeasible => GmOpfStatus::Infeasible,
            OpfStatus::IterationLimit => GmOpfStatus::IterationLimit,
        };
        Ok(())
    })
}

/// Slack active injection (pu) and objective ($).
///
/// # Safety
/// `sol` must be a live handle; `p_g` and `objective` writable.
#[no_mangle]
pub unsafe extern "C" fn gm_opf_solution_summary(
    sol: *const GmOpfSolution,
    p_g: *mut f64,
    objective: *mut f64,
) -> GmStatus {
    guard(|| {
        let s = &handle(sol, "sol")?.sol;
        *out_arg(p_g, "p_g")? = s.p_g;
        *out_arg(objective, "objective")? = s.objective;
        Ok(())
    })
}

/// Squared voltages per bus (pu), in file order. With `buf` null or `len`
/// too small, writes the bus count to `*written` and returns
/// `BufferTooSmall`.
///
/// # Safety
/// `sol` must be a live handle; `buf` null or `len` writable doubles; `written` writable.
#[no_mangle]
pub unsafe extern "C" fn gm_opf_solution_v_sq(
    sol: *const GmOpfSolution,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> GmStatus {
    guard(|| {
        let v = &handle(sol, "sol")?.sol.v_sq;
        let written = out_arg(written, "written")?;
        *written = v.len();
        if buf.is_null() || len < v.len() {
            return Err((GmStatus::BufferTooSmall, format!("need {} values", v.len())));
        }
        ptr::copy_nonoverlapping(v.as_ptr(), buf, v.len());
        Ok(())
    })
}

/// Solution CSV (`*csv`) and residual report CSV (`*residuals`); release
/// both with `gm_string_free`. Either output may be null to skip it.
///
/// # Safety
/// `sol` must be a live handle; `csv` and `residuals_csv` null or writable.
#[no_mangle]
pub unsafe extern "C" fn gm_opf_solution_csv(
    sol: *const GmOpfSolution,
    csv: *mut *mut c_char,
    residuals_csv: *mut *mut c_char,
) -> GmStatus {
    guard(|| {
        let h = handle(sol, "sol")?;
        if let Some(out) = csv.as_mut() {
            *out = c_string(h.sol.to_csv(&h.inst));
        }
        if let Some(out) = residuals_csv.as_mut() {
            *out = c_string(residuals(&h.inst, &h.sol).to_csv());
        }
        Ok(())
    })
}

/// Reactive window [q_min, q_max] (kVAr) of an inverter rated `r_s` kVA
/// producing `r_p` kW over a base reactive load `base_q`.
///
/// # Safety
/// `q_min` and `q_max` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gm_reactive_caps(
    r_s: f64,
    r_p: f64,
    base_q: f64,
    q_min: *mut f64,
    q_max: *mut f64,
) -> GmStatus {
    guard(|| {
        let lo = out_arg(q_min, "q_min")?;
        let hi = out_arg(q_max, "q_max")?;
        let caps = lib(reactive_caps(r_s, r_p, base_q))?;
        *lo = caps.q_min;
        *hi = caps.q_max;
        Ok(())
    })
}

/// Loads a run configuration; relative paths resolve against its directory.
///
/// # Safety
/// `path` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gm_config_load(path: *const c_char, out: *mut *mut GmConfig) -> GmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let cfg = lib(RunConfig::load(Path::new(str_arg(path, "path")?)))?;
        *out = boxed(GmConfig { cfg });
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gm_config_free(cfg: *mut GmConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Generates the day for scenario seed `seed` as CSV; release with
/// `gm_string_free`.
///
/// # Safety
/// `cfg` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gm_scenario_generate(cfg: *const GmConfig, seed: u64, out: *mut *mut c_char) -> GmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let data = lib(gen_scenario(&handle(cfg, "cfg")?.cfg.scenario, seed))?;
        *out = c_string(data.to_csv());
        Ok(())
    })
}
