//! C interface to register sizing, operator mapping and the load model.
//!
//! Every function returns a [`QplanStatus`]. On failure the message is
//! available from [`qplan_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use num_traits::ToPrimitive;
use qplan::bootstrap::{snr_scale, snr_sizes, SwitchConfig};
use qplan::cost::CostEntry;
use qplan::load::{operator_load, LoadConfig, LoadMode};
use qplan::mapping::{assignment_cost, exact_map, greedy_map, Assignment, GoaInstance};
use qplan::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QplanStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Precondition = 4,
    GuardExceeded = 5,
    OutOfRange = 6,
    Internal = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QplanLoadMode {
    Average = 0,
    Best = 1,
    Worst = 2,
}

/// A validated mapping instance.
pub struct QplanInstance(GoaInstance);

/// A register-to-operator mapping and its cost.
pub struct QplanAssignment {
    alpha: Assignment,
    cost: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> QplanStatus {
    match e {
        Error::Json(_) => QplanStatus::Parse,
        Error::GuardExceeded { .. } => QplanStatus::GuardExceeded,
        _ => QplanStatus::Precondition,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (QplanStatus, String)>) -> QplanStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QplanStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            QplanStatus::Internal
        }
    }
}

fn lib_err(e: Error) -> (QplanStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (QplanStatus, String) {
    (QplanStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (QplanStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| (QplanStatus::InvalidUtf8, format!("{what}: {e}")))
}

/// Message of the last failure on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn qplan_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Slice-n-Repeat slice scale S in bits, as `num / den`.
///
/// # Safety
/// `num` and `den` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qplan_snr_scale(
    alus_per_stage: u32,
    stage_mem_bits: u64,
    max_reg_bits: u64,
    num: *mut u64,
    den: *mut u64,
) -> QplanStatus {
    guard(|| {
        if num.is_null() || den.is_null() {
            return Err(null("output"));
        }
        let cfg = SwitchConfig {
            stages: 1,
            alus_per_stage: alus_per_stage as usize,
            stage_mem_bits,
            max_reg_bits,
        };
        cfg.validate().map_err(lib_err)?;
        let s = snr_scale(&cfg);
        let (n, d) = (s.numer().to_u64(), s.denom().to_u64());
        let (Some(n), Some(d)) = (n, d) else {
            return Err((QplanStatus::OutOfRange, "scale does not fit in 64 bits".into()));
        };
        *num = n;
        *den = d;
        Ok(())
    })
}

/// Slice-n-Repeat register sizes in whole bits, stage by stage. `out` must
/// hold `stages * alus_per_stage` values.
///
/// # Safety
/// `out` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn qplan_snr_sizes(
    stages: u32,
    alus_per_stage: u32,
    stage_mem_bits: u64,
    max_reg_bits: u64,
    out: *mut u64,
    len: usize,
) -> QplanStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = SwitchConfig {
            stages: stages as usize,
            alus_per_stage: alus_per_stage as usize,
            stage_mem_bits,
            max_reg_bits,
        };
        cfg.validate().map_err(lib_err)?;
        if len < cfg.total_regs() {
            return Err((QplanStatus::OutOfRange, format!("need room for {} sizes", cfg.total_regs())));
        }
        let out = std::slice::from_raw_parts_mut(out, len);
        for (slot, r) in out.iter_mut().zip(&snr_sizes(&cfg).registers) {
            *slot = r.bits;
        }
        Ok(())
    })
}

/// Parses `{"registers": [{id, stage, cap}], "operators": [{id, size, c_s,
/// c_u, chain, pos}]}`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qplan_instance_from_json(json: *const c_char, out: *mut *mut QplanInstance) -> QplanStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(json, "json")?;
        let inst: GoaInstance = serde_json::from_str(text).map_err(|e| lib_err(e.into()))?;
        *out = Box::into_raw(Box::new(QplanInstance(inst)));
        Ok(())
    })
}

/// # Safety
/// `inst` must come from [`qplan_instance_from_json`] and not be freed yet.
#[no_mangle]
pub unsafe extern "C" fn qplan_instance_free(inst: *mut QplanInstance) {
    if !inst.is_null() {
        drop(Box::from_raw(inst));
    }
}

/// # Safety
/// `inst` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn qplan_instance_num_registers(inst: *const QplanInstance) -> usize {
    inst.as_ref().map_or(0, |i| i.0.registers.len())
}

/// # Safety
/// `inst` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn qplan_instance_num_operators(inst: *const QplanInstance) -> usize {
    inst.as_ref().map_or(0, |i| i.0.operators.len())
}

fn wrap(inst: &GoaInstance, alpha: Assignment) -> *mut QplanAssignment {
    let cost = assignment_cost(inst, &alpha).to_f64().unwrap_or(f64::INFINITY);
    Box::into_raw(Box::new(QplanAssignment { alpha, cost }))
}

/// Greedy mapping; `enhanced` turns on the undo step.
///
/// # Safety
/// `inst` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qplan_greedy_map(
    inst: *const QplanInstance,
    enhanced: bool,
    out: *mut *mut QplanAssignment,
) -> QplanStatus {
    guard(|| {
        let inst = inst.as_ref().ok_or_else(|| null("inst"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = wrap(&inst.0, greedy_map(&inst.0, enhanced));
        Ok(())
    })
}

/// Minimum-cost mapping by exhaustive search. Fails with
/// `GuardExceeded` on instances too large to enumerate.
///
/// # Safety
/// `inst` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qplan_exact_map(inst: *const QplanInstance, out: *mut *mut QplanAssignment) -> QplanStatus {
    guard(|| {
        let inst = inst.as_ref().ok_or_else(|| null("inst"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (alpha, _) = exact_map(&inst.0).map_err(lib_err)?;
        *out = wrap(&inst.0, alpha);
        Ok(())
    })
}

/// # Safety
/// `a` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn qplan_assignment_free(a: *mut QplanAssignment) {
    if !a.is_null() {
        drop(Box::from_raw(a));
    }
}

/// Sum of chain costs, rounded to the nearest double.
///
/// # Safety
/// `a` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn qplan_assignment_cost(a: *const QplanAssignment) -> f64 {
    a.as_ref().map_or(f64::NAN, |a| a.cost)
}

/// Operator id held by register `reg`, or -1 when it is unassigned.
///
/// # Safety
/// `a` must be a live handle; `op` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qplan_assignment_get(a: *const QplanAssignment, reg: usize, op: *mut i64) -> QplanStatus {
    guard(|| {
        let a = a.as_ref().ok_or_else(|| null("assignment"))?;
        if op.is_null() {
            return Err(null("op"));
        }
        if reg >= a.alpha.slots.len() {
            return Err((QplanStatus::OutOfRange, format!("register {reg} out of range")));
        }
        *op = a.alpha.get(reg).map_or(-1, |o| o as i64);
        Ok(())
    })
}

/// Stream-processor load of one operator holding `alloc_bits`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qplan_operator_load(
    req_bits: u64,
    n_in: u64,
    n_out: u64,
    alloc_bits: u64,
    mode: QplanLoadMode,
    key_bits: u64,
    out: *mut f64,
) -> QplanStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if key_bits == 0 {
            return Err((QplanStatus::Precondition, "key_bits must be positive".into()));
        }
        let mode = match mode {
            QplanLoadMode::Average => LoadMode::Average,
            QplanLoadMode::Best => LoadMode::Best,
            QplanLoadMode::Worst => LoadMode::Worst,
        };
        let cfg = LoadConfig { key_bits, mode };
        *out = operator_load(&CostEntry::new(req_bits, n_in, n_out), alloc_bits, &cfg);
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snr_scale_example() {
        let (mut n, mut d) = (0, 0);
        let mb = 1u64 << 20;
        assert_eq!(unsafe { qplan_snr_scale(8, 2 * mb, mb, &mut n, &mut d) }, QplanStatus::Ok);
        assert_eq!((n, d), (mb / 2, 9));
    }

    #[test]
    fn null_output_sets_message() {
        let s = unsafe { qplan_snr_scale(8, 10, 10, std::ptr::null_mut(), std::ptr::null_mut()) };
        assert_eq!(s, QplanStatus::NullPointer);
        let msg = unsafe { CStr::from_ptr(qplan_last_error()) };
        assert!(msg.to_str().unwrap().contains("null"));
    }
}
