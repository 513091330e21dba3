use std::ffi::{CStr, CString};
use std::ptr;

use transfer_phase_ffi::*;

const RELU_HARD: &str = r#"{"alpha_s":4.0,"alpha_t":2.0,"rho":0.5,"lambda":0.0,
  "loss":{"variant":"squared","form":"regression"},"phi":"relu","phi_hat":"identity",
  "upsilon":0,"transfer":{"mode":"hard","delta":0.5}}"#;

fn spec(json: &str) -> *mut TpSpec {
    let c = CString::new(json).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { tp_spec_from_json(c.as_ptr(), &mut out) }, TpStatus::Ok);
    out
}

fn last_error() -> String {
    let p = tp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn predict_round_trip() {
    unsafe {
        let s = spec(RELU_HARD);
        let mut solver = ptr::null_mut();
        assert_eq!(tp_solver_new(&mut solver), TpStatus::Ok);
        let mut pred = TpPrediction::default();
        assert_eq!(tp_predict(solver, s, &mut pred), TpStatus::Ok);
        assert!(tp_last_error().is_null());

        let mut src = TpSaddle::default();
        let mut tgt = TpSaddle::default();
        assert_eq!(tp_solve_source(solver, s, &mut src), TpStatus::Ok);
        assert_eq!(tp_solve_target(solver, s, &src, &mut tgt), TpStatus::Ok);
        assert_eq!(src, pred.source);
        assert_eq!(tgt, pred.target);
        // δ = 1/2 closed form: q_t = ½·c + ½·ρ q_s with q_s = c.
        assert!((tgt.q - 0.375).abs() < 1e-9, "{}", tgt.q);

        let mut e = 0.0;
        assert_eq!(tp_gen_error(s, tgt.q, tgt.r, &mut e), TpStatus::Ok);
        assert_eq!(e, pred.gen_error);
        assert_eq!(tp_train_error(s, &tgt, &mut e), TpStatus::Ok);
        assert_eq!(e, pred.train_error);

        let mut text = ptr::null_mut();
        assert_eq!(tp_spec_to_json(s, &mut text), TpStatus::Ok);
        let again = spec(CStr::from_ptr(text).to_str().unwrap());
        tp_string_free(text);
        let mut pred2 = TpPrediction::default();
        assert_eq!(tp_predict(solver, again, &mut pred2), TpStatus::Ok);
        assert_eq!(pred, pred2);

        tp_spec_free(again);
        tp_spec_free(s);
        tp_solver_free(solver);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let bad = CString::new(RELU_HARD.replace("0.5}", "1.5}")).unwrap();
        let mut out = ptr::null_mut();
        assert_eq!(tp_spec_from_json(bad.as_ptr(), &mut out), TpStatus::InvalidSpec);
        assert!(out.is_null());
        assert!(last_error().contains("delta"));

        let junk = CString::new("{not json").unwrap();
        assert_eq!(tp_spec_from_json(junk.as_ptr(), &mut out), TpStatus::Parse);
        assert_eq!(tp_spec_from_json(ptr::null(), &mut out), TpStatus::NullPointer);

        let mut x = 0.0;
        assert_eq!(tp_predict(ptr::null(), ptr::null(), ptr::null_mut()), TpStatus::NullPointer);
        assert_eq!(tp_rho_c(TpActivation::Relu, 4.0, 0.5, &mut x), TpStatus::InvalidArgument);
        assert_eq!(tp_g_threshold(2.0, 4.0, ptr::null_mut()), TpStatus::NullPointer);
        assert!(last_error().contains("null"));

        let sign = CString::new(
            r#"{"alpha_s":4.0,"alpha_t":2.0,"rho":0.5,"lambda":0.1,
              "loss":{"variant":"logistic","form":"classification"},"phi":"sign","phi_hat":"sign",
              "upsilon":1,"transfer":{"mode":"none"}}"#,
        )
        .unwrap();
        let s = spec(sign.to_str().unwrap());
        assert_eq!(tp_gen_error(s, 0.0, 0.0, &mut x), TpStatus::InvalidArgument);
        tp_spec_free(s);
    }
}

#[test]
fn scalar_helpers() {
    unsafe {
        let mut x = 0.0;
        assert_eq!(tp_rho_c(TpActivation::Relu, 4.0, 2.0, &mut x), TpStatus::Ok);
        assert!((x - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(tp_g_threshold(2.0, 4.0, &mut x), TpStatus::Ok);
        assert!((x - 0.85198).abs() < 1e-4);

        let mut m = TpMoments::default();
        assert_eq!(tp_moments(TpActivation::Sign, &mut m), TpStatus::Ok);
        assert_eq!(m.v, 1.0);

        let mut env = TpEnvelope::default();
        assert_eq!(tp_moreau(TpLoss::Hinge, 1.0, 0.0, 0.5, &mut env), TpStatus::Ok);
        assert_eq!((env.prox, env.value), (0.5, 0.75));

        let v = CStr::from_ptr(tp_version()).to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}

#[test]
fn trials_match_library() {
    let s = spec(RELU_HARD);
    let mut out = TpTrialSummary::default();
    assert_eq!(unsafe { tp_run_trials(s, 40, 3, 9, &mut out) }, TpStatus::Ok);
    let spec: transfer_phase::model::TaskSpec = serde_json::from_str(RELU_HARD).unwrap();
    let lib = transfer_phase::empirical::run_trials(&spec, 40, 3, 9).unwrap();
    assert_eq!(out.n_trials, 3);
    assert_eq!(out.gen_error_mean, lib.gen_error.mean);
    assert_eq!(Some(out.q_hat_se), lib.q_hat.std_error);

    assert_eq!(unsafe { tp_run_trials(s, 40, 1, 9, &mut out) }, TpStatus::Ok);
    assert!(out.q_hat_se.is_nan());
    unsafe { tp_spec_free(s) };
}
