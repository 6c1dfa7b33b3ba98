use netfield_ffi::*;
use std::ffi::{CStr, CString};
use std::ptr;

fn last_error() -> String {
    let p = nf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn parse(text: &str) -> *mut NfConfig {
    let text = CString::new(text).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { nf_config_parse(text.as_ptr(), &mut cfg) }, NfStatus::Ok);
    cfg
}

#[test]
fn parse_errors_report_status_and_message() {
    let text = CString::new("model.kernal = zero").unwrap();
    let mut cfg = ptr::null_mut();
    let status = unsafe { nf_config_parse(text.as_ptr(), &mut cfg) };
    assert_eq!(status, NfStatus::Parse);
    assert!(cfg.is_null());
    assert!(last_error().contains("model.kernal"));
    assert_eq!(unsafe { nf_config_parse(ptr::null(), &mut cfg) }, NfStatus::NullPointer);
}

#[test]
fn config_round_trips_through_emit() {
    let cfg = parse("kind = couple\nn = [8, 16]\nmodel.kernel = kuramoto(2)\n");
    let mut text = ptr::null_mut();
    assert_eq!(unsafe { nf_config_emit(cfg, &mut text) }, NfStatus::Ok);
    let emitted = unsafe { CStr::from_ptr(text) }.to_str().unwrap().to_owned();
    assert!(emitted.contains("kernel = kuramoto(kappa = 2.0)"));
    let again = parse(&emitted);
    let mut text2 = ptr::null_mut();
    assert_eq!(unsafe { nf_config_emit(again, &mut text2) }, NfStatus::Ok);
    assert_eq!(unsafe { CStr::from_ptr(text2) }.to_str().unwrap(), emitted);
    unsafe {
        nf_string_free(text);
        nf_string_free(text2);
        nf_config_free(cfg);
        nf_config_free(again);
    }
}

#[test]
fn zero_kernel_simulation_through_handles() {
    let cfg = parse("n = [4]\nmodel.kernel = zero\ngrid.steps = 10\n");
    let mut ens = ptr::null_mut();
    assert_eq!(unsafe { nf_simulate(cfg, 4, 3, &mut ens) }, NfStatus::Ok);
    let (mut n, mut steps, mut dim) = (0, 0, 0);
    assert_eq!(unsafe { nf_ensemble_shape(ens, &mut n, &mut steps, &mut dim) }, NfStatus::Ok);
    assert_eq!((n, steps, dim), (4, 10, 1));
    let mut buf = vec![0.0; 4];
    assert_eq!(unsafe { nf_ensemble_states(ens, 10, buf.as_mut_ptr(), 4) }, NfStatus::Ok);
    assert!(buf.iter().all(|x| x.is_finite()));
    assert_eq!(unsafe { nf_ensemble_states(ens, 11, buf.as_mut_ptr(), 4) }, NfStatus::OutOfRange);
    assert_eq!(unsafe { nf_ensemble_states(ens, 0, buf.as_mut_ptr(), 3) }, NfStatus::SizeMismatch);
    unsafe {
        nf_ensemble_free(ens);
        nf_config_free(cfg);
    }
}

#[test]
fn run_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse("kind = sanov\nsanov.ns = [10, 20]\nsanov.moment_ns = [16, 32]\ngraph.kind = erdos_renyi(0.5)\n");
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    assert_eq!(unsafe { nf_config_set_output(cfg, out.as_ptr()) }, NfStatus::Ok);
    let mut manifest = ptr::null_mut();
    assert_eq!(unsafe { nf_run(cfg, 2, &mut manifest) }, NfStatus::Ok);
    assert_eq!(unsafe { nf_manifest_pass(manifest) }, 1);
    let count = unsafe { nf_manifest_check_count(manifest) };
    assert_eq!(count, 2);
    let mut name = ptr::null_mut();
    let mut pass = 0;
    assert_eq!(unsafe { nf_manifest_check(manifest, 0, &mut name, &mut pass) }, NfStatus::Ok);
    assert_eq!(unsafe { CStr::from_ptr(name) }.to_str().unwrap(), "sanov_gap");
    assert_eq!(pass, 1);
    assert_eq!(unsafe { nf_manifest_check(manifest, count, &mut name, &mut pass) }, NfStatus::OutOfRange);
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { nf_manifest_json(manifest, &mut json) }, NfStatus::Ok);
    assert!(unsafe { CStr::from_ptr(json) }.to_str().unwrap().contains("\"pass\":true"));
    assert!(dir.path().join("manifest.json").exists());
    unsafe {
        nf_string_free(name);
        nf_string_free(json);
        nf_manifest_free(manifest);
        nf_config_free(cfg);
    }
}

#[test]
fn w1_and_null_handles() {
    let a = [0.0, 1.0];
    let b = [0.5, 1.5];
    let mut d = 0.0;
    assert_eq!(unsafe { nf_w1(a.as_ptr(), 2, b.as_ptr(), 2, &mut d) }, NfStatus::Ok);
    assert!((d - 0.5).abs() < 1e-15);
    assert_eq!(unsafe { nf_w1(a.as_ptr(), 0, b.as_ptr(), 2, &mut d) }, NfStatus::InvalidArgument);
    assert_eq!(unsafe { nf_manifest_pass(ptr::null()) }, 0);
    unsafe {
        nf_config_free(ptr::null_mut());
        nf_string_free(ptr::null_mut());
    }
    let v = unsafe { CStr::from_ptr(nf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/netfield.h")).unwrap();
    for name in ["nf_config_parse", "nf_run", "nf_simulate", "nf_last_error", "NF_STATUS_OK", "typedef struct NfConfig"] {
        assert!(header.contains(name), "header lacks {name}");
    }
    // Compile the header as C when a compiler is around.
    if let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-x", "c", "-"])
        .stdin(std::process::Stdio::piped())
        .spawn()
        .and_then(|mut child| {
            use std::io::Write;
            let mut stdin = child.stdin.take().unwrap();
            writeln!(stdin, "#include \"{}/include/netfield.h\"\nint main(void) {{ return 0; }}", env!("CARGO_MANIFEST_DIR"))?;
            drop(stdin);
            child.wait()
        })
    {
        assert!(status.success());
    }
}
