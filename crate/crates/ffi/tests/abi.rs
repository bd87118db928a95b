use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use submanifold_mcmc_ffi::*;

const TORUS: &str = r#"{
    "problem": "torus",
    "problem_params": {"R": 1.0, "r": 0.5},
    "sampler": {"algorithm": "hmc", "tau": 0.8, "n_iterations": 100, "seed": 9}
}"#;

fn config(json: &str) -> Result<*mut SmcConfig, (SmcStatus, String)> {
    let text = CString::new(json).unwrap();
    let mut cfg = ptr::null_mut();
    let status = unsafe { smc_config_from_json(text.as_ptr(), &mut cfg) };
    if status == SmcStatus::Ok {
        Ok(cfg)
    } else {
        let msg = unsafe { CStr::from_ptr(smc_last_error_message()) };
        Err((status, msg.to_string_lossy().into_owned()))
    }
}

#[test]
fn chain_lifecycle() {
    let cfg = config(TORUS).unwrap();
    assert_eq!(unsafe { smc_config_dim(cfg) }, 3);

    let mut echo = ptr::null_mut();
    assert_eq!(unsafe { smc_config_to_json(cfg, &mut echo) }, SmcStatus::Ok);
    let text = unsafe { CStr::from_ptr(echo) }.to_str().unwrap().to_owned();
    assert!(text.contains("\"reversibility_tol\""));
    unsafe { smc_string_free(echo) };

    let mut chain = ptr::null_mut();
    assert_eq!(unsafe { smc_chain_new(cfg, 0, &mut chain) }, SmcStatus::Ok);
    assert_eq!(unsafe { smc_chain_step(chain, 2000) }, SmcStatus::Ok);
    assert_eq!(unsafe { smc_chain_iterations(chain) }, 2000);

    let mut x = [0.0; 3];
    assert_eq!(unsafe { smc_chain_position(chain, x.as_mut_ptr(), 3) }, SmcStatus::Ok);
    let rho = (x[0] * x[0] + x[1] * x[1]).sqrt();
    assert!(((rho - 1.0).powi(2) + x[2] * x[2] - 0.25).abs() < 1e-7);

    let mut s = SmcSummary::default();
    assert_eq!(unsafe { smc_chain_summary(chain, &mut s) }, SmcStatus::Ok);
    assert_eq!(s.n_total, 2000);
    assert!(s.tar > 0.3 && s.tar < 0.6, "{s:?}");

    // wrong buffer length is reported, not written
    assert_eq!(
        unsafe { smc_chain_position(chain, x.as_mut_ptr(), 2) },
        SmcStatus::InvalidArgument
    );
    unsafe {
        smc_chain_free(chain);
        smc_config_free(cfg);
    }
}

#[test]
fn error_reporting() {
    let (status, msg) = config(&TORUS.replace("\"tau\": 0.8", "\"tau\": 0.8, \"alpha\": 1.5")).unwrap_err();
    assert_eq!(status, SmcStatus::InvalidConfig);
    assert!(msg.contains("sampler.alpha"), "{msg}");

    let (status, _) = config("{ not json").unwrap_err();
    assert_eq!(status, SmcStatus::InvalidConfig);

    let mut out = ptr::null_mut();
    assert_eq!(unsafe { smc_config_from_json(ptr::null(), &mut out) }, SmcStatus::NullPointer);
    assert_eq!(unsafe { smc_chain_step(ptr::null_mut(), 1) }, SmcStatus::NullPointer);
    let mut s = SmcSummary::default();
    assert_eq!(unsafe { smc_chain_summary(ptr::null(), &mut s) }, SmcStatus::NullPointer);
    assert_eq!(unsafe { smc_config_dim(ptr::null()) }, 0);
    unsafe {
        smc_config_free(ptr::null_mut());
        smc_chain_free(ptr::null_mut());
        smc_string_free(ptr::null_mut());
    }
}

#[test]
fn summary_of_fresh_chain_is_an_error() {
    let cfg = config(TORUS).unwrap();
    let mut chain = ptr::null_mut();
    assert_eq!(unsafe { smc_chain_new(cfg, 0, &mut chain) }, SmcStatus::Ok);
    let mut s = SmcSummary::default();
    assert_eq!(unsafe { smc_chain_summary(chain, &mut s) }, SmcStatus::Numeric);
    unsafe {
        smc_chain_free(chain);
        smc_config_free(cfg);
    }
}

#[test]
fn execute_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let json = TORUS.replace(
        "\"problem\": \"torus\",",
        &format!("\"problem\": \"torus\", \"output_dir\": {:?}, \"n_chains\": 2,", dir.path()),
    );
    let cfg = config(&json).unwrap();
    assert_eq!(unsafe { smc_config_execute(cfg) }, SmcStatus::Ok);
    for f in ["samples_0.csv", "samples_1.csv", "stats.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    unsafe { smc_config_free(cfg) };
}

/// Compiles and runs a C program against the generated header and the
/// static library.
#[test]
fn c_program_links_against_header() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header_dir = manifest.join("include");
    assert!(header_dir.join("submanifold_mcmc.h").is_file());
    // integration tests live in target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libsubmanifold_mcmc_ffi.a");
    assert!(lib.is_file(), "static library missing at {}", lib.display());

    let work = tempfile::tempdir().unwrap();
    let src = work.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <math.h>
#include <stdio.h>
#include "submanifold_mcmc.h"
int main(void) {
    const char *cfg_json = "{\"problem\":\"circle\",\"sampler\":{\"algorithm\":\"mala\",\"tau\":0.5,"
                           "\"solver\":{\"kind\":\"poly_all_roots\"},\"n_iterations\":1}}";
    SmcConfig *cfg = NULL;
    if (smc_config_from_json(cfg_json, &cfg) != SMC_STATUS_OK) return 10;
    SmcChain *chain = NULL;
    if (smc_chain_new(cfg, 0, &chain) != SMC_STATUS_OK) return 11;
    if (smc_chain_step(chain, 500) != SMC_STATUS_OK) return 12;
    double x[2];
    if (smc_chain_position(chain, x, 2) != SMC_STATUS_OK) return 13;
    if (fabs(x[0] * x[0] + x[1] * x[1] - 1.0) > 1e-8) return 14;
    SmcSummary s;
    if (smc_chain_summary(chain, &s) != SMC_STATUS_OK || s.n_total != 500) return 15;
    smc_config_free(cfg);
    cfg = NULL;
    if (smc_config_from_json("{}", &cfg) != SMC_STATUS_INVALID_CONFIG) return 16;
    if (smc_last_error_message() == NULL) return 17;
    smc_chain_free(chain);
    printf("ok %.3f\n", s.tar);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = work.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&header_dir)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("C compiler available");
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
