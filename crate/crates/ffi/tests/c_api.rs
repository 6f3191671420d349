use std::ffi::{CStr, CString};
use std::f64::consts::PI;
use std::ptr;

use hopflab_ffi::*;

struct Fixture {
    grid: *mut HlGrid,
    bank: *mut HlBank,
}

impl Fixture {
    fn new(n: usize, k: usize) -> Self {
        let mut grid = ptr::null_mut();
        let mut bank = ptr::null_mut();
        unsafe {
            assert_eq!(hl_grid_new(n, n, &mut grid), HlStatus::Ok);
            assert_eq!(hl_bank_new(k, &mut bank), HlStatus::Ok);
        }
        Self { grid, bank }
    }

    fn map(&self, spec: &str) -> *mut HlMap {
        let s = CString::new(spec).unwrap();
        let mut m = ptr::null_mut();
        assert_eq!(unsafe { hl_map_from_spec(self.grid, s.as_ptr(), &mut m) }, HlStatus::Ok);
        m
    }
}

impl Drop for Fixture {
    fn drop(&mut self) {
        unsafe {
            hl_grid_free(self.grid);
            hl_bank_free(self.bank);
        }
    }
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(hl_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn hopf_constants_through_the_c_api() {
    let fx = Fixture::new(12, 2);
    let h = fx.map("hopf");
    let (mut e, mut q) = (0.0, 0.0);
    unsafe {
        assert_eq!(hl_fs_energy(h, fx.grid, 1.0, &mut e), HlStatus::Ok);
        assert_eq!(hl_hopf_invariant(h, fx.bank, fx.grid, 2, &mut q), HlStatus::Ok);
        hl_map_free(h);
    }
    assert!((e - 48.0 * PI * PI).abs() < 1e-8, "{e}");
    assert!((q - 1.0).abs() < 1e-9, "{q}");
}

#[test]
fn quadrature_and_node_export() {
    let fx = Fixture::new(8, 8);
    let n = unsafe { hl_grid_len(fx.grid) };
    assert_eq!(n, 8 * 8 * 8);
    let mut x = vec![0.0; 4 * n];
    let mut vol = 0.0;
    unsafe {
        assert_eq!(hl_grid_ambient(fx.grid, x.as_mut_ptr(), x.len()), HlStatus::Ok);
        assert_eq!(hl_grid_integrate(fx.grid, vec![1.0; n].as_ptr(), n, &mut vol), HlStatus::Ok);
        assert_eq!(hl_grid_ambient(fx.grid, x.as_mut_ptr(), 3), HlStatus::LengthMismatch);
    }
    assert!((vol - 2.0 * PI * PI).abs() < 1e-12);
    assert!(x.chunks(4).all(|p| (p.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-14));
}

#[test]
fn values_round_trip() {
    let fx = Fixture::new(6, 6);
    let h = fx.map("psi2-hopf");
    let n = unsafe { hl_grid_len(fx.grid) };
    let mut v = vec![0.0; 3 * n];
    let mut back = ptr::null_mut();
    let mut w = vec![0.0; 3 * n];
    unsafe {
        assert_eq!(hl_map_values(h, v.as_mut_ptr(), v.len()), HlStatus::Ok);
        assert_eq!(hl_map_from_values(v.as_ptr(), n, &mut back), HlStatus::Ok);
        assert_eq!(hl_map_values(back, w.as_mut_ptr(), w.len()), HlStatus::Ok);
        hl_map_free(h);
        hl_map_free(back);
    }
    assert_eq!(v, w);
}

#[test]
fn failures_set_status_and_message() {
    let mut grid = ptr::null_mut();
    unsafe {
        assert_eq!(hl_grid_new(8, 7, &mut grid), HlStatus::InvalidGrid);
        assert!(grid.is_null());
        assert!(last_error().contains("even"));
        assert_eq!(hl_grid_new(8, 8, ptr::null_mut()), HlStatus::NullPointer);
    }
    let fx = Fixture::new(8, 1);
    let bad = CString::new("no-such-map").unwrap();
    let mut m = ptr::null_mut();
    let mut e = 0.0;
    unsafe {
        assert_eq!(hl_map_from_spec(fx.grid, bad.as_ptr(), &mut m), HlStatus::Parse);
        assert!(last_error().contains("no-such-map"));
        assert_eq!(hl_fs_energy(ptr::null(), fx.grid, 1.0, &mut e), HlStatus::NullPointer);
        let h = fx.map("hopf");
        assert_eq!(hl_fs_energy(h, fx.grid, -1.0, &mut e), HlStatus::InvalidArgument);
        let mut q = 0.0;
        assert_eq!(hl_hopf_invariant(h, fx.bank, fx.grid, 3, &mut q), HlStatus::InvalidArgument);
        hl_map_free(h);
        let not_unit = [2.0, 0.0, 0.0];
        assert_ne!(hl_map_from_values(not_unit.as_ptr(), 1, &mut m), HlStatus::Ok);
        hl_map_free(ptr::null_mut());
    }
}

#[test]
fn short_flow_returns_a_new_map() {
    let fx = Fixture::new(8, 2);
    let h = fx.map("hopf");
    let mut out = ptr::null_mut();
    let mut e = 0.0;
    let mut status = HlFlowStatus::MaxIter;
    unsafe {
        assert_eq!(hl_flow(h, fx.bank, fx.grid, 1.0, 3, &mut out, &mut e, &mut status), HlStatus::Ok);
        assert!(!out.is_null());
        hl_map_free(out);
        hl_map_free(h);
    }
    assert!(e.is_finite() && e > 0.0);
    assert_ne!(status, HlFlowStatus::QEscaped);
}

#[test]
fn version_and_header() {
    let v = unsafe { CStr::from_ptr(hl_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/hopflab.h")).unwrap();
    for name in ["hl_grid_new", "hl_fs_energy", "hl_hopf_invariant", "hl_flow", "hl_last_error", "HL_STATUS_OK"] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = std::process::Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; header syntax not checked");
        return;
    };
    assert!(cc.status.success());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"hopflab.h\"\nint main(void) { HlGrid *g = 0; HlStatus s = hl_grid_new(8, 8, &g); hl_grid_free(g); return (int)s; }\n",
    )
    .unwrap();
    let out = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
