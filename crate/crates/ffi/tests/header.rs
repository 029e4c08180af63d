use std::path::Path;
use std::process::Command;

const HEADER: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/include/qhead.h");

#[test]
fn header_declares_api() {
    let h = std::fs::read_to_string(HEADER).unwrap();
    for sym in [
        "typedef struct QhState QhState;",
        "typedef struct QhHead QhHead;",
        "QH_STATUS_OK = 0",
        "QH_STATUS_PANIC",
        "qh_last_error(void)",
        "qh_state_new(",
        "qh_head_forward(",
        "qh_head_loss_and_gradient(",
        "qh_energy_crossover(",
    ] {
        assert!(h.contains(sym), "missing {sym}");
    }
}

#[test]
fn header_compiles_as_c() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("no C compiler, skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("t.c");
    std::fs::write(
        &src,
        "#include \"qhead.h\"\nint main(void) { uint32_t q = 0; return qh_energy_crossover(NULL, &q) == QH_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let inc = Path::new(HEADER).parent().unwrap();
    let out = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(inc)
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
