use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "qefix.h"

int main(void) {
    QefixPolicy *policy = NULL;
    if (qefix_policy_new(0.9, 0.5, NULL, &policy) != QEFIX_STATUS_OK) return 10;

    const char *hyp = "The cat sat on the mat.";
    QefixSpan spans[1] = {{4, 7, QEFIX_SEVERITY_CRITICAL}};
    QefixMasked *masked = NULL;
    if (qefix_mask(policy, hyp, 0.3, spans, 1, &masked) != QEFIX_STATUS_OK) return 11;

    char *text = NULL;
    qefix_masked_text(masked, &text);
    if (strcmp(text, "The __BLANK__ sat on the mat.") != 0) return 12;
    qefix_string_free(text);

    const char *fills[1] = {"dog"};
    char *filled = NULL;
    if (qefix_masked_fill(masked, fills, 1, &filled) != QEFIX_STATUS_OK) return 13;
    printf("%s\n", filled);
    qefix_string_free(filled);

    double chrf = 0.0;
    if (qefix_chrf_pp("hello there", "hello world", &chrf) != QEFIX_STATUS_OK) return 14;
    printf("%.6f\n", chrf);

    if (qefix_g2e(1.0, 0.0, &chrf) != QEFIX_STATUS_METRIC_ERROR) return 15;
    if (qefix_last_error_message() == NULL) return 16;

    qefix_masked_free(masked);
    qefix_policy_free(policy);
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // The test binary lives in <target>/<profile>/deps.
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

fn find_cc() -> Option<&'static str> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|cc| Command::new(cc).arg("--version").output().is_ok())
}

#[test]
fn header_declares_every_exported_function() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/qefix.h")).unwrap();
    let source = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exported: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exported.len() >= 15);
    for name in exported {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}

#[test]
fn c_program_links_against_static_library() {
    let Some(cc) = find_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let lib = target_dir().join("libqefix_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let bin = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let status = Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(Path::new(env!("CARGO_MANIFEST_DIR")).join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit code {:?}", out.status.code());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let mut lines = stdout.lines();
    assert_eq!(lines.next(), Some("The dog sat on the mat."));
    let chrf: f64 = lines.next().unwrap().parse().unwrap();
    let expected = qefix::metrics::chrf_pp("hello there", "hello world").unwrap();
    assert!((chrf - expected).abs() < 1e-6);
}
