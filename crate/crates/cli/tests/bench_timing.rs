//! Wall-clock checks live in their own binary so no other test competes for
//! the CPU while they run.

use std::process::Command;

#[test]
fn bench_sweep_grows_with_n() {
    let o = Command::new(env!("CARGO_BIN_EXE_flurka"))
        .args([
            "bench",
            "--variant",
            "flurka",
            "--n",
            "1024:4096:1024",
            "--dm",
            "256",
            "--dk",
            "64",
            "--dh",
            "64",
            "--heads",
            "4",
            "--reps",
            "5",
            "--warmup",
            "1",
        ])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let med = header.iter().position(|&h| h == "median_ms").unwrap();
    let times: Vec<f64> = lines
        .map(|l| l.split(',').nth(med).unwrap().parse().unwrap())
        .collect();
    assert_eq!(times.len(), 4);
    assert!(times.windows(2).all(|w| w[1] >= w[0]), "{times:?}");
}
