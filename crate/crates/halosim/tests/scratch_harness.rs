use halosim::harness::{run_filter_experiment, Config};

#[test]
fn probe_filter_10revs() {
    let mut cfg = Config::filter_experiment();
    cfg.campaign.seed = 7;
    cfg.filter.process_noise.sigma_u_canonical = 1e-6;
    let t = std::time::Instant::now();
    let report = run_filter_experiment(&cfg, None).expect("campaign runs");
    for r in &report.runs {
        let f = r.filter.as_ref().unwrap();
        println!(
            "run {}: success={} dur={:.1}d contain={:.3} rms={:.1}km meas {}/{} peri=[{:.0},{:.0}] fail={:?}",
            r.run, r.success, r.duration_days, f.containment_3sigma, f.rms_pos_err_km,
            f.measurements_accepted, f.measurements_skipped,
            r.perilune_radius_min_km, r.perilune_radius_max_km, r.failure
        );
    }
    let worst = report.runs.iter().filter_map(|r| r.filter.as_ref().map(|f| f.containment_3sigma)).fold(f64::INFINITY, f64::min);
    let argmin = report.sigma_vz_profile.as_ref().unwrap().iter()
        .filter(|(ta, _)| (120.0..=240.0).contains(ta))
        .min_by(|a, b| a.1.total_cmp(&b.1)).map(|(ta, _)| *ta);
    println!("aggregate contain {:.4} worst {:.3} argmin {:?} elapsed {:.1?}",
        report.aggregate.mean_containment_3sigma.unwrap(), worst, argmin, t.elapsed());
}
