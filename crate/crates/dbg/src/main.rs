use jsm_restore::pipelines::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mu: f64 = args[1].parse().unwrap();
    let seed: u64 = args[2].parse().unwrap();
    let mut spec = ExperimentSpec::new(Task::Inpaint, "assets/moon_256.pgm", mu, 150);
    spec.seed = seed;
    spec.ratio = Some(0.2);
    let out = run_experiment(&spec).unwrap();
    let recs = out.telemetry.records();
    let mut best = f64::NEG_INFINITY;
    let mut worst: f64 = 0.0;
    for r in recs.iter() {
        let p = r.psnr_db.unwrap();
        if r.iter >= 10 {
            if p < best { worst = worst.max(best - p); }
            best = best.max(p);
        }
    }
    println!("mu={} seed={}: final {:.2} dB, worst dip {:.3}", mu, seed, out.psnr_restored, worst);
}
