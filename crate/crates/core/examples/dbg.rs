use crossview::config::ExperimentConfig;
use crossview::data::{load_dataset, split_supervision};
use crossview::pipeline::{paired_examples, run_experiment, run_epoch, EpochSettings, Sgd, Optimizer};

fn main() {
    let mut c = ExperimentConfig::default();
    for (k, v) in [("setting","i"),("gt_ratio","0.1"),("input_size","48"),("stage_channels","16,32,48"),("cdis_epochs","40"),("seed","1")] {
        c.apply_kv(k, v).unwrap();
    }
    let (records, _) = load_dataset(std::path::Path::new("/tmp/cal/s0.9c0.5"), 48).unwrap();
    let out = run_experiment(&c, &records, None).unwrap();
    let mut model = out.model;

    // one CDTS epoch by hand, inspecting grads
    let split = split_supervision(&records, 0.1, 1).unwrap();
    let pairs = paired_examples(&split.paired);
    let mut settings = EpochSettings::from(&c);
    settings.tau = 0.3;
    settings.eps_drone = 0.07;
    settings.eps_satellite = 0.02;
    settings.min_samples = 3;

    struct Spy { inner: Sgd, }
    impl Optimizer for Spy {
        fn step(&mut self, store: &mut crossview::tensor::ParamStore) {
            let mut top: Vec<(String, f64)> = store.iter().map(|p| {
                let g2: f64 = p.grad.iter().map(|v| v * v).sum::<f64>().sqrt();
                let w2: f64 = p.value.iter().map(|v| v * v).sum::<f64>().sqrt();
                (format!("{} |g|={:.3e} |w|={:.3e}", p.name, g2, w2), g2)
            }).collect();
            top.sort_by(|a, b| b.1.total_cmp(&a.1));
            for (s, _) in top.iter().take(8) { eprintln!("  {s}"); }
            eprintln!("  ---");
            self.inner.step(store);
        }
        fn set_filter(&mut self, f: Option<fn(&str) -> bool>) {
            self.inner.set_filter(f);
        }
    }
    let mut spy = Spy { inner: Sgd::new(1.0, 0.0, &model.store) };
    spy.inner.set_filter(Some(|n: &str| !n.starts_with("backbone.")));
    let stats = run_epoch(&mut model, &mut spy, &pairs, &split.unpaired, &settings, None, 0, 1).unwrap();
    eprintln!("epoch: {stats}");
}
