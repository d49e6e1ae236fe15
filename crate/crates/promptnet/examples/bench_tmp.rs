use promptnet::synthdata::{channel_threshold_auc, DatasetSpec};

fn main() {
    for ne in [0.3, 0.35, 0.4, 0.45, 0.5] {
        for noise in [0.5, 0.6, 0.7, 0.8] {
            let spec = DatasetSpec {
                ne_signal_strength: ne,
                noise_sigma: noise,
                ..DatasetSpec::default()
            };
            let o = channel_threshold_auc(&spec).unwrap();
            println!(
                "ne={ne:.2} noise={noise:.2}: ce_auc={:.4} ne_auc={:.4} gap={:.4}",
                o.ce_auc,
                o.ne_auc,
                o.ce_auc - o.ne_auc
            );
        }
    }
}
