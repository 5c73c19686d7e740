fn main() {
    let cfg = diffcast::data::SyntheticConfig {
        n_nodes: 6, t_days: 120, seed: 0, n_modes: 1, edge_density: 0.4, noise_scale: 0.0,
    };
    let (panel, _, truth) = diffcast::data::generate_synthetic_panel(&cfg).unwrap();
    let row: Vec<f64> = panel.targets.row(5).to_vec();
    println!("jitter: {:?}", truth.phase_jitter);
    println!("amps: {:?}", truth.amplitudes);
    println!("centers: {:?} widths {:?}", truth.bump_centers, truth.bump_widths);
    for (t, v) in row.iter().enumerate() {
        if t % 2 == 0 { println!("{t:3} {v:.6}"); }
    }
}
