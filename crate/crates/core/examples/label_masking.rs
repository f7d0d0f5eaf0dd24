//! Which label slots survive masking at a few keep ratios, and the empirical
//! keep rate over many draws.

use teachlab::curriculum::{kept_count, sample_mask, MaskGranularity, MaskPattern};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seq_len = 10;
    let ids: Vec<String> = (0..4).map(|i| format!("s{i:06}")).collect();
    for r in [0.0, 0.3, 0.5, 1.0] {
        let mask = sample_mask(r, &ids, seq_len, 42, 3, MaskPattern::Random, MaskGranularity::PerSample)?;
        println!("r = {r}  keeps {} of {seq_len} slots", kept_count(r, seq_len));
        for i in 0..mask.batch {
            let row: String = mask.row(i).iter().map(|&k| if k { 'L' } else { '_' }).collect();
            println!("  {} {row}", ids[i]);
        }
    }

    let draws = 1000;
    let mut per_slot = vec![0usize; seq_len];
    for step in 0..draws {
        let mask = sample_mask(0.3, &ids[..1], seq_len, 42, step, MaskPattern::Random, MaskGranularity::PerSample)?;
        for (j, &k) in mask.row(0).iter().enumerate() {
            per_slot[j] += usize::from(k);
        }
    }
    let rates: Vec<String> = per_slot.iter().map(|&c| format!("{:.2}", c as f64 / draws as f64)).collect();
    println!("\nper-slot keep rate at r = 0.3 over {draws} draws: {}", rates.join(" "));
    Ok(())
}
