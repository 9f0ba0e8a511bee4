//! Prints the back-to-front window schedule for a few settings.

use listrank::window::{plan_windows, WindowParams};

fn main() -> listrank::Result<()> {
    for (n, w, s) in [(100, 20, 10), (100, 10, 5), (30, 20, 10), (7, 20, 10)] {
        let params = WindowParams::new(n, w, s)?;
        let plan = plan_windows(&params, n)?;
        let spans: Vec<String> = plan.ranges.iter().map(|r| format!("{}-{}", r.start + 1, r.end)).collect();
        println!("N={n:<3} w={w:<2} s={s:<2} -> {:>2} windows: {}", plan.len(), spans.join(" "));
    }
    Ok(())
}
