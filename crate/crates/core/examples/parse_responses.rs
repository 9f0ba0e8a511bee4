//! Format checks and ranking repair on a handful of model outputs.

use listrank::ranking::{parse_ranking, parse_response_for_window};

fn main() {
    let ids: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
    let outputs = [
        "<think>b answers it directly</think><answer>[2] > [1] > [4] > [3]</answer>",
        "<think>short</think><answer>[3] > [3] > [9] > [1]</answer>",
        "<think>unsure</think><answer>[2] > [4]</answer>",
        "I think [4] is best, then [1].",
        "",
    ];
    for raw in outputs {
        let parsed = parse_response_for_window(raw, ids.len());
        let body = parsed.answer.as_deref().unwrap_or(raw);
        let (ranking, repair) = parse_ranking(body, &ids);
        println!("{raw:?}");
        println!(
            "  status={} ranking={:?} dropped_out_of_range={} dropped_duplicates={} appended={}\n",
            parsed.format_status,
            ranking.ids(),
            repair.out_of_range,
            repair.duplicates,
            repair.appended
        );
    }
}
