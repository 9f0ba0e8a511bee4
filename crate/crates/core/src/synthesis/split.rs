/// Splits a document into passages on blank lines.
///
/// Segments are trimmed and empty ones dropped. A segment longer than
/// `max_chars` is cut again, preferring a sentence end (`. `, `? `, `! `)
/// and falling back to a hard cut at the limit.
pub fn split_document(text: &str, max_chars: Option<usize>) -> Vec<String> {
    let normalized = text.replace("\r\n", "\n");
    let mut out = Vec::new();
    for block in split_blank_lines(&normalized) {
        let block = block.trim();
        if block.is_empty() {
            continue;
        }
        match max_chars {
            Some(max) if max > 0 => split_long(block, max, &mut out),
            _ => out.push(block.to_string()),
        }
    }
    out
}

/// Splits on lines that are empty or whitespace-only.
fn split_blank_lines(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current = String::new();
    for line in text.split('\n') {
        if line.trim().is_empty() {
            if !current.is_empty() {
                blocks.push(std::mem::take(&mut current));
            }
        } else {
            if !current.is_empty() {
                current.push('\n');
            }
            current.push_str(line);
        }
    }
    if !current.is_empty() {
        blocks.push(current);
    }
    blocks
}

fn split_long(block: &str, max: usize, out: &mut Vec<String>) {
    let mut rest = block;
    while rest.chars().count() > max {
        let limit = rest
            .char_indices()
            .nth(max)
            .map_or(rest.len(), |(i, _)| i);
        let window = &rest[..limit];
        let cut = ['.', '?', '!', '\n']
            .iter()
            .filter_map(|c| window.rfind(*c))
            .max()
            .map(|i| i + 1)
            .filter(|&i| i > 0 && i < limit)
            .unwrap_or(limit);
        let (head, tail) = rest.split_at(cut);
        let head = head.trim();
        if !head.is_empty() {
            out.push(head.to_string());
        }
        rest = tail.trim_start();
    }
    let rest = rest.trim();
    if !rest.is_empty() {
        out.push(rest.to_string());
    }
}
