use super::Keypoint;

fn nearest(d: &super::Descriptor, pool: &[Keypoint]) -> Option<(usize, u32)> {
    let mut best: Option<(usize, u32)> = None;
    for (j, k) in pool.iter().enumerate() {
        let h = d.hamming(&k.descriptor);
        if best.map_or(true, |(_, bh)| h < bh) {
            best = Some((j, h));
        }
    }
    best
}

/// Mutual-nearest-neighbor Hamming matching. Ties resolve to the lowest
/// index; pairs farther than `max_hamming` are dropped.
pub fn match_descriptors(a: &[Keypoint], b: &[Keypoint], max_hamming: u32) -> Vec<(usize, usize)> {
    let back: Vec<Option<(usize, u32)>> = b.iter().map(|k| nearest(&k.descriptor, a)).collect();
    let mut out = Vec::new();
    for (i, ka) in a.iter().enumerate() {
        if let Some((j, h)) = nearest(&ka.descriptor, b) {
            if h <= max_hamming && back[j].map(|(ii, _)| ii) == Some(i) {
                out.push((i, j));
            }
        }
    }
    out
}
