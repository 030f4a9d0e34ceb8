//! Second implementations used as test oracles. Written independently of
//! the library code paths they check.
#![allow(dead_code)]

/// BLEU by explicit enumeration: for every hypothesis n-gram position,
/// count occurrences by linear scans and clip against the reference.
pub fn bleu_by_counting(hyp: &[&str], reference: &[&str]) -> f64 {
    if hyp.is_empty() {
        return 0.0;
    }
    let occurrences = |seq: &[&str], gram: &[&str]| -> usize {
        if seq.len() < gram.len() {
            return 0;
        }
        (0..=seq.len() - gram.len()).filter(|&i| &seq[i..i + gram.len()] == gram).count()
    };
    let mut product = 1.0f64;
    for n in 1..=4usize {
        let total = if hyp.len() >= n { hyp.len() - n + 1 } else { 0 };
        let mut seen: Vec<&[&str]> = Vec::new();
        let mut matched = 0usize;
        for i in 0..total {
            let g = &hyp[i..i + n];
            if seen.contains(&g) {
                continue;
            }
            seen.push(g);
            matched += occurrences(hyp, g).min(occurrences(reference, g));
        }
        let p = if n == 1 {
            matched as f64 / total as f64
        } else {
            (matched as f64 + 1.0) / (total as f64 + 1.0)
        };
        product *= p;
    }
    if product == 0.0 {
        return 0.0;
    }
    let c = hyp.len() as f64;
    let r = reference.len() as f64;
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * product.powf(0.25)
}

/// Dense forward pass written out with plain loops. `layers` holds
/// (weights [in][out], bias [out], activation name).
pub type LoopLayer<'a> = (Vec<Vec<f64>>, Vec<f64>, &'a str);

pub fn mlp_by_loops(layers: &[LoopLayer<'_>], x: &[f64], slope: f64) -> Vec<f64> {
    let mut h = x.to_vec();
    for (w, b, act) in layers {
        let mut z = b.clone();
        for (i, hi) in h.iter().enumerate() {
            for (j, zj) in z.iter_mut().enumerate() {
                *zj += hi * w[i][j];
            }
        }
        h = match *act {
            "leaky" => z.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect(),
            "tanh" => z.iter().map(|v| v.tanh()).collect(),
            _ => z,
        };
    }
    h
}

/// Ranks every allowed candidate by dot product with a full sort.
pub fn brute_force_rank(query: &[f64], candidates: &[Vec<f64>], allowed: &[usize], k: usize) -> Vec<usize> {
    let mut scored: Vec<(usize, f64)> = allowed
        .iter()
        .map(|&i| (i, query.iter().zip(&candidates[i]).map(|(a, b)| a * b).sum()))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.into_iter().take(k).map(|(i, _)| i).collect()
}

/// Ten hypothesis/reference pairs covering repeats, short hypotheses and
/// partial overlaps.
pub fn bleu_fixtures() -> Vec<(&'static str, &'static str)> {
    vec![
        ("the cat sat on the mat", "the cat sat on the mat"),
        ("the the the the the the the", "the cat is on the mat"),
        ("the cat", "the cat is on the mat"),
        ("i am so sorry to hear that", "i am sorry to hear that"),
        ("that is great news congrats", "congrats that is great news"),
        ("what happened to your dog", "oh no what happened to the dog"),
        ("wow", "wow that sounds like fun"),
        ("i hope you feel better soon my friend", "hope you feel better"),
        ("a b c d e f g", "h i j k"),
        ("you should be proud of yourself you did well", "you did well and should be proud"),
    ]
}
