//! Largest-remainder integer apportionment.
//!
//! Used wherever a whole budget has to be distributed over weighted bins
//! without losing or inventing a single unit: corpus splitting, per-pattern
//! guess budgets, and subtask division during tree generation.

/// Distribute `total` units over bins proportionally to `weights`.
///
/// Each bin first receives the floor of its exact quota; the leftover units
/// go to the bins with the largest fractional remainders. Ties are broken by
/// larger weight, then by lower index, so the result is fully deterministic.
/// The returned counts always sum to `total` (weights must not all be zero
/// unless `total` is zero).
pub fn largest_remainder(total: u64, weights: &[f64]) -> Vec<u64> {
    let weight_sum: f64 = weights.iter().sum();
    if total == 0 || weight_sum <= 0.0 {
        return vec![0; weights.len()];
    }

    let mut counts = vec![0u64; weights.len()];
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(weights.len());
    let mut assigned = 0u64;
    for (i, &w) in weights.iter().enumerate() {
        let quota = total as f64 * (w / weight_sum);
        let base = quota.floor() as u64;
        counts[i] = base;
        assigned += base;
        remainders.push((i, quota - base as f64));
    }

    let mut leftover = total - assigned;
    remainders.sort_by(|&(i, ra), &(j, rb)| {
        rb.partial_cmp(&ra)
            .unwrap()
            .then_with(|| weights[j].partial_cmp(&weights[i]).unwrap())
            .then_with(|| i.cmp(&j))
    });
    for &(i, _) in &remainders {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    counts
}

/// Largest-remainder apportionment with a per-bin upper bound.
///
/// Bins that hit their cap drop out and their excess is re-apportioned over
/// the remaining bins, so the counts still sum to `total` whenever
/// `sum(caps) >= total`. If the caps cannot absorb the whole budget the
/// shortfall is silently left unassigned and the counts sum to `sum(caps)`.
pub fn largest_remainder_capped(total: u64, weights: &[f64], caps: &[u64]) -> Vec<u64> {
    assert_eq!(weights.len(), caps.len());
    let mut counts = vec![0u64; weights.len()];
    let mut active: Vec<usize> = (0..weights.len()).collect();
    let mut remaining = total;

    while remaining > 0 && !active.is_empty() {
        active.retain(|&i| counts[i] < caps[i]);
        if active.is_empty() {
            break;
        }
        let sub_weights: Vec<f64> = active.iter().map(|&i| weights[i]).collect();
        if sub_weights.iter().sum::<f64>() <= 0.0 {
            break;
        }
        let share = largest_remainder(remaining, &sub_weights);
        let mut next_active = Vec::with_capacity(active.len());
        let mut progressed = false;
        for (&i, &s) in active.iter().zip(share.iter()) {
            let room = caps[i] - counts[i];
            let take = s.min(room);
            counts[i] += take;
            remaining -= take;
            if take > 0 {
                progressed = true;
            }
            if counts[i] < caps[i] {
                next_active.push(i);
            }
        }
        if !progressed {
            break;
        }
        active = next_active;
    }
    counts
}
