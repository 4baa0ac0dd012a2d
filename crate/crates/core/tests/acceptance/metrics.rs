use gcb_core::data_model::{FutureTarget, ItemId, RankedStepList};
use gcb_core::metrics::evaluate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{ensure, Outcome};

/// A 12-item list holding `truth` at 1-based `rank`, or not at all.
fn list_with(step: usize, truth: u32, rank: Option<usize>) -> RankedStepList {
    let mut fillers = (100..).filter(|&i| i != truth);
    let items: Vec<ItemId> = (1..=12)
        .map(|r| {
            if Some(r) == rank {
                ItemId(truth)
            } else {
                ItemId(fillers.next().unwrap())
            }
        })
        .collect();
    RankedStepList::from_ranked(step, items, 12)
}

fn gain(rank: f64) -> f64 {
    1.0 / (rank + 1.0).log2()
}

pub fn metric_oracle() -> Outcome {
    // Rank of each user's truth at steps 1..3; rank 11 is inside the list but beyond K = 10.
    let ranks: [[Option<usize>; 3]; 5] = [
        [Some(1), Some(2), None],
        [Some(3), None, None],
        [Some(7), Some(10), Some(11)],
        [None, Some(1), Some(4)],
        [Some(5), Some(6), None],
    ];
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    for (u, r) in ranks.iter().enumerate() {
        let items: Vec<u32> = (0..3).map(|j| (u * 3 + j + 1) as u32).collect();
        preds.push(
            (0..3)
                .map(|j| list_with(j + 1, items[j], r[j]))
                .collect::<Vec<_>>(),
        );
        truths.push(FutureTarget {
            items: items.into_iter().map(ItemId).collect(),
        });
    }
    let report = evaluate(&preds, &truths, &[5, 10]).map_err(|e| e.to_string())?;

    let g = gain;
    let hr5 = [3.0 / 5.0, 2.0 / 5.0, 1.0 / 5.0];
    let hr10 = [4.0 / 5.0, 4.0 / 5.0, 1.0 / 5.0];
    let ndcg5 = [
        (g(1.0) + g(3.0) + g(5.0)) / 5.0,
        (g(2.0) + g(1.0)) / 5.0,
        g(4.0) / 5.0,
    ];
    let ndcg10 = [
        (g(1.0) + g(3.0) + g(7.0) + g(5.0)) / 5.0,
        (g(2.0) + g(10.0) + g(1.0) + g(6.0)) / 5.0,
        g(4.0) / 5.0,
    ];
    let mut expected: Vec<(String, f64)> = Vec::new();
    for (k, hr, nd) in [(5, hr5, ndcg5), (10, hr10, ndcg10)] {
        expected.push((format!("MHR@{k}"), hr.iter().sum::<f64>() / 3.0));
        expected.push((format!("MNDCG@{k}"), nd.iter().sum::<f64>() / 3.0));
        expected.push((format!("SHR@{k}"), (hr[0] * hr[1] * hr[2]).cbrt()));
        expected.push((format!("SNDCG@{k}"), (nd[0] * nd[1] * nd[2]).cbrt()));
        for (j, ord) in ["1st", "2nd", "3rd"].iter().enumerate() {
            expected.push((format!("{ord}_HR@{k}"), hr[j]));
            expected.push((format!("{ord}_NDCG@{k}"), nd[j]));
        }
    }
    let rows = report.rows();
    ensure(rows.len() == expected.len(), || {
        format!("{} values emitted, expected {}", rows.len(), expected.len())
    })?;
    for (name, want) in &expected {
        let got = report.get(name).ok_or_else(|| format!("{name} missing"))?;
        ensure((got - want).abs() <= 1e-12, || {
            format!("{name}: {got} vs hand value {want}")
        })?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..1000 {
        let users = rng.random_range(1..=8);
        let k = rng.random_range(1..=4);
        let catalog: Vec<u32> = (1..=15).collect();
        let mut preds = Vec::new();
        let mut truths = Vec::new();
        for _ in 0..users {
            let items: Vec<ItemId> = (0..k).map(|_| ItemId(rng.random_range(1..=15))).collect();
            let lists = (1..=k)
                .map(|j| {
                    let mut c = catalog.clone();
                    c.shuffle(&mut rng);
                    let len = rng.random_range(0..=12);
                    RankedStepList::from_ranked(j, c.into_iter().take(len).map(ItemId), 12)
                })
                .collect::<Vec<_>>();
            preds.push(lists);
            truths.push(FutureTarget { items });
        }
        let r = evaluate(&preds, &truths, &[1, 5, 10]).map_err(|e| e.to_string())?;
        for c in &r.cutoffs {
            ensure(c.shr <= c.mhr && c.sndcg <= c.mndcg, || {
                format!("case {case} K={}: S* above M*", c.cutoff)
            })?;
            ensure(c.mndcg <= c.mhr, || {
                format!("case {case} K={}: MNDCG above MHR", c.cutoff)
            })?;
            for j in 0..k {
                ensure(c.ndcg[j] <= c.hr[j], || {
                    format!("case {case} K={} step {}: NDCG above HR", c.cutoff, j + 1)
                })?;
            }
        }
    }
    Ok(format!(
        "{} fixture values exact to 1e-12; orderings hold on 1000 random fixtures",
        expected.len()
    ))
}
