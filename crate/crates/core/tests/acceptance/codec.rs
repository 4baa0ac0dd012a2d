use gcb_core::codec::{
    assign_semantic_ids, grad_check as codec_grad_check, kmeans_restarts, quantize, train_rqvae,
    CodeMap, Codebooks, CodecConfig, ItemFeatures,
};
use gcb_core::data_model::ItemId;
use gcb_core::generator::{grad_check as gen_grad_check, ModelConfig, TrainExample};
use gcb_core::tensor::Matrix;
use gcb_core::tokenizer::EOS;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{ensure, Outcome};

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn rq_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..1000 {
        let d = rng.random_range(1..=8);
        let levels = rng.random_range(1..=4);
        let mut books = Vec::new();
        for _ in 0..levels {
            let k = rng.random_range(1..=8);
            // Coarse grid values make exact distance ties common.
            let data = (0..k * d)
                .map(|_| rng.random_range(-4..=4) as f64 * 0.5)
                .collect();
            books.push(Matrix::from_vec(k, d, data));
        }
        let z: Vec<f64> = (0..d)
            .map(|_| {
                if case % 2 == 0 {
                    rng.random_range(-4..=4) as f64 * 0.5
                } else {
                    rng.random_range(-3.0..3.0)
                }
            })
            .collect();
        let cb = Codebooks::new(books.clone()).map_err(|e| e.to_string())?;
        let q = quantize(&z, &cb);

        let mut sum = vec![0.0; d];
        let mut residual = z.clone();
        for (l, book) in books.iter().enumerate() {
            let dists: Vec<f64> = (0..book.rows())
                .map(|c| sq(&residual, book.row(c)))
                .collect();
            let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
            let argmin = dists.iter().position(|&x| x == min).unwrap();
            ensure(q.codes[l] == argmin, || {
                format!(
                    "case {case} level {l}: code {} but exhaustive argmin {argmin}",
                    q.codes[l]
                )
            })?;
            ensure(q.selected[l] == book.row(argmin), || {
                format!("case {case} level {l}: selected codeword differs")
            })?;
            for ((s, r), c) in sum
                .iter_mut()
                .zip(residual.iter_mut())
                .zip(book.row(argmin))
            {
                *s += c;
                *r -= c;
            }
        }
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        ensure(bits(&q.zhat) == bits(&sum), || {
            format!("case {case}: zhat is not the bitwise codeword sum")
        })?;
    }
    Ok("1000 instances, zhat bit-exact and every code the exhaustive argmin".into())
}

fn sse_of(points: &Matrix, labels: &[usize], k: usize) -> f64 {
    let d = points.cols();
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<&[f64]> = (0..points.rows())
            .filter(|&i| labels[i] == c)
            .map(|i| points.row(i))
            .collect();
        if members.is_empty() {
            continue;
        }
        let mut mean = vec![0.0; d];
        for m in &members {
            for (a, b) in mean.iter_mut().zip(*m) {
                *a += b / members.len() as f64;
            }
        }
        total += members.iter().map(|m| sq(m, &mean)).sum::<f64>();
    }
    total
}

/// Minimum SSE over all labelings into at most `k` groups.
fn optimal_sse(points: &Matrix, k: usize) -> f64 {
    let n = points.rows();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        best = best.min(sse_of(points, &labels, k));
        let mut i = 0;
        while i < n {
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
        if i == n {
            return best;
        }
    }
}

pub fn kmeans_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_gap: f64 = 0.0;
    for case in 0..100 {
        let n = rng.random_range(1..=10);
        let k = rng.random_range(1..=3);
        let data = (0..n * 2).map(|_| rng.random_range(0.0..1.0)).collect();
        let points = Matrix::from_vec(n, 2, data);
        let run = kmeans_restarts(&points, k, 100, case, 5).map_err(|e| e.to_string())?;
        let opt = optimal_sse(&points, k);
        ensure(run.sse <= opt + 1e-9, || {
            format!(
                "case {case} (n={n}, k={k}): sse {} above optimum {opt}",
                run.sse
            )
        })?;
        worst_gap = worst_gap.max(run.sse - opt);
        ensure(run.sse_history.windows(2).all(|w| w[1] <= w[0]), || {
            format!(
                "case {case}: SSE increased during Lloyd iterations {:?}",
                run.sse_history
            )
        })?;
    }
    Ok(format!(
        "100 instances at the brute-force optimum (max excess {worst_gap:.1e}), SSE monotone"
    ))
}

pub fn gradient_checks() -> Outcome {
    let codec_cfg = CodecConfig {
        input_dim: 6,
        latent_dim: 3,
        encoder_hidden: vec![8, 5],
        decoder_hidden: vec![5, 8],
        level_sizes: vec![3, 3, 2],
        kmeans_iters: 50,
        seed: 4,
        ..Default::default()
    };
    let features = ItemFeatures::random(7, 6, 9);
    let codec = codec_grad_check(&features, &codec_cfg, 1e-4).map_err(|e| e.to_string())?;

    let gen_cfg = ModelConfig {
        vocab_size: 12,
        enc_layers: 2,
        dec_layers: 2,
        hidden: 12,
        ff_dim: 16,
        heads: 3,
        dropout: 0.0,
        max_source_len: 8,
        max_target_len: 7,
        seed: 5,
    };
    let data = vec![
        TrainExample {
            source: vec![3, 7, 9, 4, 5, 11],
            target: vec![6, 8, 10, 3, 9, 4, EOS],
        },
        TrainExample {
            source: vec![4, 6],
            target: vec![11, 5, 7, EOS],
        },
        TrainExample {
            source: vec![10, 3, 8],
            target: vec![3, 3, EOS],
        },
    ];
    let gen = gen_grad_check(&gen_cfg, &data, 1e-4).map_err(|e| e.to_string())?;
    Ok(format!(
        "max relative error: RQ-VAE {:.2e} over {} tensors, generator {:.2e} over {} tensors",
        codec.max_rel_err,
        codec.tensors.len(),
        gen.max_rel_err,
        gen.tensors.len()
    ))
}

fn gaussian_blobs(items: usize, clusters: usize, dim: usize, seed: u64) -> ItemFeatures {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = Matrix::randn(clusters, dim, 3.0, &mut rng);
    let noise = Matrix::randn(items, dim, 0.5, &mut rng);
    let mut x = Matrix::zeros(items, dim);
    for i in 0..items {
        let c = centers.row(i % clusters);
        for (j, v) in x.row_mut(i).iter_mut().enumerate() {
            *v = c[j] + noise.get(i, j);
        }
    }
    ItemFeatures::from_matrix(x).expect("finite features")
}

pub fn codec_training() -> Outcome {
    let features = gaussian_blobs(256, 8, 16, 3);
    let cfg = CodecConfig {
        input_dim: 16,
        latent_dim: 8,
        encoder_hidden: vec![32],
        decoder_hidden: vec![32],
        level_sizes: vec![8, 8, 8],
        epochs: 200,
        lr: 1e-3,
        seed: 7,
        ..Default::default()
    };
    let trained = train_rqvae(&features, &cfg).map_err(|e| e.to_string())?;
    let initial = trained.history[0].recon_mse;
    let last = trained.recon_mse(&features.matrix);
    let usage = trained.utilization(&features.matrix);
    ensure(last <= 0.5 * initial, || {
        format!("recon MSE {last:.4} vs epoch-0 {initial:.4}")
    })?;
    ensure(usage[0] >= 6, || {
        format!("level-1 utilization {}/8", usage[0])
    })?;
    Ok(format!(
        "recon MSE {initial:.4} -> {last:.4}, utilization {usage:?}"
    ))
}

fn check_bijective(map: &CodeMap, items: usize) -> Result<(), String> {
    ensure(map.num_items() == items, || {
        format!("{} of {items} items mapped", map.num_items())
    })?;
    let mut seen = std::collections::HashSet::new();
    for i in 1..=items as u32 {
        let id = map
            .semantic_id(ItemId(i))
            .ok_or_else(|| format!("item {i} has no id"))?;
        ensure(seen.insert(id.clone()), || {
            format!("item {i} shares id {id:?}")
        })?;
        ensure(map.item_for(id) == Some(ItemId(i)), || {
            format!("item {i} does not round-trip")
        })?;
    }
    let mut csv = Vec::new();
    map.write_csv(&mut csv).map_err(|e| e.to_string())?;
    let back = CodeMap::read_csv(csv.as_slice(), Some(map.position_sizes().to_vec()))
        .map_err(|e| e.to_string())?;
    ensure(&back == map, || "CSV round-trip changed the map".into())
}

pub fn codemap_bijectivity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut max_collision = 0;
    for run in 0..100u64 {
        let items = rng.random_range(1..=60);
        let levels: Vec<usize> = (0..rng.random_range(1..=3))
            .map(|_| rng.random_range(1..=6))
            .collect();
        let cfg = CodecConfig {
            input_dim: 5,
            latent_dim: 3,
            encoder_hidden: vec![6],
            decoder_hidden: vec![6],
            level_sizes: levels,
            epochs: 3,
            kmeans_iters: 10,
            seed: run,
            ..Default::default()
        };
        let features = ItemFeatures::random(items, 5, run + 1000);
        let trained = train_rqvae(&features, &cfg).map_err(|e| e.to_string())?;
        let map = assign_semantic_ids(&features, &trained.model, &trained.books, true)
            .map_err(|e| e.to_string())?;
        check_bijective(&map, items).map_err(|e| format!("run {run}: {e}"))?;
        max_collision = max_collision.max(*map.position_sizes().last().unwrap());
    }

    // Forced collisions: every item shares one tuple, or tuples repeat in blocks.
    let all_same = CodeMap::with_collision_position(vec![vec![0, 0, 0]; 40], &[1, 1, 1])
        .map_err(|e| e.to_string())?;
    check_bijective(&all_same, 40)?;
    ensure(all_same.position_sizes() == [1, 1, 1, 40], || {
        format!("sizes {:?}", all_same.position_sizes())
    })?;
    let blocks: Vec<Vec<u32>> = (0..30).map(|i| vec![i % 3, (i / 3) % 2, 0]).collect();
    let blocky = CodeMap::with_collision_position(blocks, &[3, 2, 1]).map_err(|e| e.to_string())?;
    check_bijective(&blocky, 30)?;
    ensure(
        blocky.semantic_id(ItemId(7)) == Some(&vec![0, 0, 0, 1]),
        || "collision numbering not in item order".into(),
    )?;
    Ok(format!(
        "100 codec runs plus forced-collision fixtures round-trip exactly (largest collision position {max_collision})"
    ))
}
