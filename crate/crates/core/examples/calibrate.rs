//! Scratch calibration harness (not part of the deliverable test suite).
use std::time::Instant;

use matpose::data::*;
use matpose::model::*;
use matpose::numerics::*;
use matpose::train::*;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "fwd".into());
    match which.as_str() {
        "fwd" => bench_forward(),
        "overfit" => overfit(),
        "mae" => mae_probe(),
        "hier" => hierarchy(),
        "prof" => profile(),
        "parts" => parts(),
        "batch" => batch_bench(),
        "ops" => op_bench(),
        "attr" => attribute(),
        _ => eprintln!("unknown"),
    }
}

fn bench_forward() {
    let vit = ViTConfig::tiny();
    let head = HeadConfig::tiny();
    let mae = MaeConfig::tiny();
    let ckpt = init_vitpose_checkpoint(vit, head, 1).unwrap();
    let ds = generate_dataset(3, 1, Source::SmalLike).unwrap();
    let img = preprocess::<f32>(&ds.samples[0], ModalityMask::Both);

    let t0 = Instant::now();
    let n = 10;
    for _ in 0..n {
        let out = vitpose_forward(&vit, &head, &ckpt.params, &img, true).unwrap();
        let target = matpose::heatmap::encode(&ds.samples[0].pose).to_tensor::<f32>();
        let loss = out.mse(&target).unwrap();
        let _g = backward(&loss).unwrap();
    }
    println!("vitpose fwd+bwd: {:.1} ms/iter", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);

    let mckpt = init_mae_checkpoint(vit, mae, 1).unwrap();
    let t0 = Instant::now();
    for i in 0..n {
        let (recon, masked) = mae_forward(&vit, &mae, &mckpt.params, &img, i as u64, true).unwrap();
        let target = patchify(&img, &vit).unwrap();
        let loss = mae_loss(&recon, &target, &masked).unwrap();
        let _g = backward(&loss).unwrap();
    }
    println!("mae fwd+bwd: {:.1} ms/iter", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);

    let t0 = Instant::now();
    for _ in 0..n {
        let _ = ds.samples[0].depth.materialize();
    }
    println!("render depth: {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);
}

fn overfit() {
    let t0 = Instant::now();
    let ds = generate_dataset(9, 77, Source::SmalLike).unwrap();
    // 8 covered samples for the train set
    let train: Vec<Sample> = ds.samples.iter().filter(|s| s.cover != Cover::Uncovered && s.pose_id < 4).take(8).cloned().collect();
    let model = init_vitpose_checkpoint(ViTConfig::tiny(), HeadConfig::tiny(), 3).unwrap();
    let cfg = TrainConfig {
        batch_size: 8, base_lr: 2e-3, epochs: 300, warmup: 10,
        policy: AugmentPolicy::none(), seed: 5, threads: 0,
    };
    let mut hit = None;
    let (_m, log) = {
        // manual loop with eval every 25 epochs via train_pose_model chunks
        let mut current = model.clone();
        let mut log_all = Vec::new();
        for chunk in 0..12 {
            let c = TrainConfig { epochs: 25, warmup: if chunk == 0 {10} else {0}, base_lr: cfg.base_lr, ..cfg.clone() };
            // continue training — note: optimizer state resets each chunk (calibration only)
            let (m2, lg) = train_pose_model(&current, &train, &c, ModalityMask::Both).unwrap();
            current = m2;
            let pck = evaluate_pose_model(&current, &train, ModalityMask::Both, 0).unwrap().mean_pck;
            log_all.push(pck);
            println!("steps {}: train pck {:.2} (loss {:.5})", (chunk+1)*25, pck, lg.epochs.last().unwrap().train_loss);
            if pck == 100.0 { hit = Some((chunk+1)*25); break; }
        }
        (current, log_all)
    };
    println!("overfit: hit 100% at {:?} steps, elapsed {:.1}s, log {:?}", hit, t0.elapsed().as_secs_f64(), log);
}

fn mae_probe() {
    let t0 = Instant::now();
    let n_poses: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(165);
    let epochs: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(5);
    let ds = generate_dataset(n_poses, 7, Source::SynthSim).unwrap();
    println!("dataset: {} samples, gen {:.1}s", ds.samples.len(), t0.elapsed().as_secs_f64());
    let init = init_mae_checkpoint(ViTConfig::tiny(), MaeConfig::tiny(), 1).unwrap();
    let cfg = PretrainConfig { batch_size: 64, base_lr: 1.5e-3, warmup: 5, holdout_frac: 0.1, threads: 0 };
    let t0 = Instant::now();
    let (_ck, log) = pretrain_mae(&init, &ds, epochs, &cfg, "sim", 3).unwrap();
    for e in &log.epochs {
        println!("epoch {}: train {:.5} holdout {:.5}", e.epoch, e.train_loss, e.holdout_loss.unwrap());
    }
    println!("elapsed {:.1}s", t0.elapsed().as_secs_f64());
}

fn hierarchy() {
    let t0 = Instant::now();
    let seeds: Vec<u64> = vec![1, 2];
    let cfg = HierarchyConfig::desk(seeds, 0);
    let cmp = hierarchy_comparison(&cfg).unwrap();
    println!("baseline {:?} mean {:.2}", cmp.baseline, cmp.baseline_mean);
    println!("S        {:?} mean {:.2} gap {:+.2}", cmp.s_variant, cmp.s_mean, cmp.s_gap);
    println!("B        {:?} mean {:.2} gap {:+.2}", cmp.b_variant, cmp.b_mean, cmp.b_gap);
    println!("elapsed {:.1}s", t0.elapsed().as_secs_f64());
}

fn profile() {
    use matpose::heatmap;
    let vit = ViTConfig::tiny();
    let mae = MaeConfig::tiny();
    let head = HeadConfig::tiny();
    let mckpt = init_mae_checkpoint(vit, mae, 1).unwrap();
    let pckpt = init_vitpose_checkpoint(vit, head, 1).unwrap();
    let ds = generate_dataset(3, 1, Source::SmalLike).unwrap();
    let n = 20;

    let t0 = Instant::now();
    for _ in 0..n { let _ = preprocess::<f32>(&ds.samples[0], ModalityMask::Both); }
    println!("preprocess: {:.1} ms", t0.elapsed().as_secs_f64()*1000.0/n as f64);

    let img = preprocess::<f32>(&ds.samples[0], ModalityMask::Both);
    let t0 = Instant::now();
    for _ in 0..n { let _ = patchify(&img, &vit).unwrap(); }
    println!("patchify: {:.1} ms", t0.elapsed().as_secs_f64()*1000.0/n as f64);

    // MAE forward only (inference mode = no graph)
    let t0 = Instant::now();
    for i in 0..n { let _ = mae_forward(&vit, &mae, &mckpt.params, &img, i as u64, false).unwrap(); }
    println!("mae fwd (no graph): {:.1} ms", t0.elapsed().as_secs_f64()*1000.0/n as f64);

    // MAE forward with graph
    let t0 = Instant::now();
    for i in 0..n { let _ = mae_forward(&vit, &mae, &mckpt.params, &img, i as u64, true).unwrap(); }
    println!("mae fwd (graph):    {:.1} ms", t0.elapsed().as_secs_f64()*1000.0/n as f64);

    // full
    let t0 = Instant::now();
    for i in 0..n {
        let (recon, masked) = mae_forward(&vit, &mae, &mckpt.params, &img, i as u64, true).unwrap();
        let target = patchify(&img, &vit).unwrap();
        let loss = mae_loss(&recon, &target, &masked).unwrap();
        let _ = backward(&loss).unwrap();
    }
    println!("mae fwd+bwd:        {:.1} ms", t0.elapsed().as_secs_f64()*1000.0/n as f64);

    // vitpose fwd only
    let t0 = Instant::now();
    for _ in 0..n { let _ = vitpose_forward(&vit, &head, &pckpt.params, &img, false).unwrap(); }
    println!("vitpose fwd (no graph): {:.1} ms", t0.elapsed().as_secs_f64()*1000.0/n as f64);

    let t0 = Instant::now();
    for _ in 0..n {
        let out = vitpose_forward(&vit, &head, &pckpt.params, &img, true).unwrap();
        let target = heatmap::encode(&ds.samples[0].pose).to_tensor::<f32>();
        let loss = out.mse(&target).unwrap();
        let _ = backward(&loss).unwrap();
    }
    println!("vitpose fwd+bwd:        {:.1} ms", t0.elapsed().as_secs_f64()*1000.0/n as f64);
}

fn parts() {
    let vit = ViTConfig::tiny();
    let mae = MaeConfig::tiny();
    let mckpt = init_mae_checkpoint(vit, mae, 1).unwrap();
    let ds = generate_dataset(3, 1, Source::SmalLike).unwrap();
    let img = preprocess::<f32>(&ds.samples[0], ModalityMask::Both);
    let n = 30;

    // encoder depth sweep
    for blocks in [0usize, 4] {
        let mut v = vit; v.depth_blocks = blocks;
        let ck = init_mae_checkpoint(v, mae, 1).unwrap();
        let t0 = Instant::now();
        for i in 0..n {
            let (recon, masked) = mae_forward(&v, &mae, &ck.params, &img, i as u64, true).unwrap();
            let target = patchify(&img, &v).unwrap();
            let loss = mae_loss(&recon, &target, &masked).unwrap();
            let _ = backward(&loss).unwrap();
        }
        println!("enc_blocks={blocks}: {:.1} ms", t0.elapsed().as_secs_f64()*1000.0/n as f64);
    }
    // decoder depth sweep
    for dblocks in [0usize, 2] {
        let m2 = MaeConfig { decoder_blocks: dblocks, ..mae };
        let ck = init_mae_checkpoint(vit, m2, 1).unwrap();
        let t0 = Instant::now();
        for i in 0..n {
            let (recon, masked) = mae_forward(&vit, &m2, &ck.params, &img, i as u64, true).unwrap();
            let target = patchify(&img, &vit).unwrap();
            let loss = mae_loss(&recon, &target, &masked).unwrap();
            let _ = backward(&loss).unwrap();
        }
        println!("dec_blocks={dblocks}: {:.1} ms", t0.elapsed().as_secs_f64()*1000.0/n as f64);
    }
    let t0 = Instant::now();
    for _ in 0..n { let _ = matpose::model::sinusoidal_pos_embed::<f32>(196, 64).unwrap(); }
    println!("pos_embed: {:.2} ms", t0.elapsed().as_secs_f64()*1000.0/n as f64);
}

fn batch_bench() {
    matpose::parallel::tune_allocator();
    let vit = ViTConfig::tiny();
    let mae = MaeConfig::tiny();
    let head = HeadConfig::tiny();
    let mckpt = init_mae_checkpoint(vit, mae, 1).unwrap();
    let pckpt = init_vitpose_checkpoint(vit, head, 1).unwrap();
    let ds = generate_dataset(24, 1, Source::SmalLike).unwrap();
    for bsz in [8usize, 16, 32, 64] {
        let images: Vec<_> = ds.samples.iter().take(bsz).map(|s| preprocess::<f32>(s, ModalityMask::Both)).collect();
        let seeds: Vec<u64> = (0..bsz as u64).collect();
        let t0 = Instant::now();
        let n = 3;
        for _ in 0..n {
            let (recon, masked) = mae_forward_batch(&vit, &mae, &mckpt.params, &images, &seeds, true).unwrap();
            let parts: Vec<_> = images.iter().map(|i| patchify(i, &vit).unwrap()).collect();
            let targets = matpose::numerics::Tensor::concat_rows(&parts).unwrap();
            let loss = mae_loss_batch(&recon, &targets, &masked, 196).unwrap();
            let _ = backward(&loss).unwrap();
        }
        let per = t0.elapsed().as_secs_f64()*1000.0/(n*bsz) as f64;
        println!("mae batch {bsz}: {per:.1} ms/sample");
    }
    for bsz in [8usize, 16] {
        let images: Vec<_> = ds.samples.iter().take(bsz).map(|s| preprocess::<f32>(s, ModalityMask::Both)).collect();
        let t0 = Instant::now();
        let n = 2;
        for _ in 0..n {
            let outs = vitpose_forward_batch(&vit, &head, &pckpt.params, &images, true).unwrap();
            let flat: Vec<_> = outs.iter().map(|o| o.reshape(&[1, 14*56*56]).unwrap()).collect();
            let preds = matpose::numerics::Tensor::concat_rows(&flat).unwrap();
            let tgt = matpose::numerics::Tensor::zeros(&[bsz, 14*56*56]);
            let loss = preds.mse(&tgt).unwrap();
            let _ = backward(&loss).unwrap();
        }
        let per = t0.elapsed().as_secs_f64()*1000.0/(n*bsz) as f64;
        println!("vitpose batch {bsz}: {per:.1} ms/sample");
    }
}

fn op_bench() {
    use matpose::numerics::Tensor;
    let mut rng = matpose::rng::Rng::new(1);
    let mk = |rng: &mut matpose::rng::Rng, shape: &[usize], grad: bool| {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| rng.range(-1.0, 1.0) as f32).collect();
        Tensor::<f32>::leaf(data, shape, grad).unwrap()
    };
    let time = |name: &str, iters: usize, f: &mut dyn FnMut()| {
        let t0 = Instant::now();
        for _ in 0..iters { f(); }
        println!("{name}: {:.3} ms/iter", t0.elapsed().as_secs_f64()*1000.0/iters as f64);
    };

    // pred matmul fwd+bwd
    let a = mk(&mut rng, &[196, 64], true);
    let wt = mk(&mut rng, &[64, 768], true);
    time("matmul 196x64x768 fwd+bwd", 50, &mut || {
        let y = a.matmul(&wt).unwrap();
        let l = y.mean_all().unwrap();
        let _ = backward(&l).unwrap();
    });

    let q = mk(&mut rng, &[4, 196, 16], true);
    let k = mk(&mut rng, &[4, 16, 196], true);
    time("bmm scores fwd+bwd", 50, &mut || {
        let y = q.bmm(&k).unwrap();
        let l = y.mean_all().unwrap();
        let _ = backward(&l).unwrap();
    });

    let s_in = mk(&mut rng, &[4, 196, 196], true);
    time("softmax [4,196,196] fwd+bwd", 50, &mut || {
        let y = s_in.softmax_lastdim().unwrap();
        let l = y.mean_all().unwrap();
        let _ = backward(&l).unwrap();
    });
    time("softmax [4,196,196] fwd only", 50, &mut || {
        let _ = s_in.softmax_lastdim().unwrap();
    });

    let mlp_in = mk(&mut rng, &[196, 64], true);
    let fc1 = mk(&mut rng, &[64, 256], true);
    let fc2 = mk(&mut rng, &[256, 64], true);
    time("mlp fc1+gelu+fc2 fwd+bwd", 50, &mut || {
        let h = mlp_in.matmul(&fc1).unwrap().gelu().unwrap();
        let y = h.matmul(&fc2).unwrap();
        let l = y.mean_all().unwrap();
        let _ = backward(&l).unwrap();
    });

    let ge = mk(&mut rng, &[196, 256], true);
    time("gelu [196,256] fwd+bwd", 100, &mut || {
        let y = ge.gelu().unwrap();
        let l = y.mean_all().unwrap();
        let _ = backward(&l).unwrap();
    });

    let ln_in = mk(&mut rng, &[196, 64], true);
    let gmm = mk(&mut rng, &[64], true);
    let bb = mk(&mut rng, &[64], true);
    time("layernorm [196,64] fwd+bwd", 100, &mut || {
        let y = ln_in.layernorm(&gmm, &bb, 1e-6).unwrap();
        let l = y.mean_all().unwrap();
        let _ = backward(&l).unwrap();
    });

    let pm = mk(&mut rng, &[196, 3, 64], true);
    time("permute3 [196,3,64] fwd+bwd", 100, &mut || {
        let y = pm.permute3([1,0,2]).unwrap();
        let l = y.mean_all().unwrap();
        let _ = backward(&l).unwrap();
    });

    let img = mk(&mut rng, &[224,224,3], false);
    let vit = ViTConfig::tiny();
    time("patchify const", 100, &mut || {
        let _ = patchify(&img, &vit).unwrap();
    });

    let qkv_in = mk(&mut rng, &[196, 192], true);
    time("slice_cols x3 fwd+bwd", 100, &mut || {
        let q = qkv_in.slice_cols(0, 64).unwrap();
        let l = q.mean_all().unwrap();
        let _ = backward(&l).unwrap();
    });
}

fn attribute() {
    matpose::parallel::tune_allocator();
    use matpose::numerics::Tensor;
    let vit = ViTConfig::tiny();
    let mae = MaeConfig::tiny();
    let mckpt = init_mae_checkpoint(vit, mae, 1).unwrap();
    let ds = generate_dataset(24, 1, Source::SmalLike).unwrap();
    let bsz = 8;
    let reps = 12;
    let (mut t_pre, mut t_fwd, mut t_tgt, mut t_loss, mut t_bwd) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for r in 0..reps {
        let t0 = Instant::now();
        let images: Vec<Tensor<f32>> = ds.samples[r%3*8..r%3*8+bsz].iter().map(|s| preprocess::<f32>(s, ModalityMask::Both)).collect();
        t_pre += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let seeds: Vec<u64> = (0..bsz as u64).map(|i| i + r as u64 * 100).collect();
        let (recon, masked) = mae_forward_batch(&vit, &mae, &mckpt.params, &images, &seeds, true).unwrap();
        t_fwd += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let parts: Vec<_> = images.iter().map(|i| patchify(i, &vit).unwrap()).collect();
        let targets = Tensor::concat_rows(&parts).unwrap();
        t_tgt += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let loss = mae_loss_batch(&recon, &targets, &masked, 196).unwrap();
        t_loss += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let _ = backward(&loss).unwrap();
        t_bwd += t0.elapsed().as_secs_f64();
    }
    let n = (reps * bsz) as f64;
    println!("per-sample: pre {:.1}ms fwd {:.1}ms tgt {:.1}ms loss {:.1}ms bwd {:.1}ms total {:.1}ms",
        t_pre*1000.0/n, t_fwd*1000.0/n, t_tgt*1000.0/n, t_loss*1000.0/n, t_bwd*1000.0/n,
        (t_pre+t_fwd+t_tgt+t_loss+t_bwd)*1000.0/n);
}
