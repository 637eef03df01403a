use candle_core::{DType, Device, Tensor};
use criterion::{criterion_group, criterion_main, Criterion};
use rand_chacha::ChaCha8Rng;
use videdit::harness::Networks;
use videdit::repnet::Draw;
use videdit::textenc::EMBED_DIM;
use videdit_bench::{clips, desk_config, observation_batch};

fn forward(c: &mut Criterion) {
    let cfg = desk_config();
    let nets = Networks::new(&cfg).unwrap();
    let data = clips(&cfg, 16).unwrap();
    let batch = observation_batch(&cfg, &data).unwrap();
    let frames = batch.flat_frames().unwrap();
    let n = frames.dim(0).unwrap();
    let w_desc = Tensor::zeros((n, EMBED_DIM), DType::F32, &Device::Cpu).unwrap();
    let w_cont = Tensor::zeros((n, nets.tranet.mapping.in_dim()), DType::F32, &Device::Cpu).unwrap();
    let w_cont = nets.tranet.map_content(&w_cont).unwrap();

    c.bench_function("repnet_encode_batch16", |b| {
        b.iter(|| nets.repnet.encode_clip::<ChaCha8Rng>(&batch, Draw::Mean, &cfg.ode).unwrap())
    });
    c.bench_function("tranet_generate_64_frames", |b| {
        b.iter(|| nets.tranet.generate(&frames, &w_desc, &w_cont).unwrap())
    });
    c.bench_function("discriminator_64_frames", |b| {
        b.iter(|| nets.disc.discriminate(&frames, &w_desc, &w_cont).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = forward
}
criterion_main!(benches);
