use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use gridveil_core::KeyMaterial;

fn decryption(c: &mut Criterion) {
    let mut group = c.benchmark_group("decrypt");
    group.sample_size(20);
    for bits in [128usize, 512, 1024, 2048] {
        let mut rng = ChaCha20Rng::seed_from_u64(bits as u64);
        let km = KeyMaterial::keygen(bits, &mut rng).expect("keygen");
        let codec = km.codec(4);
        let ct = km.public().encrypt(&codec, -1234.5678, &mut rng).expect("encrypt");
        group.bench_with_input(BenchmarkId::new("crt", bits), &ct, |b, ct| {
            b.iter(|| km.decrypt_raw_crt(ct).expect("decrypt"))
        });
        group.bench_with_input(BenchmarkId::new("standard", bits), &ct, |b, ct| {
            b.iter(|| km.decrypt_raw_standard(ct).expect("decrypt"))
        });
    }
    group.finish();
}

criterion_group!(benches, decryption);
criterion_main!(benches);
