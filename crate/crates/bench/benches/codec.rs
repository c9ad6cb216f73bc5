use criterion::{black_box, criterion_group, criterion_main, Criterion};

use carm_bench::random_image;
use carm_core::codec::{build_quant_tables, compress, dct2d_8x8, idct2d_8x8, QualityFactor};

fn bench_compress(c: &mut Criterion) {
    let small = random_image(32, 32, 7);
    let large = random_image(256, 256, 8);
    let q75 = QualityFactor::new(75).unwrap();
    let q20 = QualityFactor::new(20).unwrap();

    c.bench_function("compress 32x32 q75", |b| {
        b.iter(|| compress(black_box(&small), q75))
    });
    c.bench_function("compress 32x32 q20", |b| {
        b.iter(|| compress(black_box(&small), q20))
    });
    c.bench_function("compress 256x256 q75", |b| {
        b.iter(|| compress(black_box(&large), q75))
    });
}

fn bench_dct(c: &mut Criterion) {
    let mut block = [[0.0f64; 8]; 8];
    for (i, row) in block.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = ((i * 8 + j) as f64) - 31.5;
        }
    }
    c.bench_function("dct2d_8x8 round trip", |b| {
        b.iter(|| idct2d_8x8(&dct2d_8x8(black_box(&block))))
    });
    c.bench_function("build_quant_tables q50", |b| {
        b.iter(|| build_quant_tables(black_box(QualityFactor::new(50).unwrap())))
    });
}

criterion_group!(benches, bench_compress, bench_dct);
criterion_main!(benches);
