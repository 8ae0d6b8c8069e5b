//! Criterion benchmarks for the convolution and Gabor layer kernels; see `benches/`.
