// Serial reference kernels vs their OpenMP versions on pipeline-sized inputs.

#include <random>

#include <benchmark/benchmark.h>

#include "rvec/kernels.hpp"
#include "rvec/linalg.hpp"

namespace {

rvec::Matrix random_matrix(std::size_t r, std::size_t c, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  rvec::Matrix m(r, c);
  for (double& v : m.data()) v = normal(rng);
  return m;
}

template <bool Omp>
void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  rvec::Matrix out(n, n);
  for (auto _ : state) {
    if constexpr (Omp) rvec::kernels::omp::matmul(a, b, out);
    else rvec::kernels::serial::matmul(a, b, out);
    benchmark::DoNotOptimize(out.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(n * n * n));
}

template <bool Omp>
void BM_SaeEncode(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t d = 32, m = 256;
  const auto h = random_matrix(rows, d, 3), w = random_matrix(m, d, 4);
  const std::vector<double> b_enc(m, -0.1), b_dec(d, 0.0);
  rvec::Matrix out(rows, m);
  for (auto _ : state) {
    if constexpr (Omp) rvec::kernels::omp::sae_encode_rows(h, w, b_enc, b_dec, out);
    else rvec::kernels::serial::sae_encode_rows(h, w, b_enc, b_dec, out);
    benchmark::DoNotOptimize(out.data().data());
  }
}

template <bool Omp>
void BM_ColumnMeanOfSquares(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const auto z = random_matrix(rows, 256, 5);
  std::vector<double> out(256);
  for (auto _ : state) {
    if constexpr (Omp) rvec::kernels::omp::column_mean_of_squares(z, out);
    else rvec::kernels::serial::column_mean_of_squares(z, out);
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_Matmul<false>)->Name("matmul/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_Matmul<true>)->Name("matmul/omp")->Arg(64)->Arg(256);
BENCHMARK(BM_SaeEncode<false>)->Name("sae_encode/serial")->Arg(1024)->Arg(8192);
BENCHMARK(BM_SaeEncode<true>)->Name("sae_encode/omp")->Arg(1024)->Arg(8192);
BENCHMARK(BM_ColumnMeanOfSquares<false>)->Name("col_mean_sq/serial")->Arg(8192);
BENCHMARK(BM_ColumnMeanOfSquares<true>)->Name("col_mean_sq/omp")->Arg(8192);

BENCHMARK_MAIN();
