#include <benchmark/benchmark.h>

#include "breakiv/changepoint.hpp"
#include "breakiv/estimators.hpp"
#include "breakiv/montecarlo.hpp"
#include "helpers.hpp"

namespace {

using namespace breakiv;

const Dataset& fixture(int T, int n_iv) {
  static std::map<std::pair<int, int>, Dataset> cache;
  const auto key = std::make_pair(T, n_iv);
  auto it = cache.find(key);
  if (it == cache.end()) {
    testutil::SynthSpec spec;
    spec.T = T;
    spec.n_iv = n_iv;
    spec.brk = static_cast<int>(0.4 * T);
    it = cache.emplace(key, testutil::make_synthetic(spec)).first;
  }
  return it->second;
}

void BM_SplitGmm(benchmark::State& state) {
  const Dataset& d = fixture(static_cast<int>(state.range(0)), 4);
  const int k = static_cast<int>(0.4 * state.range(0));
  for (auto _ : state)
    benchmark::DoNotOptimize(split_sample_gmm(d, k, HacConfig{}));
}
BENCHMARK(BM_SplitGmm)->Arg(400)->Arg(800);

void BM_Tsgmm(benchmark::State& state) {
  const Dataset& d = fixture(static_cast<int>(state.range(0)), 4);
  const int k = static_cast<int>(0.4 * state.range(0));
  for (auto _ : state)
    benchmark::DoNotOptimize(tsgmm(d, k, HacConfig{}));
}
BENCHMARK(BM_Tsgmm)->Arg(400)->Arg(800);

void BM_BreakScan(benchmark::State& state) {
  const Dataset& d = fixture(static_cast<int>(state.range(0)), 1);
  for (auto _ : state)
    benchmark::DoNotOptimize(estimate_break_2sls(d, 0.15));
}
BENCHMARK(BM_BreakScan)->Arg(400)->Arg(800);

void BM_SupWaldScan(benchmark::State& state) {
  const Dataset& d = fixture(static_cast<int>(state.range(0)), 1);
  for (auto _ : state)
    benchmark::DoNotOptimize(sup_wald_scan(d, 0.15, HacConfig{}));
}
BENCHMARK(BM_SupWaldScan)->Arg(400)->Arg(800);

void BM_HacBartlett(benchmark::State& state) {
  RngStream rng(1);
  const MatrixXd m = testutil::rand_matrix(rng, state.range(0), 6);
  HacConfig cfg;
  cfg.kernel = Kernel::Bartlett;
  cfg.bandwidth = Bandwidth::NeweyWestAuto();
  for (auto _ : state) benchmark::DoNotOptimize(hac_lrv(m, cfg));
}
BENCHMARK(BM_HacBartlett)->Arg(400)->Arg(4000);

void BM_BridgeCritvals(benchmark::State& state) {
  for (auto _ : state)
    benchmark::DoNotOptimize(simulate_sup_wald_critvals(2, 0.15, 2000, 200, 1, 1));
}
BENCHMARK(BM_BridgeCritvals);

}  // namespace

BENCHMARK_MAIN();
