#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "deferral/calibrate.hpp"
#include "deferral/eval_metrics.hpp"
#include "deferral/uncertainty.hpp"

namespace {

struct Data {
  std::vector<double> probs;
  std::vector<std::uint8_t> labels;
  std::vector<deferral::WeightedPoint> points;
};

Data make_data(std::size_t n) {
  std::mt19937_64 rng(42);
  Data d;
  d.probs.reserve(n);
  d.labels.reserve(n);
  d.points.reserve(n);
  double x = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    d.probs.push_back(p);
    d.labels.push_back((rng() & 1) != 0 ? 1 : 0);
    x += 1e-6 + p;
    d.points.push_back({x, p, 1.0});
  }
  return d;
}

void BM_Softmax(benchmark::State& state) {
  std::mt19937_64 rng(1);
  std::vector<double> logits(static_cast<std::size_t>(state.range(0)));
  for (auto& z : logits) z = static_cast<double>(rng() >> 11) * 0x1.0p-53 * 10.0;
  for (auto _ : state) benchmark::DoNotOptimize(deferral::softmax(logits));
}
BENCHMARK(BM_Softmax)->Arg(8)->Arg(64)->Arg(1024);

void BM_GenerationMetrics(benchmark::State& state) {
  std::mt19937_64 rng(2);
  std::vector<double> lps(static_cast<std::size_t>(state.range(0)));
  for (auto& lp : lps) lp = -static_cast<double>(rng() >> 11) * 0x1.0p-53 * 3.0;
  for (auto _ : state) benchmark::DoNotOptimize(deferral::generation_metrics(lps));
}
BENCHMARK(BM_GenerationMetrics)->Arg(32)->Arg(512);

void BM_Pava(benchmark::State& state) {
  const auto d = make_data(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state)
    benchmark::DoNotOptimize(deferral::pool_adjacent_violators(d.points));
}
BENCHMARK(BM_Pava)->Arg(1000)->Arg(100000);

void BM_Auroc(benchmark::State& state) {
  const auto d = make_data(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state)
    benchmark::DoNotOptimize(deferral::auroc(d.probs, d.labels));
}
BENCHMARK(BM_Auroc)->Arg(1000)->Arg(100000);

void BM_Ece(benchmark::State& state) {
  const auto d = make_data(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state)
    benchmark::DoNotOptimize(
        deferral::ece(d.probs, d.labels, 10, deferral::BinScheme::equal_width));
}
BENCHMARK(BM_Ece)->Arg(1000)->Arg(100000);

void BM_PlattFit(benchmark::State& state) {
  const auto d = make_data(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state)
    benchmark::DoNotOptimize(deferral::fit_platt(d.probs, d.labels, "score"));
}
BENCHMARK(BM_PlattFit)->Arg(1000)->Arg(50000);

}  // namespace

int main(int argc, char** argv) {
  ::benchmark::Initialize(&argc, argv);
  if (::benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  ::benchmark::RunSpecifiedBenchmarks();
  ::benchmark::Shutdown();
  return 0;
}
