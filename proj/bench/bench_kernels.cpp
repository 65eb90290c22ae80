// Serial reference vs OpenMP kernels. With one core the two should match;
// the gap shows up as OMP_NUM_THREADS grows.
#include <benchmark/benchmark.h>

#include "ctf/arena.hpp"
#include "ctf/training.hpp"

using namespace ctf;

namespace {

struct Fixture {
  nn::PolicyParams policy;
  nn::Matrix x;
  nn::Matrix d_out;
  nn::BatchCache cache;
  std::vector<double> grad;

  explicit Fixture(int batch) {
    const int dim = obs_dim(ArenaConfig{}, kDefaultRays);
    policy = nn::init_params(dim, 1);
    x = nn::Matrix(batch, dim);
    Rng rng(2);
    for (double& v : x.data) v = uniform01(rng) * 2.0 - 1.0;
    d_out = nn::Matrix(batch, policy.net.shape.output);
    for (double& v : d_out.data) v = uniform01(rng) - 0.5;
    grad.assign(policy.net.params.size(), 0.0);
    nn::forward_batch_serial(policy.net, x, cache);
  }
};

void BM_forward_serial(benchmark::State& st) {
  Fixture f(static_cast<int>(st.range(0)));
  for (auto _ : st) {
    nn::forward_batch_serial(f.policy.net, f.x, f.cache);
    benchmark::DoNotOptimize(f.cache.output().data.data());
  }
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_forward_omp(benchmark::State& st) {
  Fixture f(static_cast<int>(st.range(0)));
  for (auto _ : st) {
    nn::forward_batch(f.policy.net, f.x, f.cache);
    benchmark::DoNotOptimize(f.cache.output().data.data());
  }
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_backward_serial(benchmark::State& st) {
  Fixture f(static_cast<int>(st.range(0)));
  for (auto _ : st) {
    nn::backward_batch_serial(f.policy.net, f.cache, f.d_out, f.grad);
    benchmark::DoNotOptimize(f.grad.data());
  }
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_backward_omp(benchmark::State& st) {
  Fixture f(static_cast<int>(st.range(0)));
  for (auto _ : st) {
    nn::backward_batch(f.policy.net, f.cache, f.d_out, f.grad);
    benchmark::DoNotOptimize(f.grad.data());
  }
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_evaluate_serial(benchmark::State& st) {
  EvalOptions opt;
  opt.episodes = static_cast<int>(st.range(0));
  evaluate_serial(PolicySource::expert(), PolicySource::expert(), opt);  // first-use warm-up
  for (auto _ : st) benchmark::DoNotOptimize(evaluate_serial(PolicySource::expert(), PolicySource::expert(), opt));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_evaluate_omp(benchmark::State& st) {
  EvalOptions opt;
  opt.episodes = static_cast<int>(st.range(0));
  evaluate(PolicySource::expert(), PolicySource::expert(), opt);
  for (auto _ : st) benchmark::DoNotOptimize(evaluate(PolicySource::expert(), PolicySource::expert(), opt));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_rollouts(benchmark::State& st) {
  const ArenaConfig arena;
  const nn::PolicyParams p = nn::init_params(obs_dim(arena, kDefaultRays), 1);
  std::vector<RolloutWorker> ws;
  for (int i = 0; i < st.range(0); ++i) ws.push_back(make_worker(arena, static_cast<std::uint64_t>(i)));
  for (auto _ : st) {
    benchmark::DoNotOptimize(collect_rollouts(ws, p, {OpponentKind::Expert, nullptr}, 256, RolloutOptions{}));
  }
  st.SetItemsProcessed(st.iterations() * 256 * st.range(0));
}

}  // namespace

BENCHMARK(BM_forward_serial)->Arg(64)->Arg(512);
BENCHMARK(BM_forward_omp)->Arg(64)->Arg(512);
BENCHMARK(BM_backward_serial)->Arg(64)->Arg(512);
BENCHMARK(BM_backward_omp)->Arg(64)->Arg(512);
BENCHMARK(BM_evaluate_serial)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_evaluate_omp)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_rollouts)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
