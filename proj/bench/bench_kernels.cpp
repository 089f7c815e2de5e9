#include <benchmark/benchmark.h>

#include "obarrier/grid.hpp"
#include "obarrier/mc.hpp"

using namespace obarrier;

namespace {

SystemModel vdp() { return load_model(std::string(OBARRIER_MODELS_DIR) + "/vanderpol1.json"); }

struct Fixture {
    SystemModel m = vdp();
    BackwardContext ctx;
    GridFunction next;
    explicit Fixture(int res)
        : ctx(m, Grid::for_model(m, res), QuadratureRule::for_noise(m.noise, 8)) {
        next.grid = ctx.grid();
        next.values.assign(next.grid->size(), 1.0);
        next.outside_value = 1.0;
    }
};

void BM_backstep_serial(benchmark::State& st) {
    Fixture f(static_cast<int>(st.range(0)));
    for (auto _ : st) benchmark::DoNotOptimize(backstep_serial(f.ctx, f.next, f.ctx.x_minus_u(), 0.0));
    st.SetItemsProcessed(st.iterations() * static_cast<long long>(f.next.values.size()));
}

void BM_backstep_omp(benchmark::State& st) {
    Fixture f(static_cast<int>(st.range(0)));
    for (auto _ : st) benchmark::DoNotOptimize(backstep(f.ctx, f.next, f.ctx.x_minus_u(), 0.0));
    st.SetItemsProcessed(st.iterations() * static_cast<long long>(f.next.values.size()));
}

void BM_mc(benchmark::State& st, bool parallel) {
    const SystemModel m = vdp();
    McOptions o;
    o.parallel = parallel;
    for (auto _ : st) benchmark::DoNotOptimize(estimate_safety(m, 200, st.range(0), o));
    st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_mc_serial(benchmark::State& st) { BM_mc(st, false); }
void BM_mc_omp(benchmark::State& st) { BM_mc(st, true); }

}  // namespace

BENCHMARK(BM_backstep_serial)->Arg(101)->Arg(201)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_backstep_omp)->Arg(101)->Arg(201)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_mc_serial)->Arg(10000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_mc_omp)->Arg(10000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
