#include <benchmark/benchmark.h>

#include <numeric>
#include <vector>

#include "bnnib/datasets.hpp"
#include "bnnib/experiment.hpp"
#include "bnnib/infoplane.hpp"
#include "bnnib/nn.hpp"

using namespace bnnib;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
    RngStream rng(seed);
    Matrix m(r, c);
    for (auto& v : m.data()) v = rng.uniform(-1.0, 1.0);
    return m;
}

Network make_net(std::size_t in, std::vector<std::size_t> hidden, std::size_t classes) {
    NetworkSpec spec;
    spec.input_dim = in;
    spec.hidden_widths = std::move(hidden);
    spec.num_classes = classes;
    spec.activation = ActivationKind{Activation::SteSign};
    spec.binary = true;
    RngStream rng(1);
    return Network(spec, rng);
}

void BM_Matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const Matrix a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
    for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

// First MNIST layer: a 128-sample batch through 784 -> 1024.
void BM_MatmulMnistLayer(benchmark::State& state) {
    const Matrix x = random_matrix(128, 784, 1), w = random_matrix(784, 1024, 2);
    for (auto _ : state) benchmark::DoNotOptimize(matmul(x, w));
    state.SetItemsProcessed(state.iterations() * 2 * 128 * 784 * 1024);
}
BENCHMARK(BM_MatmulMnistLayer);

// One minibatch step of the synthetic and MNIST architectures.
void BM_ForwardBackward(benchmark::State& state) {
    const bool mnist = state.range(0) == 1;
    Network net = mnist ? make_net(784, {1024, 20, 20, 20}, 10) : make_net(12, {10, 8, 6, 4, 2}, 2);
    const std::size_t batch = mnist ? 128 : 64, classes = mnist ? 10 : 2;
    const Matrix x = random_matrix(batch, mnist ? 784 : 12, 3);
    std::vector<int> y(batch);
    for (std::size_t i = 0; i < batch; ++i) y[i] = static_cast<int>(i % classes);
    for (auto _ : state) {
        const Matrix probs = network_forward(net, x, Mode::Train, false);
        benchmark::DoNotOptimize(network_backward(net, probs, y));
    }
    state.SetLabel(mnist ? "mnist" : "synthetic");
}
BENCHMARK(BM_ForwardBackward)->Arg(0)->Arg(1);

void BM_DiscretizeAndMi(benchmark::State& state) {
    const auto width = static_cast<std::size_t>(state.range(0));
    const Matrix tap = random_matrix(3276, width, 4);
    std::vector<std::int64_t> ids(3276);
    std::iota(ids.begin(), ids.end(), 0);
    std::vector<int> y(3276);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(i % 2);
    for (auto _ : state) {
        const auto s = discretize(tap, {30, {-1.0, 1.0}});
        benchmark::DoNotOptimize(mi_with_input(s, ids) + mi_with_labels(s, y));
    }
}
BENCHMARK(BM_DiscretizeAndMi)->Arg(2)->Arg(10);

void BM_SnapshotSynthetic(benchmark::State& state) {
    const Dataset ds = gen_synthetic(1, 2);
    const SplitData train = materialize(ds, Split::Train);
    const Network net = make_net(12, {10, 8, 6, 4, 2}, 2);
    for (auto _ : state) benchmark::DoNotOptimize(layer_mi_snapshot(net, train.view(), BinningPolicy{}, 0, Split::Train));
}
BENCHMARK(BM_SnapshotSynthetic);

}  // namespace
BENCHMARK_MAIN();
