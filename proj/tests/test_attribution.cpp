#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sclab/attribution.hpp"
#include "sclab/dataset.hpp"

using namespace sclab;

namespace {

// Bias-free XOR tree over the first `bits` input columns (bits must be a
// power of two >= 4). Each level carries its xor values as ReLU pairs
// h = ((a-b)+, (b-a)+) with xor = h0 + h1; the next layer's weights form the
// sums. The head emits logit1 = 2*xor and logit0 = u + v - |u - v| for the
// final halves u, v, so on binary inputs argmax (ties to 0) is exact parity.
FCN xor_tree(std::size_t bits, std::size_t total_inputs) {
    FCN f;
    f.widths.push_back(total_inputs);
    std::vector<Matrix> layers;

    std::size_t pairs = bits / 2;
    Matrix first(2 * pairs, total_inputs);
    for (std::size_t p = 0; p < pairs; ++p) {
        first(2 * p, 2 * p) = 1.0;
        first(2 * p, 2 * p + 1) = -1.0;
        first(2 * p + 1, 2 * p) = -1.0;
        first(2 * p + 1, 2 * p + 1) = 1.0;
    }
    layers.push_back(first);
    f.widths.push_back(2 * pairs);

    while (pairs > 2) {
        const std::size_t next_pairs = pairs / 2;
        Matrix w(2 * next_pairs, 2 * pairs);
        for (std::size_t p = 0; p < next_pairs; ++p) {
            // xor_{2p} = h_{4p} + h_{4p+1}, xor_{2p+1} = h_{4p+2} + h_{4p+3}
            for (int s : {0, 1}) {
                const double sign = s == 0 ? 1.0 : -1.0;
                w(2 * p + s, 4 * p) = sign;
                w(2 * p + s, 4 * p + 1) = sign;
                w(2 * p + s, 4 * p + 2) = -sign;
                w(2 * p + s, 4 * p + 3) = -sign;
            }
        }
        layers.push_back(w);
        f.widths.push_back(2 * next_pairs);
        pairs = next_pairs;
    }

    // Final hidden layer: previous holds u = h0+h1, v = h2+h3. Emit
    // (u-v)+, (v-u)+, u, v (u, v >= 0, so ReLU passthrough is exact).
    Matrix mix(4, 4);
    mix(0, 0) = 1.0;
    mix(0, 1) = 1.0;
    mix(0, 2) = -1.0;
    mix(0, 3) = -1.0;
    mix(1, 0) = -1.0;
    mix(1, 1) = -1.0;
    mix(1, 2) = 1.0;
    mix(1, 3) = 1.0;
    mix(2, 0) = 1.0;
    mix(2, 1) = 1.0;
    mix(3, 2) = 1.0;
    mix(3, 3) = 1.0;
    layers.push_back(mix);
    f.widths.push_back(4);

    Matrix head(2, 4);
    head(1, 0) = 2.0;
    head(1, 1) = 2.0;
    head(0, 0) = -1.0;
    head(0, 1) = -1.0;
    head(0, 2) = 1.0;
    head(0, 3) = 1.0;
    layers.push_back(head);
    f.widths.push_back(2);
    f.weights = layers;
    return f;
}

} // namespace

TEST_CASE("linear model attribution is exact for any step count") {
    FCN f;
    f.widths = {3, 2};
    Matrix w(2, 3, {1.0, -2.0, 0.5, 0.25, 1.5, -1.0});
    f.weights.push_back(w);
    const std::vector<double> x = {0.8, -0.4, 1.2};
    const std::vector<double> baseline(3, 0.0);
    for (const std::size_t m : {1UL, 4UL, 33UL}) {
        const auto map = integrated_gradients(f, x, baseline, 1, m);
        for (std::size_t i = 0; i < 3; ++i) {
            REQUIRE(map.values[i] == Catch::Approx(w(1, i) * x[i]).margin(1e-14));
        }
    }
}

TEST_CASE("attribution at the baseline is zero") {
    Rng rng(5);
    const FCN f = init_fcn({4, 8, 2}, rng);
    const std::vector<double> x = {0.3, 0.3, 0.3, 0.3};
    const auto map = integrated_gradients(f, x, x, 0, 16);
    for (double v : map.values) REQUIRE(v == 0.0);
}

TEST_CASE("completeness holds within 1e-3 at m=256 on random ReLU nets") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed);
        const FCN f = init_fcn({6, 16, 16, 3}, rng);
        std::vector<double> x(6), baseline(6, 0.0);
        for (double& v : x) v = rng.uniform(-1.0, 1.0);
        const int target = static_cast<int>(rng.below(3));
        const auto map = integrated_gradients(f, x, baseline, target, 256);
        double total = 0.0;
        for (double v : map.values) total += v;
        Matrix xm(1, 6, std::vector<double>(x.begin(), x.end()));
        Matrix bm(1, 6, std::vector<double>(baseline.begin(), baseline.end()));
        const double expected = logits_only(f, xm)(0, static_cast<std::size_t>(target)) -
                                logits_only(f, bm)(0, static_cast<std::size_t>(target));
        REQUIRE(std::abs(total - expected) < 1e-3);
    }
}

TEST_CASE("doubling the step count only nudges converged attributions") {
    Rng rng(9);
    const FCN f = init_fcn({5, 12, 12, 2}, rng);
    std::vector<double> x(5), baseline(5, 0.0);
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    const auto coarse = integrated_gradients(f, x, baseline, 0, 256);
    const auto fine = integrated_gradients(f, x, baseline, 0, 512);
    for (std::size_t i = 0; i < x.size(); ++i) {
        REQUIRE(std::abs(coarse.values[i] - fine.values[i]) < 1e-2);
    }
}

TEST_CASE("shares land on the masked blocks") {
    AttributionMap map;
    map.values = {0.5, 0.5, 0.0, 0.0};
    const std::vector<std::size_t> core = {0, 1}, spur = {2}, noise = {3};
    const auto s = attribution_shares(map, core, spur, noise);
    REQUIRE(s.core == 1.0);
    REQUIRE(s.spurious == 0.0);
    REQUIRE(s.noise == 0.0);
}

TEST_CASE("uniform attribution splits by mask proportions") {
    AttributionMap map;
    map.values.assign(32, 1.0); // C=16, S=4, N=12
    std::vector<std::size_t> core, spur, noise;
    for (std::size_t i = 0; i < 16; ++i) core.push_back(i);
    for (std::size_t i = 16; i < 20; ++i) spur.push_back(i);
    for (std::size_t i = 20; i < 32; ++i) noise.push_back(i);
    const auto s = attribution_shares(map, core, spur, noise);
    REQUIRE(s.core == Catch::Approx(0.5).margin(1e-15));
    REQUIRE(s.spurious == Catch::Approx(0.125).margin(1e-15));
    REQUIRE(s.noise == Catch::Approx(0.375).margin(1e-15));
    REQUIRE(s.core + s.spurious + s.noise == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("all-zero attribution is rejected") {
    AttributionMap map;
    map.values.assign(4, 0.0);
    const std::vector<std::size_t> core = {0, 1}, spur = {2}, noise = {3};
    REQUIRE_THROWS_AS(attribution_shares(map, core, spur, noise), std::invalid_argument);
    REQUIRE_THROWS_AS(attribution_entropy(map), std::invalid_argument);
}

TEST_CASE("hand-built parity network attributes to core bits") {
    ParityConfig cfg;
    cfg.core_bits = 8;
    cfg.spurious_bits = 2;
    cfg.noise_bits = 6;
    cfg.n_samples = 200;
    cfg.rho = 0.5;
    Rng rng(11);
    const auto ds = gen_parity(cfg, rng);
    const FCN f = xor_tree(cfg.core_bits, ds.dim());

    // The construction really does compute parity of the core bits.
    const auto preds = predict(f, ds.inputs);
    for (std::size_t i = 0; i < ds.size(); ++i) REQUIRE(preds[i] == ds.labels_y[i]);

    const std::vector<double> baseline(ds.dim(), 0.0);
    double core_share = 0.0;
    std::size_t counted = 0;
    for (std::size_t i = 0; i < 20; ++i) {
        const auto map = integrated_gradients(f, {ds.inputs.row(i), ds.dim()}, baseline,
                                              ds.labels_y[i], 64);
        double total = 0.0;
        for (double v : map.values) total += std::abs(v);
        if (total <= 0.0) continue;
        const auto s = attribution_shares(map, ds.core_mask, ds.spurious_mask, ds.noise_mask);
        core_share += s.core;
        ++counted;
    }
    REQUIRE(counted > 0);
    REQUIRE(core_share / static_cast<double>(counted) > 0.9);
}

TEST_CASE("entropy hand cases") {
    AttributionMap onehot;
    onehot.values = {0.0, 0.0, 2.5, 0.0};
    REQUIRE(attribution_entropy(onehot) == 0.0);

    AttributionMap uniform;
    uniform.values.assign(32, -0.25); // sign must not matter
    REQUIRE(attribution_entropy(uniform) == Catch::Approx(std::log(32.0)).margin(1e-12));
}

TEST_CASE("entropy is bounded by log d with equality only at uniform") {
    Rng rng(13);
    for (int rep = 0; rep < 50; ++rep) {
        AttributionMap map;
        map.values.resize(16);
        for (double& v : map.values) v = rng.uniform(-1.0, 1.0);
        const double h = attribution_entropy(map);
        REQUIRE(h <= std::log(16.0) + 1e-12);
    }
}
