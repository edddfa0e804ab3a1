#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "sclab/dataset.hpp"

using namespace sclab;

namespace {

std::size_t count_bc(const SCDataset& ds) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) n += ds.bias_conflicting(i) ? 1 : 0;
    return n;
}

// Plug-in mutual information (nats) of the empirical (y, b) joint.
double plugin_mutual_information(const SCDataset& ds) {
    double joint[2][2] = {};
    for (std::size_t i = 0; i < ds.size(); ++i) {
        joint[ds.labels_y[i]][ds.labels_b[i]] += 1.0;
    }
    const double n = static_cast<double>(ds.size());
    double py[2] = {}, pb[2] = {};
    for (int y = 0; y < 2; ++y) {
        for (int b = 0; b < 2; ++b) {
            joint[y][b] /= n;
            py[y] += joint[y][b];
            pb[b] += joint[y][b];
        }
    }
    double mi = 0.0;
    for (int y = 0; y < 2; ++y) {
        for (int b = 0; b < 2; ++b) {
            if (joint[y][b] > 0.0) mi += joint[y][b] * std::log(joint[y][b] / (py[y] * pb[b]));
        }
    }
    return mi;
}

// Pearson chi-square statistic for independence of (y, b), 1 dof.
double chi_square_stat(const SCDataset& ds) {
    double obs[2][2] = {};
    for (std::size_t i = 0; i < ds.size(); ++i) obs[ds.labels_y[i]][ds.labels_b[i]] += 1.0;
    const double n = static_cast<double>(ds.size());
    double ry[2] = {obs[0][0] + obs[0][1], obs[1][0] + obs[1][1]};
    double cb[2] = {obs[0][0] + obs[1][0], obs[0][1] + obs[1][1]};
    double stat = 0.0;
    for (int y = 0; y < 2; ++y) {
        for (int b = 0; b < 2; ++b) {
            const double expct = ry[y] * cb[b] / n;
            stat += (obs[y][b] - expct) * (obs[y][b] - expct) / expct;
        }
    }
    return stat;
}

int parity_over_mask(const SCDataset& ds, std::size_t row, const std::vector<std::size_t>& mask) {
    int p = 0;
    for (std::size_t j : mask) {
        if (ds.inputs(row, j) > 0.5) p ^= 1;
    }
    return p;
}

} // namespace

TEST_CASE("parity of the all-zero pattern is 0") {
    const std::vector<double> zeros(16, 0.0);
    REQUIRE(parity_of(zeros) == 0);
}

TEST_CASE("parity dataset has exact bias-conflicting counts") {
    ParityConfig cfg;
    cfg.core_bits = 16;
    cfg.spurious_bits = 4;
    cfg.noise_bits = 12;
    cfg.n_samples = 10000;
    cfg.rho = 0.1;
    Rng rng(123);
    const auto ds = gen_parity(cfg, rng);
    REQUIRE(ds.size() == 10000);
    REQUIRE(ds.dim() == 32);
    REQUIRE(count_bc(ds) == 1000);
}

TEST_CASE("labels are the parities of their masked columns") {
    ParityConfig cfg;
    cfg.n_samples = 500;
    cfg.rho = 0.2;
    Rng rng(7);
    const auto ds = gen_parity(cfg, rng);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        REQUIRE(parity_over_mask(ds, i, ds.core_mask) == ds.labels_y[i]);
        REQUIRE(parity_over_mask(ds, i, ds.spurious_mask) == ds.labels_b[i]);
    }
}

TEST_CASE("masks partition the input columns") {
    ParityConfig cfg;
    Rng rng(3);
    cfg.n_samples = 10;
    const auto ds = gen_parity(cfg, rng);
    std::set<std::size_t> all;
    for (std::size_t j : ds.core_mask) all.insert(j);
    for (std::size_t j : ds.spurious_mask) all.insert(j);
    for (std::size_t j : ds.noise_mask) all.insert(j);
    REQUIRE(all.size() == ds.dim());
    REQUIRE(*all.rbegin() == ds.dim() - 1);
}

TEST_CASE("empirical mutual information matches the closed form at rho=0.1") {
    ParityConfig cfg;
    cfg.n_samples = 10000;
    cfg.rho = 0.1;
    Rng rng(2024);
    const auto ds = gen_parity(cfg, rng);
    // Closed form for balanced y and disagreement rate rho:
    // MI = log 2 - H_b(rho).
    const double rho = 0.1;
    const double hb = -rho * std::log(rho) - (1.0 - rho) * std::log(1.0 - rho);
    const double expected = std::log(2.0) - hb;
    REQUIRE(std::abs(plugin_mutual_information(ds) - expected) < 0.01);
}

TEST_CASE("y and b are empirically independent at rho=0.5") {
    // 0.99 critical value of chi-square with 1 dof.
    const double critical = 6.635;
    int passes = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        ParityConfig cfg;
        cfg.n_samples = 10000;
        cfg.rho = 0.5;
        Rng rng(seed);
        const auto ds = gen_parity(cfg, rng);
        if (chi_square_stat(ds) < critical) ++passes;
    }
    REQUIRE(passes >= 8);
}

TEST_CASE("regeneration with the same seed is bit-identical") {
    ParityConfig cfg;
    cfg.n_samples = 300;
    Rng a(55), b(55);
    const auto d1 = gen_parity(cfg, a);
    const auto d2 = gen_parity(cfg, b);
    REQUIRE(d1.inputs == d2.inputs);
    REQUIRE(d1.labels_y == d2.labels_y);
    REQUIRE(d1.labels_b == d2.labels_b);

    MoonStarConfig mcfg;
    mcfg.n_samples = 50;
    Rng c(55), d(55);
    const auto m1 = gen_moon_star(mcfg, c);
    const auto m2 = gen_moon_star(mcfg, d);
    REQUIRE(m1.inputs == m2.inputs);
}

TEST_CASE("y depends only on core columns and b only on spurious columns") {
    ParityConfig cfg;
    cfg.n_samples = 100;
    Rng rng(9);
    auto ds = gen_parity(cfg, rng);
    for (std::size_t i = 0; i < 20; ++i) {
        // Flipping noise bits changes neither derived label.
        for (std::size_t j : ds.noise_mask) ds.inputs(i, j) = 1.0 - ds.inputs(i, j);
        REQUIRE(parity_over_mask(ds, i, ds.core_mask) == ds.labels_y[i]);
        REQUIRE(parity_over_mask(ds, i, ds.spurious_mask) == ds.labels_b[i]);
        // Flipping one core bit flips the derived y only.
        ds.inputs(i, ds.core_mask[0]) = 1.0 - ds.inputs(i, ds.core_mask[0]);
        REQUIRE(parity_over_mask(ds, i, ds.core_mask) == 1 - ds.labels_y[i]);
        REQUIRE(parity_over_mask(ds, i, ds.spurious_mask) == ds.labels_b[i]);
    }
}

TEST_CASE("invalid parity configs are rejected") {
    ParityConfig cfg;
    cfg.core_bits = 0;
    Rng rng(1);
    REQUIRE_THROWS_AS(gen_parity(cfg, rng), std::invalid_argument);
    cfg.core_bits = 4;
    cfg.spurious_bits = 4; // must be strictly simpler
    REQUIRE_THROWS_AS(gen_parity(cfg, rng), std::invalid_argument);
}

TEST_CASE("moon-star groups are equal within one at rho=0.5") {
    MoonStarConfig cfg;
    cfg.n_samples = 2001;
    cfg.rho = 0.5;
    Rng rng(31);
    const auto ds = gen_moon_star(cfg, rng);
    const auto groups = group_indices(ds);
    REQUIRE(groups.size() == 4);
    std::size_t lo = ds.size(), hi = 0;
    for (const auto& [key, idx] : groups) {
        lo = std::min(lo, idx.size());
        hi = std::max(hi, idx.size());
    }
    REQUIRE(hi - lo <= 1);
}

TEST_CASE("rho=0 places every object in its home quadrant pair") {
    MoonStarConfig cfg;
    cfg.n_samples = 400;
    cfg.rho = 0.0;
    Rng rng(13);
    const auto ds = gen_moon_star(cfg, rng);
    for (std::size_t i = 0; i < ds.size(); ++i) REQUIRE(ds.labels_y[i] == ds.labels_b[i]);
    const auto groups = group_indices(ds);
    for (const auto& [key, idx] : groups) REQUIRE_FALSE(key.second);
}

TEST_CASE("moon and star pixel counts stay within 20 percent") {
    MoonStarConfig cfg;
    cfg.n_samples = 1000;
    cfg.rho = 0.5;
    Rng rng(77);
    const auto ds = gen_moon_star(cfg, rng);
    double sums[2] = {};
    std::size_t counts[2] = {};
    for (std::size_t i = 0; i < ds.size(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < ds.dim(); ++j) s += ds.inputs(i, j);
        sums[ds.labels_y[i]] += s;
        ++counts[ds.labels_y[i]];
        REQUIRE(s > 0.0); // every render produced some pixels
    }
    const double moon = sums[0] / static_cast<double>(counts[0]);
    const double star = sums[1] / static_cast<double>(counts[1]);
    REQUIRE(std::abs(moon - star) / std::max(moon, star) < 0.2);
}

TEST_CASE("objects stay inside the quadrant assigned by the bias label") {
    MoonStarConfig cfg;
    cfg.image_side = 28;
    cfg.n_samples = 200;
    cfg.rho = 0.3;
    Rng rng(5);
    const auto ds = gen_moon_star(cfg, rng);
    const std::size_t side = cfg.image_side, half = side / 2;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        // Find the quadrant of every lit pixel; all must agree, and the
        // quadrant pair must match b: {NE, SW} -> 0, {NW, SE} -> 1.
        int seen_pair = -1;
        for (std::size_t r = 0; r < side; ++r) {
            for (std::size_t c = 0; c < side; ++c) {
                if (ds.inputs(i, r * side + c) == 0.0) continue;
                const bool top = r < half, left = c < half;
                const int pair = ((top && !left) || (!top && left)) ? 0 : 1; // NE or SW
                if (seen_pair == -1) seen_pair = pair;
                REQUIRE(seen_pair == pair);
            }
        }
        REQUIRE(seen_pair == ds.labels_b[i]);
    }
}

TEST_CASE("moon-star rejects images too small to render") {
    MoonStarConfig cfg;
    cfg.image_side = 8;
    Rng rng(1);
    REQUIRE_THROWS_AS(gen_moon_star(cfg, rng), std::invalid_argument);
}

TEST_CASE("group_indices partitions all rows") {
    ParityConfig cfg;
    cfg.n_samples = 1000;
    cfg.rho = 0.1;
    Rng rng(88);
    const auto ds = gen_parity(cfg, rng);
    const auto groups = group_indices(ds);
    std::set<std::size_t> seen;
    std::size_t total = 0, bc_total = 0;
    for (const auto& [key, idx] : groups) {
        total += idx.size();
        if (key.second) bc_total += idx.size();
        for (std::size_t i : idx) REQUIRE(seen.insert(i).second);
    }
    REQUIRE(total == ds.size());
    REQUIRE(bc_total == 100);

    // rho = 0 leaves no BC groups.
    ParityConfig zero = cfg;
    zero.rho = 0.0;
    Rng rng2(88);
    const auto ds0 = gen_parity(zero, rng2);
    for (const auto& [key, idx] : group_indices(ds0)) REQUIRE_FALSE(key.second);
}
