// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "prunegrpo/ovf.hpp"

using namespace prunegrpo;
using namespace prunegrpo::ovf;

namespace {

// Independent long-double population variance.
long double pop_var(const std::vector<double>& v, const std::vector<std::size_t>& idx) {
    long double m = 0;
    for (auto i : idx) m += v[i];
    m /= idx.size();
    long double s = 0;
    for (auto i : idx) s += (v[i] - m) * (v[i] - m);
    return s / idx.size();
}

std::vector<double> random_rewards(RandomStream& rng, std::size_t g, bool duplicates) {
    std::vector<double> v(g);
    for (auto& x : v) {
        x = duplicates ? static_cast<double>(rng.uniform_index(0, 3)) : rng.uniform();
    }
    return v;
}

}  // namespace

TEST_CASE("group_stats") {
    auto s = group_stats(RewardList({1.0, 3.0}));
    CHECK(s.mean == 2.0);
    CHECK(s.std == 1.0);

    s = group_stats(RewardList({0.3, 0.3, 0.3}));
    CHECK(s.mean == 0.3);
    CHECK(s.std == 0.0);

    const std::vector<double> v{0.0, 0.9, 1.1, 2.0};
    s = group_stats(RewardList(v));
    CHECK(s.mean == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(s.std == doctest::Approx(static_cast<double>(std::sqrt(pop_var(v, {0, 1, 2, 3})))).epsilon(1e-14));
    CHECK(s.std == doctest::Approx(0.71063).epsilon(1e-5));

    CHECK_THROWS_WITH(group_stats(std::span<const double>{}), "empty group");
    CHECK_THROWS_WITH(RewardList(std::vector<double>{}), "empty group");
}

TEST_CASE("reward list invariants") {
    CHECK_THROWS(RewardList({1.0, 2.0}, {0}));
    CHECK_THROWS(RewardList({1.0, 2.0}, {3, 3}));
    RewardList r({1.0, 2.0}, {7, 4});
    CHECK(r.source_indices()[0] == 7);
}

TEST_CASE("ovf_select examples") {
    auto a = ovf_select(RewardList({0, 5, 5, 5, 10}), 2);
    CHECK(a.kept == std::vector<std::size_t>{0, 4});
    CHECK(a.variance == 25.0);

    auto b = ovf_select(RewardList({1, 2, 3, 4}), 3);
    CHECK(b.kept == std::vector<std::size_t>{0, 2, 3});
    CHECK(b.variance == doctest::Approx(14.0 / 9.0).epsilon(1e-15));
    // {1,2,4} ties with {1,3,4}; the oracle agrees on the value.
    CHECK(static_cast<double>(pop_var({1, 2, 3, 4}, {0, 1, 3})) == doctest::Approx(b.variance));

    auto c = ovf_select(RewardList({7, 7, 7}), 2);
    CHECK(c.kept == std::vector<std::size_t>{0, 1});
    CHECK(c.variance == 0.0);

    // Source indices decide ties, not positions.
    auto d = ovf_select(RewardList({7, 7, 7}, {9, 2, 5}), 2);
    CHECK(d.kept == std::vector<std::size_t>{1, 2});

    CHECK_THROWS_WITH(ovf_select(RewardList({1, 2}), 3), "subset larger than group");
    CHECK_THROWS_WITH(ovf_select(RewardList({1, 2}), 0), "empty selection");
    CHECK(ovf_select(RewardList({4, 1, 3}), 3).kept == std::vector<std::size_t>{0, 1, 2});
    CHECK(ovf_select(RewardList({4, 1, 3}), 1).variance == 0.0);
}

TEST_CASE("ovf_brute_force examples") {
    CHECK(ovf_brute_force(RewardList({0, 5, 5, 5, 10}), 2).variance == 25.0);
    auto b = ovf_brute_force(RewardList({1, 2}), 2);
    CHECK(b.kept == std::vector<std::size_t>{0, 1});
    CHECK(b.variance == 0.25);
    auto c = ovf_brute_force(RewardList({1, 2, 3, 4}), 3);
    CHECK(c.variance == doctest::Approx(14.0 / 9.0).epsilon(1e-15));
    CHECK(c.kept == std::vector<std::size_t>{0, 1, 3});
    CHECK_THROWS_WITH(ovf_brute_force(RewardList(std::vector<double>(21, 1.0)), 2), "instance too large for oracle");
}

TEST_CASE("ovf matches the oracle on random instances") {
    RandomStream rng(2024);
    for (int trial = 0; trial < 400; ++trial) {
        const std::size_t g = rng.uniform_index(4, 12);
        const std::size_t k = rng.uniform_index(1, g - 1);
        const auto v = random_rewards(rng, g, trial % 2 == 1);
        const RewardList list(v);
        const auto fast = ovf_select(list, k);
        const auto slow = ovf_brute_force(list, k);
        REQUIRE(fast.kept.size() == k);
        CHECK(std::is_sorted(fast.kept.begin(), fast.kept.end()));
        const double tol = 1e-12 * std::max(slow.variance, 1e-300);
        CHECK(std::abs(fast.variance - slow.variance) <= tol);
        CHECK(std::abs(fast.variance - static_cast<double>(pop_var(v, fast.kept))) <= 1e-13);
    }
}

TEST_CASE("ovf is affine invariant and dominates uniform subsampling") {
    RandomStream rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t g = rng.uniform_index(3, 16);
        const std::size_t k = rng.uniform_index(1, g);
        auto v = random_rewards(rng, g, false);
        const auto base = ovf_select(RewardList(v), k);
        std::vector<double> w(v);
        for (auto& x : w) x = 2.5 * x - 3.0;
        const auto moved = ovf_select(RewardList(w), k);
        CHECK(moved.kept == base.kept);
        CHECK(moved.variance == doctest::Approx(6.25 * base.variance).epsilon(1e-10));
        RandomStream sub(static_cast<std::uint64_t>(trial));
        CHECK(uniform_subsample(RewardList(v), k, sub).variance <= base.variance + 1e-15);
    }
}

TEST_CASE("uniform_subsample") {
    const RewardList ten({0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
    RandomStream r1(11), r2(11);
    const auto a = uniform_subsample(ten, 3, r1);
    const auto b = uniform_subsample(ten, 3, r2);
    CHECK(a.kept == b.kept);
    CHECK(a.kept.size() == 3);
    RandomStream r3(5);
    CHECK(uniform_subsample(ten, 10, r3).kept.size() == 10);
    CHECK_THROWS_WITH(uniform_subsample(ten, 11, r3), "subset larger than group");
    CHECK_THROWS_WITH(uniform_subsample(ten, 0, r3), "empty selection");

    // Inclusion frequencies are uniform: each index appears k/G of the time.
    std::vector<int> hits(10, 0);
    RandomStream r4(99);
    const int draws = 20000;
    for (int i = 0; i < draws; ++i) {
        for (auto p : uniform_subsample(ten, 3, r4).kept) ++hits[p];
    }
    const double expect = draws * 0.3;
    const double sd = std::sqrt(draws * 0.3 * 0.7);
    for (int h : hits) CHECK(std::abs(h - expect) < 4.0 * sd);
}

TEST_CASE("uniform subsample variance versus the full group") {
    // Population convention: E[var_k] / E[var_G] = (k-1) G / (k (G-1)).
    const std::size_t g = 24, k = 12;
    RandomStream rng(123);
    double sum_sub = 0, sum_full = 0;
    const int draws = 100000;
    std::vector<double> v(g);
    for (int i = 0; i < draws; ++i) {
        rng.fill_normal(v);
        const RewardList list(v);
        sum_sub += uniform_subsample(list, k, rng).variance;
        const double s = group_stats(list).std;
        sum_full += s * s;
    }
    const double ratio = sum_sub / sum_full;
    const double analytic = (k - 1.0) * g / (k * (g - 1.0));
    CHECK(ratio == doctest::Approx(analytic).epsilon(0.01));
    // Bessel-corrected, the two expectations agree.
    const double corrected = ratio * (k / (k - 1.0)) / (g / (g - 1.0));
    CHECK(std::abs(corrected - 1.0) < 0.02);
}

TEST_CASE("clustered_indices") {
    const RewardList v({0.0, 0.9, 1.1, 2.0});
    CHECK(clustered_indices(v, 0.5) == std::vector<std::size_t>{1, 2});
    CHECK(clustered_fraction(v, 0.5) == 0.5);
    CHECK(clustered_indices(RewardList({2, 2, 2}), 0.01).size() == 3);

    RandomStream rng(31);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<double> r(rng.uniform_index(2, 30));
        rng.fill_normal(r);
        const RewardList list(r);
        const auto small = clustered_indices(list, 0.3);
        const auto big = clustered_indices(list, 0.8);
        CHECK(std::includes(big.begin(), big.end(), small.begin(), small.end()));
        const auto st = group_stats(list);
        for (auto i : small) {
            CHECK(std::abs(r[i] - st.mean) / (st.std + 1e-4) <= 0.3);
        }
    }
}

TEST_CASE("clustered fraction of standard normal rewards") {
    RandomStream rng(5);
    std::vector<double> r(100000);
    rng.fill_normal(r);
    const double analytic = std::erf(0.5 / std::sqrt(2.0));  // 2 Phi(0.5) - 1
    CHECK(clustered_fraction(RewardList(r), 0.5) == doctest::Approx(analytic).epsilon(0.02));
}
