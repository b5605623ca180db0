#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <vector>

#include "ote/errors.hpp"
#include "ote/parallel.hpp"
#include "ote/rng.hpp"
#include "ote/vec.hpp"

using namespace ote;

TEST_CASE("splitmix64 matches the reference sequence from seed 0") {
    std::uint64_t s = 0;
    CHECK(splitmix64(s) == 0xe220a8397b1dcdafULL);
    CHECK(splitmix64(s) == 0x6e789e6aa1b965f4ULL);
    CHECK(splitmix64(s) == 0x06c45d188009454fULL);
}

TEST_CASE("xoshiro stream is stable across runs") {
    Rng r(42);
    CHECK(r.next_u64() == 0x15780b2e0c2ec716ULL);
    CHECK(r.next_u64() == 0x6104d9866d113a7eULL);
    CHECK(r.next_u64() == 0xae17533239e499a1ULL);
    CHECK(r.next_u64() == 0xecb8ad4703b360a1ULL);

    Rng r2(42);
    CHECK(r2.next_real() == 0.08386297105988216);
    CHECK(r2.next_real() == 0.3789802506626686);

    Rng r3(42);
    const std::uint64_t expected[] = {8, 37, 68, 92, 99, 76};
    for (std::uint64_t e : expected) CHECK(r3.next_index(100) == e);
}

TEST_CASE("derive_seed is stable and separates streams") {
    CHECK(derive_seed(0xDEADBEEFULL, "negatives", 3, 5) == 0xef24d709627d3617ULL);
    CHECK(derive_seed(7, "entity-init") == 0x768b56eaa35cbfa3ULL);

    std::set<std::uint64_t> seen;
    for (std::uint64_t root : {0ULL, 1ULL, 42ULL})
        for (const char* name : {"entity-init", "negatives", "batch", "context"})
            for (std::uint64_t salt : {0ULL, 1ULL, 2ULL})
                seen.insert(derive_seed(root, name, salt, 0));
    CHECK(seen.size() == 3 * 4 * 3);
}

TEST_CASE("next_index stays in range and covers small domains") {
    Rng r(123);
    std::vector<int> hits(7, 0);
    for (int i = 0; i < 7000; ++i) {
        const std::uint64_t v = r.next_index(7);
        REQUIRE(v < 7);
        ++hits[static_cast<std::size_t>(v)];
    }
    for (int h : hits) CHECK(h > 7000 / 7 / 2);
}

TEST_CASE("next_uniform and next_normal have sane ranges and moments") {
    Rng r(9);
    double mean = 0, var = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double u = r.next_uniform(-2.0, 3.0);
        REQUIRE(u >= -2.0);
        REQUIRE(u < 3.0);
    }
    for (int i = 0; i < n; ++i) {
        const double z = r.next_normal();
        mean += z;
        var += z * z;
    }
    mean /= n;
    var = var / n - mean * mean;
    CHECK(std::abs(mean) < 0.03);
    CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("vector kernels match hand values") {
    const std::vector<double> a{1.0, -2.0, 3.0};
    const std::vector<double> b{4.0, 0.5, -1.0};
    CHECK(dot(std::span<const double>(a), std::span<const double>(b)) == 0.0);
    CHECK(l2_norm(std::span<const double>(a)) == Catch::Approx(std::sqrt(14.0)));

    // y = M x with M = [[1,2],[3,4]] row-major, x = (1, -1)
    const std::vector<double> m{1, 2, 3, 4};
    const std::vector<double> x{1, -1};
    std::vector<double> y(2);
    matvec(m.data(), x.data(), y.data(), 2);
    CHECK(y[0] == -1.0);
    CHECK(y[1] == -1.0);
    matvec_t(m.data(), x.data(), y.data(), 2);
    CHECK(y[0] == -2.0);
    CHECK(y[1] == -2.0);
}

TEST_CASE("matmul composes row-major matrices") {
    const std::vector<double> a{1, 2, 3, 4};
    const std::vector<double> b{0, 1, 1, 0};
    std::vector<double> c(4);
    matmul(a.data(), b.data(), c.data(), 2);
    CHECK(c == std::vector<double>{2, 1, 4, 3});
}

TEST_CASE("all_finite and max_abs behave") {
    std::vector<double> v{0.0, -5.0, 2.0};
    CHECK(all_finite(std::span<const double>(v)));
    CHECK(max_abs(std::span<const double>(v)) == 5.0);
    v[1] = std::nan("");
    CHECK_FALSE(all_finite(std::span<const double>(v)));
}

TEST_CASE("parallel_for covers every index exactly once at any width") {
    for (int threads : {1, 3, 8}) {
        const std::size_t n = 1237;
        std::vector<std::atomic<int>> hits(n);
        parallel_for(n, threads, [&](std::size_t i) { hits[i].fetch_add(1); });
        for (std::size_t i = 0; i < n; ++i) REQUIRE(hits[i].load() == 1);
    }
}

TEST_CASE("parallel_for propagates worker exceptions") {
    CHECK_THROWS_AS(parallel_for(100, 4,
                                 [&](std::size_t i) {
                                     if (i == 57) throw NumericError("boom");
                                 }),
                    NumericError);
}

TEST_CASE("error taxonomy is distinct") {
    CHECK_THROWS_AS(throw ConfigError("x"), ConfigError);
    CHECK_THROWS_AS(throw DataError("x"), DataError);
    const auto is_runtime = [](const auto& e) {
        return dynamic_cast<const std::runtime_error*>(&e) != nullptr;
    };
    try {
        throw InvariantError("y");
    } catch (const std::exception& e) {
        CHECK(is_runtime(e));
    }
}
