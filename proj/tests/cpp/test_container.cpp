#include "doctest.h"

#include <cstdio>
#include <fstream>

#include "beamgraph/container.hpp"
#include "beamgraph/rng.hpp"

using namespace beamgraph;

TEST_CASE("container: full round trip of every dtype plus metadata") {
    TensorContainer c;
    Rng rng(1);
    std::vector<double> f64(30);
    for (auto& v : f64) v = rng.gaussian();
    std::vector<float> f32(12);
    for (auto& v : f32) v = static_cast<float>(rng.gaussian());
    std::vector<int64_t> i64 = {1, -2, 3000000000LL};
    std::vector<float> c64(16);
    for (auto& v : c64) v = static_cast<float>(rng.gaussian());

    c.add_f64("alpha", {5, 6}, f64);
    c.add_f32("beta", {3, 4}, f32);
    c.add_i64("gamma", {3}, i64);
    c.add_c64("delta", {2, 4}, c64);
    c.meta_str["note"] = "hello";
    c.meta_int["count"] = 42;
    c.meta_float["ratio"] = 0.25;

    const std::string path = "/tmp/bg_container_test.bgtc";
    c.save(path);
    auto back = TensorContainer::load(path);

    CHECK(back.get_f64("alpha") == f64);
    CHECK(back.get_f32("beta") == f32);
    CHECK(back.get_i64("gamma") == i64);
    CHECK(back.get_c64("delta") == c64);
    CHECK(back.shape("alpha") == std::vector<int64_t>{5, 6});
    CHECK(back.meta_str["note"] == "hello");
    CHECK(back.meta_int["count"] == 42);
    CHECK(back.meta_float["ratio"] == 0.25);
    CHECK(back.names() == std::vector<std::string>{"alpha", "beta", "gamma", "delta"});
}

TEST_CASE("container: save is byte-deterministic") {
    auto build = [] {
        TensorContainer c;
        c.add_f64("x", {4}, {1.0, 2.0, 3.0, 4.0});
        c.meta_int["seed"] = 7;
        return c;
    };
    build().save("/tmp/bg_det_a.bgtc");
    build().save("/tmp/bg_det_b.bgtc");
    std::ifstream fa("/tmp/bg_det_a.bgtc", std::ios::binary);
    std::ifstream fb("/tmp/bg_det_b.bgtc", std::ios::binary);
    std::string a((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string b((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(a == b);
}

TEST_CASE("container: corrupted magic rejected") {
    TensorContainer c;
    c.add_f64("x", {2}, {1.0, 2.0});
    const std::string path = "/tmp/bg_badmagic.bgtc";
    c.save(path);
    {
        std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(0);
        f.write("NOPE", 4);
    }
    CHECK_THROWS_AS(TensorContainer::load(path), std::invalid_argument);
}

TEST_CASE("container: truncated payload rejected") {
    TensorContainer c;
    c.add_f64("x", {64}, std::vector<double>(64, 1.5));
    const std::string path = "/tmp/bg_trunc.bgtc";
    c.save(path);
    std::string data;
    {
        std::ifstream f(path, std::ios::binary);
        data.assign((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    }
    {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        f.write(data.data(), static_cast<std::streamsize>(data.size() - 64));
    }
    CHECK_THROWS_AS(TensorContainer::load(path), std::invalid_argument);
}

TEST_CASE("container: unknown dtype rejected") {
    TensorContainer c;
    c.add_f64("x", {2}, {1.0, 2.0});
    const std::string path = "/tmp/bg_dtype.bgtc";
    c.save(path);
    std::string data;
    {
        std::ifstream f(path, std::ios::binary);
        data.assign((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    }
    const auto pos = data.find("f64");
    REQUIRE(pos != std::string::npos);
    data.replace(pos, 3, "f16");
    {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        f.write(data.data(), static_cast<std::streamsize>(data.size()));
    }
    CHECK_THROWS_AS(TensorContainer::load(path), std::invalid_argument);
}

TEST_CASE("container: shape/data mismatch rejected at add time") {
    TensorContainer c;
    CHECK_THROWS_AS(c.add_f64("x", {3}, {1.0, 2.0}), std::invalid_argument);
    CHECK_THROWS_AS(c.add_c64("y", {3}, {1.0f, 2.0f}), std::invalid_argument);
}
