#include <doctest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "dsr/tensor_io.hpp"

using namespace dsr;

TEST_CASE("dsrt round trip preserves shape and bits") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> z;
    for (int trial = 0; trial < 20; ++trial) {
        Shape s;
        const std::size_t rank = 1 + trial % 5;
        for (std::size_t r = 0; r < rank; ++r) s.push_back(1 + rng() % 4);
        Tensor<double> t(s);
        for (auto& v : t.data()) v = z(rng);
        std::stringstream buf;
        write_dsrt(buf, t);
        auto back = std::get<Tensor<double>>(read_dsrt_any(buf));
        CHECK(back == t);

        Tensor<float> f = t.cast<float>();
        std::stringstream fbuf;
        write_dsrt(fbuf, f);
        CHECK(std::get<Tensor<float>>(read_dsrt_any(fbuf)) == f);
    }
}

TEST_CASE("dsrt file io and dtype conversion") {
    const auto dir = std::filesystem::temp_directory_path() / "dsr_test_tensor_io";
    std::filesystem::create_directories(dir);
    Tensor<float> t({2, 3}, {1, 2, 3, 4, 5, 6});
    write_dsrt(dir / "a.dsrt", t);
    CHECK(read_dsrt<float>(dir / "a.dsrt") == t);
    const Tensor<double> d = read_dsrt<double>(dir / "a.dsrt");
    CHECK(d.shape() == Shape{2, 3});
    CHECK(d[5] == 6.0);
}

TEST_CASE("missing and corrupt files") {
    CHECK_THROWS_AS(read_dsrt<float>("/nonexistent/dir/x.dsrt"), MissingArtifactError);
    std::stringstream bad("NOPE....");
    CHECK_THROWS_AS(read_dsrt_any(bad), IoError);
}
