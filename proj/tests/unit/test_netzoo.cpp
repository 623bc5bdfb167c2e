#include <doctest.h>

#include <filesystem>
#include <random>

#include "dsr/json_util.hpp"
#include "dsr/netzoo.hpp"

using namespace dsr;

namespace {

Tensor<float> randn(Shape s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> z;
    Tensor<float> t(std::move(s));
    for (auto& v : t.data()) v = z(rng);
    return t;
}

UNet3dSpec small_unet() {
    UNet3dSpec s;
    s.patch_exponent = 3;
    s.depth = 2;
    s.base_channels = 4;
    return s;
}

}  // namespace

TEST_CASE("mlp parameter layout and count") {
    MlpSpec s;
    s.input_dim = 5;
    s.hidden = {7, 4};
    const auto m = build_mlp<double>(s, 1);
    // embed 5->1, hidden 1->7, 7->4, head 4->1
    CHECK(m.count() == 5 + 1 + 7 + 7 + 28 + 4 + 4 + 1);
    CHECK(m.get("embed.weight").value.shape() == Shape{5, 1});
    CHECK(m.final_layer_names() == std::vector<std::string>{"head.weight", "head.bias"});
    const auto y = forward(m, randn({9, 5}, 2).cast<double>());
    CHECK(y.shape() == Shape{9, 1});
}

TEST_CASE("initialization is seeded") {
    const auto a = build_mlp<float>(MlpSpec{}, 4), b = build_mlp<float>(MlpSpec{}, 4), c = build_mlp<float>(MlpSpec{}, 5);
    CHECK(a.params[2].value == b.params[2].value);
    CHECK_FALSE(a.params[2].value == c.params[2].value);
}

TEST_CASE("u-net preserves the patch shape, batched and unbatched") {
    const auto net = build_unet3d<float>(small_unet(), 3);
    const auto x = randn({2, 3, 8, 8, 8}, 4);
    const auto y = forward(net, x);
    CHECK(y.shape() == x.shape());
    const auto one = forward(net, randn({3, 8, 8, 8}, 5));
    CHECK(one.shape() == Shape{3, 8, 8, 8});
    CHECK(y.all_finite());
    CHECK_THROWS_AS(forward(net, randn({2, 3, 6, 6, 6}, 4)), DimensionError);
}

TEST_CASE("u-net spec validation") {
    UNet3dSpec s = small_unet();
    s.depth = 4;
    CHECK_THROWS_AS(build_unet3d<float>(s, 1), ConfigError);
    s = small_unet();
    s.kernel = 2;
    CHECK_THROWS_AS(build_unet3d<float>(s, 1), ConfigError);
    CHECK_THROWS_AS(unet_spec_from_json(json{{"depht", 2}}), ConfigError);
    CHECK_THROWS_AS(arch_from_json("transformer", json::object()), ConfigError);
}

TEST_CASE("final-layer replacement freezes everything else") {
    const auto net = build_unet3d<float>(small_unet(), 6);
    const auto lp = replace_final_layer(net, 99);
    const auto finals = net.final_layer_names();
    for (std::size_t i = 0; i < net.params.size(); ++i) {
        const bool is_final = std::find(finals.begin(), finals.end(), net.params[i].name) != finals.end();
        CHECK(lp.params[i].trainable == is_final);
        if (!is_final) CHECK(lp.params[i].value == net.params[i].value);
        if (is_final && net.params[i].name == "final.weight") CHECK_FALSE(lp.params[i].value == net.params[i].value);
    }
    CHECK(lp.trainable_tensors() == 2);
    CHECK(set_trainable(lp, TrainablePolicy::all).trainable_tensors() == lp.params.size());
}

TEST_CASE("extract_beta normalizes by the first weight") {
    auto m = build_mlp<double>(MlpSpec{}, 2);
    auto& w = m.get("embed.weight").value;
    w[0] = 2.0;
    w[1] = 2.4;
    w[2] = 3.0;
    const auto b = extract_beta(m);
    CHECK(b[0] == 1.0);
    CHECK(b[1] == doctest::Approx(1.2));
    CHECK(b[2] == doctest::Approx(1.5));
    w[0] = 0.0;
    CHECK_THROWS_AS(extract_beta(m), DegenerateDirectionError);
    CHECK_THROWS_AS(extract_beta(build_unet3d<double>(small_unet(), 1)), UsageError);
}

TEST_CASE("checkpoint round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "dsr_test_ckpt";
    std::filesystem::remove_all(dir);
    const auto net = replace_final_layer(build_unet3d<float>(small_unet(), 8), 3);
    save_checkpoint(net, dir);
    const auto back = load_checkpoint<float>(dir);
    REQUIRE(back.params.size() == net.params.size());
    for (std::size_t i = 0; i < net.params.size(); ++i) {
        CHECK(back.params[i].value == net.params[i].value);
        CHECK(back.params[i].trainable == net.params[i].trainable);
    }
    const auto x = randn({1, 3, 8, 8, 8}, 9);
    CHECK(forward(back, x) == forward(net, x));

    std::filesystem::remove(dir / "final.bias.dsrt");
    CHECK_THROWS_AS(load_checkpoint<float>(dir), MissingArtifactError);
    CHECK_THROWS_AS(load_checkpoint<float>(dir / "nope"), MissingArtifactError);
}
