#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "dsr/trainer.hpp"

using namespace dsr;

namespace {

// y = softplus-ish single index of x plus nothing else; easy to fit.
Dataset<double> toy(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    Dataset<double> d{Tensor<double>({n, 3}), Tensor<double>({n, 1})};
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        for (std::size_t a = 0; a < 3; ++a) {
            d.inputs[i * 3 + a] = u(rng);
            s += (1.0 + 0.2 * a) * d.inputs[i * 3 + a];
        }
        d.targets[i] = s * s / 4;
    }
    return d;
}

MlpSpec small_mlp() {
    MlpSpec s;
    s.hidden = {8, 8};
    return s;
}

}  // namespace

TEST_CASE("adam moves every coordinate by at most lr on the first step") {
    auto m = build_mlp<double>(small_mlp(), 1);
    const auto before = m;
    std::vector<Tensor<double>> grads;
    std::mt19937_64 rng(2);
    std::normal_distribution<double> z(0, 100);
    for (const auto& p : m.params) {
        Tensor<double> g(p.value.shape());
        for (auto& v : g.data()) v = z(rng);
        grads.push_back(g);
    }
    AdamState<double> st;
    adam_step(m, grads, st, 1e-3);
    for (std::size_t i = 0; i < m.params.size(); ++i)
        for (std::size_t k = 0; k < m.params[i].value.size(); ++k)
            CHECK(std::abs(m.params[i].value[k] - before.params[i].value[k]) <= 1e-3 * (1 + 1e-6));
}

TEST_CASE("pre-training reduces the loss and is reproducible") {
    const auto data = toy(64, 3);
    TrainConfig c;
    c.learning_rate = 1e-2;
    c.epochs = 150;
    c.sigma2 = 0.01;
    c.seed = 4;
    const auto a = pretrain(build_mlp<double>(small_mlp(), 5), data, &data, c);
    CHECK(a.report.epochs() == 150);
    CHECK(a.report.val_loss.size() == 150);
    CHECK(a.report.train_loss.back() < 0.5 * a.report.train_loss.front());
    const auto b = pretrain(build_mlp<double>(small_mlp(), 5), data, &data, c);
    for (std::size_t i = 0; i < a.model.params.size(); ++i) CHECK(a.model.params[i].value == b.model.params[i].value);
    c.seed = 5;
    const auto d = pretrain(build_mlp<double>(small_mlp(), 5), data, &data, c);
    CHECK_FALSE(d.model.params[0].value == a.model.params[0].value);
}

TEST_CASE("mini-batches and the mse loss") {
    const auto data = toy(50, 6);
    TrainConfig c;
    c.learning_rate = 1e-2;
    c.epochs = 60;
    c.batch_size = 16;
    c.loss = LossKind::mse;
    c.m = 1;
    const auto r = pretrain(build_mlp<double>(small_mlp(), 7), data, nullptr, c);
    CHECK(r.report.train_loss.back() < r.report.train_loss.front());
    CHECK(r.report.val_loss.empty());
    const auto l2 = train_l2_baseline(build_mlp<double>(small_mlp(), 7), data, nullptr, c);
    CHECK(l2.report.epochs() == 60);
}

TEST_CASE("lp-ft keeps frozen parameters bit-identical during the probe phase") {
    const auto data = toy(40, 8);
    const auto pre = build_mlp<double>(small_mlp(), 9);
    TrainConfig c;
    c.learning_rate = 1e-2;
    c.lp_epochs = 30;
    c.ft_epochs = 0;
    c.sigma2 = 0.01;
    const auto lp = finetune_lpft(pre, data, nullptr, c);
    for (std::size_t i = 0; i < pre.params.size(); ++i) {
        const bool final = pre.params[i].name.rfind("head.", 0) == 0;
        if (!final) CHECK(lp.model.params[i].value == pre.params[i].value);
        else CHECK_FALSE(lp.model.params[i].value == pre.params[i].value);
    }
    c.ft_epochs = 20;
    const auto full = finetune_lpft(pre, data, nullptr, c);
    CHECK(full.report.epochs() == 50);
    CHECK(std::count(full.report.phase.begin(), full.report.phase.end(), "lp") == 30);
    CHECK(std::count(full.report.phase.begin(), full.report.phase.end(), "ft") == 20);
    CHECK_FALSE(full.model.params[0].value == pre.params[0].value);
    CHECK(full.model.trainable_tensors() == full.model.params.size());
}

TEST_CASE("checkpoints are written when requested") {
    const auto dir = std::filesystem::temp_directory_path() / "dsr_test_train_ckpt";
    std::filesystem::remove_all(dir);
    TrainConfig c;
    c.epochs = 2;
    c.checkpoint_dir = dir;
    const auto r = pretrain(build_mlp<double>(small_mlp(), 1), toy(8, 1), nullptr, c);
    CHECK(std::filesystem::exists(dir / "manifest.json"));
    CHECK(r.report.checkpoint == dir.string());
}

TEST_CASE("configuration and data errors") {
    TrainConfig c;
    c.learning_rate = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.m = 1;
    c.sigma2 = 0.1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_THROWS_AS(train_config_from_json(json{{"epoch", 3}}), ConfigError);
    CHECK_THROWS_AS(parse_loss_kind("huber"), ConfigError);

    auto data = toy(8, 2);
    data.targets[3] = std::nan("");
    TrainConfig ok;
    ok.epochs = 3;
    CHECK_THROWS_AS(pretrain(build_mlp<double>(small_mlp(), 1), data, nullptr, ok), NumericError);
    Dataset<double> mismatch{Tensor<double>({4, 3}), Tensor<double>({3, 1})};
    CHECK_THROWS_AS(pretrain(build_mlp<double>(small_mlp(), 1), mismatch, nullptr, ok), DimensionError);
}

TEST_CASE("train config json round trip") {
    TrainConfig c;
    c.learning_rate = 3e-4;
    c.epochs = 17;
    c.loss = LossKind::mse;
    c.noise_diag = {0.1, 0.2};
    const auto back = train_config_from_json(train_config_to_json(c));
    CHECK(back.learning_rate == c.learning_rate);
    CHECK(back.epochs == 17);
    CHECK(back.loss == LossKind::mse);
    CHECK(back.noise_diag == c.noise_diag);
}
