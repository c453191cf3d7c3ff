#include "cadenza/policy.hpp"

#include "cadenza/errors.hpp"

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace cadenza;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

policy::PolicySpec small_spec() {
    policy::PolicySpec spec;
    spec.vocab = 10;
    spec.width = 8;
    spec.blocks = 2;
    return spec;
}

} // namespace

TEST_CASE("parameter count stays under the finite-difference budget") {
    policy::PolicySpec spec;
    spec.vocab = 16;
    spec.width = 16;
    CHECK(spec.param_count() == 16 * 16 + 2 * 4 * 16 * 16 + 16 * 16 + 16);
    CHECK(spec.param_count() <= 10000);
}

TEST_CASE("zero-head init gives the uniform distribution") {
    const auto spec = small_spec();
    const VectorXd params = policy::init_params(spec, 99);
    const std::vector<int> tokens = {0, 3, 7, 1};
    const auto f = policy::forward(spec, params, tokens, spec.default_positions(4));
    const double expect = -std::log(static_cast<double>(spec.vocab));
    for (Eigen::Index t = 0; t < 4; ++t)
        for (int v = 0; v < spec.vocab; ++v)
            CHECK(f.logp(t, v) == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("probabilities sum to one at every position") {
    const auto spec = small_spec();
    VectorXd params = policy::init_params(spec, 42);
    // push the head away from zero so the distribution is non-uniform
    for (Eigen::Index i = params.size() - spec.vocab * (spec.width + 1); i < params.size(); ++i)
        params[i] = 0.3 * std::sin(static_cast<double>(i));
    const std::vector<int> tokens = {1, 2, 3, 4, 5};
    const auto f = policy::forward(spec, params, tokens, spec.default_positions(5));
    for (Eigen::Index t = 0; t < 5; ++t)
        CHECK(f.probs.row(t).sum() == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("vocabulary errors") {
    const auto spec = small_spec();
    const VectorXd params = policy::init_params(spec, 1);
    CHECK_THROWS_AS(
        (void)policy::forward(spec, params, {0, 99}, spec.default_positions(2)),
        VocabularyError);
    CHECK_THROWS_AS((void)policy::policy_logprobs(spec, params, {}, {1}), InvalidArgument);
}

TEST_CASE("policy_logprobs aligns with forward rows") {
    const auto spec = small_spec();
    VectorXd params = policy::init_params(spec, 7);
    const std::vector<int> prompt = {0, 4};
    const std::vector<int> completion = {2, 6, 1};
    const auto lp = policy::policy_logprobs(spec, params, prompt, completion);
    REQUIRE(lp.size() == 3);

    std::vector<int> full = {0, 4, 2, 6, 1};
    const auto f = policy::forward(spec, params, full, spec.default_positions(5));
    CHECK(lp[0] == doctest::Approx(f.logp(1, 2)));
    CHECK(lp[1] == doctest::Approx(f.logp(2, 6)));
    CHECK(lp[2] == doctest::Approx(f.logp(3, 1)));
    for (Eigen::Index i = 0; i < 3; ++i) CHECK(std::isfinite(lp[i]));
}

TEST_CASE("gradient of a completion log-likelihood matches finite differences") {
    const auto spec = small_spec();
    VectorXd params = policy::init_params(spec, 3);
    // non-degenerate head
    for (Eigen::Index i = spec.vocab * spec.width + 2 * 4 * spec.width * spec.width;
         i < params.size(); ++i)
        params[i] = 0.1 * std::cos(static_cast<double>(i));

    const std::vector<int> prompt = {0, 2};
    const std::vector<int> completion = {5, 1, 8};
    std::vector<int> tokens = prompt;
    tokens.insert(tokens.end(), completion.begin(), completion.end());
    const auto positions = spec.default_positions(5);

    // analytic gradient of L = -sum logp(completion)
    const auto f = policy::forward(spec, params, tokens, positions);
    MatrixXd d_logits = MatrixXd::Zero(5, spec.vocab);
    for (std::size_t t = 0; t < completion.size(); ++t) {
        const auto row = static_cast<Eigen::Index>(1 + t);
        d_logits.row(row) = f.probs.row(row);
        d_logits(row, completion[t]) -= 1.0;
    }
    const VectorXd grad = policy::backward(spec, params, tokens, positions, f, d_logits);

    const auto loss_at = [&](const VectorXd& p) {
        return -policy::policy_logprobs(spec, p, prompt, completion).sum();
    };
    const double h = 1e-5;
    double max_err = 0.0;
    VectorXd probe = params;
    for (Eigen::Index i = 0; i < params.size(); ++i) {
        probe[i] = params[i] + h;
        const double up = loss_at(probe);
        probe[i] = params[i] - h;
        const double down = loss_at(probe);
        probe[i] = params[i];
        const double fd = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(fd), std::abs(grad[i]), 1e-8});
        max_err = std::max(max_err, std::abs(fd - grad[i]) / denom);
    }
    CHECK(max_err < 1e-4);
}

TEST_CASE("sampling is deterministic per seed and respects eos") {
    const auto spec = small_spec();
    const VectorXd params = policy::init_params(spec, 5);
    Rng a(123), b(123), c(124);
    const std::vector<int> prompt = {0};
    const auto s1 = policy::sample(spec, params, prompt, 12, 9, a);
    const auto s2 = policy::sample(spec, params, prompt, 12, 9, b);
    const auto s3 = policy::sample(spec, params, prompt, 12, 9, c);
    CHECK(s1 == s2);
    CHECK(s1 != s3);  // overwhelmingly likely for a 12-token uniform draw
    CHECK(!s1.empty());
    CHECK(s1.size() <= 12);
    for (std::size_t i = 0; i + 1 < s1.size(); ++i) CHECK(s1[i] != 9);
    if (s1.size() < 12) CHECK(s1.back() == 9);
}

TEST_CASE("parameter file round trip is byte-stable") {
    const auto spec = small_spec();
    const VectorXd params = policy::init_params(spec, 21);
    const auto dir = std::filesystem::temp_directory_path() / "cadenza_policy_test";
    std::filesystem::create_directories(dir);
    const std::string p1 = (dir / "a.bin").string();
    const std::string p2 = (dir / "b.bin").string();

    policy::save_params(spec, params, p1);
    const VectorXd loaded = policy::load_params(spec, p1);
    policy::save_params(spec, loaded, p2);

    // float32 storage: save(load(save(x))) is bit-identical to save(x)
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    CHECK(b1.substr(0, 4) == "CDZW");
    CHECK((loaded - params).cwiseAbs().maxCoeff() < 1e-6);

    // wrong-spec load is rejected
    policy::PolicySpec other = spec;
    other.vocab = 12;
    CHECK_THROWS_AS((void)policy::load_params(other, p1), ParseError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("named tensors cover the whole parameter vector") {
    const auto spec = small_spec();
    const VectorXd params = policy::init_params(spec, 2);
    const auto tensors = policy::to_tensors(spec, params);
    REQUIRE(tensors.size() == 1 + 4 * 2 + 2);  // embed + 2 blocks x 4 + head + bias
    std::size_t total = 0;
    for (const auto& t : tensors) total += t.data.size();
    CHECK(total == static_cast<std::size_t>(spec.param_count()));
    CHECK(tensors.front().name == "embed");
    CHECK(tensors.back().name == "bias");
}
