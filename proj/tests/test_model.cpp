#include <cmath>

#include "doctest.h"
#include "nik/model.hpp"
#include "nik/rng.hpp"

using namespace nik;

namespace {

ModelConfig toy_config() {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.keypoints = 4;
    cfg.joints = 3;
    cfg.shape_dims = 2;
    cfg.max_len = 8;
    return cfg;
}

Tensor random_chunk(const ModelConfig& cfg, int b, int t, uint64_t seed) {
    Rng rng(seed);
    Tensor chunk = Tensor::zeros({b, t, cfg.input_dim()});
    for (auto& x : chunk.data()) x = rng.normal();
    return chunk;
}

}  // namespace

TEST_CASE("positional encoding formula") {
    const Tensor pe = positional_encoding<double>(5, 8);
    REQUIRE(pe.shape() == Shape{5, 8});
    // t = 0: sin terms 0, cos terms 1.
    for (int i = 0; i < 8; ++i)
        CHECK(pe.data()[static_cast<size_t>(i)] == doctest::Approx(i % 2 == 0 ? 0.0 : 1.0));
    // PE(t, 0) = sin(t).
    for (int t = 0; t < 5; ++t)
        CHECK(pe.data()[static_cast<size_t>(t * 8)] == doctest::Approx(std::sin(t)));
    // Everything in [-1, 1].
    for (double v : pe.data()) {
        CHECK(v <= 1.0);
        CHECK(v >= -1.0);
    }
}

TEST_CASE("config validation") {
    ModelConfig cfg = toy_config();
    cfg.heads = 3;  // 16 % 3 != 0
    CHECK_THROWS_AS(cfg.validate(), ContractViolation);
    ModelConfig cfg2 = toy_config();
    cfg2.dropout = 0.5;
    CHECK_THROWS_AS(cfg2.validate(), ContractViolation);
}

TEST_CASE("zero-weight model: zero outputs, uniform attention") {
    const ModelConfig cfg = toy_config();
    const ModelT<double> model(cfg);  // all parameters zero
    const int B = 2, T = 4;
    const auto out = model.forward(random_chunk(cfg, B, T, 3));
    for (double v : out.trans.data()) CHECK(v == 0.0);
    for (double v : out.rot6d.data()) CHECK(v == 0.0);
    for (double v : out.shape.data()) CHECK(v == 0.0);
    for (double v : out.attn.data()) CHECK(v == doctest::Approx(1.0 / T).epsilon(1e-12));
}

TEST_CASE("forward output shapes for random sizes") {
    Rng rng(5);
    for (int trial = 0; trial < 4; ++trial) {
        ModelConfig cfg = toy_config();
        cfg.joints = 2 + static_cast<int>(rng.uniform_int(0, 4));
        cfg.shape_dims = 1 + static_cast<int>(rng.uniform_int(0, 4));
        cfg.keypoints = 3 + static_cast<int>(rng.uniform_int(0, 4));
        const int B = 1 + static_cast<int>(rng.uniform_int(0, 3));
        const int T = 1 + static_cast<int>(rng.uniform_int(0, cfg.max_len));
        const auto model = ModelT<double>::init(cfg, 9);
        const auto out = model.forward(random_chunk(cfg, B, T, 11));
        CHECK(out.trans.shape() == Shape{B, T, 3});
        CHECK(out.rot6d.shape() == Shape{B, T, cfg.joints, 6});
        CHECK(out.shape.shape() == Shape{B, cfg.shape_dims});
        CHECK(out.attn.shape() == Shape{B, T});
    }
}

TEST_CASE("attention pooling weights are a distribution") {
    const ModelConfig cfg = toy_config();
    const auto model = ModelT<double>::init(cfg, 1);
    const auto out = model.forward(random_chunk(cfg, 3, 5, 7));
    for (int b = 0; b < 3; ++b) {
        double sum = 0;
        for (int t = 0; t < 5; ++t) {
            const double w = out.attn.data()[static_cast<size_t>(b * 5 + t)];
            CHECK(w >= 0.0);
            sum += w;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }

    // Length-1 chunk: the singleton softmax gives weight exactly 1.
    const auto single = model.forward(random_chunk(cfg, 1, 1, 8));
    CHECK(single.attn.data()[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("init determinism and near-identity rotations") {
    const ModelConfig cfg = toy_config();
    const auto a = ModelT<double>::init(cfg, 42);
    const auto b = ModelT<double>::init(cfg, 42);
    for (size_t i = 0; i < a.parameters().size(); ++i)
        CHECK(a.parameters()[i].second.data() == b.parameters()[i].second.data());
    const auto c = ModelT<double>::init(cfg, 43);
    CHECK(a.param("read_in.w").data() != c.param("read_in.w").data());

    // Bias-dominated at init: every 6D output within 0.5 of the identity.
    const auto out = a.forward(random_chunk(cfg, 2, 4, 19));
    const double identity6[6] = {1, 0, 0, 0, 1, 0};
    for (int i = 0; i < 2 * 4 * cfg.joints; ++i)
        for (int c6 = 0; c6 < 6; ++c6)
            CHECK(std::abs(out.rot6d.data()[static_cast<size_t>(i * 6 + c6)] -
                           identity6[c6]) < 0.5);
}

TEST_CASE("forward is deterministic and batch-order equivariant") {
    const ModelConfig cfg = toy_config();
    const auto model = ModelT<double>::init(cfg, 4);
    const Tensor chunk = random_chunk(cfg, 2, 4, 21);
    const auto out1 = model.forward(chunk);
    const auto out2 = model.forward(chunk);
    CHECK(out1.trans.data() == out2.trans.data());
    CHECK(out1.rot6d.data() == out2.rot6d.data());
    CHECK(out1.shape.data() == out2.shape.data());

    // Swapping the two batch entries swaps the outputs exactly.
    const int td = 4 * cfg.input_dim();
    Tensor swapped = Tensor::zeros({2, 4, cfg.input_dim()});
    std::copy_n(chunk.data().data() + td, td, swapped.data().data());
    std::copy_n(chunk.data().data(), td, swapped.data().data() + td);
    const auto out3 = model.forward(swapped);
    const int out_td = 4 * 3;
    for (int i = 0; i < out_td; ++i) {
        CHECK(out3.trans.data()[static_cast<size_t>(i)] ==
              out1.trans.data()[static_cast<size_t>(out_td + i)]);
        CHECK(out3.trans.data()[static_cast<size_t>(out_td + i)] ==
              out1.trans.data()[static_cast<size_t>(i)]);
    }
}

TEST_CASE("chunk length limits") {
    const ModelConfig cfg = toy_config();
    const auto model = ModelT<double>::init(cfg, 4);
    CHECK_THROWS_AS(model.forward(random_chunk(cfg, 1, cfg.max_len + 1, 2)), ChunkTooLong);
    CHECK_THROWS_AS(model.forward(Tensor::zeros({2, 2})), ContractViolation);
}

TEST_CASE("non-finite activations raise NumericalFault with a layer index") {
    const ModelConfig cfg = toy_config();
    auto model = ModelT<double>::init(cfg, 4);
    Tensor chunk = random_chunk(cfg, 1, 2, 3);
    chunk.data()[0] = std::numeric_limits<double>::quiet_NaN();
    try {
        model.forward(chunk);
        FAIL("expected NumericalFault");
    } catch (const NumericalFault& e) {
        CHECK(e.layer_index >= 0);
    }
}
