#include <cmath>

#include "doctest.h"
#include "nik/rng.hpp"
#include "nik/stream.hpp"

using namespace nik;

namespace {

constexpr int kK = 4;  // keypoints
constexpr int kJ = 2;  // joints
constexpr int kS = 1;  // shape dims

KeypointSequence random_feed(int frames, uint64_t seed) {
    Rng rng(seed);
    KeypointSequence seq;
    for (int f = 0; f < frames; ++f) {
        Eigen::MatrixXd frame(kK, 3);
        for (int r = 0; r < kK; ++r)
            for (int c = 0; c < 3; ++c) frame(r, c) = rng.normal();
        seq.frames.push_back(frame);
    }
    return seq;
}

// Echo stub: slot i reports the frame index it holds, in the translation x
// component (pre-inverted so the engine's de-standardization restores the
// marker exactly) and in the shape.
ChunkModelFn<double> echo_stub() {
    return [](const StdWindow<double>& win) {
        const int tw = win.input.dim(1);
        ChunkEstimate<double> est;
        est.joints = kJ;
        est.trans.resize(static_cast<size_t>(tw));
        est.rot6d.assign(static_cast<size_t>(tw) * kJ * 6, 0.0);
        for (int i = 0; i < tw; ++i) {
            const FrameMeta& meta = win.meta[static_cast<size_t>(i)];
            const double marker = static_cast<double>(meta.frame);
            est.trans[static_cast<size_t>(i)] = {
                (marker - meta.centroid.x()) / meta.scale,
                (0.0 - meta.centroid.y()) / meta.scale,
                (0.0 - meta.centroid.z()) / meta.scale};
            for (int j = 0; j < kJ; ++j) {
                est.rot6d[(static_cast<size_t>(i) * kJ + j) * 6 + 0] = 1.0;
                est.rot6d[(static_cast<size_t>(i) * kJ + j) * 6 + 4] = 1.0;
            }
        }
        est.shape.assign(kS, static_cast<double>(win.meta.back().frame));
        return est;
    };
}

// Noisy stub: the marker plus one zero-mean noise draw per forward pass
// (per chunk), shared by all slots of that window.
ChunkModelFn<double> noisy_stub(std::shared_ptr<Rng> rng, double sigma) {
    return [rng, sigma](const StdWindow<double>& win) {
        const double noise = sigma * rng->normal();
        const int tw = win.input.dim(1);
        ChunkEstimate<double> est;
        est.joints = kJ;
        est.trans.resize(static_cast<size_t>(tw));
        est.rot6d.assign(static_cast<size_t>(tw) * kJ * 6, 0.0);
        for (int i = 0; i < tw; ++i) {
            const FrameMeta& meta = win.meta[static_cast<size_t>(i)];
            const double value = static_cast<double>(meta.frame) + noise;
            est.trans[static_cast<size_t>(i)] = {(value - meta.centroid.x()) / meta.scale,
                                                 -meta.centroid.y() / meta.scale,
                                                 -meta.centroid.z() / meta.scale};
            for (int j = 0; j < kJ; ++j) {
                est.rot6d[(static_cast<size_t>(i) * kJ + j) * 6 + 0] = 1.0;
                est.rot6d[(static_cast<size_t>(i) * kJ + j) * 6 + 4] = 1.0;
            }
        }
        est.shape.assign(kS, 0.0);
        return est;
    };
}

StreamConfig config(StreamMode mode, int window, int delay) {
    StreamConfig cfg;
    cfg.mode = mode;
    cfg.window = window;
    cfg.delay = delay;
    return cfg;
}

}  // namespace

TEST_CASE("algorithm 1 trace: one output per push, zero delay") {
    StreamEngineT<double> engine(config(StreamMode::kOneByOne, 3, 0), kK, kJ, kS, echo_stub());
    const KeypointSequence feed = random_feed(5, 1);
    std::vector<int64_t> emitted;
    for (const auto& frame : feed.frames) {
        const auto out = engine.push(frame);
        REQUIRE(out.has_value());
        emitted.push_back(out->frame);
        CHECK(out->translation.x() == doctest::Approx(static_cast<double>(out->frame)).epsilon(1e-9));
        CHECK(out->provenance == 1);
    }
    CHECK(emitted == std::vector<int64_t>{0, 1, 2, 3, 4});
    CHECK(engine.forwards_run() == 5);
}

TEST_CASE("algorithm 2 trace: lookahead queue") {
    SUBCASE("L=3, d=1") {
        StreamEngineT<double> engine(config(StreamMode::kLookahead, 3, 1), kK, kJ, kS,
                                     echo_stub());
        const KeypointSequence feed = random_feed(5, 2);
        std::vector<std::optional<int64_t>> emitted;
        for (const auto& frame : feed.frames) {
            const auto out = engine.push(frame);
            emitted.push_back(out ? std::optional<int64_t>(out->frame) : std::nullopt);
        }
        REQUIRE(emitted.size() == 5);
        CHECK(!emitted[0].has_value());
        CHECK(!emitted[1].has_value());
        CHECK(emitted[2] == 1);
        CHECK(emitted[3] == 2);
        CHECK(emitted[4] == 3);
    }
    SUBCASE("d=0 equals algorithm 1 once the window is full") {
        const KeypointSequence feed = random_feed(8, 3);
        StreamEngineT<double> alg1(config(StreamMode::kOneByOne, 3, 0), kK, kJ, kS, echo_stub());
        StreamEngineT<double> alg2(config(StreamMode::kLookahead, 3, 0), kK, kJ, kS,
                                   echo_stub());
        for (int t = 0; t < 8; ++t) {
            const auto a = alg1.push(feed.frames[static_cast<size_t>(t)]);
            const auto b = alg2.push(feed.frames[static_cast<size_t>(t)]);
            if (t < 2) {
                CHECK(!b.has_value());
            } else {
                REQUIRE(b.has_value());
                CHECK(a->frame == b->frame);
                CHECK((a->translation - b->translation).norm() < 1e-12);
                for (int j = 0; j < kJ; ++j)
                    CHECK((a->rotations[static_cast<size_t>(j)] -
                           b->rotations[static_cast<size_t>(j)])
                              .cwiseAbs()
                              .maxCoeff() < 1e-12);
            }
        }
    }
}

TEST_CASE("algorithm 3 trace: averaging bins") {
    StreamEngineT<double> engine(config(StreamMode::kAveraging, 3, 1), kK, kJ, kS, echo_stub());
    const KeypointSequence feed = random_feed(5, 4);
    std::vector<std::optional<int64_t>> emitted;
    std::vector<int> provenance;
    for (const auto& frame : feed.frames) {
        const auto out = engine.push(frame);
        emitted.push_back(out ? std::optional<int64_t>(out->frame) : std::nullopt);
        if (out) {
            provenance.push_back(out->provenance);
            // Average of identical markers is the marker.
            CHECK(out->translation.x() ==
                  doctest::Approx(static_cast<double>(out->frame)).epsilon(1e-9));
        }
    }
    CHECK(!emitted[0].has_value());
    CHECK(!emitted[1].has_value());
    CHECK(emitted[2] == 1);
    CHECK(emitted[3] == 2);
    CHECK(emitted[4] == 3);
    // Frame 1 was seen by one window at emission time; later frames by two.
    CHECK(provenance == std::vector<int>{1, 2, 2});
}

TEST_CASE("algorithm 3 with d = L-1 emits from frame zero with provenance 1") {
    StreamEngineT<double> engine(config(StreamMode::kAveraging, 3, 2), kK, kJ, kS, echo_stub());
    const KeypointSequence feed = random_feed(4, 5);
    std::vector<std::optional<int64_t>> emitted;
    for (const auto& frame : feed.frames) {
        const auto out = engine.push(frame);
        emitted.push_back(out ? std::optional<int64_t>(out->frame) : std::nullopt);
        if (out && out->frame == 0) CHECK(out->provenance == 1);
    }
    CHECK(!emitted[0].has_value());
    CHECK(!emitted[1].has_value());
    CHECK(emitted[2] == 0);
    CHECK(emitted[3] == 1);
}

TEST_CASE("averaged rotations of identical estimates are exact and orthonormal") {
    StreamEngineT<double> engine(config(StreamMode::kAveraging, 4, 2), kK, kJ, kS, echo_stub());
    const KeypointSequence feed = random_feed(10, 6);
    for (const auto& frame : feed.frames) {
        const auto out = engine.push(frame);
        if (!out) continue;
        for (const auto& rot : out->rotations) {
            CHECK((rot - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
            CHECK(((rot.transpose() * rot) - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-6);
        }
    }
}

TEST_CASE("averaging reduces variance versus single estimates") {
    // 200 seeded trials here; the acceptance suite runs the full 1000.
    const int trials = 200;
    const double sigma = 0.5;
    double var_single = 0, var_avg = 0;
    int n_single = 0, n_avg = 0;
    for (int trial = 0; trial < trials; ++trial) {
        auto rng1 = std::make_shared<Rng>(1000 + trial);
        auto rng2 = std::make_shared<Rng>(1000 + trial);
        StreamEngineT<double> one(config(StreamMode::kOneByOne, 3, 0), kK, kJ, kS,
                                  noisy_stub(rng1, sigma));
        StreamEngineT<double> avg(config(StreamMode::kAveraging, 3, 1), kK, kJ, kS,
                                  noisy_stub(rng2, sigma));
        const KeypointSequence feed = random_feed(8, 70 + trial);
        for (const auto& frame : feed.frames) {
            const auto a = one.push(frame);
            if (a) {
                const double err = a->translation.x() - static_cast<double>(a->frame);
                var_single += err * err;
                ++n_single;
            }
            const auto b = avg.push(frame);
            if (b && b->provenance >= 2) {
                const double err = b->translation.x() - static_cast<double>(b->frame);
                var_avg += err * err;
                ++n_avg;
            }
        }
    }
    var_single /= n_single;
    var_avg /= n_avg;
    CHECK(var_avg / var_single < 0.7);
}

TEST_CASE("center-weighted averaging stays exact for identical estimates") {
    StreamConfig cfg = config(StreamMode::kAveraging, 4, 2);
    cfg.weighting = AveragingWeights::kCenterWeighted;
    StreamEngineT<double> engine(cfg, kK, kJ, kS, echo_stub());
    const KeypointSequence feed = random_feed(12, 15);
    int emissions = 0;
    for (const auto& frame : feed.frames) {
        const auto out = engine.push(frame);
        if (!out) continue;
        ++emissions;
        CHECK(out->translation.x() ==
              doctest::Approx(static_cast<double>(out->frame)).epsilon(1e-9));
        CHECK((out->rotations[0] - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    }
    CHECK(emissions > 0);
}

TEST_CASE("shape smoothing blends consecutive emissions") {
    StreamConfig cfg = config(StreamMode::kOneByOne, 3, 0);
    cfg.shape_smoothing = 0.5;
    // Stub shape marker equals the newest frame index.
    StreamEngineT<double> engine(cfg, kK, kJ, kS,
                                 [](const StdWindow<double>& win) {
                                     auto est = echo_stub()(win);
                                     est.shape.assign(
                                         kS, static_cast<double>(win.meta.back().frame));
                                     return est;
                                 });
    const KeypointSequence feed = random_feed(3, 16);
    double expected = 0;
    for (int t = 0; t < 3; ++t) {
        const auto out = engine.push(feed.frames[static_cast<size_t>(t)]);
        REQUIRE(out.has_value());
        expected = t == 0 ? 0.0 : 0.5 * expected + 0.5 * t;
        CHECK(out->shape(0) == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("bin bookkeeping: single emission per frame, bounded memory") {
    StreamEngineT<double> engine(config(StreamMode::kAveraging, 4, 1), kK, kJ, kS, echo_stub());
    const KeypointSequence feed = random_feed(40, 8);
    std::vector<int64_t> seen;
    for (const auto& frame : feed.frames) {
        const auto out = engine.push(frame);
        if (out) {
            for (int64_t f : seen) CHECK(f != out->frame);
            seen.push_back(out->frame);
        }
        CHECK(engine.pending_estimates() <= 4 * (1 + 1));
    }
}

TEST_CASE("stream config validation rejects d >= L") {
    StreamConfig cfg = config(StreamMode::kLookahead, 4, 4);
    CHECK_THROWS_AS(cfg.validate(), ContractViolation);
    StreamConfig ok = config(StreamMode::kOneByOne, 1, 0);
    ok.validate();
}

TEST_CASE("run_offline window counts and timing report") {
    const KeypointSequence feed = random_feed(600, 9);
    StreamConfig cfg = config(StreamMode::kAveraging, 16, 8);
    const OfflineResult result = run_offline<double>(echo_stub(), kK, kJ, kS, feed, cfg);
    // 600 - L + 1 forward passes.
    CHECK(result.timing.forwards == 585);
    CHECK(result.timing.frames == 600);
    // First emission at push L-1 for frame L-1-d, one per push after.
    CHECK(result.outputs.front().frame == 16 - 1 - 8);
    CHECK(result.outputs.back().frame == 599 - 8);
    CHECK(result.timing.emitted == 585);
    CHECK(result.timing.total_s >= 0);
    CHECK(result.timing.forward_mean_s >= 0);
    CHECK(result.timing.total_s >=
          result.timing.forward_mean_s * static_cast<double>(result.timing.forwards));

    // Empty input: no outputs, zero timings.
    const OfflineResult empty = run_offline<double>(echo_stub(), kK, kJ, kS, {}, cfg);
    CHECK(empty.outputs.empty());
    CHECK(empty.timing.forwards == 0);
    CHECK(empty.timing.forward_mean_s == 0);
}

TEST_CASE("model adapter: constant input gives constant outputs") {
    ModelConfig mcfg;
    mcfg.d_model = 16;
    mcfg.layers = 1;
    mcfg.heads = 2;
    mcfg.keypoints = kK;
    mcfg.joints = kJ;
    mcfg.shape_dims = kS;
    mcfg.max_len = 4;
    const auto model = ModelT<double>::init(mcfg, 3);

    Eigen::MatrixXd frame(kK, 3);
    frame << 1, 0, 0, -1, 0, 0, 0, 2, 0, 0, -2, 0;
    StreamConfig cfg = config(StreamMode::kOneByOne, 4, 0);
    StreamEngineT<double> engine(cfg, kK, kJ, kS, model_chunk_fn(model));
    std::vector<FrameOutput> outs;
    for (int t = 0; t < 8; ++t) outs.push_back(*engine.push(frame));
    // Once the window is saturated with identical frames the outputs repeat.
    for (size_t t = 4; t < 8; ++t) {
        CHECK((outs[t].translation - outs[3].translation).norm() < 1e-12);
        CHECK((outs[t].rotations[0] - outs[3].rotations[0]).cwiseAbs().maxCoeff() < 1e-12);
    }
    for (const auto& out : outs)
        for (const auto& rot : out.rotations)
            CHECK(((rot.transpose() * rot) - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-6);
}
