#include "nik/stream.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <sys/resource.h>

namespace nik {

void StreamConfig::validate() const {
    if (window < 1) throw ContractViolation("stream config: window must be >= 1");
    if (mode != StreamMode::kOneByOne && (delay < 0 || delay >= window))
        throw ContractViolation("stream config: delay must satisfy 0 <= d < L, got d=" +
                                std::to_string(delay) + ", L=" + std::to_string(window));
    if (shape_smoothing < 0 || shape_smoothing >= 1)
        throw ContractViolation("stream config: shape_smoothing must be in [0, 1)");
}

template <typename T>
StreamEngineT<T>::StreamEngineT(StreamConfig cfg, int keypoints, int joints, int shape_dims,
                                ChunkModelFn<T> model)
    : cfg_(cfg), keypoints_(keypoints), joints_(joints), shape_dims_(shape_dims),
      model_(std::move(model)) {
    cfg_.validate();
    if (keypoints_ < 2 || joints_ < 1 || shape_dims_ < 0)
        throw ContractViolation("stream engine: bad dimensions");
}

template <typename T>
ChunkEstimate<T> StreamEngineT<T>::run_model() {
    const int tw = static_cast<int>(window_.size());
    const int k3 = 3 * keypoints_;
    std::vector<T> data(static_cast<size_t>(tw) * k3);
    for (int i = 0; i < tw; ++i)
        std::copy_n(window_[static_cast<size_t>(i)].data(), k3,
                    data.data() + static_cast<size_t>(i) * k3);
    StdWindow<T> win;
    win.input = TensorT<T>::from_data({1, tw, k3}, std::move(data));
    win.meta.assign(meta_.begin(), meta_.end());
    TapeScopeT<T> no_tape(nullptr);
    ++forwards_;
    ChunkEstimate<T> est = model_(win);
    if (static_cast<int>(est.trans.size()) != tw ||
        static_cast<int>(est.rot6d.size()) != tw * joints_ * 6 ||
        static_cast<int>(est.shape.size()) != shape_dims_)
        throw ContractViolation("stream engine: model returned wrong estimate size");
    return est;
}

template <typename T>
FrameOutput StreamEngineT<T>::estimate_to_output(const ChunkEstimate<T>& est, int slot,
                                                 const FrameMeta& meta) {
    FrameOutput out;
    out.frame = meta.frame;
    out.degenerate = meta.degenerate;
    const auto& t = est.trans[static_cast<size_t>(slot)];
    out.translation = Vec3(static_cast<double>(t[0]), static_cast<double>(t[1]),
                           static_cast<double>(t[2])) *
                          meta.scale +
                      meta.centroid;
    out.rotations.reserve(static_cast<size_t>(joints_));
    for (int j = 0; j < joints_; ++j) {
        const size_t base = (static_cast<size_t>(slot) * joints_ + j) * 6;
        Rot6d r;
        r.a = Vec3(est.rot6d[base + 0], est.rot6d[base + 1], est.rot6d[base + 2]);
        r.b = Vec3(est.rot6d[base + 3], est.rot6d[base + 4], est.rot6d[base + 5]);
        out.rotations.push_back(rot6d_to_matrix(r));
    }
    out.shape.resize(shape_dims_);
    for (int s = 0; s < shape_dims_; ++s)
        out.shape(s) = static_cast<double>(est.shape[static_cast<size_t>(s)]);
    out.provenance = 1;
    return out;
}

template <typename T>
std::optional<FrameOutput> StreamEngineT<T>::push(const Eigen::MatrixXd& keypoints) {
    if (keypoints.rows() != keypoints_ || keypoints.cols() != 3)
        throw ContractViolation("stream push: expected " + std::to_string(keypoints_) +
                                " x 3 keypoints");
    const StandardizedFrame std_frame = standardize(keypoints);
    std::vector<T> flat(static_cast<size_t>(3 * keypoints_));
    for (int kp = 0; kp < keypoints_; ++kp)
        for (int c = 0; c < 3; ++c)
            flat[static_cast<size_t>(3 * kp + c)] = static_cast<T>(std_frame.keypoints(kp, c));
    window_.push_back(std::move(flat));
    meta_.push_back({next_frame_, std_frame.centroid, std_frame.scale, std_frame.degenerate});
    ++next_frame_;
    if (static_cast<int>(window_.size()) > cfg_.window) {
        window_.pop_front();
        meta_.pop_front();
    }
    std::optional<FrameOutput> out;
    switch (cfg_.mode) {
        case StreamMode::kOneByOne: out = push_one_by_one(); break;
        case StreamMode::kLookahead: out = push_lookahead(); break;
        case StreamMode::kAveraging: out = push_averaging(); break;
    }
    if (out) smooth_shape(*out);
    return out;
}

template <typename T>
std::optional<FrameOutput> StreamEngineT<T>::push_one_by_one() {
    // Runs on the warmup window too; the estimate of the last (newest) slot
    // is emitted immediately.
    const ChunkEstimate<T> est = run_model();
    const int slot = static_cast<int>(window_.size()) - 1;
    return estimate_to_output(est, slot, meta_.back());
}

template <typename T>
std::optional<FrameOutput> StreamEngineT<T>::push_lookahead() {
    if (static_cast<int>(window_.size()) == cfg_.window) {
        const ChunkEstimate<T> est = run_model();
        const int slot = cfg_.window - cfg_.delay - 1;
        queue_.push_back(estimate_to_output(est, slot, meta_[static_cast<size_t>(slot)]));
    }
    if (queue_.empty()) return std::nullopt;
    FrameOutput out = std::move(queue_.front());
    queue_.pop_front();
    return out;
}

template <typename T>
FrameOutput StreamEngineT<T>::emit_bin(int64_t frame, const Bin& bin) {
    FrameOutput out;
    out.frame = frame;
    out.provenance = bin.count;
    out.degenerate = bin.degenerate;
    out.translation = bin.trans_sum / bin.weight;
    out.rotations.reserve(static_cast<size_t>(joints_));
    for (int j = 0; j < joints_; ++j) {
        Rot6d r;
        r.a = Vec3(bin.rot6d_sum[static_cast<size_t>(j * 6 + 0)],
                   bin.rot6d_sum[static_cast<size_t>(j * 6 + 1)],
                   bin.rot6d_sum[static_cast<size_t>(j * 6 + 2)]) /
              bin.weight;
        r.b = Vec3(bin.rot6d_sum[static_cast<size_t>(j * 6 + 3)],
                   bin.rot6d_sum[static_cast<size_t>(j * 6 + 4)],
                   bin.rot6d_sum[static_cast<size_t>(j * 6 + 5)]) /
              bin.weight;
        // 6D average, then re-orthonormalize through Gram-Schmidt.
        out.rotations.push_back(rot6d_to_matrix(r));
    }
    out.shape = bin.shape_sum / bin.weight;
    return out;
}

template <typename T>
void StreamEngineT<T>::smooth_shape(FrameOutput& out) {
    if (cfg_.shape_smoothing <= 0) return;
    if (have_smoothed_shape_)
        smoothed_shape_ = cfg_.shape_smoothing * smoothed_shape_ +
                          (1.0 - cfg_.shape_smoothing) * out.shape;
    else
        smoothed_shape_ = out.shape;
    have_smoothed_shape_ = true;
    out.shape = smoothed_shape_;
}

template <typename T>
std::optional<FrameOutput> StreamEngineT<T>::push_averaging() {
    const int64_t t = next_frame_ - 1;
    if (static_cast<int>(window_.size()) == cfg_.window) {
        const ChunkEstimate<T> est = run_model();
        for (int i = 0; i < cfg_.window; ++i) {
            const FrameMeta& meta = meta_[static_cast<size_t>(i)];
            if (meta.frame < next_emit_) continue;  // already emitted, drop
            Bin& bin = bins_[meta.frame];
            if (bin.count == 0) {
                bin.rot6d_sum.assign(static_cast<size_t>(joints_) * 6, 0.0);
                bin.shape_sum = Eigen::VectorXd::Zero(shape_dims_);
            }
            const double w = cfg_.weighting == AveragingWeights::kCenterWeighted
                                 ? 1.0 + std::min(i, cfg_.window - 1 - i)
                                 : 1.0;
            const auto& tr = est.trans[static_cast<size_t>(i)];
            // De-standardize before averaging so estimates from different
            // windows agree on the frame's world coordinates.
            bin.trans_sum += w * (Vec3(static_cast<double>(tr[0]), static_cast<double>(tr[1]),
                                       static_cast<double>(tr[2])) *
                                      meta.scale +
                                  meta.centroid);
            for (int v = 0; v < joints_ * 6; ++v)
                bin.rot6d_sum[static_cast<size_t>(v)] +=
                    w * static_cast<double>(
                            est.rot6d[static_cast<size_t>(i * joints_ * 6 + v)]);
            for (int s = 0; s < shape_dims_; ++s)
                bin.shape_sum(s) += w * static_cast<double>(est.shape[static_cast<size_t>(s)]);
            bin.weight += w;
            bin.count += 1;
            bin.degenerate = bin.degenerate || meta.degenerate;
        }
    }
    const int64_t target = t - cfg_.delay;
    auto it = bins_.find(target);
    if (it == bins_.end()) return std::nullopt;
    FrameOutput out = emit_bin(target, it->second);
    next_emit_ = target + 1;
    // Frees the emitted bin and any older orphans (early-stream frames that
    // can no longer be requested; Algorithm 3's H would otherwise grow
    // without bound).
    bins_.erase(bins_.begin(), std::next(it));
    return out;
}

template <typename T>
int64_t StreamEngineT<T>::pending_estimates() const {
    int64_t n = 0;
    for (const auto& [frame, bin] : bins_) n += bin.count;
    return n;
}

template <typename T>
ChunkModelFn<T> model_chunk_fn(const ModelT<T>& model) {
    return [&model](const StdWindow<T>& win) {
        const auto out = model.forward(win.input);
        const int tw = win.input.dim(1);
        const int joints = model.config().joints;
        const int shape_dims = model.config().shape_dims;
        ChunkEstimate<T> est;
        est.joints = joints;
        est.trans.resize(static_cast<size_t>(tw));
        for (int i = 0; i < tw; ++i)
            for (int c = 0; c < 3; ++c)
                est.trans[static_cast<size_t>(i)][static_cast<size_t>(c)] =
                    out.trans.data()[static_cast<size_t>(i * 3 + c)];
        est.rot6d = out.rot6d.data();
        est.shape.assign(out.shape.data().begin(),
                         out.shape.data().begin() + shape_dims);
        return est;
    };
}

namespace {

int64_t peak_rss_bytes() {
    struct rusage usage{};
    if (getrusage(RUSAGE_SELF, &usage) != 0) return -1;
    return static_cast<int64_t>(usage.ru_maxrss) * 1024;  // Linux reports KiB
}

}  // namespace

template <typename T>
OfflineResult run_offline(const ChunkModelFn<T>& model, int keypoints, int joints,
                          int shape_dims, const KeypointSequence& seq, StreamConfig cfg) {
    std::vector<double> forward_times;
    ChunkModelFn<T> timed = [&](const StdWindow<T>& win) {
        const auto t0 = std::chrono::steady_clock::now();
        auto est = model(win);
        forward_times.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        return est;
    };
    StreamEngineT<T> engine(cfg, keypoints, joints, shape_dims, timed);
    OfflineResult result;
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& frame : seq.frames) {
        auto out = engine.push(frame);
        if (out) result.outputs.push_back(std::move(*out));
    }
    result.timing.total_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.timing.frames = seq.length();
    result.timing.forwards = engine.forwards_run();
    result.timing.emitted = static_cast<int64_t>(result.outputs.size());
    if (!forward_times.empty()) {
        double sum = 0;
        for (double t : forward_times) sum += t;
        result.timing.forward_mean_s = sum / static_cast<double>(forward_times.size());
        std::vector<double> sorted = forward_times;
        std::sort(sorted.begin(), sorted.end());
        const size_t idx = std::min(sorted.size() - 1,
                                    static_cast<size_t>(0.95 * static_cast<double>(sorted.size())));
        result.timing.forward_p95_s = sorted[idx];
    }
    result.timing.peak_rss_bytes = peak_rss_bytes();
    return result;
}

template <typename T>
OfflineResult run_offline(const ModelT<T>& model, const KeypointSequence& seq,
                          StreamConfig cfg) {
    return run_offline<T>(model_chunk_fn(model), model.config().keypoints,
                          model.config().joints, model.config().shape_dims, seq, cfg);
}

template class StreamEngineT<float>;
template class StreamEngineT<double>;
template ChunkModelFn<float> model_chunk_fn<float>(const ModelT<float>&);
template ChunkModelFn<double> model_chunk_fn<double>(const ModelT<double>&);
template OfflineResult run_offline<float>(const ChunkModelFn<float>&, int, int, int,
                                          const KeypointSequence&, StreamConfig);
template OfflineResult run_offline<double>(const ChunkModelFn<double>&, int, int, int,
                                           const KeypointSequence&, StreamConfig);
template OfflineResult run_offline<float>(const ModelT<float>&, const KeypointSequence&,
                                          StreamConfig);
template OfflineResult run_offline<double>(const ModelT<double>&, const KeypointSequence&,
                                           StreamConfig);

}  // namespace nik
