#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "nik/datapipe.hpp"
#include "nik/model.hpp"

namespace nik {

enum class StreamMode { kOneByOne, kLookahead, kAveraging };

enum class AveragingWeights { kUniform, kCenterWeighted };

struct StreamConfig {
    StreamMode mode = StreamMode::kAveraging;
    int window = 16;  // L
    int delay = 8;    // d, used by lookahead and averaging
    AveragingWeights weighting = AveragingWeights::kUniform;
    double shape_smoothing = 0.0;  // EMA factor in [0,1); 0 = off

    void validate() const;
};

struct FrameMeta {
    int64_t frame = 0;
    Vec3 centroid = Vec3::Zero();
    double scale = 1.0;
    bool degenerate = false;
};

// Model hook input: the standardized window plus per-slot frame metadata
// (indices and de-standardization statistics). Real models only consume the
// tensor; stub models in tests use the metadata.
template <typename T>
struct StdWindow {
    TensorT<T> input;  // [1, T_w, 3K]
    std::vector<FrameMeta> meta;
};

// Per-window estimates in plain host values. trans is in standardized
// space (relative to each slot's centroid).
template <typename T>
struct ChunkEstimate {
    int joints = 0;
    std::vector<std::array<T, 3>> trans;  // per slot
    std::vector<T> rot6d;                 // T_w * J * 6
    std::vector<T> shape;                 // S
};

template <typename T>
using ChunkModelFn = std::function<ChunkEstimate<T>(const StdWindow<T>&)>;

struct FrameOutput {
    int64_t frame = 0;
    Vec3 translation = Vec3::Zero();  // world: pred * scale + centroid
    std::vector<Mat3> rotations;      // J, re-orthonormalized
    Eigen::VectorXd shape;
    int provenance = 0;  // estimates aggregated into this output
    bool degenerate = false;
};

// Online engine for a single stream. One instance per stream; immutable
// models may be shared by many engines.
template <typename T>
class StreamEngineT {
public:
    StreamEngineT(StreamConfig cfg, int keypoints, int joints, int shape_dims,
                  ChunkModelFn<T> model);

    // Feeds one raw K x 3 keypoint frame; returns at most one output.
    std::optional<FrameOutput> push(const Eigen::MatrixXd& keypoints);

    const StreamConfig& config() const { return cfg_; }
    int64_t frames_pushed() const { return next_frame_; }
    int64_t forwards_run() const { return forwards_; }
    // Estimates currently buffered in averaging bins.
    int64_t pending_estimates() const;

private:
    struct Bin {
        int count = 0;
        double weight = 0;
        Vec3 trans_sum = Vec3::Zero();
        std::vector<double> rot6d_sum;
        Eigen::VectorXd shape_sum;
        bool degenerate = false;
    };

    ChunkEstimate<T> run_model();
    FrameOutput estimate_to_output(const ChunkEstimate<T>& est, int slot, const FrameMeta& meta);
    FrameOutput emit_bin(int64_t frame, const Bin& bin);
    void smooth_shape(FrameOutput& out);
    std::optional<FrameOutput> push_one_by_one();
    std::optional<FrameOutput> push_lookahead();
    std::optional<FrameOutput> push_averaging();

    StreamConfig cfg_;
    int keypoints_;
    int joints_;
    int shape_dims_;
    ChunkModelFn<T> model_;
    std::deque<std::vector<T>> window_;  // standardized frames, 3K each
    std::deque<FrameMeta> meta_;
    std::deque<FrameOutput> queue_;      // lookahead output queue
    std::map<int64_t, Bin> bins_;        // averaging: frame -> partial estimates
    int64_t next_frame_ = 0;
    int64_t next_emit_ = 0;  // averaging: bins below this are freed
    int64_t forwards_ = 0;
    bool have_smoothed_shape_ = false;
    Eigen::VectorXd smoothed_shape_;
};

// Adapter running the trained network (forward-only, no tape).
template <typename T>
ChunkModelFn<T> model_chunk_fn(const ModelT<T>& model);

struct TimingReport {
    int64_t frames = 0;
    int64_t forwards = 0;
    int64_t emitted = 0;
    double total_s = 0;
    double forward_mean_s = 0;
    double forward_p95_s = 0;
    int64_t peak_rss_bytes = -1;  // -1 when the platform does not expose it
};

struct OfflineResult {
    std::vector<FrameOutput> outputs;
    TimingReport timing;
};

// Replays a keypoint sequence through an engine, recording per-push and
// per-forward wall times.
template <typename T>
OfflineResult run_offline(const ChunkModelFn<T>& model, int keypoints, int joints,
                          int shape_dims, const KeypointSequence& seq, StreamConfig cfg);

template <typename T>
OfflineResult run_offline(const ModelT<T>& model, const KeypointSequence& seq, StreamConfig cfg);

extern template class StreamEngineT<float>;
extern template class StreamEngineT<double>;
extern template ChunkModelFn<float> model_chunk_fn<float>(const ModelT<float>&);
extern template ChunkModelFn<double> model_chunk_fn<double>(const ModelT<double>&);
extern template OfflineResult run_offline<float>(const ChunkModelFn<float>&, int, int, int,
                                                 const KeypointSequence&, StreamConfig);
extern template OfflineResult run_offline<double>(const ChunkModelFn<double>&, int, int, int,
                                                  const KeypointSequence&, StreamConfig);
extern template OfflineResult run_offline<float>(const ModelT<float>&, const KeypointSequence&,
                                                 StreamConfig);
extern template OfflineResult run_offline<double>(const ModelT<double>&,
                                                  const KeypointSequence&, StreamConfig);

}  // namespace nik
