#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nik/kinematics.hpp"

namespace nik {

struct MotionSequence {
    double fps = 30.0;
    Eigen::VectorXd shape;     // S
    std::vector<Pose> frames;  // per frame root translation + J local rot6d

    int length() const { return static_cast<int>(frames.size()); }
};

struct KeypointSequence {
    double fps = 30.0;
    std::vector<Eigen::MatrixXd> frames;  // each K x 3, meters, world frame

    int length() const { return static_cast<int>(frames.size()); }
};

// Nearest-index decimation; rotations are never interpolated.
MotionSequence resample(const MotionSequence& m, double target_fps);
KeypointSequence resample(const KeypointSequence& k, double target_fps);

struct ChunkerConfig {
    int length = 16;
    int stride = 0;    // 0: length / 2
    int min_keep = 0;  // 0: length / 2

    int effective_stride() const { return stride > 0 ? stride : std::max(1, length / 2); }
    int effective_min_keep() const { return min_keep > 0 ? min_keep : std::max(1, length / 2); }
    void validate() const;
};

// A window [start, start + true_len) padded to the configured length by
// repeating the final frame.
struct ChunkSpan {
    int start = 0;
    int true_len = 0;
};

// Sliding windows at multiples of the stride; full windows first, then a
// single final segment of at least min_keep frames (ties kept), shorter
// tails discarded.
std::vector<ChunkSpan> chunk_spans(int total_frames, const ChunkerConfig& cfg);

// Frame indices of a padded window, length cfg.length.
std::vector<int> chunk_frame_indices(const ChunkSpan& span, const ChunkerConfig& cfg);

struct StandardizedFrame {
    Eigen::MatrixXd keypoints;  // K x 3, zero mean per axis, unit combined std
    Vec3 centroid = Vec3::Zero();
    double scale = 1.0;
    bool degenerate = false;  // all keypoints coincident; scale clamped
};

// Per-frame standardization: subtract the per-axis mean, divide by the
// combined std over all 3K coordinates.
StandardizedFrame standardize(const Eigen::MatrixXd& frame);

// Same scale as standardize but the mean is NOT subtracted.
Eigen::MatrixXd scale_only(const Eigen::MatrixXd& frame);

// Z is up: keypoints and root translations rotate by Rz(angle), the root
// joint rotation is pre-multiplied, non-root rotations are untouched.
KeypointSequence rotate_z(const KeypointSequence& seq, double angle);
MotionSequence rotate_z(const MotionSequence& seq, double angle);
Eigen::MatrixXd rotate_z_frame(const Eigen::MatrixXd& frame, double angle);

struct SynthConfig {
    double max_total_amplitude = 1.0;  // rad, sum over sinusoids per joint
    double max_freq_hz = 0.4;
    int max_sinusoids = 3;
    double shape_scale = 0.7;          // shape ~ U[-scale, scale]
    double root_amplitude = 0.35;      // m
    double root_freq_hz = 0.25;
    double base_height = 0.95;         // pelvis above ground, m
    // End effectors (no dependent keypoints) move less; keeps their
    // rotations closer to predictable.
    double leaf_amplitude_scale = 0.25;
    // Root yaw is drawn from [-band/2, band/2]; 2*pi means unbiased.
    double orientation_band = 6.283185307179586;
    double keypoint_noise_std = 0.0;   // off by default
};

// Deterministic in seed. Per-joint axis-angle trajectories are sums of 1-3
// low-frequency sinusoids; the root follows a smooth low-frequency path.
MotionSequence synthesize_motion(const Skeleton& skel, uint64_t seed, int frames, double fps,
                                 const SynthConfig& cfg = {});

struct TrainingTargets {
    Eigen::VectorXd shape;
    std::vector<Vec3> rel_translation;          // true translation minus keypoint centroid
    std::vector<std::vector<Mat3>> rotations;   // per frame, per joint local rotation
};

struct TrainingPair {
    KeypointSequence keypoints;  // raw world keypoints from FK + regressor
    TrainingTargets targets;
};

TrainingPair make_training_pairs(const MotionSequence& motion, const Skeleton& skel,
                                 const SynthConfig* noise_cfg = nullptr, uint64_t seed = 0);

// ---- file formats ----
// Whole-document JSON:
//   motion:    {meta:{version,fps}, shape:[S], frames:[{trans:[3], rot6d:[[6] x J]}]}
//   keypoints: {meta:{version,fps}, frames:[[[x,y,z] x K]]}
// Streaming variant: a single header line {"stream":..., "version":..,
// "fps":..} followed by one frame per line. Loaders detect the variant.
void save_motion(const std::string& path, const MotionSequence& m);
MotionSequence load_motion(const std::string& path);
void save_keypoints(const std::string& path, const KeypointSequence& k);
void save_keypoints_stream(const std::string& path, const KeypointSequence& k);
KeypointSequence load_keypoints(const std::string& path);

// Incremental reader for the streaming keypoint format (files or stdin).
class KeypointStreamReader {
public:
    explicit KeypointStreamReader(std::istream& in);
    double fps() const { return fps_; }
    int keypoints_per_frame() const { return keypoints_; }
    // nullopt at end of stream.
    std::optional<Eigen::MatrixXd> next();

private:
    std::istream& in_;
    double fps_ = 30.0;
    int keypoints_ = 0;
    int line_no_ = 1;
};

}  // namespace nik
