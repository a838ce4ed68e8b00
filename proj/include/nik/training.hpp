#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nik/adam.hpp"
#include "nik/datapipe.hpp"
#include "nik/losses.hpp"
#include "nik/model.hpp"

namespace nik {

template <typename T>
struct TrainConfigT {
    int epochs = 100;
    T lr_warm = T(1e-3);
    int warm_epochs = 10;
    T lr_hi = T(1e-4);
    T lr_lo = T(1e-5);
    int batch_size = 64;
    ChunkerConfig chunker{};          // length 16, stride L/2, min_keep L/2
    double val_fraction = 0.05;
    uint64_t seed = 0;
    int checkpoint_every = 25;
    bool rotation_augmentation = true;
    T clip_norm = T(0);               // 0: off; recovery knob for NumericalFault
    double target_fps = 30.0;         // 0: keep source rate
    LossConfigT<T> loss{};

    void validate() const;
};

// Warm rate for the first warm_epochs, then geometric decay from lr_hi to
// lr_lo over the remaining epochs.
template <typename T>
T lr_schedule(int epoch, const TrainConfigT<T>& cfg);

// Motion-level split; validation never receives chunks from training
// motions. n == 1 keeps everything in training.
struct TrainValSplit {
    std::vector<int> train_ids;
    std::vector<int> val_ids;
};
TrainValSplit split_train_val(int n_motions, double val_fraction, uint64_t seed);

// Host-side, per-frame prepared supervision for one motion.
template <typename T>
struct PreparedMotionT {
    int frames = 0;
    int keypoints = 0;
    int joints = 0;
    std::vector<T> std_kp;    // frames x 3K
    std::vector<T> scales;    // frames
    std::vector<T> true_rot;  // frames x J x 9
    std::vector<ChunkSpan> spans;
};

template <typename T>
PreparedMotionT<T> prepare_motion(const MotionSequence& motion, const Skeleton& skel,
                                  const ChunkerConfig& chunker);

template <typename T>
struct TrainingBatch {
    TensorT<T> inputs;    // [B, L, 3K]
    TensorT<T> true_rot;  // [B, L, J, 3, 3]
    TensorT<T> scales;    // [B, L]

    // Same standardized keypoints viewed as [B, L, K, 3] for the cycle loss.
    TensorT<T> keypoints_view() const {
        const int b = inputs.dim(0), l = inputs.dim(1), k3 = inputs.dim(2);
        return reshape(inputs, {b, l, k3 / 3, 3});
    }
};

struct ChunkRef {
    int motion = 0;
    int span = 0;
};

template <typename T>
TrainingBatch<T> make_batch(const std::vector<PreparedMotionT<T>>& motions,
                            const std::vector<ChunkRef>& refs, const ChunkerConfig& chunker);

// Rotates a batch coherently about Z: inputs (standardized keypoints) and
// the root target rotations; non-root targets are unaffected.
template <typename T>
void rotate_training_batch(TrainingBatch<T>& batch, double angle);

struct LossScalars {
    double geodesic = 0, orthonormality = 0, cycle = 0, total = 0;
};

struct EpochMetrics {
    int epoch = 0;
    double lr = 0;
    LossScalars train;
    LossScalars val;
    bool has_val = false;
    double wall_s = 0;
};

template <typename T>
struct TrainResultT {
    ModelT<T> model;
    std::vector<EpochMetrics> log;
    int best_epoch = -1;
    double best_val = 0;
    std::string best_path;   // empty when no out_dir / no validation
    std::string final_path;  // empty when no out_dir
};

// Returning false from the callback stops training after that epoch.
template <typename T>
using EpochCallback = std::function<bool(const EpochMetrics&, const ModelT<T>&)>;

template <typename T>
TrainResultT<T> train(const ModelConfig& mcfg, const TrainConfigT<T>& tcfg,
                      const Skeleton& skel, const std::vector<MotionSequence>& motions,
                      const std::string& out_dir = "",
                      const EpochCallback<T>& on_epoch = {});

// One training run per chunk length, sharing seed, data and model config,
// so the validation curves are directly comparable.
struct ChunkAblationResult {
    std::vector<int> lengths;
    std::vector<std::vector<EpochMetrics>> logs;
};

template <typename T>
ChunkAblationResult run_chunk_ablation(ModelConfig mcfg, TrainConfigT<T> tcfg,
                                       const Skeleton& skel,
                                       const std::vector<MotionSequence>& motions,
                                       const std::vector<int>& lengths);

// Two runs from identical initial weights differing only in the rotation
// augmentation flag. Gaps are final-epoch val minus train total loss.
struct RotationAblationResult {
    std::vector<EpochMetrics> with_rotation;
    std::vector<EpochMetrics> without_rotation;
    double final_gap_with = 0;
    double final_gap_without = 0;
};

template <typename T>
RotationAblationResult run_rotation_ablation(const ModelConfig& mcfg, TrainConfigT<T> tcfg,
                                             const Skeleton& skel,
                                             const std::vector<MotionSequence>& motions);

// Reconstruction quality of a trained model against ground truth, evaluated
// over all chunks of a motion: mean per-joint geodesic error and keypoint
// MPJPE with both sides expressed in the per-frame centered frame.
struct FitMetrics {
    double mean_geodesic_rad = 0;
    double keypoint_mpjpe_m = 0;
};

template <typename T>
FitMetrics evaluate_fit(const ModelT<T>& model, const Skeleton& skel,
                        const MotionSequence& motion, const ChunkerConfig& chunker);

#define NIK_TRAINING_EXTERN(T)                                                               \
    extern template T lr_schedule<T>(int, const TrainConfigT<T>&);                           \
    extern template PreparedMotionT<T> prepare_motion<T>(const MotionSequence&,              \
                                                         const Skeleton&,                   \
                                                         const ChunkerConfig&);             \
    extern template TrainingBatch<T> make_batch<T>(const std::vector<PreparedMotionT<T>>&,  \
                                                   const std::vector<ChunkRef>&,            \
                                                   const ChunkerConfig&);                   \
    extern template void rotate_training_batch<T>(TrainingBatch<T>&, double);               \
    extern template TrainResultT<T> train<T>(const ModelConfig&, const TrainConfigT<T>&,    \
                                             const Skeleton&,                              \
                                             const std::vector<MotionSequence>&,            \
                                             const std::string&, const EpochCallback<T>&);  \
    extern template ChunkAblationResult run_chunk_ablation<T>(                              \
        ModelConfig, TrainConfigT<T>, const Skeleton&, const std::vector<MotionSequence>&,  \
        const std::vector<int>&);                                                           \
    extern template RotationAblationResult run_rotation_ablation<T>(                        \
        const ModelConfig&, TrainConfigT<T>, const Skeleton&,                               \
        const std::vector<MotionSequence>&);                                                \
    extern template FitMetrics evaluate_fit<T>(const ModelT<T>&, const Skeleton&,           \
                                               const MotionSequence&, const ChunkerConfig&);
NIK_TRAINING_EXTERN(float)
NIK_TRAINING_EXTERN(double)
#undef NIK_TRAINING_EXTERN

}  // namespace nik
