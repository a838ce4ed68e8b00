#include "nik/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "nik/rng.hpp"

namespace nik {

namespace fs = std::filesystem;

template <typename T>
void TrainConfigT<T>::validate() const {
    if (epochs < 1) throw ContractViolation("train config: epochs must be >= 1");
    if (warm_epochs < 0 || warm_epochs >= epochs)
        throw ContractViolation("train config: warm_epochs must be in [0, epochs)");
    if (!(val_fraction > 0 && val_fraction < 1))
        throw ContractViolation("train config: val_fraction must be in (0, 1)");
    if (batch_size < 1) throw ContractViolation("train config: batch_size must be >= 1");
    if (lr_warm <= 0 || lr_hi <= 0 || lr_lo <= 0)
        throw ContractViolation("train config: learning rates must be positive");
    chunker.validate();
}

template <typename T>
T lr_schedule(int epoch, const TrainConfigT<T>& cfg) {
    if (epoch < 0 || epoch >= cfg.epochs)
        throw ContractViolation("lr_schedule: epoch " + std::to_string(epoch) +
                                " outside [0, " + std::to_string(cfg.epochs) + ")");
    if (epoch < cfg.warm_epochs) return cfg.lr_warm;
    const int span = cfg.epochs - cfg.warm_epochs - 1;
    if (span <= 0) return cfg.lr_hi;
    const double p = static_cast<double>(epoch - cfg.warm_epochs) / span;
    return static_cast<T>(cfg.lr_hi * std::pow(cfg.lr_lo / cfg.lr_hi, static_cast<T>(p)));
}

TrainValSplit split_train_val(int n_motions, double val_fraction, uint64_t seed) {
    TrainValSplit split;
    if (n_motions < 1) throw ContractViolation("split_train_val: no motions");
    int n_val = static_cast<int>(std::ceil(val_fraction * n_motions));
    n_val = std::min(n_val, n_motions - 1);  // training never empty
    if (n_motions == 1) n_val = 0;
    std::vector<int> ids(static_cast<size_t>(n_motions));
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(seed ^ 0x73706c6974ULL);
    for (int i = n_motions - 1; i > 0; --i)
        std::swap(ids[static_cast<size_t>(i)],
                  ids[static_cast<size_t>(rng.uniform_int(0, i + 1))]);
    split.val_ids.assign(ids.begin(), ids.begin() + n_val);
    split.train_ids.assign(ids.begin() + n_val, ids.end());
    std::sort(split.val_ids.begin(), split.val_ids.end());
    std::sort(split.train_ids.begin(), split.train_ids.end());
    return split;
}

template <typename T>
PreparedMotionT<T> prepare_motion(const MotionSequence& motion, const Skeleton& skel,
                                  const ChunkerConfig& chunker) {
    const TrainingPair pair = make_training_pairs(motion, skel);
    PreparedMotionT<T> prep;
    prep.frames = motion.length();
    prep.keypoints = skel.keypoints();
    prep.joints = skel.joints();
    const int k3 = 3 * prep.keypoints;
    prep.std_kp.resize(static_cast<size_t>(prep.frames) * k3);
    prep.scales.resize(static_cast<size_t>(prep.frames));
    prep.true_rot.resize(static_cast<size_t>(prep.frames) * prep.joints * 9);
    for (int f = 0; f < prep.frames; ++f) {
        const StandardizedFrame std_frame =
            standardize(pair.keypoints.frames[static_cast<size_t>(f)]);
        for (int kp = 0; kp < prep.keypoints; ++kp)
            for (int c = 0; c < 3; ++c)
                prep.std_kp[static_cast<size_t>(f) * k3 + 3 * kp + c] =
                    static_cast<T>(std_frame.keypoints(kp, c));
        prep.scales[static_cast<size_t>(f)] = static_cast<T>(std_frame.scale);
        for (int j = 0; j < prep.joints; ++j) {
            const Mat3& rot =
                pair.targets.rotations[static_cast<size_t>(f)][static_cast<size_t>(j)];
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c)
                    prep.true_rot[((static_cast<size_t>(f) * prep.joints + j) * 3 + r) * 3 + c] =
                        static_cast<T>(rot(r, c));
        }
    }
    prep.spans = chunk_spans(prep.frames, chunker);
    return prep;
}

template <typename T>
TrainingBatch<T> make_batch(const std::vector<PreparedMotionT<T>>& motions,
                            const std::vector<ChunkRef>& refs, const ChunkerConfig& chunker) {
    if (refs.empty()) throw ContractViolation("make_batch: empty batch");
    const int B = static_cast<int>(refs.size());
    const int L = chunker.length;
    const int k3 = 3 * motions[0].keypoints;
    const int J = motions[0].joints;
    std::vector<T> inputs(static_cast<size_t>(B) * L * k3);
    std::vector<T> rot(static_cast<size_t>(B) * L * J * 9);
    std::vector<T> scales(static_cast<size_t>(B) * L);
    for (int b = 0; b < B; ++b) {
        const auto& prep = motions[static_cast<size_t>(refs[static_cast<size_t>(b)].motion)];
        const auto& span = prep.spans[static_cast<size_t>(refs[static_cast<size_t>(b)].span)];
        const auto indices = chunk_frame_indices(span, chunker);
        for (int i = 0; i < L; ++i) {
            const int f = indices[static_cast<size_t>(i)];
            std::copy_n(prep.std_kp.data() + static_cast<size_t>(f) * k3, k3,
                        inputs.data() + (static_cast<size_t>(b) * L + i) * k3);
            std::copy_n(prep.true_rot.data() + static_cast<size_t>(f) * J * 9,
                        static_cast<size_t>(J) * 9,
                        rot.data() + (static_cast<size_t>(b) * L + i) * J * 9);
            scales[static_cast<size_t>(b) * L + i] = prep.scales[static_cast<size_t>(f)];
        }
    }
    TrainingBatch<T> batch;
    batch.inputs = TensorT<T>::from_data({B, L, k3}, std::move(inputs));
    batch.true_rot = TensorT<T>::from_data({B, L, J, 3, 3}, std::move(rot));
    batch.scales = TensorT<T>::from_data({B, L}, std::move(scales));
    return batch;
}

template <typename T>
void rotate_training_batch(TrainingBatch<T>& batch, double angle) {
    const Mat3 rz = rot_z(angle);
    auto& in = batch.inputs.data();
    for (size_t i = 0; i + 3 <= in.size(); i += 3) {
        const Vec3 v = rz * Vec3(static_cast<double>(in[i]), static_cast<double>(in[i + 1]),
                                 static_cast<double>(in[i + 2]));
        in[i] = static_cast<T>(v.x());
        in[i + 1] = static_cast<T>(v.y());
        in[i + 2] = static_cast<T>(v.z());
    }
    // Only the root target rotation changes under a world Z rotation.
    const int B = batch.true_rot.dim(0);
    const int L = batch.true_rot.dim(1);
    const int J = batch.true_rot.dim(2);
    auto& tr = batch.true_rot.data();
    for (int b = 0; b < B; ++b)
        for (int f = 0; f < L; ++f) {
            T* m = tr.data() + ((static_cast<size_t>(b) * L + f) * J) * 9;
            Mat3 root;
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) root(r, c) = static_cast<double>(m[r * 3 + c]);
            const Mat3 rotated = rz * root;
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) m[r * 3 + c] = static_cast<T>(rotated(r, c));
        }
}

namespace {

template <typename T>
LossScalars to_scalars(const LossBreakdownT<T>& parts) {
    return {static_cast<double>(parts.geodesic), static_cast<double>(parts.orthonormality),
            static_cast<double>(parts.cycle), static_cast<double>(parts.total)};
}

LossScalars batch_average(const std::vector<std::pair<LossScalars, int>>& entries) {
    LossScalars avg;
    int total = 0;
    for (const auto& [s, n] : entries) {
        avg.geodesic += s.geodesic * n;
        avg.orthonormality += s.orthonormality * n;
        avg.cycle += s.cycle * n;
        avg.total += s.total * n;
        total += n;
    }
    if (total > 0) {
        avg.geodesic /= total;
        avg.orthonormality /= total;
        avg.cycle /= total;
        avg.total /= total;
    }
    return avg;
}

template <typename T>
void clip_gradients(const std::vector<TensorT<T>>& params, T clip_norm) {
    double sq = 0;
    for (const auto& p : params)
        for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(sq);
    if (norm <= static_cast<double>(clip_norm)) return;
    const T factor = static_cast<T>(static_cast<double>(clip_norm) / norm);
    for (auto p : params)
        for (auto& g : p.grad()) g *= factor;
}

void append_metrics_line(const std::string& path, const EpochMetrics& m) {
    if (path.empty()) return;
    nlohmann::json line = {
        {"epoch", m.epoch},
        {"lr", m.lr},
        {"train", {{"geodesic", m.train.geodesic},
                   {"orthonormality", m.train.orthonormality},
                   {"cycle", m.train.cycle},
                   {"total", m.train.total}}},
        {"wall_s", m.wall_s}};
    if (m.has_val)
        line["val"] = {{"geodesic", m.val.geodesic},
                       {"orthonormality", m.val.orthonormality},
                       {"cycle", m.val.cycle},
                       {"total", m.val.total}};
    std::ofstream out(path, std::ios::app);
    out << line.dump() << '\n';
}

}  // namespace

template <typename T>
TrainResultT<T> train(const ModelConfig& mcfg, const TrainConfigT<T>& tcfg,
                      const Skeleton& skel, const std::vector<MotionSequence>& motions,
                      const std::string& out_dir, const EpochCallback<T>& on_epoch) {
    tcfg.validate();
    mcfg.validate();
    if (motions.empty()) throw DataError("train: empty dataset");
    if (mcfg.max_len < tcfg.chunker.length)
        throw ContractViolation("train: model max_len below chunk length");

    const SkeletonGraphT<T> skel_graph = SkeletonGraphT<T>::from(skel);

    std::vector<PreparedMotionT<T>> prepared;
    prepared.reserve(motions.size());
    for (const auto& m : motions) {
        const MotionSequence* src = &m;
        MotionSequence resampled;
        if (tcfg.target_fps > 0 && m.fps != tcfg.target_fps) {
            resampled = resample(m, tcfg.target_fps);
            src = &resampled;
        }
        prepared.push_back(prepare_motion<T>(*src, skel, tcfg.chunker));
    }

    const TrainValSplit split =
        split_train_val(static_cast<int>(motions.size()), tcfg.val_fraction, tcfg.seed);
    std::vector<ChunkRef> train_chunks, val_chunks;
    for (int id : split.train_ids)
        for (int s = 0; s < static_cast<int>(prepared[static_cast<size_t>(id)].spans.size());
             ++s)
            train_chunks.push_back({id, s});
    for (int id : split.val_ids)
        for (int s = 0; s < static_cast<int>(prepared[static_cast<size_t>(id)].spans.size());
             ++s)
            val_chunks.push_back({id, s});
    if (train_chunks.empty()) throw DataError("train: dataset yields no training chunks");

    TrainResultT<T> result{ModelT<T>::init(mcfg, tcfg.seed), {}, -1,
                           std::numeric_limits<double>::infinity(), "", ""};
    ModelT<T>& model = result.model;
    AdamT<T> opt(model.parameter_tensors());

    std::string metrics_path;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        metrics_path = (fs::path(out_dir) / "metrics.ndjson").string();
        std::ofstream(metrics_path, std::ios::trunc);
    }

    Rng epoch_rng(tcfg.seed ^ 0x65706f6368ULL);
    bool stop = false;
    for (int epoch = 0; epoch < tcfg.epochs && !stop; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const T lr = lr_schedule(epoch, tcfg);

        for (int i = static_cast<int>(train_chunks.size()) - 1; i > 0; --i)
            std::swap(train_chunks[static_cast<size_t>(i)],
                      train_chunks[static_cast<size_t>(epoch_rng.uniform_int(0, i + 1))]);

        std::vector<std::pair<LossScalars, int>> train_losses;
        for (size_t start = 0; start < train_chunks.size();
             start += static_cast<size_t>(tcfg.batch_size)) {
            const size_t end =
                std::min(train_chunks.size(), start + static_cast<size_t>(tcfg.batch_size));
            std::vector<ChunkRef> refs(train_chunks.begin() + static_cast<long>(start),
                                       train_chunks.begin() + static_cast<long>(end));
            TrainingBatch<T> batch = make_batch(prepared, refs, tcfg.chunker);
            // One angle per batch, matching the paper's batch-level rotation.
            if (tcfg.rotation_augmentation)
                rotate_training_batch(batch, epoch_rng.uniform(0.0, 2.0 * M_PI));

            TapeT<T> tape;
            TotalLossT<T> loss;
            {
                TapeScopeT<T> scope(tape);
                auto out = model.forward(batch.inputs);
                loss = total_loss(skel_graph, out.shape, out.rot6d, out.trans, batch.true_rot,
                                  batch.keypoints_view(), tcfg.loss, batch.scales);
            }
            if (!std::isfinite(loss.parts.total))
                throw NumericalFault("non-finite training loss at epoch " +
                                     std::to_string(epoch));
            opt.zero_grad();
            tape.backward(loss.value);
            if (tcfg.clip_norm > 0) clip_gradients(opt.params(), tcfg.clip_norm);
            opt.step(lr);
            train_losses.push_back({to_scalars(loss.parts), static_cast<int>(refs.size())});
        }

        EpochMetrics metrics;
        metrics.epoch = epoch;
        metrics.lr = static_cast<double>(lr);
        metrics.train = batch_average(train_losses);

        if (!val_chunks.empty()) {
            std::vector<std::pair<LossScalars, int>> val_losses;
            for (size_t start = 0; start < val_chunks.size();
                 start += static_cast<size_t>(tcfg.batch_size)) {
                const size_t end =
                    std::min(val_chunks.size(), start + static_cast<size_t>(tcfg.batch_size));
                std::vector<ChunkRef> refs(val_chunks.begin() + static_cast<long>(start),
                                           val_chunks.begin() + static_cast<long>(end));
                TrainingBatch<T> batch = make_batch(prepared, refs, tcfg.chunker);
                auto out = model.forward(batch.inputs);
                TotalLossT<T> loss =
                    total_loss(skel_graph, out.shape, out.rot6d, out.trans, batch.true_rot,
                               batch.keypoints_view(), tcfg.loss, batch.scales);
                val_losses.push_back({to_scalars(loss.parts), static_cast<int>(refs.size())});
            }
            metrics.val = batch_average(val_losses);
            metrics.has_val = true;
        }

        metrics.wall_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        append_metrics_line(metrics_path, metrics);
        result.log.push_back(metrics);

        if (!out_dir.empty()) {
            if ((epoch + 1) % std::max(1, tcfg.checkpoint_every) == 0)
                model.save((fs::path(out_dir) / ("ckpt_epoch" + std::to_string(epoch) + ".nik"))
                               .string());
            if (metrics.has_val && metrics.val.total < result.best_val) {
                result.best_path = (fs::path(out_dir) / "best.nik").string();
                model.save(result.best_path);
            }
        }
        if (metrics.has_val && metrics.val.total < result.best_val) {
            result.best_val = metrics.val.total;
            result.best_epoch = epoch;
        }

        if (on_epoch && !on_epoch(metrics, model)) stop = true;
    }

    if (!out_dir.empty()) {
        result.final_path = (fs::path(out_dir) / "final.nik").string();
        model.save(result.final_path);
    }
    return result;
}

template <typename T>
ChunkAblationResult run_chunk_ablation(ModelConfig mcfg, TrainConfigT<T> tcfg,
                                       const Skeleton& skel,
                                       const std::vector<MotionSequence>& motions,
                                       const std::vector<int>& lengths) {
    if (lengths.empty()) throw ContractViolation("chunk ablation: no lengths");
    for (int l : lengths) mcfg.max_len = std::max(mcfg.max_len, l);
    ChunkAblationResult result;
    result.lengths = lengths;
    for (int l : lengths) {
        TrainConfigT<T> run_cfg = tcfg;
        run_cfg.chunker.length = l;
        run_cfg.chunker.stride = 0;    // derive L/2
        run_cfg.chunker.min_keep = 0;  // derive L/2
        auto run = train<T>(mcfg, run_cfg, skel, motions);
        result.logs.push_back(std::move(run.log));
    }
    return result;
}

template <typename T>
RotationAblationResult run_rotation_ablation(const ModelConfig& mcfg, TrainConfigT<T> tcfg,
                                             const Skeleton& skel,
                                             const std::vector<MotionSequence>& motions) {
    RotationAblationResult result;
    tcfg.rotation_augmentation = true;
    result.with_rotation = train<T>(mcfg, tcfg, skel, motions).log;
    tcfg.rotation_augmentation = false;
    result.without_rotation = train<T>(mcfg, tcfg, skel, motions).log;
    const auto gap = [](const std::vector<EpochMetrics>& log) {
        if (log.empty() || !log.back().has_val) return 0.0;
        return log.back().val.total - log.back().train.total;
    };
    result.final_gap_with = gap(result.with_rotation);
    result.final_gap_without = gap(result.without_rotation);
    return result;
}

template <typename T>
FitMetrics evaluate_fit(const ModelT<T>& model, const Skeleton& skel,
                        const MotionSequence& motion, const ChunkerConfig& chunker) {
    const PreparedMotionT<T> prep = prepare_motion<T>(motion, skel, chunker);
    const TrainingPair pair = make_training_pairs(motion, skel);
    const int J = skel.joints();
    const int K = skel.keypoints();
    double geo_sum = 0;
    int geo_count = 0;
    double mpjpe_sum = 0;
    int kp_count = 0;
    const std::vector<PreparedMotionT<T>> one{prep};
    for (size_t si = 0; si < prep.spans.size(); ++si) {
        std::vector<ChunkRef> refs{{0, static_cast<int>(si)}};
        const TrainingBatch<T> batch = make_batch(one, refs, chunker);
        const auto out = model.forward(batch.inputs);
        const auto indices = chunk_frame_indices(prep.spans[si], chunker);
        Eigen::VectorXd shape(skel.shape_dims());
        for (int s = 0; s < skel.shape_dims(); ++s)
            shape(s) = static_cast<double>(out.shape.data()[static_cast<size_t>(s)]);
        for (int i = 0; i < chunker.length; ++i) {
            const int f = indices[static_cast<size_t>(i)];
            Pose pred_pose;
            pred_pose.translation =
                Vec3(out.trans.data()[static_cast<size_t>(i * 3 + 0)],
                     out.trans.data()[static_cast<size_t>(i * 3 + 1)],
                     out.trans.data()[static_cast<size_t>(i * 3 + 2)]);
            pred_pose.rotations.resize(static_cast<size_t>(J));
            for (int j = 0; j < J; ++j) {
                const size_t base = (static_cast<size_t>(i) * J + j) * 6;
                Rot6d r;
                r.a = Vec3(out.rot6d.data()[base + 0], out.rot6d.data()[base + 1],
                           out.rot6d.data()[base + 2]);
                r.b = Vec3(out.rot6d.data()[base + 3], out.rot6d.data()[base + 4],
                           out.rot6d.data()[base + 5]);
                pred_pose.rotations[static_cast<size_t>(j)] = r;
                geo_sum += geodesic_distance(
                    rot6d_to_matrix(r),
                    pair.targets.rotations[static_cast<size_t>(f)][static_cast<size_t>(j)]);
                ++geo_count;
            }
            // Both sides in the per-frame centered frame: predictions are
            // trained there; ground truth keypoints are centered by their
            // own centroid.
            const FkResult fk = forward_kinematics(skel, shape, pred_pose);
            const Eigen::MatrixXd pred_kp = regress_keypoints(skel, fk.positions);
            const Eigen::MatrixXd& true_kp = pair.keypoints.frames[static_cast<size_t>(f)];
            const Eigen::RowVector3d true_centroid = true_kp.colwise().mean();
            for (int kp = 0; kp < K; ++kp) {
                const Eigen::RowVector3d diff =
                    pred_kp.row(kp) - (true_kp.row(kp) - true_centroid);
                mpjpe_sum += diff.norm();
                ++kp_count;
            }
        }
    }
    FitMetrics fit;
    fit.mean_geodesic_rad = geo_count ? geo_sum / geo_count : 0;
    fit.keypoint_mpjpe_m = kp_count ? mpjpe_sum / kp_count : 0;
    return fit;
}

#define NIK_TRAINING_INSTANTIATE(T)                                                          \
    template struct TrainConfigT<T>;                                                         \
    template T lr_schedule<T>(int, const TrainConfigT<T>&);                                  \
    template PreparedMotionT<T> prepare_motion<T>(const MotionSequence&, const Skeleton&,    \
                                                  const ChunkerConfig&);                     \
    template TrainingBatch<T> make_batch<T>(const std::vector<PreparedMotionT<T>>&,          \
                                            const std::vector<ChunkRef>&,                   \
                                            const ChunkerConfig&);                          \
    template void rotate_training_batch<T>(TrainingBatch<T>&, double);                      \
    template TrainResultT<T> train<T>(const ModelConfig&, const TrainConfigT<T>&,           \
                                      const Skeleton&, const std::vector<MotionSequence>&,  \
                                      const std::string&, const EpochCallback<T>&);         \
    template ChunkAblationResult run_chunk_ablation<T>(                                     \
        ModelConfig, TrainConfigT<T>, const Skeleton&, const std::vector<MotionSequence>&,  \
        const std::vector<int>&);                                                           \
    template RotationAblationResult run_rotation_ablation<T>(                               \
        const ModelConfig&, TrainConfigT<T>, const Skeleton&,                               \
        const std::vector<MotionSequence>&);                                                \
    template FitMetrics evaluate_fit<T>(const ModelT<T>&, const Skeleton&,                  \
                                        const MotionSequence&, const ChunkerConfig&);
NIK_TRAINING_INSTANTIATE(float)
NIK_TRAINING_INSTANTIATE(double)
#undef NIK_TRAINING_INSTANTIATE

}  // namespace nik
