#include "nik/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>

#include "json.hpp"
#include "nik/rng.hpp"

namespace nik {

using nlohmann::json;

// ------------------------------------------------------------------ resample

namespace {

std::vector<int> decimation_indices(int total, double src_fps, double target_fps) {
    if (target_fps > src_fps)
        throw UpsampleUnsupported("resample: target fps " + std::to_string(target_fps) +
                                  " above source fps " + std::to_string(src_fps));
    if (target_fps <= 0 || src_fps <= 0)
        throw ContractViolation("resample: fps must be positive");
    const double step = src_fps / target_fps;
    std::vector<int> indices;
    for (int k = 0;; ++k) {
        const int idx = static_cast<int>(std::llround(k * step));
        if (idx >= total) break;
        indices.push_back(idx);
    }
    return indices;
}

}  // namespace

MotionSequence resample(const MotionSequence& m, double target_fps) {
    MotionSequence out;
    out.fps = target_fps;
    out.shape = m.shape;
    for (int idx : decimation_indices(m.length(), m.fps, target_fps))
        out.frames.push_back(m.frames[static_cast<size_t>(idx)]);
    return out;
}

KeypointSequence resample(const KeypointSequence& k, double target_fps) {
    KeypointSequence out;
    out.fps = target_fps;
    for (int idx : decimation_indices(k.length(), k.fps, target_fps))
        out.frames.push_back(k.frames[static_cast<size_t>(idx)]);
    return out;
}

// ------------------------------------------------------------------ chunking

void ChunkerConfig::validate() const {
    if (length < 1) throw ContractViolation("chunker: length must be >= 1");
    if (effective_stride() > length || effective_stride() < 1)
        throw ContractViolation("chunker: stride must be in (0, length]");
    if (effective_min_keep() > length || effective_min_keep() < 1)
        throw ContractViolation("chunker: min_keep must be in (0, length]");
}

std::vector<ChunkSpan> chunk_spans(int total_frames, const ChunkerConfig& cfg) {
    cfg.validate();
    std::vector<ChunkSpan> spans;
    const int stride = cfg.effective_stride();
    const int keep = cfg.effective_min_keep();
    for (int start = 0;; start += stride) {
        if (start + cfg.length <= total_frames) {
            spans.push_back({start, cfg.length});
            continue;
        }
        // Final segment: kept (padded later) when it still has min_keep
        // frames, ties included; otherwise discarded.
        if (start < total_frames && total_frames - start >= keep)
            spans.push_back({start, total_frames - start});
        break;
    }
    return spans;
}

std::vector<int> chunk_frame_indices(const ChunkSpan& span, const ChunkerConfig& cfg) {
    std::vector<int> indices(static_cast<size_t>(cfg.length));
    for (int i = 0; i < cfg.length; ++i)
        indices[static_cast<size_t>(i)] = span.start + std::min(i, span.true_len - 1);
    return indices;
}

// ------------------------------------------------------------ standardization

StandardizedFrame standardize(const Eigen::MatrixXd& frame) {
    if (frame.rows() < 2 || frame.cols() != 3)
        throw ContractViolation("standardize: frame must be K x 3 with K >= 2");
    StandardizedFrame out;
    out.centroid = frame.colwise().mean().transpose();
    Eigen::MatrixXd centered = frame.rowwise() - out.centroid.transpose();
    const double raw_scale =
        std::sqrt(centered.squaredNorm() / static_cast<double>(frame.size()));
    out.degenerate = raw_scale < 1e-8;
    out.scale = std::max(raw_scale, 1e-8);
    out.keypoints = centered / out.scale;
    return out;
}

Eigen::MatrixXd scale_only(const Eigen::MatrixXd& frame) {
    if (frame.rows() < 2 || frame.cols() != 3)
        throw ContractViolation("scale_only: frame must be K x 3 with K >= 2");
    const Eigen::RowVector3d centroid = frame.colwise().mean();
    const Eigen::MatrixXd centered = frame.rowwise() - centroid;
    const double scale =
        std::max(std::sqrt(centered.squaredNorm() / static_cast<double>(frame.size())), 1e-8);
    return frame / scale;
}

// ------------------------------------------------------------------ rotation

Eigen::MatrixXd rotate_z_frame(const Eigen::MatrixXd& frame, double angle) {
    return frame * rot_z(angle).transpose();
}

KeypointSequence rotate_z(const KeypointSequence& seq, double angle) {
    KeypointSequence out;
    out.fps = seq.fps;
    out.frames.reserve(seq.frames.size());
    for (const auto& f : seq.frames) out.frames.push_back(rotate_z_frame(f, angle));
    return out;
}

MotionSequence rotate_z(const MotionSequence& seq, double angle) {
    const Mat3 rz = rot_z(angle);
    MotionSequence out;
    out.fps = seq.fps;
    out.shape = seq.shape;
    out.frames.reserve(seq.frames.size());
    for (const auto& f : seq.frames) {
        Pose pose = f;
        pose.translation = rz * f.translation;
        if (!pose.rotations.empty()) {
            pose.rotations[0].a = rz * f.rotations[0].a;
            pose.rotations[0].b = rz * f.rotations[0].b;
        }
        out.frames.push_back(std::move(pose));
    }
    return out;
}

// ------------------------------------------------------------------ synthesis

namespace {

struct SinusoidSum {
    // rotvec(t) = sum_i axis_i * sin(2 pi f_i t + phase_i)
    std::vector<Vec3> axes;
    std::vector<double> freq_hz;
    std::vector<double> phase;

    Vec3 eval(double t_seconds) const {
        Vec3 v = Vec3::Zero();
        for (size_t i = 0; i < axes.size(); ++i)
            v += axes[i] * std::sin(2.0 * M_PI * freq_hz[i] * t_seconds + phase[i]);
        return v;
    }
};

SinusoidSum draw_sinusoids(Rng& rng, const SynthConfig& cfg, double amplitude_scale) {
    SinusoidSum s;
    const int n = 1 + static_cast<int>(rng.uniform_int(0, std::max(1, cfg.max_sinusoids)));
    const double budget =
        cfg.max_total_amplitude * amplitude_scale * rng.uniform(0.3, 1.0);
    std::vector<double> weights(static_cast<size_t>(n));
    double weight_sum = 0;
    for (auto& w : weights) {
        w = rng.uniform(0.2, 1.0);
        weight_sum += w;
    }
    for (int i = 0; i < n; ++i) {
        Vec3 dir(rng.normal(), rng.normal(), rng.normal());
        if (dir.norm() < 1e-9) dir = Vec3::UnitX();
        dir.normalize();
        const double amp = budget * weights[static_cast<size_t>(i)] / weight_sum;
        s.axes.push_back(dir * amp);
        s.freq_hz.push_back(rng.uniform(0.05, cfg.max_freq_hz));
        s.phase.push_back(rng.uniform(0.0, 2.0 * M_PI));
    }
    return s;
}

std::vector<bool> leaf_mask(const Skeleton& skel) {
    std::vector<bool> has_child(static_cast<size_t>(skel.joints()), false);
    for (int j = 1; j < skel.joints(); ++j)
        has_child[static_cast<size_t>(skel.parents[static_cast<size_t>(j)])] = true;
    std::vector<bool> leaf(static_cast<size_t>(skel.joints()));
    for (int j = 0; j < skel.joints(); ++j) leaf[static_cast<size_t>(j)] = !has_child[static_cast<size_t>(j)];
    return leaf;
}

}  // namespace

MotionSequence synthesize_motion(const Skeleton& skel, uint64_t seed, int frames, double fps,
                                 const SynthConfig& cfg) {
    if (frames < 1) throw ContractViolation("synthesize_motion: frames must be >= 1");
    Rng rng(seed);
    const int J = skel.joints();
    MotionSequence motion;
    motion.fps = fps;
    motion.shape.resize(skel.shape_dims());
    for (int s = 0; s < skel.shape_dims(); ++s)
        motion.shape(s) = rng.uniform(-cfg.shape_scale, cfg.shape_scale);

    const double band = std::min(cfg.orientation_band, 2.0 * M_PI);
    const double yaw = band >= 2.0 * M_PI ? rng.uniform(0.0, 2.0 * M_PI)
                                          : rng.uniform(-band / 2.0, band / 2.0);
    const Mat3 base_rot = rot_z(yaw);

    const auto leaves = leaf_mask(skel);
    std::vector<SinusoidSum> joint_waves;
    joint_waves.reserve(static_cast<size_t>(J));
    for (int j = 0; j < J; ++j) {
        double scale = leaves[static_cast<size_t>(j)] ? cfg.leaf_amplitude_scale : 1.0;
        if (j == 0) scale = 0.4;  // keep the subject roughly upright
        joint_waves.push_back(draw_sinusoids(rng, cfg, scale));
    }

    const double x0 = rng.uniform(-0.5, 0.5);
    const double y0 = rng.uniform(-0.5, 0.5);
    SinusoidSum root_path;
    for (int c = 0; c < 3; ++c) {
        Vec3 axis = Vec3::Zero();
        axis(c) = cfg.root_amplitude * rng.uniform(0.3, 1.0) * (c == 2 ? 0.15 : 1.0);
        root_path.axes.push_back(axis);
        root_path.freq_hz.push_back(rng.uniform(0.05, std::max(0.05, cfg.root_freq_hz)));
        root_path.phase.push_back(rng.uniform(0.0, 2.0 * M_PI));
    }

    motion.frames.reserve(static_cast<size_t>(frames));
    for (int f = 0; f < frames; ++f) {
        const double t = static_cast<double>(f) / fps;
        Pose pose;
        pose.translation = Vec3(x0, y0, cfg.base_height) + root_path.eval(t);
        pose.rotations.resize(static_cast<size_t>(J));
        for (int j = 0; j < J; ++j) {
            Mat3 rot = axis_angle_to_matrix(joint_waves[static_cast<size_t>(j)].eval(t));
            if (j == 0) rot = base_rot * rot;
            pose.rotations[static_cast<size_t>(j)] = matrix_to_rot6d(rot);
        }
        motion.frames.push_back(std::move(pose));
    }
    return motion;
}

// ------------------------------------------------------------- training pairs

TrainingPair make_training_pairs(const MotionSequence& motion, const Skeleton& skel,
                                 const SynthConfig* noise_cfg, uint64_t seed) {
    TrainingPair pair;
    pair.keypoints.fps = motion.fps;
    pair.targets.shape = motion.shape;
    const double noise_std =
        (noise_cfg != nullptr && noise_cfg->keypoint_noise_std > 0)
            ? noise_cfg->keypoint_noise_std
            : 0.0;
    Rng rng(seed ^ 0x6b79706e74ULL);
    for (const auto& pose : motion.frames) {
        const FkResult fk = forward_kinematics(skel, motion.shape, pose);
        Eigen::MatrixXd kp = regress_keypoints(skel, fk.positions);
        if (noise_std > 0)
            for (int r = 0; r < kp.rows(); ++r)
                for (int c = 0; c < 3; ++c) kp(r, c) += noise_std * rng.normal();
        const Vec3 centroid = kp.colwise().mean().transpose();
        pair.targets.rel_translation.push_back(pose.translation - centroid);
        std::vector<Mat3> rots;
        rots.reserve(pose.rotations.size());
        for (const auto& r : pose.rotations) rots.push_back(rot6d_to_matrix(r));
        pair.targets.rotations.push_back(std::move(rots));
        pair.keypoints.frames.push_back(std::move(kp));
    }
    return pair;
}

// ----------------------------------------------------------------- file I/O

namespace {

json frame_to_json(const Eigen::MatrixXd& frame) {
    auto arr = json::array();
    for (int r = 0; r < frame.rows(); ++r)
        arr.push_back({frame(r, 0), frame(r, 1), frame(r, 2)});
    return arr;
}

Eigen::MatrixXd frame_from_json(const json& arr, const std::string& where) {
    if (!arr.is_array() || arr.empty())
        throw DataError(where + ": keypoint frame must be a non-empty array");
    Eigen::MatrixXd frame(static_cast<int>(arr.size()), 3);
    for (int r = 0; r < frame.rows(); ++r) {
        const auto& p = arr[static_cast<size_t>(r)];
        if (!p.is_array() || p.size() != 3)
            throw DataError(where + ": keypoint must be [x, y, z]");
        for (int c = 0; c < 3; ++c) frame(r, c) = p[static_cast<size_t>(c)].get<double>();
    }
    return frame;
}

json pose_to_json(const Pose& pose) {
    json fj;
    fj["trans"] = {pose.translation.x(), pose.translation.y(), pose.translation.z()};
    auto rots = json::array();
    for (const auto& r : pose.rotations)
        rots.push_back({r.a.x(), r.a.y(), r.a.z(), r.b.x(), r.b.y(), r.b.z()});
    fj["rot6d"] = std::move(rots);
    return fj;
}

Pose pose_from_json(const json& fj, const std::string& where) {
    Pose pose;
    const auto& tr = fj.at("trans");
    if (!tr.is_array() || tr.size() != 3) throw DataError(where + ": trans must be [3]");
    pose.translation = Vec3(tr[0].get<double>(), tr[1].get<double>(), tr[2].get<double>());
    for (const auto& rj : fj.at("rot6d")) {
        if (!rj.is_array() || rj.size() != 6) throw DataError(where + ": rot6d entry must be [6]");
        Rot6d r;
        r.a = Vec3(rj[0].get<double>(), rj[1].get<double>(), rj[2].get<double>());
        r.b = Vec3(rj[3].get<double>(), rj[4].get<double>(), rj[5].get<double>());
        pose.rotations.push_back(r);
    }
    return pose;
}

// Returns the header object if the file starts with a one-line streaming
// header, nullopt for whole-document JSON.
std::optional<json> try_stream_header(const std::string& first_line) {
    json header = json::parse(first_line, nullptr, false);
    if (header.is_discarded() || !header.is_object() || !header.contains("stream"))
        return std::nullopt;
    return header;
}

}  // namespace

void save_motion(const std::string& path, const MotionSequence& m) {
    json doc;
    doc["meta"] = {{"version", "1"}, {"fps", m.fps}};
    doc["shape"] = std::vector<double>(m.shape.data(), m.shape.data() + m.shape.size());
    auto frames = json::array();
    for (const auto& pose : m.frames) frames.push_back(pose_to_json(pose));
    doc["frames"] = std::move(frames);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write motion: " + path);
    out << doc.dump() << '\n';
}

MotionSequence load_motion(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open motion: " + path);
    std::string first_line;
    std::getline(in, first_line);

    MotionSequence m;
    try {
        if (auto header = try_stream_header(first_line);
            header && header->value("stream", "") == "motion") {
            m.fps = header->value("fps", 30.0);
            const auto shape = header->value("shape", std::vector<double>{});
            m.shape = Eigen::Map<const Eigen::VectorXd>(shape.data(),
                                                        static_cast<int>(shape.size()));
            std::string line;
            int line_no = 1;
            while (std::getline(in, line)) {
                ++line_no;
                if (line.empty()) continue;
                m.frames.push_back(
                    pose_from_json(json::parse(line), path + ":" + std::to_string(line_no)));
            }
            return m;
        }
        in.clear();
        in.seekg(0);
        json doc;
        in >> doc;
        m.fps = doc.at("meta").value("fps", 30.0);
        const auto shape = doc.value("shape", std::vector<double>{});
        m.shape =
            Eigen::Map<const Eigen::VectorXd>(shape.data(), static_cast<int>(shape.size()));
        for (const auto& fj : doc.at("frames")) m.frames.push_back(pose_from_json(fj, path));
    } catch (const json::exception& e) {
        throw DataError("bad motion file " + path + ": " + e.what());
    }
    return m;
}

void save_keypoints(const std::string& path, const KeypointSequence& k) {
    json doc;
    doc["meta"] = {{"version", "1"}, {"fps", k.fps}};
    auto frames = json::array();
    for (const auto& f : k.frames) frames.push_back(frame_to_json(f));
    doc["frames"] = std::move(frames);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write keypoints: " + path);
    out << doc.dump() << '\n';
}

void save_keypoints_stream(const std::string& path, const KeypointSequence& k) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write keypoints: " + path);
    const int kp = k.frames.empty() ? 0 : static_cast<int>(k.frames[0].rows());
    out << json({{"stream", "keypoints"}, {"version", "1"}, {"fps", k.fps}, {"keypoints", kp}})
               .dump()
        << '\n';
    for (const auto& f : k.frames) out << frame_to_json(f).dump() << '\n';
}

KeypointSequence load_keypoints(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open keypoints: " + path);
    std::string first_line;
    std::getline(in, first_line);
    KeypointSequence k;
    try {
        if (auto header = try_stream_header(first_line);
            header && header->value("stream", "") == "keypoints") {
            k.fps = header->value("fps", 30.0);
            std::string line;
            int line_no = 1;
            while (std::getline(in, line)) {
                ++line_no;
                if (line.empty()) continue;
                k.frames.push_back(frame_from_json(json::parse(line),
                                                   path + ":" + std::to_string(line_no)));
            }
            return k;
        }
        in.clear();
        in.seekg(0);
        json doc;
        in >> doc;
        k.fps = doc.at("meta").value("fps", 30.0);
        for (const auto& fj : doc.at("frames")) k.frames.push_back(frame_from_json(fj, path));
    } catch (const json::exception& e) {
        throw DataError("bad keypoint file " + path + ": " + e.what());
    }
    return k;
}

KeypointStreamReader::KeypointStreamReader(std::istream& in) : in_(in) {
    std::string first_line;
    if (!std::getline(in_, first_line)) throw DataError("keypoint stream: empty input");
    const auto header = try_stream_header(first_line);
    if (!header || header->value("stream", "") != "keypoints")
        throw DataError("keypoint stream: missing header line");
    fps_ = header->value("fps", 30.0);
    keypoints_ = header->value("keypoints", 0);
}

std::optional<Eigen::MatrixXd> KeypointStreamReader::next() {
    std::string line;
    while (std::getline(in_, line)) {
        ++line_no_;
        if (line.empty()) continue;
        json fj = json::parse(line, nullptr, false);
        if (fj.is_discarded())
            throw DataError("keypoint stream: bad JSON at line " + std::to_string(line_no_));
        return frame_from_json(fj, "line " + std::to_string(line_no_));
    }
    return std::nullopt;
}

}  // namespace nik
