// Command-line front end: data synthesis, training, streaming inference,
// benchmarking and the two ablation studies. See README.md for usage.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "nik/datapipe.hpp"
#include "nik/kinematics.hpp"
#include "nik/model.hpp"
#include "nik/rng.hpp"
#include "nik/stream.hpp"
#include "nik/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "nik 0.1.0";

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

struct GlobalOpts {
    uint64_t seed = 0;
    std::string config_path;
    int precision = 32;
    json config;  // parsed --config file, or empty object
};

json load_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw nik::DataError("cannot open config: " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw nik::DataError("bad config JSON in " + path + ": " + e.what());
    }
    return doc;
}

nik::ModelConfig model_config_from(const json& cfg) {
    return nik::ModelConfig::from_json(cfg.value("model", json::object()));
}

template <typename T>
nik::TrainConfigT<T> train_config_from(const json& cfg, uint64_t seed) {
    const json t = cfg.value("train", json::object());
    nik::TrainConfigT<T> tc;
    tc.epochs = t.value("epochs", tc.epochs);
    tc.lr_warm = static_cast<T>(t.value("lr_warm", static_cast<double>(tc.lr_warm)));
    tc.warm_epochs = t.value("warm_epochs", tc.warm_epochs);
    tc.lr_hi = static_cast<T>(t.value("lr_hi", static_cast<double>(tc.lr_hi)));
    tc.lr_lo = static_cast<T>(t.value("lr_lo", static_cast<double>(tc.lr_lo)));
    tc.batch_size = t.value("batch_size", tc.batch_size);
    tc.chunker.length = t.value("chunk_len", tc.chunker.length);
    tc.val_fraction = t.value("val_fraction", tc.val_fraction);
    tc.checkpoint_every = t.value("checkpoint_every", tc.checkpoint_every);
    tc.rotation_augmentation = t.value("rotation_augmentation", tc.rotation_augmentation);
    tc.clip_norm = static_cast<T>(t.value("clip_norm", static_cast<double>(tc.clip_norm)));
    tc.target_fps = t.value("target_fps", tc.target_fps);
    tc.seed = seed;
    const json l = cfg.value("loss", json::object());
    tc.loss.w_geodesic = static_cast<T>(l.value("w_geodesic", 1.0));
    tc.loss.w_orthonormality = static_cast<T>(l.value("w_orthonormality", 1.0));
    tc.loss.w_cycle = static_cast<T>(l.value("w_cycle", 1.0));
    tc.loss.cycle_scale_source = l.value("cycle_scale_source", std::string("predicted")) ==
                                         std::string("input")
                                     ? nik::CycleScaleSource::kInput
                                     : nik::CycleScaleSource::kPredicted;
    return tc;
}

nik::SynthConfig synth_config_from(const json& cfg) {
    const json s = cfg.value("synth", json::object());
    nik::SynthConfig sc;
    sc.max_total_amplitude = s.value("max_total_amplitude", sc.max_total_amplitude);
    sc.max_freq_hz = s.value("max_freq_hz", sc.max_freq_hz);
    sc.max_sinusoids = s.value("max_sinusoids", sc.max_sinusoids);
    sc.shape_scale = s.value("shape_scale", sc.shape_scale);
    sc.root_amplitude = s.value("root_amplitude", sc.root_amplitude);
    sc.root_freq_hz = s.value("root_freq_hz", sc.root_freq_hz);
    sc.base_height = s.value("base_height", sc.base_height);
    sc.leaf_amplitude_scale = s.value("leaf_amplitude_scale", sc.leaf_amplitude_scale);
    sc.orientation_band = s.value("orientation_band", sc.orientation_band);
    sc.keypoint_noise_std = s.value("keypoint_noise_std", sc.keypoint_noise_std);
    return sc;
}

void write_manifest(const fs::path& dir, const std::string& command, const GlobalOpts& g,
                    const json& config_snapshot, const std::vector<std::string>& outputs,
                    double wall_s) {
    json manifest = {{"command", command},
                     {"seed", g.seed},
                     {"precision", g.precision},
                     {"config", config_snapshot},
                     {"code_version", kVersion},
                     {"outputs", outputs},
                     {"wall_s", wall_s}};
    std::ofstream out(dir / "manifest.json");
    out << manifest.dump(1) << '\n';
}

std::vector<nik::MotionSequence> load_motion_dir(const fs::path& dir) {
    std::vector<fs::path> files;
    if (!fs::is_directory(dir)) throw nik::DataError("not a directory: " + dir.string());
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("motion_", 0) == 0) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<nik::MotionSequence> motions;
    for (const auto& f : files) motions.push_back(nik::load_motion(f.string()));
    if (motions.empty()) throw nik::DataError("no motion_*.json files in " + dir.string());
    return motions;
}

nik::Skeleton load_skeleton_for(const fs::path& data_dir) {
    const fs::path p = data_dir / "skeleton.json";
    if (fs::exists(p)) return nik::Skeleton::load(p.string());
    return nik::Skeleton::desk_default();
}

json frame_output_to_json(const nik::FrameOutput& out) {
    json rots = json::array();
    for (const auto& rot : out.rotations) {
        const nik::Rot6d r = nik::matrix_to_rot6d(rot);
        rots.push_back({r.a.x(), r.a.y(), r.a.z(), r.b.x(), r.b.y(), r.b.z()});
    }
    json line = {{"frame", out.frame},
                 {"trans", {out.translation.x(), out.translation.y(), out.translation.z()}},
                 {"rot6d", std::move(rots)},
                 {"shape", std::vector<double>(out.shape.data(),
                                               out.shape.data() + out.shape.size())},
                 {"provenance", out.provenance}};
    if (out.degenerate) line["degenerate"] = true;
    return line;
}

void print_timing_table(std::ostream& os, const nik::TimingReport& t,
                        const nik::StreamConfig& cfg) {
    os << "== timing (" << t.frames << " frames, mode "
       << (cfg.mode == nik::StreamMode::kOneByOne
               ? "one_by_one"
               : cfg.mode == nik::StreamMode::kLookahead ? "lookahead" : "averaging")
       << ", L=" << cfg.window << ", d=" << cfg.delay << ") ==\n";
    os << std::left << std::setw(24) << "peak_memory_mb";
    if (t.peak_rss_bytes >= 0)
        os << std::setprecision(6) << static_cast<double>(t.peak_rss_bytes) / (1024.0 * 1024.0);
    else
        os << "unavailable";
    os << "    # paper reports 1.1 GB GPU memory, not comparable on CPU\n";
    os << std::setw(24) << "forward_per_chunk_s" << std::setprecision(6) << t.forward_mean_s
       << "    # paper: 0.029 s\n";
    os << std::setw(24) << "algorithm_total_s" << std::setprecision(6) << t.total_s
       << "    # paper: 18.80 s for a 20 s motion\n";
    os << std::setw(24) << "forwards" << t.forwards << '\n';
    os << std::setw(24) << "forward_p95_s" << std::setprecision(6) << t.forward_p95_s << '\n';
    os << std::setw(24) << "emitted_frames" << t.emitted << '\n';
}

// ----------------------------------------------------------------- commands

struct SynthArgs {
    int n = 8;
    int frames_min = 160;
    int frames_max = 240;
    double fps = 30.0;
    std::string out_dir;
    std::string skeleton_path;  // empty: built-in desk-scale default
};

int cmd_synth(const GlobalOpts& g, const SynthArgs& a) {
    const auto t0 = std::chrono::steady_clock::now();
    const nik::SynthConfig sc = synth_config_from(g.config);
    const nik::Skeleton skel = a.skeleton_path.empty()
                                   ? nik::Skeleton::desk_default()
                                   : nik::Skeleton::load(a.skeleton_path);
    fs::create_directories(a.out_dir);
    std::vector<std::string> outputs;
    const fs::path dir(a.out_dir);
    skel.save((dir / "skeleton.json").string());
    outputs.push_back("skeleton.json");
    nik::Rng rng(g.seed);
    for (int i = 0; i < a.n; ++i) {
        const uint64_t motion_seed = rng.fork(static_cast<uint64_t>(i)).next_u64();
        const int frames =
            a.frames_min +
            static_cast<int>(rng.uniform_int(0, std::max(1ll, static_cast<long long>(
                                                                  a.frames_max - a.frames_min + 1))));
        const nik::MotionSequence motion =
            nik::synthesize_motion(skel, motion_seed, frames, a.fps, sc);
        const nik::TrainingPair pair = nik::make_training_pairs(motion, skel, &sc, motion_seed);
        std::ostringstream mname, kname;
        mname << "motion_" << std::setw(3) << std::setfill('0') << i << ".json";
        kname << "keypoints_" << std::setw(3) << std::setfill('0') << i << ".json";
        nik::save_motion((dir / mname.str()).string(), motion);
        nik::save_keypoints((dir / kname.str()).string(), pair.keypoints);
        outputs.push_back(mname.str());
        outputs.push_back(kname.str());
    }
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    json snapshot = g.config;
    snapshot["synth_args"] = {{"n", a.n},
                              {"frames_min", a.frames_min},
                              {"frames_max", a.frames_max},
                              {"fps", a.fps}};
    write_manifest(dir, "synth", g, snapshot, outputs, wall);
    std::cout << "synthesized " << a.n << " motions into " << a.out_dir << '\n';
    return 0;
}

struct TrainArgs {
    std::string data_dir;
    std::string out_dir;
    int epochs = -1;
    int batch = -1;
    int chunk_len = -1;
    double val_fraction = -1;
    bool no_rotation = false;
};

template <typename T>
int cmd_train(const GlobalOpts& g, const TrainArgs& a) {
    const auto t0 = std::chrono::steady_clock::now();
    const nik::Skeleton skel = load_skeleton_for(a.data_dir);
    const auto motions = load_motion_dir(a.data_dir);

    nik::ModelConfig mcfg = model_config_from(g.config);
    mcfg.keypoints = skel.keypoints();
    mcfg.joints = skel.joints();
    mcfg.shape_dims = skel.shape_dims();
    nik::TrainConfigT<T> tcfg = train_config_from<T>(g.config, g.seed);
    if (a.epochs > 0) tcfg.epochs = a.epochs;
    if (a.batch > 0) tcfg.batch_size = a.batch;
    if (a.chunk_len > 0) tcfg.chunker.length = a.chunk_len;
    if (a.val_fraction > 0) tcfg.val_fraction = a.val_fraction;
    if (a.no_rotation) tcfg.rotation_augmentation = false;
    mcfg.max_len = std::max(mcfg.max_len, tcfg.chunker.length);

    auto result = nik::train<T>(
        mcfg, tcfg, skel, motions, a.out_dir,
        [](const nik::EpochMetrics& m, const nik::ModelT<T>&) {
            std::cout << "epoch " << m.epoch << " lr " << m.lr << " train " << m.train.total
                      << " (geo " << m.train.geodesic << " on " << m.train.orthonormality
                      << " cc " << m.train.cycle << ")";
            if (m.has_val) std::cout << " val " << m.val.total;
            std::cout << " [" << std::setprecision(3) << m.wall_s << "s]\n";
            return true;
        });

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    json snapshot = g.config;
    snapshot["train_args"] = {{"data", a.data_dir}, {"epochs", tcfg.epochs},
                              {"batch_size", tcfg.batch_size},
                              {"chunk_len", tcfg.chunker.length}};
    std::vector<std::string> outputs{"final.nik", "metrics.ndjson"};
    if (!result.best_path.empty()) outputs.push_back("best.nik");
    write_manifest(a.out_dir, "train", g, snapshot, outputs, wall);
    std::cout << "final checkpoint: " << result.final_path << '\n';
    if (!result.best_path.empty())
        std::cout << "best checkpoint: " << result.best_path << " (epoch "
                  << result.best_epoch << ", val " << result.best_val << ")\n";
    return 0;
}

struct InferArgs {
    std::string checkpoint;
    std::string input;  // path or "-"
    std::string out = "-";
    std::string mode = "averaging";
    int window = 16;
    int delay = 8;
    bool center_weighted = false;
    bool timing_only = false;  // bench
};

nik::StreamConfig stream_config_from(const InferArgs& a) {
    nik::StreamConfig cfg;
    if (a.mode == "one_by_one")
        cfg.mode = nik::StreamMode::kOneByOne;
    else if (a.mode == "lookahead")
        cfg.mode = nik::StreamMode::kLookahead;
    else if (a.mode == "averaging")
        cfg.mode = nik::StreamMode::kAveraging;
    else
        throw nik::ContractViolation("unknown mode: " + a.mode);
    cfg.window = a.window;
    cfg.delay = a.delay;
    cfg.weighting = a.center_weighted ? nik::AveragingWeights::kCenterWeighted
                                      : nik::AveragingWeights::kUniform;
    cfg.validate();
    return cfg;
}

template <typename T>
int cmd_infer(const GlobalOpts& g, const InferArgs& a) {
    const auto t0 = std::chrono::steady_clock::now();
    const nik::StreamConfig cfg = stream_config_from(a);
    const nik::ModelT<T> model = nik::ModelT<T>::load(a.checkpoint);
    if (cfg.window > model.config().max_len)
        throw nik::ContractViolation("window L=" + std::to_string(cfg.window) +
                                     " exceeds the checkpoint's max_len=" +
                                     std::to_string(model.config().max_len));

    std::ofstream out_file;
    std::ostream* out = &std::cout;
    if (a.out != "-") {
        out_file.open(a.out);
        if (!out_file) throw nik::DataError("cannot open output: " + a.out);
        out = &out_file;
    }

    nik::TimingReport timing;
    if (a.input == "-") {
        // True streaming from stdin: emit outputs as they become available.
        nik::KeypointStreamReader reader(std::cin);
        std::vector<double> forward_times;
        auto base_fn = nik::model_chunk_fn(model);
        nik::ChunkModelFn<T> timed = [&](const nik::StdWindow<T>& win) {
            const auto f0 = std::chrono::steady_clock::now();
            auto est = base_fn(win);
            forward_times.push_back(
                std::chrono::duration<double>(std::chrono::steady_clock::now() - f0).count());
            return est;
        };
        nik::StreamEngineT<T> engine(cfg, model.config().keypoints, model.config().joints,
                                     model.config().shape_dims, timed);
        const auto t0 = std::chrono::steady_clock::now();
        while (auto frame = reader.next()) {
            auto emitted = engine.push(*frame);
            ++timing.frames;
            if (emitted && !a.timing_only)
                *out << frame_output_to_json(*emitted).dump() << '\n';
            if (emitted) ++timing.emitted;
        }
        timing.total_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        timing.forwards = engine.forwards_run();
        if (!forward_times.empty()) {
            double sum = 0;
            for (double t : forward_times) sum += t;
            timing.forward_mean_s = sum / static_cast<double>(forward_times.size());
            std::sort(forward_times.begin(), forward_times.end());
            timing.forward_p95_s =
                forward_times[std::min(forward_times.size() - 1,
                                       static_cast<size_t>(0.95 * forward_times.size()))];
        }
    } else {
        const nik::KeypointSequence seq = nik::load_keypoints(a.input);
        nik::OfflineResult result = nik::run_offline(model, seq, cfg);
        if (!a.timing_only)
            for (const auto& emitted : result.outputs)
                *out << frame_output_to_json(emitted).dump() << '\n';
        timing = result.timing;
    }
    print_timing_table(std::cerr, timing, cfg);
    if (a.out != "-") {
        json manifest = {{"command", a.timing_only ? "bench" : "infer"},
                         {"seed", g.seed},
                         {"config", {{"checkpoint", a.checkpoint},
                                     {"input", a.input},
                                     {"mode", a.mode},
                                     {"L", a.window},
                                     {"d", a.delay}}},
                         {"code_version", kVersion},
                         {"outputs", {a.out}},
                         {"emitted", timing.emitted},
                         {"wall_s", std::chrono::duration<double>(
                                        std::chrono::steady_clock::now() - t0)
                                        .count()}};
        std::ofstream mf(a.out + ".manifest.json");
        mf << manifest.dump(1) << '\n';
    }
    return 0;
}

struct AblateChunkArgs {
    std::string data_dir;
    std::string out_dir;
    std::string lengths = "2,4,8,16";
    int epochs = -1;
};

std::vector<int> parse_lengths(const std::string& csv) {
    std::vector<int> lengths;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        lengths.push_back(std::stoi(item));
    }
    if (lengths.empty()) throw nik::ContractViolation("ablate-chunk: no lengths given");
    return lengths;
}

template <typename T>
int cmd_ablate_chunk(const GlobalOpts& g, const AblateChunkArgs& a) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto lengths = parse_lengths(a.lengths);
    const nik::Skeleton skel = load_skeleton_for(a.data_dir);
    const auto motions = load_motion_dir(a.data_dir);
    nik::ModelConfig mcfg = model_config_from(g.config);
    mcfg.keypoints = skel.keypoints();
    mcfg.joints = skel.joints();
    mcfg.shape_dims = skel.shape_dims();
    nik::TrainConfigT<T> tcfg = train_config_from<T>(g.config, g.seed);
    if (a.epochs > 0) tcfg.epochs = a.epochs;

    const auto result = nik::run_chunk_ablation<T>(mcfg, tcfg, skel, motions, lengths);

    fs::create_directories(a.out_dir);
    const fs::path table = fs::path(a.out_dir) / "chunk_ablation.tsv";
    std::ofstream out(table);
    out << "# validation total loss per epoch and chunk length\n";
    out << "epoch";
    for (int l : result.lengths) out << "\tval_L" << l;
    out << '\n';
    for (size_t e = 0; e < result.logs[0].size(); ++e) {
        out << e;
        for (const auto& log : result.logs)
            out << '\t' << (log[e].has_val ? log[e].val.total : log[e].train.total);
        out << '\n';
    }
    out.close();
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(a.out_dir, "ablate-chunk", g, g.config, {"chunk_ablation.tsv"}, wall);
    std::cout << "wrote " << table.string() << '\n';
    for (size_t i = 0; i < result.lengths.size(); ++i) {
        const auto& log = result.logs[i];
        std::cout << "L=" << result.lengths[i] << " final val "
                  << (log.back().has_val ? log.back().val.total : log.back().train.total)
                  << '\n';
    }
    return 0;
}

struct AblateRotationArgs {
    std::string data_dir;
    std::string out_dir;
    int epochs = -1;
};

template <typename T>
int cmd_ablate_rotation(const GlobalOpts& g, const AblateRotationArgs& a) {
    const auto t0 = std::chrono::steady_clock::now();
    const nik::Skeleton skel = load_skeleton_for(a.data_dir);
    const auto motions = load_motion_dir(a.data_dir);
    nik::ModelConfig mcfg = model_config_from(g.config);
    mcfg.keypoints = skel.keypoints();
    mcfg.joints = skel.joints();
    mcfg.shape_dims = skel.shape_dims();
    nik::TrainConfigT<T> tcfg = train_config_from<T>(g.config, g.seed);
    if (a.epochs > 0) tcfg.epochs = a.epochs;

    const auto result = nik::run_rotation_ablation<T>(mcfg, tcfg, skel, motions);

    fs::create_directories(a.out_dir);
    const fs::path table = fs::path(a.out_dir) / "rotation_ablation.tsv";
    std::ofstream out(table);
    out << "# train/val total loss per epoch, rotation augmentation on vs off\n";
    out << "epoch\ttrain_on\tval_on\ttrain_off\tval_off\n";
    for (size_t e = 0; e < result.with_rotation.size(); ++e) {
        const auto& on = result.with_rotation[e];
        const auto& off = result.without_rotation[e];
        out << e << '\t' << on.train.total << '\t' << (on.has_val ? on.val.total : 0.0) << '\t'
            << off.train.total << '\t' << (off.has_val ? off.val.total : 0.0) << '\n';
    }
    out.close();
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(a.out_dir, "ablate-rotation", g, g.config, {"rotation_ablation.tsv"}, wall);
    std::cout << "wrote " << table.string() << '\n';
    std::cout << "final train/val gap with rotation: " << result.final_gap_with << '\n';
    std::cout << "final train/val gap without rotation: " << result.final_gap_without << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Neural inverse kinematics: 3D keypoint streams to joint rotations"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--seed", g.seed, "Seed for all randomness");
    app.add_option("--config", g.config_path, "JSON config file");
    app.add_option("--precision", g.precision, "Scalar precision: 32 or 64")
        ->check(CLI::IsMember({32, 64}));

    SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "Generate synthetic motions and keypoints");
    synth->add_option("--n", synth_args.n, "Number of motions");
    synth->add_option("--frames-min", synth_args.frames_min, "Minimum frames per motion");
    synth->add_option("--frames-max", synth_args.frames_max, "Maximum frames per motion");
    synth->add_option("--fps", synth_args.fps, "Frame rate");
    synth->add_option("--skeleton", synth_args.skeleton_path,
                      "Skeleton file (default: built-in desk-scale humanoid)");
    synth->add_option("--out", synth_args.out_dir, "Output directory")->required();

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "Train the model on a synth data directory");
    train_cmd->add_option("--data", train_args.data_dir, "Data directory")->required();
    train_cmd->add_option("--out", train_args.out_dir, "Output directory")->required();
    train_cmd->add_option("--epochs", train_args.epochs, "Override epochs");
    train_cmd->add_option("--batch", train_args.batch, "Override batch size");
    train_cmd->add_option("--chunk-len", train_args.chunk_len, "Override chunk length");
    train_cmd->add_option("--val-fraction", train_args.val_fraction, "Override val fraction");
    train_cmd->add_flag("--no-rotation-aug", train_args.no_rotation,
                        "Disable rotation augmentation");

    InferArgs infer_args;
    auto* infer = app.add_subcommand("infer", "Stream keypoints through a trained model");
    infer->add_option("--checkpoint", infer_args.checkpoint, "Model checkpoint")->required();
    infer->add_option("--input", infer_args.input, "Keypoint file, or - for stdin")->required();
    infer->add_option("--out", infer_args.out, "Output file, - for stdout");
    infer->add_option("--mode", infer_args.mode, "one_by_one | lookahead | averaging");
    infer->add_option("--L", infer_args.window, "Window length");
    infer->add_option("--d", infer_args.delay, "Lookahead delay (modes 2-3)");
    infer->add_flag("--center-weighted", infer_args.center_weighted,
                    "Triangular slot weights for averaging");

    InferArgs bench_args;
    bench_args.timing_only = true;
    auto* bench = app.add_subcommand("bench", "Timing-only inference run");
    bench->add_option("--checkpoint", bench_args.checkpoint, "Model checkpoint")->required();
    bench->add_option("--input", bench_args.input, "Keypoint file, or - for stdin")->required();
    bench->add_option("--mode", bench_args.mode, "one_by_one | lookahead | averaging");
    bench->add_option("--L", bench_args.window, "Window length");
    bench->add_option("--d", bench_args.delay, "Lookahead delay");

    AblateChunkArgs ablate_chunk_args;
    auto* ablate_chunk = app.add_subcommand("ablate-chunk", "Validation loss vs chunk length");
    ablate_chunk->add_option("--data", ablate_chunk_args.data_dir, "Data directory")->required();
    ablate_chunk->add_option("--out", ablate_chunk_args.out_dir, "Output directory")->required();
    ablate_chunk->add_option("--lengths", ablate_chunk_args.lengths, "CSV chunk lengths");
    ablate_chunk->add_option("--epochs", ablate_chunk_args.epochs, "Override epochs");

    AblateRotationArgs ablate_rot_args;
    auto* ablate_rot =
        app.add_subcommand("ablate-rotation", "Train/val gap with and without rotation");
    ablate_rot->add_option("--data", ablate_rot_args.data_dir, "Data directory")->required();
    ablate_rot->add_option("--out", ablate_rot_args.out_dir, "Output directory")->required();
    ablate_rot->add_option("--epochs", ablate_rot_args.epochs, "Override epochs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        g.config = load_config_file(g.config_path);
        const bool f64 = g.precision == 64;
        if (synth->parsed()) return cmd_synth(g, synth_args);
        if (train_cmd->parsed())
            return f64 ? cmd_train<double>(g, train_args) : cmd_train<float>(g, train_args);
        if (infer->parsed())
            return f64 ? cmd_infer<double>(g, infer_args) : cmd_infer<float>(g, infer_args);
        if (bench->parsed())
            return f64 ? cmd_infer<double>(g, bench_args) : cmd_infer<float>(g, bench_args);
        if (ablate_chunk->parsed())
            return f64 ? cmd_ablate_chunk<double>(g, ablate_chunk_args)
                       : cmd_ablate_chunk<float>(g, ablate_chunk_args);
        if (ablate_rot->parsed())
            return f64 ? cmd_ablate_rotation<double>(g, ablate_rot_args)
                       : cmd_ablate_rotation<float>(g, ablate_rot_args);
    } catch (const nik::ContractViolation& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const nik::NumericalFault& e) {
        std::cerr << "numerical fault: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const nik::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const nik::UpsampleUnsupported& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const nik::CheckpointMismatch& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
