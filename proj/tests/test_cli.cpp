// End-to-end exercises of the nik binary: synth -> train -> infer/bench,
// exit codes, and the file contracts between commands.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "nik/datapipe.hpp"
#include "nik/kinematics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string cli_path() {
    const char* env = std::getenv("NIK_CLI");
    REQUIRE_MESSAGE(env != nullptr, "NIK_CLI must point at the nik binary");
    return env;
}

struct RunResult {
    int exit_code = -1;
    std::string output;  // stdout + stderr
};

RunResult run_cli(const std::string& args) {
    const std::string cmd = cli_path() + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    RunResult result;
    char buffer[4096];
    while (size_t n = fread(buffer, 1, sizeof(buffer), pipe)) result.output.append(buffer, n);
    const int status = pclose(pipe);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const fs::path kWork = "/tmp/nik_cli_tests";

}  // namespace

TEST_CASE("synth writes paired files, deterministically") {
    fs::remove_all(kWork);
    const fs::path data = kWork / "data";
    const auto r = run_cli("--seed 7 synth --n 3 --frames-min 40 --frames-max 60 --out " +
                           data.string());
    REQUIRE_MESSAGE(r.exit_code == 0, r.output);
    CHECK(fs::exists(data / "skeleton.json"));
    CHECK(fs::exists(data / "manifest.json"));
    for (int i = 0; i < 3; ++i) {
        CHECK(fs::exists(data / ("motion_00" + std::to_string(i) + ".json")));
        CHECK(fs::exists(data / ("keypoints_00" + std::to_string(i) + ".json")));
    }
    const json manifest = json::parse(read_file(data / "manifest.json"));
    CHECK(manifest.at("command") == "synth");
    CHECK(manifest.at("seed") == 7);

    // Keypoints are re-derivable from the motions via FK + regressor.
    const nik::Skeleton skel = nik::Skeleton::load((data / "skeleton.json").string());
    const nik::MotionSequence motion = nik::load_motion((data / "motion_000.json").string());
    const nik::KeypointSequence kp = nik::load_keypoints((data / "keypoints_000.json").string());
    REQUIRE(kp.length() == motion.length());
    for (int t = 0; t < motion.length(); ++t) {
        const auto fk = nik::forward_kinematics(skel, motion.shape,
                                                motion.frames[static_cast<size_t>(t)]);
        const Eigen::MatrixXd expected = nik::regress_keypoints(skel, fk.positions);
        CHECK((kp.frames[static_cast<size_t>(t)] - expected).cwiseAbs().maxCoeff() < 1e-9);
    }

    // Same seed: byte-identical outputs.
    const fs::path data2 = kWork / "data_again";
    REQUIRE(run_cli("--seed 7 synth --n 3 --frames-min 40 --frames-max 60 --out " +
                    data2.string())
                .exit_code == 0);
    CHECK(read_file(data / "motion_000.json") == read_file(data2 / "motion_000.json"));
    CHECK(read_file(data / "keypoints_002.json") == read_file(data2 / "keypoints_002.json"));
}

TEST_CASE("train then infer end to end") {
    const fs::path data = kWork / "data";
    REQUIRE(fs::exists(data / "skeleton.json"));  // from the synth case above

    const fs::path cfg_path = kWork / "tiny.json";
    {
        std::ofstream cfg(cfg_path);
        cfg << R"({"model": {"d_model": 32, "layers": 1, "heads": 2, "max_len": 8},
                   "train": {"epochs": 2, "warm_epochs": 1, "batch_size": 16,
                              "chunk_len": 8, "val_fraction": 0.34}})";
    }
    const fs::path run = kWork / "run";
    const auto train_result = run_cli("--seed 3 --config " + cfg_path.string() +
                                      " train --data " + data.string() + " --out " +
                                      run.string());
    REQUIRE_MESSAGE(train_result.exit_code == 0, train_result.output);
    CHECK(fs::exists(run / "final.nik"));
    CHECK(fs::exists(run / "metrics.ndjson"));
    CHECK(fs::exists(run / "manifest.json"));
    CHECK(train_result.output.find("epoch 0") != std::string::npos);

    // Metrics log: one JSON record per epoch with train/val losses.
    std::ifstream metrics(run / "metrics.ndjson");
    std::string line;
    int lines = 0;
    while (std::getline(metrics, line)) {
        const json rec = json::parse(line);
        CHECK(rec.at("epoch") == lines);
        CHECK(rec.at("train").at("total").get<double>() >= 0);
        CHECK(rec.contains("val"));
        ++lines;
    }
    CHECK(lines == 2);

    // Inference over a keypoint file: one_by_one emits one line per frame.
    const fs::path short_kp = kWork / "short_keypoints.json";
    {
        nik::KeypointSequence kp =
            nik::load_keypoints((data / "keypoints_000.json").string());
        kp.frames.resize(5);
        nik::save_keypoints(short_kp.string(), kp);
    }
    const fs::path out_file = kWork / "outputs.ndjson";
    const auto infer_result =
        run_cli("infer --checkpoint " + (run / "final.nik").string() + " --input " +
                short_kp.string() + " --mode one_by_one --L 4 --out " + out_file.string());
    REQUIRE_MESSAGE(infer_result.exit_code == 0, infer_result.output);
    std::ifstream outputs(out_file);
    int out_lines = 0;
    while (std::getline(outputs, line)) {
        const json rec = json::parse(line);
        CHECK(rec.at("frame") == out_lines);
        CHECK(rec.at("rot6d").size() == 24);
        CHECK(rec.at("provenance") == 1);
        ++out_lines;
    }
    CHECK(out_lines == 5);
    CHECK(fs::exists(kWork / "outputs.ndjson.manifest.json"));
    CHECK(infer_result.output.find("forward_per_chunk_s") != std::string::npos);

    // Streaming over stdin emits the same frames.
    const fs::path stream_kp = kWork / "short_stream.ndjson";
    {
        const nik::KeypointSequence kp = nik::load_keypoints(short_kp.string());
        nik::save_keypoints_stream(stream_kp.string(), kp);
    }
    const auto stdin_result =
        run_cli("infer --checkpoint " + (run / "final.nik").string() +
                " --input - --mode one_by_one --L 4 < " + stream_kp.string());
    REQUIRE_MESSAGE(stdin_result.exit_code == 0, stdin_result.output);
    CHECK(std::count(stdin_result.output.begin(), stdin_result.output.end(), '\n') >= 5);

    // bench: timing table only, all three headline rows.
    const auto bench_result = run_cli("bench --checkpoint " + (run / "final.nik").string() +
                                      " --input " + short_kp.string() + " --mode averaging " +
                                      "--L 4 --d 2");
    REQUIRE_MESSAGE(bench_result.exit_code == 0, bench_result.output);
    CHECK(bench_result.output.find("peak_memory_mb") != std::string::npos);
    CHECK(bench_result.output.find("forward_per_chunk_s") != std::string::npos);
    CHECK(bench_result.output.find("algorithm_total_s") != std::string::npos);
    CHECK(bench_result.output.find("\"frame\"") == std::string::npos);
}

TEST_CASE("exit codes: usage 2, data 3") {
    // d >= L is rejected at argument validation.
    const auto usage = run_cli("infer --checkpoint /tmp/whatever.nik --input /tmp/x.json "
                               "--mode averaging --L 4 --d 4");
    CHECK(usage.exit_code == 2);

    // Unknown subcommand is a parse error.
    CHECK(run_cli("frobnicate").exit_code == 2);

    // Missing data directory.
    const auto data_err = run_cli("train --data /tmp/nik_no_such_dir --out /tmp/nik_out_x");
    CHECK(data_err.exit_code == 3);

    // Missing checkpoint file.
    const auto ckpt_err = run_cli("infer --checkpoint /tmp/nik_missing.nik --input " +
                                  (kWork / "short_keypoints.json").string());
    CHECK(ckpt_err.exit_code == 3);
}

TEST_CASE("ablation commands emit plot-ready tables") {
    const fs::path data = kWork / "data";
    const fs::path cfg_path = kWork / "ablate.json";
    {
        std::ofstream cfg(cfg_path);
        cfg << R"({"model": {"d_model": 16, "layers": 1, "heads": 2, "max_len": 16},
                   "train": {"epochs": 2, "warm_epochs": 1, "batch_size": 32,
                              "val_fraction": 0.34}})";
    }
    const fs::path out1 = kWork / "ablate_chunk";
    const auto chunk_res = run_cli("--seed 5 --config " + cfg_path.string() +
                                   " ablate-chunk --data " + data.string() + " --out " +
                                   out1.string() + " --lengths 2,8");
    REQUIRE_MESSAGE(chunk_res.exit_code == 0, chunk_res.output);
    const std::string table = read_file(out1 / "chunk_ablation.tsv");
    CHECK(table.find("val_L2") != std::string::npos);
    CHECK(table.find("val_L8") != std::string::npos);
    // Header plus one row per epoch, all finite values.
    std::istringstream lines(table);
    std::string line;
    int rows = 0;
    while (std::getline(lines, line))
        if (!line.empty() && line[0] != '#') ++rows;
    CHECK(rows == 3);  // column header + 2 epochs

    const fs::path out2 = kWork / "ablate_rot";
    const auto rot_res = run_cli("--seed 5 --config " + cfg_path.string() +
                                 " ablate-rotation --data " + data.string() + " --out " +
                                 out2.string());
    REQUIRE_MESSAGE(rot_res.exit_code == 0, rot_res.output);
    const std::string rot_table = read_file(out2 / "rotation_ablation.tsv");
    CHECK(rot_table.find("train_on\tval_on\ttrain_off\tval_off") != std::string::npos);
}
