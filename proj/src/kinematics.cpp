#include "nik/kinematics.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"
#include "nik/rng.hpp"

namespace nik {

namespace {
constexpr double kDegenerateEps = 1e-8;
constexpr double kAcosClamp = 1e-7;
}  // namespace

Mat3 rot6d_to_matrix(const Rot6d& r) {
    const double na = r.a.norm();
    if (na < kDegenerateEps)
        throw DegenerateRotation("rot6d_to_matrix: |a| = " + std::to_string(na));
    const Vec3 c1 = r.a / na;
    const Vec3 residual = r.b - c1.dot(r.b) * c1;
    const double nb = residual.norm();
    if (nb < kDegenerateEps)
        throw DegenerateRotation("rot6d_to_matrix: b is parallel to a (residual " +
                                 std::to_string(nb) + ")");
    const Vec3 c2 = residual / nb;
    const Vec3 c3 = c1.cross(c2);
    Mat3 m;
    m.col(0) = c1;
    m.col(1) = c2;
    m.col(2) = c3;
    return m;
}

Rot6d matrix_to_rot6d(const Mat3& r) {
    return Rot6d{r.col(0), r.col(1)};
}

Mat3 axis_angle_to_matrix(const Vec3& rotvec) {
    const double angle = rotvec.norm();
    if (angle < 1e-12) return Mat3::Identity();
    return Eigen::AngleAxisd(angle, rotvec / angle).toRotationMatrix();
}

Mat3 rot_z(double angle) {
    return Eigen::AngleAxisd(angle, Vec3::UnitZ()).toRotationMatrix();
}

double geodesic_distance(const Mat3& rp, const Mat3& rt) {
    const double c = ((rp * rt.transpose()).trace() - 1.0) / 2.0;
    return std::acos(std::min(std::max(c, -1.0 + kAcosClamp), 1.0 - kAcosClamp));
}

void Skeleton::validate() const {
    const int j = joints();
    if (j < 1) throw ContractViolation("skeleton: needs at least one joint");
    if (static_cast<int>(joint_names.size()) != j)
        throw ContractViolation("skeleton: name/parent count mismatch");
    if (parents[0] != -1) throw ContractViolation("skeleton: joint 0 must be the root");
    for (int i = 1; i < j; ++i)
        if (parents[i] < 0 || parents[i] >= i)
            throw ContractViolation("skeleton: parents must be topologically sorted, joint " +
                                    std::to_string(i) + " has parent " +
                                    std::to_string(parents[i]));
    if (rest_offsets.rows() != j || rest_offsets.cols() != 3)
        throw ContractViolation("skeleton: rest_offsets must be J x 3");
    if (shape_blend.rows() != 3 * j)
        throw ContractViolation("skeleton: shape_blend must have 3J rows");
    if (regressor.cols() != j || regressor.rows() < 1)
        throw ContractViolation("skeleton: regressor must be K x J with K >= 1");
    if (!rest_offsets.allFinite() || !shape_blend.allFinite() || !regressor.allFinite())
        throw ContractViolation("skeleton: non-finite entries");
}

Eigen::MatrixXd Skeleton::offsets_for(const Eigen::VectorXd& shape) const {
    if (shape.size() != shape_dims())
        throw ContractViolation("offsets_for: shape vector has " + std::to_string(shape.size()) +
                                " dims, skeleton wants " + std::to_string(shape_dims()));
    Eigen::MatrixXd offsets = rest_offsets;
    if (shape.size() > 0) {
        const Eigen::VectorXd delta = shape_blend * shape;  // (3J)
        for (int j = 0; j < joints(); ++j)
            for (int c = 0; c < 3; ++c) offsets(j, c) += delta(3 * j + c);
    }
    return offsets;
}

FkResult forward_kinematics(const Skeleton& skel, const Eigen::VectorXd& shape,
                            const Pose& pose) {
    const int j = skel.joints();
    if (static_cast<int>(pose.rotations.size()) != j)
        throw ContractViolation("forward_kinematics: pose has " +
                                std::to_string(pose.rotations.size()) + " rotations, skeleton " +
                                std::to_string(j) + " joints");
    const Eigen::MatrixXd offsets = skel.offsets_for(shape);
    FkResult out;
    out.positions.resize(j, 3);
    out.world_rotations.resize(static_cast<size_t>(j));
    for (int i = 0; i < j; ++i) {
        const Mat3 local = rot6d_to_matrix(pose.rotations[static_cast<size_t>(i)]);
        if (i == 0) {
            out.world_rotations[0] = local;
            out.positions.row(0) = pose.translation.transpose();
        } else {
            const int p = skel.parents[static_cast<size_t>(i)];
            const Mat3& parent_rot = out.world_rotations[static_cast<size_t>(p)];
            out.world_rotations[static_cast<size_t>(i)] = parent_rot * local;
            const Vec3 off = offsets.row(i).transpose();
            out.positions.row(i) =
                (out.positions.row(p).transpose() + parent_rot * off).transpose();
        }
    }
    return out;
}

Eigen::MatrixXd regress_keypoints(const Skeleton& skel, const Eigen::MatrixXd& joints) {
    if (joints.rows() != skel.joints() || joints.cols() != 3)
        throw ContractViolation("regress_keypoints: joints must be J x 3");
    return skel.regressor * joints;
}

// ------------------------------------------------------------ default skeleton

namespace {

struct JointSpec {
    const char* name;
    int parent;
    double x, y, z;
};

// SMPL-style topology, Z up, Y forward, X to the subject's left. Meters.
const JointSpec kDeskJoints[24] = {
    {"pelvis", -1, 0.0, 0.0, 0.0},
    {"hip_l", 0, 0.09, 0.0, -0.05},
    {"hip_r", 0, -0.09, 0.0, -0.05},
    {"spine1", 0, 0.0, 0.0, 0.11},
    {"knee_l", 1, 0.0, 0.0, -0.40},
    {"knee_r", 2, 0.0, 0.0, -0.40},
    {"spine2", 3, 0.0, 0.0, 0.12},
    {"ankle_l", 4, 0.0, 0.0, -0.42},
    {"ankle_r", 5, 0.0, 0.0, -0.42},
    {"spine3", 6, 0.0, 0.0, 0.12},
    {"foot_l", 7, 0.0, 0.13, -0.05},
    {"foot_r", 8, 0.0, 0.13, -0.05},
    {"neck", 9, 0.0, 0.0, 0.14},
    {"collar_l", 9, 0.07, 0.0, 0.09},
    {"collar_r", 9, -0.07, 0.0, 0.09},
    {"head", 12, 0.0, 0.0, 0.12},
    {"shoulder_l", 13, 0.10, 0.0, 0.02},
    {"shoulder_r", 14, -0.10, 0.0, 0.02},
    {"elbow_l", 16, 0.26, 0.0, 0.0},
    {"elbow_r", 17, -0.26, 0.0, 0.0},
    {"wrist_l", 18, 0.25, 0.0, 0.0},
    {"wrist_r", 19, -0.25, 0.0, 0.0},
    {"hand_l", 20, 0.08, 0.0, 0.0},
    {"hand_r", 21, -0.08, 0.0, 0.0},
};

struct RegressorRow {
    int joint_a;
    double weight_a;
    int joint_b;  // -1: single joint
};

// BODY25 order. Mixture rows keep every row a convex combination (rows sum
// to one, which makes the keypoint cloud translate with the root).
const RegressorRow kBody25Rows[25] = {
    {15, 0.90, 12},  // 0 nose
    {12, 1.00, -1},  // 1 neck
    {17, 1.00, -1},  // 2 shoulder_r
    {19, 1.00, -1},  // 3 elbow_r
    {21, 1.00, -1},  // 4 wrist_r
    {16, 1.00, -1},  // 5 shoulder_l
    {18, 1.00, -1},  // 6 elbow_l
    {20, 1.00, -1},  // 7 wrist_l
    {0, 1.00, -1},   // 8 mid hip
    {2, 1.00, -1},   // 9 hip_r
    {5, 1.00, -1},   // 10 knee_r
    {8, 1.00, -1},   // 11 ankle_r
    {1, 1.00, -1},   // 12 hip_l
    {4, 1.00, -1},   // 13 knee_l
    {7, 1.00, -1},   // 14 ankle_l
    {15, 0.88, 14},  // 15 eye_r
    {15, 0.88, 13},  // 16 eye_l
    {15, 0.75, 14},  // 17 ear_r
    {15, 0.75, 13},  // 18 ear_l
    {10, 1.00, -1},  // 19 big_toe_l
    {10, 0.90, 7},   // 20 small_toe_l
    {10, 0.35, 7},   // 21 heel_l
    {11, 1.00, -1},  // 22 big_toe_r
    {11, 0.90, 8},   // 23 small_toe_r
    {11, 0.35, 8},   // 24 heel_r
};

}  // namespace

Skeleton Skeleton::desk_default() {
    constexpr int j = 24, s = 10, k = 25;
    Skeleton skel;
    skel.rest_offsets.resize(j, 3);
    for (int i = 0; i < j; ++i) {
        skel.joint_names.emplace_back(kDeskJoints[i].name);
        skel.parents.push_back(kDeskJoints[i].parent);
        skel.rest_offsets.row(i) << kDeskJoints[i].x, kDeskJoints[i].y, kDeskJoints[i].z;
    }
    // Small seeded blend matrix; no column is proportional to the rest
    // offsets, so global scale is not a free direction of the shape space.
    Rng rng(0x5ce1e70);
    skel.shape_blend.resize(3 * j, s);
    for (int r = 0; r < 3 * j; ++r)
        for (int c = 0; c < s; ++c) skel.shape_blend(r, c) = 0.01 * rng.normal();
    skel.shape_blend.topRows<3>().setZero();  // root offset is unused by FK
    skel.regressor = Eigen::MatrixXd::Zero(k, j);
    for (int r = 0; r < k; ++r) {
        const auto& row = kBody25Rows[r];
        skel.regressor(r, row.joint_a) = row.weight_a;
        if (row.joint_b >= 0) skel.regressor(r, row.joint_b) = 1.0 - row.weight_a;
    }
    skel.validate();
    return skel;
}

// --------------------------------------------------------------- file format

void Skeleton::save(const std::string& path) const {
    nlohmann::json doc;
    doc["meta"]["version"] = "1";
    auto joints_json = nlohmann::json::array();
    for (int i = 0; i < joints(); ++i) {
        joints_json.push_back({{"name", joint_names[static_cast<size_t>(i)]},
                               {"parent", parents[static_cast<size_t>(i)]},
                               {"rest_offset",
                                {rest_offsets(i, 0), rest_offsets(i, 1), rest_offsets(i, 2)}}});
    }
    doc["joints"] = std::move(joints_json);
    auto blend = nlohmann::json::array();
    for (int r = 0; r < shape_blend.rows(); ++r) {
        auto row = nlohmann::json::array();
        for (int c = 0; c < shape_blend.cols(); ++c) row.push_back(shape_blend(r, c));
        blend.push_back(std::move(row));
    }
    doc["shape_blend"] = std::move(blend);
    auto reg = nlohmann::json::array();
    for (int r = 0; r < regressor.rows(); ++r) {
        auto row = nlohmann::json::array();
        for (int c = 0; c < regressor.cols(); ++c) row.push_back(regressor(r, c));
        reg.push_back(std::move(row));
    }
    doc["regressor"] = std::move(reg);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write skeleton: " + path);
    out << doc.dump(1) << '\n';
}

Skeleton Skeleton::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open skeleton: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad skeleton JSON in " + path + ": " + e.what());
    }
    Skeleton skel;
    try {
        const auto& joints_json = doc.at("joints");
        const int j = static_cast<int>(joints_json.size());
        skel.rest_offsets.resize(j, 3);
        for (int i = 0; i < j; ++i) {
            const auto& entry = joints_json[static_cast<size_t>(i)];
            skel.joint_names.push_back(entry.at("name").get<std::string>());
            skel.parents.push_back(entry.at("parent").get<int>());
            const auto& off = entry.at("rest_offset");
            for (int c = 0; c < 3; ++c) skel.rest_offsets(i, c) = off.at(c).get<double>();
        }
        const auto& blend = doc.at("shape_blend");
        const int s = blend.empty() ? 0 : static_cast<int>(blend[0].size());
        skel.shape_blend.resize(3 * j, s);
        if (static_cast<int>(blend.size()) != 3 * j)
            throw DataError("skeleton " + path + ": shape_blend must have 3J rows");
        for (int r = 0; r < 3 * j; ++r)
            for (int c = 0; c < s; ++c)
                skel.shape_blend(r, c) = blend[static_cast<size_t>(r)][static_cast<size_t>(c)]
                                             .get<double>();
        const auto& reg = doc.at("regressor");
        const int k = static_cast<int>(reg.size());
        skel.regressor.resize(k, j);
        for (int r = 0; r < k; ++r) {
            if (static_cast<int>(reg[static_cast<size_t>(r)].size()) != j)
                throw DataError("skeleton " + path + ": regressor rows must have J entries");
            for (int c = 0; c < j; ++c)
                skel.regressor(r, c) =
                    reg[static_cast<size_t>(r)][static_cast<size_t>(c)].get<double>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("skeleton " + path + ": " + e.what());
    }
    skel.validate();
    return skel;
}

}  // namespace nik
