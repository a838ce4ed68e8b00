#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nik/errors.hpp"

namespace nik {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// First two columns of a rotation matrix before orthonormalization.
struct Rot6d {
    Vec3 a = Vec3::UnitX();
    Vec3 b = Vec3::UnitY();
};

// Gram-Schmidt: c1 = a/|a|, c2 = normalize(b - (c1.b) c1), c3 = c1 x c2.
// Throws DegenerateRotation if |a| or the projection residual of b falls
// under 1e-8.
Mat3 rot6d_to_matrix(const Rot6d& r);
Rot6d matrix_to_rot6d(const Mat3& R);
Mat3 axis_angle_to_matrix(const Vec3& rotvec);
Mat3 rot_z(double angle);

// arccos((tr(Rp Rt^T) - 1) / 2) with the argument clamped to
// [-1 + 1e-7, 1 - 1e-7] so the gradient stays finite at coincident
// rotations. Result in [0, pi].
double geodesic_distance(const Mat3& rp, const Mat3& rt);

struct Pose {
    Vec3 translation = Vec3::Zero();
    std::vector<Rot6d> rotations;  // index 0 = root (pelvis)
};

struct Skeleton {
    std::vector<std::string> joint_names;
    std::vector<int> parents;       // parents[0] == -1; parents[j] < j
    Eigen::MatrixXd rest_offsets;   // J x 3, child position in parent frame at shape zero
    Eigen::MatrixXd shape_blend;    // (3J) x S, row-major over (joint, axis)
    Eigen::MatrixXd regressor;      // K x J, rows map world joints to keypoints

    int joints() const { return static_cast<int>(parents.size()); }
    int shape_dims() const { return static_cast<int>(shape_blend.cols()); }
    int keypoints() const { return static_cast<int>(regressor.rows()); }

    void validate() const;

    // rest + reshape(blend * s), J x 3.
    Eigen::MatrixXd offsets_for(const Eigen::VectorXd& shape) const;

    // Desk-scale humanoid: 24 joints, 10 shape dims, 25 keypoints, Z up,
    // meters. Deterministic (seeded blend matrix).
    static Skeleton desk_default();

    static Skeleton load(const std::string& path);
    void save(const std::string& path) const;
};

struct FkResult {
    Eigen::MatrixXd positions;         // J x 3 world
    std::vector<Mat3> world_rotations; // J
};

FkResult forward_kinematics(const Skeleton& skel, const Eigen::VectorXd& shape,
                            const Pose& pose);

// keypoints = W * joints, K x 3.
Eigen::MatrixXd regress_keypoints(const Skeleton& skel, const Eigen::MatrixXd& joints);

}  // namespace nik
