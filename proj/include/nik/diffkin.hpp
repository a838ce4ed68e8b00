#pragma once

#include "nik/kinematics.hpp"
#include "nik/ops.hpp"
#include "nik/tensor.hpp"

// Tape-friendly versions of the rotation conversion and forward kinematics,
// expressed in tensorcore ops so losses can differentiate through them.
// The plain Eigen implementations in kinematics.hpp stay the independent
// reference route for tests.

namespace nik {

// Skeleton constants uploaded once per precision.
template <typename T>
struct SkeletonGraphT {
    TensorT<T> rest_flat;    // [3J]
    TensorT<T> blend_t;      // [S, 3J]
    TensorT<T> regressor_t;  // [J, K]
    std::vector<int> parents;
    int joints = 0;
    int shape_dims = 0;
    int keypoints = 0;

    static SkeletonGraphT from(const Skeleton& skel);
};

// [..., 6] -> [..., 3, 3]; throws DegenerateRotation on near-degenerate
// inputs instead of fabricating a rotation.
template <typename T>
TensorT<T> rot6d_to_matrix_graph(const TensorT<T>& rot6d);

template <typename T>
struct FkGraphOutT {
    TensorT<T> joints;     // [B, T, J, 3]
    TensorT<T> keypoints;  // [B, T, K, 3]
};

// shape [B,S], rot6d [B,T,J,6], trans [B,T,3] -> world joints and regressed
// keypoints, matching forward_kinematics + regress_keypoints.
template <typename T>
FkGraphOutT<T> fk_graph(const SkeletonGraphT<T>& skel, const TensorT<T>& shape,
                        const TensorT<T>& rot6d, const TensorT<T>& trans);

extern template struct SkeletonGraphT<float>;
extern template struct SkeletonGraphT<double>;
extern template TensorT<float> rot6d_to_matrix_graph<float>(const TensorT<float>&);
extern template TensorT<double> rot6d_to_matrix_graph<double>(const TensorT<double>&);
extern template FkGraphOutT<float> fk_graph<float>(const SkeletonGraphT<float>&,
                                                   const TensorT<float>&, const TensorT<float>&,
                                                   const TensorT<float>&);
extern template FkGraphOutT<double> fk_graph<double>(const SkeletonGraphT<double>&,
                                                     const TensorT<double>&,
                                                     const TensorT<double>&,
                                                     const TensorT<double>&);

}  // namespace nik
