#pragma once

#include "nik/diffkin.hpp"
#include "nik/tensor.hpp"

namespace nik {

// Which per-frame scale normalizes the reconstructed keypoints inside the
// cycle-consistency loss: the reconstruction's own statistic (default,
// mirrors the input procedure) or the raw input frame's saved scale.
enum class CycleScaleSource { kPredicted, kInput };

template <typename T>
struct LossConfigT {
    T w_geodesic = T(1);
    T w_orthonormality = T(1);
    T w_cycle = T(1);
    CycleScaleSource cycle_scale_source = CycleScaleSource::kPredicted;
};

template <typename T>
struct LossBreakdownT {
    T geodesic = T(0);
    T orthonormality = T(0);
    T cycle = T(0);
    T total = T(0);
};

// Mean geodesic distance between predicted 6D rotations (converted through
// Gram-Schmidt) and true rotation matrices. pred [B,T,J,6],
// true_rot [B,T,J,3,3].
template <typename T>
TensorT<T> geodesic_loss(const TensorT<T>& pred_rot6d, const TensorT<T>& true_rot);

// Mean over the batch of (|a|^2-1)^2 + (|b|^2-1)^2 + (a.b)^2/(|a|^2 |b|^2),
// with 1e-12 added to the denominator. pred [..., 6].
template <typename T>
TensorT<T> orthonormality_loss(const TensorT<T>& pred_rot6d);

// Keypoints are rebuilt from the prediction via FK + the regressor,
// scale-normalized per frame WITHOUT centering, and compared to the
// standardized input keypoints by mean squared error.
// std_keypoints [B,T,K,3]; input_scales [B,T] is required only for
// CycleScaleSource::kInput.
template <typename T>
TensorT<T> cycle_consistency_loss(const SkeletonGraphT<T>& skel, const TensorT<T>& pred_shape,
                                  const TensorT<T>& pred_rot6d, const TensorT<T>& pred_trans,
                                  const TensorT<T>& std_keypoints,
                                  CycleScaleSource scale_source = CycleScaleSource::kPredicted,
                                  const TensorT<T>& input_scales = {});

template <typename T>
struct TotalLossT {
    TensorT<T> value;  // scalar on the active tape
    LossBreakdownT<T> parts;
};

template <typename T>
TotalLossT<T> total_loss(const SkeletonGraphT<T>& skel, const TensorT<T>& pred_shape,
                         const TensorT<T>& pred_rot6d, const TensorT<T>& pred_trans,
                         const TensorT<T>& true_rot, const TensorT<T>& std_keypoints,
                         const LossConfigT<T>& cfg = {}, const TensorT<T>& input_scales = {});

#define NIK_LOSSES_EXTERN(T)                                                                  \
    extern template TensorT<T> geodesic_loss<T>(const TensorT<T>&, const TensorT<T>&);       \
    extern template TensorT<T> orthonormality_loss<T>(const TensorT<T>&);                    \
    extern template TensorT<T> cycle_consistency_loss<T>(                                     \
        const SkeletonGraphT<T>&, const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,   \
        const TensorT<T>&, CycleScaleSource, const TensorT<T>&);                              \
    extern template TotalLossT<T> total_loss<T>(                                             \
        const SkeletonGraphT<T>&, const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,   \
        const TensorT<T>&, const TensorT<T>&, const LossConfigT<T>&, const TensorT<T>&);
NIK_LOSSES_EXTERN(float)
NIK_LOSSES_EXTERN(double)
#undef NIK_LOSSES_EXTERN

}  // namespace nik
