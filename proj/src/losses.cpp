#include "nik/losses.hpp"

#include <limits>

namespace nik {

namespace {
constexpr double kAcosClamp = 1e-7;
}

template <typename T>
TensorT<T> geodesic_loss(const TensorT<T>& pred_rot6d, const TensorT<T>& true_rot) {
    if (pred_rot6d.rank() != 4 || pred_rot6d.dim(3) != 6)
        throw ContractViolation("geodesic_loss: pred must be [B,T,J,6], got " +
                                shape_str(pred_rot6d.shape()));
    if (true_rot.rank() != 5 || true_rot.dim(3) != 3 || true_rot.dim(4) != 3 ||
        true_rot.dim(0) != pred_rot6d.dim(0) || true_rot.dim(1) != pred_rot6d.dim(1) ||
        true_rot.dim(2) != pred_rot6d.dim(2))
        throw ContractViolation("geodesic_loss: true rotations " + shape_str(true_rot.shape()) +
                                " do not match predictions " + shape_str(pred_rot6d.shape()));
    auto rp = rot6d_to_matrix_graph(pred_rot6d);  // [B,T,J,3,3]
    // tr(Rp Rt^T) = sum_ij Rp_ij Rt_ij
    auto trace = sum_axis(sum_axis(mul(rp, true_rot), 4), 3);  // [B,T,J]
    auto cosang = mul_scalar(add_scalar(trace, T(-1)), T(0.5));
    auto clamped = clamp(cosang, T(-1) + T(kAcosClamp), T(1) - T(kAcosClamp));
    return mean(acos_(clamped));
}

template <typename T>
TensorT<T> orthonormality_loss(const TensorT<T>& pred_rot6d) {
    if (pred_rot6d.rank() < 1 || pred_rot6d.dim(pred_rot6d.rank() - 1) != 6)
        throw ContractViolation("orthonormality_loss: trailing axis must be 6, got " +
                                shape_str(pred_rot6d.shape()));
    const int ax = pred_rot6d.rank() - 1;
    auto a = slice(pred_rot6d, ax, 0, 3);
    auto b = slice(pred_rot6d, ax, 3, 3);
    auto na2 = sum_axis(square(a), ax);
    auto nb2 = sum_axis(square(b), ax);
    auto ab = sum_axis(mul(a, b), ax);
    auto t1 = square(add_scalar(na2, T(-1)));
    auto t2 = square(add_scalar(nb2, T(-1)));
    auto t3 = divide(square(ab), add_scalar(mul(na2, nb2), T(1e-12)));
    return mean(add(add(t1, t2), t3));
}

template <typename T>
TensorT<T> cycle_consistency_loss(const SkeletonGraphT<T>& skel, const TensorT<T>& pred_shape,
                                  const TensorT<T>& pred_rot6d, const TensorT<T>& pred_trans,
                                  const TensorT<T>& std_keypoints,
                                  CycleScaleSource scale_source,
                                  const TensorT<T>& input_scales) {
    auto fk = fk_graph(skel, pred_shape, pred_rot6d, pred_trans);
    auto kp = fk.keypoints;  // [B,T,K,3]
    if (!shapes_equal(kp.shape(), std_keypoints.shape()))
        throw ContractViolation("cycle_consistency_loss: reconstructed " +
                                shape_str(kp.shape()) + " vs input " +
                                shape_str(std_keypoints.shape()));
    const int K = kp.dim(2);

    TensorT<T> denom;
    if (scale_source == CycleScaleSource::kPredicted) {
        // Per-frame combined std of the reconstruction, mirror of the input
        // standardization; centering only feeds the statistic, the
        // keypoints themselves are not centered.
        const int B = kp.dim(0), Tn = kp.dim(1);
        auto centroid = mean_axis(kp, 2);  // [B,T,3]
        auto centered = sub(kp, repeat_axis(reshape(centroid, {B, Tn, 1, 3}), 2, K));
        auto msq = mean_axis(mean_axis(square(centered), 3), 2);  // [B,T]
        denom = sqrt_(clamp(msq, T(1e-16), std::numeric_limits<T>::infinity()));
    } else {
        if (!input_scales.defined())
            throw ContractViolation("cycle_consistency_loss: input_scales required for "
                                    "CycleScaleSource::kInput");
        denom = clamp(input_scales, T(1e-8), std::numeric_limits<T>::infinity());
    }
    auto scaled = div_prefix(kp, denom);
    return mean(square(sub(scaled, std_keypoints)));
}

template <typename T>
TotalLossT<T> total_loss(const SkeletonGraphT<T>& skel, const TensorT<T>& pred_shape,
                         const TensorT<T>& pred_rot6d, const TensorT<T>& pred_trans,
                         const TensorT<T>& true_rot, const TensorT<T>& std_keypoints,
                         const LossConfigT<T>& cfg, const TensorT<T>& input_scales) {
    auto lg = geodesic_loss(pred_rot6d, true_rot);
    auto lon = orthonormality_loss(pred_rot6d);
    auto lcc = cycle_consistency_loss(skel, pred_shape, pred_rot6d, pred_trans, std_keypoints,
                                      cfg.cycle_scale_source, input_scales);
    TotalLossT<T> out;
    out.value = add(add(mul_scalar(lg, cfg.w_geodesic), mul_scalar(lon, cfg.w_orthonormality)),
                    mul_scalar(lcc, cfg.w_cycle));
    out.parts.geodesic = lg.item();
    out.parts.orthonormality = lon.item();
    out.parts.cycle = lcc.item();
    out.parts.total = out.value.item();
    return out;
}

#define NIK_LOSSES_INSTANTIATE(T)                                                            \
    template TensorT<T> geodesic_loss<T>(const TensorT<T>&, const TensorT<T>&);              \
    template TensorT<T> orthonormality_loss<T>(const TensorT<T>&);                           \
    template TensorT<T> cycle_consistency_loss<T>(                                           \
        const SkeletonGraphT<T>&, const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,   \
        const TensorT<T>&, CycleScaleSource, const TensorT<T>&);                             \
    template TotalLossT<T> total_loss<T>(                                                    \
        const SkeletonGraphT<T>&, const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,   \
        const TensorT<T>&, const TensorT<T>&, const LossConfigT<T>&, const TensorT<T>&);
NIK_LOSSES_INSTANTIATE(float)
NIK_LOSSES_INSTANTIATE(double)
#undef NIK_LOSSES_INSTANTIATE

}  // namespace nik
