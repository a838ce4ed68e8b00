#include "nik/diffkin.hpp"

namespace nik {

template <typename T>
SkeletonGraphT<T> SkeletonGraphT<T>::from(const Skeleton& skel) {
    skel.validate();
    SkeletonGraphT<T> g;
    g.parents = skel.parents;
    g.joints = skel.joints();
    g.shape_dims = skel.shape_dims();
    g.keypoints = skel.keypoints();

    std::vector<T> rest(static_cast<size_t>(3 * g.joints));
    for (int j = 0; j < g.joints; ++j)
        for (int c = 0; c < 3; ++c)
            rest[static_cast<size_t>(3 * j + c)] = static_cast<T>(skel.rest_offsets(j, c));
    g.rest_flat = TensorT<T>::from_data({3 * g.joints}, std::move(rest));

    std::vector<T> blend(static_cast<size_t>(g.shape_dims * 3 * g.joints));
    for (int s = 0; s < g.shape_dims; ++s)
        for (int r = 0; r < 3 * g.joints; ++r)
            blend[static_cast<size_t>(s * 3 * g.joints + r)] =
                static_cast<T>(skel.shape_blend(r, s));
    g.blend_t = TensorT<T>::from_data({g.shape_dims, 3 * g.joints}, std::move(blend));

    std::vector<T> reg(static_cast<size_t>(g.joints * g.keypoints));
    for (int j = 0; j < g.joints; ++j)
        for (int k = 0; k < g.keypoints; ++k)
            reg[static_cast<size_t>(j * g.keypoints + k)] = static_cast<T>(skel.regressor(k, j));
    g.regressor_t = TensorT<T>::from_data({g.joints, g.keypoints}, std::move(reg));
    return g;
}

namespace {

template <typename T>
void check_not_degenerate(const TensorT<T>& norms, const char* what) {
    for (T v : norms.data())
        if (v < T(1e-8))
            throw DegenerateRotation(std::string("rot6d_to_matrix_graph: degenerate ") + what);
}

// Cross product over the trailing axis of two [..., 3] tensors.
template <typename T>
TensorT<T> cross_last(const TensorT<T>& u, const TensorT<T>& v) {
    const int ax = u.rank() - 1;
    auto ux = slice(u, ax, 0, 1), uy = slice(u, ax, 1, 1), uz = slice(u, ax, 2, 1);
    auto vx = slice(v, ax, 0, 1), vy = slice(v, ax, 1, 1), vz = slice(v, ax, 2, 1);
    auto cx = sub(mul(uy, vz), mul(uz, vy));
    auto cy = sub(mul(uz, vx), mul(ux, vz));
    auto cz = sub(mul(ux, vy), mul(uy, vx));
    return concat<T>({cx, cy, cz}, ax);
}

}  // namespace

template <typename T>
TensorT<T> rot6d_to_matrix_graph(const TensorT<T>& rot6d) {
    if (rot6d.rank() < 1 || rot6d.dim(rot6d.rank() - 1) != 6)
        throw ContractViolation("rot6d_to_matrix_graph: trailing axis must be 6, got " +
                                shape_str(rot6d.shape()));
    const int ax = rot6d.rank() - 1;
    auto a = slice(rot6d, ax, 0, 3);
    auto b = slice(rot6d, ax, 3, 3);

    auto na = sqrt_(sum_axis(square(a), ax));
    check_not_degenerate(na, "|a|");
    auto c1 = div_prefix(a, na);

    auto proj = sum_axis(mul(c1, b), ax);
    auto residual = sub(b, mul_prefix(c1, proj));
    auto nb = sqrt_(sum_axis(square(residual), ax));
    check_not_degenerate(nb, "Gram-Schmidt residual of b");
    auto c2 = div_prefix(residual, nb);
    auto c3 = cross_last(c1, c2);

    // Columns [c1 c2 c3]: reshape each to [..., 3, 1] and concatenate along
    // the new trailing axis.
    Shape col_shape(rot6d.shape().begin(), rot6d.shape().end() - 1);
    col_shape.push_back(3);
    col_shape.push_back(1);
    auto c1m = reshape(c1, col_shape);
    auto c2m = reshape(c2, col_shape);
    auto c3m = reshape(c3, col_shape);
    return concat<T>({c1m, c2m, c3m}, static_cast<int>(col_shape.size()) - 1);
}

template <typename T>
FkGraphOutT<T> fk_graph(const SkeletonGraphT<T>& skel, const TensorT<T>& shape,
                        const TensorT<T>& rot6d, const TensorT<T>& trans) {
    const int J = skel.joints;
    if (rot6d.rank() != 4 || rot6d.dim(2) != J || rot6d.dim(3) != 6)
        throw ContractViolation("fk_graph: rot6d must be [B,T,J,6], got " +
                                shape_str(rot6d.shape()));
    const int B = rot6d.dim(0);
    const int Tn = rot6d.dim(1);
    if (shape.rank() != 2 || shape.dim(0) != B || shape.dim(1) != skel.shape_dims)
        throw ContractViolation("fk_graph: shape must be [B,S], got " +
                                shape_str(shape.shape()));
    if (trans.rank() != 3 || trans.dim(0) != B || trans.dim(1) != Tn || trans.dim(2) != 3)
        throw ContractViolation("fk_graph: trans must be [B,T,3], got " +
                                shape_str(trans.shape()));

    // offsets(s) = rest + blend * s, shared across frames: [B,T,J,3]
    TensorT<T> offs = skel.shape_dims > 0
                          ? add_bias(matmul(shape, skel.blend_t), skel.rest_flat)
                          : repeat_axis(reshape(skel.rest_flat, {1, 3 * J}), 0, B);
    offs = repeat_axis(reshape(offs, {B, 1, J, 3}), 1, Tn);

    auto rot = rot6d_to_matrix_graph(rot6d);  // [B,T,J,3,3]

    std::vector<TensorT<T>> world_rot(static_cast<size_t>(J));
    std::vector<TensorT<T>> world_pos(static_cast<size_t>(J));
    for (int j = 0; j < J; ++j) {
        auto local = reshape(slice(rot, 2, j, 1), {B, Tn, 3, 3});
        if (j == 0) {
            world_rot[0] = local;
            world_pos[0] = trans;
            continue;
        }
        const int p = skel.parents[static_cast<size_t>(j)];
        auto off_j = reshape(slice(offs, 2, j, 1), {B, Tn, 3, 1});
        world_rot[static_cast<size_t>(j)] = matmul(world_rot[static_cast<size_t>(p)], local);
        world_pos[static_cast<size_t>(j)] =
            add(world_pos[static_cast<size_t>(p)],
                reshape(matmul(world_rot[static_cast<size_t>(p)], off_j), {B, Tn, 3}));
    }

    std::vector<TensorT<T>> stacked;
    stacked.reserve(static_cast<size_t>(J));
    for (int j = 0; j < J; ++j)
        stacked.push_back(reshape(world_pos[static_cast<size_t>(j)], {B, Tn, 1, 3}));

    FkGraphOutT<T> out;
    out.joints = concat(stacked, 2);  // [B,T,J,3]
    // keypoints = W * joints per frame, via [B,T,3,J] @ [J,K].
    out.keypoints = transpose_last(matmul(transpose_last(out.joints), skel.regressor_t));
    return out;
}

template struct SkeletonGraphT<float>;
template struct SkeletonGraphT<double>;
template TensorT<float> rot6d_to_matrix_graph<float>(const TensorT<float>&);
template TensorT<double> rot6d_to_matrix_graph<double>(const TensorT<double>&);
template FkGraphOutT<float> fk_graph<float>(const SkeletonGraphT<float>&, const TensorT<float>&,
                                            const TensorT<float>&, const TensorT<float>&);
template FkGraphOutT<double> fk_graph<double>(const SkeletonGraphT<double>&,
                                              const TensorT<double>&, const TensorT<double>&,
                                              const TensorT<double>&);

}  // namespace nik
