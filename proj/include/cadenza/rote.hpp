#pragma once

#include "cadenza/errors.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <vector>

namespace cadenza::rote {

enum class Mode { index, time };

/// Rotary table: per-pair base frequencies w_k = base^(-2k/d). In index mode
/// the global angle is theta = -i*2pi (conventional rotary); in time mode it
/// is theta = -tau_i*2pi, so angles follow absolute timestamps instead of
/// token positions. With tau_i = i the two modes coincide.
///
/// Aliasing: because w_0 = 1, two positions whose tau differ by an exact
/// integer receive identical angles in the first rotation plane (theta*w_0
/// changes by a multiple of 2pi); plane k repeats with period base^(2k/d).
template <typename Scalar = double>
struct RotaryTable {
    int head_dim = 0;
    Mode mode = Mode::time;
    Eigen::Vector<Scalar, Eigen::Dynamic> freqs;  // strictly decreasing, w_0 = 1

    static RotaryTable make(int head_dim, Mode mode = Mode::time, Scalar base = Scalar(10000)) {
        if (head_dim <= 0 || head_dim % 2 != 0)
            throw InvalidDimension("rotary head_dim must be positive and even");
        RotaryTable t;
        t.head_dim = head_dim;
        t.mode = mode;
        t.freqs.resize(head_dim / 2);
        for (int k = 0; k < head_dim / 2; ++k)
            t.freqs[k] = std::pow(base, Scalar(-2) * Scalar(k) / Scalar(head_dim));
        return t;
    }

    Scalar angle(Scalar position) const {
        return Scalar(-2) * std::numbers::pi_v<Scalar> * position;
    }
};

/// Plane rotation of consecutive pairs (x_{2k}, x_{2k+1}) by theta * w_k.
/// `position` is a token index (index mode) or a timestamp in seconds (time
/// mode). Rotations are isometries: the L2 norm is preserved exactly.
template <typename Scalar>
Eigen::Vector<Scalar, Eigen::Dynamic> rotate(const Eigen::Vector<Scalar, Eigen::Dynamic>& vec,
                                             Scalar position, const RotaryTable<Scalar>& table) {
    if (vec.size() != table.head_dim || vec.size() % 2 != 0)
        throw InvalidDimension("rotate: vector size must equal the (even) table head_dim");
    const Scalar theta = table.angle(position);
    Eigen::Vector<Scalar, Eigen::Dynamic> out(vec.size());
    for (int k = 0; k < table.head_dim / 2; ++k) {
        const Scalar phi = theta * table.freqs[k];
        const Scalar c = std::cos(phi);
        const Scalar s = std::sin(phi);
        out[2 * k] = c * vec[2 * k] - s * vec[2 * k + 1];
        out[2 * k + 1] = s * vec[2 * k] + c * vec[2 * k + 1];
    }
    return out;
}

/// Inverse rotation (used by backprop: the Jacobian transpose of `rotate`).
template <typename Scalar>
Eigen::Vector<Scalar, Eigen::Dynamic> rotate_back(const Eigen::Vector<Scalar, Eigen::Dynamic>& vec,
                                                  Scalar position,
                                                  const RotaryTable<Scalar>& table) {
    if (vec.size() != table.head_dim || vec.size() % 2 != 0)
        throw InvalidDimension("rotate_back: vector size must equal the (even) table head_dim");
    const Scalar theta = table.angle(position);
    Eigen::Vector<Scalar, Eigen::Dynamic> out(vec.size());
    for (int k = 0; k < table.head_dim / 2; ++k) {
        const Scalar phi = theta * table.freqs[k];
        const Scalar c = std::cos(phi);
        const Scalar s = std::sin(phi);
        out[2 * k] = c * vec[2 * k] + s * vec[2 * k + 1];
        out[2 * k + 1] = -s * vec[2 * k] + c * vec[2 * k + 1];
    }
    return out;
}

/// tau_i = i * stride. Audio-token timestamps default to a 40 ms stride.
std::vector<double> timestamps_from_stride(int n, double stride = 0.040);

/// Causal rotary attention scores: scores(i,j) = rotate(q_i).rotate(k_j)/sqrt(d)
/// for j <= i; entries above the diagonal are 0. Rows of `queries`/`keys` are
/// positions. Because both sides rotate, a score depends on positions only
/// through (tau_i - tau_j): shifting every tau by a constant leaves it
/// unchanged up to roundoff.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> attention_scores(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& queries,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& keys,
    const std::vector<Scalar>& positions, const RotaryTable<Scalar>& table) {
    const Eigen::Index n = queries.rows();
    if (keys.rows() != n || queries.cols() != table.head_dim || keys.cols() != table.head_dim)
        throw InvalidDimension("attention_scores: shape mismatch");
    if (static_cast<Eigen::Index>(positions.size()) != n)
        throw InvalidDimension("attention_scores: positions size mismatch");

    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> rq(n, table.head_dim);
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> rk(n, table.head_dim);
    for (Eigen::Index i = 0; i < n; ++i) {
        rq.row(i) = rotate<Scalar>(queries.row(i), positions[static_cast<std::size_t>(i)], table);
        rk.row(i) = rotate<Scalar>(keys.row(i), positions[static_cast<std::size_t>(i)], table);
    }

    const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(Scalar(table.head_dim));
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> scores =
        Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j <= i; ++j) scores(i, j) = rq.row(i).dot(rk.row(j)) * inv_sqrt_d;
    return scores;
}

} // namespace cadenza::rote
