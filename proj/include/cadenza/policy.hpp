#pragma once

#include "cadenza/rng.hpp"
#include "cadenza/rote.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace cadenza::policy {

/// Two-block causal self-attention language model, small enough for
/// finite-difference checking. Rotary angles come from token timestamps
/// (time mode, 40 ms stride by default) or token indices (index mode).
struct PolicySpec {
    int vocab = 16;
    int width = 16;   // model width == single attention head dim
    int blocks = 2;
    rote::Mode mode = rote::Mode::time;
    double time_stride = 0.040;
    double rope_base = 10000.0;

    int param_count() const {
        return vocab * width + blocks * 4 * width * width + vocab * width + vocab;
    }

    /// Default positions for a sequence of length n under this spec's mode.
    std::vector<double> default_positions(int n) const;
};

/// Flat little-endian float32 tensor container (the on-disk policy format).
struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> data;
};

/// Embeddings and attention weights are seeded Gaussians; the output head is
/// zeroed so the initial next-token distribution is exactly uniform.
Eigen::VectorXd init_params(const PolicySpec& spec, std::uint64_t seed);

/// Forward cache: everything backward() needs, plus per-position
/// log-distributions. Row t of `logp` is the log next-token distribution
/// *after* consuming position t.
struct Forward {
    Eigen::MatrixXd logp;  // T x V
    // caches (one entry per block)
    std::vector<Eigen::MatrixXd> x_in;      // block inputs, T x d
    std::vector<Eigen::MatrixXd> q_rot;     // rotated queries
    std::vector<Eigen::MatrixXd> k_rot;     // rotated keys
    std::vector<Eigen::MatrixXd> v_proj;    // value projections
    std::vector<Eigen::MatrixXd> attn;      // causal softmax weights, T x T
    std::vector<Eigen::MatrixXd> attn_out;  // attention mixes, T x d
    Eigen::MatrixXd x_final;                // T x d
    Eigen::MatrixXd probs;                  // softmax of logits, T x V
};

Forward forward(const PolicySpec& spec, const Eigen::VectorXd& params,
                const std::vector<int>& tokens, const std::vector<double>& positions);

/// Gradient of a scalar loss with per-position logit gradients `d_logits`
/// (T x V; rows for positions without loss contribution are zero).
Eigen::VectorXd backward(const PolicySpec& spec, const Eigen::VectorXd& params,
                         const std::vector<int>& tokens, const std::vector<double>& positions,
                         const Forward& cache, const Eigen::MatrixXd& d_logits);

/// Per-token log-probabilities of `completion` given `prompt` (prompt must be
/// non-empty). `positions`, when empty, defaults to the spec's mode over the
/// concatenated sequence.
Eigen::VectorXd policy_logprobs(const PolicySpec& spec, const Eigen::VectorXd& params,
                                const std::vector<int>& prompt, const std::vector<int>& completion,
                                std::vector<double> positions = {});

/// Softmax-sample until `eos_id` (if >= 0) or `max_new` tokens.
std::vector<int> sample(const PolicySpec& spec, const Eigen::VectorXd& params,
                        const std::vector<int>& prompt, int max_new, int eos_id, Rng& rng);

// ---- parameter file (magic "CDZW", version, shape table, f32 LE data) ----

void save_params(const PolicySpec& spec, const Eigen::VectorXd& params, const std::string& path);
Eigen::VectorXd load_params(const PolicySpec& spec, const std::string& path);

/// Named views into the flat parameter vector, in file order.
std::vector<NamedTensor> to_tensors(const PolicySpec& spec, const Eigen::VectorXd& params);

} // namespace cadenza::policy
