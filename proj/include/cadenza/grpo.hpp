#pragma once

#include "cadenza/policy.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace cadenza::grpo {

struct GRPOConfig {
    int group_size = 5;       // G
    double clip = 0.2;        // epsilon
    double kl_coeff = 0.04;   // beta
    double learning_rate = 0.1;
    std::uint64_t seed = 0;
    int iterations = 100;
    double std_floor = 1e-8;
    int max_new_tokens = 16;
    int workers = 1;
    /// Global gradient-norm cap applied before the update; 0 disables it.
    double max_grad_norm = 0.0;
    /// Ablation: one sequence-level ratio exp(sum log-ratios) instead of the
    /// default per-token ratio with sequence advantage broadcast.
    bool sequence_ratio = false;
};

/// One prompt with its G sampled completions and everything the surrogate
/// needs: per-token log-probs under current/behavior/reference, plus the full
/// next-token log-distributions of current and reference for the exact KL.
struct PolicyGroup {
    std::vector<int> prompt;
    std::vector<std::vector<int>> completions;
    std::vector<Eigen::VectorXd> logp_current;
    std::vector<Eigen::VectorXd> logp_behavior;
    std::vector<Eigen::VectorXd> logp_reference;
    std::vector<double> rewards;
    std::vector<Eigen::MatrixXd> current_logdist;    // per completion: C_i x V
    std::vector<Eigen::MatrixXd> reference_logdist;  // per completion: C_i x V

    int size() const { return static_cast<int>(completions.size()); }
};

/// Current (trainable), behavior (per-step snapshot) and frozen reference
/// parameters over one shared architecture.
struct PolicyHandle {
    policy::PolicySpec spec;
    Eigen::VectorXd current;
    Eigen::VectorXd reference;
    int eos_id = -1;

    static PolicyHandle make(const policy::PolicySpec& spec, std::uint64_t seed, int eos_id = -1) {
        PolicyHandle h;
        h.spec = spec;
        h.current = policy::init_params(spec, seed);
        h.reference = h.current;
        h.eos_id = eos_id;
        return h;
    }
};

using RewardFn =
    std::function<double(const std::vector<int>& prompt, const std::vector<int>& completion)>;

struct StepReport {
    double mean_reward = 0.0;
    double loss = 0.0;
    double grad_norm = 0.0;
    double kl = 0.0;
    bool skipped = false;
};

/// A_i = (r_i - mean) / population_std; all-zero when the std is below
/// `std_floor`. Centering uses (r_i*G - sum)/G so that shifting every reward
/// by the same representable constant leaves the output bit-identical.
std::vector<double> normalize_advantages(const std::vector<double>& rewards,
                                         double std_floor = 1e-8);

/// Sample G completions for `prompt` from the behavior snapshot and fill in
/// log-probs, reference distributions and rewards. The RNG stream is derived
/// from (seed, step, group) only, so scheduling cannot affect results.
PolicyGroup build_group(const policy::PolicySpec& spec, const Eigen::VectorXd& behavior_params,
                        const Eigen::VectorXd& reference_params, const std::vector<int>& prompt,
                        const RewardFn& reward_fn, const GRPOConfig& cfg, std::uint64_t step_index,
                        std::uint64_t group_index, int eos_id = -1);

/// Recompute logp_current / current_logdist under `params`.
void refresh_current(PolicyGroup& group, const policy::PolicySpec& spec,
                     const Eigen::VectorXd& params);

/// Negative clipped-surrogate objective with exact per-position KL penalty:
/// loss = -(1/G) sum_i [ mean_t min(rho*A_i, clip(rho,1-eps,1+eps)*A_i)
///                       - beta * mean_t KL(current_t || reference_t) ].
/// Requires logp_current / current_logdist to be consistent with the policy
/// parameters being evaluated (see refresh_current).
double surrogate_loss(const PolicyGroup& group, const std::vector<double>& advantages,
                      const GRPOConfig& cfg);

/// Analytic parameter gradient of surrogate_loss at `params` (recomputes the
/// forward pass internally; does not use the group's cached current data).
Eigen::VectorXd surrogate_gradient(const policy::PolicySpec& spec, const Eigen::VectorXd& params,
                                   const PolicyGroup& group, const std::vector<double>& advantages,
                                   const GRPOConfig& cfg);

/// One optimization step: refresh behavior snapshot, sample groups, score,
/// normalize, apply a single gradient-descent update. Groups whose rewards
/// are all equal contribute zero advantage; if every group is degenerate the
/// step is skipped and reported as such.
StepReport grpo_step(PolicyHandle& policy, const std::vector<std::vector<int>>& prompts,
                     const RewardFn& reward_fn, const GRPOConfig& cfg, std::uint64_t step_index);

/// Max relative error between central finite differences of surrogate_loss
/// and the analytic gradient (absolute error below 1e-8 magnitude).
double check_gradients(const policy::PolicySpec& spec, const Eigen::VectorXd& params,
                       const PolicyGroup& group, const GRPOConfig& cfg, double h);

/// One maximum-likelihood descent step over (prompt, completion) pairs;
/// returns the mean negative log-likelihood before the update. Used to
/// warm-start toy policies before reinforcement.
double mle_step(const policy::PolicySpec& spec, Eigen::VectorXd& params,
                const std::vector<std::pair<std::vector<int>, std::vector<int>>>& pairs,
                double learning_rate);

struct GradCheckResult {
    double max_rel_err = 0.0;
    double beta = 0.0;
    bool clipped_regime = false;  // some ratio fell outside the clip band
};

/// Seeded random (policy, group, config) instances covering beta > 0 and the
/// clipped regime, each checked with central finite differences.
std::vector<GradCheckResult> gradient_check_suite(int cases, std::uint64_t seed, double h);

} // namespace cadenza::grpo
