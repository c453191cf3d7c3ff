#pragma once

#include "cadenza/grpo.hpp"

#include <string>
#include <vector>

namespace cadenza::tagtask {

/// Toy verifiable-reward task: the prompt carries a key token and the policy
/// must answer `<think>...</think><answer>KEY</answer>`. Rewards come from
/// the real reward engine (format + accuracy) over the rendered token text.
struct TagTask {
    policy::PolicySpec spec;
    int bos = 0;
    int think_open = 1;
    int think_close = 2;
    int answer_open = 3;
    int answer_close = 4;
    int eos = 5;
    int body0 = 6;   // two generic "reasoning" words
    int key0 = 8;
    int n_keys = 4;

    std::vector<int> prompt_for(int key_index) const;
    std::string key_word(int key_index) const;
    std::string token_word(int token) const;
    /// Space-joined words of the completion, stopping at the first eos.
    std::string render(const std::vector<int>& completion) const;
    /// format_reward + accuracy_reward against the prompt's key.
    double reward(const std::vector<int>& prompt, const std::vector<int>& completion) const;
    grpo::RewardFn reward_fn() const;
};

TagTask make_tag_task();

struct TrainConfig {
    grpo::GRPOConfig grpo;
    int warmup_steps = 150;
    double warmup_learning_rate = 0.6;
    int warmup_batch = 24;
    int prompts_per_step = 16;
    int eval_groups = 32;
    /// Learning-rate schedule: ramp from 20% of the configured rate over the
    /// first `ramp_steps`, then taper linearly to `final_lr_fraction`.
    int ramp_steps = 100;
    double final_lr_fraction = 0.3;
    /// Stop once the trailing-15-step mean reward reaches this level; a
    /// converged softmax policy only drifts under further updates.
    double early_stop_reward = 1.9;

    TrainConfig() {
        grpo.learning_rate = 1.0;
        grpo.kl_coeff = 0.08;
        grpo.max_grad_norm = 1.0;
        grpo.max_new_tokens = 8;
        grpo.iterations = 300;
    }
};

struct TrainResult {
    std::vector<grpo::StepReport> steps;
    double final_mean_reward = 0.0;  // sampled eval with the trained policy
    Eigen::VectorXd params;
    grpo::PolicyHandle policy;
};

/// Maximum-likelihood warm-up on tag-skeleton demonstrations whose answer
/// slot is a uniformly random key: the policy learns the grammar but stays at
/// chance accuracy, so the subsequent reinforcement has to learn the copy.
void warmup_skeleton(const TagTask& task, Eigen::VectorXd& params, std::uint64_t seed,
                     int steps, int batch, double learning_rate);

TrainResult train(const TagTask& task, const TrainConfig& cfg);

/// Mean total reward of `policy` over `eval_groups` sampled groups.
double evaluate(const TagTask& task, const grpo::PolicyHandle& policy, const grpo::GRPOConfig& cfg,
                int eval_groups, std::uint64_t seed);

} // namespace cadenza::tagtask
