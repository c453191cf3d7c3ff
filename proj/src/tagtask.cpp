#include "cadenza/tagtask.hpp"

#include "cadenza/rewards.hpp"

namespace cadenza::tagtask {

namespace {
const char* kKeyWords[] = {"alpha", "bravo", "charlie", "delta", "echo", "foxtrot"};
const char* kBodyWords[] = {"step", "because"};
} // namespace

std::vector<int> TagTask::prompt_for(int key_index) const { return {bos, key0 + key_index}; }

std::string TagTask::key_word(int key_index) const { return kKeyWords[key_index]; }

std::string TagTask::token_word(int token) const {
    if (token == bos) return "bos";
    if (token == think_open) return "<think>";
    if (token == think_close) return "</think>";
    if (token == answer_open) return "<answer>";
    if (token == answer_close) return "</answer>";
    if (token == eos) return "";
    if (token >= body0 && token < key0) return kBodyWords[token - body0];
    if (token >= key0 && token < key0 + n_keys) return kKeyWords[token - key0];
    return "?";
}

std::string TagTask::render(const std::vector<int>& completion) const {
    std::string out;
    for (const int t : completion) {
        if (t == eos) break;
        if (!out.empty()) out += ' ';
        out += token_word(t);
    }
    return out;
}

double TagTask::reward(const std::vector<int>& prompt, const std::vector<int>& completion) const {
    const int key_index = prompt.back() - key0;
    const auto breakdown =
        rewards::total_reward(render(completion), rewards::QaTask{key_word(key_index)});
    return breakdown.total;
}

grpo::RewardFn TagTask::reward_fn() const {
    return [task = *this](const std::vector<int>& prompt, const std::vector<int>& completion) {
        return task.reward(prompt, completion);
    };
}

TagTask make_tag_task() {
    TagTask task;
    task.spec.vocab = task.key0 + task.n_keys;
    task.spec.width = 16;
    task.spec.blocks = 2;
    return task;
}

void warmup_skeleton(const TagTask& task, Eigen::VectorXd& params, std::uint64_t seed, int steps,
                     int batch, double learning_rate) {
    Rng rng(seed);
    double lr = learning_rate;
    double best_nll = std::numeric_limits<double>::infinity();
    for (int step = 0; step < steps; ++step) {
        std::vector<std::pair<std::vector<int>, std::vector<int>>> pairs;
        pairs.reserve(static_cast<std::size_t>(batch));
        for (int i = 0; i < batch; ++i) {
            const int prompt_key = static_cast<int>(rng.uniform_int(0, task.n_keys - 1));
            const int answer_key = static_cast<int>(rng.uniform_int(0, task.n_keys - 1));
            const int body = task.body0 + static_cast<int>(rng.uniform_int(0, 1));
            pairs.emplace_back(task.prompt_for(prompt_key),
                               std::vector<int>{task.think_open, body, task.think_close,
                                                task.answer_open, task.key0 + answer_key,
                                                task.answer_close, task.eos});
        }
        const double nll = grpo::mle_step(task.spec, params, pairs, lr);
        // crude divergence guard: back off when the loss runs away
        if (nll > 1.5 * best_nll + 0.1)
            lr *= 0.5;
        else
            best_nll = std::min(best_nll, nll);
    }
}

double evaluate(const TagTask& task, const grpo::PolicyHandle& policy, const grpo::GRPOConfig& cfg,
                int eval_groups, std::uint64_t seed) {
    Rng rng(Rng::mix(seed, 0x9e1));
    double total = 0.0;
    std::size_t count = 0;
    for (int g = 0; g < eval_groups; ++g) {
        const auto prompt = task.prompt_for(g % task.n_keys);
        for (int i = 0; i < cfg.group_size; ++i) {
            const auto completion = policy::sample(task.spec, policy.current, prompt,
                                                   cfg.max_new_tokens, policy.eos_id, rng);
            total += task.reward(prompt, completion);
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

TrainResult train(const TagTask& task, const TrainConfig& cfg) {
    grpo::PolicyHandle policy = grpo::PolicyHandle::make(task.spec, cfg.grpo.seed, task.eos);
    warmup_skeleton(task, policy.current, Rng::mix(cfg.grpo.seed, 0x5eed), cfg.warmup_steps,
                    cfg.warmup_batch, cfg.warmup_learning_rate);
    policy.reference = policy.current;  // reference = post-warmup snapshot

    std::vector<std::vector<int>> prompts;
    for (int i = 0; i < cfg.prompts_per_step; ++i) prompts.push_back(task.prompt_for(i % task.n_keys));

    TrainResult result;
    const auto reward = task.reward_fn();
    const int total = cfg.grpo.iterations;
    for (int step = 0; step < total; ++step) {
        grpo::GRPOConfig step_cfg = cfg.grpo;
        const double peak = cfg.grpo.learning_rate;
        if (step < cfg.ramp_steps) {
            step_cfg.learning_rate = peak * (0.2 + 0.8 * step / std::max(1, cfg.ramp_steps));
        } else {
            const double f = static_cast<double>(step - cfg.ramp_steps) /
                             std::max(1, total - cfg.ramp_steps);
            step_cfg.learning_rate = peak * (1.0 - (1.0 - cfg.final_lr_fraction) * f);
        }
        result.steps.push_back(
            grpo::grpo_step(policy, prompts, reward, step_cfg, static_cast<std::uint64_t>(step)));

        if (cfg.early_stop_reward > 0.0 && result.steps.size() >= 15) {
            double trailing = 0.0;
            for (std::size_t i = result.steps.size() - 15; i < result.steps.size(); ++i)
                trailing += result.steps[i].mean_reward;
            if (trailing / 15.0 >= cfg.early_stop_reward) break;
        }
    }

    result.final_mean_reward = evaluate(task, policy, cfg.grpo, cfg.eval_groups, cfg.grpo.seed);
    result.params = policy.current;
    result.policy = policy;
    return result;
}

} // namespace cadenza::tagtask
