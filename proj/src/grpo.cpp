#include "cadenza/grpo.hpp"

#include "cadenza/errors.hpp"
#include "cadenza/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cadenza::grpo {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct SurrogateTerms {
    double loss = 0.0;
    double kl = 0.0;  // mean over completions of mean token KL
};

double population_std(const std::vector<double>& centered) {
    double acc = 0.0;
    for (const double c : centered) acc += c * c;
    return std::sqrt(acc / static_cast<double>(centered.size()));
}

/// Whether the min() in the clipped surrogate selects the unclipped branch
/// (the only branch with a nonzero derivative in rho).
bool ratio_active(double rho, double advantage, double clip) {
    return advantage >= 0.0 ? rho <= 1.0 + clip : rho >= 1.0 - clip;
}

double clipped_term(double rho, double advantage, double clip) {
    const double clipped = std::clamp(rho, 1.0 - clip, 1.0 + clip);
    return std::min(rho * advantage, clipped * advantage);
}

double token_kl(const Eigen::MatrixXd& cur_logdist, const Eigen::MatrixXd& ref_logdist,
                Eigen::Index t) {
    const Eigen::ArrayXd lc = cur_logdist.row(t).array();
    const Eigen::ArrayXd lr = ref_logdist.row(t).array();
    return (lc.exp() * (lc - lr)).sum();
}

SurrogateTerms surrogate_terms(const PolicyGroup& group, const std::vector<double>& advantages,
                               const GRPOConfig& cfg) {
    const int G = group.size();
    if (G < 2) throw InvalidGroup("surrogate needs a group of >= 2 completions");
    if (static_cast<int>(advantages.size()) != G)
        throw InvalidGroup("advantages/completions size mismatch");

    double j = 0.0;
    double kl_total = 0.0;
    for (int i = 0; i < G; ++i) {
        const auto& lc = group.logp_current[static_cast<std::size_t>(i)];
        const auto& lb = group.logp_behavior[static_cast<std::size_t>(i)];
        const auto C = lc.size();
        const double a = advantages[static_cast<std::size_t>(i)];

        double surrogate = 0.0;
        if (cfg.sequence_ratio) {
            const double rho = std::exp((lc - lb).sum());
            if (!std::isfinite(rho))
                throw NumericalError("non-finite sequence ratio in completion " + std::to_string(i));
            surrogate = clipped_term(rho, a, cfg.clip);
        } else {
            for (Eigen::Index t = 0; t < C; ++t) {
                const double rho = std::exp(lc[t] - lb[t]);
                if (!std::isfinite(rho))
                    throw NumericalError("non-finite ratio at token index " + std::to_string(t) +
                                         " of completion " + std::to_string(i));
                surrogate += clipped_term(rho, a, cfg.clip);
            }
            surrogate /= static_cast<double>(C);
        }

        double kl = 0.0;
        for (Eigen::Index t = 0; t < C; ++t)
            kl += token_kl(group.current_logdist[static_cast<std::size_t>(i)],
                           group.reference_logdist[static_cast<std::size_t>(i)], t);
        kl /= static_cast<double>(C);

        j += surrogate - cfg.kl_coeff * kl;
        kl_total += kl;
    }
    return {-j / G, kl_total / G};
}

} // namespace

std::vector<double> normalize_advantages(const std::vector<double>& rewards, double std_floor) {
    const auto g = static_cast<double>(rewards.size());
    if (rewards.size() < 2) throw InvalidGroup("advantage normalization needs >= 2 rewards");

    double sum = 0.0;
    for (const double r : rewards) sum += r;
    // (r*G - sum)/G keeps centering exact for representable shifts
    std::vector<double> centered(rewards.size());
    for (std::size_t i = 0; i < rewards.size(); ++i) centered[i] = (rewards[i] * g - sum) / g;

    const double sd = population_std(centered);
    std::vector<double> out(rewards.size(), 0.0);
    if (sd < std_floor) return out;
    for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = centered[i] / sd;
    return out;
}

PolicyGroup build_group(const policy::PolicySpec& spec, const VectorXd& behavior_params,
                        const VectorXd& reference_params, const std::vector<int>& prompt,
                        const RewardFn& reward_fn, const GRPOConfig& cfg, std::uint64_t step_index,
                        std::uint64_t group_index, int eos_id) {
    if (cfg.group_size < 2) throw InvalidGroup("group_size must be >= 2");
    if (cfg.max_new_tokens < 1) throw InvalidArgument("max_new_tokens must be >= 1");

    Rng rng(Rng::mix(Rng::mix(cfg.seed, step_index), group_index));
    PolicyGroup group;
    group.prompt = prompt;
    for (int i = 0; i < cfg.group_size; ++i)
        group.completions.push_back(
            policy::sample(spec, behavior_params, prompt, cfg.max_new_tokens, eos_id, rng));

    const auto P = static_cast<Eigen::Index>(prompt.size());
    for (const auto& completion : group.completions) {
        group.rewards.push_back(reward_fn(prompt, completion));

        std::vector<int> tokens = prompt;
        tokens.insert(tokens.end(), completion.begin(), completion.end());
        const auto positions = spec.default_positions(static_cast<int>(tokens.size()));
        const auto C = static_cast<Eigen::Index>(completion.size());

        const policy::Forward fb = policy::forward(spec, behavior_params, tokens, positions);
        VectorXd lpb(C);
        for (Eigen::Index t = 0; t < C; ++t)
            lpb[t] = fb.logp(P - 1 + t, completion[static_cast<std::size_t>(t)]);
        group.logp_behavior.push_back(std::move(lpb));

        const policy::Forward fr = policy::forward(spec, reference_params, tokens, positions);
        VectorXd lpr(C);
        MatrixXd ref_dist(C, spec.vocab);
        for (Eigen::Index t = 0; t < C; ++t) {
            lpr[t] = fr.logp(P - 1 + t, completion[static_cast<std::size_t>(t)]);
            ref_dist.row(t) = fr.logp.row(P - 1 + t);
        }
        group.logp_reference.push_back(std::move(lpr));
        group.reference_logdist.push_back(std::move(ref_dist));
    }
    return group;
}

void refresh_current(PolicyGroup& group, const policy::PolicySpec& spec, const VectorXd& params) {
    const auto P = static_cast<Eigen::Index>(group.prompt.size());
    group.logp_current.clear();
    group.current_logdist.clear();
    for (const auto& completion : group.completions) {
        std::vector<int> tokens = group.prompt;
        tokens.insert(tokens.end(), completion.begin(), completion.end());
        const auto positions = spec.default_positions(static_cast<int>(tokens.size()));
        const policy::Forward f = policy::forward(spec, params, tokens, positions);

        const auto C = static_cast<Eigen::Index>(completion.size());
        VectorXd lp(C);
        MatrixXd dist(C, spec.vocab);
        for (Eigen::Index t = 0; t < C; ++t) {
            lp[t] = f.logp(P - 1 + t, completion[static_cast<std::size_t>(t)]);
            dist.row(t) = f.logp.row(P - 1 + t);
        }
        group.logp_current.push_back(std::move(lp));
        group.current_logdist.push_back(std::move(dist));
    }
}

double surrogate_loss(const PolicyGroup& group, const std::vector<double>& advantages,
                      const GRPOConfig& cfg) {
    return surrogate_terms(group, advantages, cfg).loss;
}

Eigen::VectorXd surrogate_gradient(const policy::PolicySpec& spec, const VectorXd& params,
                                   const PolicyGroup& group, const std::vector<double>& advantages,
                                   const GRPOConfig& cfg) {
    const int G = group.size();
    if (G < 2) throw InvalidGroup("surrogate needs a group of >= 2 completions");
    const auto P = static_cast<Eigen::Index>(group.prompt.size());

    VectorXd grad = VectorXd::Zero(spec.param_count());
    for (int i = 0; i < G; ++i) {
        const auto& completion = group.completions[static_cast<std::size_t>(i)];
        const auto& lb = group.logp_behavior[static_cast<std::size_t>(i)];
        const auto& ref_dist = group.reference_logdist[static_cast<std::size_t>(i)];
        const double a = advantages[static_cast<std::size_t>(i)];
        const auto C = static_cast<Eigen::Index>(completion.size());

        std::vector<int> tokens = group.prompt;
        tokens.insert(tokens.end(), completion.begin(), completion.end());
        const auto positions = spec.default_positions(static_cast<int>(tokens.size()));
        const policy::Forward f = policy::forward(spec, params, tokens, positions);

        double seq_rho = 1.0;
        bool seq_active = true;
        if (cfg.sequence_ratio) {
            double log_rho = 0.0;
            for (Eigen::Index t = 0; t < C; ++t)
                log_rho += f.logp(P - 1 + t, completion[static_cast<std::size_t>(t)]) - lb[t];
            seq_rho = std::exp(log_rho);
            if (!std::isfinite(seq_rho))
                throw NumericalError("non-finite sequence ratio in completion " + std::to_string(i));
            seq_active = ratio_active(seq_rho, a, cfg.clip);
        }

        MatrixXd d_logits = MatrixXd::Zero(static_cast<Eigen::Index>(tokens.size()), spec.vocab);
        for (Eigen::Index t = 0; t < C; ++t) {
            const Eigen::Index row = P - 1 + t;
            const int y = completion[static_cast<std::size_t>(t)];
            const Eigen::ArrayXd p = f.probs.row(row).array();
            const Eigen::ArrayXd lc_dist = f.logp.row(row).array();
            const Eigen::ArrayXd lr_dist = ref_dist.row(t).array();

            // surrogate branch: dJ/dlogp(y) = w; chain through log-softmax
            double w = 0.0;
            if (cfg.sequence_ratio) {
                if (seq_active) w = seq_rho * a / G;
            } else {
                const double rho = std::exp(f.logp(row, y) - lb[t]);
                if (!std::isfinite(rho))
                    throw NumericalError("non-finite ratio at token index " + std::to_string(t) +
                                         " of completion " + std::to_string(i));
                if (ratio_active(rho, a, cfg.clip))
                    w = rho * a / (G * static_cast<double>(C));
            }
            Eigen::ArrayXd dz = w * p;  // dL/dz = -w * (onehot_y - p)
            dz[y] -= w;

            // KL penalty: dJ/dz_u = -(beta/(G*C)) * p_u * ((lc-lr) - KL_t)
            const double kl_t = (p * (lc_dist - lr_dist)).sum();
            dz += cfg.kl_coeff / (G * static_cast<double>(C)) * p * ((lc_dist - lr_dist) - kl_t);

            d_logits.row(row) = dz.matrix().transpose();
        }
        grad += policy::backward(spec, params, tokens, positions, f, d_logits);
    }
    return grad;
}

StepReport grpo_step(PolicyHandle& policy, const std::vector<std::vector<int>>& prompts,
                     const RewardFn& reward_fn, const GRPOConfig& cfg, std::uint64_t step_index) {
    if (prompts.empty()) throw InvalidArgument("grpo_step: no prompts");
    const VectorXd behavior = policy.current;  // per-step snapshot

    std::vector<PolicyGroup> groups(prompts.size());
    parallel_for(prompts.size(), cfg.workers, [&](std::size_t g) {
        PolicyGroup group = build_group(policy.spec, behavior, policy.reference, prompts[g],
                                        reward_fn, cfg, step_index, g, policy.eos_id);
        refresh_current(group, policy.spec, behavior);  // on-policy: current == behavior here
        groups[g] = std::move(group);
    });

    StepReport report;
    double reward_sum = 0.0;
    std::size_t n_samples = 0;
    std::vector<std::vector<double>> advantages(groups.size());
    bool any_live = false;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        for (const double r : groups[g].rewards) {
            reward_sum += r;
            ++n_samples;
        }
        advantages[g] = normalize_advantages(groups[g].rewards, cfg.std_floor);
        for (const double a : advantages[g])
            if (a != 0.0) any_live = true;
    }
    report.mean_reward = reward_sum / static_cast<double>(n_samples);

    double loss_sum = 0.0;
    double kl_sum = 0.0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const SurrogateTerms terms = surrogate_terms(groups[g], advantages[g], cfg);
        loss_sum += terms.loss;
        kl_sum += terms.kl;
    }
    report.loss = loss_sum / static_cast<double>(groups.size());
    report.kl = kl_sum / static_cast<double>(groups.size());

    if (!any_live) {
        // reward-driven update skipped; the KL penalty still pulls the policy
        // toward the reference (exactly no update when beta = 0)
        report.skipped = true;
        if (cfg.kl_coeff <= 0.0) return report;
    }

    std::vector<VectorXd> grads(groups.size());
    parallel_for(groups.size(), cfg.workers, [&](std::size_t g) {
        grads[g] = surrogate_gradient(policy.spec, policy.current, groups[g], advantages[g], cfg);
    });
    VectorXd grad = VectorXd::Zero(policy.spec.param_count());
    for (const auto& g : grads) grad += g;
    grad /= static_cast<double>(groups.size());

    report.grad_norm = grad.norm();
    if (cfg.max_grad_norm > 0.0 && report.grad_norm > cfg.max_grad_norm)
        grad *= cfg.max_grad_norm / report.grad_norm;
    policy.current -= cfg.learning_rate * grad;
    return report;
}

double check_gradients(const policy::PolicySpec& spec, const VectorXd& params,
                       const PolicyGroup& group, const GRPOConfig& cfg, double h) {
    if (h < 1e-6 || h > 1e-3) throw InvalidArgument("finite-difference step must be in [1e-6, 1e-3]");
    if (spec.param_count() > 10000)
        throw InvalidArgument("gradient checking is limited to policies with <= 1e4 parameters");

    const auto advantages = normalize_advantages(group.rewards, cfg.std_floor);
    const VectorXd analytic = surrogate_gradient(spec, params, group, advantages, cfg);

    PolicyGroup probe = group;
    const auto loss_at = [&](const VectorXd& p) {
        refresh_current(probe, spec, p);
        return surrogate_loss(probe, advantages, cfg);
    };

    VectorXd perturbed = params;
    double max_err = 0.0;
    for (Eigen::Index i = 0; i < params.size(); ++i) {
        perturbed[i] = params[i] + h;
        const double up = loss_at(perturbed);
        perturbed[i] = params[i] - h;
        const double down = loss_at(perturbed);
        perturbed[i] = params[i];

        const double fd = (up - down) / (2.0 * h);
        const double denom = std::max(std::abs(fd), std::abs(analytic[i]));
        const double err = denom < 1e-8 ? std::abs(fd - analytic[i])
                                        : std::abs(fd - analytic[i]) / denom;
        max_err = std::max(max_err, err);
    }
    return max_err;
}

std::vector<GradCheckResult> gradient_check_suite(int cases, std::uint64_t seed, double h) {
    std::vector<GradCheckResult> out;
    for (int c = 0; c < cases; ++c) {
        policy::PolicySpec spec;
        GRPOConfig cfg;
        PolicyGroup group;
        VectorXd params;
        GradCheckResult result;

        // central differences are only valid away from the clip kinks, so an
        // instance with a ratio inside the guard band around 1 +- eps is
        // redrawn (the surrogate is not differentiable there)
        const double guard = 100.0 * h;
        for (int attempt = 0;; ++attempt) {
            const std::uint64_t case_seed =
                Rng::mix(seed, static_cast<std::uint64_t>(c + 1000 * attempt));
            Rng rng(case_seed);

            spec = {};
            spec.vocab = 8 + static_cast<int>(rng.uniform_int(0, 4));
            spec.width = 8;
            spec.blocks = 2;
            spec.mode = c % 2 == 0 ? rote::Mode::time : rote::Mode::index;

            cfg = {};
            cfg.seed = case_seed;
            cfg.group_size = 4 + static_cast<int>(rng.uniform_int(0, 1));
            cfg.max_new_tokens = 4 + static_cast<int>(rng.uniform_int(0, 2));
            cfg.clip = c % 3 == 0 ? 0.1 : 0.2;
            cfg.kl_coeff = c % 2 == 0 ? 0.04 : 0.0;

            const VectorXd behavior = policy::init_params(spec, case_seed + 1);
            const VectorXd reference = policy::init_params(spec, case_seed + 2);
            // evaluate away from the behavior snapshot so ratios stray out of
            // the clip band on a healthy fraction of cases
            params = behavior;
            const double offset = c % 3 == 2 ? 0.3 : 0.05;
            for (Eigen::Index i = 0; i < params.size(); ++i) params[i] += offset * rng.normal();

            std::vector<int> prompt = {0};
            prompt.push_back(static_cast<int>(rng.uniform_int(0, spec.vocab - 1)));

            const RewardFn reward = [](const std::vector<int>&,
                                       const std::vector<int>& completion) {
                std::uint64_t hash = 0xcbf29ce484222325ULL;
                for (const int t : completion) hash = Rng::mix(hash, static_cast<std::uint64_t>(t));
                return static_cast<double>(hash % 5) / 2.0;
            };
            group = build_group(spec, behavior, reference, prompt, reward, cfg, 0, 0, /*eos*/ -1);

            result = {};
            result.beta = cfg.kl_coeff;
            refresh_current(group, spec, params);
            bool near_kink = false;
            for (int i = 0; i < group.size(); ++i) {
                const auto& lc = group.logp_current[static_cast<std::size_t>(i)];
                const auto& lb = group.logp_behavior[static_cast<std::size_t>(i)];
                for (Eigen::Index t = 0; t < lc.size(); ++t) {
                    const double rho = std::exp(lc[t] - lb[t]);
                    if (std::abs(rho - (1.0 - cfg.clip)) < guard ||
                        std::abs(rho - (1.0 + cfg.clip)) < guard)
                        near_kink = true;
                    if (rho < 1.0 - cfg.clip || rho > 1.0 + cfg.clip)
                        result.clipped_regime = true;
                }
            }
            if (!near_kink || attempt >= 8) break;
        }

        result.max_rel_err = check_gradients(spec, params, group, cfg, h);
        out.push_back(result);
    }
    return out;
}

double mle_step(const policy::PolicySpec& spec, VectorXd& params,
                const std::vector<std::pair<std::vector<int>, std::vector<int>>>& pairs,
                double learning_rate) {
    if (pairs.empty()) throw InvalidArgument("mle_step: no training pairs");
    std::size_t total_tokens = 0;
    for (const auto& [prompt, completion] : pairs) total_tokens += completion.size();

    VectorXd grad = VectorXd::Zero(spec.param_count());
    double nll = 0.0;
    for (const auto& [prompt, completion] : pairs) {
        std::vector<int> tokens = prompt;
        tokens.insert(tokens.end(), completion.begin(), completion.end());
        const auto positions = spec.default_positions(static_cast<int>(tokens.size()));
        const policy::Forward f = policy::forward(spec, params, tokens, positions);

        const auto P = static_cast<Eigen::Index>(prompt.size());
        MatrixXd d_logits = MatrixXd::Zero(static_cast<Eigen::Index>(tokens.size()), spec.vocab);
        for (std::size_t t = 0; t < completion.size(); ++t) {
            const Eigen::Index row = P - 1 + static_cast<Eigen::Index>(t);
            const int y = completion[t];
            nll -= f.logp(row, y);
            d_logits.row(row) = f.probs.row(row) / static_cast<double>(total_tokens);
            d_logits(row, y) -= 1.0 / static_cast<double>(total_tokens);
        }
        grad += policy::backward(spec, params, tokens, positions, f, d_logits);
    }
    params -= learning_rate * grad;
    return nll / static_cast<double>(total_tokens);
}

} // namespace cadenza::grpo
