#include "cadenza/policy.hpp"

#include "cadenza/errors.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace cadenza::policy {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using RowMajorMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstRowMajorMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

/// Offsets of the named segments inside the flat parameter vector.
struct Layout {
    int v, d, blocks;
    int embed_off, head_off, bias_off;
    explicit Layout(const PolicySpec& s) : v(s.vocab), d(s.width), blocks(s.blocks) {
        embed_off = 0;
        head_off = v * d + blocks * 4 * d * d;
        bias_off = head_off + v * d;
    }
    int block_off(int b, int which) const { return v * d + (b * 4 + which) * d * d; }
};

ConstRowMajorMap view(const VectorXd& p, int off, int rows, int cols) {
    return ConstRowMajorMap(p.data() + off, rows, cols);
}
RowMajorMap view(VectorXd& p, int off, int rows, int cols) {
    return RowMajorMap(p.data() + off, rows, cols);
}

void check_tokens(const PolicySpec& spec, const std::vector<int>& tokens) {
    for (const int t : tokens)
        if (t < 0 || t >= spec.vocab)
            throw VocabularyError("token id " + std::to_string(t) + " out of vocabulary (" +
                                  std::to_string(spec.vocab) + ")");
}

} // namespace

std::vector<double> PolicySpec::default_positions(int n) const {
    if (mode == rote::Mode::time) return rote::timestamps_from_stride(n, time_stride);
    std::vector<double> pos(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) pos[static_cast<std::size_t>(i)] = i;
    return pos;
}

Eigen::VectorXd init_params(const PolicySpec& spec, std::uint64_t seed) {
    const Layout L(spec);
    VectorXd params = VectorXd::Zero(spec.param_count());
    Rng rng(seed);
    const double embed_scale = 0.5;
    const double attn_scale = 0.5 / std::sqrt(static_cast<double>(spec.width));
    for (int i = 0; i < L.head_off; ++i)
        params[i] = (i < spec.vocab * spec.width ? embed_scale : attn_scale) * rng.normal();
    // head and bias stay zero: uniform initial distribution
    return params;
}

Forward forward(const PolicySpec& spec, const VectorXd& params, const std::vector<int>& tokens,
                const std::vector<double>& positions) {
    check_tokens(spec, tokens);
    const auto T = static_cast<Eigen::Index>(tokens.size());
    if (T == 0) throw InvalidArgument("forward: empty token sequence");
    if (positions.size() != tokens.size())
        throw InvalidDimension("forward: positions/tokens length mismatch");

    const Layout L(spec);
    const int d = spec.width;
    const auto table = rote::RotaryTable<double>::make(d, spec.mode, spec.rope_base);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    Forward f;
    f.x_in.reserve(static_cast<std::size_t>(spec.blocks));

    const auto embed = view(params, L.embed_off, spec.vocab, d);
    MatrixXd x(T, d);
    for (Eigen::Index t = 0; t < T; ++t) x.row(t) = embed.row(tokens[static_cast<std::size_t>(t)]);

    for (int b = 0; b < spec.blocks; ++b) {
        const auto wq = view(params, L.block_off(b, 0), d, d);
        const auto wk = view(params, L.block_off(b, 1), d, d);
        const auto wv = view(params, L.block_off(b, 2), d, d);
        const auto wo = view(params, L.block_off(b, 3), d, d);

        f.x_in.push_back(x);
        MatrixXd q = x * wq.transpose();
        MatrixXd k = x * wk.transpose();
        MatrixXd v = x * wv.transpose();
        for (Eigen::Index t = 0; t < T; ++t) {
            const double pos = positions[static_cast<std::size_t>(t)];
            q.row(t) = rote::rotate<double>(q.row(t), pos, table);
            k.row(t) = rote::rotate<double>(k.row(t), pos, table);
        }

        MatrixXd attn = MatrixXd::Zero(T, T);
        for (Eigen::Index i = 0; i < T; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (Eigen::Index j = 0; j <= i; ++j) {
                attn(i, j) = q.row(i).dot(k.row(j)) * inv_sqrt_d;
                mx = std::max(mx, attn(i, j));
            }
            double denom = 0.0;
            for (Eigen::Index j = 0; j <= i; ++j) {
                attn(i, j) = std::exp(attn(i, j) - mx);
                denom += attn(i, j);
            }
            for (Eigen::Index j = 0; j <= i; ++j) attn(i, j) /= denom;
        }

        MatrixXd mixed = attn * v;
        x = f.x_in.back() + mixed * wo.transpose();

        f.q_rot.push_back(std::move(q));
        f.k_rot.push_back(std::move(k));
        f.v_proj.push_back(std::move(v));
        f.attn.push_back(std::move(attn));
        f.attn_out.push_back(std::move(mixed));
    }
    f.x_final = x;

    const auto head = view(params, L.head_off, spec.vocab, d);
    const auto bias = params.segment(L.bias_off, spec.vocab);
    MatrixXd logits = x * head.transpose();
    logits.rowwise() += bias.transpose();

    f.logp.resize(T, spec.vocab);
    f.probs.resize(T, spec.vocab);
    for (Eigen::Index t = 0; t < T; ++t) {
        const double mx = logits.row(t).maxCoeff();
        const Eigen::ArrayXd shifted = logits.row(t).array() - mx;
        const double lse = std::log(shifted.exp().sum());
        f.logp.row(t) = (shifted - lse).matrix();
        f.probs.row(t) = f.logp.row(t).array().exp().matrix();
    }
    return f;
}

Eigen::VectorXd backward(const PolicySpec& spec, const VectorXd& params,
                         const std::vector<int>& tokens, const std::vector<double>& positions,
                         const Forward& cache, const MatrixXd& d_logits) {
    const auto T = static_cast<Eigen::Index>(tokens.size());
    const Layout L(spec);
    const int d = spec.width;
    const auto table = rote::RotaryTable<double>::make(d, spec.mode, spec.rope_base);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    VectorXd grad = VectorXd::Zero(spec.param_count());
    const auto head = view(params, L.head_off, spec.vocab, d);

    // head
    {
        auto d_head = view(grad, L.head_off, spec.vocab, d);
        d_head += d_logits.transpose() * cache.x_final;
        grad.segment(L.bias_off, spec.vocab) += d_logits.colwise().sum().transpose();
    }
    MatrixXd dx = d_logits * head;

    for (int b = spec.blocks - 1; b >= 0; --b) {
        const auto wq = view(params, L.block_off(b, 0), d, d);
        const auto wk = view(params, L.block_off(b, 1), d, d);
        const auto wv = view(params, L.block_off(b, 2), d, d);
        const auto wo = view(params, L.block_off(b, 3), d, d);
        const auto& x_in = cache.x_in[static_cast<std::size_t>(b)];
        const auto& q = cache.q_rot[static_cast<std::size_t>(b)];
        const auto& k = cache.k_rot[static_cast<std::size_t>(b)];
        const auto& v = cache.v_proj[static_cast<std::size_t>(b)];
        const auto& attn = cache.attn[static_cast<std::size_t>(b)];
        const auto& mixed = cache.attn_out[static_cast<std::size_t>(b)];

        // x_out = x_in + attn(x_in) * Wo^T; dx currently holds d(x_out)
        const MatrixXd d_mixed = dx * wo;
        view(grad, L.block_off(b, 3), d, d) += dx.transpose() * mixed;

        MatrixXd d_attn = d_mixed * v.transpose();        // T x T (causal part used)
        MatrixXd d_v = attn.transpose() * d_mixed;        // T x d

        // softmax rows
        MatrixXd d_scores = MatrixXd::Zero(T, T);
        for (Eigen::Index i = 0; i < T; ++i) {
            double dot = 0.0;
            for (Eigen::Index j = 0; j <= i; ++j) dot += attn(i, j) * d_attn(i, j);
            for (Eigen::Index j = 0; j <= i; ++j)
                d_scores(i, j) = attn(i, j) * (d_attn(i, j) - dot);
        }

        MatrixXd d_q = d_scores * k * inv_sqrt_d;
        MatrixXd d_k = d_scores.transpose() * q * inv_sqrt_d;
        for (Eigen::Index t = 0; t < T; ++t) {
            const double pos = positions[static_cast<std::size_t>(t)];
            d_q.row(t) = rote::rotate_back<double>(d_q.row(t), pos, table);
            d_k.row(t) = rote::rotate_back<double>(d_k.row(t), pos, table);
        }

        view(grad, L.block_off(b, 0), d, d) += d_q.transpose() * x_in;
        view(grad, L.block_off(b, 1), d, d) += d_k.transpose() * x_in;
        view(grad, L.block_off(b, 2), d, d) += d_v.transpose() * x_in;

        dx = dx + d_q * wq + d_k * wk + d_v * wv;  // residual + projection paths
    }

    auto d_embed = view(grad, L.embed_off, spec.vocab, d);
    for (Eigen::Index t = 0; t < T; ++t)
        d_embed.row(tokens[static_cast<std::size_t>(t)]) += dx.row(t);
    return grad;
}

Eigen::VectorXd policy_logprobs(const PolicySpec& spec, const VectorXd& params,
                                const std::vector<int>& prompt, const std::vector<int>& completion,
                                std::vector<double> positions) {
    if (prompt.empty()) throw InvalidArgument("policy_logprobs: prompt must be non-empty");
    std::vector<int> tokens = prompt;
    tokens.insert(tokens.end(), completion.begin(), completion.end());
    if (positions.empty()) positions = spec.default_positions(static_cast<int>(tokens.size()));
    const Forward f = forward(spec, params, tokens, positions);

    const auto P = static_cast<Eigen::Index>(prompt.size());
    const auto C = static_cast<Eigen::Index>(completion.size());
    VectorXd out(C);
    for (Eigen::Index i = 0; i < C; ++i)
        out[i] = f.logp(P - 1 + i, completion[static_cast<std::size_t>(i)]);
    return out;
}

std::vector<int> sample(const PolicySpec& spec, const VectorXd& params,
                        const std::vector<int>& prompt, int max_new, int eos_id, Rng& rng) {
    if (prompt.empty()) throw InvalidArgument("sample: prompt must be non-empty");
    check_tokens(spec, prompt);
    std::vector<int> tokens = prompt;
    std::vector<int> out;
    for (int step = 0; step < max_new; ++step) {
        const auto positions = spec.default_positions(static_cast<int>(tokens.size()));
        const Forward f = forward(spec, params, tokens, positions);
        const Eigen::VectorXd probs = f.probs.row(static_cast<Eigen::Index>(tokens.size()) - 1);

        const double u = rng.uniform01();
        double acc = 0.0;
        int chosen = spec.vocab - 1;
        for (int v = 0; v < spec.vocab; ++v) {
            acc += probs[v];
            if (u < acc) {
                chosen = v;
                break;
            }
        }
        out.push_back(chosen);
        tokens.push_back(chosen);
        if (chosen == eos_id) break;
    }
    return out;
}

std::vector<NamedTensor> to_tensors(const PolicySpec& spec, const VectorXd& params) {
    const Layout L(spec);
    std::vector<NamedTensor> tensors;
    const auto add = [&](const std::string& name, int off, int rows, int cols) {
        NamedTensor t;
        t.name = name;
        t.dims = cols > 0 ? std::vector<std::uint32_t>{static_cast<std::uint32_t>(rows),
                                                       static_cast<std::uint32_t>(cols)}
                          : std::vector<std::uint32_t>{static_cast<std::uint32_t>(rows)};
        const int count = rows * std::max(cols, 1);
        t.data.resize(static_cast<std::size_t>(count));
        for (int i = 0; i < count; ++i) t.data[static_cast<std::size_t>(i)] = static_cast<float>(params[off + i]);
        tensors.push_back(std::move(t));
    };
    add("embed", L.embed_off, spec.vocab, spec.width);
    for (int b = 0; b < spec.blocks; ++b) {
        const std::string prefix = "block" + std::to_string(b) + ".";
        add(prefix + "wq", L.block_off(b, 0), spec.width, spec.width);
        add(prefix + "wk", L.block_off(b, 1), spec.width, spec.width);
        add(prefix + "wv", L.block_off(b, 2), spec.width, spec.width);
        add(prefix + "wo", L.block_off(b, 3), spec.width, spec.width);
    }
    add("head", L.head_off, spec.vocab, spec.width);
    add("bias", L.bias_off, spec.vocab, 0);
    return tensors;
}

namespace {
void write_u32_le(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}
std::uint32_t read_u32_le(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
} // namespace

void save_params(const PolicySpec& spec, const VectorXd& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out.write("CDZW", 4);
    write_u32_le(out, 1);  // version
    const auto tensors = to_tensors(spec, params);
    write_u32_le(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        write_u32_le(out, static_cast<std::uint32_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        write_u32_le(out, static_cast<std::uint32_t>(t.dims.size()));
        for (const auto dim : t.dims) write_u32_le(out, dim);
    }
    for (const auto& t : tensors) {
        static_assert(sizeof(float) == 4);
        for (const float v : t.data) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            write_u32_le(out, bits);
        }
    }
}

Eigen::VectorXd load_params(const PolicySpec& spec, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "CDZW", 4) != 0) throw ParseError("bad policy file magic");
    if (read_u32_le(in) != 1) throw ParseError("unsupported policy file version");
    const std::uint32_t n_tensors = read_u32_le(in);

    std::vector<std::uint64_t> counts;
    std::uint64_t total = 0;
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        const std::uint32_t name_len = read_u32_le(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const std::uint32_t rank = read_u32_le(in);
        std::uint64_t count = 1;
        for (std::uint32_t r = 0; r < rank; ++r) count *= read_u32_le(in);
        counts.push_back(count);
        total += count;
    }
    if (!in || total != static_cast<std::uint64_t>(spec.param_count()))
        throw ParseError("policy file does not match the policy spec");

    VectorXd params(spec.param_count());
    Eigen::Index off = 0;
    for (const auto count : counts) {
        for (std::uint64_t i = 0; i < count; ++i) {
            const std::uint32_t bits = read_u32_le(in);
            float v;
            std::memcpy(&v, &bits, 4);
            params[off++] = static_cast<double>(v);
        }
    }
    if (!in) throw ParseError("policy file truncated");
    return params;
}

} // namespace cadenza::policy
