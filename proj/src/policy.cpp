#include "acmc/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "json.hpp"

namespace acmc::policy {

namespace {

const char kB64Alphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(const Vec& values) {
    std::vector<unsigned char> bytes(values.size() * 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, &values[i], 8);
        for (int b = 0; b < 8; ++b) {
            bytes[i * 8 + b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xff);
        }
    }
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    for (std::size_t i = 0; i < bytes.size(); i += 3) {
        std::uint32_t chunk = bytes[i] << 16;
        int n = 1;
        if (i + 1 < bytes.size()) { chunk |= bytes[i + 1] << 8; n = 2; }
        if (i + 2 < bytes.size()) { chunk |= bytes[i + 2]; n = 3; }
        out.push_back(kB64Alphabet[(chunk >> 18) & 63]);
        out.push_back(kB64Alphabet[(chunk >> 12) & 63]);
        out.push_back(n >= 2 ? kB64Alphabet[(chunk >> 6) & 63] : '=');
        out.push_back(n >= 3 ? kB64Alphabet[chunk & 63] : '=');
    }
    return out;
}

Vec base64_decode(const std::string& text) {
    auto value_of = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::vector<unsigned char> bytes;
    std::uint32_t chunk = 0;
    int have = 0;
    for (char c : text) {
        const int v = value_of(c);
        if (v < 0) continue;
        chunk = (chunk << 6) | static_cast<std::uint32_t>(v);
        if (++have == 4) {
            bytes.push_back((chunk >> 16) & 0xff);
            bytes.push_back((chunk >> 8) & 0xff);
            bytes.push_back(chunk & 0xff);
            chunk = 0;
            have = 0;
        }
    }
    if (have == 2) {
        bytes.push_back((chunk >> 4) & 0xff);
    } else if (have == 3) {
        bytes.push_back((chunk >> 10) & 0xff);
        bytes.push_back((chunk >> 2) & 0xff);
    }
    require(bytes.size() % 8 == 0, "checkpoint: truncated float array");
    Vec values(bytes.size() / 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) {
            bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
        }
        std::memcpy(&values[i], &bits, 8);
    }
    return values;
}

template <typename Fn>
void visit_fields(Params& p, Fn&& fn) {
    fn("token_embed", p.token_embed.data);
    fn("context_embed", p.context_embed.data);
    fn("recur", p.recur.data);
    fn("input_proj", p.input_proj.data);
    fn("bias_h", p.bias_h);
    fn("head_w", p.head_w.data);
    fn("head_b", p.head_b);
}

template <typename Fn>
void visit_fields(const Params& p, Fn&& fn) {
    fn("token_embed", p.token_embed.data);
    fn("context_embed", p.context_embed.data);
    fn("recur", p.recur.data);
    fn("input_proj", p.input_proj.data);
    fn("bias_h", p.bias_h);
    fn("head_w", p.head_w.data);
    fn("head_b", p.head_b);
}

Params make_shaped(const Dims& dims) {
    Params p;
    p.dims = dims;
    p.token_embed = Matrix(dims.vocab, dims.embed);
    p.context_embed = Matrix(dims.embed, dims.hidden);
    p.recur = Matrix(dims.hidden, dims.hidden);
    p.input_proj = Matrix(dims.embed, dims.hidden);
    p.bias_h.assign(dims.hidden, 0.0);
    p.head_w = Matrix(dims.head_rows(), dims.hidden);
    p.head_b.assign(dims.head_rows(), 0.0);
    return p;
}

}  // namespace

std::size_t Params::param_count() const {
    std::size_t n = 0;
    visit_fields(*this, [&](const char*, const Vec& v) { n += v.size(); });
    return n;
}

Vec Params::flatten() const {
    Vec out;
    out.reserve(param_count());
    visit_fields(*this, [&](const char*, const Vec& v) {
        out.insert(out.end(), v.begin(), v.end());
    });
    return out;
}

void Params::assign_from_flat(const Vec& flat) {
    require(flat.size() == param_count(), "assign_from_flat: size mismatch");
    std::size_t offset = 0;
    visit_fields(*this, [&](const char*, Vec& v) {
        std::copy(flat.begin() + offset, flat.begin() + offset + v.size(), v.begin());
        offset += v.size();
    });
}

Params init_params(const Dims& dims, rng::Stream& stream) {
    Params p = make_shaped(dims);
    visit_fields(p, [&](const char*, Vec& v) {
        for (double& x : v) x = 0.2 * stream.uniform() - 0.1;
    });
    return p;
}

Params zeros_like(const Params& params) {
    return make_shaped(params.dims);
}

Vec encode_context(const Params& params, const std::vector<int>& context) {
    Vec enc(params.dims.embed, 0.0);
    if (context.empty()) return enc;
    for (int tok : context) {
        require(tok >= 0 && tok < params.dims.vocab, "context token out of range");
        const double* row = params.token_embed.row(tok);
        for (int e = 0; e < params.dims.embed; ++e) enc[e] += row[e];
    }
    for (double& x : enc) x /= static_cast<double>(context.size());
    return enc;
}

PolicyState initial_state(const Params& params) {
    return PolicyState{Vec(params.dims.hidden, 0.0), 0};
}

PolicyState forward_step(const Params& params, const PolicyState& state, int prev_token,
                         const Vec& ctx_enc, Tape* tape) {
    const int hidden = params.dims.hidden;
    const int embed = params.dims.embed;
    Vec a = params.bias_h;
    for (int i = 0; i < hidden; ++i) {
        const double* row = params.recur.row(i);
        double s = 0.0;
        for (int k = 0; k < hidden; ++k) s += row[k] * state.hidden[k];
        a[i] += s;
    }
    if (prev_token != kStartToken) {
        require(prev_token >= 0 && prev_token < params.dims.vocab, "prev_token out of range");
        const double* e_vec = params.token_embed.row(prev_token);
        for (int e = 0; e < embed; ++e) {
            const double* row = params.input_proj.row(e);
            for (int i = 0; i < hidden; ++i) a[i] += e_vec[e] * row[i];
        }
    }
    for (int c = 0; c < embed; ++c) {
        const double* row = params.context_embed.row(c);
        for (int i = 0; i < hidden; ++i) a[i] += ctx_enc[c] * row[i];
    }
    PolicyState next;
    next.hidden.resize(hidden);
    for (int i = 0; i < hidden; ++i) next.hidden[i] = std::tanh(a[i]);
    next.step_index = state.step_index + 1;
    if (tape != nullptr) {
        tape->steps.push_back(TapeRecord{prev_token, state.hidden, next.hidden});
    }
    return next;
}

Vec step_logits(const Params& params, const Vec& hidden) {
    const int rows = params.dims.head_rows();
    Vec logits(params.head_b);
    for (int r = 0; r < rows; ++r) {
        const double* row = params.head_w.row(r);
        double s = 0.0;
        for (int h = 0; h < params.dims.hidden; ++h) s += row[h] * hidden[h];
        logits[r] += s;
    }
    return logits;
}

double node_logit(const Params& params, const Vec& hidden, int node) {
    const double* row = params.head_w.row(node);
    double s = params.head_b[node];
    for (int h = 0; h < params.dims.hidden; ++h) s += row[h] * hidden[h];
    return s;
}

Params backward_accumulate(const Params& params, const Tape& tape,
                           const std::vector<Vec>& upstream) {
    require(tape.steps.size() == upstream.size(), "backward: tape/upstream length mismatch");
    const int hidden = params.dims.hidden;
    const int embed = params.dims.embed;
    const int rows = params.dims.head_rows();
    Params g = zeros_like(params);
    Vec carry(hidden, 0.0);
    Vec dctx(embed, 0.0);
    for (int t = static_cast<int>(tape.steps.size()) - 1; t >= 0; --t) {
        const TapeRecord& rec = tape.steps[t];
        const Vec& dlogits = upstream[t];
        Vec dh = carry;
        for (int r = 0; r < rows; ++r) {
            const double u = dlogits[r];
            if (u == 0.0) continue;
            g.head_b[r] += u;
            double* gw = g.head_w.row(r);
            const double* w = params.head_w.row(r);
            for (int h = 0; h < hidden; ++h) {
                gw[h] += u * rec.h_new[h];
                dh[h] += u * w[h];
            }
        }
        Vec da(hidden);
        for (int i = 0; i < hidden; ++i) {
            da[i] = dh[i] * (1.0 - rec.h_new[i] * rec.h_new[i]);
            g.bias_h[i] += da[i];
        }
        for (int i = 0; i < hidden; ++i) {
            double* grow = g.recur.row(i);
            for (int k = 0; k < hidden; ++k) grow[k] += da[i] * rec.h_prev[k];
        }
        if (rec.prev_token != kStartToken) {
            const double* e_vec = params.token_embed.row(rec.prev_token);
            double* ge = g.token_embed.row(rec.prev_token);
            for (int e = 0; e < embed; ++e) {
                double* gp = g.input_proj.row(e);
                const double* p = params.input_proj.row(e);
                double de = 0.0;
                for (int i = 0; i < hidden; ++i) {
                    gp[i] += e_vec[e] * da[i];
                    de += p[i] * da[i];
                }
                ge[e] += de;
            }
        }
        for (int c = 0; c < embed; ++c) {
            double* gc = g.context_embed.row(c);
            const double* pc = params.context_embed.row(c);
            double dc = 0.0;
            for (int i = 0; i < hidden; ++i) {
                gc[i] += tape.ctx_enc[c] * da[i];
                dc += pc[i] * da[i];
            }
            dctx[c] += dc;
        }
        for (int k = 0; k < hidden; ++k) {
            double s = 0.0;
            for (int i = 0; i < hidden; ++i) s += params.recur.at(i, k) * da[i];
            carry[k] = s;
        }
    }
    // enc(x) is the mean context-token embedding, so its gradient flows back
    // into token_embed rows of the context tokens.
    if (!tape.context.empty()) {
        const double inv = 1.0 / static_cast<double>(tape.context.size());
        for (int tok : tape.context) {
            double* ge = g.token_embed.row(tok);
            for (int e = 0; e < embed; ++e) ge[e] += dctx[e] * inv;
        }
    }
    return g;
}

MleResult mle_gradient(const Params& params, const std::vector<int>& context,
                       const std::vector<int>& target, const TreePathSource* tree) {
    require(!target.empty(), "mle_gradient: empty target");
    Tape tape;
    tape.context = context;
    tape.ctx_enc = encode_context(params, context);
    PolicyState state = initial_state(params);
    std::vector<Vec> upstream;
    double nll = 0.0;
    int prev = kStartToken;
    for (int word : target) {
        state = forward_step(params, state, prev, tape.ctx_enc, &tape);
        const Vec logits = step_logits(params, state.hidden);
        if (params.dims.head == HeadKind::softmax) {
            const Vec probs = softmax(logits);
            nll -= std::log(probs[word]);
            Vec u = probs;
            u[word] -= 1.0;
            upstream.push_back(std::move(u));
        } else {
            require(tree != nullptr, "mle_gradient: tree head needs a path source");
            Vec u(params.dims.head_rows(), 0.0);
            std::vector<std::uint8_t> prefix;
            for (std::uint8_t b : tree->path_of(word)) {
                const int node = tree->node_at(prefix);
                const double p = sigmoid(logits[node]);
                nll -= b ? std::log(p) : std::log1p(-p);
                u[node] = p - static_cast<double>(b);
                prefix.push_back(b);
            }
            upstream.push_back(std::move(u));
        }
        prev = word;
    }
    return MleResult{nll, backward_accumulate(params, tape, upstream)};
}

void sgd_update(Params& params, const Params& grad, double learning_rate, Direction direction) {
    require(learning_rate >= 0.0, "sgd_update: negative learning rate");
    const double scale = direction == Direction::ascend ? learning_rate : -learning_rate;
    const Vec flat_grad = grad.flatten();
    for (double x : flat_grad) {
        require(std::isfinite(x), "sgd_update: non-finite gradient entry");
    }
    Vec flat = params.flatten();
    for (std::size_t i = 0; i < flat.size(); ++i) flat[i] += scale * flat_grad[i];
    params.assign_from_flat(flat);
}

std::string save_checkpoint(const Params& params) {
    nlohmann::json j;
    j["dims"] = {
        {"vocab", params.dims.vocab},
        {"embed", params.dims.embed},
        {"hidden", params.dims.hidden},
        {"head", params.dims.head == HeadKind::softmax ? "softmax" : "tree"},
    };
    visit_fields(params, [&](const char* name, const Vec& v) {
        j["fields"][name] = base64_encode(v);
    });
    return j.dump(2) + "\n";
}

Params load_checkpoint(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    Dims dims;
    dims.vocab = j.at("dims").at("vocab").get<int>();
    dims.embed = j.at("dims").at("embed").get<int>();
    dims.hidden = j.at("dims").at("hidden").get<int>();
    dims.head = j.at("dims").at("head").get<std::string>() == "tree" ? HeadKind::tree
                                                                     : HeadKind::softmax;
    Params p = make_shaped(dims);
    visit_fields(p, [&](const char* name, Vec& v) {
        Vec decoded = base64_decode(j.at("fields").at(name).get<std::string>());
        require(decoded.size() == v.size(), "checkpoint: field size mismatch");
        v = std::move(decoded);
    });
    return p;
}

}  // namespace acmc::policy
