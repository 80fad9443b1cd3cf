// The main model M = {encoder, projector, classifier} and its SGD optimizer.
//
// Desk-scale architecture: a relu MLP encoder, a projector head ending in a
// row-wise L2 normalization onto the unit hypersphere, and a single linear
// classification head over the encoder output. All forwards exist twice:
// once on the tape (for training) and once as plain evaluation.

#pragma once

#include <cstdio>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "chimera/rng.hpp"
#include "chimera/tensor.hpp"

namespace chimera {

struct Layer {
    Tensor w;  // d_in x d_out
    Tensor b;  // 1 x d_out
};

struct ModelParams {
    std::vector<Layer> encoder;    // relu after every layer
    std::vector<Layer> projector;  // relu between layers, l2-normalize at the end
    Layer classifier;              // linear, logits over classes

    std::size_t input_dim() const { return encoder.front().w.shape[0]; }
    std::size_t embed_dim() const { return encoder.back().w.shape[1]; }
    std::size_t proj_dim() const { return projector.back().w.shape[1]; }
    std::size_t num_classes() const { return classifier.w.shape[1]; }
};

// Canonical parameter order used by the optimizer, gradient collection and
// checkpoints.
template <typename Fn>
void for_each_param(ModelParams& m, Fn&& fn) {
    for (std::size_t i = 0; i < m.encoder.size(); ++i) {
        fn("encoder[" + std::to_string(i) + "].w", m.encoder[i].w);
        fn("encoder[" + std::to_string(i) + "].b", m.encoder[i].b);
    }
    for (std::size_t i = 0; i < m.projector.size(); ++i) {
        fn("projector[" + std::to_string(i) + "].w", m.projector[i].w);
        fn("projector[" + std::to_string(i) + "].b", m.projector[i].b);
    }
    fn("classifier.w", m.classifier.w);
    fn("classifier.b", m.classifier.b);
}

template <typename Fn>
void for_each_param(const ModelParams& m, Fn&& fn) {
    for_each_param(const_cast<ModelParams&>(m),
                   [&](const std::string& name, Tensor& t) { fn(name, static_cast<const Tensor&>(t)); });
}

struct Architecture {
    std::size_t input_dim = 32;
    std::vector<std::size_t> encoder_hidden = {64, 64};
    std::vector<std::size_t> projector_hidden = {64};
    std::size_t proj_dim = 16;
    std::size_t num_classes = 8;
};

inline Layer init_layer(std::size_t d_in, std::size_t d_out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
    Layer l;
    l.w = zeros(d_in, d_out, /*rg=*/true);
    l.b = zeros(1, d_out, /*rg=*/true);
    for (double& v : l.w.values) v = rng.uniform(-bound, bound);
    for (double& v : l.b.values) v = rng.uniform(-bound, bound);
    return l;
}

inline ModelParams init_model(const Architecture& arch, std::uint64_t seed) {
    Rng rng(seed);
    ModelParams m;
    std::size_t d = arch.input_dim;
    for (std::size_t h : arch.encoder_hidden) {
        m.encoder.push_back(init_layer(d, h, rng));
        d = h;
    }
    const std::size_t embed = d;
    for (std::size_t h : arch.projector_hidden) {
        m.projector.push_back(init_layer(d, h, rng));
        d = h;
    }
    m.projector.push_back(init_layer(d, arch.proj_dim, rng));
    m.classifier = init_layer(embed, arch.num_classes, rng);
    return m;
}

inline Architecture architecture_of(const ModelParams& m) {
    Architecture a;
    a.input_dim = m.input_dim();
    a.encoder_hidden.clear();
    for (const Layer& l : m.encoder) a.encoder_hidden.push_back(l.w.shape[1]);
    a.projector_hidden.clear();
    for (std::size_t i = 0; i + 1 < m.projector.size(); ++i)
        a.projector_hidden.push_back(m.projector[i].w.shape[1]);
    a.proj_dim = m.proj_dim();
    a.num_classes = m.num_classes();
    return a;
}

// Same architecture, fresh weights; used for the dual-network setup.
inline ModelParams reinit_clone(const ModelParams& m, std::uint64_t seed) {
    return init_model(architecture_of(m), seed);
}

// ---------------------------------------------------------------------------
// Tape forward
// ---------------------------------------------------------------------------

struct BoundModel {
    std::vector<std::pair<Val, Val>> encoder;    // (w, b) handles
    std::vector<std::pair<Val, Val>> projector;
    std::pair<Val, Val> classifier;
};

inline BoundModel bind_model(Tape& tape, const ModelParams& m) {
    BoundModel bm;
    for (const Layer& l : m.encoder)
        bm.encoder.emplace_back(tape.input(l.w), tape.input(l.b));
    for (const Layer& l : m.projector)
        bm.projector.emplace_back(tape.input(l.w), tape.input(l.b));
    bm.classifier = {tape.input(m.classifier.w), tape.input(m.classifier.b)};
    return bm;
}

inline Val encode(Tape& tape, const BoundModel& bm, Val x) {
    Val h = x;
    for (const auto& [w, b] : bm.encoder)
        h = tape.relu(tape.add(tape.matmul(h, w), b));
    return h;
}

inline Val project(Tape& tape, const BoundModel& bm, Val z) {
    Val h = z;
    for (std::size_t i = 0; i + 1 < bm.projector.size(); ++i)
        h = tape.relu(tape.add(tape.matmul(h, bm.projector[i].first), bm.projector[i].second));
    h = tape.add(tape.matmul(h, bm.projector.back().first), bm.projector.back().second);
    return tape.l2_normalize_rows(h);
}

inline Val classify_logits(Tape& tape, const BoundModel& bm, Val x) {
    Val z = encode(tape, bm, x);
    return tape.add(tape.matmul(z, bm.classifier.first), bm.classifier.second);
}

inline Val classify(Tape& tape, const BoundModel& bm, Val x) {
    return tape.softmax_rows(classify_logits(tape, bm, x));
}

// Collects leaf gradients after backward, in for_each_param order.
inline std::vector<std::vector<double>> collect_grads(const Tape& tape, const BoundModel& bm) {
    std::vector<std::vector<double>> g;
    for (const auto& [w, b] : bm.encoder) {
        g.push_back(tape.grad(w));
        g.push_back(tape.grad(b));
    }
    for (const auto& [w, b] : bm.projector) {
        g.push_back(tape.grad(w));
        g.push_back(tape.grad(b));
    }
    g.push_back(tape.grad(bm.classifier.first));
    g.push_back(tape.grad(bm.classifier.second));
    return g;
}

// ---------------------------------------------------------------------------
// Plain forward (no tape)
// ---------------------------------------------------------------------------

inline Tensor linear_plain(const Tensor& x, const Layer& l) {
    const std::size_t m = x.rows(), k = x.cols(), n = l.w.shape[1];
    if (k != l.w.shape[0])
        throw TensorError("linear: input dim " + std::to_string(k) + " does not match weight " +
                          shape_str(l.w));
    Tensor out = zeros(m, n);
    matmul_kernel(x.values.data(), l.w.values.data(), out.values.data(), m, k, n, false);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.values[i * n + j] += l.b.values[j];
    return out;
}

inline Tensor encode_plain(const ModelParams& m, const Tensor& x) {
    Tensor h = x;
    for (const Layer& l : m.encoder) {
        h = linear_plain(h, l);
        for (double& v : h.values) v = v > 0.0 ? v : 0.0;
    }
    return h;
}

inline Tensor project_plain(const ModelParams& m, const Tensor& z) {
    Tensor h = z;
    for (std::size_t i = 0; i + 1 < m.projector.size(); ++i) {
        h = linear_plain(h, m.projector[i]);
        for (double& v : h.values) v = v > 0.0 ? v : 0.0;
    }
    h = linear_plain(h, m.projector.back());
    const std::size_t c = h.cols();
    for (std::size_t i = 0; i < h.rows(); ++i) {
        double n2 = 0.0;
        for (std::size_t j = 0; j < c; ++j) n2 += h.values[i * c + j] * h.values[i * c + j];
        const double norm = std::sqrt(n2);
        if (norm < 1e-8)
            throw TensorError("project: row " + std::to_string(i) + " has near-zero norm");
        for (std::size_t j = 0; j < c; ++j) h.values[i * c + j] /= norm;
    }
    return h;
}

inline Tensor classify_plain(const ModelParams& m, const Tensor& x) {
    Tensor logits = linear_plain(encode_plain(m, x), m.classifier);
    Tensor p = zeros(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i)
        softmax_row_kernel(logits.values.data() + i * logits.cols(),
                           p.values.data() + i * logits.cols(), logits.cols());
    return p;
}

// ---------------------------------------------------------------------------
// SGD with momentum and weight decay
// ---------------------------------------------------------------------------

struct OptimizerState {
    std::vector<std::vector<double>> velocity;
    double learning_rate = 0.01;
    double momentum = 0.9;
    double weight_decay = 5e-4;
};

inline OptimizerState make_optimizer(const ModelParams& m, double lr, double momentum,
                                     double weight_decay) {
    OptimizerState s;
    s.learning_rate = lr;
    s.momentum = momentum;
    s.weight_decay = weight_decay;
    for_each_param(m, [&](const std::string&, const Tensor& t) {
        s.velocity.emplace_back(t.values.size(), 0.0);
    });
    return s;
}

// v <- momentum * v + grad + weight_decay * param; param <- param - lr * v
inline void sgd_step(ModelParams& m, OptimizerState& st,
                     const std::vector<std::vector<double>>& grads) {
    std::size_t idx = 0;
    for_each_param(m, [&](const std::string& name, Tensor& t) {
        if (idx >= grads.size() || grads[idx].size() != t.values.size())
            throw TensorError("sgd_step: missing or mis-sized gradient for " + name);
        std::vector<double>& v = st.velocity[idx];
        for (std::size_t i = 0; i < t.values.size(); ++i) {
            v[i] = st.momentum * v[i] + grads[idx][i] + st.weight_decay * t.values[i];
            t.values[i] -= st.learning_rate * v[i];
        }
        ++idx;
    });
}

// ---------------------------------------------------------------------------
// Checkpoint serialization (hex floats round-trip bit-exactly)
// ---------------------------------------------------------------------------

inline void write_values(std::ostream& os, const std::vector<double>& v) {
    char buf[40];
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%a", v[i]);
        os << (i ? " " : "") << buf;
    }
    os << "\n";
}

inline std::vector<double> read_values(std::istream& is, std::size_t n) {
    std::vector<double> v(n);
    std::string tok;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(is >> tok)) throw std::runtime_error("checkpoint: truncated value list");
        v[i] = std::strtod(tok.c_str(), nullptr);
    }
    return v;
}

inline void save_model(std::ostream& os, const ModelParams& m) {
    std::size_t count = 0;
    for_each_param(m, [&](const std::string&, const Tensor&) { ++count; });
    os << "model " << count << "\n";
    for_each_param(m, [&](const std::string& name, const Tensor& t) {
        os << name << " " << t.shape[0] << " " << t.shape[1] << "\n";
        write_values(os, t.values);
    });
}

inline ModelParams load_model(std::istream& is) {
    std::string tag;
    std::size_t count = 0;
    if (!(is >> tag >> count) || tag != "model")
        throw std::runtime_error("checkpoint: expected model section");
    ModelParams m;
    for (std::size_t i = 0; i < count; ++i) {
        std::string name;
        std::size_t r = 0, c = 0;
        if (!(is >> name >> r >> c)) throw std::runtime_error("checkpoint: bad tensor header");
        Tensor t({r, c}, read_values(is, r * c), /*rg=*/true);
        if (name.rfind("encoder[", 0) == 0) {
            if (name.back() == 'w') m.encoder.push_back({std::move(t), Tensor{}});
            else m.encoder.back().b = std::move(t);
        } else if (name.rfind("projector[", 0) == 0) {
            if (name.back() == 'w') m.projector.push_back({std::move(t), Tensor{}});
            else m.projector.back().b = std::move(t);
        } else if (name == "classifier.w") {
            m.classifier.w = std::move(t);
        } else if (name == "classifier.b") {
            m.classifier.b = std::move(t);
        } else {
            throw std::runtime_error("checkpoint: unknown parameter " + name);
        }
    }
    return m;
}

inline void save_optimizer(std::ostream& os, const OptimizerState& st) {
    char buf[40];
    os << "optimizer " << st.velocity.size() << "\n";
    std::snprintf(buf, sizeof buf, "%a %a %a", st.learning_rate, st.momentum, st.weight_decay);
    os << buf << "\n";
    for (const auto& v : st.velocity) {
        os << v.size() << "\n";
        write_values(os, v);
    }
}

inline OptimizerState load_optimizer(std::istream& is) {
    std::string tag;
    std::size_t count = 0;
    if (!(is >> tag >> count) || tag != "optimizer")
        throw std::runtime_error("checkpoint: expected optimizer section");
    OptimizerState st;
    std::string a, b, c;
    if (!(is >> a >> b >> c)) throw std::runtime_error("checkpoint: bad optimizer header");
    st.learning_rate = std::strtod(a.c_str(), nullptr);
    st.momentum = std::strtod(b.c_str(), nullptr);
    st.weight_decay = std::strtod(c.c_str(), nullptr);
    for (std::size_t i = 0; i < count; ++i) {
        std::size_t n = 0;
        if (!(is >> n)) throw std::runtime_error("checkpoint: bad velocity size");
        st.velocity.push_back(read_values(is, n));
    }
    return st;
}

}  // namespace chimera
