// Synthetic datasets, label-noise injection, augmentation and noise audits.
//
// Three injectors are provided: symmetric (uniform flip over the other
// classes), asymmetric (flips confined to a class partition) and
// instance-dependent (per-sample flip rate and feature-driven flip
// distribution). Injectors always flip from the true labels, so they can
// be re-applied to a dataset without compounding noise.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "chimera/rng.hpp"
#include "chimera/tensor.hpp"

namespace chimera {

struct Sample {
    int index = 0;
    std::vector<double> features;
    int true_label = 0;   // hidden from training; evaluation and audits only
    int noisy_label = 0;
};

struct ClassPartition {
    std::vector<std::vector<int>> subsets;

    void validate(int num_classes) const {
        std::vector<int> seen(static_cast<std::size_t>(num_classes), 0);
        for (const auto& s : subsets)
            for (int c : s) {
                if (c < 0 || c >= num_classes)
                    throw std::invalid_argument("partition: class " + std::to_string(c) +
                                                " out of range");
                if (seen[static_cast<std::size_t>(c)]++)
                    throw std::invalid_argument("partition: class " + std::to_string(c) +
                                                " appears in two subsets");
            }
        for (int c = 0; c < num_classes; ++c)
            if (!seen[static_cast<std::size_t>(c)])
                throw std::invalid_argument("partition: class " + std::to_string(c) + " not covered");
    }

    // subset index per class
    std::vector<int> subset_of(int num_classes) const {
        std::vector<int> m(static_cast<std::size_t>(num_classes), -1);
        for (std::size_t s = 0; s < subsets.size(); ++s)
            for (int c : subsets[s]) m[static_cast<std::size_t>(c)] = static_cast<int>(s);
        return m;
    }

    std::string to_string() const {
        std::string out;
        for (std::size_t s = 0; s < subsets.size(); ++s) {
            if (s) out += ";";
            for (std::size_t i = 0; i < subsets[s].size(); ++i) {
                if (i) out += "|";
                out += std::to_string(subsets[s][i]);
            }
        }
        return out;
    }

    static ClassPartition parse(const std::string& text) {
        ClassPartition p;
        std::stringstream ss(text);
        std::string subset;
        while (std::getline(ss, subset, ';')) {
            std::vector<int> cls;
            std::stringstream sub(subset);
            std::string tok;
            while (std::getline(sub, tok, '|')) cls.push_back(std::stoi(tok));
            p.subsets.push_back(std::move(cls));
        }
        return p;
    }

    // All classes paired with their neighbor: {0,1},{2,3},...
    static ClassPartition pairs(int num_classes) {
        ClassPartition p;
        for (int c = 0; c < num_classes; c += 2) {
            if (c + 1 < num_classes) p.subsets.push_back({c, c + 1});
            else p.subsets.push_back({c});
        }
        return p;
    }

    static ClassPartition singletons(int num_classes) {
        ClassPartition p;
        for (int c = 0; c < num_classes; ++c) p.subsets.push_back({c});
        return p;
    }
};

inline bool operator==(const ClassPartition& a, const ClassPartition& b) {
    auto norm = [](const ClassPartition& p) {
        std::vector<std::vector<int>> s = p.subsets;
        for (auto& v : s) std::sort(v.begin(), v.end());
        std::sort(s.begin(), s.end());
        return s;
    };
    return norm(a) == norm(b);
}

struct NoiseMeta {
    std::string kind = "none";  // none | symmetric | asymmetric | instance
    double ratio = 0.0;
    std::uint64_t seed = 0;
    std::optional<ClassPartition> partition;
    double idn_rate_std = 0.1;  // instance-dependent flip-rate spread
};

struct NoisyDataset {
    std::vector<Sample> samples;
    int num_classes = 0;
    std::vector<double> prior;  // class prior, sums to 1
    NoiseMeta noise_meta;

    std::size_t size() const { return samples.size(); }
    std::size_t dim() const { return samples.empty() ? 0 : samples.front().features.size(); }
};

struct TransitionMatrix {
    int num_classes = 0;
    std::vector<double> counts;  // C x C, rows = true class, cols = observed

    double& at(int j, int k) { return counts[static_cast<std::size_t>(j * num_classes + k)]; }
    double at(int j, int k) const { return counts[static_cast<std::size_t>(j * num_classes + k)]; }

    TransitionMatrix normalized() const {
        TransitionMatrix t = *this;
        for (int j = 0; j < num_classes; ++j) {
            double row = 0.0;
            for (int k = 0; k < num_classes; ++k) row += at(j, k);
            if (row > 0.0)
                for (int k = 0; k < num_classes; ++k) t.at(j, k) = at(j, k) / row;
        }
        return t;
    }

    // Class-level flipping ratio r^(k) = 1 - c_kk of the normalized matrix.
    std::vector<double> class_flip_ratios() const {
        TransitionMatrix n = normalized();
        std::vector<double> r(static_cast<std::size_t>(num_classes), 0.0);
        for (int k = 0; k < num_classes; ++k) r[static_cast<std::size_t>(k)] = 1.0 - n.at(k, k);
        return r;
    }

    // Feasibility of the task: the diagonal must dominate each row.
    bool feasible() const {
        for (int j = 0; j < num_classes; ++j) {
            double mx = 0.0;
            for (int k = 0; k < num_classes; ++k) mx = std::max(mx, at(j, k));
            if (at(j, j) < mx) return false;
        }
        return true;
    }
};

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

// Isotropic unit-variance gaussian blobs; class centers are random unit
// directions scaled by `separation`.
inline NoisyDataset make_blobs(int num_classes, int per_class, int dim, double separation,
                               std::uint64_t seed) {
    if (num_classes < 1 || per_class < 1) throw std::invalid_argument("make_blobs: counts must be positive");
    if (dim < 2) throw std::invalid_argument("make_blobs: dim must be at least 2");
    if (!(separation > 0.0)) throw std::invalid_argument("make_blobs: separation must be positive");
    Rng rng(seed);
    std::vector<std::vector<double>> centers;
    for (int c = 0; c < num_classes; ++c) {
        std::vector<double> dir(static_cast<std::size_t>(dim));
        double n2 = 0.0;
        for (double& v : dir) {
            v = rng.normal();
            n2 += v * v;
        }
        const double norm = std::sqrt(n2);
        for (double& v : dir) v = v / norm * separation;
        centers.push_back(std::move(dir));
    }
    NoisyDataset ds;
    ds.num_classes = num_classes;
    ds.prior.assign(static_cast<std::size_t>(num_classes), 1.0 / num_classes);
    int idx = 0;
    for (int c = 0; c < num_classes; ++c)
        for (int i = 0; i < per_class; ++i) {
            Sample s;
            s.index = idx++;
            s.true_label = c;
            s.noisy_label = c;
            s.features.resize(static_cast<std::size_t>(dim));
            for (int d = 0; d < dim; ++d)
                s.features[static_cast<std::size_t>(d)] =
                    centers[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)] + rng.normal();
            ds.samples.push_back(std::move(s));
        }
    return ds;
}

// Train/test pair drawn around the same class centers.
inline std::pair<NoisyDataset, NoisyDataset> make_blobs_split(int num_classes, int train_per_class,
                                                              int test_per_class, int dim,
                                                              double separation, std::uint64_t seed) {
    NoisyDataset all = make_blobs(num_classes, train_per_class + test_per_class, dim, separation, seed);
    NoisyDataset train, test;
    train.num_classes = test.num_classes = num_classes;
    train.prior = test.prior = all.prior;
    int ti = 0, vi = 0;
    for (int c = 0; c < num_classes; ++c)
        for (int i = 0; i < train_per_class + test_per_class; ++i) {
            Sample s = all.samples[static_cast<std::size_t>(c * (train_per_class + test_per_class) + i)];
            if (i < train_per_class) {
                s.index = ti++;
                train.samples.push_back(std::move(s));
            } else {
                s.index = vi++;
                test.samples.push_back(std::move(s));
            }
        }
    return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Noise injection
// ---------------------------------------------------------------------------

inline NoisyDataset inject_symmetric(const NoisyDataset& ds, double r, std::uint64_t seed) {
    if (r < 0.0 || r > 1.0) throw std::invalid_argument("inject_symmetric: r must be in [0,1]");
    NoisyDataset out = ds;
    Rng rng(seed);
    const int C = ds.num_classes;
    for (Sample& s : out.samples) {
        s.noisy_label = s.true_label;
        if (C < 2) continue;
        if (rng.uniform01() < r) {
            int k = rng.index(static_cast<std::size_t>(C - 1));
            if (k >= s.true_label) ++k;  // uniform over classes != true label
            s.noisy_label = k;
        }
    }
    out.noise_meta = NoiseMeta{"symmetric", r, seed, std::nullopt, 0.1};
    return out;
}

inline NoisyDataset inject_asymmetric(const NoisyDataset& ds, double r,
                                      const ClassPartition& partition, std::uint64_t seed) {
    if (r < 0.0 || r > 1.0) throw std::invalid_argument("inject_asymmetric: r must be in [0,1]");
    partition.validate(ds.num_classes);
    NoisyDataset out = ds;
    Rng rng(seed);
    const std::vector<int> subset_of = partition.subset_of(ds.num_classes);
    for (Sample& s : out.samples) {
        s.noisy_label = s.true_label;
        const auto& subset = partition.subsets[static_cast<std::size_t>(
            subset_of[static_cast<std::size_t>(s.true_label)])];
        if (subset.size() < 2) continue;  // no flip target inside the subset
        if (rng.uniform01() < r) {
            int k = rng.index(subset.size() - 1);
            // uniform over the other members of the subset
            int pos = 0;
            for (int c : subset) {
                if (c == s.true_label) continue;
                if (pos == k) {
                    s.noisy_label = c;
                    break;
                }
                ++pos;
            }
        }
    }
    out.noise_meta = NoiseMeta{"asymmetric", r, seed, partition, 0.1};
    return out;
}

// Per-sample flip rate q_i ~ N(r, rate_std) clipped to [0,1]; the flip
// distribution is the softmax of x_i * W restricted to the wrong classes.
inline NoisyDataset inject_instance_dependent(const NoisyDataset& ds, double r, std::uint64_t seed,
                                              double rate_std = 0.1) {
    if (r < 0.0 || r > 1.0) throw std::invalid_argument("inject_instance_dependent: r must be in [0,1]");
    NoisyDataset out = ds;
    Rng rng(seed);
    const int C = ds.num_classes;
    const std::size_t d = ds.dim();
    std::vector<double> W(d * static_cast<std::size_t>(C));
    for (double& v : W) v = rng.normal();
    for (Sample& s : out.samples) {
        s.noisy_label = s.true_label;
        if (C < 2) continue;
        double q = rng.normal(r, rate_std);
        q = std::clamp(q, 0.0, 1.0);
        std::vector<double> scores(static_cast<std::size_t>(C), 0.0);
        for (std::size_t j = 0; j < d; ++j)
            for (int c = 0; c < C; ++c)
                scores[static_cast<std::size_t>(c)] +=
                    s.features[j] * W[j * static_cast<std::size_t>(C) + static_cast<std::size_t>(c)];
        // softmax over classes != true label
        double mx = -1e300;
        for (int c = 0; c < C; ++c)
            if (c != s.true_label) mx = std::max(mx, scores[static_cast<std::size_t>(c)]);
        double z = 0.0;
        for (int c = 0; c < C; ++c) {
            if (c == s.true_label) continue;
            scores[static_cast<std::size_t>(c)] = std::exp(scores[static_cast<std::size_t>(c)] - mx);
            z += scores[static_cast<std::size_t>(c)];
        }
        const double u = rng.uniform01();
        if (u >= q) continue;  // keeps the true class with mass 1 - q
        double acc = 0.0;
        const double target = u / q;  // uniform in [0,1) over the flip mass
        for (int c = 0; c < C; ++c) {
            if (c == s.true_label) continue;
            acc += scores[static_cast<std::size_t>(c)] / z;
            if (target < acc) {
                s.noisy_label = c;
                break;
            }
        }
    }
    out.noise_meta = NoiseMeta{"instance", r, seed, std::nullopt, rate_std};
    return out;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

struct AugmentationSpec {
    double jitter_sigma = 0.0;  // additive gaussian noise scale
    double dropout_prob = 0.0;  // per-coordinate zeroing probability
    std::string strength = "custom";

    static AugmentationSpec weak(double feature_std) {
        return {0.05 * feature_std, 0.05, "weak"};
    }
    static AugmentationSpec strong(double feature_std) {
        return {0.2 * feature_std, 0.2, "strong"};
    }
};

inline std::vector<double> augment(const std::vector<double>& x, const AugmentationSpec& spec,
                                   Rng& rng) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        out[i] = x[i] + (spec.jitter_sigma > 0.0 ? rng.normal(0.0, spec.jitter_sigma) : 0.0);
    if (spec.dropout_prob > 0.0)
        for (double& v : out)
            if (rng.uniform01() < spec.dropout_prob) v = 0.0;
    return out;
}

inline std::vector<double> augment(const std::vector<double>& x, const AugmentationSpec& spec,
                                   std::uint64_t seed) {
    Rng rng(seed);
    return augment(x, spec, rng);
}

// Standard deviation of all feature entries; the augmentation presets
// scale their jitter with it.
inline double feature_std(const NoisyDataset& ds) {
    double mean = 0.0, n = 0.0;
    for (const Sample& s : ds.samples)
        for (double v : s.features) {
            mean += v;
            n += 1.0;
        }
    if (n < 2.0) return 0.0;
    mean /= n;
    double var = 0.0;
    for (const Sample& s : ds.samples)
        for (double v : s.features) var += (v - mean) * (v - mean);
    return std::sqrt(var / (n - 1.0));
}

// ---------------------------------------------------------------------------
// Audits
// ---------------------------------------------------------------------------

inline TransitionMatrix empirical_confusion(const NoisyDataset& ds) {
    if (ds.samples.empty()) throw std::invalid_argument("empirical_confusion: empty dataset");
    TransitionMatrix t;
    t.num_classes = ds.num_classes;
    t.counts.assign(static_cast<std::size_t>(ds.num_classes) * static_cast<std::size_t>(ds.num_classes),
                    0.0);
    for (const Sample& s : ds.samples) t.at(s.true_label, s.noisy_label) += 1.0;
    return t;
}

inline double empirical_noise_ratio(const NoisyDataset& ds) {
    if (ds.samples.empty()) return 0.0;
    std::size_t flips = 0;
    for (const Sample& s : ds.samples) flips += s.noisy_label != s.true_label;
    return static_cast<double>(flips) / static_cast<double>(ds.size());
}

inline std::vector<int> noise_mask(const NoisyDataset& ds) {
    std::vector<int> m(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i)
        m[i] = ds.samples[i].noisy_label != ds.samples[i].true_label;
    return m;
}

// ---------------------------------------------------------------------------
// Batch helpers
// ---------------------------------------------------------------------------

inline Tensor features_matrix(const NoisyDataset& ds, const std::vector<int>& indices) {
    const std::size_t d = ds.dim();
    Tensor x = zeros(indices.size(), d);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const Sample& s = ds.samples[static_cast<std::size_t>(indices[i])];
        std::copy(s.features.begin(), s.features.end(), x.values.begin() + static_cast<long>(i * d));
    }
    return x;
}

inline Tensor rows_matrix(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) return Tensor({0, 0}, {});
    Tensor x = zeros(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy(rows[i].begin(), rows[i].end(),
                  x.values.begin() + static_cast<long>(i * rows.front().size()));
    return x;
}

inline Tensor one_hot(const std::vector<int>& labels, int num_classes) {
    Tensor y = zeros(labels.size(), static_cast<std::size_t>(num_classes));
    for (std::size_t i = 0; i < labels.size(); ++i)
        y.values[i * static_cast<std::size_t>(num_classes) + static_cast<std::size_t>(labels[i])] = 1.0;
    return y;
}

// ---------------------------------------------------------------------------
// Serialization: one header block then one line per sample, with decimals
// printed at 17 significant digits so doubles round-trip exactly.
// ---------------------------------------------------------------------------

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void save_dataset(std::ostream& os, const NoisyDataset& ds) {
    os << "chimera-dataset v1\n";
    os << "classes " << ds.num_classes << "\n";
    os << "prior ";
    for (std::size_t i = 0; i < ds.prior.size(); ++i) os << (i ? "," : "") << fmt_double(ds.prior[i]);
    os << "\n";
    os << "noise kind=" << ds.noise_meta.kind << " r=" << fmt_double(ds.noise_meta.ratio)
       << " seed=" << ds.noise_meta.seed;
    if (ds.noise_meta.partition) os << " partition=" << ds.noise_meta.partition->to_string();
    if (ds.noise_meta.kind == "instance") os << " rate_std=" << fmt_double(ds.noise_meta.idn_rate_std);
    os << "\n";
    os << "samples " << ds.samples.size() << "\n";
    for (const Sample& s : ds.samples) {
        os << s.index << " ";
        for (std::size_t i = 0; i < s.features.size(); ++i)
            os << (i ? "," : "") << fmt_double(s.features[i]);
        os << " " << s.true_label << " " << s.noisy_label << "\n";
    }
}

inline void save_dataset(const std::string& path, const NoisyDataset& ds) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("save_dataset: cannot open " + path);
    save_dataset(os, ds);
}

inline NoisyDataset load_dataset(std::istream& is) {
    std::string line;
    auto next_line = [&]() {
        if (!std::getline(is, line)) throw std::runtime_error("load_dataset: truncated file");
        return line;
    };
    if (next_line() != "chimera-dataset v1")
        throw std::runtime_error("load_dataset: bad magic line '" + line + "'");
    NoisyDataset ds;
    {
        std::istringstream ss(next_line());
        std::string tag;
        ss >> tag >> ds.num_classes;
        if (tag != "classes" || ds.num_classes < 1)
            throw std::runtime_error("load_dataset: bad classes line");
    }
    {
        std::istringstream ss(next_line());
        std::string tag, rest;
        ss >> tag >> rest;
        if (tag != "prior") throw std::runtime_error("load_dataset: bad prior line");
        std::stringstream vals(rest);
        std::string tok;
        while (std::getline(vals, tok, ',')) ds.prior.push_back(std::strtod(tok.c_str(), nullptr));
        if (static_cast<int>(ds.prior.size()) != ds.num_classes)
            throw std::runtime_error("load_dataset: prior length mismatch");
    }
    {
        std::istringstream ss(next_line());
        std::string tag, field;
        ss >> tag;
        if (tag != "noise") throw std::runtime_error("load_dataset: bad noise line");
        while (ss >> field) {
            const std::size_t eq = field.find('=');
            if (eq == std::string::npos) throw std::runtime_error("load_dataset: bad noise field");
            const std::string key = field.substr(0, eq), val = field.substr(eq + 1);
            if (key == "kind") ds.noise_meta.kind = val;
            else if (key == "r") ds.noise_meta.ratio = std::strtod(val.c_str(), nullptr);
            else if (key == "seed") ds.noise_meta.seed = std::stoull(val);
            else if (key == "partition") ds.noise_meta.partition = ClassPartition::parse(val);
            else if (key == "rate_std") ds.noise_meta.idn_rate_std = std::strtod(val.c_str(), nullptr);
            else throw std::runtime_error("load_dataset: unknown noise field " + key);
        }
    }
    std::size_t count = 0;
    {
        std::istringstream ss(next_line());
        std::string tag;
        ss >> tag >> count;
        if (tag != "samples") throw std::runtime_error("load_dataset: bad samples line");
    }
    for (std::size_t i = 0; i < count; ++i) {
        std::istringstream ss(next_line());
        Sample s;
        std::string feats;
        if (!(ss >> s.index >> feats >> s.true_label >> s.noisy_label))
            throw std::runtime_error("load_dataset: bad sample line " + std::to_string(i));
        std::stringstream fs(feats);
        std::string tok;
        while (std::getline(fs, tok, ',')) s.features.push_back(std::strtod(tok.c_str(), nullptr));
        if (s.true_label < 0 || s.true_label >= ds.num_classes || s.noisy_label < 0 ||
            s.noisy_label >= ds.num_classes)
            throw std::runtime_error("load_dataset: label out of range at sample " + std::to_string(i));
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

inline NoisyDataset load_dataset(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_dataset: cannot open " + path);
    return load_dataset(is);
}

}  // namespace chimera
