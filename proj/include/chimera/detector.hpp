// Noise detection: per-sample cross-entropy losses, a two-component 1-D
// Gaussian mixture fitted by EM, thresholded clean/noisy splitting and the
// greedy inference of class-subset partitions from classifier predictions.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "chimera/data.hpp"
#include "chimera/tensor.hpp"

namespace chimera {

inline std::vector<double> per_sample_ce(const Tensor& probs, const std::vector<int>& labels) {
    const std::size_t n = probs.rows(), C = probs.cols();
    if (labels.size() != n) throw std::invalid_argument("per_sample_ce: label count mismatch");
    std::vector<double> loss(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= C)
            throw std::invalid_argument("per_sample_ce: label " + std::to_string(y) + " out of range");
        loss[i] = -std::log(std::max(probs.at(i, static_cast<std::size_t>(y)), 1e-12));
    }
    return loss;
}

struct GmmFit {
    double mean[2] = {0.0, 0.0};
    double var[2] = {1.0, 1.0};
    double weight[2] = {0.5, 0.5};
    int clean_component = 0;  // the smaller-mean component
    bool degenerate = false;
    std::vector<double> clean_posterior;  // gamma_i
    std::vector<double> ll_trace;
};

inline constexpr double kVarianceFloor = 1e-6;

inline double gauss_logpdf(double x, double mean, double var) {
    const double d = x - mean;
    return -0.5 * (std::log(2.0 * M_PI * var) + d * d / var);
}

// EM for a two-component mixture over scalar losses. Means start at the
// 10th and 90th percentiles, weights equal, both variances at the sample
// variance. All-equal input is declared degenerate: every sample gets
// clean posterior 1.
inline GmmFit fit_gmm_em(const std::vector<double>& losses, int max_iter = 100, double tol = 1e-6) {
    const std::size_t n = losses.size();
    if (n < 4) throw std::invalid_argument("fit_gmm_em: need at least 4 samples");
    for (double l : losses)
        if (!std::isfinite(l)) throw std::invalid_argument("fit_gmm_em: non-finite loss");

    GmmFit fit;
    const auto [mn, mx] = std::minmax_element(losses.begin(), losses.end());
    if (*mx - *mn < 1e-9) {
        fit.degenerate = true;
        fit.mean[0] = fit.mean[1] = *mn;
        fit.var[0] = fit.var[1] = kVarianceFloor;
        fit.clean_posterior.assign(n, 1.0);
        return fit;
    }

    std::vector<double> sorted = losses;
    std::sort(sorted.begin(), sorted.end());
    double mean_all = 0.0;
    for (double l : losses) mean_all += l;
    mean_all /= static_cast<double>(n);
    double var_all = 0.0;
    for (double l : losses) var_all += (l - mean_all) * (l - mean_all);
    var_all = std::max(var_all / static_cast<double>(n), kVarianceFloor);

    fit.mean[0] = sorted[static_cast<std::size_t>(0.10 * static_cast<double>(n - 1))];
    fit.mean[1] = sorted[static_cast<std::size_t>(0.90 * static_cast<double>(n - 1))];
    fit.var[0] = fit.var[1] = var_all;
    fit.weight[0] = fit.weight[1] = 0.5;

    std::vector<double> resp0(n);
    double prev_ll = -1e300;
    for (int iter = 0; iter < max_iter; ++iter) {
        // E step
        double ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double l0 = std::log(fit.weight[0]) + gauss_logpdf(losses[i], fit.mean[0], fit.var[0]);
            const double l1 = std::log(fit.weight[1]) + gauss_logpdf(losses[i], fit.mean[1], fit.var[1]);
            const double m = std::max(l0, l1);
            const double z = std::exp(l0 - m) + std::exp(l1 - m);
            resp0[i] = std::exp(l0 - m) / z;
            ll += m + std::log(z);
        }
        fit.ll_trace.push_back(ll);
        if (iter > 0 && ll - prev_ll < tol) break;
        prev_ll = ll;
        // M step
        double n0 = 0.0, s0 = 0.0, s1 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            n0 += resp0[i];
            s0 += resp0[i] * losses[i];
            s1 += (1.0 - resp0[i]) * losses[i];
        }
        const double n1 = static_cast<double>(n) - n0;
        if (n0 < 1e-10 || n1 < 1e-10) break;  // one component vanished; keep last fit
        fit.mean[0] = s0 / n0;
        fit.mean[1] = s1 / n1;
        double v0 = 0.0, v1 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            v0 += resp0[i] * (losses[i] - fit.mean[0]) * (losses[i] - fit.mean[0]);
            v1 += (1.0 - resp0[i]) * (losses[i] - fit.mean[1]) * (losses[i] - fit.mean[1]);
        }
        fit.var[0] = std::max(v0 / n0, kVarianceFloor);
        fit.var[1] = std::max(v1 / n1, kVarianceFloor);
        fit.weight[0] = n0 / static_cast<double>(n);
        fit.weight[1] = 1.0 - fit.weight[0];
    }

    fit.clean_component = fit.mean[0] <= fit.mean[1] ? 0 : 1;
    fit.clean_posterior.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double l0 = std::log(fit.weight[0]) + gauss_logpdf(losses[i], fit.mean[0], fit.var[0]);
        const double l1 = std::log(fit.weight[1]) + gauss_logpdf(losses[i], fit.mean[1], fit.var[1]);
        const double m = std::max(l0, l1);
        const double z = std::exp(l0 - m) + std::exp(l1 - m);
        const double g0 = std::exp(l0 - m) / z;
        fit.clean_posterior[i] = fit.clean_component == 0 ? g0 : 1.0 - g0;
    }
    return fit;
}

struct SplitResult {
    std::vector<double> clean_posterior;  // w_i, carried into label refinement
    std::vector<int> clean_indices;       // S_C
    std::vector<int> noisy_indices;       // S_N
    double delta = 0.5;
};

// S_C = { i : 1 - gamma_i < delta }.
inline SplitResult split(const GmmFit& fit, double delta) {
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("split: delta must be in (0,1)");
    SplitResult r;
    r.delta = delta;
    r.clean_posterior = fit.clean_posterior;
    for (std::size_t i = 0; i < fit.clean_posterior.size(); ++i) {
        if (1.0 - fit.clean_posterior[i] < delta) r.clean_indices.push_back(static_cast<int>(i));
        else r.noisy_indices.push_back(static_cast<int>(i));
    }
    return r;
}

inline void save_split(std::ostream& os, const SplitResult& r) {
    os << "index\tclean_posterior\tassignment\n";
    std::vector<int> is_clean(r.clean_posterior.size(), 0);
    for (int i : r.clean_indices) is_clean[static_cast<std::size_t>(i)] = 1;
    for (std::size_t i = 0; i < r.clean_posterior.size(); ++i)
        os << i << "\t" << fmt_double(r.clean_posterior[i]) << "\t"
           << (is_clean[i] ? "clean" : "noisy") << "\n";
}

// ---------------------------------------------------------------------------
// Subset-partition inference
// ---------------------------------------------------------------------------

struct PartitionInferenceState {
    std::map<std::vector<int>, long> frequency;  // candidate subset -> occurrences
    double tau_asym = 0.9;
    int max_subset = 3;
};

// For each sample, walks the sorted class probabilities and records every
// top-k set (k <= K) whose cumulative mass reaches the threshold. The
// record-first-k-only variant stops at the first crossing.
inline PartitionInferenceState infer_partition_state(const Tensor& probs, int num_classes,
                                                     double tau_asym, int max_subset,
                                                     bool record_all_k = true) {
    if (max_subset < 1) throw std::invalid_argument("infer_partition: K must be at least 1");
    if (!(tau_asym > 0.0 && tau_asym < 1.0))
        throw std::invalid_argument("infer_partition: tau must be in (0,1)");
    if (static_cast<int>(probs.cols()) != num_classes)
        throw std::invalid_argument("infer_partition: probability width != C");
    PartitionInferenceState st;
    st.tau_asym = tau_asym;
    st.max_subset = max_subset;
    const int K = std::min(max_subset, num_classes);
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        std::vector<int> order(static_cast<std::size_t>(num_classes));
        for (int c = 0; c < num_classes; ++c) order[static_cast<std::size_t>(c)] = c;
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return probs.at(i, static_cast<std::size_t>(a)) > probs.at(i, static_cast<std::size_t>(b));
        });
        double cum = 0.0;
        for (int k = 1; k <= K; ++k) {
            cum += probs.at(i, static_cast<std::size_t>(order[static_cast<std::size_t>(k - 1)]));
            if (cum >= tau_asym) {
                std::vector<int> subset(order.begin(), order.begin() + k);
                std::sort(subset.begin(), subset.end());
                ++st.frequency[subset];
                if (!record_all_k) break;
            }
        }
    }
    return st;
}

// Greedy extraction: most frequent candidates first (smaller sets, then
// lexicographic order, break ties), accepted when disjoint from everything
// already accepted; unseen classes are collected into one final subset.
inline ClassPartition extract_partition(const PartitionInferenceState& st, int num_classes) {
    std::vector<std::pair<std::vector<int>, long>> cands(st.frequency.begin(), st.frequency.end());
    std::stable_sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        if (a.first.size() != b.first.size()) return a.first.size() < b.first.size();
        return a.first < b.first;
    });
    ClassPartition part;
    std::vector<int> covered(static_cast<std::size_t>(num_classes), 0);
    for (const auto& [subset, count] : cands) {
        bool overlaps = false;
        for (int c : subset)
            if (covered[static_cast<std::size_t>(c)]) overlaps = true;
        if (overlaps) continue;
        for (int c : subset) covered[static_cast<std::size_t>(c)] = 1;
        part.subsets.push_back(subset);
    }
    std::vector<int> rest;
    for (int c = 0; c < num_classes; ++c)
        if (!covered[static_cast<std::size_t>(c)]) rest.push_back(c);
    if (!rest.empty()) part.subsets.push_back(std::move(rest));
    return part;
}

inline ClassPartition infer_partition(const Tensor& probs, int num_classes, double tau_asym,
                                      int max_subset, bool record_all_k = true) {
    return extract_partition(
        infer_partition_state(probs, num_classes, tau_asym, max_subset, record_all_k), num_classes);
}

}  // namespace chimera
