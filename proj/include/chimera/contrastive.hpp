// Contrastive objectives: InfoNCE, supervised contrastive loss, mixed-view
// construction, MixCLR, the pre-training loss and the stage-II refinement
// losses (normal and asym modes).
//
// Batch losses support two negative conventions. The default treats every
// view as an anchor with all other views of both kinds as candidates
// (SimCLR / NT-Xent). The alternative follows the written MixCLR equation
// literally: anchors are first views only and negatives are the other
// pairs' first views.

#pragma once

#include <string>
#include <vector>

#include "chimera/data.hpp"
#include "chimera/rng.hpp"
#include "chimera/tensor.hpp"

namespace chimera {

enum class NegativeConvention { ntxent, v1_only };

struct ContrastiveConfig {
    double temperature = 0.5;
    double mix_alpha = 2.0;
    double lambda_pt = 0.2;
    double lambda_cl = 1.0;
    double lambda_mix = 0.2;
    double lambda_asym = 0.2;
    NegativeConvention negatives = NegativeConvention::ntxent;
};

struct MixPair {
    int i = 0, j = 0;
    double lambda = 0.5;
};

struct MixBatch {
    std::vector<MixPair> pairs;
    Tensor mixed_v1;  // m x d, raw space
    Tensor mixed_v2;
};

// Large finite bias that zeroes a softmax slot without introducing inf.
inline constexpr double kMaskBias = -1e9;

// ---------------------------------------------------------------------------
// Single-anchor losses
// ---------------------------------------------------------------------------

// InfoNCE: -log( e^{s+/t} / (e^{s+/t} + sum_l e^{s-_l/t}) ).
inline Val info_nce(Tape& tape, Val anchor, Val positive, Val negatives, double temperature) {
    if (tape.rows(negatives) == 0)
        throw TensorError("info_nce: at least one negative is required");
    Val cand = tape.concat_rows(positive, negatives);               // (1+k) x d
    Val sims = tape.matmul(anchor, cand, /*trans_b=*/true);         // 1 x (1+k)
    Val lp = tape.log_softmax_rows(tape.smul(sims, 1.0 / temperature));
    Tensor pick = zeros(1, tape.cols(lp));
    pick.values[0] = 1.0;
    return tape.smul(tape.sum(tape.mul(lp, tape.constant(pick))), -1.0);
}

// SupCL for one anchor: mean over positives of -log softmax over the
// positive+negative candidate set (the anchor itself is not a candidate).
inline Val supcl(Tape& tape, Val anchor, Val positives, Val negatives, double temperature) {
    const std::size_t k1 = tape.rows(positives);
    if (k1 == 0) throw TensorError("supcl: at least one positive is required");
    Val cand = tape.rows(negatives) > 0 ? tape.concat_rows(positives, negatives) : positives;
    Val sims = tape.matmul(anchor, cand, /*trans_b=*/true);
    Val lp = tape.log_softmax_rows(tape.smul(sims, 1.0 / temperature));
    Tensor pick = zeros(1, tape.cols(lp));
    for (std::size_t i = 0; i < k1; ++i) pick.values[i] = 1.0 / static_cast<double>(k1);
    return tape.smul(tape.sum(tape.mul(lp, tape.constant(pick))), -1.0);
}

// ---------------------------------------------------------------------------
// Batch losses over paired views
// ---------------------------------------------------------------------------

// Shared core: rows of fa and fb are paired views on the unit sphere.
inline Val ntxent_loss(Tape& tape, Val fa, Val fb, double temperature,
                       NegativeConvention convention) {
    const std::size_t m = tape.rows(fa);
    if (m != tape.rows(fb)) throw TensorError("ntxent_loss: view counts differ");
    if (m < 2) throw TensorError("ntxent_loss: need at least 2 pairs for negatives");
    Val views = tape.concat_rows(fa, fb);                            // 2m x d
    Val sims = tape.matmul(views, views, /*trans_b=*/true);          // 2m x 2m
    Val scaled = tape.smul(sims, 1.0 / temperature);

    const std::size_t n = 2 * m;
    Tensor mask = zeros(n, n);
    Tensor pos = zeros(n, n);
    if (convention == NegativeConvention::ntxent) {
        // every view anchors; candidates are all other views
        for (std::size_t i = 0; i < n; ++i) mask.at(i, i) = kMaskBias;
        for (std::size_t i = 0; i < m; ++i) {
            pos.at(i, i + m) = 1.0 / static_cast<double>(n);
            pos.at(i + m, i) = 1.0 / static_cast<double>(n);
        }
    } else {
        // anchors are first views; candidates are own second view plus the
        // other pairs' first views
        for (std::size_t i = 0; i < m; ++i) {
            mask.at(i, i) = kMaskBias;
            for (std::size_t j = 0; j < m; ++j)
                if (j != i) mask.at(i, j + m) = kMaskBias;
            pos.at(i, i + m) = 1.0 / static_cast<double>(m);
        }
        for (std::size_t i = m; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (j != 0) mask.at(i, j) = kMaskBias;  // rows unused, keep softmax finite
    }
    Val lp = tape.log_softmax_rows(tape.add(scaled, tape.constant(mask)));
    return tape.smul(tape.sum(tape.mul(lp, tape.constant(pos))), -1.0);
}

// MixCLR: NT-Xent over projected mixed views.
inline Val mixclr_loss(Tape& tape, Val f_mixed_v1, Val f_mixed_v2, double temperature,
                       NegativeConvention convention) {
    if (tape.rows(f_mixed_v1) < 2)
        throw TensorError("mixclr_loss: need at least 2 mixed pairs");
    return ntxent_loss(tape, f_mixed_v1, f_mixed_v2, temperature, convention);
}

// Supervised contrastive loss over a labelled batch with two views per
// sample. Anchors lacking a positive are skipped; with two views per
// sample the other view always provides one.
inline Val supcl_batch(Tape& tape, Val fa, Val fb, const std::vector<int>& labels,
                       double temperature) {
    const std::size_t m = tape.rows(fa);
    if (m != labels.size()) throw TensorError("supcl_batch: label count mismatch");
    if (m < 2) throw TensorError("supcl_batch: need at least 2 samples");
    Val views = tape.concat_rows(fa, fb);
    Val sims = tape.matmul(views, views, /*trans_b=*/true);
    Val scaled = tape.smul(sims, 1.0 / temperature);

    const std::size_t n = 2 * m;
    auto label_of = [&](std::size_t v) { return labels[v % m]; };
    Tensor mask = zeros(n, n);
    Tensor pos = zeros(n, n);
    std::size_t valid_anchors = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mask.at(i, i) = kMaskBias;
        std::size_t k1 = 0;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i && label_of(j) == label_of(i)) ++k1;
        if (k1 == 0) continue;
        ++valid_anchors;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i && label_of(j) == label_of(i))
                pos.at(i, j) = 1.0 / static_cast<double>(k1);
    }
    if (valid_anchors == 0) throw TensorError("supcl_batch: no anchor has a positive");
    for (double& v : pos.values) v /= static_cast<double>(valid_anchors);
    Val lp = tape.log_softmax_rows(tape.add(scaled, tape.constant(mask)));
    return tape.smul(tape.sum(tape.mul(lp, tape.constant(pos))), -1.0);
}

// ---------------------------------------------------------------------------
// Mixed-view construction
// ---------------------------------------------------------------------------

// Pairs indices [0,n): consecutive after a shuffle, with the first index
// reused when n is odd.
inline std::vector<std::pair<int, int>> draw_pairing(std::size_t n, Rng& rng) {
    if (n < 2) throw std::invalid_argument("draw_pairing: need at least 2 samples");
    std::vector<int> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
    rng.shuffle(idx);
    std::vector<std::pair<int, int>> pairs;
    for (std::size_t i = 0; i + 1 < n; i += 2) pairs.emplace_back(idx[i], idx[i + 1]);
    if (n % 2 == 1) pairs.emplace_back(idx[n - 1], idx[0]);
    return pairs;
}

// Applies the per-pair interpolation to both view tensors.
inline MixBatch mix_views(const Tensor& v1, const Tensor& v2, std::vector<MixPair> pairs) {
    const std::size_t d = v1.cols();
    MixBatch mb;
    mb.mixed_v1 = zeros(pairs.size(), d);
    mb.mixed_v2 = zeros(pairs.size(), d);
    for (std::size_t p = 0; p < pairs.size(); ++p) {
        const MixPair& mp = pairs[p];
        for (std::size_t k = 0; k < d; ++k) {
            mb.mixed_v1.at(p, k) =
                mp.lambda * v1.at(static_cast<std::size_t>(mp.i), k) +
                (1.0 - mp.lambda) * v1.at(static_cast<std::size_t>(mp.j), k);
            mb.mixed_v2.at(p, k) =
                mp.lambda * v2.at(static_cast<std::size_t>(mp.i), k) +
                (1.0 - mp.lambda) * v2.at(static_cast<std::size_t>(mp.j), k);
        }
    }
    mb.pairs = std::move(pairs);
    return mb;
}

// Random pairing + Beta(alpha, alpha) coefficients + interpolation.
inline MixBatch build_mix_pairs(const Tensor& v1, const Tensor& v2, double alpha, Rng& rng) {
    if (v1.rows() != v2.rows()) throw std::invalid_argument("build_mix_pairs: view counts differ");
    if (v1.rows() < 2) throw std::invalid_argument("build_mix_pairs: need at least 2 samples");
    std::vector<MixPair> pairs;
    for (auto [i, j] : draw_pairing(v1.rows(), rng))
        pairs.push_back({i, j, rng.beta(alpha, alpha)});
    return mix_views(v1, v2, pairs);
}

// Pairs samples whose (noisy) labels fall in the same partition subset;
// odd clusters reuse their first sample, singleton clusters are skipped.
inline std::vector<MixPair> asymix_pairs(const std::vector<int>& labels,
                                         const ClassPartition& partition, int num_classes,
                                         double alpha, Rng& rng) {
    partition.validate(num_classes);
    const std::vector<int> subset_of = partition.subset_of(num_classes);
    for (int y : labels)
        if (y < 0 || y >= num_classes)
            throw std::invalid_argument("asymix_pairs: label " + std::to_string(y) +
                                        " not covered by partition");
    std::vector<std::vector<int>> clusters(partition.subsets.size());
    for (std::size_t i = 0; i < labels.size(); ++i)
        clusters[static_cast<std::size_t>(subset_of[static_cast<std::size_t>(labels[i])])].push_back(
            static_cast<int>(i));
    std::vector<MixPair> pairs;
    for (auto& cluster : clusters) {
        if (cluster.size() < 2) continue;
        rng.shuffle(cluster);
        for (std::size_t i = 0; i + 1 < cluster.size(); i += 2)
            pairs.push_back({cluster[i], cluster[i + 1], rng.beta(alpha, alpha)});
        if (cluster.size() % 2 == 1)
            pairs.push_back({cluster[cluster.size() - 1], cluster[0], rng.beta(alpha, alpha)});
    }
    return pairs;
}

// ---------------------------------------------------------------------------
// Composite losses
// ---------------------------------------------------------------------------

// Pre-training objective: standard contrastive loss over the augmented
// views plus the weighted MixCLR term over the mixed views.
inline Val pretrain_loss(Tape& tape, Val f_v1, Val f_v2, Val f_mix_v1, Val f_mix_v2,
                         const ContrastiveConfig& cfg) {
    Val cl = ntxent_loss(tape, f_v1, f_v2, cfg.temperature, cfg.negatives);
    Val mix = mixclr_loss(tape, f_mix_v1, f_mix_v2, cfg.temperature, cfg.negatives);
    return tape.add(cl, tape.smul(mix, cfg.lambda_pt));
}

enum class ClPlusMode { normal, asym };

struct ClPlusInputs {
    Val f_v1, f_v2;          // projected strong views of the clean batch
    std::vector<int> labels;  // noisy labels of the clean batch
    Val f_mix_v1, f_mix_v2;  // projected mixed views over the clean batch
    bool has_asym = false;
    Val f_asym_v1, f_asym_v2;  // projected views of the same-subset mixed pairs
};

// Stage-II refinement loss. Normal mode: weighted SupCL + MixCLR on the
// clean subset. Asym mode: self-supervised contrastive + MixCLR +
// AsyMixCLR on same-subset pairs.
inline Val clplus_loss(Tape& tape, const ClPlusInputs& in, const ContrastiveConfig& cfg,
                       ClPlusMode mode) {
    Val total = tape.constant_scalar(0.0);
    if (mode == ClPlusMode::normal) {
        if (cfg.lambda_cl != 0.0)
            total = tape.add(total, tape.smul(supcl_batch(tape, in.f_v1, in.f_v2, in.labels,
                                                          cfg.temperature),
                                              cfg.lambda_cl));
        if (cfg.lambda_mix != 0.0)
            total = tape.add(total, tape.smul(mixclr_loss(tape, in.f_mix_v1, in.f_mix_v2,
                                                          cfg.temperature, cfg.negatives),
                                              cfg.lambda_mix));
    } else {
        if (!in.has_asym)
            throw TensorError("clplus_loss: asym mode requires same-subset mixed pairs");
        if (cfg.lambda_cl != 0.0)
            total = tape.add(total, tape.smul(ntxent_loss(tape, in.f_v1, in.f_v2, cfg.temperature,
                                                          cfg.negatives),
                                              cfg.lambda_cl));
        if (cfg.lambda_mix != 0.0)
            total = tape.add(total, tape.smul(mixclr_loss(tape, in.f_mix_v1, in.f_mix_v2,
                                                          cfg.temperature, cfg.negatives),
                                              cfg.lambda_mix));
        if (cfg.lambda_asym != 0.0)
            total = tape.add(total, tape.smul(mixclr_loss(tape, in.f_asym_v1, in.f_asym_v2,
                                                          cfg.temperature, cfg.negatives),
                                              cfg.lambda_asym));
    }
    return total;
}

}  // namespace chimera
