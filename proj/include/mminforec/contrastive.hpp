#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "mminforec/model.hpp"

namespace mminforec {

// Mask-seed streams; keep the bank, sequence-side and g_ta dropout draws in
// disjoint spaces of the same step seed.
inline uint64_t tag_bank(int item_id) { return (0x1ull << 56) | static_cast<uint64_t>(item_id); }
inline uint64_t tag_seq(int seq, int pos) {
    return (0x2ull << 56) | (static_cast<uint64_t>(seq) << 16) | static_cast<uint64_t>(pos);
}
inline uint64_t tag_ta(int seq) { return (0x3ull << 56) | static_cast<uint64_t>(seq); }

// One training sequence inside a batch: item ids in chronological order.
struct BatchSequence {
    std::vector<int> items;
};

// One prediction target: rollout step `step` from context position `pos`
// of sequence `seq`, whose ground truth is `item_id`.
struct ContrastiveTarget {
    int seq = 0;
    int pos = 0;   // context index within the sequence (0-based)
    int step = 1;  // rollout step (1-based)
    int item_id = 0;
    ValueRef z_hat;
    std::vector<int> pos_cols;  // bank columns of the semantic positives
    std::vector<int> neg_cols;  // bank columns of the negatives
    int temporal_negs = 0;      // negative ids sharing the target's sequence
    int general_negs = 0;       // negative ids from other sequences only
};

// Shared bank of encoded item vectors plus per-target bookkeeping. Bank row
// u*variants+v holds variant v of unique item u; variants is q in MINCE mode
// and 1 otherwise.
struct ContrastiveBatch {
    ValueRef bank;               // (D*variants) x d
    std::vector<int> bank_ids;   // item id of every bank row
    std::vector<int> unique_ids; // sorted unique non-padding ids, size D
    int D = 0;
    int variants = 1;
    std::vector<ContrastiveTarget> targets;
};

// q encodings of one item under masks seed_base+1 .. seed_base+q. With
// dropout rate 0 all q coincide (NCE degenerate case).
inline std::vector<ValueRef> build_positive_set(Tape& tape, const BoundParams& bound,
                                                const ModelConfig& cfg, int item_id,
                                                const std::vector<int>& attrs, int q,
                                                uint64_t seed_base) {
    if (q < 1) throw std::invalid_argument("build_positive_set: q must be >= 1");
    std::vector<ValueRef> out;
    out.reserve(static_cast<size_t>(q));
    for (int v = 1; v <= q; ++v)
        out.push_back(encode_item_id(tape, bound, cfg, item_id, attrs, seed_base + static_cast<uint64_t>(v)));
    return out;
}

// Negative columns for one target: every bank row whose item id differs from
// the target id. All encodings of the target id are excluded everywhere so
// repeated items never become false negatives.
inline std::vector<int> build_negative_set(const ContrastiveBatch& batch, int target_id) {
    if (batch.D < 2)
        throw std::invalid_argument("build_negative_set: batch has a single unique item id, no negatives");
    std::vector<int> cols;
    cols.reserve(batch.bank_ids.size());
    for (size_t r = 0; r < batch.bank_ids.size(); ++r)
        if (batch.bank_ids[r] != target_id) cols.push_back(static_cast<int>(r));
    return cols;
}

// Build the full contrastive batch on a tape: the shared encoding bank over
// the batch's unique item ids, the per-sequence contexts parallel to the
// rollout, and per-target positive/negative bookkeeping.
//
// Targets range over every (sequence, position, rollout step) whose ground
// truth lies inside the sequence; steps past the end are skipped.
// `training` turns dropout on (mask streams derived from step_seed).
inline ContrastiveBatch assemble_contrastive_batch(Tape& tape, const BoundParams& bound,
                                                   const ModelConfig& cfg,
                                                   const std::vector<BatchSequence>& sequences,
                                                   const std::vector<std::vector<int>>& item_attrs,
                                                   uint64_t step_seed, bool training) {
    ContrastiveBatch batch;
    std::set<int> ids;
    for (const auto& s : sequences)
        for (int id : s.items) {
            if (id != 0) ids.insert(id);
            if (id < 0 || id > bound.params->num_items)
                throw std::invalid_argument("assemble_contrastive_batch: item id " + std::to_string(id) +
                                            " out of range");
        }
    batch.unique_ids.assign(ids.begin(), ids.end());
    batch.D = static_cast<int>(batch.unique_ids.size());
    if (batch.D < 2)
        throw std::invalid_argument("assemble_contrastive_batch: need >= 2 unique item ids, got " +
                                    std::to_string(batch.D));

    batch.variants = cfg.loss_variant == LossVariant::Mince ? cfg.q : 1;

    // Encoding bank: q dropout variants per unique id (1 when not MINCE).
    std::vector<ValueRef> bank_rows;
    bank_rows.reserve(static_cast<size_t>(batch.D * batch.variants));
    std::map<int, int> first_col;  // id -> first bank column
    for (int u = 0; u < batch.D; ++u) {
        int id = batch.unique_ids[static_cast<size_t>(u)];
        first_col[id] = u * batch.variants;
        uint64_t seed_base = derive_seed(step_seed, tag_bank(id));
        ModelConfig enc_cfg = cfg;
        if (!training) enc_cfg.dropout_rate = 0.0;
        auto vars = build_positive_set(tape, bound, enc_cfg, id, item_attrs[static_cast<size_t>(id)],
                                       batch.variants, seed_base);
        for (ValueRef v : vars) {
            bank_rows.push_back(v);
            batch.bank_ids.push_back(id);
        }
    }
    batch.bank = tape.concat_rows(bank_rows);

    // Per-sequence context + rollout.
    for (size_t s = 0; s < sequences.size(); ++s) {
        const std::vector<int>& items = sequences[s].items;
        int n = static_cast<int>(items.size());
        if (n < 2) continue;  // nothing to predict
        std::set<int> seq_ids(items.begin(), items.end());

        std::vector<ValueRef> zs;
        zs.reserve(static_cast<size_t>(n - 1));
        for (int t = 0; t < n - 1; ++t) {
            std::optional<uint64_t> mseed;
            if (training && cfg.dropout_rate > 0.0)
                mseed = derive_seed(step_seed, tag_seq(static_cast<int>(s), t));
            zs.push_back(encode_item_id(tape, bound, cfg, items[static_cast<size_t>(t)],
                                        item_attrs[static_cast<size_t>(items[static_cast<size_t>(t)])], mseed));
        }
        std::optional<uint64_t> ta_seed;
        if (training && cfg.dropout_rate > 0.0) ta_seed = derive_seed(step_seed, tag_ta(static_cast<int>(s)));
        ValueRef contexts = aggregate_context(tape, bound, cfg, tape.concat_rows(zs), ta_seed);

        for (int t = 0; t < n - 1; ++t) {
            if (t + 1 >= n) break;
            ValueRef c_t = tape.slice_rows(contexts, t, 1);
            int max_step = std::min(cfg.steps, n - 1 - t);
            auto preds = rollout(tape, bound, cfg, c_t, max_step);
            for (int j = 1; j <= max_step; ++j) {
                ContrastiveTarget tgt;
                tgt.seq = static_cast<int>(s);
                tgt.pos = t;
                tgt.step = j;
                tgt.item_id = items[static_cast<size_t>(t + j)];
                tgt.z_hat = preds[static_cast<size_t>(j - 1)];
                int c0 = first_col[tgt.item_id];
                for (int v = 0; v < batch.variants; ++v) tgt.pos_cols.push_back(c0 + v);
                tgt.neg_cols = build_negative_set(batch, tgt.item_id);
                for (int id : batch.unique_ids) {
                    if (id == tgt.item_id) continue;
                    if (seq_ids.count(id)) ++tgt.temporal_negs;
                    else ++tgt.general_negs;
                }
                batch.targets.push_back(std::move(tgt));
            }
        }
    }
    return batch;
}

struct LossResult {
    ValueRef mean_loss;                 // scalar; mean over targets
    std::vector<ValueRef> per_target;   // scalar per target
};

namespace detail {

inline LossResult finish_loss(Tape& tape, std::vector<ValueRef> per_target) {
    LossResult res;
    res.per_target = std::move(per_target);
    ValueRef stacked = tape.concat_rows(res.per_target);
    res.mean_loss = tape.scale(tape.reduce_sum(stacked), 1.0 / static_cast<double>(res.per_target.size()));
    return res;
}

inline ValueRef target_scores(Tape& tape, const ContrastiveBatch& batch, const ContrastiveTarget& tgt,
                              double inv_tau) {
    ValueRef row = tape.matmul_nt(tgt.z_hat, batch.bank);
    return inv_tau == 1.0 ? row : tape.scale(row, inv_tau);
}

}  // namespace detail

// Vanilla NCE: softmax cross-entropy of the single positive against the
// in-batch negatives, log-sum-exp stabilized.
inline LossResult nce_loss(Tape& tape, const ContrastiveBatch& batch, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("nce_loss: tau must be positive");
    if (batch.variants != 1) throw std::invalid_argument("nce_loss: expects a single positive per target (q=1 bank)");
    if (batch.targets.empty()) throw std::invalid_argument("nce_loss: batch has no targets");
    std::vector<ValueRef> per_target;
    per_target.reserve(batch.targets.size());
    for (const auto& tgt : batch.targets) {
        if (tgt.neg_cols.empty()) throw std::invalid_argument("nce_loss: target has an empty negative set");
        ValueRef scores = detail::target_scores(tape, batch, tgt, 1.0 / tau);
        ValueRef lse_all = tape.logsumexp_row(scores);
        ValueRef s_pos = tape.gather_cols(scores, {tgt.pos_cols[0]});
        per_target.push_back(tape.sub(lse_all, s_pos));
    }
    return detail::finish_loss(tape, per_target);
}

// MINCE: all q semantic positives share the numerator; the negative set
// carries the q variants of every other id.
inline LossResult mince_loss(Tape& tape, const ContrastiveBatch& batch, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("mince_loss: tau must be positive");
    if (batch.targets.empty()) throw std::invalid_argument("mince_loss: batch has no targets");
    std::vector<ValueRef> per_target;
    per_target.reserve(batch.targets.size());
    for (const auto& tgt : batch.targets) {
        if (tgt.pos_cols.empty()) throw std::invalid_argument("mince_loss: target has an empty positive set");
        if (tgt.neg_cols.empty()) throw std::invalid_argument("mince_loss: target has an empty negative set");
        ValueRef scores = detail::target_scores(tape, batch, tgt, 1.0 / tau);
        ValueRef lse_all = tape.logsumexp_row(scores);
        ValueRef lse_pos = tape.logsumexp_row(tape.gather_cols(scores, tgt.pos_cols));
        per_target.push_back(tape.sub(lse_all, lse_pos));
    }
    return detail::finish_loss(tape, per_target);
}

// BPR: -log sigmoid(s+ - s-) with one uniformly sampled in-batch negative
// per target, deterministic in sample_seed.
inline LossResult bpr_loss(Tape& tape, const ContrastiveBatch& batch, uint64_t sample_seed) {
    if (batch.targets.empty()) throw std::invalid_argument("bpr_loss: batch has no targets");
    std::vector<ValueRef> per_target;
    per_target.reserve(batch.targets.size());
    for (size_t i = 0; i < batch.targets.size(); ++i) {
        const auto& tgt = batch.targets[i];
        if (tgt.neg_cols.empty()) throw std::invalid_argument("bpr_loss: target has an empty negative set");
        uint64_t draw = derive_seed(sample_seed, 0x6272ull << 32 | static_cast<uint64_t>(i));
        int neg_col = tgt.neg_cols[static_cast<size_t>(draw % tgt.neg_cols.size())];
        ValueRef scores = detail::target_scores(tape, batch, tgt, 1.0);
        ValueRef s_pos = tape.gather_cols(scores, {tgt.pos_cols[0]});
        ValueRef s_neg = tape.gather_cols(scores, {neg_col});
        per_target.push_back(tape.softplus(tape.sub(s_neg, s_pos)));
    }
    return detail::finish_loss(tape, per_target);
}

// Dispatch on the configured objective.
inline LossResult batch_loss(Tape& tape, const ContrastiveBatch& batch, const ModelConfig& cfg,
                             uint64_t step_seed) {
    switch (cfg.loss_variant) {
        case LossVariant::Nce: return nce_loss(tape, batch, cfg.tau);
        case LossVariant::Mince: return mince_loss(tape, batch, cfg.tau);
        case LossVariant::Bpr: return bpr_loss(tape, batch, step_seed);
    }
    throw std::logic_error("batch_loss: unknown loss variant");
}

}  // namespace mminforec
