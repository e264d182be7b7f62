#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mminforec/data.hpp"
#include "mminforec/model.hpp"

namespace mminforec {

// 1-based rank of the target among all catalog items. Counting, not
// sorting: rank = 1 + |{score > s}| + |{tied with smaller id}| — the
// deterministic pessimistic-within-id-order tie rule. scores[0] must be the
// padding id at -inf.
inline int rank_of_target(const std::vector<double>& scores, int target_id) {
    if (target_id <= 0 || target_id >= static_cast<int>(scores.size()))
        throw std::invalid_argument("rank_of_target: target id " + std::to_string(target_id) +
                                    " is padding or out of range");
    double s = scores[static_cast<size_t>(target_id)];
    int rank = 1;
    for (int j = 1; j < static_cast<int>(scores.size()); ++j) {
        if (j == target_id) continue;
        double v = scores[static_cast<size_t>(j)];
        if (v > s || (v == s && j < target_id)) ++rank;
    }
    return rank;
}

inline double hr_at_k(const std::vector<int>& ranks, int K) {
    if (ranks.empty()) throw std::invalid_argument("hr_at_k: empty rank list");
    if (K < 1) throw std::invalid_argument("hr_at_k: K must be >= 1");
    int hits = 0;
    for (int r : ranks) hits += r <= K;
    return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

// Single relevant item per user: per-user gain is 1/log2(rank+1) inside the
// window, 0 outside.
inline double ndcg_at_k(const std::vector<int>& ranks, int K) {
    if (ranks.empty()) throw std::invalid_argument("ndcg_at_k: empty rank list");
    if (K < 1) throw std::invalid_argument("ndcg_at_k: K must be >= 1");
    double total = 0.0;
    for (int r : ranks)
        if (r <= K) total += 1.0 / std::log2(static_cast<double>(r) + 1.0);
    return total / static_cast<double>(ranks.size());
}

struct MetricsRecord {
    std::string split;
    double hr5 = 0.0, ndcg5 = 0.0, hr10 = 0.0, ndcg10 = 0.0;
    int n_users = 0;
    std::vector<int> ranks;  // per evaluated user, dataset order
};

// Encode every catalog item once, dropout disabled. Row 0 (padding) stays
// zero; scoring assigns it -inf regardless.
inline Tensor encode_catalog(ModelParams& params, const ModelConfig& cfg,
                             const std::vector<std::vector<int>>& item_attrs) {
    Tensor catalog(params.num_items + 1, params.d);
    for (int i = 1; i <= params.num_items; ++i) {
        Tape tape(false);
        BoundParams bound = bind_params(tape, params);
        ValueRef z = encode_item_id(tape, bound, cfg, i, item_attrs[static_cast<size_t>(i)], std::nullopt);
        const Tensor& row = tape.val(z);
        std::copy(row.data.begin(), row.data.end(), catalog.data.begin() + static_cast<long>(i) * params.d);
    }
    return catalog;
}

enum class EvalSplit { Valid, Test };

// Full-item-set ranking: context is the train prefix (validation) or train
// prefix + validation item (test); the query is c_t, or g_m(c_t) when
// score_source = memory.
inline MetricsRecord evaluate_full_ranking(ModelParams& params, const ModelConfig& cfg,
                                           const Dataset& ds, EvalSplit split) {
    if (ds.split.empty()) throw std::invalid_argument("evaluate_full_ranking: dataset has no split");
    Tensor catalog = encode_catalog(params, cfg, ds.item_attrs);

    MetricsRecord rec;
    rec.split = split == EvalSplit::Valid ? "valid" : "test";
    for (size_t u = 0; u < ds.split.size(); ++u) {
        const UserSplit& us = ds.split[u];
        std::vector<int> context = us.train;
        int target = us.valid;
        if (split == EvalSplit::Test) {
            context.push_back(us.valid);
            target = us.test;
        }
        if (static_cast<int>(context.size()) > cfg.max_len)
            context.erase(context.begin(), context.end() - cfg.max_len);

        Tape tape(false);
        BoundParams bound = bind_params(tape, params);
        ValueRef z_seq = tape.gather_rows(tape.constant(catalog), context);
        ValueRef contexts = aggregate_context(tape, bound, cfg, z_seq, std::nullopt);
        ValueRef c_t = tape.slice_rows(contexts, static_cast<int>(context.size()) - 1, 1);
        ValueRef query = c_t;
        if (cfg.score_source == ScoreSource::Memory && cfg.memory_variant != MemoryVariant::None)
            query = memory_read(tape, bound, cfg, c_t);
        rec.ranks.push_back(rank_of_target(score_catalog(tape.val(query).data, catalog), target));
    }
    rec.n_users = static_cast<int>(rec.ranks.size());
    rec.hr5 = hr_at_k(rec.ranks, 5);
    rec.ndcg5 = ndcg_at_k(rec.ranks, 5);
    rec.hr10 = hr_at_k(rec.ranks, 10);
    rec.ndcg10 = ndcg_at_k(rec.ranks, 10);
    return rec;
}

}  // namespace mminforec
