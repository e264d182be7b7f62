#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mminforec/adam.hpp"
#include "mminforec/contrastive.hpp"
#include "mminforec/data.hpp"
#include "mminforec/eval.hpp"

namespace mminforec {

struct EpochRecord {
    int epoch = 0;
    double loss = 0.0;
    double hr5 = 0.0, ndcg5 = 0.0, hr10 = 0.0, ndcg10 = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> log;
    ModelParams best_params;      // best validation NDCG@10 (init when no epoch ran)
    int best_epoch = 0;           // 0 = initialization
    double best_ndcg10 = -1.0;
    bool aborted_non_finite = false;
    std::string abort_reason;
};

// Mean training loss over one batch, recorded on a fresh tape; gradient
// accumulation and the optimizer step happen here.
inline double train_step(ModelParams& params, AdamState& adam, const ModelConfig& cfg,
                         const TrainConfig& tc, const std::vector<BatchSequence>& sequences,
                         const std::vector<std::vector<int>>& item_attrs, uint64_t step_seed) {
    Tape tape;
    BoundParams bound = bind_params(tape, params);
    ContrastiveBatch batch = assemble_contrastive_batch(tape, bound, cfg, sequences, item_attrs,
                                                        step_seed, /*training=*/true);
    LossResult loss = batch_loss(tape, batch, cfg, step_seed);
    double value = tape.scalar(loss.mean_loss);
    if (!std::isfinite(value)) return value;  // caller aborts
    params.zero_grads();
    tape.backward(loss.mean_loss);
    params.zero_padding_grads();
    adam_step(params, adam, tc.lr, tc.l2_weight);
    return value;
}

// Full training loop: seeded shuffling, per-epoch validation metrics,
// best-NDCG@10 checkpoint retention, early stopping, and a NaN abort that
// keeps the last good checkpoint. Bit-reproducible for a fixed
// (seed, config) pair.
inline TrainResult train(ModelParams& params, const Dataset& ds, const TrainConfig& tc,
                         const ModelConfig& cfg) {
    tc.validate();
    cfg.validate();
    if (ds.split.empty()) throw std::invalid_argument("train: dataset has no split");

    TrainResult result;
    result.best_params = params;

    {
        MetricsRecord init_valid = evaluate_full_ranking(params, cfg, ds, EvalSplit::Valid);
        result.best_ndcg10 = init_valid.ndcg10;
    }

    AdamState adam = AdamState::init(params);
    int since_best = 0;
    for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
        auto batches = make_batches(ds, tc.batch_size, derive_seed(tc.seed, 0xE0000u + static_cast<uint64_t>(epoch)));
        double loss_sum = 0.0;
        int batch_count = 0;
        for (size_t bi = 0; bi < batches.size(); ++bi) {
            const Batch& b = batches[bi];
            std::vector<BatchSequence> seqs;
            seqs.reserve(b.user_indices.size());
            for (int u : b.user_indices) seqs.push_back({ds.split[static_cast<size_t>(u)].train});
            uint64_t step_seed = derive_seed(tc.seed, (static_cast<uint64_t>(epoch) << 24) | bi);
            double value;
            try {
                value = train_step(params, adam, cfg, tc, seqs, ds.item_attrs, step_seed);
            } catch (const std::runtime_error& e) {
                result.aborted_non_finite = true;
                result.abort_reason = e.what();
                return result;
            }
            if (!std::isfinite(value)) {
                result.aborted_non_finite = true;
                result.abort_reason = "non-finite training loss in epoch " + std::to_string(epoch);
                return result;
            }
            loss_sum += value;
            ++batch_count;
        }

        MetricsRecord valid = evaluate_full_ranking(params, cfg, ds, EvalSplit::Valid);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.loss = batch_count > 0 ? loss_sum / batch_count : 0.0;
        rec.hr5 = valid.hr5;
        rec.ndcg5 = valid.ndcg5;
        rec.hr10 = valid.hr10;
        rec.ndcg10 = valid.ndcg10;
        result.log.push_back(rec);

        if (valid.ndcg10 > result.best_ndcg10) {
            result.best_ndcg10 = valid.ndcg10;
            result.best_params = params;
            result.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= tc.patience) {
            break;  // early stop on validation NDCG@10
        }
    }
    return result;
}

// L2 norm per memory slot; the sparsity diagnostic dump.
inline std::vector<double> memory_slot_norms(const ModelParams& params) {
    std::vector<double> norms(static_cast<size_t>(params.memory_slots), 0.0);
    for (int r = 0; r < params.memory_slots; ++r) {
        double s = 0.0;
        for (int j = 0; j < params.d; ++j) s += params.memory.at(r, j) * params.memory.at(r, j);
        norms[static_cast<size_t>(r)] = std::sqrt(s);
    }
    return norms;
}

// --- ablation matrix ---------------------------------------------------

struct AblationVariant {
    std::string name;
    MemoryVariant memory;
    LossVariant loss;
    std::optional<int> q_override;
};

// Named variants from the component/memory/objective studies.
inline AblationVariant resolve_variant(const std::string& name) {
    if (name == "cpc") return {name, MemoryVariant::None, LossVariant::Nce, 1};
    if (name == "+g_m") return {name, MemoryVariant::ResM, LossVariant::Nce, 1};
    if (name == "+mince") return {name, MemoryVariant::None, LossVariant::Mince, std::nullopt};
    if (name == "full") return {name, MemoryVariant::ResM, LossVariant::Mince, std::nullopt};
    if (name == "none") return {name, MemoryVariant::None, LossVariant::Mince, std::nullopt};
    if (name == "fc-m") return {name, MemoryVariant::FcM, LossVariant::Mince, std::nullopt};
    if (name == "res-m") return {name, MemoryVariant::ResM, LossVariant::Mince, std::nullopt};
    if (name == "nce") return {name, MemoryVariant::ResM, LossVariant::Nce, 1};
    if (name == "bpr") return {name, MemoryVariant::ResM, LossVariant::Bpr, 1};
    if (name == "mince") return {name, MemoryVariant::ResM, LossVariant::Mince, std::nullopt};
    throw std::invalid_argument("unknown ablation variant '" + name +
                                "' (expected cpc|+g_m|+mince|full|none|fc-m|res-m|nce|bpr|mince)");
}

struct AblationRow {
    std::string variant;
    uint64_t seed = 0;
    double valid_hr5 = 0, valid_ndcg5 = 0, valid_hr10 = 0, valid_ndcg10 = 0;
    double test_hr5 = 0, test_ndcg5 = 0, test_hr10 = 0, test_ndcg10 = 0;
    int best_epoch = 0;
};

// One training run per (variant, seed) cell with shared seeds. Every
// variant name is resolved before any run starts.
inline std::vector<AblationRow> ablate(const std::vector<std::string>& variant_names,
                                       const std::vector<uint64_t>& seeds, const Dataset& ds,
                                       const TrainConfig& tc_base, const ModelConfig& cfg_base) {
    std::vector<AblationVariant> variants;
    variants.reserve(variant_names.size());
    for (const auto& name : variant_names) variants.push_back(resolve_variant(name));

    std::vector<AblationRow> rows;
    for (const auto& variant : variants) {
        for (uint64_t seed : seeds) {
            ModelConfig cfg = cfg_base;
            cfg.memory_variant = variant.memory;
            cfg.loss_variant = variant.loss;
            if (variant.q_override) cfg.q = *variant.q_override;
            TrainConfig tc = tc_base;
            tc.seed = seed;
            ModelParams params = ModelParams::init(cfg, ds.num_items(), ds.num_attrs(), seed);
            TrainResult res = train(params, ds, tc, cfg);
            MetricsRecord valid = evaluate_full_ranking(res.best_params, cfg, ds, EvalSplit::Valid);
            MetricsRecord test = evaluate_full_ranking(res.best_params, cfg, ds, EvalSplit::Test);
            rows.push_back({variant.name, seed, valid.hr5, valid.ndcg5, valid.hr10, valid.ndcg10,
                            test.hr5, test.ndcg5, test.hr10, test.ndcg10, res.best_epoch});
        }
    }
    return rows;
}

}  // namespace mminforec
