#pragma once

#include <stdexcept>
#include <string>

namespace mminforec {

enum class MemoryVariant { None, FcM, ResM };
enum class LossVariant { Nce, Mince, Bpr };
enum class ScoreSource { Context, Memory };

inline std::string to_string(MemoryVariant v) {
    switch (v) {
        case MemoryVariant::None: return "none";
        case MemoryVariant::FcM: return "fc-m";
        case MemoryVariant::ResM: return "res-m";
    }
    return "?";
}
inline std::string to_string(LossVariant v) {
    switch (v) {
        case LossVariant::Nce: return "nce";
        case LossVariant::Mince: return "mince";
        case LossVariant::Bpr: return "bpr";
    }
    return "?";
}
inline std::string to_string(ScoreSource v) {
    return v == ScoreSource::Context ? "context" : "memory";
}

inline MemoryVariant memory_variant_from(const std::string& s) {
    if (s == "none") return MemoryVariant::None;
    if (s == "fc-m") return MemoryVariant::FcM;
    if (s == "res-m") return MemoryVariant::ResM;
    throw std::invalid_argument("unknown memory variant '" + s + "' (expected none|fc-m|res-m)");
}
inline LossVariant loss_variant_from(const std::string& s) {
    if (s == "nce") return LossVariant::Nce;
    if (s == "mince") return LossVariant::Mince;
    if (s == "bpr") return LossVariant::Bpr;
    throw std::invalid_argument("unknown loss variant '" + s + "' (expected nce|mince|bpr)");
}
inline ScoreSource score_source_from(const std::string& s) {
    if (s == "context") return ScoreSource::Context;
    if (s == "memory") return ScoreSource::Memory;
    throw std::invalid_argument("unknown score source '" + s + "' (expected context|memory)");
}

struct ModelConfig {
    int d = 64;               // embedding size
    int b = 10;               // memory slots
    int q = 2;                // dropout positive instances
    int steps = 1;            // prediction steps
    double tau = 0.6;         // temperature
    double dropout_rate = 0.5;
    int layers = 1;           // transformer depth, {1,2}
    int heads = 1;            // attention heads, {1,2}
    int max_len = 50;
    MemoryVariant memory_variant = MemoryVariant::ResM;
    LossVariant loss_variant = LossVariant::Mince;
    ScoreSource score_source = ScoreSource::Context;

    void validate() const {
        if (d <= 0) throw std::invalid_argument("model.d: must be positive");
        if (b <= 0) throw std::invalid_argument("model.b: must be positive");
        if (q < 1) throw std::invalid_argument("model.q: must be >= 1");
        if (steps < 1) throw std::invalid_argument("model.steps: must be >= 1");
        if (!(tau > 0.0)) throw std::invalid_argument("model.tau: must be positive");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
            throw std::invalid_argument("model.dropout_rate: must be in [0,1)");
        if (layers < 1) throw std::invalid_argument("model.layers: must be >= 1");
        if (heads < 1) throw std::invalid_argument("model.heads: must be >= 1");
        if (d % heads != 0) throw std::invalid_argument("model.heads: must divide d");
        if (max_len < 1) throw std::invalid_argument("model.max_len: must be >= 1");
    }

    // Hyperparameter grids from the experimental protocol; enforced only
    // under --strict-grids.
    void validate_grids() const {
        auto in = [](auto v, std::initializer_list<decltype(v)> set) {
            for (auto s : set)
                if (v == s) return true;
            return false;
        };
        if (!in(b, {5, 10, 32, 64, 128, 256})) throw std::invalid_argument("model.b: not in grid {5,10,32,64,128,256}");
        if (!in(steps, {1, 2, 3, 4})) throw std::invalid_argument("model.steps: not in grid {1,2,3,4}");
        if (!in(q, {1, 2, 3, 4})) throw std::invalid_argument("model.q: not in grid {1,2,3,4}");
        if (!in(tau, {0.1, 0.3, 0.6, 1.0, 3.0})) throw std::invalid_argument("model.tau: not in grid {0.1,0.3,0.6,1,3}");
        if (!in(layers, {1, 2})) throw std::invalid_argument("model.layers: not in grid {1,2}");
        if (!in(heads, {1, 2})) throw std::invalid_argument("model.heads: not in grid {1,2}");
        if (max_len != 50) throw std::invalid_argument("model.max_len: protocol fixes 50");
    }
};

struct TrainConfig {
    double lr = 0.001;
    double l2_weight = 0.0;
    int epochs = 50;
    uint64_t seed = 42;
    int batch_size = 256;
    int patience = 10;  // early stop on validation NDCG@10

    void validate() const {
        if (!(lr > 0.0)) throw std::invalid_argument("train.lr: must be positive");
        if (l2_weight < 0.0) throw std::invalid_argument("train.l2_weight: must be >= 0");
        if (epochs < 0) throw std::invalid_argument("train.epochs: must be >= 0");
        if (batch_size < 1) throw std::invalid_argument("train.batch_size: must be >= 1");
        if (patience < 1) throw std::invalid_argument("train.patience: must be >= 1");
    }

    void validate_grids() const {
        auto in = [](double v, std::initializer_list<double> set) {
            for (double s : set)
                if (v == s) return true;
            return false;
        };
        if (!in(lr, {0.0003, 0.001, 0.003, 0.01, 0.03}))
            throw std::invalid_argument("train.lr: not in grid {0.0003,0.001,0.003,0.01,0.03}");
        if (!in(l2_weight, {0.0, 0.1, 0.01, 0.001, 0.0001, 0.00001}))
            throw std::invalid_argument("train.l2_weight: not in grid {0,0.1,0.01,0.001,0.0001,0.00001}");
        if (batch_size != 256) throw std::invalid_argument("train.batch_size: protocol fixes 256");
    }
};

}  // namespace mminforec
