#pragma once

#include <fstream>
#include <set>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "mminforec/config.hpp"

namespace mminforec {

// Union of model + training options plus paths; one JSON document. Unknown
// keys are rejected by field path; CLI flags override file values.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    std::string data_dir;
    std::string out_dir;
    bool strict_grids = false;

    void validate() const {
        model.validate();
        train.validate();
        if (strict_grids) {
            model.validate_grids();
            train.validate_grids();
        }
    }
};

namespace detail {

template <typename T>
T get_field(const nlohmann::json& j, const std::string& key, const T& fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw std::invalid_argument("config field '" + key + "': wrong type");
    }
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    static const std::set<std::string> known = {
        "d", "b", "q", "steps", "tau", "dropout_rate", "layers", "heads", "max_len",
        "memory_variant", "loss_variant", "score_source",
        "lr", "l2_weight", "epochs", "seed", "batch_size", "patience",
        "data_dir", "out_dir", "strict_grids"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw std::invalid_argument("config: unknown key '" + it.key() + "'");

    RunConfig rc;
    rc.model.d = detail::get_field(j, "d", rc.model.d);
    rc.model.b = detail::get_field(j, "b", rc.model.b);
    rc.model.q = detail::get_field(j, "q", rc.model.q);
    rc.model.steps = detail::get_field(j, "steps", rc.model.steps);
    rc.model.tau = detail::get_field(j, "tau", rc.model.tau);
    rc.model.dropout_rate = detail::get_field(j, "dropout_rate", rc.model.dropout_rate);
    rc.model.layers = detail::get_field(j, "layers", rc.model.layers);
    rc.model.heads = detail::get_field(j, "heads", rc.model.heads);
    rc.model.max_len = detail::get_field(j, "max_len", rc.model.max_len);
    if (j.contains("memory_variant"))
        rc.model.memory_variant = memory_variant_from(j.at("memory_variant").get<std::string>());
    if (j.contains("loss_variant"))
        rc.model.loss_variant = loss_variant_from(j.at("loss_variant").get<std::string>());
    if (j.contains("score_source"))
        rc.model.score_source = score_source_from(j.at("score_source").get<std::string>());
    rc.train.lr = detail::get_field(j, "lr", rc.train.lr);
    rc.train.l2_weight = detail::get_field(j, "l2_weight", rc.train.l2_weight);
    rc.train.epochs = detail::get_field(j, "epochs", rc.train.epochs);
    rc.train.seed = detail::get_field(j, "seed", rc.train.seed);
    rc.train.batch_size = detail::get_field(j, "batch_size", rc.train.batch_size);
    rc.train.patience = detail::get_field(j, "patience", rc.train.patience);
    rc.data_dir = detail::get_field(j, "data_dir", rc.data_dir);
    rc.out_dir = detail::get_field(j, "out_dir", rc.out_dir);
    rc.strict_grids = detail::get_field(j, "strict_grids", rc.strict_grids);
    return rc;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("config: invalid JSON in " + path + ": " + e.what());
    }
    return run_config_from_json(j);
}

inline nlohmann::json run_config_to_json(const RunConfig& rc) {
    nlohmann::json j;
    j["d"] = rc.model.d;
    j["b"] = rc.model.b;
    j["q"] = rc.model.q;
    j["steps"] = rc.model.steps;
    j["tau"] = rc.model.tau;
    j["dropout_rate"] = rc.model.dropout_rate;
    j["layers"] = rc.model.layers;
    j["heads"] = rc.model.heads;
    j["max_len"] = rc.model.max_len;
    j["memory_variant"] = to_string(rc.model.memory_variant);
    j["loss_variant"] = to_string(rc.model.loss_variant);
    j["score_source"] = to_string(rc.model.score_source);
    j["lr"] = rc.train.lr;
    j["l2_weight"] = rc.train.l2_weight;
    j["epochs"] = rc.train.epochs;
    j["seed"] = rc.train.seed;
    j["batch_size"] = rc.train.batch_size;
    j["patience"] = rc.train.patience;
    j["data_dir"] = rc.data_dir;
    j["out_dir"] = rc.out_dir;
    j["strict_grids"] = rc.strict_grids;
    return j;
}

}  // namespace mminforec
