// Command-line front end: preprocess, train, evaluate, gradcheck, ablate,
// synth, inspect. Every run writes its artifacts under --out with the
// resolved configuration echoed to config.resolved.json.

#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mminforec/checkpoint.hpp"
#include "mminforec/dataset_io.hpp"
#include "mminforec/eval.hpp"
#include "mminforec/pipeline_check.hpp"
#include "mminforec/run_config.hpp"
#include "mminforec/trainer.hpp"

namespace fs = std::filesystem;
using namespace mminforec;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// --out wins, then MMINFOREC_OUT, else error.
std::string resolve_out_dir(const std::string& flag_value) {
    if (!flag_value.empty()) return flag_value;
    const char* env = std::getenv("MMINFOREC_OUT");
    if (env != nullptr && *env != '\0') return env;
    throw std::invalid_argument("no output directory: pass --out or set MMINFOREC_OUT");
}

void write_resolved_config(const std::string& out_dir, const RunConfig& rc) {
    fs::create_directories(out_dir);
    std::ofstream f(fs::path(out_dir) / "config.resolved.json");
    if (!f) throw std::runtime_error("cannot write config.resolved.json under " + out_dir);
    f << run_config_to_json(rc).dump(2) << "\n";
}

void write_metrics(const std::string& out_dir, const MetricsRecord& rec, const std::string& stem) {
    nlohmann::json j;
    j["split"] = rec.split;
    j["hr5"] = rec.hr5;
    j["ndcg5"] = rec.ndcg5;
    j["hr10"] = rec.hr10;
    j["ndcg10"] = rec.ndcg10;
    j["n_users"] = rec.n_users;
    std::ofstream f(fs::path(out_dir) / (stem + ".json"));
    f << j.dump(2) << "\n";
    std::ofstream ranks(fs::path(out_dir) / (stem + "_ranks.csv"));
    ranks << "user_index,rank\n";
    for (size_t u = 0; u < rec.ranks.size(); ++u) ranks << u << "," << rec.ranks[u] << "\n";
}

void write_memory_norms(const std::string& out_dir, const ModelParams& params) {
    std::ofstream f(fs::path(out_dir) / "memory_norms.csv");
    f << "slot,l2_norm\n";
    auto norms = memory_slot_norms(params);
    for (size_t r = 0; r < norms.size(); ++r) f << r << "," << fmt_double(norms[r]) << "\n";
}

// Flag overrides land on top of config-file values.
struct Overrides {
    std::optional<int> d, b, q, steps, layers, heads, max_len, epochs, batch_size, patience;
    std::optional<double> tau, dropout_rate, lr, l2_weight;
    std::optional<uint64_t> seed;
    std::optional<std::string> memory_variant, loss_variant, score_source;
    bool strict_grids = false;

    void apply(RunConfig& rc) const {
        if (d) rc.model.d = *d;
        if (b) rc.model.b = *b;
        if (q) rc.model.q = *q;
        if (steps) rc.model.steps = *steps;
        if (layers) rc.model.layers = *layers;
        if (heads) rc.model.heads = *heads;
        if (max_len) rc.model.max_len = *max_len;
        if (tau) rc.model.tau = *tau;
        if (dropout_rate) rc.model.dropout_rate = *dropout_rate;
        if (memory_variant) rc.model.memory_variant = memory_variant_from(*memory_variant);
        if (loss_variant) rc.model.loss_variant = loss_variant_from(*loss_variant);
        if (score_source) rc.model.score_source = score_source_from(*score_source);
        if (lr) rc.train.lr = *lr;
        if (l2_weight) rc.train.l2_weight = *l2_weight;
        if (epochs) rc.train.epochs = *epochs;
        if (batch_size) rc.train.batch_size = *batch_size;
        if (patience) rc.train.patience = *patience;
        if (seed) rc.train.seed = *seed;
        if (strict_grids) rc.strict_grids = true;
    }
};

void add_override_flags(CLI::App* cmd, Overrides& ov) {
    cmd->add_option("--d", ov.d, "embedding size");
    cmd->add_option("--b", ov.b, "memory slots");
    cmd->add_option("--q", ov.q, "dropout positive instances");
    cmd->add_option("--steps", ov.steps, "prediction steps");
    cmd->add_option("--layers", ov.layers, "transformer layers");
    cmd->add_option("--heads", ov.heads, "attention heads");
    cmd->add_option("--max-len", ov.max_len, "maximum sequence length");
    cmd->add_option("--tau", ov.tau, "temperature");
    cmd->add_option("--dropout", ov.dropout_rate, "dropout rate");
    cmd->add_option("--memory", ov.memory_variant, "memory variant: none|fc-m|res-m");
    cmd->add_option("--loss", ov.loss_variant, "objective: nce|mince|bpr");
    cmd->add_option("--score-source", ov.score_source, "ranking query: context|memory");
    cmd->add_option("--lr", ov.lr, "learning rate");
    cmd->add_option("--l2", ov.l2_weight, "l2 regularisation weight");
    cmd->add_option("--epochs", ov.epochs, "training epochs");
    cmd->add_option("--batch-size", ov.batch_size, "batch size");
    cmd->add_option("--patience", ov.patience, "early-stop patience (epochs)");
    cmd->add_option("--seed", ov.seed, "master seed");
    cmd->add_flag("--strict-grids", ov.strict_grids, "enforce the protocol hyperparameter grids");
}

RunConfig make_config(const std::string& config_path, const Overrides& ov) {
    RunConfig rc;
    if (!config_path.empty()) rc = load_run_config(config_path);
    ov.apply(rc);
    rc.validate();
    return rc;
}

void write_train_log(const std::string& out_dir, const std::vector<EpochRecord>& log) {
    std::ofstream f(fs::path(out_dir) / "log.csv");
    f << "epoch,loss,hr5,ndcg5,hr10,ndcg10\n";
    for (const auto& r : log)
        f << r.epoch << "," << fmt_double(r.loss) << "," << fmt_double(r.hr5) << ","
          << fmt_double(r.ndcg5) << "," << fmt_double(r.hr10) << "," << fmt_double(r.ndcg10) << "\n";
}

int cmd_synth(int users, int items, int attrs, uint64_t seed, const std::string& out_flag) {
    std::string out = resolve_out_dir(out_flag);
    fs::create_directories(out);
    SyntheticData syn = generate_synthetic(users, items, attrs, seed);

    std::ofstream inter(fs::path(out) / "interactions.tsv");
    for (const auto& r : syn.records.interactions)
        inter << r.user << '\t' << r.item << '\t' << r.timestamp << '\n';
    std::ofstream attrf(fs::path(out) / "attributes.tsv");
    for (const auto& [item, set] : syn.records.item_attrs) {
        attrf << item;
        for (const auto& a : set) attrf << '\t' << a;
        attrf << '\n';
    }
    std::ofstream trans(fs::path(out) / "transition.csv");
    for (const auto& row : syn.transition) {
        for (size_t j = 0; j < row.size(); ++j) trans << (j ? "," : "") << fmt_double(row[j]);
        trans << '\n';
    }
    std::ofstream clusters(fs::path(out) / "clusters.csv");
    clusters << "item,cluster\n";
    for (size_t i = 0; i < syn.cluster.size(); ++i) clusters << "i" << i << "," << syn.cluster[i] << "\n";

    std::printf("synth: %d users, %d items, %d clusters -> %s\n", users, items, attrs, out.c_str());
    return kExitOk;
}

int cmd_preprocess(const std::string& interactions, const std::string& attributes,
                   const std::string& out_flag, const std::string& verify_counts) {
    std::string out = resolve_out_dir(out_flag);
    RawRecords rec = parse(interactions, attributes);
    for (size_t i = 0; i < rec.errors.size() && i < 10; ++i)
        std::fprintf(stderr, "parse: line %d skipped (%s)\n", rec.errors[i].line,
                     rec.errors[i].message.c_str());
    Dataset ds = preprocess(rec);
    split_leave_one_out(ds);
    save_dataset(out, ds);
    DatasetStats st = ds.stats();
    std::printf("preprocess: %d users, %d items, %" PRId64 " actions, %d attributes -> %s\n", st.users,
                st.items, st.actions, st.attrs, out.c_str());

    if (!verify_counts.empty()) {
        int u = 0, i = 0;
        int64_t a = 0;
        if (std::sscanf(verify_counts.c_str(), "%d,%d,%" SCNd64, &u, &i, &a) != 3)
            throw std::invalid_argument("--verify-counts expects users,items,actions");
        if (st.users != u || st.items != i || st.actions != a) {
            std::fprintf(stderr,
                         "preprocess: count mismatch: got %d users / %d items / %" PRId64
                         " actions, expected %d / %d / %" PRId64
                         ".\nThis usually means a different dataset release or export; verify the "
                         "dataset version.\n",
                         st.users, st.items, st.actions, u, i, a);
            return kExitRuntime;
        }
        std::printf("preprocess: counts verified (%d users, %d items, %" PRId64 " actions)\n", u, i, a);
    }
    return kExitOk;
}

int cmd_train(const std::string& config_path, const Overrides& ov, const std::string& data_dir_flag,
              const std::string& out_flag) {
    RunConfig rc = make_config(config_path, ov);
    if (!data_dir_flag.empty()) rc.data_dir = data_dir_flag;
    rc.out_dir = resolve_out_dir(!out_flag.empty() ? out_flag : rc.out_dir);
    if (rc.data_dir.empty()) throw std::invalid_argument("train: --data directory required");
    write_resolved_config(rc.out_dir, rc);

    Dataset ds = load_dataset(rc.data_dir);
    ModelParams params = ModelParams::init(rc.model, ds.num_items(), ds.num_attrs(), rc.train.seed);
    TrainResult res = train(params, ds, rc.train, rc.model);

    write_train_log(rc.out_dir, res.log);
    save_checkpoint((fs::path(rc.out_dir) / "checkpoint").string(), res.best_params);
    write_memory_norms(rc.out_dir, res.best_params);

    MetricsRecord valid = evaluate_full_ranking(res.best_params, rc.model, ds, EvalSplit::Valid);
    MetricsRecord test = evaluate_full_ranking(res.best_params, rc.model, ds, EvalSplit::Test);
    write_metrics(rc.out_dir, valid, "metrics_valid");
    write_metrics(rc.out_dir, test, "metrics_test");

    if (res.aborted_non_finite) {
        std::fprintf(stderr, "train: aborted (%s); kept the last good checkpoint\n",
                     res.abort_reason.c_str());
        return kExitRuntime;
    }
    std::printf("train: %zu epochs logged, best epoch %d (valid NDCG@10 %s); test HR@5 %s NDCG@10 %s\n",
                res.log.size(), res.best_epoch, fmt_double(res.best_ndcg10).c_str(),
                fmt_double(test.hr5).c_str(), fmt_double(test.ndcg10).c_str());
    return kExitOk;
}

int cmd_evaluate(const std::string& config_path, const Overrides& ov, const std::string& checkpoint_dir,
                 const std::string& data_dir, const std::string& split, const std::string& out_flag) {
    RunConfig rc = make_config(config_path, ov);
    if (!data_dir.empty()) rc.data_dir = data_dir;
    rc.out_dir = resolve_out_dir(!out_flag.empty() ? out_flag : rc.out_dir);
    if (rc.data_dir.empty()) throw std::invalid_argument("evaluate: --data directory required");
    if (split != "valid" && split != "test")
        throw std::invalid_argument("evaluate: --split must be valid or test");
    write_resolved_config(rc.out_dir, rc);

    Dataset ds = load_dataset(rc.data_dir);
    ModelParams params = load_checkpoint(checkpoint_dir);
    rc.model.d = params.d;
    rc.model.b = params.memory_slots;
    rc.model.max_len = params.max_len;
    rc.model.layers = static_cast<int>(params.enc_blocks.size());

    MetricsRecord rec = evaluate_full_ranking(params, rc.model, ds,
                                              split == "valid" ? EvalSplit::Valid : EvalSplit::Test);
    write_metrics(rc.out_dir, rec, "metrics_" + split);
    std::printf("evaluate[%s]: HR@5 %s NDCG@5 %s HR@10 %s NDCG@10 %s (%d users)\n", split.c_str(),
                fmt_double(rec.hr5).c_str(), fmt_double(rec.ndcg5).c_str(), fmt_double(rec.hr10).c_str(),
                fmt_double(rec.ndcg10).c_str(), rec.n_users);
    return kExitOk;
}

int cmd_gradcheck(const PipelineCheckConfig& pc, const std::string& out_flag) {
    PipelineCheckReport report = run_pipeline_gradcheck(pc);
    for (auto& [group, err] : report.group_errors)
        std::printf("%-10s max relative error %.3e %s\n", group.c_str(), err,
                    err < 1e-4 ? "ok" : "FAIL");
    std::printf("gradcheck: worst %.3e (%s)\n", report.worst, report.pass() ? "PASS" : "FAIL");
    if (!out_flag.empty()) {
        std::string out = resolve_out_dir(out_flag);
        fs::create_directories(out);
        nlohmann::json j;
        for (auto& [group, err] : report.group_errors) j["groups"][group] = err;
        j["worst"] = report.worst;
        j["pass"] = report.pass();
        j["point_seed"] = report.point_seed;
        std::ofstream f(fs::path(out) / "gradcheck.json");
        f << j.dump(2) << "\n";
    }
    return report.pass() ? kExitOk : kExitRuntime;
}

int cmd_ablate(const std::string& config_path, const Overrides& ov, const std::string& data_dir,
               const std::string& out_flag, const std::string& variants_csv,
               const std::string& seeds_csv) {
    RunConfig rc = make_config(config_path, ov);
    if (!data_dir.empty()) rc.data_dir = data_dir;
    rc.out_dir = resolve_out_dir(!out_flag.empty() ? out_flag : rc.out_dir);
    if (rc.data_dir.empty()) throw std::invalid_argument("ablate: --data directory required");

    std::vector<std::string> variants;
    {
        std::stringstream ss(variants_csv);
        std::string tok;
        while (std::getline(ss, tok, ','))
            if (!tok.empty()) variants.push_back(tok);
    }
    std::vector<uint64_t> seeds;
    {
        std::stringstream ss(seeds_csv);
        std::string tok;
        while (std::getline(ss, tok, ','))
            if (!tok.empty()) seeds.push_back(std::stoull(tok));
    }
    if (variants.empty()) throw std::invalid_argument("ablate: --variants required (comma separated)");
    if (seeds.empty()) seeds = {rc.train.seed};
    for (const auto& v : variants) resolve_variant(v);  // fail fast on unknown names

    write_resolved_config(rc.out_dir, rc);
    Dataset ds = load_dataset(rc.data_dir);
    auto rows = ablate(variants, seeds, ds, rc.train, rc.model);

    std::ofstream f(fs::path(rc.out_dir) / "ablation.csv");
    f << "variant,seed,valid_hr5,valid_ndcg5,valid_hr10,valid_ndcg10,test_hr5,test_ndcg5,test_hr10,"
         "test_ndcg10,best_epoch\n";
    for (const auto& r : rows) {
        f << r.variant << "," << r.seed << "," << fmt_double(r.valid_hr5) << ","
          << fmt_double(r.valid_ndcg5) << "," << fmt_double(r.valid_hr10) << ","
          << fmt_double(r.valid_ndcg10) << "," << fmt_double(r.test_hr5) << ","
          << fmt_double(r.test_ndcg5) << "," << fmt_double(r.test_hr10) << ","
          << fmt_double(r.test_ndcg10) << "," << r.best_epoch << "\n";
        std::printf("ablate[%s seed %llu]: test HR@5 %s NDCG@10 %s\n", r.variant.c_str(),
                    static_cast<unsigned long long>(r.seed), fmt_double(r.test_hr5).c_str(),
                    fmt_double(r.test_ndcg10).c_str());
    }
    return kExitOk;
}

int cmd_inspect(const std::string& checkpoint_dir, const std::string& out_flag) {
    std::string out = resolve_out_dir(out_flag);
    fs::create_directories(out);
    ModelParams params = load_checkpoint(checkpoint_dir);
    write_memory_norms(out, params);
    auto norms = memory_slot_norms(params);
    std::printf("inspect: %d memory slots (d=%d) -> %s/memory_norms.csv\n", params.memory_slots,
                params.d, out.c_str());
    for (size_t r = 0; r < norms.size(); ++r)
        std::printf("  slot %2zu |M_r| = %s\n", r, fmt_double(norms[r]).c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MMInfoRec training and evaluation laboratory"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic Markov corpus");
    int sy_users = 1000, sy_items = 200, sy_attrs = 20;
    uint64_t sy_seed = 7;
    std::string sy_out;
    synth->add_option("--users", sy_users, "number of users (>= 100)");
    synth->add_option("--items", sy_items, "number of items (>= 20)");
    synth->add_option("--attrs", sy_attrs, "number of attribute clusters");
    synth->add_option("--seed", sy_seed, "generator seed");
    synth->add_option("--out", sy_out, "output directory");

    // preprocess
    auto* prep = app.add_subcommand("preprocess", "5-core filter, split and persist a dataset");
    std::string pp_inter, pp_attrs, pp_out, pp_verify;
    prep->add_option("--interactions", pp_inter, "interactions TSV (user<TAB>item<TAB>timestamp)")
        ->required();
    prep->add_option("--attributes", pp_attrs, "attributes TSV (item<TAB>attr...)");
    prep->add_option("--out", pp_out, "output dataset directory");
    prep->add_option("--verify-counts", pp_verify, "expected users,items,actions (fails on mismatch)");

    // train
    auto* tr = app.add_subcommand("train", "train a model on a preprocessed dataset");
    std::string tr_config, tr_data, tr_out;
    Overrides tr_ov;
    tr->add_option("--config", tr_config, "JSON config file");
    tr->add_option("--data", tr_data, "preprocessed dataset directory");
    tr->add_option("--out", tr_out, "run directory");
    add_override_flags(tr, tr_ov);

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "rank the full item set with a checkpoint");
    std::string ev_config, ev_ckpt, ev_data, ev_split = "test", ev_out;
    Overrides ev_ov;
    ev->add_option("--config", ev_config, "JSON config file");
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint directory")->required();
    ev->add_option("--data", ev_data, "preprocessed dataset directory");
    ev->add_option("--split", ev_split, "valid|test");
    ev->add_option("--out", ev_out, "output directory");
    add_override_flags(ev, ev_ov);

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "verify pipeline gradients against central differences");
    PipelineCheckConfig pc;
    std::string gc_out;
    gc->add_option("--dims", pc.d, "embedding size");
    gc->add_option("--b", pc.b, "memory slots");
    gc->add_option("--q", pc.q, "positive instances");
    gc->add_option("--steps", pc.steps, "prediction steps");
    gc->add_option("--batch", pc.batch, "sequences in the probe batch");
    gc->add_option("--seq-len", pc.seq_len, "items per probe sequence");
    gc->add_option("--tau", pc.tau, "temperature");
    gc->add_option("--seed", pc.seed, "harness seed");
    gc->add_option("--step", pc.step, "finite-difference step");
    gc->add_option("--out", gc_out, "optional output directory for gradcheck.json");

    // ablate
    auto* ab = app.add_subcommand("ablate", "train an ablation matrix");
    std::string ab_config, ab_data, ab_out, ab_variants, ab_seeds;
    Overrides ab_ov;
    ab->add_option("--config", ab_config, "JSON config file");
    ab->add_option("--data", ab_data, "preprocessed dataset directory");
    ab->add_option("--out", ab_out, "output directory");
    ab->add_option("--variants", ab_variants,
                   "comma list: cpc,+g_m,+mince,full,none,fc-m,res-m,nce,bpr,mince")
        ->required();
    ab->add_option("--seeds", ab_seeds, "comma list of seeds (default: config seed)");
    add_override_flags(ab, ab_ov);

    // inspect
    auto* in = app.add_subcommand("inspect", "dump memory slot norms from a checkpoint");
    std::string in_ckpt, in_out;
    in->add_option("--checkpoint", in_ckpt, "checkpoint directory")->required();
    in->add_option("--out", in_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (*synth) return cmd_synth(sy_users, sy_items, sy_attrs, sy_seed, sy_out);
        if (*prep) return cmd_preprocess(pp_inter, pp_attrs, pp_out, pp_verify);
        if (*tr) return cmd_train(tr_config, tr_ov, tr_data, tr_out);
        if (*ev) return cmd_evaluate(ev_config, ev_ov, ev_ckpt, ev_data, ev_split, ev_out);
        if (*gc) return cmd_gradcheck(pc, gc_out);
        if (*ab) return cmd_ablate(ab_config, ab_ov, ab_data, ab_out, ab_variants, ab_seeds);
        if (*in) return cmd_inspect(in_ckpt, in_out);
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitValidation;
}
