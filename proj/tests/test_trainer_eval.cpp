#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <random>

#include "mminforec/adam.hpp"
#include "mminforec/checkpoint.hpp"
#include "mminforec/eval.hpp"
#include "mminforec/run_config.hpp"
#include "mminforec/trainer.hpp"

using namespace mminforec;

namespace {

ModelConfig tiny_model() {
    ModelConfig cfg;
    cfg.d = 8;
    cfg.b = 4;
    cfg.q = 2;
    cfg.steps = 1;
    cfg.tau = 0.6;
    cfg.dropout_rate = 0.5;
    cfg.layers = 1;
    cfg.heads = 1;
    cfg.max_len = 30;
    return cfg;
}

Dataset tiny_dataset(uint64_t seed = 5) {
    SyntheticData syn = generate_synthetic(120, 24, 4, seed);
    Dataset ds = preprocess(syn.records);
    split_leave_one_out(ds);
    return ds;
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        static int counter = 0;
        path = std::filesystem::temp_directory_path() /
               ("mminforec_tr_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

// --- adam -----------------------------------------------------------------

TEST_CASE("adam: first-step magnitude matches the bias-corrected recurrence") {
    ModelConfig cfg = tiny_model();
    ModelParams params = ModelParams::init(cfg, 4, 2, 1);
    params.zero_grads();
    double before = params.memory.data[0];
    params.memory.grad[0] = 1.0;
    AdamState st = AdamState::init(params);
    adam_step(params, st, 0.01, 0.0);
    double update = before - params.memory.data[0];
    REQUIRE(update == Catch::Approx(0.01 * 1.0 / (1.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("adam: zero gradient is a fixpoint; decay shrinks parameters") {
    ModelConfig cfg = tiny_model();
    ModelParams params = ModelParams::init(cfg, 4, 2, 2);
    params.zero_grads();
    std::vector<double> before = params.memory.data;
    AdamState st = AdamState::init(params);
    adam_step(params, st, 0.01, 0.0);
    REQUIRE(params.memory.data == before);

    adam_step(params, st, 0.01, 0.1);
    for (size_t i = 0; i < before.size(); ++i)
        if (before[i] != 0.0) REQUIRE(std::fabs(params.memory.data[i]) < std::fabs(before[i]));
}

TEST_CASE("adam: non-finite gradients abort naming the parameter") {
    ModelConfig cfg = tiny_model();
    ModelParams params = ModelParams::init(cfg, 4, 2, 3);
    params.zero_grads();
    params.gru.wz.grad[0] = std::numeric_limits<double>::quiet_NaN();
    AdamState st = AdamState::init(params);
    REQUIRE_THROWS_WITH(adam_step(params, st, 0.01, 0.0), Catch::Matchers::ContainsSubstring("ap.wz"));
}

TEST_CASE("adam: padding row pinned at zero across steps") {
    ModelConfig cfg = tiny_model();
    ModelParams params = ModelParams::init(cfg, 4, 2, 4);
    AdamState st = AdamState::init(params);
    std::mt19937_64 rng(9);
    std::normal_distribution<double> dist;
    for (int step = 0; step < 100; ++step) {
        for (auto& [name, t] : params.named()) {
            t->ensure_grad();
            for (double& g : t->grad) g = dist(rng);
        }
        adam_step(params, st, 0.01, 0.001);
    }
    for (int j = 0; j < cfg.d; ++j) {
        REQUIRE(params.emb_items.at(0, j) == 0.0);
        REQUIRE(params.emb_attrs.at(0, j) == 0.0);
    }
}

// --- eval -----------------------------------------------------------------

TEST_CASE("rank_of_target counting and tie rules") {
    double inf = std::numeric_limits<double>::infinity();
    REQUIRE(rank_of_target({-inf, 0.9, 0.5, 0.7}, 3) == 2);
    REQUIRE(rank_of_target({-inf, 0.9, 0.5, 0.7}, 1) == 1);
    // all equal: the largest id ranks last, the smallest first
    REQUIRE(rank_of_target({-inf, 1.0, 1.0, 1.0}, 3) == 3);
    REQUIRE(rank_of_target({-inf, 1.0, 1.0, 1.0}, 1) == 1);
    REQUIRE_THROWS_AS(rank_of_target({-inf, 1.0}, 0), std::invalid_argument);
}

TEST_CASE("rank_of_target matches the full-sort oracle") {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> dist;
    for (int trial = 0; trial < 30; ++trial) {
        int n_items = 200;
        std::vector<double> scores(static_cast<size_t>(n_items) + 1);
        scores[0] = -std::numeric_limits<double>::infinity();
        for (int i = 1; i <= n_items; ++i)
            scores[static_cast<size_t>(i)] = trial % 3 == 0 ? std::round(dist(rng) * 3) : dist(rng);
        // oracle: stable sort of (score desc, id asc)
        std::vector<int> ids(static_cast<size_t>(n_items));
        for (int i = 1; i <= n_items; ++i) ids[static_cast<size_t>(i - 1)] = i;
        std::sort(ids.begin(), ids.end(), [&](int a, int b) {
            double sa = scores[static_cast<size_t>(a)], sb = scores[static_cast<size_t>(b)];
            return sa != sb ? sa > sb : a < b;
        });
        int target = 1 + static_cast<int>(rng() % static_cast<uint64_t>(n_items));
        int oracle_rank = 1 + static_cast<int>(std::find(ids.begin(), ids.end(), target) - ids.begin());
        REQUIRE(rank_of_target(scores, target) == oracle_rank);
    }
}

TEST_CASE("hr and ndcg formulas") {
    REQUIRE(hr_at_k({1}, 5) == 1.0);
    REQUIRE(hr_at_k({6}, 5) == 0.0);
    REQUIRE(hr_at_k({1, 7}, 5) == 0.5);
    REQUIRE(ndcg_at_k({1}, 5) == 1.0);
    REQUIRE(ndcg_at_k({3}, 5) == Catch::Approx(0.5));  // 1/log2(4)
    REQUIRE(ndcg_at_k({11}, 10) == 0.0);
    REQUIRE_THROWS_AS(hr_at_k({}, 5), std::invalid_argument);
    REQUIRE_THROWS_AS(ndcg_at_k({}, 5), std::invalid_argument);
}

TEST_CASE("evaluation is deterministic, ordered, and pure") {
    ModelConfig cfg = tiny_model();
    Dataset ds = tiny_dataset();
    ModelParams params = ModelParams::init(cfg, ds.num_items(), ds.num_attrs(), 77);

    uint64_t before = params.checksum();
    MetricsRecord a = evaluate_full_ranking(params, cfg, ds, EvalSplit::Valid);
    MetricsRecord b = evaluate_full_ranking(params, cfg, ds, EvalSplit::Valid);
    REQUIRE(params.checksum() == before);  // evaluation never mutates parameters
    REQUIRE(a.ranks == b.ranks);           // catalog encoded twice -> identical metrics

    REQUIRE(a.hr5 >= 0.0);
    REQUIRE(a.ndcg5 <= a.hr5);
    REQUIRE(a.ndcg10 <= a.hr10);
    REQUIRE(a.hr5 <= a.hr10);
    REQUIRE(a.ndcg5 <= a.ndcg10);
    REQUIRE(a.hr10 <= 1.0);

    MetricsRecord t = evaluate_full_ranking(params, cfg, ds, EvalSplit::Test);
    REQUIRE(t.n_users == ds.num_users());
}

// --- training loop -----------------------------------------------------

TEST_CASE("untrained model ranks near the random baseline") {
    SyntheticData syn = generate_synthetic(300, 40, 8, 17);
    Dataset ds = preprocess(syn.records);
    split_leave_one_out(ds);
    ModelConfig cfg = tiny_model();
    ModelParams params = ModelParams::init(cfg, ds.num_items(), ds.num_attrs(), 123);
    MetricsRecord rec = evaluate_full_ranking(params, cfg, ds, EvalSplit::Valid);
    double random_expect = 5.0 / ds.num_items();
    REQUIRE(rec.hr5 <= 3.0 * random_expect);
    REQUIRE(rec.hr5 >= random_expect / 3.0);
}

TEST_CASE("training is bit-reproducible and reduces the loss") {
    ModelConfig cfg = tiny_model();
    Dataset ds = tiny_dataset();
    TrainConfig tc;
    tc.lr = 0.003;
    tc.epochs = 3;
    tc.seed = 11;
    tc.batch_size = 64;

    auto run = [&]() {
        ModelParams params = ModelParams::init(cfg, ds.num_items(), ds.num_attrs(), tc.seed);
        return train(params, ds, tc, cfg);
    };
    TrainResult r1 = run();
    TrainResult r2 = run();
    REQUIRE(r1.log.size() == r2.log.size());
    for (size_t e = 0; e < r1.log.size(); ++e) {
        REQUIRE(r1.log[e].loss == r2.log[e].loss);  // bitwise
        REQUIRE(r1.log[e].ndcg10 == r2.log[e].ndcg10);
    }
    auto n1 = r1.best_params.named();
    auto n2 = r2.best_params.named();
    for (size_t k = 0; k < n1.size(); ++k) REQUIRE(n1[k].second->data == n2[k].second->data);

    REQUIRE(r1.log.back().loss < r1.log.front().loss);
    REQUIRE(!r1.aborted_non_finite);
}

TEST_CASE("zero epochs keeps the initialization") {
    ModelConfig cfg = tiny_model();
    Dataset ds = tiny_dataset();
    TrainConfig tc;
    tc.epochs = 0;
    ModelParams params = ModelParams::init(cfg, ds.num_items(), ds.num_attrs(), 3);
    std::vector<double> init_mem = params.memory.data;
    TrainResult res = train(params, ds, tc, cfg);
    REQUIRE(res.log.empty());
    REQUIRE(res.best_epoch == 0);
    REQUIRE(res.best_params.memory.data == init_mem);
}

TEST_CASE("padding embedding row survives real training untouched") {
    ModelConfig cfg = tiny_model();
    Dataset ds = tiny_dataset();
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 64;
    ModelParams params = ModelParams::init(cfg, ds.num_items(), ds.num_attrs(), 13);
    train(params, ds, tc, cfg);
    for (int j = 0; j < cfg.d; ++j) REQUIRE(params.emb_items.at(0, j) == 0.0);
}

// --- ablation -----------------------------------------------------------

TEST_CASE("ablation variants resolve to the documented configurations") {
    AblationVariant cpc = resolve_variant("cpc");
    REQUIRE(cpc.memory == MemoryVariant::None);
    REQUIRE(cpc.loss == LossVariant::Nce);
    REQUIRE(cpc.q_override.value() == 1);

    AblationVariant full = resolve_variant("full");
    REQUIRE(full.memory == MemoryVariant::ResM);
    REQUIRE(full.loss == LossVariant::Mince);

    REQUIRE(resolve_variant("fc-m").memory == MemoryVariant::FcM);
    REQUIRE(resolve_variant("bpr").loss == LossVariant::Bpr);
    REQUIRE_THROWS_WITH(resolve_variant("bogus"), Catch::Matchers::ContainsSubstring("bogus"));
}

TEST_CASE("ablation matrix runs one cell per variant-seed pair") {
    ModelConfig cfg = tiny_model();
    Dataset ds = tiny_dataset();
    TrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 64;
    auto rows = ablate({"cpc", "full"}, {1, 2}, ds, tc, cfg);
    REQUIRE(rows.size() == 4);
    REQUIRE(rows[0].variant == "cpc");
    REQUIRE(rows[0].seed == 1);
    REQUIRE(rows[3].variant == "full");
    REQUIRE(rows[3].seed == 2);
}

TEST_CASE("memory slot norms have one entry per slot") {
    ModelConfig cfg = tiny_model();
    ModelParams params = ModelParams::init(cfg, 4, 2, 21);
    auto norms = memory_slot_norms(params);
    REQUIRE(norms.size() == static_cast<size_t>(cfg.b));
    for (double n : norms) REQUIRE(n >= 0.0);
}

// --- checkpointing ----------------------------------------------------------

TEST_CASE("checkpoint round-trip is bit-exact and reproduces metrics") {
    ModelConfig cfg = tiny_model();
    Dataset ds = tiny_dataset();
    ModelParams params = ModelParams::init(cfg, ds.num_items(), ds.num_attrs(), 55);
    params.randomize_generic(56);  // arbitrary state, not just init

    TempDir tmp;
    save_checkpoint(tmp.path.string(), params);
    ModelParams loaded = load_checkpoint(tmp.path.string());

    auto n1 = params.named();
    auto n2 = loaded.named();
    REQUIRE(n1.size() == n2.size());
    for (size_t k = 0; k < n1.size(); ++k) {
        REQUIRE(n1[k].first == n2[k].first);
        REQUIRE(n1[k].second->data == n2[k].second->data);  // bitwise
    }

    MetricsRecord a = evaluate_full_ranking(params, cfg, ds, EvalSplit::Valid);
    MetricsRecord b = evaluate_full_ranking(loaded, cfg, ds, EvalSplit::Valid);
    REQUIRE(a.ranks == b.ranks);
    REQUIRE(a.ndcg10 == b.ndcg10);
}

TEST_CASE("checkpoint loader rejects foreign directories") {
    TempDir tmp;
    REQUIRE_THROWS_AS(load_checkpoint(tmp.path.string()), std::runtime_error);
}

// --- run config ------------------------------------------------------------

TEST_CASE("run config defaults match the documented values") {
    RunConfig rc = run_config_from_json(nlohmann::json::object());
    REQUIRE(rc.model.d == 64);
    REQUIRE(rc.model.b == 10);
    REQUIRE(rc.model.q == 2);
    REQUIRE(rc.model.steps == 1);
    REQUIRE(rc.model.tau == 0.6);
    REQUIRE(rc.model.dropout_rate == 0.5);
    REQUIRE(rc.model.max_len == 50);
    REQUIRE(rc.model.memory_variant == MemoryVariant::ResM);
    REQUIRE(rc.model.loss_variant == LossVariant::Mince);
    REQUIRE(rc.model.score_source == ScoreSource::Context);
    REQUIRE(rc.train.batch_size == 256);
}

TEST_CASE("run config rejects unknown keys, bad types and bad ranges") {
    REQUIRE_THROWS_WITH(run_config_from_json({{"tau", 0.6}, {"frobnicate", 1}}),
                        Catch::Matchers::ContainsSubstring("frobnicate"));
    REQUIRE_THROWS_WITH(run_config_from_json({{"tau", "hot"}}),
                        Catch::Matchers::ContainsSubstring("tau"));
    RunConfig rc = run_config_from_json({{"tau", -1.0}});
    REQUIRE_THROWS_WITH(rc.validate(), Catch::Matchers::ContainsSubstring("tau"));
}

TEST_CASE("strict grids accept protocol values and reject others") {
    RunConfig rc = run_config_from_json({{"b", 32}, {"lr", 0.003}});
    rc.strict_grids = true;
    rc.validate();

    RunConfig bad = run_config_from_json({{"b", 7}});
    bad.strict_grids = true;
    REQUIRE_THROWS_WITH(bad.validate(), Catch::Matchers::ContainsSubstring("b"));

    RunConfig bad_lr = run_config_from_json({{"lr", 0.002}});
    bad_lr.strict_grids = true;
    REQUIRE_THROWS_WITH(bad_lr.validate(), Catch::Matchers::ContainsSubstring("lr"));
}

TEST_CASE("run config round-trips through json") {
    RunConfig rc = run_config_from_json({{"d", 32}, {"memory_variant", "fc-m"}, {"loss_variant", "bpr"}});
    nlohmann::json j = run_config_to_json(rc);
    RunConfig rc2 = run_config_from_json(j);
    REQUIRE(rc2.model.d == 32);
    REQUIRE(rc2.model.memory_variant == MemoryVariant::FcM);
    REQUIRE(rc2.model.loss_variant == LossVariant::Bpr);
}
