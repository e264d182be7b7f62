#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "mminforec/data.hpp"
#include "mminforec/dataset_io.hpp"

using namespace mminforec;

namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("mminforec_test_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream f(p);
    f << content;
}

// Dataset -> raw records again (timestamps = positions), for the fixpoint
// idempotence check.
RawRecords to_records(const Dataset& ds) {
    RawRecords rec;
    for (size_t u = 0; u < ds.sequences.size(); ++u)
        for (size_t t = 0; t < ds.sequences[u].size(); ++t)
            rec.interactions.push_back({ds.user_ids[u],
                                        ds.item_ids[static_cast<size_t>(ds.sequences[u][t])],
                                        static_cast<int64_t>(t)});
    for (int i = 1; i <= ds.num_items(); ++i)
        for (int a : ds.item_attrs[static_cast<size_t>(i)])
            rec.item_attrs[ds.item_ids[static_cast<size_t>(i)]].insert(ds.attr_ids[static_cast<size_t>(a)]);
    return rec;
}

std::vector<std::vector<std::string>> external_sequences(const Dataset& ds) {
    std::vector<std::vector<std::string>> out;
    for (const auto& seq : ds.sequences) {
        std::vector<std::string> row;
        for (int id : seq) row.push_back(ds.item_ids[static_cast<size_t>(id)]);
        out.push_back(std::move(row));
    }
    return out;
}

}  // namespace

TEST_CASE("parse reads interaction and attribute lines") {
    TempDir tmp;
    write_file(tmp.path / "inter.tsv", "u1\ti42\t1546300800\nu2\ti7\t100\n");
    write_file(tmp.path / "attrs.tsv", "i42\tc7\tc9\n");
    RawRecords rec = parse((tmp.path / "inter.tsv").string(), (tmp.path / "attrs.tsv").string());
    REQUIRE(rec.interactions.size() == 2);
    REQUIRE(rec.interactions[0].user == "u1");
    REQUIRE(rec.interactions[0].item == "i42");
    REQUIRE(rec.interactions[0].timestamp == 1546300800);
    REQUIRE(rec.item_attrs.at("i42") == std::set<std::string>{"c7", "c9"});
    REQUIRE(rec.errors.empty());
}

TEST_CASE("parse records malformed lines and skips them") {
    TempDir tmp;
    std::string lines;
    for (int i = 0; i < 200; ++i) lines += "u1\ti" + std::to_string(i) + "\t5\n";
    lines += "u1 i42\n";  // spaces, not tabs
    write_file(tmp.path / "inter.tsv", lines);
    RawRecords rec = parse((tmp.path / "inter.tsv").string(), "");
    REQUIRE(rec.interactions.size() == 200);
    REQUIRE(rec.errors.size() == 1);
    REQUIRE(rec.errors[0].line == 201);
}

TEST_CASE("parse is fatal on unreadable files and >1% malformed") {
    REQUIRE_THROWS_AS(parse("/nonexistent/file.tsv", ""), std::runtime_error);
    TempDir tmp;
    write_file(tmp.path / "bad.tsv", "u1\ti1\t1\nbroken line\nu2\ti2\tnotanumber\n");
    REQUIRE_THROWS_WITH(parse((tmp.path / "bad.tsv").string(), ""),
                        Catch::Matchers::ContainsSubstring("malformed"));
}

TEST_CASE("preprocess keeps an already-5-core corpus, remapping ids") {
    RawRecords rec;
    // 5 users x the same 5 items -> every item frequency 5, every length 5
    for (int u = 0; u < 5; ++u)
        for (int i = 0; i < 5; ++i)
            rec.interactions.push_back({"u" + std::to_string(u), "item" + std::to_string(i), i});
    Dataset ds = preprocess(rec);
    REQUIRE(ds.num_users() == 5);
    REQUIRE(ds.num_items() == 5);
    for (const auto& seq : ds.sequences) REQUIRE(seq.size() == 5);
    // dense internal ids starting at 1
    std::set<int> seen(ds.sequences[0].begin(), ds.sequences[0].end());
    REQUIRE(*seen.begin() == 1);
    REQUIRE(*seen.rbegin() == 5);
}

TEST_CASE("preprocess cascade reaches the fixpoint") {
    // Rare item R (1 occurrence) kills user A; losing A drops X to 4
    // occurrences, which kills X and with it the three X-filler users.
    RawRecords rec;
    auto add_seq = [&](const std::string& user, const std::vector<std::string>& items) {
        for (size_t t = 0; t < items.size(); ++t)
            rec.interactions.push_back({user, items[t], static_cast<int64_t>(t)});
    };
    for (int f = 1; f <= 5; ++f) add_seq("F" + std::to_string(f), {"P1", "P2", "P3", "P4", "P5"});
    add_seq("A", {"R", "X", "P1", "P2", "P3"});
    add_seq("B", {"X", "P1", "P2", "P3", "P4", "P5"});
    add_seq("F6", {"X", "P1", "P2", "P3", "P4"});
    add_seq("F7", {"X", "P1", "P2", "P3", "P4"});
    add_seq("F8", {"X", "P1", "P2", "P3", "P4"});

    Dataset ds = preprocess(rec);
    std::set<std::string> users(ds.user_ids.begin(), ds.user_ids.end());
    REQUIRE(users == std::set<std::string>{"B", "F1", "F2", "F3", "F4", "F5"});
    std::set<std::string> items(ds.item_ids.begin() + 1, ds.item_ids.end());
    REQUIRE(items == std::set<std::string>{"P1", "P2", "P3", "P4", "P5"});  // R and X both gone
    for (const auto& seq : ds.sequences) REQUIRE(seq.size() == 5);
}

TEST_CASE("preprocess truncates to the most recent interactions") {
    RawRecords rec;
    for (int u = 0; u < 5; ++u)
        for (int t = 0; t < 60; ++t)
            rec.interactions.push_back({"u" + std::to_string(u), "i" + std::to_string(t), t});
    Dataset ds = preprocess(rec);
    for (const auto& seq : ds.sequences) REQUIRE(seq.size() == 50);
    // the most recent 50 survive: items i10..i59
    std::set<std::string> items(ds.item_ids.begin() + 1, ds.item_ids.end());
    REQUIRE(items.count("i9") == 0);
    REQUIRE(items.count("i10") == 1);
    REQUIRE(items.count("i59") == 1);
}

TEST_CASE("preprocess on its own output is the identity") {
    SyntheticData syn = generate_synthetic(120, 24, 4, 99);
    Dataset ds = preprocess(syn.records);
    Dataset ds2 = preprocess(to_records(ds));
    REQUIRE(external_sequences(ds) == external_sequences(ds2));
}

TEST_CASE("preprocess rejects an empty record set") {
    RawRecords rec;
    REQUIRE_THROWS_AS(preprocess(rec), std::runtime_error);
}

TEST_CASE("leave-one-out split") {
    Dataset ds;
    ds.sequences = {{1, 2, 3, 4, 5}};
    ds.user_ids = {"u"};
    ds.item_ids = {"<pad>", "a", "b", "c", "d", "e"};
    ds.attr_ids = {"<pad>"};
    ds.item_attrs.assign(6, {});
    split_leave_one_out(ds);
    REQUIRE(ds.split[0].train == std::vector<int>{1, 2, 3});
    REQUIRE(ds.split[0].valid == 4);
    REQUIRE(ds.split[0].test == 5);
    // test-time context = train prefix + validation item
    std::vector<int> test_context = ds.split[0].train;
    test_context.push_back(ds.split[0].valid);
    REQUIRE(test_context == std::vector<int>{1, 2, 3, 4});
}

TEST_CASE("make_batches partitions, left-pads and counts unique ids") {
    Dataset ds;
    ds.sequences = {{1, 2, 3, 4, 5}, {1, 2, 6, 7}, {3, 1, 2, 5, 6, 7, 4}};
    ds.user_ids = {"a", "b", "c"};
    ds.item_ids.resize(8, "x");
    ds.attr_ids = {"<pad>"};
    ds.item_attrs.assign(8, {});
    split_leave_one_out(ds);  // trains: {1,2,3}, {1,2}, {3,1,2,5,6}

    auto batches = make_batches(ds, 2, 7);
    REQUIRE(batches.size() == 2);
    REQUIRE(batches[0].items.size() == 2);
    REQUIRE(batches[1].items.size() == 1);

    for (const auto& b : batches) {
        std::set<int> uniq;
        for (size_t r = 0; r < b.items.size(); ++r) {
            REQUIRE(b.items[r].size() == b.items[0].size());
            for (size_t c = 0; c < b.items[r].size(); ++c) {
                REQUIRE((b.mask[r][c] == 0) == (b.items[r][c] == 0));
                if (b.items[r][c] != 0) uniq.insert(b.items[r][c]);
            }
            // left padding: once real items start they run to the end
            bool seen_real = false;
            for (size_t c = 0; c < b.items[r].size(); ++c) {
                if (b.mask[r][c]) seen_real = true;
                else REQUIRE(!seen_real);
            }
        }
        REQUIRE(b.D == static_cast<int>(uniq.size()));
    }

    auto again = make_batches(ds, 2, 7);
    REQUIRE(again[0].user_indices == batches[0].user_indices);
    auto other = make_batches(ds, 2, 8);
    bool same_order = other[0].user_indices == batches[0].user_indices &&
                      other[1].user_indices == batches[1].user_indices;
    (void)same_order;  // a different seed may or may not permute 3 rows; determinism is what matters
}

TEST_CASE("make_batches pads the documented example shape") {
    Dataset ds;
    ds.sequences = {{1, 2, 3, 9, 9}, {4, 5, 6, 7, 8, 9, 9}};  // trains: len 3 and len 5
    ds.user_ids = {"a", "b"};
    ds.item_ids.resize(10, "x");
    ds.attr_ids = {"<pad>"};
    ds.item_attrs.assign(10, {});
    split_leave_one_out(ds);
    auto batches = make_batches(ds, 2, 123);
    REQUIRE(batches.size() == 1);
    const Batch& b = batches[0];
    REQUIRE(b.items[0].size() == 5);
    for (size_t r = 0; r < 2; ++r) {
        size_t real = 0;
        for (uint8_t m : b.mask[r]) real += m;
        if (real == 3) {
            REQUIRE(b.mask[r] == std::vector<uint8_t>{0, 0, 1, 1, 1});
        } else {
            REQUIRE(b.mask[r] == std::vector<uint8_t>{1, 1, 1, 1, 1});
        }
    }
}

TEST_CASE("synthetic generator: stochastic rows, determinism, oracle beats popularity") {
    SyntheticData syn = generate_synthetic(300, 40, 8, 7);
    for (const auto& row : syn.transition) {
        double s = 0.0;
        for (double v : row) {
            REQUIRE(v >= 0.0);
            s += v;
        }
        REQUIRE(std::fabs(s - 1.0) < 1e-12);
    }

    SyntheticData syn2 = generate_synthetic(300, 40, 8, 7);
    REQUIRE(syn.records.interactions.size() == syn2.records.interactions.size());
    for (size_t i = 0; i < syn.records.interactions.size(); ++i) {
        REQUIRE(syn.records.interactions[i].user == syn2.records.interactions[i].user);
        REQUIRE(syn.records.interactions[i].item == syn2.records.interactions[i].item);
    }

    // lengths within [8,30]
    std::map<std::string, int> lens;
    for (const auto& r : syn.records.interactions) ++lens[r.user];
    for (auto& [u, n] : lens) {
        REQUIRE(n >= 8);
        REQUIRE(n <= 30);
    }

    Dataset ds = preprocess(syn.records);
    split_leave_one_out(ds);
    auto gen_index = [&](int internal) { return std::stoi(ds.item_ids[static_cast<size_t>(internal)].substr(1)); };

    // popularity over training items
    std::vector<int> pop_count(40, 0);
    for (const auto& us : ds.split)
        for (int id : us.train) ++pop_count[static_cast<size_t>(gen_index(id))];
    std::vector<int> by_pop(40);
    for (int i = 0; i < 40; ++i) by_pop[static_cast<size_t>(i)] = i;
    std::sort(by_pop.begin(), by_pop.end(), [&](int a, int b) {
        return pop_count[static_cast<size_t>(a)] != pop_count[static_cast<size_t>(b)]
                   ? pop_count[static_cast<size_t>(a)] > pop_count[static_cast<size_t>(b)]
                   : a < b;
    });
    std::set<int> pop_top5(by_pop.begin(), by_pop.begin() + 5);

    int bayes_hits = 0, pop_hits = 0, n = 0;
    for (const auto& us : ds.split) {
        int last_ctx = gen_index(us.valid);  // test-time context ends at the validation item
        int target = gen_index(us.test);
        const auto& row = syn.transition[static_cast<size_t>(last_ctx)];
        std::vector<int> order(40);
        for (int i = 0; i < 40; ++i) order[static_cast<size_t>(i)] = i;
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            return row[static_cast<size_t>(a)] != row[static_cast<size_t>(b)]
                       ? row[static_cast<size_t>(a)] > row[static_cast<size_t>(b)]
                       : a < b;
        });
        bool bayes_hit = std::find(order.begin(), order.begin() + 5, target) != order.begin() + 5;
        bayes_hits += bayes_hit;
        pop_hits += pop_top5.count(target) > 0;
        ++n;
    }
    double bayes_hr = static_cast<double>(bayes_hits) / n;
    double pop_hr = static_cast<double>(pop_hits) / n;
    REQUIRE(bayes_hr > pop_hr);
}

TEST_CASE("synthetic generator validates its arguments") {
    REQUIRE_THROWS_AS(generate_synthetic(300, 10, 2, 1), std::invalid_argument);
    REQUIRE_THROWS_AS(generate_synthetic(50, 40, 2, 1), std::invalid_argument);
}

TEST_CASE("dataset directory round-trip") {
    TempDir tmp;
    SyntheticData syn = generate_synthetic(120, 24, 4, 11);
    Dataset ds = preprocess(syn.records);
    split_leave_one_out(ds);
    save_dataset(tmp.path.string(), ds);
    Dataset loaded = load_dataset(tmp.path.string());
    REQUIRE(loaded.sequences == ds.sequences);
    REQUIRE(loaded.item_attrs == ds.item_attrs);
    REQUIRE(loaded.user_ids == ds.user_ids);
    REQUIRE(loaded.item_ids == ds.item_ids);
    REQUIRE(loaded.attr_ids == ds.attr_ids);
    REQUIRE(loaded.split.size() == ds.split.size());

    // stats fields present and sane
    std::ifstream sf(tmp.path / "stats.json");
    nlohmann::json stats = nlohmann::json::parse(sf);
    REQUIRE(stats.at("users").get<int>() == ds.num_users());
    REQUIRE(stats.at("items").get<int>() == ds.num_items());
    REQUIRE(stats.at("actions").get<int64_t>() > 0);
    REQUIRE(stats.at("sparsity").get<double>() > 0.0);
}

TEST_CASE("no padding id inside stored sequences") {
    SyntheticData syn = generate_synthetic(150, 30, 5, 13);
    Dataset ds = preprocess(syn.records);
    split_leave_one_out(ds);
    for (const auto& seq : ds.sequences)
        for (int id : seq) REQUIRE(id != 0);
    for (const auto& us : ds.split) {
        REQUIRE(us.valid != 0);
        REQUIRE(us.test != 0);
        for (int id : us.train) REQUIRE(id != 0);
    }
}
