#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace mminforec {

struct RawInteraction {
    std::string user;
    std::string item;
    int64_t timestamp = 0;
};

struct ParseError {
    int line = 0;
    std::string message;
};

struct RawRecords {
    std::vector<RawInteraction> interactions;
    std::map<std::string, std::set<std::string>> item_attrs;  // external item -> attrs
    std::vector<ParseError> errors;
};

struct UserSplit {
    std::vector<int> train;  // internal item ids, chronological
    int valid = 0;
    int test = 0;
};

struct DatasetStats {
    int users = 0;
    int items = 0;
    int attrs = 0;
    int64_t actions = 0;
    double avg_actions_per_user = 0.0;
    double avg_actions_per_item = 0.0;
    double avg_attrs_per_item = 0.0;
    double sparsity = 0.0;
};

// Preprocessed corpus: dense internal ids starting at 1 (0 = padding),
// per-user chronological sequences, per-item attribute sets, and the
// leave-one-out split.
struct Dataset {
    std::vector<std::vector<int>> sequences;        // per user, internal item ids
    std::vector<std::vector<int>> item_attrs;       // item id -> attribute ids (index 0 unused)
    std::vector<std::string> user_ids;              // internal -> external
    std::vector<std::string> item_ids;              // internal -> external, index 0 = padding
    std::vector<std::string> attr_ids;              // internal -> external, index 0 = padding
    std::vector<UserSplit> split;                   // parallel to sequences; empty until split

    int num_users() const { return static_cast<int>(sequences.size()); }
    int num_items() const { return static_cast<int>(item_ids.size()) - 1; }
    int num_attrs() const { return static_cast<int>(attr_ids.size()) - 1; }

    DatasetStats stats() const {
        DatasetStats s;
        s.users = num_users();
        s.items = num_items();
        s.attrs = num_attrs();
        for (const auto& seq : sequences) s.actions += static_cast<int64_t>(seq.size());
        if (s.users > 0) s.avg_actions_per_user = static_cast<double>(s.actions) / s.users;
        if (s.items > 0) s.avg_actions_per_item = static_cast<double>(s.actions) / s.items;
        int64_t attr_total = 0;
        for (int i = 1; i <= num_items(); ++i) attr_total += static_cast<int64_t>(item_attrs[static_cast<size_t>(i)].size());
        if (s.items > 0) s.avg_attrs_per_item = static_cast<double>(attr_total) / s.items;
        if (s.users > 0 && s.items > 0)
            s.sparsity = 1.0 - static_cast<double>(s.actions) / (static_cast<double>(s.users) * s.items);
        return s;
    }
};

// --- parsing ----------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        size_t pos = line.find('\t', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

inline bool parse_int64(const std::string& s, int64_t& out) {
    if (s.empty()) return false;
    try {
        size_t pos = 0;
        out = std::stoll(s, &pos);
        return pos == s.size();
    } catch (...) {
        return false;
    }
}

}  // namespace detail

// Interaction lines: user<TAB>item<TAB>timestamp. Attribute lines:
// item<TAB>attr[<TAB>attr...]. Malformed lines are collected with their
// line numbers; more than 1% malformed (or an unreadable file) is fatal.
inline RawRecords parse(const std::string& interactions_path, const std::string& attributes_path) {
    RawRecords rec;
    int64_t total_lines = 0;

    std::ifstream fin(interactions_path);
    if (!fin) throw std::runtime_error("parse: cannot open interaction file: " + interactions_path);
    std::string line;
    int lineno = 0;
    while (std::getline(fin, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        ++total_lines;
        auto fields = detail::split_tabs(line);
        int64_t ts = 0;
        if (fields.size() != 3 || fields[0].empty() || fields[1].empty() ||
            !detail::parse_int64(fields[2], ts) || ts < 0) {
            rec.errors.push_back({lineno, "malformed interaction line"});
            continue;
        }
        rec.interactions.push_back({fields[0], fields[1], ts});
    }

    if (!attributes_path.empty()) {
        std::ifstream fa(attributes_path);
        if (!fa) throw std::runtime_error("parse: cannot open attribute file: " + attributes_path);
        lineno = 0;
        while (std::getline(fa, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            ++total_lines;
            auto fields = detail::split_tabs(line);
            if (fields.size() < 2 || fields[0].empty()) {
                rec.errors.push_back({lineno, "malformed attribute line"});
                continue;
            }
            bool ok = true;
            for (size_t i = 1; i < fields.size(); ++i) ok = ok && !fields[i].empty();
            if (!ok) {
                rec.errors.push_back({lineno, "malformed attribute line"});
                continue;
            }
            auto& set = rec.item_attrs[fields[0]];
            for (size_t i = 1; i < fields.size(); ++i) set.insert(fields[i]);
        }
    }

    if (total_lines > 0 && static_cast<double>(rec.errors.size()) > 0.01 * static_cast<double>(total_lines)) {
        std::string msg = "parse: more than 1% malformed lines (" + std::to_string(rec.errors.size()) + "/" +
                          std::to_string(total_lines) + "); first offenders:";
        for (size_t i = 0; i < rec.errors.size() && i < 5; ++i)
            msg += " line " + std::to_string(rec.errors[i].line) + ";";
        throw std::runtime_error(msg);
    }
    return rec;
}

// --- preprocessing ----------------------------------------------------------

// Group by user, stable-sort by timestamp, then alternate the item-frequency
// (< 5 removed) and sequence-length (< 5 removed) filters until the 5-core
// fixpoint; finally keep the most recent 50 interactions per user and remap
// everything to dense internal ids (0 reserved for padding).
inline Dataset preprocess(const RawRecords& rec, int min_count = 5, int max_len = 50) {
    if (rec.interactions.empty()) throw std::runtime_error("preprocess: no interaction records");

    std::map<std::string, std::vector<std::pair<int64_t, std::string>>> by_user;
    for (size_t i = 0; i < rec.interactions.size(); ++i) {
        const RawInteraction& r = rec.interactions[i];
        by_user[r.user].emplace_back(r.timestamp, r.item);
    }
    // chronological order, ties by input order (stable)
    std::map<std::string, std::vector<std::string>> seqs;
    for (auto& [user, events] : by_user) {
        std::stable_sort(events.begin(), events.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        auto& s = seqs[user];
        s.reserve(events.size());
        for (auto& [ts, item] : events) s.push_back(item);
    }

    // 5-core fixpoint: items below min_count and sequences shorter than
    // min_count knocked out alternately until stable
    bool changed = true;
    while (changed) {
        changed = false;
        std::unordered_map<std::string, int> freq;
        for (auto& [user, s] : seqs)
            for (const auto& item : s) ++freq[item];
        for (auto& [user, s] : seqs) {
            size_t before = s.size();
            s.erase(std::remove_if(s.begin(), s.end(),
                                   [&](const std::string& it) { return freq[it] < min_count; }),
                    s.end());
            changed |= s.size() != before;
        }
        for (auto it = seqs.begin(); it != seqs.end();) {
            if (static_cast<int>(it->second.size()) < min_count) {
                it = seqs.erase(it);
                changed = true;
            } else {
                ++it;
            }
        }
    }
    if (seqs.empty()) throw std::runtime_error("preprocess: nothing left after 5-core filtering");

    // most recent max_len interactions
    for (auto& [user, s] : seqs)
        if (static_cast<int>(s.size()) > max_len)
            s.erase(s.begin(), s.end() - max_len);

    // dense ids; items/attrs/users in sorted external order for stability
    Dataset ds;
    std::set<std::string> item_set;
    for (auto& [user, s] : seqs)
        for (const auto& item : s) item_set.insert(item);

    std::unordered_map<std::string, int> item_map;
    ds.item_ids.push_back("<pad>");
    for (const auto& item : item_set) {
        item_map[item] = static_cast<int>(ds.item_ids.size());
        ds.item_ids.push_back(item);
    }

    std::set<std::string> attr_set;
    for (const auto& item : item_set) {
        auto it = rec.item_attrs.find(item);
        if (it != rec.item_attrs.end())
            for (const auto& a : it->second) attr_set.insert(a);
    }
    std::unordered_map<std::string, int> attr_map;
    ds.attr_ids.push_back("<pad>");
    for (const auto& a : attr_set) {
        attr_map[a] = static_cast<int>(ds.attr_ids.size());
        ds.attr_ids.push_back(a);
    }

    ds.item_attrs.assign(ds.item_ids.size(), {});
    for (const auto& item : item_set) {
        auto it = rec.item_attrs.find(item);
        if (it == rec.item_attrs.end()) continue;
        auto& dst = ds.item_attrs[static_cast<size_t>(item_map[item])];
        for (const auto& a : it->second) dst.push_back(attr_map[a]);
        std::sort(dst.begin(), dst.end());
    }

    for (auto& [user, s] : seqs) {
        ds.user_ids.push_back(user);
        std::vector<int> ids;
        ids.reserve(s.size());
        for (const auto& item : s) ids.push_back(item_map[item]);
        ds.sequences.push_back(std::move(ids));
    }
    return ds;
}

// Leave-one-out: last item -> test, second last -> validation, rest -> train.
inline void split_leave_one_out(Dataset& ds) {
    ds.split.clear();
    ds.split.reserve(ds.sequences.size());
    for (const auto& seq : ds.sequences) {
        if (seq.size() < 3)
            throw std::runtime_error("split_leave_one_out: sequence shorter than 3 items");
        UserSplit us;
        us.train.assign(seq.begin(), seq.end() - 2);
        us.valid = seq[seq.size() - 2];
        us.test = seq[seq.size() - 1];
        ds.split.push_back(std::move(us));
    }
}

// --- batching ---------------------------------------------------------------

struct Batch {
    std::vector<int> user_indices;       // dataset rows in this batch
    std::vector<std::vector<int>> items; // left-padded id rows, uniform width
    std::vector<std::vector<uint8_t>> mask;  // 1 = real, 0 = padding
    int D = 0;                           // unique non-padding ids
};

// Shuffle training sequences by seed and cut batches of at most batch_size.
// Rows are left-padded with id 0 so the most recent item sits in the last
// column.
inline std::vector<Batch> make_batches(const Dataset& ds, int batch_size, uint64_t shuffle_seed) {
    if (ds.split.empty()) throw std::runtime_error("make_batches: dataset has no split");
    std::vector<int> order(ds.sequences.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::mt19937_64 rng(shuffle_seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<Batch> batches;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
        size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
        Batch b;
        size_t width = 0;
        for (size_t i = start; i < end; ++i)
            width = std::max(width, ds.split[static_cast<size_t>(order[i])].train.size());
        std::set<int> uniq;
        for (size_t i = start; i < end; ++i) {
            const auto& train = ds.split[static_cast<size_t>(order[i])].train;
            b.user_indices.push_back(order[i]);
            std::vector<int> row(width, 0);
            std::vector<uint8_t> m(width, 0);
            std::copy(train.begin(), train.end(), row.end() - static_cast<long>(train.size()));
            std::fill(m.end() - static_cast<long>(train.size()), m.end(), 1);
            for (int id : train) uniq.insert(id);
            b.items.push_back(std::move(row));
            b.mask.push_back(std::move(m));
        }
        b.D = static_cast<int>(uniq.size());
        batches.push_back(std::move(b));
    }
    return batches;
}

// --- synthetic corpus ---------------------------------------------------

struct SyntheticData {
    RawRecords records;
    std::vector<std::vector<double>> transition;  // row-stochastic, item u -> item v (0-based)
    std::vector<int> cluster;                     // 0-based item -> cluster
};

// Markov corpus with planted cluster dynamics: items partition into
// `attrs` clusters (the cluster id doubles as the item's single attribute);
// each step stays within the current item's cluster with mass 0.8 and
// teleports uniformly with mass 0.2. Trajectory lengths are uniform in
// [8, 30]. The true transition matrix ships with the records so acceptance
// harnesses can compute Bayes-oracle metrics.
inline SyntheticData generate_synthetic(int users, int items, int attrs, uint64_t seed) {
    if (items < 20) throw std::invalid_argument("generate_synthetic: need at least 20 items");
    if (users < 100) throw std::invalid_argument("generate_synthetic: need at least 100 users");
    if (attrs < 1 || attrs > items) throw std::invalid_argument("generate_synthetic: bad attribute count");

    SyntheticData syn;
    syn.cluster.resize(static_cast<size_t>(items));
    std::vector<std::vector<int>> members(static_cast<size_t>(attrs));
    for (int i = 0; i < items; ++i) {
        int c = i % attrs;
        syn.cluster[static_cast<size_t>(i)] = c;
        members[static_cast<size_t>(c)].push_back(i);
    }

    syn.transition.assign(static_cast<size_t>(items), std::vector<double>(static_cast<size_t>(items), 0.0));
    for (int u = 0; u < items; ++u) {
        const auto& club = members[static_cast<size_t>(syn.cluster[static_cast<size_t>(u)])];
        double in_mass = 0.8 / static_cast<double>(club.size());
        double noise = 0.2 / static_cast<double>(items);
        for (int v = 0; v < items; ++v) syn.transition[static_cast<size_t>(u)][static_cast<size_t>(v)] = noise;
        for (int v : club) syn.transition[static_cast<size_t>(u)][static_cast<size_t>(v)] += in_mass;
    }

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> len_dist(8, 30);
    std::uniform_int_distribution<int> start_dist(0, items - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    auto sample_next = [&](int current) {
        double u = unit(rng);
        double acc = 0.0;
        const auto& row = syn.transition[static_cast<size_t>(current)];
        for (int v = 0; v < items; ++v) {
            acc += row[static_cast<size_t>(v)];
            if (u < acc) return v;
        }
        return items - 1;
    };

    for (int uidx = 0; uidx < users; ++uidx) {
        int len = len_dist(rng);
        int cur = start_dist(rng);
        std::string user = "u" + std::to_string(uidx);
        for (int t = 0; t < len; ++t) {
            syn.records.interactions.push_back({user, "i" + std::to_string(cur), t});
            cur = sample_next(cur);
        }
    }
    for (int i = 0; i < items; ++i)
        syn.records.item_attrs["i" + std::to_string(i)] = {"a" + std::to_string(syn.cluster[static_cast<size_t>(i)])};
    return syn;
}

}  // namespace mminforec
