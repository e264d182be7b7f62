#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "mminforec/data.hpp"

namespace mminforec {

// Processed-dataset directory layout:
//   sequences.tsv   one user per line: user_id<TAB>item ids (space separated)
//   attributes.tsv  item_id<TAB>attr ids (space separated), items with none omitted
//   idmaps.json     external<->internal id tables for users/items/attributes
//   stats.json      corpus statistics (counts, sparsity, averages)
inline void save_dataset(const std::string& dir, const Dataset& ds) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    {
        std::ofstream f(fs::path(dir) / "sequences.tsv");
        if (!f) throw std::runtime_error("save_dataset: cannot write sequences.tsv");
        for (size_t u = 0; u < ds.sequences.size(); ++u) {
            f << u + 1 << '\t';
            const auto& seq = ds.sequences[u];
            for (size_t i = 0; i < seq.size(); ++i) f << (i ? " " : "") << seq[i];
            f << '\n';
        }
    }
    {
        std::ofstream f(fs::path(dir) / "attributes.tsv");
        if (!f) throw std::runtime_error("save_dataset: cannot write attributes.tsv");
        for (int i = 1; i <= ds.num_items(); ++i) {
            const auto& attrs = ds.item_attrs[static_cast<size_t>(i)];
            if (attrs.empty()) continue;
            f << i << '\t';
            for (size_t k = 0; k < attrs.size(); ++k) f << (k ? " " : "") << attrs[k];
            f << '\n';
        }
    }
    {
        nlohmann::json maps;
        maps["users"] = ds.user_ids;
        maps["items"] = ds.item_ids;
        maps["attributes"] = ds.attr_ids;
        std::ofstream f(fs::path(dir) / "idmaps.json");
        if (!f) throw std::runtime_error("save_dataset: cannot write idmaps.json");
        f << maps.dump(2) << "\n";
    }
    {
        DatasetStats s = ds.stats();
        nlohmann::json stats;
        stats["users"] = s.users;
        stats["items"] = s.items;
        stats["attributes"] = s.attrs;
        stats["actions"] = s.actions;
        stats["avg_actions_per_user"] = s.avg_actions_per_user;
        stats["avg_actions_per_item"] = s.avg_actions_per_item;
        stats["avg_attributes_per_item"] = s.avg_attrs_per_item;
        stats["sparsity"] = s.sparsity;
        std::ofstream f(fs::path(dir) / "stats.json");
        if (!f) throw std::runtime_error("save_dataset: cannot write stats.json");
        f << stats.dump(2) << "\n";
    }
}

inline Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    Dataset ds;
    {
        std::ifstream f(fs::path(dir) / "idmaps.json");
        if (!f) throw std::runtime_error("load_dataset: cannot read idmaps.json under " + dir);
        nlohmann::json maps = nlohmann::json::parse(f);
        ds.user_ids = maps.at("users").get<std::vector<std::string>>();
        ds.item_ids = maps.at("items").get<std::vector<std::string>>();
        ds.attr_ids = maps.at("attributes").get<std::vector<std::string>>();
    }
    ds.item_attrs.assign(ds.item_ids.size(), {});
    {
        std::ifstream f(fs::path(dir) / "attributes.tsv");
        if (f) {
            std::string line;
            while (std::getline(f, line)) {
                if (line.empty()) continue;
                size_t tab = line.find('\t');
                if (tab == std::string::npos) throw std::runtime_error("load_dataset: bad attributes.tsv line");
                int item = std::stoi(line.substr(0, tab));
                if (item < 1 || item >= static_cast<int>(ds.item_ids.size()))
                    throw std::runtime_error("load_dataset: item id out of range in attributes.tsv");
                std::istringstream rest(line.substr(tab + 1));
                int a;
                while (rest >> a) ds.item_attrs[static_cast<size_t>(item)].push_back(a);
            }
        }
    }
    {
        std::ifstream f(fs::path(dir) / "sequences.tsv");
        if (!f) throw std::runtime_error("load_dataset: cannot read sequences.tsv under " + dir);
        std::string line;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            size_t tab = line.find('\t');
            if (tab == std::string::npos) throw std::runtime_error("load_dataset: bad sequences.tsv line");
            std::istringstream rest(line.substr(tab + 1));
            std::vector<int> seq;
            int id;
            while (rest >> id) {
                if (id < 1 || id >= static_cast<int>(ds.item_ids.size()))
                    throw std::runtime_error("load_dataset: item id out of range in sequences.tsv");
                seq.push_back(id);
            }
            ds.sequences.push_back(std::move(seq));
        }
    }
    if (ds.sequences.size() != ds.user_ids.size())
        throw std::runtime_error("load_dataset: sequences.tsv row count does not match idmaps.json");
    split_leave_one_out(ds);
    return ds;
}

}  // namespace mminforec
